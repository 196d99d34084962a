//! Run configuration: one TOML file plus command-line overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const OUT_ENV: &str = "NULLCURVE_OUT";
pub const DEFAULT_OUT: &str = "nullcurve-out";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
    #[error("{0}")]
    Invalid(String),
}

/// Every field is optional; command-line flags win over the file, the file
/// wins over built-in defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub n: Option<u32>,
    pub j: Option<u32>,
    pub eps: Option<f64>,
    pub s: Option<f64>,
    pub k0: Option<u32>,
    pub n_max: Option<u32>,
    pub n_schedule: Option<Vec<u32>>,
    pub c: Option<f64>,
    pub radial: Option<usize>,
    pub angular: Option<usize>,
    pub degree_cap: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub verify: Option<bool>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    pub fn parse(text: &str) -> Result<RunConfig, toml::de::Error> {
        toml::from_str(text)
    }

    /// Fills every unset field of `self` from `base`.
    pub fn over(self, base: RunConfig) -> RunConfig {
        RunConfig {
            n: self.n.or(base.n),
            j: self.j.or(base.j),
            eps: self.eps.or(base.eps),
            s: self.s.or(base.s),
            k0: self.k0.or(base.k0),
            n_max: self.n_max.or(base.n_max),
            n_schedule: self.n_schedule.or(base.n_schedule),
            c: self.c.or(base.c),
            radial: self.radial.or(base.radial),
            angular: self.angular.or(base.angular),
            degree_cap: self.degree_cap.or(base.degree_cap),
            seed: self.seed.or(base.seed),
            out_dir: self.out_dir.or(base.out_dir),
            verify: self.verify.or(base.verify),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if let Some(n) = self.n {
            if n < 4 {
                return bad(format!("N must be at least 4 (got {n})"));
            }
        }
        if let Some(list) = &self.n_schedule {
            if list.is_empty() || list.iter().any(|&n| n < 4) {
                return bad("every N in the schedule must be at least 4".into());
            }
        }
        if let (Some(j), Some(n)) = (self.j, self.n) {
            if j < 1 || j > 2 * n {
                return bad(format!("sector j must lie in 1..={} (got {j})", 2 * n));
            }
        }
        if let Some(e) = self.eps {
            if !(e > 0.0 && e.is_finite()) {
                return bad(format!("eps must be positive (got {e})"));
            }
        }
        if let Some(s) = self.s {
            if !(s > 0.0 && s < 0.125) {
                return bad(format!("s must lie in (0, 1/8) (got {s})"));
            }
        }
        if let Some(c) = self.c {
            if !(c > 0.0 && c.is_finite()) {
                return bad(format!("c must be positive (got {c})"));
            }
        }
        for (name, v) in [("radial", self.radial), ("angular", self.angular)] {
            if v == Some(0) {
                return bad(format!("{name} grid size must be positive"));
            }
        }
        if self.angular.is_some_and(|a| a < 3) {
            return bad("angular grid size must be at least 3".into());
        }
        if self.degree_cap.is_some_and(|d| d < 8) {
            return bad("degree cap must be at least 8".into());
        }
        Ok(())
    }

    /// `out_dir`, else `$NULLCURVE_OUT`, else `./nullcurve-out`.
    pub fn out_root(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_win_over_file() {
        let file = RunConfig::parse("n = 8\neps = 0.05\nseed = 3\n").unwrap();
        let flags = RunConfig { n: Some(16), ..RunConfig::default() };
        let merged = flags.over(file);
        assert_eq!(merged.n, Some(16));
        assert_eq!(merged.eps, Some(0.05));
        assert_eq!(merged.seed(), 3);
    }

    #[test]
    fn empty_file_is_valid() {
        let cfg = RunConfig::parse("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn ranges_are_checked() {
        for text in ["n = 3", "s = 0.125", "eps = 0.0", "eps = -1.0", "n = 4\nj = 9", "angular = 2"] {
            let cfg = RunConfig::parse(text).unwrap();
            assert!(cfg.validate().is_err(), "{text}");
        }
        assert!(RunConfig::parse("bogus = 1").is_err());
    }
}
