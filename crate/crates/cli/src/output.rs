//! Artifact writing: atomic files, append-only JSON lines, diagnostics
//! records.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub const RECORD_SCHEMA: &str = "nullcurve.diagnostics/1";

/// Writes `bytes` to `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".partial");
    PathBuf::from(p)
}

/// Appends one JSON row per call to `<path>.partial`; [`JsonLines::finish`]
/// renames it to `path`. On failure the `.partial` file stays behind.
pub struct JsonLines {
    path: PathBuf,
    file: File,
}

impl JsonLines {
    pub fn create(path: &Path) -> io::Result<JsonLines> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let partial = partial_path(path);
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(&partial)?;
        Ok(JsonLines { path: path.into(), file })
    }

    pub fn append<T: Serialize>(&mut self, row: &T) -> io::Result<()> {
        let mut line = serde_json::to_string(row).map_err(io::Error::other)?;
        line.push('\n');
        self.file.write_all(line.as_bytes())?;
        self.file.flush()
    }

    pub fn finish(self) -> io::Result<()> {
        self.file.sync_all()?;
        fs::rename(partial_path(&self.path), &self.path)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Achieved {
    /// (a): closeness off `ϖ_j`.
    pub closeness: Option<bool>,
    /// (b): amplification on `ω_j`.
    pub amplification: Option<bool>,
    /// (c): orthogonality residual.
    pub orthogonality_residual: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Fitted {
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub c1: Option<f64>,
    pub c4: Option<f64>,
}

/// One row of run diagnostics. Wall-clock timings go to a separate
/// `timings.json` so that records are byte-identical across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub schema: String,
    pub command: String,
    pub stage: u32,
    pub n: Option<u32>,
    pub radius: Option<f64>,
    pub sup_norm: Option<f64>,
    pub budget: Option<f64>,
    pub achieved: Achieved,
    pub fitted: Fitted,
    pub seed: u64,
}

impl DiagnosticsRecord {
    pub fn new(command: &str, stage: u32, seed: u64) -> Self {
        DiagnosticsRecord {
            schema: RECORD_SCHEMA.into(),
            command: command.into(),
            stage,
            n: None,
            radius: None,
            sup_norm: None,
            budget: None,
            achieved: Achieved::default(),
            fitted: Fitted::default(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Timings {
    pub steps: Vec<(String, f64)>,
}

impl Timings {
    pub fn record(&mut self, name: &str, start: std::time::Instant) {
        self.steps.push((name.into(), start.elapsed().as_secs_f64()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_round_trip_exactly() {
        let mut r = DiagnosticsRecord::new("keylemma", 1, 7);
        r.radius = Some(0.1 + 1e-17 + 0.2);
        r.fitted.b = Some(std::f64::consts::PI / 3.0);
        let back: DiagnosticsRecord = serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn json_lines_leave_partial_until_finished() {
        let dir = std::env::temp_dir().join(format!("nullcurve-jsonl-{}", std::process::id()));
        let path = dir.join("rows.jsonl");
        let mut w = JsonLines::create(&path).unwrap();
        w.append(&1).unwrap();
        w.append(&2).unwrap();
        assert!(partial_path(&path).exists() && !path.exists());
        w.finish().unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "1\n2\n");
        fs::remove_dir_all(dir).unwrap();
    }
}
