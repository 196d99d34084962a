//! Randomized certificate suite for the matrix-norm, Minkowski and ODE
//! estimates, as run by `verify-appendix`.

use std::f64::consts::SQRT_2;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::algebra::{norm_dist_check, to_h3, HermPoint, Mat2, Sl2};
use crate::integrator::{
    bound_growth, bound_growth_with, compare_solutions, random_trace_free, remainder_first_order, solve, IntegrationError, ODEProblem, Path,
    Stepping,
};
use crate::weierstrass::WData;

/// Deliberate defects for negative controls.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fault {
    /// Growth bound evaluated with prefactor 1 instead of `√2`.
    DropSqrt2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    pub matrix_samples: usize,
    pub ode_samples: usize,
    pub fault: Option<Fault>,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 0, matrix_samples: 1000, ode_samples: 100, fault: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateOutcome {
    pub name: String,
    pub samples: usize,
    /// Worst measured value, compared against `limit`.
    pub worst: f64,
    pub limit: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seed: u64,
    pub fault: Option<Fault>,
    pub outcomes: Vec<CertificateOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn first_failure(&self) -> Option<&CertificateOutcome> {
        self.outcomes.iter().find(|o| !o.passed)
    }
}

/// FNV-1a of `name` mixed into `seed`.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn outcome(name: &str, samples: usize, worst: f64, limit: f64) -> CertificateOutcome {
    CertificateOutcome { name: name.into(), samples, worst, limit, passed: worst <= limit }
}

fn random_mat<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Mat2 {
    let mut c = || Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale));
    Mat2::new(c(), c(), c(), c())
}

fn rng_for(opts: &SuiteOptions, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(sub_seed(opts.seed, name))
}

pub fn run_appendix(opts: &SuiteOptions) -> Result<SuiteReport, IntegrationError> {
    let n = opts.matrix_samples;
    let mut outcomes = Vec::new();

    let mut rng = rng_for(opts, "submultiplicative");
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..n {
        let (a, b) = (random_mat(&mut rng, 2.0), random_mat(&mut rng, 2.0));
        let x = [Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)), Complex64::new(rng.gen_range(-1.0..1.0), 0.0)];
        let xn = (x[0].norm_sqr() + x[1].norm_sqr()).sqrt();
        let ax = a.apply(x);
        let axn = (ax[0].norm_sqr() + ax[1].norm_sqr()).sqrt();
        worst = worst.max(((a * b).norm() - a.norm() * b.norm()) / (a.norm() * b.norm()));
        worst = worst.max((axn - a.norm() * xn) / (a.norm() * xn));
    }
    outcomes.push(outcome("matrix norm submultiplicative", n, worst, 1e-12));

    let mut rng = rng_for(opts, "sl2 norm");
    let mut worst: f64 = f64::NEG_INFINITY;
    for _ in 0..n {
        let a = Sl2::random(&mut rng, 2.0);
        worst = worst.max(SQRT_2 - a.norm());
    }
    worst = worst.max((Sl2::identity().norm() - SQRT_2).abs());
    outcomes.push(outcome("sl2 norm at least sqrt2", n, worst, 1e-12));

    let mut rng = rng_for(opts, "hermitian");
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let a = Sl2::random(&mut rng, 2.0);
        let h = *a.matrix() * a.matrix().adjoint();
        let p = HermPoint::from_hermitian(&h);
        let scale = h.norm_sqr().max(1.0);
        worst = worst.max((p.lorentz(&p) - h.det().re).abs() / scale);
        worst = worst.max((p.to_hermitian() - h).norm() / scale.sqrt());
        worst = worst.max((to_h3(&a).coords().x0 - 0.5 * a.matrix().norm_sqr()).abs() / scale);
    }
    outcomes.push(outcome("hermitian minkowski identification", n, worst, 1e-12));

    let mut rng = rng_for(opts, "dist norm");
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let (a, b) = (Sl2::random(&mut rng, 1.5), Sl2::random(&mut rng, 1.5));
        let scale = (a.inverse() * b).matrix().norm_sqr().max(1.0);
        worst = worst.max(norm_dist_check(&a, &b) / scale);
    }
    outcomes.push(outcome("distance norm identity", n, worst, 1e-9));

    let prefactor = match opts.fault {
        Some(Fault::DropSqrt2) => 1.0,
        None => SQRT_2,
    };
    let m = opts.ode_samples;
    let mut rng = rng_for(opts, "ode");
    let (mut growth, mut remainder): (f64, f64) = (0.0, f64::NEG_INFINITY);
    let (mut cmp_excess, mut hyp_excess): (f64, f64) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for i in 0..m {
        let degree = i % 7;
        let p0 = ODEProblem::random_poly(&mut rng, degree, 0.6, 1.0);
        let sol = solve(&p0, Stepping::default())?;
        growth = growth.max(bound_growth_with(&sol, prefactor).value);
        remainder = remainder.max(remainder_first_order(&sol).value);

        let mut coeffs = match &p0.alpha {
            crate::integrator::Coefficient::Poly(c) => c.clone(),
            _ => unreachable!(),
        };
        let eps = 10f64.powf(-rng.gen_range(1.0..4.0));
        for c in coeffs.iter_mut() {
            *c = *c + random_trace_free(&mut rng, eps);
        }
        let p1 = ODEProblem::poly(coeffs, 1.0);
        let rep = compare_solutions(&p0, &p1, Stepping::default())?;
        cmp_excess = cmp_excess.max(rep.measured - rep.bound);
        hyp_excess = hyp_excess.max(rep.distance - rep.mu * rep.sup_diff);
    }
    outcomes.push(outcome("growth bound", m, growth, 1.0 + 1e-6));
    outcomes.push(outcome("first order remainder", m, remainder, 1e-6));
    outcomes.push(outcome("comparison", m, cmp_excess, 1e-9));
    outcomes.push(outcome("comparison hyperbolic", m, hyp_excess, 1e-9));

    Ok(SuiteReport { seed: opts.seed, fault: opts.fault, outcomes })
}

/// The four ODE certificates on the integrations along `path` of the data
/// before and after a step: growth and first-order remainder for `after`,
/// comparison and its hyperbolic form between the two.
pub fn path_certificates(label: &str, before: &WData, after: &WData, path: &Path) -> Result<Vec<CertificateOutcome>, IntegrationError> {
    let p0 = ODEProblem::along_path(before, path);
    let p1 = ODEProblem::along_path(after, path);
    let sol = solve(&p1, Stepping::default())?;
    let g = bound_growth(&sol);
    let r = remainder_first_order(&sol);
    let rep = compare_solutions(&p0, &p1, Stepping::default())?;
    // relative slack: the comparison quantities scale with m³ and m⁸
    let slack = 1e-9 * (1.0 + rep.bound);
    Ok(vec![
        outcome(&format!("{label}: growth bound"), sol.t.len(), g.value, g.limit),
        outcome(&format!("{label}: first order remainder"), sol.t.len(), r.value, r.limit),
        outcome(&format!("{label}: comparison"), 1, rep.measured - rep.bound, slack),
        outcome(&format!("{label}: comparison hyperbolic"), 1, rep.distance - rep.mu * rep.sup_diff, 1e-9 * (1.0 + rep.mu * rep.sup_diff)),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let rep = run_appendix(&SuiteOptions { matrix_samples: 300, ode_samples: 30, ..SuiteOptions::default() }).unwrap();
        assert!(rep.passed(), "{:?}", rep.first_failure());
    }

    #[test]
    fn dropping_sqrt2_breaks_the_growth_bound() {
        let rep = run_appendix(&SuiteOptions { matrix_samples: 50, ode_samples: 10, fault: Some(Fault::DropSqrt2), ..SuiteOptions::default() }).unwrap();
        assert_eq!(rep.first_failure().map(|o| o.name.as_str()), Some("growth bound"));
    }

    #[test]
    fn suite_is_deterministic() {
        let opts = SuiteOptions { seed: 42, matrix_samples: 50, ode_samples: 8, fault: None };
        assert_eq!(run_appendix(&opts).unwrap(), run_appendix(&opts).unwrap());
        assert_ne!(sub_seed(1, "a"), sub_seed(1, "b"));
    }
}
