//! One deformation step on a sector of the labyrinth: tilt the frame, apply
//! the López–Ros substitution `(g, η) ↦ (g/h, hη)` with `h = e^p`, and
//! rotate back. The polynomial `p` comes from a weighted least-squares fit
//! that asks for `Re p ≈ log κ` on `ω_j` and `p ≈ 0` away from `ϖ_j`.

use std::f64::consts::{PI, SQRT_2};

use log::{debug, warn};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{rotation_of, Sl2};
use crate::holo::HoloExpr;
use crate::labyrinth::{LabyrinthError, Labyrinth, SectorSets};
use crate::weierstrass::{PhiVector, WData, WeierstrassError};

/// Singular values below this fraction of the largest are dropped.
const SVD_CUTOFF: f64 = 1e-13;
/// Condition number above which the degree is not raised further.
const MAX_CONDITION: f64 = 1e13;

#[derive(Debug, Error)]
pub enum DeformationError {
    #[error("invalid deformation parameters: {0}")]
    InvalidParams(String),
    #[error(
        "no rotation with tilt <= {max_tilt:.4} puts |g| in [{lower:.4}, {upper:.4}] on the sector \
         (best violation {violation:.4}, |g| in [{g_min:.4}, {g_max:.4}])"
    )]
    RangeUnfixable { max_tilt: f64, lower: f64, upper: f64, violation: f64, g_min: f64, g_max: f64 },
    #[error("fit reached degree {degree} with sup |φ - φ̃| = {achieved:e} off the sector (target {target:e})")]
    FitFailed { degree: usize, achieved: f64, target: f64, best: Box<DeformationResult> },
    #[error("h vanishes in the closed disc ({0})")]
    ZerosInDisc(String),
    #[error(transparent)]
    Data(#[from] WeierstrassError),
    #[error(transparent)]
    Labyrinth(#[from] LabyrinthError),
}

/// What to do when a requirement cannot be met.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Policy {
    #[default]
    Strict,
    /// Return the best attempt with its measured shortfall.
    BestEffort,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationParams {
    pub n: u32,
    pub j: u32,
    pub epsilon: f64,
    pub degree_cap: usize,
    pub omega_samples: usize,
    pub off_samples: usize,
    pub audit_samples: usize,
    /// Requested `min |φ̃| / min |φ|` on `ω_j`; defaults to
    /// `N^3.5 / (1 + N/4)`.
    pub amplification: Option<f64>,
    /// Fixed `κ`; disables the `κ` escalation.
    pub kappa: Option<f64>,
    pub seed: u64,
    pub range_policy: Policy,
    pub fit_policy: Policy,
}

impl DeformationParams {
    pub fn new(n: u32, j: u32, epsilon: f64) -> Self {
        DeformationParams {
            n,
            j,
            epsilon,
            degree_cap: 120,
            omega_samples: 1200,
            off_samples: 3000,
            audit_samples: 12000,
            amplification: None,
            kappa: None,
            seed: 0,
            range_policy: Policy::BestEffort,
            fit_policy: Policy::Strict,
        }
    }

    pub fn validate(&self) -> Result<(), DeformationError> {
        let bad = |m: &str| Err(DeformationError::InvalidParams(m.to_string()));
        if self.n < 4 {
            return bad("N must be at least 4");
        }
        if self.j < 1 || self.j > 2 * self.n {
            return bad("sector index outside 1..=2N");
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return bad("epsilon must be positive");
        }
        if self.degree_cap < 8 {
            return bad("degree cap must be at least 8");
        }
        if self.omega_samples == 0 || self.off_samples == 0 || self.audit_samples == 0 {
            return bad("sample counts must be positive");
        }
        if let Some(k) = self.kappa {
            if !(k >= 1.0) {
                return bad("kappa must be at least 1");
            }
        }
        Ok(())
    }

    /// `ε / (2N²)`.
    pub fn closeness_target(&self) -> f64 {
        self.epsilon / (2.0 * (self.n as f64).powi(2))
    }

    pub fn amplification_target(&self) -> f64 {
        let n = self.n as f64;
        self.amplification.unwrap_or(n.powf(3.5) / (1.0 + n / 4.0))
    }

    /// Largest allowed tilt `2/√N`.
    pub fn max_tilt(&self) -> f64 {
        2.0 / (self.n as f64).sqrt()
    }
}

/// The frame rotation chosen for the range condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeReport {
    pub tilt: f64,
    pub axis_angle: f64,
    pub lower: f64,
    pub upper: f64,
    pub g_min: f64,
    pub g_max: f64,
    /// Largest log-distance of `|g|` from `[lower, upper]` on `ϖ_j` samples.
    pub violation: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitStep {
    pub kappa: f64,
    pub degree: usize,
    pub sup_off: f64,
    pub min_on: f64,
    pub condition: f64,
}

#[derive(Debug, Clone)]
pub struct DeformationResult {
    pub wdata: WData,
    pub rotation: Sl2,
    /// `u = R⁻¹ e₃`.
    pub u: [f64; 3],
    pub tilt: f64,
    pub range: RangeReport,
    pub bump: Vec<Complex64>,
    pub degree: usize,
    pub kappa: f64,
    pub closeness_target: f64,
    pub amplification_target: f64,
    /// `sup |φ - φ̃|` on audit samples of the closed disc minus `ϖ_j`.
    pub sup_off: f64,
    pub min_phi_omega: f64,
    pub min_on_omega: f64,
    pub min_on_varpi: f64,
    /// `min |φ̃| / N^3.5` on `ω_j`.
    pub c_omega: f64,
    /// `min |φ̃| · N^0.5` on `ϖ_j`.
    pub c_varpi: f64,
    pub orthogonality_residual: f64,
    pub nullity_residual: f64,
    pub closeness_met: bool,
    pub amplification_met: bool,
    pub trace: Vec<FitStep>,
}

impl DeformationResult {
    /// The constant `C` for which both floors hold.
    pub fn fitted_c(&self) -> f64 {
        self.c_omega.min(self.c_varpi)
    }

    pub fn amplification(&self) -> f64 {
        self.min_on_omega / self.min_phi_omega
    }

    pub fn report(&self) -> DeformationReport {
        DeformationReport {
            tilt: self.tilt,
            u: self.u,
            u3_abs: self.u[2].abs(),
            range: self.range,
            degree: self.degree,
            kappa: self.kappa,
            closeness_target: self.closeness_target,
            sup_off: self.sup_off,
            closeness_met: self.closeness_met,
            amplification_target: self.amplification_target,
            amplification: self.amplification(),
            amplification_met: self.amplification_met,
            min_phi_omega: self.min_phi_omega,
            min_on_omega: self.min_on_omega,
            min_on_varpi: self.min_on_varpi,
            c_omega: self.c_omega,
            c_varpi: self.c_varpi,
            fitted_c: self.fitted_c(),
            orthogonality_residual: self.orthogonality_residual,
            nullity_residual: self.nullity_residual,
            trace: self.trace.clone(),
        }
    }
}

/// Serialisable summary of a deformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformationReport {
    pub tilt: f64,
    pub u: [f64; 3],
    pub u3_abs: f64,
    pub range: RangeReport,
    pub degree: usize,
    pub kappa: f64,
    pub closeness_target: f64,
    pub sup_off: f64,
    pub closeness_met: bool,
    pub amplification_target: f64,
    pub amplification: f64,
    pub amplification_met: bool,
    pub min_phi_omega: f64,
    pub min_on_omega: f64,
    pub min_on_varpi: f64,
    pub c_omega: f64,
    pub c_varpi: f64,
    pub fitted_c: f64,
    pub orthogonality_residual: f64,
    pub nullity_residual: f64,
    pub trace: Vec<FitStep>,
}

/// `(g/h, hη)`. `h` must not vanish on the closed disc; `exp` nodes are
/// accepted as is, anything else is checked by the argument principle.
pub fn lopez_ros(w: &WData, h: &HoloExpr) -> Result<WData, DeformationError> {
    if !h.is_exp() && !h.is_one() {
        check_nonvanishing(h)?;
    }
    Ok(WData::new(HoloExpr::quotient(w.g(), h), HoloExpr::product(h, w.eta()))
        .with_basepoint(w.basepoint())
        .with_poles(w.poles().to_vec()))
}

fn check_nonvanishing(h: &HoloExpr) -> Result<(), DeformationError> {
    let m = 4096;
    let mut winding = 0.0;
    let mut prev = h.eval(Complex64::new(1.0, 0.0)).map_err(WeierstrassError::from)?;
    for k in 1..=m {
        let v = h.eval(Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).map_err(WeierstrassError::from)?;
        if v.norm() < 1e-14 || prev.norm() < 1e-14 {
            return Err(DeformationError::ZerosInDisc("zero on the unit circle".into()));
        }
        winding += (v / prev).arg();
        prev = v;
    }
    let turns = winding / (2.0 * PI);
    if turns.abs() > 0.5 {
        return Err(DeformationError::ZerosInDisc(format!("winding number {turns:.2}")));
    }
    Ok(())
}

/// Sample clouds with targets for [`fit_bump`]: `Re p ≈ target` on `on`,
/// `p ≈ 0` on `off`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FitTargets {
    pub on: Vec<(Complex64, f64)>,
    pub off: Vec<Complex64>,
    pub weight_on: f64,
    pub weight_off: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub coeffs: Vec<Complex64>,
    pub degree: usize,
    /// Largest `|Re p - target|` on the `on` cloud.
    pub max_residual_on: f64,
    /// Largest `|p|` on the `off` cloud.
    pub max_residual_off: f64,
    /// Weighted root-sum-square residual.
    pub objective: f64,
    pub condition: f64,
}

impl FitOutcome {
    pub fn eval(&self, z: Complex64) -> Complex64 {
        horner(&self.coeffs, z)
    }
}

fn horner(c: &[Complex64], z: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, a| acc * z + a)
}

/// Weighted least squares for a complex polynomial of the given degree,
/// solved through an SVD with small singular values dropped.
pub fn fit_bump(t: &FitTargets, degree: usize) -> FitOutcome {
    let cols = 2 * (degree + 1);
    let rows = t.on.len() + 2 * t.off.len();
    let mut a = DMatrix::<f64>::zeros(rows, cols);
    let mut b = DVector::<f64>::zeros(rows);
    let mut powers = vec![Complex64::new(0.0, 0.0); degree + 1];
    let fill_powers = |z: Complex64, powers: &mut Vec<Complex64>| {
        let mut p = Complex64::new(1.0, 0.0);
        for slot in powers.iter_mut() {
            *slot = p;
            p *= z;
        }
    };
    for (r, &(z, target)) in t.on.iter().enumerate() {
        fill_powers(z, &mut powers);
        for (k, pk) in powers.iter().enumerate() {
            a[(r, 2 * k)] = t.weight_on * pk.re;
            a[(r, 2 * k + 1)] = -t.weight_on * pk.im;
        }
        b[r] = t.weight_on * target;
    }
    let base = t.on.len();
    for (i, &z) in t.off.iter().enumerate() {
        fill_powers(z, &mut powers);
        let (r_re, r_im) = (base + 2 * i, base + 2 * i + 1);
        for (k, pk) in powers.iter().enumerate() {
            a[(r_re, 2 * k)] = t.weight_off * pk.re;
            a[(r_re, 2 * k + 1)] = -t.weight_off * pk.im;
            a[(r_im, 2 * k)] = t.weight_off * pk.im;
            a[(r_im, 2 * k + 1)] = t.weight_off * pk.re;
        }
    }
    let coeffs = if rows == 0 || b.iter().all(|v| *v == 0.0) {
        vec![Complex64::new(0.0, 0.0); degree + 1]
    } else {
        // QR first so the SVD only sees a square factor
        let (x, _) = solve_ls(a.clone(), &b);
        (0..=degree).map(|k| Complex64::new(x[2 * k], x[2 * k + 1])).collect()
    };
    let condition = if rows == 0 { 1.0 } else { condition_number(&a) };
    let residual = &a * DVector::from_iterator(cols, coeffs.iter().flat_map(|c| [c.re, c.im])) - &b;
    let objective = residual.norm();
    let max_residual_on = t.on.iter().map(|&(z, target)| (horner(&coeffs, z).re - target).abs()).fold(0.0, f64::max);
    let max_residual_off = t.off.iter().map(|&z| horner(&coeffs, z).norm()).fold(0.0, f64::max);
    FitOutcome { coeffs, degree, max_residual_on, max_residual_off, objective, condition }
}

fn solve_ls(a: DMatrix<f64>, b: &DVector<f64>) -> (DVector<f64>, f64) {
    let n = a.ncols();
    if a.nrows() >= n {
        let qr = a.qr();
        let qtb = qr.q().transpose() * b;
        let r = qr.r();
        let svd = r.svd(true, true);
        let smax = svd.singular_values.max();
        let x = svd.solve(&qtb, SVD_CUTOFF * smax).expect("SVD solve with U and V");
        (x, smax)
    } else {
        let svd = a.svd(true, true);
        let smax = svd.singular_values.max();
        (svd.solve(b, SVD_CUTOFF * smax).expect("SVD solve with U and V"), smax)
    }
}

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let r = if a.nrows() >= a.ncols() { a.clone().qr().r() } else { a.clone() };
    let s = r.singular_values();
    let max = s.max();
    let min = s.min();
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn circle_extremes(coeffs: &[Complex64]) -> (f64, f64) {
    let m = 4096;
    (0..m)
        .map(|k| horner(coeffs, Complex64::from_polar(1.0, 2.0 * PI * k as f64 / m as f64)).re)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Shifts the constant term so that `min Re p = 0` on the unit circle, hence
/// `Re p ≥ 0` and `|h| ≥ 1` on the closed disc.
pub fn lift_nonnegative(coeffs: &mut [Complex64]) {
    let (min, _) = circle_extremes(coeffs);
    if let Some(c) = coeffs.first_mut() {
        c.re -= min;
    }
}

/// Shifts the constant term so that `max Re p = 0` on the unit circle.
pub fn lift_nonpositive(coeffs: &mut [Complex64]) {
    let (_, max) = circle_extremes(coeffs);
    if let Some(c) = coeffs.first_mut() {
        c.re -= max;
    }
}

fn min_metric_ratio(coeffs: &[Complex64], samples: &[&[Sample]]) -> f64 {
    samples
        .iter()
        .flat_map(|v| v.iter())
        .map(|s| {
            let h = horner(coeffs, s.z).exp();
            lambda(s.g / h, s.eta * h) / lambda(s.g, s.eta)
        })
        .fold(f64::INFINITY, f64::min)
}

/// `λ̃/λ = (|h| + |g|²/|h|)/(1 + |g|²)` grows with `|h|` where `|g| < 1` and
/// shrinks where `|g| > 1`; the constant term is set so that `Re p` has one
/// sign on the disc, the sign that keeps `min λ̃/λ` largest.
fn orient_constant(coeffs: &mut Vec<Complex64>, samples: &[&[Sample]]) {
    let mut up = coeffs.clone();
    lift_nonnegative(&mut up);
    let mut down = coeffs.clone();
    lift_nonpositive(&mut down);
    *coeffs = if min_metric_ratio(&up, samples) >= min_metric_ratio(&down, samples) { up } else { down };
}

/// Pointwise `(g, η)` in the rotated frame and `φ` in the original one.
#[derive(Debug, Clone, Copy)]
struct Sample {
    z: Complex64,
    g: Complex64,
    eta: Complex64,
}

fn evaluate(w: &WData, pts: &[Complex64]) -> Result<Vec<Sample>, WeierstrassError> {
    pts.par_iter()
        .map_init(
            || w.evaluator(),
            |ev, &z| {
                let (g, eta) = ev.eval(z)?;
                Ok(Sample { z, g, eta })
            },
        )
        .collect()
}

/// `(g, η)` after conjugation by `a`.
fn rotate_sample(s: &Sample, a: &Sl2) -> Sample {
    let m = a.matrix();
    let den = m.a21 * s.g + m.a22;
    Sample { z: s.z, g: (m.a11 * s.g + m.a12) / den, eta: s.eta * den * den }
}

fn lambda(g: Complex64, eta: Complex64) -> f64 {
    (1.0 + g.norm_sqr()) * eta.norm() / SQRT_2
}

/// Sample clouds over the sector geometry.
struct Clouds {
    omega: Vec<Complex64>,
    varpi: Vec<Complex64>,
    off: Vec<Complex64>,
}

fn ray_points<R: Rng + ?Sized>(s: &SectorSets, rng: &mut R, count: usize) -> Vec<Complex64> {
    let lab = s.labyrinth();
    let u = Complex64::from_polar(1.0, lab.ray_angle(s.j));
    (0..count).map(|_| u * rng.gen_range(lab.inner_radius()..=1.0)).collect()
}

/// Points of the closed disc outside `ϖ_j`, concentrated near its boundary.
fn off_points<R: Rng + ?Sized>(s: &SectorSets, rng: &mut R, count: usize) -> Vec<Complex64> {
    let lab = s.labyrinth();
    let d = lab.delta();
    let n3 = (lab.n() as f64).powi(3);
    let mut out = Vec::with_capacity(count);
    // unit circle and a coarse disc cover
    let circle = count / 6;
    for k in 0..circle {
        out.push(Complex64::from_polar(1.0, 2.0 * PI * (k as f64 + rng.gen::<f64>()) / circle as f64));
    }
    let mut tries = 0usize;
    while out.len() < count / 3 && tries < 100 * count {
        tries += 1;
        let z = Complex64::from_polar(rng.gen::<f64>().sqrt(), rng.gen_range(0.0..2.0 * PI));
        if !s.in_varpi(z) {
            out.push(z);
        }
    }
    // near the boundary: radial and random offsets from points of ω_j
    while out.len() < count && tries < 200 * count {
        tries += 1;
        let base = if rng.gen_bool(0.15) { ray_points(s, rng, 1)[0] } else { s.sample_omega(rng, 1)[0] };
        let z = if rng.gen_bool(0.5) {
            let t = rng.gen_range(d..1.5 / n3) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            base * ((base.norm() + t) / base.norm())
        } else {
            base + Complex64::from_polar(rng.gen_range(d..3.0 * d), rng.gen_range(0.0..2.0 * PI))
        };
        if z.norm() <= 1.0 && !s.in_varpi(z) {
            out.push(z);
        }
    }
    out
}

fn clouds<R: Rng + ?Sized>(s: &SectorSets, rng: &mut R, omega: usize, off: usize) -> Clouds {
    let mut om = s.sample_omega(rng, omega - omega / 5);
    om.extend(ray_points(s, rng, omega / 5));
    let mut varpi = s.sample_varpi(rng, omega);
    varpi.extend_from_slice(&om);
    Clouds { omega: om, varpi, off: off_points(s, rng, off) }
}

/// Coarse search over tilts `θ ≤ 2/√N` about horizontal axes, then a local
/// refinement; the smallest feasible tilt wins.
fn choose_rotation(samples: &[Sample], params: &DeformationParams) -> RangeReport {
    let n = params.n as f64;
    let lower = 2.0 / n.sqrt();
    let upper = n.sqrt() / 2.0;
    let max_tilt = params.max_tilt();
    let assess = |tilt: f64, chi: f64| -> RangeReport {
        let a = Sl2::su2_axis_angle([chi.cos(), chi.sin(), 0.0], tilt);
        let mut g_min = f64::INFINITY;
        let mut g_max: f64 = 0.0;
        for s in samples {
            let g = rotate_sample(s, &a).g.norm();
            g_min = g_min.min(g);
            g_max = g_max.max(g);
        }
        let violation = (lower / g_min).ln().max((g_max / upper).ln()).max(0.0);
        RangeReport { tilt, axis_angle: chi, lower, upper, g_min, g_max, violation, satisfied: violation == 0.0 }
    };
    let better = |a: &RangeReport, b: &RangeReport| {
        // feasible first, then smaller tilt; otherwise smaller violation
        match (a.satisfied, b.satisfied) {
            (true, true) => (a.tilt, a.axis_angle) < (b.tilt, b.axis_angle),
            (true, false) => true,
            (false, true) => false,
            (false, false) => a.violation < b.violation - 1e-15 || (a.violation <= b.violation + 1e-15 && a.tilt > b.tilt),
        }
    };
    let (nt, nc) = (16, 32);
    let mut best = assess(0.0, 0.0);
    for it in 1..=nt {
        for ic in 0..nc {
            let r = assess(max_tilt * it as f64 / nt as f64, 2.0 * PI * ic as f64 / nc as f64);
            if better(&r, &best) {
                best = r;
            }
        }
    }
    // local refinement
    let (dt, dc) = (max_tilt / nt as f64, 2.0 * PI / nc as f64);
    for it in -4i32..=4 {
        for ic in -4i32..=4 {
            let tilt = (best.tilt + dt * it as f64 / 4.0).clamp(0.0, max_tilt);
            let chi = best.axis_angle + dc * ic as f64 / 4.0;
            let r = assess(tilt, chi);
            if better(&r, &best) {
                best = r;
            }
        }
    }
    best
}

struct Measured {
    sup_off: f64,
    min_on_omega: f64,
    min_on_varpi: f64,
}

fn measure(p: &[Complex64], off: &[Sample], omega: &[Sample], varpi: &[Sample]) -> Measured {
    let deformed = |s: &Sample| {
        let h = horner(p, s.z).exp();
        PhiVector::from_data(s.g / h, s.eta * h)
    };
    let sup_off = off
        .par_iter()
        .map(|s| PhiVector::from_data(s.g, s.eta).sub(&deformed(s)).norm())
        .reduce(|| 0.0, f64::max);
    let min_on = |v: &[Sample]| v.par_iter().map(|s| deformed(s).norm()).reduce(|| f64::INFINITY, f64::min);
    Measured { sup_off, min_on_omega: min_on(omega), min_on_varpi: min_on(varpi) }
}

fn degree_schedule(cap: usize) -> Vec<usize> {
    let mut d: Vec<usize> = [8, 16, 24, 32, 48, 64, 80, 96, 120, 160, 200].iter().copied().filter(|&d| d <= cap).collect();
    if d.last() != Some(&cap) {
        d.push(cap);
    }
    d
}

/// Runs the deformation step on sector `params.j`.
pub fn deform(w: &WData, params: &DeformationParams, lab: &Labyrinth) -> Result<DeformationResult, DeformationError> {
    params.validate()?;
    if lab.n() != params.n {
        return Err(DeformationError::InvalidParams(format!("labyrinth has N = {}, params N = {}", lab.n(), params.n)));
    }
    let sector = lab.sector(params.j)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let fit_clouds = clouds(&sector, &mut rng, params.omega_samples, params.off_samples);
    let mut audit_rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x9e37_79b9_7f4a_7c15);
    let audit = clouds(&sector, &mut audit_rng, params.audit_samples / 4, params.audit_samples);

    // (1) frame rotation for the range condition
    let varpi_raw = evaluate(w, &fit_clouds.varpi)?;
    let range = choose_rotation(&varpi_raw, params);
    if !range.satisfied && params.range_policy == Policy::Strict {
        return Err(DeformationError::RangeUnfixable {
            max_tilt: params.max_tilt(),
            lower: range.lower,
            upper: range.upper,
            violation: range.violation,
            g_min: range.g_min,
            g_max: range.g_max,
        });
    }
    if !range.satisfied {
        warn!(
            "sector {}: |g| range [{:.3}, {:.3}] not reachable with tilt <= {:.3}; using tilt {:.3} (|g| in [{:.3}, {:.3}])",
            params.j,
            range.lower,
            range.upper,
            params.max_tilt(),
            range.tilt,
            range.g_min,
            range.g_max
        );
    }
    let a = Sl2::su2_axis_angle([range.axis_angle.cos(), range.axis_angle.sin(), 0.0], range.tilt);
    let rot = |v: Vec<Sample>| -> Vec<Sample> { v.iter().map(|s| rotate_sample(s, &a)).collect() };

    let fit_on = rot(evaluate(w, &fit_clouds.omega)?);
    let fit_off = rot(evaluate(w, &fit_clouds.off)?);
    let audit_omega = rot(evaluate(w, &audit.omega)?);
    let audit_varpi = rot(evaluate(w, &audit.varpi)?);
    let audit_off = rot(evaluate(w, &audit.off)?);

    let min_phi_omega = audit_omega.iter().map(|s| lambda(s.g, s.eta)).fold(f64::INFINITY, f64::min);
    let lam_off_max = fit_off.iter().map(|s| lambda(s.g, s.eta)).fold(0.0, f64::max).max(1e-300);
    let g2_max = fit_on.iter().map(|s| s.g.norm_sqr()).fold(0.0, f64::max);
    let closeness = params.closeness_target();
    let amp_target = params.amplification_target();
    let floor_target = amp_target * min_phi_omega;

    // (2)-(4) fit h = e^p with degree and κ escalation
    let kappas: Vec<f64> = match params.kappa {
        Some(k) => vec![k],
        None => {
            let k0 = amp_target * (1.0 + g2_max);
            (0..4).map(|i| k0 * 10f64.powi(i)).collect()
        }
    };
    let mut trace = Vec::new();
    let mut best: Option<(Vec<Complex64>, usize, f64, Measured)> = None;
    let score = |m: &Measured| (m.sup_off / closeness).max(floor_target / m.min_on_omega.max(1e-300));
    'kappa: for &kappa in &kappas {
        let log_k = kappa.ln();
        let targets = FitTargets {
            on: fit_on.iter().map(|s| (s.z, log_k)).collect(),
            off: fit_off.iter().map(|s| s.z).collect(),
            weight_on: 4.0,
            weight_off: lam_off_max / (0.5 * closeness),
        };
        let mut best_sup = f64::INFINITY;
        let mut stalled = 0;
        for degree in degree_schedule(params.degree_cap) {
            let mut fit = fit_bump(&targets, degree);
            orient_constant(&mut fit.coeffs, &[&audit_off, &audit_varpi]);
            let m = measure(&fit.coeffs, &audit_off, &audit_omega, &audit_varpi);
            debug!(
                "sector {} κ={kappa:.3e} degree {degree}: sup off {:.3e}, min on ω {:.3e}, cond {:.2e}",
                params.j, m.sup_off, m.min_on_omega, fit.condition
            );
            trace.push(FitStep { kappa, degree, sup_off: m.sup_off, min_on: m.min_on_omega, condition: fit.condition });
            // within one κ a higher degree is kept only if it does not worsen (a)
            if m.sup_off <= best_sup {
                stalled = if m.sup_off > 0.9 * best_sup { stalled + 1 } else { 0 };
                best_sup = m.sup_off;
                let better = best.as_ref().is_none_or(|b| score(&m) < score(&b.3));
                if better || params.kappa.is_some() {
                    best = Some((fit.coeffs.clone(), degree, kappa, m));
                }
            } else {
                stalled += 1;
            }
            let b = &best.as_ref().unwrap().3;
            if b.sup_off < closeness && b.min_on_omega >= floor_target {
                break 'kappa;
            }
            if fit.condition > MAX_CONDITION {
                warn!("sector {}: least-squares condition {:.2e} at degree {degree}; not raising the degree", params.j, fit.condition);
                break;
            }
            if stalled >= 2 && params.fit_policy == Policy::BestEffort {
                debug!("sector {}: residual stalled at degree {degree}", params.j);
                break;
            }
        }
    }
    let (coeffs, degree, kappa, m) = best.expect("at least one fit is attempted");

    // (5) assemble and audit with full expression evaluation
    let h = HoloExpr::exp(&HoloExpr::poly(coeffs.clone()));
    let w_rot = w.conjugate(&a);
    let deformed = lopez_ros(&w_rot, &h)?.conjugate(&a.inverse());
    let wdata = WData::new(deformed.g().clone(), deformed.eta().clone())
        .with_basepoint(w.basepoint())
        .with_poles(w.poles().to_vec());
    let r = rotation_of(&a);
    let u = [r[2][0], r[2][1], r[2][2]];
    let check_pts: Vec<Complex64> = audit.off.iter().chain(&audit.omega).step_by(3).copied().collect();
    let (orthogonality_residual, nullity_residual) = check_pts
        .par_iter()
        .map_init(
            || (w.evaluator(), wdata.evaluator()),
            |(e0, e1), &z| -> Result<(f64, f64), WeierstrassError> {
                let p0 = e0.phi(z)?;
                let p1 = e1.phi(z)?;
                let orth = p0.sub(&p1).dot_real(u).norm();
                let null = p1.dot_self().norm() / p1.norm().powi(2).max(1e-300);
                Ok((orth, null))
            },
        )
        .try_reduce(|| (0.0, 0.0), |x, y| Ok((x.0.max(y.0), x.1.max(y.1))))?;

    let nf = params.n as f64;
    let result = DeformationResult {
        wdata,
        rotation: a,
        u,
        tilt: range.tilt,
        range,
        bump: coeffs,
        degree,
        kappa,
        closeness_target: closeness,
        amplification_target: amp_target,
        sup_off: m.sup_off,
        min_phi_omega,
        min_on_omega: m.min_on_omega,
        min_on_varpi: m.min_on_varpi,
        c_omega: m.min_on_omega / nf.powf(3.5),
        c_varpi: m.min_on_varpi * nf.sqrt(),
        orthogonality_residual,
        nullity_residual,
        closeness_met: m.sup_off < closeness,
        amplification_met: m.min_on_omega >= floor_target,
        trace,
    };
    if !result.closeness_met && params.fit_policy == Policy::Strict {
        return Err(DeformationError::FitFailed { degree, achieved: result.sup_off, target: closeness, best: Box::new(result) });
    }
    Ok(result)
}
