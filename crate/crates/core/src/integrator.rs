//! Integration of null curves along paths and over polar grids:
//! `F = ∫ φ dz` in `C³` and `B⁻¹ dB = ψ dz` in `SL(2,C)`, plus checkable
//! a-priori estimates for `B⁻¹B' = α`.

use std::f64::consts::SQRT_2;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{dist_h3, to_h3, H3Point, HermPoint, Mat2, Sl2};
use crate::grid::PolarGrid;
use crate::weierstrass::{WData, WEvaluator, WeierstrassError};

/// Local error tolerance of the adaptive stepper.
pub const LOCAL_TOL: f64 = 1e-10;
/// Largest determinant drift tolerated before a step is rejected.
pub const DET_DRIFT: f64 = 1e-6;
/// Default bound on grid loop residuals.
pub const LOOP_TOL: f64 = 1e-6;

const C0: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrationError {
    #[error(transparent)]
    Data(#[from] WeierstrassError),
    #[error("integration did not converge (last error estimate {residual:e} at t = {t})")]
    NonConvergent { residual: f64, t: f64 },
    #[error("determinant drift {drift:e} persists after repeated halving")]
    DetDrift { drift: f64 },
    #[error("loop residual {residual:e} exceeds {tol:e}")]
    LoopResidual { residual: f64, tol: f64 },
    #[error("invalid path: {0}")]
    BadPath(String),
    #[error("problems have different horizons ({0} vs {1})")]
    HorizonMismatch(f64, f64),
}

/// How each segment is stepped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Stepping {
    /// RK4 with step doubling and local tolerance `tol`.
    Adaptive { tol: f64 },
    /// Plain RK4 with a fixed number of steps per segment.
    Fixed { steps: usize },
}

impl Default for Stepping {
    fn default() -> Self {
        Stepping::Adaptive { tol: LOCAL_TOL }
    }
}

/// Polyline in the closed unit disc.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Path {
    points: Vec<Complex64>,
    subdivisions: usize,
}

impl Path {
    pub fn new(points: Vec<Complex64>) -> Result<Path, IntegrationError> {
        if points.len() < 2 {
            return Err(IntegrationError::BadPath("a path needs two points".into()));
        }
        for w in points.windows(2) {
            if w[0] == w[1] {
                return Err(IntegrationError::BadPath(format!("repeated point {}", w[0])));
            }
        }
        if points.iter().any(|z| !z.is_finite()) {
            return Err(IntegrationError::BadPath("non-finite point".into()));
        }
        Ok(Path { points, subdivisions: 1 })
    }

    pub fn segment(a: Complex64, b: Complex64) -> Result<Path, IntegrationError> {
        Path::new(vec![a, b])
    }

    /// Each segment is split into `n` equal pieces; values are reported at
    /// every piece boundary.
    pub fn with_subdivisions(mut self, n: usize) -> Path {
        self.subdivisions = n.max(1);
        self
    }

    pub fn points(&self) -> &[Complex64] {
        &self.points
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    pub fn start(&self) -> Complex64 {
        self.points[0]
    }

    pub fn end(&self) -> Complex64 {
        *self.points.last().unwrap()
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    pub fn reversed(&self) -> Path {
        let mut p = self.points.clone();
        p.reverse();
        Path { points: p, subdivisions: self.subdivisions }
    }

    /// Point and unit tangent at arclength `s`.
    pub fn locate(&self, s: f64) -> (Complex64, Complex64) {
        let mut rest = s.max(0.0);
        for w in self.points.windows(2) {
            let d = w[1] - w[0];
            let l = d.norm();
            if rest <= l {
                let u = d / l;
                return (w[0] + u * rest, u);
            }
            rest -= l;
        }
        let n = self.points.len();
        let d = self.points[n - 1] - self.points[n - 2];
        (self.points[n - 1], d / d.norm())
    }

    /// Pieces `(start, end)` after subdivision.
    fn pieces(&self) -> Vec<(Complex64, Complex64)> {
        let n = self.subdivisions;
        let mut out = Vec::with_capacity((self.points.len() - 1) * n);
        for w in self.points.windows(2) {
            for k in 0..n {
                let a = w[0] + (w[1] - w[0]) * (k as f64 / n as f64);
                let b = if k + 1 == n { w[1] } else { w[0] + (w[1] - w[0]) * ((k + 1) as f64 / n as f64) };
                out.push((a, b));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// stepping core; the state is a flat vector of complex numbers

type State = Vec<Complex64>;

fn axpy(y: &[Complex64], h: f64, k: &[Complex64]) -> State {
    y.iter().zip(k).map(|(a, b)| a + b * h).collect()
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn max_abs(a: &[Complex64]) -> f64 {
    a.iter().map(|x| x.norm()).fold(0.0, f64::max)
}

fn rk4<F>(f: &mut F, t: f64, y: &[Complex64], h: f64) -> Result<State, IntegrationError>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]) -> Result<(), IntegrationError>,
{
    let n = y.len();
    let mut k1 = vec![C0; n];
    let mut k2 = vec![C0; n];
    let mut k3 = vec![C0; n];
    let mut k4 = vec![C0; n];
    f(t, y, &mut k1)?;
    f(t + 0.5 * h, &axpy(y, 0.5 * h, &k1), &mut k2)?;
    f(t + 0.5 * h, &axpy(y, 0.5 * h, &k2), &mut k3)?;
    f(t + h, &axpy(y, h, &k3), &mut k4)?;
    Ok((0..n).map(|i| y[i] + (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (h / 6.0)).collect())
}

/// Outcome of a projection applied after each accepted step.
enum Projected {
    Ok,
    Reject(f64),
}

/// Integrates `y' = f(t, y)` from `t0` to `t1 > t0`. `project` may rescale
/// the new state (given the previous one) or ask for a smaller step;
/// `observe` sees every accepted step. Returns the summed local error
/// estimates.
#[allow(clippy::too_many_arguments)]
fn march<F, P, O>(
    f: &mut F,
    t0: f64,
    t1: f64,
    y: &mut State,
    stepping: Stepping,
    h_hint: &mut f64,
    project: &mut P,
    observe: &mut O,
) -> Result<f64, IntegrationError>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]) -> Result<(), IntegrationError>,
    P: FnMut(&mut State, &[Complex64]) -> Projected,
    O: FnMut(f64, &[Complex64]),
{
    let span = t1 - t0;
    if span <= 0.0 {
        return Ok(0.0);
    }
    match stepping {
        Stepping::Fixed { steps } => {
            let steps = steps.max(1);
            let h = span / steps as f64;
            for i in 0..steps {
                let t = t0 + h * i as f64;
                fixed_step(f, t, y, h, project, 0)?;
                observe(if i + 1 == steps { t1 } else { t + h }, y);
            }
            Ok(0.0)
        }
        Stepping::Adaptive { tol } => {
            let mut t = t0;
            let mut h = h_hint.clamp(1e-6 * span, span);
            let mut err_sum = 0.0;
            let h_floor = 1e-13 * span.max(1.0);
            loop {
                let last = t + h >= t1 - 1e-14 * span;
                let step = if last { t1 - t } else { h };
                let full = rk4(f, t, y, step)?;
                let half = rk4(f, t, y, 0.5 * step)?;
                let two = rk4(f, t + 0.5 * step, &half, 0.5 * step)?;
                let err = max_diff(&two, &full) / 15.0;
                let scale = max_abs(&two).max(1.0);
                let target = tol * scale;
                if err.is_finite() && err <= target {
                    let mut next: State = two.iter().zip(&full).map(|(a, b)| a + (a - b) / 15.0).collect();
                    match project(&mut next, y) {
                        Projected::Ok => {
                            *y = next;
                            err_sum += err;
                            t = if last { t1 } else { t + step };
                            observe(t, y);
                            let grow = if err == 0.0 { 4.0 } else { (0.9 * (target / err).powf(0.2)).min(4.0) };
                            if !last {
                                h = step * grow;
                            }
                            *h_hint = h.max(step);
                            if last {
                                return Ok(err_sum);
                            }
                        }
                        Projected::Reject(_) => h = 0.5 * step,
                    }
                } else {
                    let shrink = if err.is_finite() { (0.9 * (target / err).powf(0.2)).clamp(0.1, 0.5) } else { 0.1 };
                    h = step * shrink;
                }
                if h < h_floor {
                    return Err(IntegrationError::NonConvergent { residual: err, t });
                }
            }
        }
    }
}

/// One fixed step; a rejected step is split into two halves.
fn fixed_step<F, P>(f: &mut F, t: f64, y: &mut State, h: f64, project: &mut P, depth: u32) -> Result<(), IntegrationError>
where
    F: FnMut(f64, &[Complex64], &mut [Complex64]) -> Result<(), IntegrationError>,
    P: FnMut(&mut State, &[Complex64]) -> Projected,
{
    let mut next = rk4(f, t, y, h)?;
    match project(&mut next, y) {
        Projected::Ok => {
            *y = next;
            Ok(())
        }
        Projected::Reject(drift) if depth >= 30 => Err(IntegrationError::DetDrift { drift }),
        Projected::Reject(_) => {
            fixed_step(f, t, y, 0.5 * h, project, depth + 1)?;
            fixed_step(f, t + 0.5 * h, y, 0.5 * h, project, depth + 1)
        }
    }
}

fn mat_from(s: &[Complex64]) -> Mat2 {
    Mat2::new(s[0], s[1], s[2], s[3])
}

fn mat_into(m: &Mat2, s: &mut [Complex64]) {
    s[0] = m.a11;
    s[1] = m.a12;
    s[2] = m.a21;
    s[3] = m.a22;
}

/// Renormalises the leading 2×2 block of the state to determinant one,
/// choosing the square root continuous with the previous state.
fn det_projector(offset: usize) -> impl FnMut(&mut State, &[Complex64]) -> Projected {
    move |next, _prev| {
        let m = mat_from(&next[offset..offset + 4]);
        let d = m.det();
        let drift = (d - 1.0).norm();
        if !(drift <= DET_DRIFT) {
            return Projected::Reject(drift);
        }
        let mut root = d.sqrt();
        if (root - 1.0).norm() > (-root - 1.0).norm() {
            root = -root;
        }
        mat_into(&m.scale(root.inv()), &mut next[offset..offset + 4]);
        Projected::Ok
    }
}

fn no_projection(_: &mut State, _: &[Complex64]) -> Projected {
    Projected::Ok
}

/// Values along a path at every subdivision node.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSolution<T> {
    pub points: Vec<Complex64>,
    pub values: Vec<T>,
    pub error_estimate: f64,
}

impl<T: Copy> PathSolution<T> {
    pub fn end(&self) -> T {
        *self.values.last().unwrap()
    }
}

fn integrate_pieces<F>(
    pieces: &[(Complex64, Complex64)],
    init: State,
    stepping: Stepping,
    sl2: bool,
    rhs: &mut F,
) -> Result<(Vec<State>, f64), IntegrationError>
where
    F: FnMut(Complex64, Complex64, &[Complex64], &mut [Complex64]) -> Result<(), IntegrationError>,
{
    let mut y = init;
    let mut out = vec![y.clone()];
    let mut err = 0.0;
    let mut h = 1e-2;
    for &(a, b) in pieces {
        let len = (b - a).norm();
        let u = (b - a) / len;
        let mut f = |t: f64, y: &[Complex64], dy: &mut [Complex64]| rhs(a + u * t, u, y, dy);
        err += if sl2 {
            march(&mut f, 0.0, len, &mut y, stepping, &mut h, &mut det_projector(0), &mut |_, _| {})?
        } else {
            march(&mut f, 0.0, len, &mut y, stepping, &mut h, &mut no_projection, &mut |_, _| {})?
        };
        out.push(y.clone());
    }
    Ok((out, err))
}

fn piece_points(path: &Path) -> Vec<Complex64> {
    let pieces = path.pieces();
    let mut pts = vec![pieces[0].0];
    pts.extend(pieces.iter().map(|p| p.1));
    pts
}

fn c3_rhs<'a, 'b: 'a>(ev: &'a mut WEvaluator<'b>) -> impl FnMut(Complex64, Complex64, &[Complex64], &mut [Complex64]) -> Result<(), IntegrationError> + use<'a, 'b> {
    move |z, u, _y, dy| {
        let p = ev.phi(z)?;
        for k in 0..3 {
            dy[k] = p.0[k] * u;
        }
        Ok(())
    }
}

fn sl2_rhs<'a, 'b: 'a>(ev: &'a mut WEvaluator<'b>) -> impl FnMut(Complex64, Complex64, &[Complex64], &mut [Complex64]) -> Result<(), IntegrationError> + use<'a, 'b> {
    move |z, u, y, dy| {
        let psi = ev.psi(z)?.0.scale(u);
        mat_into(&(mat_from(y) * psi), dy);
        Ok(())
    }
}

/// `F(z) = F(z₀) + ∫ φ dz` along the path, starting from `init`.
pub fn integrate_c3(w: &WData, path: &Path, init: [Complex64; 3], stepping: Stepping) -> Result<PathSolution<[Complex64; 3]>, IntegrationError> {
    let mut ev = w.evaluator();
    let (vals, err) = integrate_pieces(&path.pieces(), init.to_vec(), stepping, false, &mut c3_rhs(&mut ev))?;
    Ok(PathSolution {
        points: piece_points(path),
        values: vals.iter().map(|v| [v[0], v[1], v[2]]).collect(),
        error_estimate: err,
    })
}

/// Solves `B' = B ψ` along the path with `B(start) = init`.
pub fn integrate_sl2(w: &WData, path: &Path, init: &Sl2, stepping: Stepping) -> Result<PathSolution<Mat2>, IntegrationError> {
    let mut ev = w.evaluator();
    let mut y = vec![C0; 4];
    mat_into(init.matrix(), &mut y);
    let (vals, err) = integrate_pieces(&path.pieces(), y, stepping, true, &mut sl2_rhs(&mut ev))?;
    Ok(PathSolution { points: piece_points(path), values: vals.iter().map(|v| mat_from(v)).collect(), error_estimate: err })
}

// ---------------------------------------------------------------------------
// grid fields

/// Which null curve a grid field holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Target {
    C3,
    Sl2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FieldValues {
    C3(Vec<[Complex64; 3]>),
    Sl2(Vec<Mat2>),
}

/// Values of `F` or `B` on a polar grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveField {
    pub grid: PolarGrid,
    pub base: Complex64,
    pub values: FieldValues,
    /// Accumulated local error estimate along the radial path to each node.
    pub error: Vec<f64>,
    /// Largest relative discrepancy between radial values and values carried
    /// along a ring chord from the angular neighbour.
    pub loop_residual: f64,
}

impl CurveField {
    pub fn sl2(&self) -> Option<&[Mat2]> {
        match &self.values {
            FieldValues::Sl2(v) => Some(v),
            FieldValues::C3(_) => None,
        }
    }

    pub fn c3(&self) -> Option<&[[Complex64; 3]]> {
        match &self.values {
            FieldValues::C3(v) => Some(v),
            FieldValues::Sl2(_) => None,
        }
    }

    /// Largest `|det B - 1|` over the field (zero for `C³` fields).
    pub fn det_residual(&self) -> f64 {
        self.sl2().map_or(0.0, |v| v.iter().map(|m| (m.det() - 1.0).norm()).fold(0.0, f64::max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSolveOptions {
    pub stepping: Stepping,
    /// Fail when the loop residual exceeds this.
    pub loop_tol: f64,
    /// Approximate number of chords checked for the loop residual.
    pub loop_samples: usize,
}

impl Default for GridSolveOptions {
    fn default() -> Self {
        GridSolveOptions { stepping: Stepping::default(), loop_tol: LOOP_TOL, loop_samples: 2048 }
    }
}

fn state_of(target: Target, init: &Sl2) -> State {
    match target {
        Target::C3 => vec![C0; 3],
        Target::Sl2 => init.matrix().entries().to_vec(),
    }
}

fn run_segment(
    ev: &mut WEvaluator<'_>,
    target: Target,
    a: Complex64,
    b: Complex64,
    y: &mut State,
    stepping: Stepping,
    h: &mut f64,
) -> Result<f64, IntegrationError> {
    let len = (b - a).norm();
    if len == 0.0 {
        return Ok(0.0);
    }
    let u = (b - a) / len;
    match target {
        Target::C3 => {
            let mut rhs = c3_rhs(ev);
            let mut f = |t: f64, y: &[Complex64], dy: &mut [Complex64]| rhs(a + u * t, u, y, dy);
            march(&mut f, 0.0, len, y, stepping, h, &mut no_projection, &mut |_, _| {})
        }
        Target::Sl2 => {
            let mut rhs = sl2_rhs(ev);
            let mut f = |t: f64, y: &[Complex64], dy: &mut [Complex64]| rhs(a + u * t, u, y, dy);
            march(&mut f, 0.0, len, y, stepping, h, &mut det_projector(0), &mut |_, _| {})
        }
    }
}

fn rel_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    max_diff(a, b) / max_abs(b).max(1.0)
}

/// Fills a polar grid by integrating along rays from the centre; the value at
/// the base point is `init` (`0` for `C³`).
pub fn grid_solve(w: &WData, grid: &PolarGrid, target: Target, init: &Sl2, opts: &GridSolveOptions) -> Result<CurveField, IntegrationError> {
    let base = w.basepoint();
    let mut centre = state_of(target, init);
    let mut centre_err = 0.0;
    if base != C0 {
        let mut ev = w.evaluator();
        let mut h = 1e-2;
        centre_err = run_segment(&mut ev, target, base, C0, &mut centre, opts.stepping, &mut h)?;
    }
    let rays: Vec<(Vec<State>, Vec<f64>)> = (0..grid.angular)
        .into_par_iter()
        .map_init(
            || w.evaluator(),
            |ev, k| {
                let dir = Complex64::from_polar(1.0, grid.angle(k));
                let mut y = centre.clone();
                let mut h = 1e-2;
                let mut err = centre_err;
                let mut vals = Vec::with_capacity(grid.radial);
                let mut errs = Vec::with_capacity(grid.radial);
                for ring in 1..=grid.radial {
                    let a = dir * grid.ring_radius(ring - 1);
                    let b = dir * grid.ring_radius(ring);
                    err += run_segment(ev, target, a, b, &mut y, opts.stepping, &mut h)?;
                    vals.push(y.clone());
                    errs.push(err);
                }
                Ok((vals, errs))
            },
        )
        .collect::<Result<_, IntegrationError>>()?;

    let node = |idx: usize| -> &State {
        if idx == 0 {
            &centre
        } else {
            let (ring, k) = grid.ring_and_angle(idx);
            &rays[k].0[ring - 1]
        }
    };

    // loop residuals on a sample of ring chords
    let ring_stride = (grid.radial * grid.angular / opts.loop_samples.max(1)).max(1);
    let samples: Vec<(usize, usize)> = (1..=grid.radial)
        .flat_map(|ring| (0..grid.angular).map(move |k| (ring, k)))
        .enumerate()
        .filter(|(i, _)| i % ring_stride == 0)
        .map(|(_, rk)| rk)
        .collect();
    let loop_residual = samples
        .par_iter()
        .map_init(
            || w.evaluator(),
            |ev, &(ring, k)| {
                let from = grid.index(ring, k);
                let to = grid.index(ring, k + 1);
                let mut y = node(from).clone();
                let mut h = 1e-2;
                run_segment(ev, target, grid.point(from), grid.point(to), &mut y, opts.stepping, &mut h)?;
                Ok::<f64, IntegrationError>(rel_diff(&y, node(to)))
            },
        )
        .try_reduce(|| 0.0, |a, b| Ok(f64::max(a, b)))?;
    if !(loop_residual <= opts.loop_tol) {
        return Err(IntegrationError::LoopResidual { residual: loop_residual, tol: opts.loop_tol });
    }

    let n = grid.len();
    let mut error = Vec::with_capacity(n);
    error.push(centre_err);
    let values = match target {
        Target::C3 => {
            let mut v = vec![[centre[0], centre[1], centre[2]]];
            for idx in 1..n {
                let s = node(idx);
                v.push([s[0], s[1], s[2]]);
            }
            FieldValues::C3(v)
        }
        Target::Sl2 => {
            let mut v = vec![mat_from(&centre)];
            for idx in 1..n {
                v.push(mat_from(node(idx)));
            }
            FieldValues::Sl2(v)
        }
    };
    for idx in 1..n {
        let (ring, k) = grid.ring_and_angle(idx);
        error.push(rays[k].1[ring - 1]);
    }
    Ok(CurveField { grid: *grid, base, values, error, loop_residual })
}

/// `B` on the grid with `B(base) = id`.
pub fn grid_solve_sl2(w: &WData, grid: &PolarGrid) -> Result<CurveField, IntegrationError> {
    grid_solve(w, grid, Target::Sl2, &Sl2::identity(), &GridSolveOptions::default())
}

/// Largest excess of `dist(o, BB*)` over `cosh⁻¹(τ²/2)` with `τ = max |B|`;
/// never positive for genuine `SL(2,C)` values.
pub fn radius_bound_residual(values: &[Mat2]) -> f64 {
    let tau = values.iter().map(|m| m.norm()).fold(0.0, f64::max);
    let bound = (0.5 * tau * tau).max(1.0).acosh();
    values
        .iter()
        .map(|m| {
            let p = HermPoint::from_hermitian(&(*m * m.adjoint()));
            let d = H3Point::normalize(p).map_or(f64::INFINITY, |q| dist_h3(&H3Point::origin(), &q));
            d - bound
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

// ---------------------------------------------------------------------------
// ODE problems and certificates

/// A trace-free coefficient `α(t)` on `[0, a]`.
#[derive(Clone)]
pub enum Coefficient {
    /// `α(t) = Σ A_k t^k`.
    Poly(Vec<Mat2>),
    /// `α(t) = ψ(γ(t)) γ'(t)` along a path parametrised by arclength.
    Path { w: WData, path: Path },
    Func(Arc<dyn Fn(f64) -> Mat2 + Send + Sync>),
}

impl std::fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Coefficient::Poly(c) => f.debug_tuple("Poly").field(c).finish(),
            Coefficient::Path { path, .. } => f.debug_struct("Path").field("path", path).finish_non_exhaustive(),
            Coefficient::Func(_) => f.write_str("Func(..)"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ODEProblem {
    pub alpha: Coefficient,
    pub horizon: f64,
}

impl ODEProblem {
    pub fn poly(coeffs: Vec<Mat2>, horizon: f64) -> ODEProblem {
        ODEProblem { alpha: Coefficient::Poly(coeffs), horizon }
    }

    pub fn along_path(w: &WData, path: &Path) -> ODEProblem {
        ODEProblem { horizon: path.length(), alpha: Coefficient::Path { w: w.clone(), path: path.clone() } }
    }

    /// Random trace-free polynomial coefficients of the given degree with
    /// entries of size about `scale`.
    pub fn random_poly<R: Rng + ?Sized>(rng: &mut R, degree: usize, scale: f64, horizon: f64) -> ODEProblem {
        let coeffs = (0..=degree).map(|_| random_trace_free(rng, scale)).collect();
        ODEProblem::poly(coeffs, horizon)
    }

    pub fn alpha(&self, t: f64) -> Result<Mat2, IntegrationError> {
        match &self.alpha {
            Coefficient::Poly(c) => {
                let mut acc = Mat2::zero();
                for m in c.iter().rev() {
                    acc = acc.scale_re(t) + *m;
                }
                Ok(acc)
            }
            Coefficient::Path { w, path } => {
                let (z, u) = path.locate(t);
                Ok(w.psi(z)?.0.scale(u))
            }
            Coefficient::Func(f) => Ok(f(t)),
        }
    }

    /// `‖α‖ = max |α(t)|` over `samples + 1` equally spaced points.
    pub fn sup_norm(&self, samples: usize) -> Result<f64, IntegrationError> {
        let mut m: f64 = 0.0;
        for i in 0..=samples {
            m = m.max(self.alpha(self.horizon * i as f64 / samples as f64)?.norm());
        }
        Ok(m)
    }
}

pub fn random_trace_free<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> Mat2 {
    let mut c = || Complex64::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale));
    let a = c();
    Mat2::new(a, c(), c(), -a)
}

/// Dense solution of `B⁻¹B' = α`, `B(0) = id`, together with `∫α` and
/// `∫|α|`.
#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub t: Vec<f64>,
    pub b: Vec<Mat2>,
    pub int_alpha: Vec<Mat2>,
    pub int_abs: Vec<f64>,
}

pub fn solve(p: &ODEProblem, stepping: Stepping) -> Result<OdeSolution, IntegrationError> {
    let mut y = vec![C0; 9];
    mat_into(&Mat2::identity(), &mut y[0..4]);
    let mut sol = OdeSolution { t: vec![0.0], b: vec![Mat2::identity()], int_alpha: vec![Mat2::zero()], int_abs: vec![0.0] };
    let mut f = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let a = p.alpha(t)?;
        mat_into(&(mat_from(&y[0..4]) * a), &mut dy[0..4]);
        mat_into(&a, &mut dy[4..8]);
        dy[8] = Complex64::new(a.norm(), 0.0);
        Ok(())
    };
    let mut h = p.horizon / 64.0;
    march(&mut f, 0.0, p.horizon, &mut y, stepping, &mut h, &mut det_projector(0), &mut |t, y| {
        sol.t.push(t);
        sol.b.push(mat_from(&y[0..4]));
        sol.int_alpha.push(mat_from(&y[4..8]));
        sol.int_abs.push(y[8].re);
    })?;
    Ok(sol)
}

/// Outcome of a checked inequality: `value` compared with `limit`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

/// `max_t |B(t)| / (√2 exp ∫₀ᵗ|α|)`; passes when at most `1 + 1e-6`.
pub fn bound_growth(sol: &OdeSolution) -> Certificate {
    bound_growth_with(sol, SQRT_2)
}

/// [`bound_growth`] with the prefactor `√2` replaced by `prefactor`.
pub fn bound_growth_with(sol: &OdeSolution, prefactor: f64) -> Certificate {
    let ratio = sol
        .b
        .iter()
        .zip(&sol.int_abs)
        .map(|(b, i)| b.norm() / (prefactor * i.exp()))
        .fold(0.0, f64::max);
    Certificate { value: ratio, limit: 1.0 + 1e-6, passed: ratio <= 1.0 + 1e-6 }
}

/// `max_t (|Z(t)| - (max|B| ∫₀ᵗ|α|)²)` with `Z = B - id - ∫α`; passes when
/// at most `1e-6`.
pub fn remainder_first_order(sol: &OdeSolution) -> Certificate {
    let bmax = sol.b.iter().map(|b| b.norm()).fold(0.0, f64::max);
    let excess = sol
        .b
        .iter()
        .zip(&sol.int_alpha)
        .zip(&sol.int_abs)
        .map(|((b, ia), i)| {
            let z = *b - Mat2::identity() - *ia;
            z.norm() - (bmax * i).powi(2)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    Certificate { value: excess, limit: 1e-6, passed: excess <= 1e-6 }
}

/// Measurements comparing the solutions of two problems on the same
/// interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub m: f64,
    pub sup_diff: f64,
    pub measured: f64,
    pub bound: f64,
    pub mu: f64,
    pub distance: f64,
    /// `|(Y - X) - A Y|` at the end point, `A = ∫ X(α₁ - α₀) Y⁻¹`.
    pub identity_residual: f64,
}

impl ComparisonReport {
    pub fn bound_holds(&self, slack: f64) -> bool {
        self.measured <= self.bound + slack
    }

    pub fn distance_holds(&self, slack: f64) -> bool {
        self.distance <= self.mu * self.sup_diff + slack
    }
}

pub fn compare_solutions(p0: &ODEProblem, p1: &ODEProblem, stepping: Stepping) -> Result<ComparisonReport, IntegrationError> {
    if (p0.horizon - p1.horizon).abs() > 1e-12 * p0.horizon.max(1.0) {
        return Err(IntegrationError::HorizonMismatch(p0.horizon, p1.horizon));
    }
    let a = p0.horizon;
    // state: X, Y, A, ∫|α0|, ∫|α1|
    let mut y = vec![C0; 14];
    mat_into(&Mat2::identity(), &mut y[0..4]);
    mat_into(&Mat2::identity(), &mut y[4..8]);
    let mut sup: f64 = 0.0;
    let mut f = |t: f64, y: &[Complex64], dy: &mut [Complex64]| {
        let a0 = p0.alpha(t)?;
        let a1 = p1.alpha(t)?;
        let x = mat_from(&y[0..4]);
        let yy = mat_from(&y[4..8]);
        mat_into(&(x * a0), &mut dy[0..4]);
        mat_into(&(yy * a1), &mut dy[4..8]);
        mat_into(&(x * (a1 - a0) * yy.adjugate()), &mut dy[8..12]);
        dy[12] = Complex64::new(a0.norm(), 0.0);
        dy[13] = Complex64::new(a1.norm(), 0.0);
        Ok(())
    };
    let mut det_x = det_projector(0);
    let mut det_y = det_projector(4);
    let mut project = |next: &mut State, prev: &[Complex64]| match det_x(next, prev) {
        Projected::Ok => det_y(next, prev),
        r => r,
    };
    let mut h = a / 64.0;
    march(&mut f, 0.0, a, &mut y, stepping, &mut h, &mut project, &mut |_, _| {})?;
    let samples = 2000;
    for i in 0..=samples {
        let t = a * i as f64 / samples as f64;
        sup = sup.max((p0.alpha(t)? - p1.alpha(t)?).norm());
    }
    let x = mat_from(&y[0..4]);
    let yy = mat_from(&y[4..8]);
    let big_a = mat_from(&y[8..12]);
    let m = y[12].re.exp().max(y[13].re.exp());
    let measured = (yy - x).norm();
    let identity_residual = ((yy - x) - big_a * yy).norm();
    let bound = (SQRT_2 * m).powi(3) * sup;
    let mu = 4.0 * m.powi(4) * (SQRT_2 + 2.0 * m.powi(4) * sup);
    let to_point = |mm: Mat2| to_h3(&Sl2::with_tolerance(mm, 1e-6).unwrap_or_else(|_| Sl2::identity()));
    let distance = dist_h3(&to_point(x), &to_point(yy));
    Ok(ComparisonReport { m, sup_diff: sup, measured, bound, mu, distance, identity_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::holo::HoloExpr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn horosphere(cc: Complex64) -> WData {
        WData::new(HoloExpr::zero(), HoloExpr::constant(cc))
    }

    #[test]
    fn c3_examples() {
        let cc = c(0.4, -0.3);
        let p = Path::segment(c(0.0, 0.0), c(1.0, 0.0)).unwrap();
        let f = integrate_c3(&horosphere(cc), &p, [C0; 3], Stepping::default()).unwrap().end();
        assert!((f[0] - cc / 2.0).norm() < 1e-12 && (f[1] - c(0.0, 1.0) * cc / 2.0).norm() < 1e-12 && f[2].norm() < 1e-12);

        let w = WData::new(HoloExpr::z(), HoloExpr::one());
        let f = integrate_c3(&w, &p, [C0; 3], Stepping::default()).unwrap().end();
        assert!((f[0] - c(1.0 / 3.0, 0.0)).norm() < 1e-12);
        assert!((f[1] - c(0.0, 2.0 / 3.0)).norm() < 1e-12);
        assert!((f[2] - c(0.5, 0.0)).norm() < 1e-12);

        let sq = Path::new(vec![c(-0.5, -0.5), c(0.5, -0.5), c(0.5, 0.5), c(-0.5, 0.5), c(-0.5, -0.5)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = WData::random(&mut rng);
        let f = integrate_c3(&w, &sq, [C0; 3], Stepping::default()).unwrap().end();
        assert!(f.iter().all(|v| v.norm() < 1e-10));
    }

    #[test]
    fn c3_endpoint_independent_of_subdivision() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = WData::random(&mut rng);
        let p = Path::new(vec![c(0.0, 0.0), c(0.5, 0.3), c(-0.2, 0.8)]).unwrap();
        let a = integrate_c3(&w, &p, [C0; 3], Stepping::default()).unwrap().end();
        let b = integrate_c3(&w, &p.clone().with_subdivisions(9), [C0; 3], Stepping::default()).unwrap();
        assert_eq!(b.points.len(), 19);
        for k in 0..3 {
            assert!((a[k] - b.end()[k]).norm() < 1e-9);
        }
    }

    #[test]
    fn sl2_examples() {
        let cc = c(0.7, 0.2);
        for t in [0.3, 0.9] {
            let p = Path::segment(c(0.0, 0.0), c(t, 0.0)).unwrap();
            let b = integrate_sl2(&horosphere(cc), &p, &Sl2::identity(), Stepping::default()).unwrap().end();
            let e = Mat2::identity() + Mat2::e21().scale(cc * t / SQRT_2);
            assert!((b - e).norm() < 1e-12);
        }
        let init = Sl2::diagonal(c(2.0, 1.0));
        let zero = WData::new(HoloExpr::zero(), HoloExpr::zero());
        let p = Path::segment(c(0.1, 0.0), c(0.3, 0.6)).unwrap();
        assert_eq!(integrate_sl2(&zero, &p, &init, Stepping::default()).unwrap().end(), *init.matrix());

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = WData::random(&mut rng);
        let sq = Path::new(vec![c(-0.5, -0.5), c(0.5, -0.5), c(0.5, 0.5), c(-0.5, 0.5), c(-0.5, -0.5)]).unwrap();
        let sol = integrate_sl2(&w, &sq, &init, Stepping::default()).unwrap();
        assert!((sol.end() - *init.matrix()).norm() < 1e-8);
        assert!(sol.values.iter().all(|m| (m.det() - 1.0).norm() < 1e-9));
    }

    #[test]
    fn sl2_homotopic_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = WData::random(&mut rng);
        let a = Path::new(vec![c(0.0, 0.0), c(0.7, 0.0), c(0.7, 0.5)]).unwrap();
        let b = Path::new(vec![c(0.0, 0.0), c(-0.3, 0.6), c(0.7, 0.5)]).unwrap();
        let xa = integrate_sl2(&w, &a, &Sl2::identity(), Stepping::default()).unwrap().end();
        let xb = integrate_sl2(&w, &b, &Sl2::identity(), Stepping::default()).unwrap().end();
        assert!((xa - xb).norm() < 1e-7);
    }

    #[test]
    fn grid_solve_horosphere_closed_form() {
        let cc = c(0.2, 0.0);
        let grid = PolarGrid::new(16, 32);
        let field = grid_solve_sl2(&horosphere(cc), &grid).unwrap();
        let v = field.sl2().unwrap();
        assert_eq!(v[0], Mat2::identity());
        for (idx, m) in v.iter().enumerate() {
            let e = Mat2::identity() + Mat2::e21().scale(cc * grid.point(idx) / SQRT_2);
            assert!((*m - e).norm() < 1e-12);
        }
        assert!(field.det_residual() < 1e-12);
    }

    #[test]
    fn grid_solve_loop_residual_is_fourth_order() {
        let w = WData::new(HoloExpr::poly(vec![c(0.1, 0.0), c(0.8, 0.3), c(0.0, 0.5)]), HoloExpr::exp(&HoloExpr::z()));
        let opts = GridSolveOptions { stepping: Stepping::Fixed { steps: 1 }, loop_tol: f64::INFINITY, loop_samples: usize::MAX };
        // coarser grids trigger determinant-drift step splitting
        let coarse = grid_solve(&w, &PolarGrid::new(32, 64), Target::Sl2, &Sl2::identity(), &opts).unwrap();
        let fine = grid_solve(&w, &PolarGrid::new(64, 128), Target::Sl2, &Sl2::identity(), &opts).unwrap();
        assert!(coarse.loop_residual >= 8.0 * fine.loop_residual, "{} {}", coarse.loop_residual, fine.loop_residual);
    }

    #[test]
    fn grid_solve_c3_and_base_point() {
        let w = WData::new(HoloExpr::z(), HoloExpr::one()).with_basepoint(c(0.5, 0.0));
        let grid = PolarGrid::new(8, 16);
        let field = grid_solve(&w, &grid, Target::C3, &Sl2::identity(), &GridSolveOptions::default()).unwrap();
        let v = field.c3().unwrap();
        // F3 = (z² - z0²)/2
        for (idx, f) in v.iter().enumerate() {
            let z = grid.point(idx);
            assert!((f[2] - (z * z - 0.25) / 2.0).norm() < 1e-10);
        }
    }

    #[test]
    fn radius_identity_on_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let w = WData::random(&mut rng);
        let field = grid_solve_sl2(&w, &PolarGrid::new(8, 16)).unwrap();
        assert!(radius_bound_residual(field.sl2().unwrap()) < 1e-8);
    }

    #[test]
    fn certificate_examples() {
        let zero = ODEProblem::poly(vec![Mat2::zero()], 1.0);
        let s = solve(&zero, Stepping::default()).unwrap();
        let g = bound_growth(&s);
        assert!((g.value - 1.0).abs() < 1e-15 && g.passed);
        assert!(remainder_first_order(&s).value <= 0.0);

        let cc = c(0.9, 0.4);
        let nil = ODEProblem::poly(vec![Mat2::e21().scale(cc)], 1.0);
        let s = solve(&nil, Stepping::default()).unwrap();
        assert!((s.b.last().unwrap().norm() - (2.0 + cc.norm_sqr()).sqrt()).abs() < 1e-12);
        let end = s.b.last().unwrap().norm() / (SQRT_2 * s.int_abs.last().unwrap().exp());
        assert!(end < 1.0);
        assert!(bound_growth(&s).passed);
        for (b, ia) in s.b.iter().zip(&s.int_alpha) {
            assert!((*b - Mat2::identity() - *ia).norm() < 1e-12);
        }
    }

    #[test]
    fn comparison_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let p = ODEProblem::random_poly(&mut rng, 4, 0.5, 1.0);
        let r = compare_solutions(&p, &p, Stepping::default()).unwrap();
        assert_eq!(r.sup_diff, 0.0);
        assert!(r.measured < 1e-14 && r.bound == 0.0);

        let mut prev = None;
        for d in [1e-3, 2e-3] {
            let mut c1 = match &p.alpha {
                Coefficient::Poly(c) => c.clone(),
                _ => unreachable!(),
            };
            c1[0] = c1[0] + Mat2::e21().scale_re(d);
            let q = ODEProblem::poly(c1, 1.0);
            let r = compare_solutions(&p, &q, Stepping::default()).unwrap();
            assert!(r.bound_holds(1e-10) && r.distance_holds(1e-10));
            assert!(r.identity_residual < 1e-9);
            if let Some(m) = prev {
                let ratio: f64 = r.measured / m;
                assert!((ratio - 2.0).abs() < 0.01, "{ratio}");
            }
            prev = Some(r.measured);
        }
    }

    #[test]
    fn path_coefficient_matches_integrate_sl2() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let w = WData::random(&mut rng);
        let path = Path::new(vec![c(0.0, 0.0), c(0.4, 0.2), c(0.1, 0.7)]).unwrap();
        let s = solve(&ODEProblem::along_path(&w, &path), Stepping::default()).unwrap();
        let b = integrate_sl2(&w, &path, &Sl2::identity(), Stepping::default()).unwrap().end();
        assert!((*s.b.last().unwrap() - b).norm() < 1e-8);
    }
}
