//! The Key-Lemma pass over the sectors of a labyrinth, the outer iteration
//! with its `ε`, `s` schedule and norm budget, intrinsic radii by Dijkstra
//! on a polar grid, and the plane-distance diagnostics.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::f64::consts::{PI, SQRT_2};

use log::{debug, info};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{
    align_su2, dist_h3, dist_to_plane, perpendicular_foot, plane_angle, AlgebraError, GeodesicPlane, H3Point, HermPoint, Mat2, Sl2,
};
use crate::deformation::{deform, DeformationError, DeformationParams, DeformationReport, Policy};
use crate::grid::PolarGrid;
use crate::holo::HoloExpr;
use crate::integrator::{grid_solve, integrate_c3, integrate_sl2, GridSolveOptions, IntegrationError, Path, Stepping, Target};
use crate::labyrinth::{Labyrinth, LabyrinthError, SectorSets};
use crate::weierstrass::{phi_to_psi, PhiVector, WData, WeierstrassError};

const C0: Complex64 = Complex64::new(0.0, 0.0);
/// Relative rounding allowance before a radius drop counts as a regression.
const RADIUS_RTOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ConstructionError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("geodesic radius decreased from {before} to {after}")]
    RadiusRegression { before: f64, after: f64, dump: String },
    #[error("{p} is not in the sector set of sector {j}")]
    OutsideSector { p: Complex64, j: u32 },
    #[error("grid graph is disconnected")]
    Disconnected,
    #[error("stage {n} failed: {source}")]
    Stage { n: u32, trace: Vec<StageReport>, source: Box<ConstructionError> },
    #[error(transparent)]
    Deformation(#[from] DeformationError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
    #[error(transparent)]
    Labyrinth(#[from] LabyrinthError),
    #[error(transparent)]
    Data(#[from] WeierstrassError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

// ---------------------------------------------------------------------------
// initial surface

/// The horosphere piece `g ≡ 0`, `η ≡ c`.
#[derive(Debug, Clone)]
pub struct Horosphere {
    pub wdata: WData,
    pub c: f64,
    /// Intrinsic radius of the unit disc, `c/2`.
    pub rho0: f64,
    /// `max |B|` on the closed disc, `√(2 + c²/2)`.
    pub tau0: f64,
}

impl Horosphere {
    /// `B(z) = id + (cz/√2) E₂₁`.
    pub fn b(&self, z: Complex64) -> Mat2 {
        Mat2::new(Complex64::new(1.0, 0.0), C0, z * (self.c / SQRT_2), Complex64::new(1.0, 0.0))
    }
}

pub fn initial_horosphere(c: f64) -> Result<Horosphere, ConstructionError> {
    if !(c > 0.0) || !c.is_finite() {
        return Err(ConstructionError::InvalidParams(format!("horosphere needs c > 0, got {c}")));
    }
    Ok(Horosphere {
        wdata: WData::new(HoloExpr::zero(), HoloExpr::constant(Complex64::new(c, 0.0))),
        c,
        rho0: c / 2.0,
        tau0: (2.0 + c * c / 2.0).sqrt(),
    })
}

// ---------------------------------------------------------------------------
// intrinsic distances

#[derive(Debug, Clone, Copy, PartialEq)]
struct Key(f64);

impl Eq for Key {}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Dijkstra distances from the centre node in the metric `ds = λ|dz|/√2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceField {
    pub grid: PolarGrid,
    pub dist: Vec<f64>,
}

impl DistanceField {
    /// Distance from the centre to the boundary circle.
    pub fn radius(&self) -> f64 {
        self.grid.boundary().map(|i| self.dist[i]).fold(f64::INFINITY, f64::min)
    }

    fn ring_value(&self, ring: usize, theta: f64) -> f64 {
        let a = self.grid.angular as f64;
        let x = theta.rem_euclid(2.0 * PI) / (2.0 * PI) * a;
        let k = x.floor() as usize;
        let t = x - k as f64;
        let d0 = self.dist[self.grid.index(ring, k)];
        let d1 = self.dist[self.grid.index(ring, k + 1)];
        (1.0 - t) * d0 + t * d1
    }

    /// Bilinear interpolation in `(r, θ)`.
    pub fn interpolate(&self, z: Complex64) -> f64 {
        let r = z.norm().min(1.0) * self.grid.radial as f64;
        let theta = z.arg();
        if r < 1.0 {
            return (1.0 - r) * self.dist[0] + r * self.ring_value(1, theta);
        }
        let i = (r.floor() as usize).clamp(1, self.grid.radial.max(2) - 1).min(self.grid.radial);
        if self.grid.radial == 1 {
            return self.ring_value(1, theta);
        }
        let t = (r - i as f64).clamp(0.0, 1.0);
        (1.0 - t) * self.ring_value(i, theta) + t * self.ring_value(i + 1, theta)
    }

    /// Nodes with distance `≥ r` adjacent to a node with distance `< r`.
    pub fn ball_boundary(&self, r: f64) -> Vec<usize> {
        let mut mark = vec![false; self.dist.len()];
        for (a, b) in self.grid.edges() {
            let (da, db) = (self.dist[a], self.dist[b]);
            if da >= r && db < r {
                mark[a] = true;
            }
            if db >= r && da < r {
                mark[b] = true;
            }
        }
        (0..mark.len()).filter(|&i| mark[i]).collect()
    }
}

pub fn geodesic_distances(w: &WData, grid: &PolarGrid) -> Result<DistanceField, ConstructionError> {
    let edges = grid.edges();
    let weights: Vec<f64> = edges
        .par_iter()
        .map_init(
            || w.evaluator(),
            |ev, &(a, b)| -> Result<f64, WeierstrassError> {
                let (za, zb) = (grid.point(a), grid.point(b));
                Ok(ev.lambda(0.5 * (za + zb))? / SQRT_2 * (zb - za).norm())
            },
        )
        .collect::<Result<_, _>>()?;
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); grid.len()];
    for (&(a, b), &wt) in edges.iter().zip(&weights) {
        adj[a].push((b, wt));
        adj[b].push((a, wt));
    }
    let mut dist = vec![f64::INFINITY; grid.len()];
    let mut heap = BinaryHeap::new();
    dist[0] = 0.0;
    heap.push(Reverse((Key(0.0), 0usize)));
    while let Some(Reverse((Key(d), u))) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, wt) in &adj[u] {
            let nd = d + wt;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Reverse((Key(nd), v)));
            }
        }
    }
    if dist.iter().any(|d| !d.is_finite()) {
        return Err(ConstructionError::Disconnected);
    }
    Ok(DistanceField { grid: *grid, dist })
}

/// Intrinsic distance from `0` to `|z| = 1`.
pub fn geodesic_radius(w: &WData, grid: &PolarGrid) -> Result<f64, ConstructionError> {
    Ok(geodesic_distances(w, grid)?.radius())
}

// ---------------------------------------------------------------------------
// evaluation helpers

/// `B(z)` with `B(0) = id`, integrated along the segment from the origin.
pub fn b_at(w: &WData, z: Complex64) -> Result<Mat2, ConstructionError> {
    if z == C0 {
        return Ok(*Sl2::identity().matrix());
    }
    Ok(integrate_sl2(w, &Path::segment(C0, z)?, &Sl2::identity(), Stepping::default())?.end())
}

/// `max |B|` over a polar grid.
pub fn sup_norm(w: &WData, grid: &PolarGrid) -> Result<f64, ConstructionError> {
    let opts = GridSolveOptions { loop_tol: f64::INFINITY, ..GridSolveOptions::default() };
    let field = grid_solve(w, grid, Target::Sl2, &Sl2::identity(), &opts)?;
    Ok(field.sl2().unwrap_or(&[]).iter().map(|m| m.norm()).fold(0.0, f64::max))
}

fn h3_of(m: &Mat2) -> Result<H3Point, AlgebraError> {
    H3Point::normalize(HermPoint::from_hermitian(&(*m * m.adjoint())))
}

fn psi_matrix_of(f: &[Complex64; 3]) -> Mat2 {
    phi_to_psi(&PhiVector(*f)).0
}

fn mat_max_diff(a: &Mat2, b: &Mat2) -> f64 {
    (*a - *b).norm()
}

// ---------------------------------------------------------------------------
// Key-Lemma pass

/// What runs in place of the deformation step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum DeformMode {
    #[default]
    Runge,
    /// Leaves `ψ` unchanged (test hook).
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassOptions {
    pub radius_grid: PolarGrid,
    pub norm_grid: PolarGrid,
    pub seed: u64,
    pub mode: DeformMode,
    pub degree_cap: usize,
    pub omega_samples: usize,
    pub off_samples: usize,
    pub audit_samples: usize,
    /// Points per sector checked for `ψ_j = a* ψ̃ a` and the surface shift.
    pub check_samples: usize,
    /// Candidate points of `ϖ_j` scanned for `∂D_g`.
    pub boundary_candidates: usize,
    /// Cap on `∂D_g` points used for the norm factor.
    pub boundary_cap: usize,
}

impl Default for PassOptions {
    fn default() -> Self {
        let d = DeformationParams::new(8, 1, 1.0);
        PassOptions {
            radius_grid: PolarGrid::default(),
            norm_grid: PolarGrid::new(64, 128),
            seed: 0,
            mode: DeformMode::Runge,
            degree_cap: d.degree_cap,
            omega_samples: d.omega_samples,
            off_samples: d.off_samples,
            audit_samples: d.audit_samples,
            check_samples: 24,
            boundary_candidates: 1500,
            boundary_cap: 256,
        }
    }
}

/// One sector step `B_{j-1} → B_j`.
#[derive(Debug, Clone)]
pub struct KeyLemmaState {
    pub j: u32,
    pub zeta: Complex64,
    /// Aligns `h(0)` with the `x₀x₃`-plane.
    pub a: Sl2,
    pub b_prev_at_zeta: Mat2,
    /// Data of `ψ = H⁻¹H' = a ψ_{j-1} a*`.
    pub h_data: WData,
    /// Deformed data `ψ̃`.
    pub h_tilde_data: WData,
    /// Data of `ψ_j = a* ψ̃ a`.
    pub wdata: WData,
    pub h_tilde_at_zero: Mat2,
    pub deformation: Option<DeformationReport>,
    /// `|B_j(0) - id|` with `H̃(0)` taken along two different paths.
    pub basepoint_residual: f64,
    /// `|B_j(ζ_j) - a* H̃(0)⁻¹ a|` relative, with `B_j(ζ_j)` integrated from `0`.
    pub zeta_residual: f64,
    /// `max |ψ_j - a* ψ̃ a| / |ψ_j|` over check samples.
    pub conjugation_residual: f64,
    /// `max dist(β_j(z), β_{j-1}(z))` over check samples off `ϖ_j`.
    pub surface_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectorSummary {
    pub j: u32,
    pub tilt: f64,
    pub u3_abs: f64,
    pub range_violation: f64,
    pub sup_off: f64,
    pub min_on_omega: f64,
    pub min_on_varpi: f64,
    pub amplification: f64,
    pub degree: usize,
    pub kappa: f64,
    pub basepoint_residual: f64,
    pub zeta_residual: f64,
    pub conjugation_residual: f64,
    pub surface_shift: f64,
}

/// Measured outcomes of a pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassDiagnostics {
    pub n: u32,
    pub s: f64,
    pub eps: f64,
    pub radius_before: f64,
    pub radius_after: f64,
    /// `ρ + s`.
    pub radius_target: f64,
    pub radius_target_met: bool,
    /// Radius of the ball `D_g` used for `∂D_g`: `min(ρ + s, radius_after)`.
    pub ball_radius: f64,
    /// `max |B_0|` on the closed disc.
    pub sup_norm_before: f64,
    pub sup_norm_after: f64,
    /// `max |B_2N|` on `∂D_g`.
    pub boundary_norm_after: f64,
    /// `boundary_norm_after / sup_norm_before`.
    pub factor: f64,
    /// `factor² - 1 - 2s²`.
    pub slack: f64,
    /// `slack · √N`.
    pub fitted_b: f64,
    pub closeness_target: f64,
    pub max_sup_off: f64,
    pub closeness_met_all: bool,
    pub amplification_met_all: bool,
    pub min_floor_omega: f64,
    pub min_floor_varpi: f64,
    pub max_basepoint_residual: f64,
    pub max_zeta_residual: f64,
    pub max_conjugation_residual: f64,
    pub sectors: Vec<SectorSummary>,
}

impl PassDiagnostics {
    /// `max(slack, 0)`.
    pub fn positive_slack(&self) -> f64 {
        self.slack.max(0.0)
    }
}

/// Empirical stand-ins for the unnamed constants of one pass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredConstants {
    pub n: u32,
    pub s: f64,
    pub eps: f64,
    pub b: f64,
    /// `C` with `|ψ_j| ≥ C N^3.5` on `ω_j` and `≥ C N^-0.5` on `ϖ_j`.
    pub c: f64,
    /// `max dist(β_j, β_{j-1}) / (ε/(2N²))` off `ϖ_j`.
    pub c1: f64,
}

#[derive(Debug, Clone)]
pub struct KeyLemmaPass {
    pub n: u32,
    pub s: f64,
    pub eps: f64,
    pub labyrinth: Labyrinth,
    pub initial: WData,
    pub data: WData,
    pub states: Vec<KeyLemmaState>,
    pub distances_after: DistanceField,
    pub diagnostics: PassDiagnostics,
}

impl KeyLemmaPass {
    pub fn constants(&self) -> MeasuredConstants {
        let d = &self.diagnostics;
        let nf = self.n as f64;
        let c = d
            .sectors
            .iter()
            .map(|s| (s.min_on_omega / nf.powf(3.5)).min(s.min_on_varpi * nf.sqrt()))
            .fold(f64::INFINITY, f64::min);
        let shift = d.sectors.iter().map(|s| s.surface_shift).fold(0.0, f64::max);
        MeasuredConstants { n: self.n, s: self.s, eps: self.eps, b: d.fitted_b, c, c1: shift / d.closeness_target }
    }

    pub fn state(&self, j: u32) -> Option<&KeyLemmaState> {
        self.states.get(j.checked_sub(1)? as usize)
    }

    /// Points of `∂D_g ∩ ϖ_j`: candidates from `ϖ_j` whose interpolated
    /// intrinsic distance is within one radial cell of the ball radius. When
    /// none qualifies the candidate closest to `∂D_g` is returned.
    pub fn boundary_points(&self, j: u32, candidates: usize, seed: u64) -> Result<Vec<Complex64>, ConstructionError> {
        let sector = self.labyrinth.sector(j)?;
        let field = &self.distances_after;
        let grid = field.grid;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (j as u64).wrapping_mul(0x2545_f491_4f6c_dd1d));
        let mut pts: Vec<Complex64> = sector.sample_varpi(&mut rng, candidates).into_iter().filter(|z| z.norm() <= 1.0).collect();
        pts.extend((0..grid.len()).map(|i| grid.point(i)).filter(|&z| sector.in_varpi(z)));
        let r = self.diagnostics.ball_radius;
        let mut ev = self.data.evaluator();
        let mut scored = Vec::with_capacity(pts.len());
        for z in pts {
            let cell = ev.lambda(z)? / SQRT_2 / grid.radial as f64;
            scored.push((z, (field.interpolate(z) - r).abs(), cell));
        }
        let hits: Vec<Complex64> = scored.iter().filter(|(_, d, cell)| d <= cell).map(|(z, _, _)| *z).collect();
        if !hits.is_empty() {
            return Ok(hits);
        }
        Ok(scored.iter().min_by(|a, b| a.1.total_cmp(&b.1)).map(|(z, _, _)| vec![*z]).unwrap_or_default())
    }
}

fn validate_pass(eps: f64, s: f64, n: u32, lab: &Labyrinth) -> Result<(), ConstructionError> {
    let bad = |m: String| Err(ConstructionError::InvalidParams(m));
    if !(eps > 0.0) {
        return bad(format!("ε must be positive, got {eps}"));
    }
    if !(s > 0.0 && s < 0.125) {
        return bad(format!("s must lie in (0, 1/8), got {s}"));
    }
    if lab.n() != n {
        return bad(format!("labyrinth built for N = {}, pass asked for N = {n}", lab.n()));
    }
    Ok(())
}

fn check_points(sector: &SectorSets, count: usize, seed: u64) -> Vec<Complex64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let z = Complex64::from_polar(rng.gen::<f64>().sqrt(), rng.gen_range(0.0..2.0 * PI));
        if !sector.in_varpi(z) {
            out.push(z);
        }
    }
    out
}

fn sector_step(
    prev: &WData,
    j: u32,
    eps: f64,
    n: u32,
    lab: &Labyrinth,
    opts: &PassOptions,
) -> Result<KeyLemmaState, ConstructionError> {
    let sector = lab.sector(j)?;
    let zeta = sector.zeta;
    let b_zeta = b_at(prev, zeta)?;
    // h(0) = a B(ζ)⁻¹ B(ζ)⁻* a*
    let b_zeta_inv = Sl2::with_tolerance(b_zeta, 1e-6)?.inverse();
    let a = align_su2(&h3_of(b_zeta_inv.matrix())?);
    let a_star = a.adjoint();
    let h_data = prev.conjugate(&a);

    let (h_tilde_data, deformation) = match opts.mode {
        DeformMode::Identity => (h_data.clone(), None),
        DeformMode::Runge => {
            let mut p = DeformationParams::new(n, j, eps);
            p.degree_cap = opts.degree_cap;
            p.omega_samples = opts.omega_samples;
            p.off_samples = opts.off_samples;
            p.audit_samples = opts.audit_samples;
            p.seed = opts.seed.wrapping_add(j as u64);
            p.range_policy = Policy::BestEffort;
            p.fit_policy = Policy::BestEffort;
            let r = deform(&h_data, &p, lab)?;
            let rep = r.report();
            (r.wdata, Some(rep))
        }
    };
    let wdata = h_tilde_data.conjugate(&a_star).with_basepoint(prev.basepoint());

    // H̃ with H̃(ζ) = id, at 0 along two paths
    let id = Sl2::identity();
    let straight = integrate_sl2(&h_tilde_data, &Path::segment(zeta, C0)?, &id, Stepping::default())?.end();
    let bent_path = Path::new(vec![zeta, zeta * Complex64::new(0.5, 0.5), C0])?;
    let bent = integrate_sl2(&h_tilde_data, &bent_path, &id, Stepping::default())?.end();
    let h0_inv = Sl2::with_tolerance(straight, 1e-6)?.inverse();
    let at_zero = *a_star.matrix() * *h0_inv.matrix() * bent * *a.matrix();
    let basepoint_residual = mat_max_diff(&at_zero, id.matrix());

    let direct = b_at(&wdata, zeta)?;
    let formula = *a_star.matrix() * *h0_inv.matrix() * *a.matrix();
    let zeta_residual = mat_max_diff(&direct, &formula) / formula.norm();

    let pts = check_points(&sector, opts.check_samples, opts.seed ^ 0x5eed ^ j as u64);
    let mut conjugation_residual: f64 = 0.0;
    let mut surface_shift: f64 = 0.0;
    let (mut ev_j, mut ev_t) = (wdata.evaluator(), h_tilde_data.evaluator());
    for &z in &pts {
        let psi_j = ev_j.psi(z)?.0;
        let conj = *a_star.matrix() * ev_t.psi(z)?.0 * *a.matrix();
        conjugation_residual = conjugation_residual.max(mat_max_diff(&psi_j, &conj) / psi_j.norm().max(1e-300));
    }
    if deformation.is_some() {
        for &z in pts.iter().take(opts.check_samples.min(8)) {
            let d = dist_h3(&h3_of(&b_at(&wdata, z)?)?, &h3_of(&b_at(prev, z)?)?);
            surface_shift = surface_shift.max(d);
        }
    }

    Ok(KeyLemmaState {
        j,
        zeta,
        a,
        b_prev_at_zeta: b_zeta,
        h_data,
        h_tilde_data,
        wdata,
        h_tilde_at_zero: straight,
        deformation,
        basepoint_residual,
        zeta_residual,
        conjugation_residual,
        surface_shift,
    })
}

/// One pass `B_0 → B_1 → … → B_2N` over all sectors.
pub fn key_lemma_pass(
    w0: &WData,
    eps: f64,
    s: f64,
    n: u32,
    lab: &Labyrinth,
    opts: &PassOptions,
) -> Result<KeyLemmaPass, ConstructionError> {
    validate_pass(eps, s, n, lab)?;
    let before = geodesic_distances(w0, &opts.radius_grid)?;
    let radius_before = before.radius();
    let sup_norm_before = sup_norm(w0, &opts.norm_grid)?;

    let mut states: Vec<KeyLemmaState> = Vec::with_capacity(2 * n as usize);
    let mut current = w0.clone();
    for j in 1..=2 * n {
        let st = sector_step(&current, j, eps, n, lab, opts)?;
        debug!(
            "N={n} sector {j}: sup off {:.3e}, basepoint {:.2e}",
            st.deformation.as_ref().map_or(0.0, |d| d.sup_off),
            st.basepoint_residual
        );
        current = st.wdata.clone();
        states.push(st);
    }

    let after = geodesic_distances(&current, &opts.radius_grid)?;
    let radius_after = after.radius();
    if radius_after < radius_before * (1.0 - RADIUS_RTOL) {
        return Err(ConstructionError::RadiusRegression { before: radius_before, after: radius_after, dump: current.to_json() });
    }
    let radius_target = radius_before + s;
    let ball_radius = radius_target.min(radius_after);
    let sup_norm_after = sup_norm(&current, &opts.norm_grid)?;

    // |B_2N| on ∂D_g
    let mut bnodes = after.ball_boundary(ball_radius);
    if bnodes.len() > opts.boundary_cap {
        let stride = bnodes.len().div_ceil(opts.boundary_cap);
        bnodes = bnodes.into_iter().step_by(stride).collect();
    }
    let grid = opts.radius_grid;
    let boundary_norm_after = bnodes
        .par_iter()
        .map(|&i| b_at(&current, grid.point(i)).map(|m| m.norm()))
        .try_reduce(|| 0.0, |x, y| Ok(x.max(y)))?;
    let factor = boundary_norm_after / sup_norm_before;
    let slack = factor * factor - 1.0 - 2.0 * s * s;

    let closeness_target = eps / (2.0 * (n as f64).powi(2));
    let sectors: Vec<SectorSummary> = states
        .iter()
        .map(|st| {
            let d = st.deformation.as_ref();
            SectorSummary {
                j: st.j,
                tilt: d.map_or(0.0, |d| d.tilt),
                u3_abs: d.map_or(1.0, |d| d.u3_abs),
                range_violation: d.map_or(0.0, |d| d.range.violation),
                sup_off: d.map_or(0.0, |d| d.sup_off),
                min_on_omega: d.map_or(f64::NAN, |d| d.min_on_omega),
                min_on_varpi: d.map_or(f64::NAN, |d| d.min_on_varpi),
                amplification: d.map_or(1.0, |d| d.amplification),
                degree: d.map_or(0, |d| d.degree),
                kappa: d.map_or(1.0, |d| d.kappa),
                basepoint_residual: st.basepoint_residual,
                zeta_residual: st.zeta_residual,
                conjugation_residual: st.conjugation_residual,
                surface_shift: st.surface_shift,
            }
        })
        .collect();
    let fmax = |f: fn(&SectorSummary) -> f64| sectors.iter().map(f).fold(0.0, f64::max);
    let fmin = |f: fn(&SectorSummary) -> f64| sectors.iter().map(f).fold(f64::INFINITY, f64::min);
    let diagnostics = PassDiagnostics {
        n,
        s,
        eps,
        radius_before,
        radius_after,
        radius_target,
        radius_target_met: radius_after >= radius_target,
        ball_radius,
        sup_norm_before,
        sup_norm_after,
        boundary_norm_after,
        factor,
        slack,
        fitted_b: slack * (n as f64).sqrt(),
        closeness_target,
        max_sup_off: fmax(|s| s.sup_off),
        closeness_met_all: sectors.iter().all(|s| s.sup_off < closeness_target),
        amplification_met_all: states.iter().all(|s| s.deformation.as_ref().is_some_and(|d| d.amplification_met)),
        min_floor_omega: fmin(|s| s.min_on_omega),
        min_floor_varpi: fmin(|s| s.min_on_varpi),
        max_basepoint_residual: fmax(|s| s.basepoint_residual),
        max_zeta_residual: fmax(|s| s.zeta_residual),
        max_conjugation_residual: fmax(|s| s.conjugation_residual),
        sectors,
    };
    info!(
        "pass N={n}: radius {radius_before:.6} -> {radius_after:.6}, factor {factor:.6}, slack {slack:.3e}"
    );
    Ok(KeyLemmaPass {
        n,
        s,
        eps,
        labyrinth: lab.clone(),
        initial: w0.clone(),
        data: current,
        states,
        distances_after: after,
        diagnostics,
    })
}

// ---------------------------------------------------------------------------
// plane-distance diagnostics

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneDiagnostics {
    pub j: u32,
    pub p: Complex64,
    /// `Π_j` through `β_j(ζ_j)` perpendicular to `o β_j(ζ_j)`.
    pub plane: GeodesicPlane,
    pub beta_p: H3Point,
    pub beta_zeta: H3Point,
    /// Foot of the perpendicular from `β_j(p)` to `Π_j`.
    pub q: H3Point,
    /// Foot of the perpendicular from `h(0)` to the geodesic `o h̃(0)`.
    pub v: H3Point,
    /// Closest point of `Π = {x₃ = 0}` to `h̃(p)`.
    pub w: H3Point,
    /// `dist(β_j(p), Π_j)`.
    pub distance: f64,
    /// `dist(h̃(p), Π̃)`; equals `distance` up to the isometry.
    pub distance_tilde: f64,
    /// `dist(h̃(p), Π)`.
    pub distance_to_pi: f64,
    /// Angle at `o` between `o h(0)` and `o v`.
    pub theta: f64,
    /// Angle between `Π` and `Π̃`.
    pub plane_angle: f64,
    /// `|sin Θ - sinh dist(h(0), v) / sinh dist(o, h(0))|`.
    pub sine_law_residual: f64,
    pub delta_h: f64,
    pub delta_h_tilde: f64,
    /// `|δ|` in `h̃(p) = id + F̃ + F̃* - F - F* + δ`.
    pub delta: f64,
    pub f_norm: f64,
    pub f_tilde_norm: f64,
    /// Angle between the `x₁x₂`-plane and `f̃(p) - f(p)`.
    pub f_angle: f64,
    /// `14 s²`.
    pub bound_quadratic: f64,
    /// `(distance - 14 s²) · √N`.
    pub fitted_c4: f64,
    pub path_length: f64,
}

/// The foot of the perpendicular from `x` to the geodesic through `o` with
/// unit spatial direction `dir`.
fn foot_on_geodesic_through_origin(x: &H3Point, dir: [f64; 3]) -> Result<H3Point, AlgebraError> {
    let c = x.coords();
    let s = c.x1 * dir[0] + c.x2 * dir[1] + c.x3 * dir[2];
    H3Point::normalize(HermPoint::new(c.x0, s * dir[0], s * dir[1], s * dir[2]))
}

fn unit(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        [0.0, 0.0, 1.0]
    } else {
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

fn angle_between(a: [f64; 3], b: [f64; 3]) -> f64 {
    let (a, b) = (unit(a), unit(b));
    (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]).clamp(-1.0, 1.0).acos()
}

/// Exit points of `ϖ_j` reached from `p` by straight moves in eight
/// directions, nearest first, each pushed just outside.
fn exit_points(sector: &SectorSets, p: Complex64) -> Vec<(f64, Complex64)> {
    let lab = sector.labyrinth();
    let d = lab.delta();
    let reach = 1.0 / lab.n() as f64;
    let step = 0.25 * d;
    let radial = if p.norm() > 0.0 { p / p.norm() } else { Complex64::new(1.0, 0.0) };
    let mut out = Vec::new();
    for k in 0..8 {
        let u = radial * Complex64::from_polar(1.0, k as f64 * PI / 4.0);
        let mut t = step;
        while t <= reach && sector.in_varpi(p + u * t) {
            t += step;
        }
        if t > reach || (p + u * t).norm() > 1.0 {
            continue;
        }
        let (mut lo, mut hi) = (t - step, t);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if sector.in_varpi(p + u * mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push((hi, p + u * hi));
    }
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

fn arc(r: f64, a0: f64, a1: f64) -> Vec<Complex64> {
    let pieces = (((a1 - a0).abs() / (PI / 720.0)).ceil() as usize).max(1);
    (0..=pieces).map(|k| Complex64::from_polar(r, a0 + (a1 - a0) * k as f64 / pieces as f64)).collect()
}

fn polyline_clear(sector: &SectorSets, v: &[Complex64]) -> bool {
    let d = sector.labyrinth().delta();
    let h = d / 8.0;
    v.windows(2).all(|w| {
        let n = ((w[1] - w[0]).norm() / h).ceil().max(1.0) as usize;
        (0..=n).all(|k| sector.dist_to_omega(w[0] + (w[1] - w[0]) * (k as f64 / n as f64)) >= d - 1e-12)
    })
}

/// Route around the comb of `ω_j`: along `|z| = |ζ_j|` past the angular
/// span of the sector's components, radially out to `|to|`, then back along
/// that circle (a corridor when `to` is outside `ϖ_j`).
fn comb_route(sector: &SectorSets, to: Complex64) -> Option<Vec<Complex64>> {
    let lab = sector.labyrinth();
    let ray = lab.ray_angle(sector.j);
    let wrap = |a: f64| (a - ray + PI).rem_euclid(2.0 * PI) - PI;
    let half = sector
        .components
        .iter()
        .map(|c| {
            let (a0, a1) = lab.slot_bounds(*c);
            wrap(a0).abs().max(wrap(a1).abs())
        })
        .fold(0.0, f64::max);
    let r0 = sector.zeta.norm();
    let r1 = to.norm();
    let target = ray + wrap(to.arg());
    for side in [1.0, -1.0] {
        let side_angle = ray + side * (half + 4.0 * lab.delta() / r0.min(r1));
        let mut v = arc(r0, ray, side_angle);
        v.extend(arc(r1, side_angle, target));
        v.push(to);
        v.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
        if polyline_clear(sector, &v) {
            return Some(v);
        }
    }
    None
}

/// `γ`: a path from `ζ_j` to an exit point of `ϖ_j` outside `ϖ_j`, then
/// straight to `p`.
fn gamma_path(sector: &SectorSets, p: Complex64) -> Result<Vec<Complex64>, ConstructionError> {
    let exits = exit_points(sector, p);
    let finish = |mut v: Vec<Complex64>| {
        v.push(p);
        v.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
        v
    };
    for &(_, pbar) in &exits {
        if let Ok(lp) = sector.avoid_path(sector.zeta, pbar) {
            return Ok(finish(lp.vertices));
        }
    }
    for &(_, pbar) in &exits {
        if let Some(v) = comb_route(sector, pbar) {
            return Ok(finish(v));
        }
    }
    Err(LabyrinthError::NoPath { from: sector.zeta, to: p }.into())
}

/// Plane-distance diagnostics for `p ∈ ϖ_j` after a pass.
pub fn measure_plane_distance(pass: &KeyLemmaPass, p: Complex64, j: u32) -> Result<PlaneDiagnostics, ConstructionError> {
    let sector = pass.labyrinth.sector(j)?;
    if !sector.in_varpi(p) || p.norm() > 1.0 {
        return Err(ConstructionError::OutsideSector { p, j });
    }
    let st = pass.state(j).ok_or(ConstructionError::OutsideSector { p, j })?;
    let zeta = st.zeta;

    // Π_j and the foot q
    let beta_p = h3_of(&b_at(&st.wdata, p)?)?;
    let beta_zeta = h3_of(&b_at(&st.wdata, zeta)?)?;
    let o = H3Point::origin();
    let plane = GeodesicPlane::orthogonal_to_geodesic(&o, &beta_zeta)?;
    let q = perpendicular_foot(&beta_p, &plane);
    let distance = dist_h3(&beta_p, &q);

    // step 1: integrals along γ from ζ_j through the complement of ϖ_j
    let verts = gamma_path(&sector, p)?;
    let path_length = verts.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    let id = Sl2::identity();
    let (h_p, ht_p, f_p, ft_p) = if verts.len() < 2 {
        (*id.matrix(), *id.matrix(), Mat2::new(C0, C0, C0, C0), Mat2::new(C0, C0, C0, C0))
    } else {
        let gamma = Path::new(verts)?;
        let h_p = integrate_sl2(&st.h_data, &gamma, &id, Stepping::default())?.end();
        let ht_p = integrate_sl2(&st.h_tilde_data, &gamma, &id, Stepping::default())?.end();
        let f_p = psi_matrix_of(&integrate_c3(&st.h_data, &gamma, [C0; 3], Stepping::default())?.end());
        let ft_p = psi_matrix_of(&integrate_c3(&st.h_tilde_data, &gamma, [C0; 3], Stepping::default())?.end());
        (h_p, ht_p, f_p, ft_p)
    };
    let idm = *id.matrix();
    let delta_h = (h_p - idm - f_p).norm();
    let delta_h_tilde = (ht_p - idm - ft_p).norm();
    let ht_herm = ht_p * ht_p.adjoint();
    let approx = idm + ft_p + ft_p.adjoint() - f_p - f_p.adjoint();
    let delta = (ht_herm - approx).norm();
    let f = f_p + f_p.adjoint();
    let ft = ft_p + ft_p.adjoint();
    let diff = HermPoint::from_hermitian(&(ft - f)).spatial();
    let dn = (diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]).sqrt();
    let f_angle = if dn == 0.0 { 0.0 } else { (diff[2].abs() / dn).asin() };
    let h_tilde_p = H3Point::normalize(HermPoint::from_hermitian(&ht_herm))?;
    let pi = GeodesicPlane::x3_zero();
    let w = perpendicular_foot(&h_tilde_p, &pi);
    let distance_to_pi = dist_to_plane(&h_tilde_p, &pi);

    // step 2: Θ between Π and Π̃
    let h0 = {
        let m = *st.a.matrix() * *Sl2::with_tolerance(st.b_prev_at_zeta, 1e-6)?.inverse().matrix() * *st.a.adjoint().matrix();
        h3_of(&m)?
    };
    let ht0 = h3_of(&st.h_tilde_at_zero)?;
    let pi_tilde = GeodesicPlane::orthogonal_to_geodesic(&ht0, &o)?;
    let distance_tilde = dist_to_plane(&h_tilde_p, &pi_tilde);
    let dir = unit(ht0.coords().spatial());
    let v = foot_on_geodesic_through_origin(&h0, dir)?;
    let h0_dir = h0.coords().spatial();
    let theta_raw = angle_between(h0_dir, dir);
    let theta = theta_raw.min(PI - theta_raw);
    let d_o_h0 = dist_h3(&o, &h0);
    let sine_law_residual = if d_o_h0 > 0.0 { (theta.sin() - dist_h3(&h0, &v).sinh() / d_o_h0.sinh()).abs() } else { 0.0 };
    let plane_angle = plane_angle(&pi, &pi_tilde, &o)?;

    let s = pass.s;
    let bound_quadratic = 14.0 * s * s;
    Ok(PlaneDiagnostics {
        j,
        p,
        plane,
        beta_p,
        beta_zeta,
        q,
        v,
        w,
        distance,
        distance_tilde,
        distance_to_pi,
        theta,
        plane_angle,
        sine_law_residual,
        delta_h,
        delta_h_tilde,
        delta,
        f_norm: f.norm(),
        f_tilde_norm: ft.norm(),
        f_angle,
        bound_quadratic,
        fitted_c4: (distance - bound_quadratic) * (pass.n as f64).sqrt(),
        path_length,
    })
}

/// Plane diagnostics at every sampled `p ∈ ∂D_g ∩ ϖ_j` for all sectors, and
/// the fitted `c₄` (largest over the samples).
pub fn plane_distance_survey(pass: &KeyLemmaPass, per_sector: usize, seed: u64) -> Result<(Vec<PlaneDiagnostics>, f64), ConstructionError> {
    let mut out = Vec::new();
    for j in 1..=2 * pass.n {
        let pts = pass.boundary_points(j, 400, seed)?;
        let stride = pts.len().div_ceil(per_sector.max(1)).max(1);
        for p in pts.into_iter().step_by(stride) {
            out.push(measure_plane_distance(pass, p, j)?);
        }
    }
    let c4 = out.iter().map(|d| d.fitted_c4).fold(f64::NEG_INFINITY, f64::max);
    Ok((out, c4))
}

// ---------------------------------------------------------------------------
// outer iteration

/// `1 + 3/(k + k₀)²`.
pub fn budget_factor(k: u64, k0: u64) -> f64 {
    let m = (k + k0) as f64;
    1.0 + 3.0 / (m * m)
}

/// `∏_{k=1}^{n} (1 + 3/(k + k₀)²)` for `n = 1..=n_max`.
pub fn budget_partial_products(k0: u64, n_max: u64) -> Vec<f64> {
    let mut acc = 1.0;
    (1..=n_max)
        .map(|k| {
            acc *= budget_factor(k, k0);
            acc
        })
        .collect()
}

/// The infinite product `∏_{k≥1} (1 + 3/(k + k₀)²)`, from
/// `∏_{m≥1} (1 + a²/m²) = sinh(πa)/(πa)` with `a = √3`.
pub fn budget_limit(k0: u64) -> f64 {
    let a = 3f64.sqrt();
    let full = (PI * a).sinh() / (PI * a);
    let head: f64 = (1..=k0).map(|m| 1.0 + 3.0 / (m as f64).powi(2)).product();
    full / head
}

/// `sinh(2π)/(2π) = ∏_{k≥1} (1 + 4/k²)`, the cap on every budget product.
pub fn budget_cap() -> f64 {
    (2.0 * PI).sinh() / (2.0 * PI)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationParams {
    /// Horosphere constant of the initial surface.
    pub c: f64,
    /// Initial intrinsic radius.
    pub rho: f64,
    /// Initial sup norm.
    pub tau: f64,
    /// Upper cap on the scheduled `ε`.
    pub eps: f64,
    /// Upper cap on the scheduled `s`.
    pub s: f64,
    pub k0: u32,
    /// `N` used at stage `n` (the last entry repeats).
    pub n_schedule: Vec<u32>,
    pub n_max: u32,
    pub pass: PassOptions,
}

impl IterationParams {
    pub fn from_horosphere(c: f64, k0: u32, n_schedule: Vec<u32>, n_max: u32) -> Result<Self, ConstructionError> {
        let h = initial_horosphere(c)?;
        Ok(IterationParams {
            c,
            rho: h.rho0,
            tau: h.tau0,
            eps: 1.0,
            s: 0.124,
            k0,
            n_schedule,
            n_max,
            pass: PassOptions::default(),
        })
    }

    pub fn validate(&self) -> Result<(), ConstructionError> {
        let bad = |m: &str| Err(ConstructionError::InvalidParams(m.to_string()));
        if !(self.eps > 0.0) {
            return bad("ε must be positive");
        }
        if !(self.s > 0.0 && self.s < 0.125) {
            return bad("s must lie in (0, 1/8)");
        }
        if self.k0 < 8 {
            return bad("k₀ must be at least 8 so that s = 1/(n + k₀) < 1/8");
        }
        if self.n_schedule.is_empty() || self.n_schedule.iter().any(|&n| n < 4) {
            return bad("N schedule must be nonempty with every N ≥ 4");
        }
        if !(self.c > 0.0) {
            return bad("c must be positive");
        }
        Ok(())
    }

    pub fn big_n(&self, stage: u32) -> u32 {
        let i = (stage.max(1) - 1) as usize;
        self.n_schedule[i.min(self.n_schedule.len() - 1)]
    }

    /// `min(ε, 1/(n + k₀)²)`.
    pub fn eps_at(&self, stage: u32) -> f64 {
        self.eps.min(1.0 / ((stage + self.k0) as f64).powi(2))
    }

    /// `min(s, 1/(n + k₀))`.
    pub fn s_at(&self, stage: u32) -> f64 {
        self.s.min(1.0 / (stage + self.k0) as f64)
    }

    /// `ρ₀ + Σ_{k=1}^{n} 1/(k + k₀)`.
    pub fn rho_schedule(&self, stage: u32) -> f64 {
        self.rho + (1..=stage).map(|k| 1.0 / (k + self.k0) as f64).sum::<f64>()
    }

    /// `τ₀² ∏_{k=1}^{n} (1 + 3/(k + k₀)²)`.
    pub fn budget(&self, stage: u32) -> f64 {
        self.tau * self.tau * (1..=stage as u64).map(|k| budget_factor(k, self.k0 as u64)).product::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: u32,
    pub big_n: u32,
    pub eps: f64,
    pub s: f64,
    pub radius: f64,
    pub radius_schedule: f64,
    pub sup_norm: f64,
    /// `τ₀² ∏ (1 + 3/(k + k₀)²)`.
    pub budget: f64,
    /// `budget - sup_norm²`.
    pub headroom: f64,
    /// `sup_norm² / previous sup_norm²`.
    pub growth_factor: f64,
    pub budget_factor: f64,
    /// `growth_factor - budget_factor`.
    pub growth_slack: f64,
    pub pass: Option<PassDiagnostics>,
}

#[derive(Debug, Clone)]
pub struct Stage {
    pub report: StageReport,
    pub data: WData,
}

/// Runs `n_max` Key-Lemma passes from the horosphere.
pub fn main_iteration(params: &IterationParams) -> Result<Vec<Stage>, ConstructionError> {
    main_iteration_with(params, |_| {})
}

/// [`main_iteration`] calling `on_stage` with each stage report as soon as
/// the stage completes (stage 0 included).
pub fn main_iteration_with(params: &IterationParams, mut on_stage: impl FnMut(&StageReport)) -> Result<Vec<Stage>, ConstructionError> {
    params.validate()?;
    let h = initial_horosphere(params.c)?;
    let radius = geodesic_radius(&h.wdata, &params.pass.radius_grid)?;
    let sup0 = sup_norm(&h.wdata, &params.pass.norm_grid)?;
    let mut stages = vec![Stage {
        report: StageReport {
            stage: 0,
            big_n: 0,
            eps: 0.0,
            s: 0.0,
            radius,
            radius_schedule: params.rho,
            sup_norm: sup0,
            budget: params.budget(0),
            headroom: params.budget(0) - sup0 * sup0,
            growth_factor: 1.0,
            budget_factor: 1.0,
            growth_slack: 0.0,
            pass: None,
        },
        data: h.wdata,
    }];
    on_stage(&stages[0].report);
    for stage in 1..=params.n_max {
        let big_n = params.big_n(stage);
        let (eps, s) = (params.eps_at(stage), params.s_at(stage));
        let trace = || stages.iter().map(|s| s.report.clone()).collect::<Vec<_>>();
        let run = || -> Result<KeyLemmaPass, ConstructionError> {
            let lab = Labyrinth::build(big_n)?;
            let mut opts = params.pass.clone();
            opts.seed = opts.seed.wrapping_add(1000 * stage as u64);
            key_lemma_pass(&stages.last().unwrap().data, eps, s, big_n, &lab, &opts)
        };
        let pass = run().map_err(|e| ConstructionError::Stage { n: stage, trace: trace(), source: Box::new(e) })?;
        let prev = stages.last().unwrap().report.sup_norm;
        let sup = pass.diagnostics.sup_norm_after;
        let growth = (sup / prev).powi(2);
        let bf = budget_factor(stage as u64, params.k0 as u64);
        let budget = params.budget(stage);
        info!("stage {stage}: N={big_n} radius {:.6} sup {:.6} budget {:.6}", pass.diagnostics.radius_after, sup, budget);
        stages.push(Stage {
            report: StageReport {
                stage,
                big_n,
                eps,
                s,
                radius: pass.diagnostics.radius_after,
                radius_schedule: params.rho_schedule(stage),
                sup_norm: sup,
                budget,
                headroom: budget - sup * sup,
                growth_factor: growth,
                budget_factor: bf,
                growth_slack: growth - bf,
                pass: Some(pass.diagnostics.clone()),
            },
            data: pass.data,
        });
        on_stage(&stages.last().unwrap().report);
    }
    Ok(stages)
}
