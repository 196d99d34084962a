//! The birational map `T: C³ ⊃ {x₃ ≠ 0} → SL(2,C)`, left translation, and the
//! projections of null curves to `H³`, `L³`, `S³₁` and `C²`, with mesh export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{AlgebraError, HermPoint, Mat2, Sl2};
use crate::grid::PolarGrid;
use crate::integrator::{
    grid_solve, integrate_c3, integrate_sl2, CurveField, FieldValues, GridSolveOptions, IntegrationError, Path, Stepping, Target,
};
use crate::weierstrass::{lambda_from_data, PhiVector, WData, WeierstrassError};

const C0: Complex64 = Complex64::new(0.0, 0.0);
const I: Complex64 = Complex64::new(0.0, 1.0);

pub const DOMAIN_FLOOR: f64 = 1e-9;
pub const SINGULAR_TOL: f64 = 1e-3;
pub const DIFF_STEP: f64 = 1e-5;

pub type C3Point = [Complex64; 3];

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("{what} = {value:e} is below the domain floor {floor:e}")]
    Domain { what: &'static str, value: f64, floor: f64 },
    #[error("expected a {expected:?} field")]
    WrongTarget { expected: Target },
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Weierstrass(#[from] WeierstrassError),
    #[error(transparent)]
    Integration(#[from] IntegrationError),
}

/// `T(x) = (1/x₃) [[1, x₁ + i x₂], [x₁ − i x₂, x₁² + x₂² + x₃²]]`.
pub fn bryant_t_matrix(x: C3Point, floor: f64) -> Result<Mat2, TransformError> {
    let [x1, x2, x3] = x;
    if !(x3.norm() >= floor) {
        return Err(TransformError::Domain { what: "|x3|", value: x3.norm(), floor });
    }
    let r = x3.inv();
    Ok(Mat2::new(r, (x1 + I * x2) * r, (x1 - I * x2) * r, (x1 * x1 + x2 * x2 + x3 * x3) * r))
}

/// [`bryant_t_matrix`] checked into `SL(2,C)`; the determinant tolerance
/// scales with the size of the entries.
pub fn bryant_t(x: C3Point, floor: f64) -> Result<Sl2, TransformError> {
    let m = bryant_t_matrix(x, floor)?;
    let scale = m.norm_sqr().max(1.0);
    Ok(Sl2::with_tolerance(m, 1e-12 * scale)?)
}

pub fn bryant_t_inv_matrix(y: &Mat2, floor: f64) -> Result<C3Point, TransformError> {
    if !(y.a11.norm() >= floor) {
        return Err(TransformError::Domain { what: "|y11|", value: y.a11.norm(), floor });
    }
    let x3 = y.a11.inv();
    let x1 = (y.a12 + y.a21) * 0.5 * x3;
    let x2 = (y.a12 - y.a21) * x3 / (2.0 * I);
    Ok([x1, x2, x3])
}

pub fn bryant_t_inv(y: &Sl2, floor: f64) -> Result<C3Point, TransformError> {
    bryant_t_inv_matrix(y.matrix(), floor)
}

// ---------------------------------------------------------------------------
// null preservation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    C3ToSl2,
    Sl2ToC3,
}

#[derive(Debug, Clone, Copy)]
pub struct NullCheckOptions {
    pub step: f64,
    /// Nodes closer than this to the exceptional locus are masked.
    pub mask_floor: f64,
    /// Translation added to `F` before applying `T`.
    pub offset: C3Point,
    /// Left translation applied to `B` before applying `T⁻¹`.
    pub translate: Sl2,
}

impl Default for NullCheckOptions {
    fn default() -> Self {
        NullCheckOptions { step: DIFF_STEP, mask_floor: 1e-3, offset: [C0, C0, Complex64::new(1.0, 0.0)], translate: Sl2::identity() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NullCheckReport {
    pub direction: Direction,
    pub step: f64,
    pub checked: usize,
    pub masked: usize,
    /// `max |det dY|` (into `SL(2,C)`) or `max |Σ (dx_k)²|` (into `C³`).
    pub max_residual: f64,
    /// The same divided by the squared norm of the derivative.
    pub max_relative: f64,
    /// Range of `|d(SL2 curve)|² / |d(C³ curve)|²` over the checked nodes.
    pub metric_ratio: (f64, f64),
}

fn c3_sub(a: &C3Point, b: &C3Point) -> C3Point {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn c3_norm_sqr(a: &C3Point) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

struct NodeCheck {
    masked: bool,
    residual: f64,
    relative: f64,
    ratio: f64,
}

fn node_directions(grid: &PolarGrid, idx: usize) -> [Complex64; 2] {
    if idx == 0 {
        return [Complex64::new(1.0, 0.0), I];
    }
    let (_, k) = grid.ring_and_angle(idx);
    let u = Complex64::from_polar(1.0, grid.angle(k));
    [u, I * u]
}

/// Composes the integrated curve with `T` (or `T⁻¹`) and checks nullity of
/// the composite by symmetric differences along the radial and angular grid
/// directions at each node.
pub fn pushforward_null_check(
    w: &WData,
    direction: Direction,
    grid: &PolarGrid,
    opts: &NullCheckOptions,
) -> Result<NullCheckReport, TransformError> {
    let gopts = GridSolveOptions { loop_tol: f64::INFINITY, ..GridSolveOptions::default() };
    let h = opts.step;
    let checks: Vec<NodeCheck> = match direction {
        Direction::C3ToSl2 => {
            let field = grid_solve(w, grid, Target::C3, &Sl2::identity(), &gopts)?;
            let values = field.c3().expect("C3 field");
            (0..grid.len())
                .into_par_iter()
                .map(|idx| {
                    let z = grid.point(idx);
                    let x = values[idx];
                    let mut out = NodeCheck { masked: false, residual: 0.0, relative: 0.0, ratio: f64::NAN };
                    let mut ratios = Vec::new();
                    for u in node_directions(grid, idx) {
                        let mut ends = [[C0; 3]; 2];
                        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
                            let path = Path::segment(z, z + u * (sign * h))?;
                            let y = integrate_c3(w, &path, x, Stepping::default())?.end();
                            ends[slot] = [y[0] + opts.offset[0], y[1] + opts.offset[1], y[2] + opts.offset[2]];
                        }
                        if ends.iter().any(|e| e[2].norm() < opts.mask_floor) {
                            out.masked = true;
                            return Ok(out);
                        }
                        let tp = bryant_t_matrix(ends[0], DOMAIN_FLOOR)?;
                        let tm = bryant_t_matrix(ends[1], DOMAIN_FLOOR)?;
                        let d = (tp - tm).scale_re(0.5 / h);
                        let dx = c3_sub(&ends[0], &ends[1]).map(|v| v * (0.5 / h));
                        let res = d.det().norm();
                        out.residual = out.residual.max(res);
                        out.relative = out.relative.max(res / d.norm_sqr().max(f64::MIN_POSITIVE));
                        ratios.push(d.norm_sqr() / c3_norm_sqr(&dx));
                    }
                    out.ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
                    Ok(out)
                })
                .collect::<Result<_, TransformError>>()?
        }
        Direction::Sl2ToC3 => {
            let field = grid_solve(w, grid, Target::Sl2, &opts.translate, &gopts)?;
            let values = field.sl2().expect("SL2 field");
            (0..grid.len())
                .into_par_iter()
                .map(|idx| {
                    let z = grid.point(idx);
                    let b = Sl2::renormalize(values[idx], Complex64::new(1.0, 0.0))?;
                    let mut out = NodeCheck { masked: false, residual: 0.0, relative: 0.0, ratio: f64::NAN };
                    let mut ratios = Vec::new();
                    for u in node_directions(grid, idx) {
                        let mut ends = [Mat2::identity(); 2];
                        for (slot, sign) in [(0, 1.0), (1, -1.0)] {
                            let path = Path::segment(z, z + u * (sign * h))?;
                            ends[slot] = integrate_sl2(w, &path, &b, Stepping::default())?.end();
                        }
                        if ends.iter().any(|e| e.a11.norm() < opts.mask_floor) {
                            out.masked = true;
                            return Ok(out);
                        }
                        let xp = bryant_t_inv_matrix(&ends[0], DOMAIN_FLOOR)?;
                        let xm = bryant_t_inv_matrix(&ends[1], DOMAIN_FLOOR)?;
                        let dx = c3_sub(&xp, &xm).map(|v| v * (0.5 / h));
                        let d = (ends[0] - ends[1]).scale_re(0.5 / h);
                        let res = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).norm();
                        out.residual = out.residual.max(res);
                        out.relative = out.relative.max(res / c3_norm_sqr(&dx).max(f64::MIN_POSITIVE));
                        ratios.push(d.norm_sqr() / c3_norm_sqr(&dx));
                    }
                    out.ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
                    Ok(out)
                })
                .collect::<Result<_, TransformError>>()?
        }
    };
    let live: Vec<&NodeCheck> = checks.iter().filter(|c| !c.masked).collect();
    let ratio_min = live.iter().map(|c| c.ratio).fold(f64::INFINITY, f64::min);
    let ratio_max = live.iter().map(|c| c.ratio).fold(0.0, f64::max);
    Ok(NullCheckReport {
        direction,
        step: h,
        checked: live.len(),
        masked: checks.len() - live.len(),
        max_residual: live.iter().map(|c| c.residual).fold(0.0, f64::max),
        max_relative: live.iter().map(|c| c.relative).fold(0.0, f64::max),
        metric_ratio: (ratio_min, ratio_max),
    })
}

// ---------------------------------------------------------------------------
// left translation

pub fn sl2_field(grid: PolarGrid, values: Vec<Mat2>) -> CurveField {
    let n = values.len();
    CurveField { grid, base: C0, values: FieldValues::Sl2(values), error: vec![0.0; n], loop_residual: 0.0 }
}

/// `aB` node-wise.
pub fn left_translate(a: &Sl2, field: &CurveField) -> Result<CurveField, TransformError> {
    let values = field.sl2().ok_or(TransformError::WrongTarget { expected: Target::Sl2 })?;
    let m = *a.matrix();
    Ok(CurveField { values: FieldValues::Sl2(values.iter().map(|b| m * *b).collect()), ..field.clone() })
}

/// `B⁻¹ ∂_r B` by symmetric differences along rays (zero on the centre and
/// outer ring).
pub fn maurer_cartan_radial(field: &CurveField) -> Result<Vec<Mat2>, TransformError> {
    let values = field.sl2().ok_or(TransformError::WrongTarget { expected: Target::Sl2 })?;
    let g = field.grid;
    let dr = 1.0 / g.radial as f64;
    let mut out = vec![Mat2::zero(); g.len()];
    for ring in 1..g.radial {
        for k in 0..g.angular {
            let idx = g.index(ring, k);
            let prev = if ring == 1 { 0 } else { g.index(ring - 1, k) };
            let next = g.index(ring + 1, k);
            out[idx] = values[idx].adjugate() * (values[next] - values[prev]).scale_re(0.5 / dr);
        }
    }
    Ok(out)
}

/// Searches the first row `(α, β)` of an `SU(2)` element maximising
/// `min |(aB)₁₁| = min |α B₁₁ + β B₂₁|` over the field.
pub fn choose_translation(field: &CurveField) -> Result<(Sl2, f64), TransformError> {
    let values = field.sl2().ok_or(TransformError::WrongTarget { expected: Target::Sl2 })?;
    let score = |t: f64, v: f64| {
        let (alpha, beta) = (Complex64::new(t.cos(), 0.0), Complex64::from_polar(t.sin(), v));
        values.par_iter().map(|b| (alpha * b.a11 + beta * b.a21).norm()).reduce(|| f64::INFINITY, f64::min)
    };
    let (nt, nv) = (33, 64);
    let mut best = (0.0, 0.0, score(0.0, 0.0));
    for i in 0..nt {
        for j in 0..nv {
            let t = std::f64::consts::FRAC_PI_2 * i as f64 / (nt - 1) as f64;
            let v = std::f64::consts::TAU * j as f64 / nv as f64;
            let s = score(t, v);
            if s > best.2 {
                best = (t, v, s);
            }
        }
    }
    let (mut dt, mut dv) = (std::f64::consts::FRAC_PI_2 / (nt - 1) as f64, std::f64::consts::TAU / nv as f64);
    for _ in 0..20 {
        let (t0, v0, _) = best;
        for (t, v) in [(t0 + dt, v0), (t0 - dt, v0), (t0, v0 + dv), (t0, v0 - dv)] {
            let s = score(t, v);
            if s > best.2 {
                best = (t, v, s);
            }
        }
        dt *= 0.5;
        dv *= 0.5;
    }
    let (t, v, s) = best;
    Ok((Sl2::su2(Complex64::new(t.cos(), 0.0), Complex64::from_polar(t.sin(), v))?, s))
}

/// Largest `|trace(BB*) − |B|²|` over the values.
pub fn trace_norm_residual(values: &[Mat2]) -> f64 {
    values.iter().map(|b| ((*b * b.adjoint()).trace().re - b.norm_sqr()).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// meshes

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TargetSpace {
    R3,
    H3Ball,
    L3,
    S31,
    C2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceMesh {
    pub target: TargetSpace,
    pub grid: PolarGrid,
    /// Target-space coordinates, 3 or 4 per vertex.
    pub vertices: Vec<Vec<f64>>,
    /// Polar-grid quads; centre-fan quads repeat the centre index.
    pub faces: Vec<[usize; 4]>,
    pub singular: Vec<bool>,
    /// `|g|` per vertex when Weierstrass data was supplied.
    pub g_abs: Option<Vec<f64>>,
    /// Minkowski coordinates `(x0, x1, x2, x3)` for `H³` and `S³₁` meshes.
    pub minkowski: Option<Vec<[f64; 4]>>,
    pub certificates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSidecar {
    pub target: TargetSpace,
    pub vertices: usize,
    pub faces: usize,
    pub bounds: Vec<(f64, f64)>,
    pub singular_vertices: Vec<usize>,
    pub certificates: BTreeMap<String, f64>,
    pub minkowski: Option<Vec<[f64; 4]>>,
}

#[derive(Debug, Error, PartialEq)]
pub enum MeshError {
    #[error("face {face} references vertex {index} of {len}")]
    FaceIndex { face: usize, index: usize, len: usize },
    #[error("vertex {index} has {dim} coordinates, expected {expected}")]
    Dimension { index: usize, dim: usize, expected: usize },
    #[error("singular flag of vertex {index} disagrees with |g| = {g_abs}")]
    Flag { index: usize, g_abs: f64 },
    #[error("{flags} flags for {len} vertices")]
    FlagCount { flags: usize, len: usize },
    #[error("vertex {index} is not finite")]
    NonFinite { index: usize },
}

impl SurfaceMesh {
    fn build(target: TargetSpace, grid: &PolarGrid, vertices: Vec<Vec<f64>>, g_abs: Option<Vec<f64>>) -> Self {
        let singular = match &g_abs {
            Some(g) => g.iter().map(|a| (a - 1.0).abs() < SINGULAR_TOL).collect(),
            None => vec![false; vertices.len()],
        };
        SurfaceMesh { target, grid: *grid, vertices, faces: grid.faces(), singular, g_abs, minkowski: None, certificates: BTreeMap::new() }
    }

    pub fn dim(&self) -> usize {
        match self.target {
            TargetSpace::R3 | TargetSpace::H3Ball | TargetSpace::L3 => 3,
            TargetSpace::S31 | TargetSpace::C2 => 4,
        }
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let len = self.vertices.len();
        let expected = self.dim();
        if let Some((index, v)) = self.vertices.iter().enumerate().find(|(_, v)| v.len() != expected) {
            return Err(MeshError::Dimension { index, dim: v.len(), expected });
        }
        if let Some(index) = self.vertices.iter().position(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(MeshError::NonFinite { index });
        }
        for (face, f) in self.faces.iter().enumerate() {
            if let Some(&index) = f.iter().find(|&&i| i >= len) {
                return Err(MeshError::FaceIndex { face, index, len });
            }
        }
        if self.singular.len() != len {
            return Err(MeshError::FlagCount { flags: self.singular.len(), len });
        }
        if let Some(g) = &self.g_abs {
            for (index, (&a, &flag)) in g.iter().zip(&self.singular).enumerate() {
                if flag != ((a - 1.0).abs() < SINGULAR_TOL) {
                    return Err(MeshError::Flag { index, g_abs: a });
                }
            }
        } else if let Some(index) = self.singular.iter().position(|&s| s) {
            return Err(MeshError::Flag { index, g_abs: f64::NAN });
        }
        Ok(())
    }

    pub fn singular_indices(&self) -> Vec<usize> {
        self.singular.iter().enumerate().filter(|(_, &s)| s).map(|(i, _)| i).collect()
    }

    /// Per-coordinate `(min, max)`.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        (0..self.dim())
            .map(|c| {
                self.vertices.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v[c]), hi.max(v[c])))
            })
            .collect()
    }

    pub fn max_vertex_norm(&self) -> f64 {
        self.vertices.iter().map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    /// Coordinates written to OBJ: `S³₁` uses the spatial part, `C²` uses
    /// `(Re w₁, Im w₁, Re w₂)`.
    fn obj_coords(&self, v: &[f64]) -> [f64; 3] {
        match self.target {
            TargetSpace::S31 => [v[1], v[2], v[3]],
            _ => [v[0], v[1], v[2]],
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {:?} mesh, {} vertices", self.target, self.vertices.len());
        for v in &self.vertices {
            let [x, y, z] = self.obj_coords(v);
            let _ = writeln!(s, "v {x:.9} {y:.9} {z:.9}");
        }
        for f in &self.faces {
            let mut idx: Vec<usize> = f.to_vec();
            idx.dedup();
            if idx.len() > 1 && idx[0] == idx[idx.len() - 1] {
                idx.pop();
            }
            let _ = write!(s, "f");
            for i in idx {
                let _ = write!(s, " {}", i + 1);
            }
            s.push('\n');
        }
        s
    }

    pub fn write_obj<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(self.to_obj().as_bytes())
    }

    pub fn sidecar(&self) -> MeshSidecar {
        MeshSidecar {
            target: self.target,
            vertices: self.vertices.len(),
            faces: self.faces.len(),
            bounds: self.bounds(),
            singular_vertices: self.singular_indices(),
            certificates: self.certificates.clone(),
            minkowski: self.minkowski.clone(),
        }
    }

    /// One row per vertex: `index,ring,k,c0,c1,c2[,c3],singular`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,ring,k");
        for c in 0..self.dim() {
            let _ = write!(s, ",c{c}");
        }
        s.push_str(",singular\n");
        for (i, v) in self.vertices.iter().enumerate() {
            let (ring, k) = self.grid.ring_and_angle(i);
            let _ = write!(s, "{i},{ring},{k}");
            for x in v {
                let _ = write!(s, ",{x:.12e}");
            }
            let _ = writeln!(s, ",{}", self.singular[i] as u8);
        }
        s
    }
}

fn g_abs_on(w: &WData, grid: &PolarGrid) -> Result<Vec<f64>, TransformError> {
    let mut ev = w.evaluator();
    grid.points().into_iter().map(|z| Ok(ev.eval(z)?.0.norm())).collect()
}

/// `β = BB*` in the Poincaré ball; Minkowski coordinates are kept alongside.
pub fn project_h3(field: &CurveField) -> Result<SurfaceMesh, TransformError> {
    let values = field.sl2().ok_or(TransformError::WrongTarget { expected: Target::Sl2 })?;
    let mink: Vec<HermPoint> = values.iter().map(|b| HermPoint::from_hermitian(&(*b * b.adjoint()))).collect();
    let vertices = mink
        .iter()
        .map(|p| {
            let d = 1.0 + p.x0;
            vec![p.x1 / d, p.x2 / d, p.x3 / d]
        })
        .collect();
    let mut mesh = SurfaceMesh::build(TargetSpace::H3Ball, &field.grid, vertices, None);
    let ball = mesh.max_vertex_norm();
    mesh.minkowski = Some(mink.iter().map(|p| [p.x0, p.x1, p.x2, p.x3]).collect());
    mesh.certificates.insert("max_ball_radius".into(), ball);
    mesh.certificates.insert("trace_norm_residual".into(), trace_norm_residual(values));
    Ok(mesh)
}

/// `f_X = Re(i X₁, X₂, X₃)` in `L³`.
pub fn project_maxface(field: &CurveField, w: &WData) -> Result<SurfaceMesh, TransformError> {
    let values = field.c3().ok_or(TransformError::WrongTarget { expected: Target::C3 })?;
    let vertices = values.iter().map(|x| vec![(I * x[0]).re, x[1].re, x[2].re]).collect();
    let mut mesh = SurfaceMesh::build(TargetSpace::L3, &field.grid, vertices, Some(g_abs_on(w, &field.grid)?));
    let sup_x = values.iter().map(|x| c3_norm_sqr(x).sqrt()).fold(0.0, f64::max);
    mesh.certificates.insert("sup_curve_norm".into(), sup_x);
    mesh.certificates.insert("sup_vertex_norm".into(), mesh.max_vertex_norm());
    Ok(mesh)
}

/// `f_Y = Y diag(1, −1) Y*` in `S³₁`, as Minkowski coordinates.
pub fn project_desitter(field: &CurveField, w: &WData) -> Result<SurfaceMesh, TransformError> {
    let values = field.sl2().ok_or(TransformError::WrongTarget { expected: Target::Sl2 })?;
    let d = Mat2::from_real(1.0, 0.0, 0.0, -1.0);
    let herm: Vec<Mat2> = values.iter().map(|y| *y * d * y.adjoint()).collect();
    let mink: Vec<HermPoint> = herm.iter().map(HermPoint::from_hermitian).collect();
    let vertices = mink.iter().map(|p| vec![p.x0, p.x1, p.x2, p.x3]).collect();
    let mut mesh = SurfaceMesh::build(TargetSpace::S31, &field.grid, vertices, Some(g_abs_on(w, &field.grid)?));
    // de Sitter space is `<x, x> = −1` in the signature used by `lorentz`
    let norm_residual = mink.iter().map(|p| (p.lorentz(p) + 1.0).abs()).fold(0.0, f64::max);
    mesh.minkowski = Some(mink.iter().map(|p| [p.x0, p.x1, p.x2, p.x3]).collect());
    mesh.certificates.insert("lorentz_norm_residual".into(), norm_residual);
    mesh.certificates.insert("sup_image_norm".into(), herm.iter().map(|h| h.norm()).fold(0.0, f64::max));
    mesh.certificates.insert("sup_curve_norm_sqr".into(), values.iter().map(|y| y.norm_sqr()).fold(0.0, f64::max));
    Ok(mesh)
}

/// `4|(φ₁, φ₂)|² − 2λ²` at one point; equals `|η|²(1 − |g|²)²`.
pub fn c2_margin(g: Complex64, eta: Complex64) -> f64 {
    let phi = PhiVector::from_data(g, eta).0;
    let lam = lambda_from_data(g, eta);
    4.0 * (phi[0].norm_sqr() + phi[1].norm_sqr()) - 2.0 * lam * lam
}

/// Drops the third coordinate; the certificate is the minimum of
/// [`c2_margin`] over the grid.
pub fn project_c2(field: &CurveField, w: &WData) -> Result<SurfaceMesh, TransformError> {
    let values = field.c3().ok_or(TransformError::WrongTarget { expected: Target::C3 })?;
    let vertices = values.iter().map(|x| vec![x[0].re, x[0].im, x[1].re, x[1].im]).collect();
    let mut ev = w.evaluator();
    let mut cert = f64::INFINITY;
    let mut rel = f64::INFINITY;
    let mut g_abs = Vec::with_capacity(values.len());
    for z in field.grid.points() {
        let (g, eta) = ev.eval(z)?;
        let m = c2_margin(g, eta);
        let lam = lambda_from_data(g, eta);
        cert = cert.min(m);
        rel = rel.min(m / (lam * lam).max(f64::MIN_POSITIVE));
        g_abs.push(g.norm());
    }
    let mut mesh = SurfaceMesh::build(TargetSpace::C2, &field.grid, vertices, None);
    mesh.g_abs = None;
    mesh.certificates.insert("completeness_margin".into(), cert);
    mesh.certificates.insert("relative_margin".into(), rel);
    mesh.certificates.insert("min_abs_g_minus_one".into(), g_abs.iter().map(|a| (a - 1.0).abs()).fold(f64::INFINITY, f64::min));
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::holo::HoloExpr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn mat_close(a: &Mat2, b: &Mat2, tol: f64) -> bool {
        (*a - *b).norm() <= tol
    }

    #[test]
    fn t_examples() {
        let id = bryant_t(C3_UNIT_X3, DOMAIN_FLOOR).unwrap();
        assert!(mat_close(id.matrix(), &Mat2::identity(), 0.0));
        let y = bryant_t([c(1.0, 0.0), C0, c(1.0, 0.0)], DOMAIN_FLOOR).unwrap();
        assert!(mat_close(y.matrix(), &Mat2::from_real(1.0, 1.0, 1.0, 2.0), 0.0));
        let back = bryant_t_inv(&y, DOMAIN_FLOOR).unwrap();
        assert!((back[0] - 1.0).norm() + back[1].norm() + (back[2] - 1.0).norm() < 1e-15);
        assert!(matches!(bryant_t([C0, C0, c(1e-10, 0.0)], DOMAIN_FLOOR), Err(TransformError::Domain { .. })));
        let sing = Mat2::new(C0, c(1.0, 0.0), c(-1.0, 0.0), C0);
        assert!(matches!(bryant_t_inv_matrix(&sing, DOMAIN_FLOOR), Err(TransformError::Domain { .. })));
    }

    const C3_UNIT_X3: C3Point = [C0, C0, Complex64::new(1.0, 0.0)];

    #[test]
    fn t_is_birational_on_random_sweeps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..2000 {
            let mut r = || c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let x = [r(), r(), r()];
            if x[2].norm() < 0.05 {
                continue;
            }
            let y = bryant_t(x, DOMAIN_FLOOR).unwrap();
            assert!((y.matrix().det() - 1.0).norm() < 1e-10);
            let back = bryant_t_inv(&y, DOMAIN_FLOOR).unwrap();
            let err = c3_norm_sqr(&c3_sub(&back, &x)).sqrt();
            assert!(err < 1e-10 * (1.0 + c3_norm_sqr(&x)), "{err}");
        }
        for _ in 0..2000 {
            let y = Sl2::random(&mut rng, 2.0);
            if y.matrix().a11.norm() < 0.05 {
                continue;
            }
            let x = bryant_t_inv(&y, DOMAIN_FLOOR).unwrap();
            let yy = bryant_t(x, DOMAIN_FLOOR).unwrap();
            assert!(mat_close(yy.matrix(), y.matrix(), 1e-10 * y.matrix().norm_sqr().max(1.0)));
        }
    }

    #[test]
    fn null_check_with_constant_third_component() {
        // g ≡ 0 gives φ₃ ≡ 0
        let w = WData::new(HoloExpr::constant(C0), HoloExpr::poly(vec![c(0.7, 0.0), c(0.2, 0.1)]));
        let rep = pushforward_null_check(&w, Direction::C3ToSl2, &PolarGrid::new(6, 12), &NullCheckOptions::default()).unwrap();
        assert_eq!(rep.masked, 0);
        assert!(rep.max_residual < 1e-9, "{rep:?}");
    }

    #[test]
    fn null_check_both_directions_on_random_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = WData::random(&mut rng);
        let grid = PolarGrid::new(6, 12);
        let opts = NullCheckOptions { offset: [C0, C0, c(3.0, 0.5)], ..NullCheckOptions::default() };
        let fwd = pushforward_null_check(&w, Direction::C3ToSl2, &grid, &opts).unwrap();
        assert!(fwd.max_residual < 1e-7, "{fwd:?}");
        let back = pushforward_null_check(&w, Direction::Sl2ToC3, &grid, &NullCheckOptions::default()).unwrap();
        assert!(back.max_residual < 1e-7, "{back:?}");
        assert!(back.metric_ratio.0 > 0.0 && back.metric_ratio.1.is_finite());
    }

    fn horosphere(cc: f64, grid: &PolarGrid) -> CurveField {
        // g ≡ 0, η ≡ c: B(z) = [[1, 0], [cz/√2, 1]]
        let s = cc / std::f64::consts::SQRT_2;
        sl2_field(*grid, grid.points().into_iter().map(|z| Mat2::new(c(1.0, 0.0), C0, z * s, c(1.0, 0.0))).collect())
    }

    #[test]
    fn horosphere_pushes_to_a_null_curve_after_translation() {
        let w = WData::new(HoloExpr::zero(), HoloExpr::constant(c(0.2, 0.0)));
        let grid = PolarGrid::new(8, 16);
        let twisted = left_translate(&Sl2::su2(C0, c(1.0, 0.0)).unwrap(), &horosphere(0.2, &grid)).unwrap();
        let min_before = twisted.sl2().unwrap().iter().map(|b| b.a11.norm()).fold(f64::INFINITY, f64::min);
        assert!(min_before < 1e-12);
        let (a, min_after) = choose_translation(&twisted).unwrap();
        assert!(min_after >= 0.1, "{min_after}");
        let fixed = left_translate(&a, &twisted).unwrap();
        let got = fixed.sl2().unwrap().iter().map(|b| b.a11.norm()).fold(f64::INFINITY, f64::min);
        assert!((got - min_after).abs() < 1e-12);
        let translate = a * Sl2::su2(C0, c(1.0, 0.0)).unwrap();
        let rep = pushforward_null_check(&w, Direction::Sl2ToC3, &grid, &NullCheckOptions { translate, ..NullCheckOptions::default() }).unwrap();
        assert_eq!(rep.masked, 0);
        assert!(rep.max_residual < 1e-7, "{rep:?}");
    }

    #[test]
    fn left_translation_preserves_maurer_cartan_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = WData::random(&mut rng);
        let field = grid_solve(&w, &PolarGrid::new(16, 32), Target::Sl2, &Sl2::identity(), &GridSolveOptions::default()).unwrap();
        let same = left_translate(&Sl2::identity(), &field).unwrap();
        assert_eq!(same.values, field.values);
        let a = Sl2::random(&mut rng, 1.5);
        let moved = left_translate(&a, &field).unwrap();
        let before = maurer_cartan_radial(&field).unwrap();
        let after = maurer_cartan_radial(&moved).unwrap();
        let scale = a.matrix().norm_sqr();
        let worst = before.iter().zip(&after).map(|(p, q)| (*p - *q).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-12 * scale * 1e2, "{worst}");
    }

    #[test]
    fn h3_projection() {
        let grid = PolarGrid::new(4, 8);
        let id = sl2_field(grid, vec![Mat2::identity(); grid.len()]);
        let mesh = project_h3(&id).unwrap();
        assert!(mesh.max_vertex_norm() == 0.0);
        mesh.validate().unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<Mat2> = (0..grid.len()).map(|_| *Sl2::random(&mut rng, 1.2).matrix()).collect();
        let tau = vals.iter().map(|m| m.norm()).fold(0.0, f64::max);
        let mesh = project_h3(&sl2_field(grid, vals.clone())).unwrap();
        let bound = (0.5 * tau * tau).acosh();
        for (v, m) in mesh.vertices.iter().zip(mesh.minkowski.as_ref().unwrap()) {
            let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(r < 1.0);
            // ball radius tanh(d/2)
            assert!(r <= (0.5 * bound).tanh() + 1e-12);
            assert!(m[0].acosh() <= bound + 1e-12);
        }
        assert!(trace_norm_residual(&vals) < 1e-12);
    }

    #[test]
    fn maxface_projection() {
        let grid = PolarGrid::new(3, 6);
        let xs: Vec<C3Point> = (0..grid.len()).map(|k| [c(0.0, -(k as f64)), c(0.5 * k as f64, 0.0), c(-1.0, 0.0)]).collect();
        let field = CurveField { grid, base: C0, values: FieldValues::C3(xs.clone()), error: vec![0.0; grid.len()], loop_residual: 0.0 };
        let w = WData::new(HoloExpr::poly(vec![C0, c(0.4, 0.0)]), HoloExpr::constant(c(1.0, 0.0)));
        let mesh = project_maxface(&field, &w).unwrap();
        for (v, x) in mesh.vertices.iter().zip(&xs) {
            assert_eq!(v, &vec![-x[0].im, x[1].re, x[2].re]);
        }
        assert!(mesh.singular_indices().is_empty());
        mesh.validate().unwrap();
        assert!(mesh.certificates["sup_vertex_norm"] <= std::f64::consts::SQRT_2 * mesh.certificates["sup_curve_norm"]);

        // |g| = |z| crosses 1 on the outer ring
        let w = WData::new(HoloExpr::poly(vec![C0, c(1.0, 0.0)]), HoloExpr::constant(c(1.0, 0.0)));
        let mesh = project_maxface(&field, &w).unwrap();
        assert_eq!(mesh.singular_indices(), grid.boundary().collect::<Vec<_>>());
    }

    #[test]
    fn desitter_projection() {
        let grid = PolarGrid::new(4, 8);
        let w = WData::new(HoloExpr::constant(c(0.3, 0.0)), HoloExpr::constant(c(1.0, 0.0)));
        let id = sl2_field(grid, vec![Mat2::identity(); grid.len()]);
        let mesh = project_desitter(&id, &w).unwrap();
        assert_eq!(mesh.vertices[0], vec![0.0, 0.0, 0.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<Mat2> = (0..grid.len()).map(|_| *Sl2::random(&mut rng, 1.5).matrix()).collect();
        let mesh = project_desitter(&sl2_field(grid, vals), &w).unwrap();
        assert!(mesh.certificates["lorentz_norm_residual"] < 1e-8);
        assert!(mesh.certificates["sup_image_norm"] <= mesh.certificates["sup_curve_norm_sqr"] + 1e-12);
        mesh.validate().unwrap();
    }

    #[test]
    fn c2_certificate() {
        let eta = c(0.8, -0.3);
        let lam = lambda_from_data(C0, eta);
        assert!((c2_margin(C0, eta) - 2.0 * lam * lam).abs() < 1e-14);
        assert!((c2_margin(C0, eta) - eta.norm_sqr()).abs() < 1e-14);
        for t in [0.0, 0.7, 2.1, 4.0] {
            assert!(c2_margin(Complex64::from_polar(1.0, t), eta).abs() < 1e-14);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5000 {
            let g = c(rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0));
            let e = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let expected = e.norm_sqr() * (1.0 - g.norm_sqr()).powi(2);
            assert!((c2_margin(g, e) - expected).abs() <= 1e-12 * (1.0 + expected));
            assert!(c2_margin(g, e) >= -1e-12 * (1.0 + e.norm_sqr() * (1.0 + g.norm_sqr()).powi(2)));
        }
    }

    #[test]
    fn mesh_validation_catches_bad_faces() {
        let grid = PolarGrid::new(2, 4);
        let mut mesh = project_h3(&horosphere(0.2, &grid)).unwrap();
        mesh.validate().unwrap();
        mesh.faces.push([0, 1, 99, 2]);
        assert!(matches!(mesh.validate(), Err(MeshError::FaceIndex { index: 99, .. })));
        let obj = project_h3(&horosphere(0.2, &grid)).unwrap().to_obj();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), grid.len());
        assert!(obj.lines().any(|l| l == "f 1 2 3"));
    }
}
