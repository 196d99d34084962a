//! Weierstrass data `(g, η dz)` and the null forms they generate:
//!
//! ```text
//! φ = ½ ((1 - g²), i(1 + g²), 2g) η            (null curves in C³)
//! ψ = (1/√2) [[g, -g²], [1, -g]] η             (null curves in SL(2,C))
//! λ = (1 + |g|²) |η| / √2 = |φ| = |ψ|
//! ```

use std::f64::consts::SQRT_2;
use std::sync::OnceLock;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::algebra::{rotation_of, Mat2, Sl2};
use crate::grid::PolarGrid;
use crate::holo::{EvalError, ExprTable, HoloExpr, Program};

pub const WDATA_SCHEMA: &str = "nullcurve.wdata/1";

/// Default floor below which the conformal factor counts as degenerate.
pub const LAMBDA_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeierstrassError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("degenerate immersion at z = {z}: λ = {lambda:e}")]
    Degenerate { z: Complex64, lambda: f64 },
    #[error("matrix is not a rotation (orthogonality residual {residual:e}, det {det})")]
    NotRotation { residual: f64, det: f64 },
    #[error("η vanishes on every sample; the data is degenerate")]
    DegenerateData,
    #[error("declared pole at {at} of order {order}: λ is not finite nearby")]
    PoleCheck { at: Complex64, order: u32 },
    #[error("bad W-data record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pole {
    pub at: Complex64,
    pub order: u32,
}

/// Weierstrass data on the closed unit disc.
#[derive(Debug, Clone)]
pub struct WData {
    g: HoloExpr,
    eta: HoloExpr,
    basepoint: Complex64,
    poles: Vec<Pole>,
    program: OnceLock<Program>,
}

impl WData {
    pub fn new(g: HoloExpr, eta: HoloExpr) -> Self {
        WData { g, eta, basepoint: Complex64::new(0.0, 0.0), poles: Vec::new(), program: OnceLock::new() }
    }

    pub fn with_basepoint(mut self, z0: Complex64) -> Self {
        self.basepoint = z0;
        self
    }

    /// Declares poles of `g`; `η` must vanish to twice the order there.
    pub fn with_poles(mut self, poles: Vec<Pole>) -> Self {
        self.poles = poles;
        self
    }

    pub fn g(&self) -> &HoloExpr {
        &self.g
    }

    pub fn eta(&self) -> &HoloExpr {
        &self.eta
    }

    pub fn basepoint(&self) -> Complex64 {
        self.basepoint
    }

    pub fn poles(&self) -> &[Pole] {
        &self.poles
    }

    fn program(&self) -> &Program {
        self.program.get_or_init(|| Program::compile(&[&self.g, &self.eta]))
    }

    /// A reusable evaluator; holds scratch registers.
    pub fn evaluator(&self) -> WEvaluator<'_> {
        WEvaluator { program: self.program(), regs: Vec::with_capacity(self.program().len()) }
    }

    /// `(g(z), η(z))`.
    pub fn eval(&self, z: Complex64) -> Result<(Complex64, Complex64), WeierstrassError> {
        self.evaluator().eval(z)
    }

    pub fn phi(&self, z: Complex64) -> Result<PhiVector, WeierstrassError> {
        self.evaluator().phi(z)
    }

    pub fn psi(&self, z: Complex64) -> Result<PsiMatrix, WeierstrassError> {
        self.evaluator().psi(z)
    }

    pub fn lambda(&self, z: Complex64) -> Result<f64, WeierstrassError> {
        self.evaluator().lambda(z)
    }

    /// W-data of `a ψ a⁻¹` for `a ∈ SL(2,C)`:
    /// `g ↦ (a11 g + a12)/(a21 g + a22)`, `η ↦ (a21 g + a22)² η`.
    /// For `a ∈ SU(2)` this rotates `φ` by [`rotation_of`]`(a)`.
    pub fn conjugate(&self, a: &Sl2) -> WData {
        let m = a.matrix();
        let den = HoloExpr::sum(&self.g.scale(m.a21), &HoloExpr::constant(m.a22));
        let num = HoloExpr::sum(&self.g.scale(m.a11), &HoloExpr::constant(m.a12));
        WData {
            g: HoloExpr::quotient(&num, &den),
            eta: HoloExpr::product(&self.eta, &den.square()),
            basepoint: self.basepoint,
            poles: Vec::new(),
            program: OnceLock::new(),
        }
    }

    /// Checks `λ > floor` on the grid and finiteness of `λ` around declared
    /// poles.
    pub fn check_immersion(&self, grid: &PolarGrid, floor: f64) -> Result<f64, WeierstrassError> {
        let field = conformal_factor(self, grid, floor)?;
        for p in &self.poles {
            let mut ev = self.evaluator();
            let mut prev = None;
            for r in [1e-3, 1e-4] {
                let mut worst: f64 = 0.0;
                for k in 0..16 {
                    let z = p.at + Complex64::from_polar(r, k as f64 * std::f64::consts::TAU / 16.0);
                    let l = ev.lambda(z).map_err(|_| WeierstrassError::PoleCheck { at: p.at, order: p.order })?;
                    worst = worst.max(l);
                }
                if !worst.is_finite() {
                    return Err(WeierstrassError::PoleCheck { at: p.at, order: p.order });
                }
                if let Some(pr) = prev {
                    // blowing up like 1/r would give a ratio near 10
                    if worst > 3.0 * pr + 1e-300 {
                        return Err(WeierstrassError::PoleCheck { at: p.at, order: p.order });
                    }
                }
                prev = Some(worst);
            }
        }
        Ok(field.min())
    }

    pub fn to_record(&self) -> WDataRecord {
        let (table, roots) = ExprTable::from_exprs(&[&self.g, &self.eta]);
        WDataRecord {
            schema: WDATA_SCHEMA.to_string(),
            basepoint: [format!("{:?}", self.basepoint.re), format!("{:?}", self.basepoint.im)],
            poles: self.poles.clone(),
            table,
            g: roots[0],
            eta: roots[1],
        }
    }

    pub fn from_record(rec: &WDataRecord) -> Result<WData, WeierstrassError> {
        if rec.schema != WDATA_SCHEMA {
            return Err(WeierstrassError::Record(format!("unknown schema {}", rec.schema)));
        }
        let ex = rec.table.to_exprs(&[rec.g, rec.eta])?;
        let parse = |s: &str| s.parse::<f64>().map_err(|e| WeierstrassError::Record(e.to_string()));
        let bp = Complex64::new(parse(&rec.basepoint[0])?, parse(&rec.basepoint[1])?);
        Ok(WData::new(ex[0].clone(), ex[1].clone()).with_basepoint(bp).with_poles(rec.poles.clone()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("W-data record serialises")
    }

    pub fn from_json(s: &str) -> Result<WData, WeierstrassError> {
        let rec: WDataRecord = serde_json::from_str(s).map_err(|e| WeierstrassError::Record(e.to_string()))?;
        WData::from_record(&rec)
    }

    /// Random pole-free data: `g` a cubic, `η = c·exp(q)` with `q` quadratic.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> WData {
        let mut cx = |s: f64| Complex64::new(rng.gen_range(-s..s), rng.gen_range(-s..s));
        let g = HoloExpr::poly(vec![cx(0.6), cx(0.6), cx(0.4), cx(0.3)]);
        let q = HoloExpr::poly(vec![cx(0.3), cx(0.3), cx(0.2)]);
        let c = Complex64::new(0.5, 0.0) + cx(0.3);
        WData::new(g, HoloExpr::exp(&q).scale(c))
    }
}

/// Serialised W-data: expression DAG plus roots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WDataRecord {
    pub schema: String,
    pub basepoint: [String; 2],
    pub poles: Vec<Pole>,
    pub table: ExprTable,
    pub g: usize,
    pub eta: usize,
}

pub struct WEvaluator<'a> {
    program: &'a Program,
    regs: Vec<Complex64>,
}

impl WEvaluator<'_> {
    pub fn eval(&mut self, z: Complex64) -> Result<(Complex64, Complex64), WeierstrassError> {
        let mut out = [Complex64::new(0.0, 0.0); 2];
        self.program.eval(z, &mut self.regs, &mut out)?;
        Ok((out[0], out[1]))
    }

    pub fn phi(&mut self, z: Complex64) -> Result<PhiVector, WeierstrassError> {
        let (g, eta) = self.eval(z)?;
        Ok(PhiVector::from_data(g, eta))
    }

    pub fn psi(&mut self, z: Complex64) -> Result<PsiMatrix, WeierstrassError> {
        let (g, eta) = self.eval(z)?;
        Ok(PsiMatrix::from_data(g, eta))
    }

    pub fn lambda(&mut self, z: Complex64) -> Result<f64, WeierstrassError> {
        let (g, eta) = self.eval(z)?;
        Ok(lambda_from_data(g, eta))
    }
}

/// `(1 + |g|²)|η|/√2`.
pub fn lambda_from_data(g: Complex64, eta: Complex64) -> f64 {
    (1.0 + g.norm_sqr()) * eta.norm() / SQRT_2
}

/// `φ = (φ1, φ2, φ3)` at a point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhiVector(pub [Complex64; 3]);

impl PhiVector {
    pub fn from_data(g: Complex64, eta: Complex64) -> Self {
        let one = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.0, 1.0);
        let g2 = g * g;
        PhiVector([0.5 * (one - g2) * eta, 0.5 * i * (one + g2) * eta, g * eta])
    }

    /// Bilinear `φ·φ`.
    pub fn dot_self(&self) -> Complex64 {
        self.0.iter().map(|v| v * v).sum()
    }

    /// Hermitian norm.
    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn sub(&self, o: &PhiVector) -> PhiVector {
        PhiVector([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }

    /// `u·φ` for a real vector `u`.
    pub fn dot_real(&self, u: [f64; 3]) -> Complex64 {
        self.0[0] * u[0] + self.0[1] * u[1] + self.0[2] * u[2]
    }
}

/// `ψ` at a point: trace-free with zero determinant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsiMatrix(pub Mat2);

impl PsiMatrix {
    pub fn from_data(g: Complex64, eta: Complex64) -> Self {
        let s = eta / SQRT_2;
        PsiMatrix(Mat2::new(g * s, -g * g * s, s, -g * s))
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

pub fn phi_from_wdata(w: &WData, z: Complex64) -> Result<PhiVector, WeierstrassError> {
    w.phi(z)
}

pub fn psi_from_wdata(w: &WData, z: Complex64) -> Result<PsiMatrix, WeierstrassError> {
    w.psi(z)
}

/// `ψ = (1/√2)[[φ3, φ1 + iφ2], [φ1 - iφ2, -φ3]]`.
pub fn phi_to_psi(phi: &PhiVector) -> PsiMatrix {
    let i = Complex64::new(0.0, 1.0);
    let [p1, p2, p3] = phi.0;
    PsiMatrix(Mat2::new(p3, p1 + i * p2, p1 - i * p2, -p3).scale_re(1.0 / SQRT_2))
}

pub fn psi_to_phi(psi: &PsiMatrix) -> PhiVector {
    let m = psi.0;
    let i = Complex64::new(0.0, 1.0);
    PhiVector([
        (m.a12 + m.a21) / SQRT_2,
        (m.a12 - m.a21) / (SQRT_2 * i),
        m.a11 * SQRT_2,
    ])
}

/// Pointwise Weierstrass data recovered from `φ`; `g` is `None` at poles
/// (where `η = φ1 - iφ2` vanishes but `φ` does not).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WSample {
    pub g: Option<Complex64>,
    pub eta: Complex64,
}

/// Inverts the Weierstrass formula: `η = φ1 - iφ2`, `g = φ3 / η`.
pub fn wdata_from_phi(phis: &[PhiVector]) -> Result<Vec<WSample>, WeierstrassError> {
    let i = Complex64::new(0.0, 1.0);
    let tol = 1e-14;
    let out: Vec<WSample> = phis
        .iter()
        .map(|p| {
            let eta = p.0[0] - i * p.0[1];
            let scale = p.norm().max(1e-300);
            let g = if eta.norm() > tol * scale { Some(p.0[2] / eta) } else { None };
            WSample { g, eta }
        })
        .collect();
    if out.iter().all(|s| s.g.is_none()) {
        return Err(WeierstrassError::DegenerateData);
    }
    Ok(out)
}

/// Samples of the conformal factor on a polar grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricField {
    pub grid: PolarGrid,
    pub values: Vec<f64>,
}

impl MetricField {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

/// `λ = (1 + |g|²)|η|/√2` on every grid node; errors if any sample falls at
/// or below `floor`.
pub fn conformal_factor(w: &WData, grid: &PolarGrid, floor: f64) -> Result<MetricField, WeierstrassError> {
    use rayon::prelude::*;
    let values = (0..grid.len())
        .into_par_iter()
        .map_init(
            || w.evaluator(),
            |ev, idx| {
                let z = grid.point(idx);
                let l = ev.lambda(z)?;
                if !(l > floor) {
                    return Err(WeierstrassError::Degenerate { z, lambda: l });
                }
                Ok(l)
            },
        )
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MetricField { grid: *grid, values })
}

/// Applies a real rotation componentwise to `φ`.
pub fn rotate_frame(phi: &PhiVector, r: &[[f64; 3]; 3]) -> Result<PhiVector, WeierstrassError> {
    check_rotation(r)?;
    let mut out = [Complex64::new(0.0, 0.0); 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = phi.0[0] * r[k][0] + phi.0[1] * r[k][1] + phi.0[2] * r[k][2];
    }
    Ok(PhiVector(out))
}

pub fn check_rotation(r: &[[f64; 3]; 3]) -> Result<(), WeierstrassError> {
    let mut residual: f64 = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let dot: f64 = (0..3).map(|k| r[k][i] * r[k][j]).sum();
            residual = residual.max((dot - if i == j { 1.0 } else { 0.0 }).abs());
        }
    }
    let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
        + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
    if residual > 1e-12 || (det - 1.0).abs() > 1e-12 {
        return Err(WeierstrassError::NotRotation { residual, det });
    }
    Ok(())
}

/// The rotation matrix realised on `φ` by [`WData::conjugate`] with `a`.
pub fn frame_rotation(a: &Sl2) -> [[f64; 3]; 3] {
    rotation_of(a)
}
