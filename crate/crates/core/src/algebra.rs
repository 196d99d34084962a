//! 2×2 complex matrices, the Hermitian matrix norm, the identification of
//! `Herm(2)` with Minkowski space `L⁴`, and hyperbolic geometry on the
//! hyperboloid model of `H³`.
//!
//! Minkowski coordinates `(x0, x1, x2, x3)` correspond to the Hermitian matrix
//!
//! ```text
//! [ x0 + x3     x1 + i x2 ]
//! [ x1 - i x2   x0 - x3   ]
//! ```
//!
//! and the Lorentz pairing is `x0 y0 - x1 y1 - x2 y2 - x3 y3`. `H³` is the
//! upper sheet of `{<x, x> = 1}`, i.e. the unit-determinant positive
//! Hermitian matrices `a a*`.

use std::ops::{Add, Mul, Neg, Sub};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance on `|det - 1|` for [`Sl2`] and on the hyperboloid equation.
pub const STRUCTURAL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("matrix is not in SL(2,C): |det - 1| = {residual:e}")]
    NotUnimodular { residual: f64 },
    #[error("point is not on the hyperboloid: |<x,x> - 1| = {residual:e}, x0 = {x0}")]
    NotOnHyperboloid { residual: f64, x0: f64 },
    #[error("plane normal is not a unit spacelike vector: residual {residual:e}")]
    BadNormal { residual: f64 },
    #[error("plane does not pass through the given point: |<p,n>| = {residual:e}")]
    PointNotOnPlane { residual: f64 },
    #[error("matrix is singular")]
    Singular,
}

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// A 2×2 complex matrix, stored row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat2 {
    pub a11: Complex64,
    pub a12: Complex64,
    pub a21: Complex64,
    pub a22: Complex64,
}

impl Mat2 {
    pub const fn new(a11: Complex64, a12: Complex64, a21: Complex64, a22: Complex64) -> Self {
        Mat2 { a11, a12, a21, a22 }
    }

    pub const fn identity() -> Self {
        Mat2::new(ONE, ZERO, ZERO, ONE)
    }

    pub const fn zero() -> Self {
        Mat2::new(ZERO, ZERO, ZERO, ZERO)
    }

    pub fn diag(d1: Complex64, d2: Complex64) -> Self {
        Mat2::new(d1, ZERO, ZERO, d2)
    }

    /// The nilpotent `E21 = [[0,0],[1,0]]`.
    pub fn e21() -> Self {
        Mat2::new(ZERO, ZERO, ONE, ZERO)
    }

    pub fn from_real(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Mat2::new(a11.into(), a12.into(), a21.into(), a22.into())
    }

    pub fn det(&self) -> Complex64 {
        self.a11 * self.a22 - self.a12 * self.a21
    }

    pub fn trace(&self) -> Complex64 {
        self.a11 + self.a22
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> Self {
        Mat2::new(self.a11.conj(), self.a21.conj(), self.a12.conj(), self.a22.conj())
    }

    /// `adj(A)`; equals `A⁻¹` when `det A = 1`.
    pub fn adjugate(&self) -> Self {
        Mat2::new(self.a22, -self.a12, -self.a21, self.a11)
    }

    pub fn inverse(&self) -> Result<Self, AlgebraError> {
        let d = self.det();
        if d.norm() == 0.0 {
            return Err(AlgebraError::Singular);
        }
        Ok(self.adjugate().scale(d.inv()))
    }

    pub fn scale(&self, s: Complex64) -> Self {
        Mat2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    pub fn scale_re(&self, s: f64) -> Self {
        Mat2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.a11.norm_sqr() + self.a12.norm_sqr() + self.a21.norm_sqr() + self.a22.norm_sqr()
    }

    /// `|A| = sqrt(trace(A A*))`.
    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn apply(&self, x: [Complex64; 2]) -> [Complex64; 2] {
        [self.a11 * x[0] + self.a12 * x[1], self.a21 * x[0] + self.a22 * x[1]]
    }

    pub fn is_finite(&self) -> bool {
        [self.a11, self.a12, self.a21, self.a22].iter().all(|c| c.re.is_finite() && c.im.is_finite())
    }

    pub fn entries(&self) -> [Complex64; 4] {
        [self.a11, self.a12, self.a21, self.a22]
    }
}

impl Add for Mat2 {
    type Output = Mat2;
    fn add(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 + o.a11, self.a12 + o.a12, self.a21 + o.a21, self.a22 + o.a22)
    }
}

impl Sub for Mat2 {
    type Output = Mat2;
    fn sub(self, o: Mat2) -> Mat2 {
        Mat2::new(self.a11 - o.a11, self.a12 - o.a12, self.a21 - o.a21, self.a22 - o.a22)
    }
}

impl Neg for Mat2 {
    type Output = Mat2;
    fn neg(self) -> Mat2 {
        self.scale_re(-1.0)
    }
}

impl Mul for Mat2 {
    type Output = Mat2;
    fn mul(self, o: Mat2) -> Mat2 {
        Mat2::new(
            self.a11 * o.a11 + self.a12 * o.a21,
            self.a11 * o.a12 + self.a12 * o.a22,
            self.a21 * o.a11 + self.a22 * o.a21,
            self.a21 * o.a12 + self.a22 * o.a22,
        )
    }
}

/// `|A| = sqrt(Σ |a_ij|²)`.
pub fn matrix_norm(a: &Mat2) -> f64 {
    a.norm()
}

/// An element of `SL(2,C)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Mat2", into = "Mat2")]
pub struct Sl2(Mat2);

impl Sl2 {
    pub fn new(m: Mat2) -> Result<Self, AlgebraError> {
        Self::with_tolerance(m, STRUCTURAL_TOL)
    }

    pub fn with_tolerance(m: Mat2, tol: f64) -> Result<Self, AlgebraError> {
        let residual = (m.det() - ONE).norm();
        if !(residual <= tol) || !m.is_finite() {
            return Err(AlgebraError::NotUnimodular { residual });
        }
        Ok(Sl2(m))
    }

    pub fn identity() -> Self {
        Sl2(Mat2::identity())
    }

    /// Divides by a square root of the determinant. The root closest to
    /// `reference` (usually 1) is used so that repeated renormalisation along a
    /// path never flips sign.
    pub fn renormalize(m: Mat2, reference: Complex64) -> Result<Self, AlgebraError> {
        let d = m.det();
        if d.norm() == 0.0 {
            return Err(AlgebraError::Singular);
        }
        let mut root = d.sqrt();
        if (root - reference).norm() > (-root - reference).norm() {
            root = -root;
        }
        Sl2::new(m.scale(root.inv()))
    }

    pub fn matrix(&self) -> &Mat2 {
        &self.0
    }

    pub fn inverse(&self) -> Sl2 {
        Sl2(self.0.adjugate())
    }

    pub fn adjoint(&self) -> Sl2 {
        Sl2(self.0.adjoint())
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    /// Diagonal element `diag(l, 1/l)`.
    pub fn diagonal(l: Complex64) -> Self {
        Sl2(Mat2::diag(l, l.inv()))
    }

    /// An element of `SU(2)`: `[[α, β], [-β̄, ᾱ]]` with `|α|² + |β|² = 1`.
    pub fn su2(alpha: Complex64, beta: Complex64) -> Result<Self, AlgebraError> {
        Sl2::new(Mat2::new(alpha, beta, -beta.conj(), alpha.conj()))
    }

    /// `exp(-i θ/2 (n·σ))` for a unit axis `n`: the spin lift of the rotation of
    /// angle `θ` about `n` acting by conjugation on `Herm(2)`.
    pub fn su2_axis_angle(axis: [f64; 3], theta: f64) -> Sl2 {
        let len = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
        let (nx, ny, nz) = (axis[0] / len, axis[1] / len, axis[2] / len);
        let (s, c) = (theta / 2.0).sin_cos();
        // σ1 = [[0,1],[1,0]], σ2' = [[0,i],[-i,0]], σ3 = diag(1,-1) in the
        // Herm(2) embedding used throughout.
        let alpha = Complex64::new(c, -s * nz);
        let beta = Complex64::new(0.0, -s) * Complex64::new(nx, ny);
        Sl2(Mat2::new(alpha, beta, -beta.conj(), alpha.conj()))
    }

    pub fn is_unitary(&self, tol: f64) -> bool {
        (self.0 * self.0.adjoint() - Mat2::identity()).norm() <= tol
    }

    /// A random element with entries of moderate size.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, spread: f64) -> Sl2 {
        loop {
            let mut c = || Complex64::new(rng.gen_range(-spread..spread), rng.gen_range(-spread..spread));
            let (a, b, cc) = (c(), c(), c());
            if a.norm() < 0.2 {
                continue;
            }
            let d = (ONE + b * cc) / a;
            let m = Mat2::new(a, b, cc, d);
            if let Ok(s) = Sl2::new(m) {
                return s;
            }
        }
    }

    /// A uniformly distributed element of `SU(2)`.
    pub fn random_su2<R: Rng + ?Sized>(rng: &mut R) -> Sl2 {
        loop {
            let q: [f64; 4] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ];
            let n2: f64 = q.iter().map(|v| v * v).sum();
            if n2 > 1.0 || n2 < 1e-6 {
                continue;
            }
            let n = n2.sqrt();
            let alpha = Complex64::new(q[0] / n, q[1] / n);
            let beta = Complex64::new(q[2] / n, q[3] / n);
            return Sl2(Mat2::new(alpha, beta, -beta.conj(), alpha.conj()));
        }
    }
}

impl From<Sl2> for Mat2 {
    fn from(s: Sl2) -> Mat2 {
        s.0
    }
}

impl TryFrom<Mat2> for Sl2 {
    type Error = AlgebraError;
    fn try_from(m: Mat2) -> Result<Self, Self::Error> {
        Sl2::new(m)
    }
}

impl Mul for Sl2 {
    type Output = Sl2;
    fn mul(self, o: Sl2) -> Sl2 {
        Sl2(self.0 * o.0)
    }
}

/// A point of Minkowski space `L⁴ ≅ Herm(2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HermPoint {
    pub x0: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl HermPoint {
    pub const fn new(x0: f64, x1: f64, x2: f64, x3: f64) -> Self {
        HermPoint { x0, x1, x2, x3 }
    }

    /// Reads the Minkowski coordinates of a Hermitian matrix. Anti-Hermitian
    /// parts are discarded.
    pub fn from_hermitian(h: &Mat2) -> Self {
        let x0 = 0.5 * (h.a11.re + h.a22.re);
        let x3 = 0.5 * (h.a11.re - h.a22.re);
        let off = 0.5 * (h.a12 + h.a21.conj());
        HermPoint::new(x0, off.re, off.im, x3)
    }

    pub fn to_hermitian(&self) -> Mat2 {
        Mat2::new(
            Complex64::new(self.x0 + self.x3, 0.0),
            Complex64::new(self.x1, self.x2),
            Complex64::new(self.x1, -self.x2),
            Complex64::new(self.x0 - self.x3, 0.0),
        )
    }

    /// Lorentz pairing `x0 y0 - x1 y1 - x2 y2 - x3 y3`.
    pub fn lorentz(&self, o: &HermPoint) -> f64 {
        self.x0 * o.x0 - self.x1 * o.x1 - self.x2 * o.x2 - self.x3 * o.x3
    }

    pub fn spatial(&self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn scaled(&self, s: f64) -> HermPoint {
        HermPoint::new(self.x0 * s, self.x1 * s, self.x2 * s, self.x3 * s)
    }

    pub fn plus(&self, o: &HermPoint) -> HermPoint {
        HermPoint::new(self.x0 + o.x0, self.x1 + o.x1, self.x2 + o.x2, self.x3 + o.x3)
    }

    pub fn euclidean_norm(&self) -> f64 {
        (self.x0 * self.x0 + self.x1 * self.x1 + self.x2 * self.x2 + self.x3 * self.x3).sqrt()
    }
}

/// A point of `H³ = {<x,x> = 1, x0 > 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H3Point(HermPoint);

impl H3Point {
    pub fn new(p: HermPoint) -> Result<Self, AlgebraError> {
        let residual = (p.lorentz(&p) - 1.0).abs();
        if !(residual <= STRUCTURAL_TOL * p.x0.abs().max(1.0).powi(2)) || !(p.x0 > 0.0) {
            return Err(AlgebraError::NotOnHyperboloid { residual, x0: p.x0 });
        }
        Ok(H3Point(p))
    }

    /// Rescales a future-timelike vector onto the hyperboloid.
    pub fn normalize(p: HermPoint) -> Result<Self, AlgebraError> {
        let q = p.lorentz(&p);
        if !(q > 0.0) || !(p.x0 > 0.0) {
            return Err(AlgebraError::NotOnHyperboloid { residual: (q - 1.0).abs(), x0: p.x0 });
        }
        H3Point::new(p.scaled(q.sqrt().recip()))
    }

    /// The base point `o = (1, 0, 0, 0)`, i.e. the identity matrix.
    pub fn origin() -> Self {
        H3Point(HermPoint::new(1.0, 0.0, 0.0, 0.0))
    }

    pub fn coords(&self) -> &HermPoint {
        &self.0
    }

    /// The point at distance `t` from `o` in the unit spatial direction `dir`.
    pub fn along(dir: [f64; 3], t: f64) -> Self {
        let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        let (c, s) = (t.cosh(), t.sinh() / n);
        H3Point(HermPoint::new(c, s * dir[0], s * dir[1], s * dir[2]))
    }

    /// `a p a*`, the isometric action of `SL(2,C)`.
    pub fn act(&self, a: &Sl2) -> H3Point {
        let m = *a.matrix() * self.0.to_hermitian() * a.matrix().adjoint();
        H3Point(HermPoint::from_hermitian(&m))
    }

    /// Poincaré ball coordinates `(x1, x2, x3) / (1 + x0)`.
    pub fn to_ball(&self) -> [f64; 3] {
        let d = 1.0 + self.0.x0;
        [self.0.x1 / d, self.0.x2 / d, self.0.x3 / d]
    }
}

/// `A A*` as a point of `H³`.
pub fn to_h3(a: &Sl2) -> H3Point {
    let m = *a.matrix() * a.matrix().adjoint();
    H3Point(HermPoint::from_hermitian(&m))
}

/// `cosh⁻¹ <p, q>`.
pub fn dist_h3(p: &H3Point, q: &H3Point) -> f64 {
    p.0.lorentz(&q.0).max(1.0).acosh()
}

/// `| |A⁻¹B|² - 2 cosh dist(AA*, BB*) |`. The identity holds with the square
/// on the norm; at `A = B = id` both sides equal 2.
pub fn norm_dist_check(a: &Sl2, b: &Sl2) -> f64 {
    let lhs = (a.inverse() * *b).matrix().norm_sqr();
    let rhs = 2.0 * dist_h3(&to_h3(a), &to_h3(b)).cosh();
    (lhs - rhs).abs()
}

/// A totally geodesic plane `{x ∈ H³ : <x, n> = 0}` for a unit spacelike
/// normal `n` (`<n, n> = -1` in the pairing above).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeodesicPlane {
    n: HermPoint,
}

impl GeodesicPlane {
    pub fn new(n: HermPoint) -> Result<Self, AlgebraError> {
        let residual = (n.lorentz(&n) + 1.0).abs();
        if !(residual <= STRUCTURAL_TOL) {
            return Err(AlgebraError::BadNormal { residual });
        }
        Ok(GeodesicPlane { n })
    }

    /// Normalises any spacelike vector.
    pub fn from_spacelike(n: HermPoint) -> Result<Self, AlgebraError> {
        let q = -n.lorentz(&n);
        if !(q > 0.0) {
            return Err(AlgebraError::BadNormal { residual: (q - 1.0).abs() });
        }
        GeodesicPlane::new(n.scaled(q.sqrt().recip()))
    }

    /// `{x3 = 0} ∩ H³`.
    pub fn x3_zero() -> Self {
        GeodesicPlane { n: HermPoint::new(0.0, 0.0, 0.0, 1.0) }
    }

    /// The plane through `through` perpendicular to the geodesic joining
    /// `from` and `through`. Degenerate (`from == through`) input yields the
    /// plane through `through` with normal along `x3`-translate.
    pub fn orthogonal_to_geodesic(from: &H3Point, through: &H3Point) -> Result<Self, AlgebraError> {
        let c = from.0.lorentz(&through.0);
        let v = from.0.plus(&through.0.scaled(-c));
        if -v.lorentz(&v) < 1e-24 {
            let n = HermPoint::new(0.0, 0.0, 0.0, 1.0);
            let t = through.0;
            // tangent at `through` closest to e3
            let w = n.plus(&t.scaled(t.lorentz(&n)));
            return GeodesicPlane::from_spacelike(w);
        }
        GeodesicPlane::from_spacelike(v)
    }

    pub fn normal(&self) -> &HermPoint {
        &self.n
    }

    pub fn signed_pairing(&self, p: &H3Point) -> f64 {
        p.0.lorentz(&self.n)
    }

    pub fn contains(&self, p: &H3Point, tol: f64) -> bool {
        self.signed_pairing(p).abs() <= tol
    }

    pub fn act(&self, a: &Sl2) -> GeodesicPlane {
        let m = *a.matrix() * self.n.to_hermitian() * a.matrix().adjoint();
        GeodesicPlane { n: HermPoint::from_hermitian(&m) }
    }
}

/// `sinh⁻¹ |<p, n>|`.
pub fn dist_to_plane(p: &H3Point, plane: &GeodesicPlane) -> f64 {
    plane.signed_pairing(p).abs().asinh()
}

/// The closest point of `plane` to `p`.
pub fn perpendicular_foot(p: &H3Point, plane: &GeodesicPlane) -> H3Point {
    let s = plane.signed_pairing(p);
    if s == 0.0 {
        return *p;
    }
    let q = p.0.plus(&plane.n.scaled(s));
    H3Point(q.scaled((1.0 + s * s).sqrt().recip()))
}

/// An element `a ∈ SU(2)` with `a p a*` in the `x0 x3`-plane and `x3 ≥ 0`.
/// Returns the identity for `p = o`.
pub fn align_su2(p: &H3Point) -> Sl2 {
    let [x1, x2, x3] = p.0.spatial();
    let r = (x1 * x1 + x2 * x2 + x3 * x3).sqrt();
    if r == 0.0 {
        return Sl2::identity();
    }
    // unit eigenvector of the traceless part for the eigenvalue +r
    let (u1, u2) = if x3 >= 0.0 {
        (Complex64::new(x3 + r, 0.0), Complex64::new(x1, -x2))
    } else {
        (Complex64::new(x1, x2), Complex64::new(r - x3, 0.0))
    };
    let n = (u1.norm_sqr() + u2.norm_sqr()).sqrt();
    let (u1, u2) = (u1 / n, u2 / n);
    Sl2(Mat2::new(u1.conj(), u2.conj(), -u2, u1))
}

/// Angle in `[0, π/2]` between two planes meeting at `at`.
pub fn plane_angle(p1: &GeodesicPlane, p2: &GeodesicPlane, at: &H3Point) -> Result<f64, AlgebraError> {
    let tol = 1e-8 * at.0.x0.max(1.0);
    for p in [p1, p2] {
        let residual = p.signed_pairing(at).abs();
        if residual > tol {
            return Err(AlgebraError::PointNotOnPlane { residual });
        }
    }
    let c = (-p1.n.lorentz(&p2.n)).abs().min(1.0);
    Ok(c.acos())
}

/// The rotation of `R³ ⊂ Herm(2)` induced by conjugation with `a ∈ SU(2)`:
/// `a σ(x) a* = σ(R x)` with `σ(x) = [[x3, x1 + i x2], [x1 - i x2, -x3]]`.
pub fn rotation_of(a: &Sl2) -> [[f64; 3]; 3] {
    let basis = [
        HermPoint::new(0.0, 1.0, 0.0, 0.0),
        HermPoint::new(0.0, 0.0, 1.0, 0.0),
        HermPoint::new(0.0, 0.0, 0.0, 1.0),
    ];
    let mut r = [[0.0; 3]; 3];
    for (l, e) in basis.iter().enumerate() {
        let img = HermPoint::from_hermitian(&(*a.matrix() * e.to_hermitian() * a.matrix().adjoint()));
        let s = img.spatial();
        for k in 0..3 {
            r[k][l] = s[k];
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn norm_examples() {
        assert!((Mat2::identity().norm() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(Mat2::zero().norm(), 0.0);
        let d = Mat2::diag(c(2.0, 0.0), c(0.5, 0.0));
        assert!((d.norm() - 4.25f64.sqrt()).abs() < 1e-15);
        assert!((d.norm() - 2.06155).abs() < 1e-5);
    }

    #[test]
    fn to_h3_examples() {
        assert_eq!(*to_h3(&Sl2::identity()).coords(), HermPoint::new(1.0, 0.0, 0.0, 0.0));
        let a = Sl2::diagonal(c(2f64.sqrt(), 0.0));
        let p = to_h3(&a);
        let e = HermPoint::new(1.25, 0.0, 0.0, 0.75);
        assert!((p.coords().x0 - e.x0).abs() < 1e-14 && (p.coords().x3 - e.x3).abs() < 1e-14);
        // 2 cosh dist = λ + 1/λ with λ = 2
        assert!((2.0 * dist_h3(&H3Point::origin(), &p).cosh() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn random_to_h3_on_hyperboloid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let a = Sl2::random(&mut rng, 1.5);
            let p = to_h3(&a);
            let q = p.coords();
            let det = q.lorentz(q);
            assert!((det - 1.0).abs() < 1e-9 * q.x0.max(1.0).powi(2));
            assert!(q.x0 > 0.0);
        }
    }

    #[test]
    fn distance_examples() {
        let o = H3Point::origin();
        assert_eq!(dist_h3(&o, &o), 0.0);
        let p = H3Point::new(HermPoint::new(1f64.cosh(), 0.0, 0.0, 1f64.sinh())).unwrap();
        assert!((dist_h3(&o, &p) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn norm_dist_identity() {
        assert!(norm_dist_check(&Sl2::identity(), &Sl2::identity()) < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let a = Sl2::random(&mut rng, 1.2);
            let b = Sl2::random(&mut rng, 1.2);
            assert!(norm_dist_check(&a, &Sl2::identity()) < 1e-8);
            assert!(norm_dist_check(&a, &b) < 1e-8, "{}", norm_dist_check(&a, &b));
        }
    }

    #[test]
    fn plane_distance_and_foot() {
        let plane = GeodesicPlane::x3_zero();
        let o = H3Point::origin();
        assert_eq!(dist_to_plane(&o, &plane), 0.0);
        assert_eq!(perpendicular_foot(&o, &plane), o);
        let t: f64 = 0.3;
        let p = H3Point::new(HermPoint::new(t.cosh(), 0.0, 0.0, t.sinh())).unwrap();
        assert!((dist_to_plane(&p, &plane) - 0.3).abs() < 1e-14);
        let q = perpendicular_foot(&p, &plane);
        assert!(dist_h3(&q, &o) < 1e-7);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = to_h3(&Sl2::random(&mut rng, 1.0));
            let anchor = to_h3(&Sl2::random(&mut rng, 1.0));
            let pl = GeodesicPlane::orthogonal_to_geodesic(&o, &anchor).unwrap();
            let q = perpendicular_foot(&p, &pl);
            assert!(pl.contains(&q, 1e-9));
            assert!((dist_h3(&p, &q) - dist_to_plane(&p, &pl)).abs() < 1e-8);
            // q minimises the distance: nearby plane points are farther
            let other = perpendicular_foot(&anchor, &pl);
            assert!(dist_h3(&p, &other) + 1e-12 >= dist_h3(&p, &q));
        }
    }

    #[test]
    fn hyperbolic_pythagoras() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let plane = GeodesicPlane::x3_zero();
        for _ in 0..200 {
            let p = to_h3(&Sl2::random(&mut rng, 1.0));
            let q = perpendicular_foot(&p, &plane);
            // r on the plane, along a geodesic from q inside the plane
            let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let t: f64 = rng.gen_range(0.0..1.5);
            let qc = q.coords();
            let tangent = HermPoint::new(0.0, theta.cos(), theta.sin(), 0.0);
            let tangent = tangent.plus(&qc.scaled(-qc.lorentz(&tangent)));
            let tn = (-tangent.lorentz(&tangent)).sqrt();
            let r = H3Point::normalize(qc.scaled(t.cosh()).plus(&tangent.scaled(t.sinh() / tn))).unwrap();
            assert!(plane.contains(&r, 1e-9));
            let lhs = dist_h3(&p, &r).cosh();
            let rhs = dist_h3(&p, &q).cosh() * dist_h3(&q, &r).cosh();
            assert!((lhs - rhs).abs() < 1e-7 * rhs, "{lhs} {rhs}");
        }
    }

    #[test]
    fn align_examples() {
        let p = H3Point::along([0.0, 0.0, 1.0], 0.7);
        assert_eq!(align_su2(&p), Sl2::identity());
        assert_eq!(align_su2(&H3Point::origin()), Sl2::identity());

        let t: f64 = 0.4;
        let p = H3Point::new(HermPoint::new(t.cosh(), t.sinh(), 0.0, 0.0)).unwrap();
        let a = align_su2(&p);
        let q = p.act(&a);
        assert!(q.coords().x1.abs() < 1e-12 && q.coords().x2.abs() < 1e-12);
        assert!((q.coords().x3 - t.sinh()).abs() < 1e-12);
        assert!((a.norm() - 2f64.sqrt()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..500 {
            let p = to_h3(&Sl2::random(&mut rng, 1.3));
            let a = align_su2(&p);
            assert!(a.is_unitary(1e-12));
            let q = p.act(&a);
            assert!(q.coords().x1.abs() < 1e-9 && q.coords().x2.abs() < 1e-9);
            assert!(q.coords().x3 >= 0.0);
            let o = H3Point::origin();
            assert!((dist_h3(&o, &q) - dist_h3(&o, &p)).abs() < 1e-9);
        }
    }

    #[test]
    fn plane_angles() {
        let o = H3Point::origin();
        let pz = GeodesicPlane::x3_zero();
        let px = GeodesicPlane::new(HermPoint::new(0.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(plane_angle(&pz, &pz, &o).unwrap(), 0.0);
        assert!((plane_angle(&pz, &px, &o).unwrap() - std::f64::consts::FRAC_PI_2).abs() < 1e-15);
        let far = H3Point::along([0.0, 0.0, 1.0], 1.0);
        assert!(matches!(plane_angle(&pz, &px, &far), Err(AlgebraError::PointNotOnPlane { .. })));
    }

    #[test]
    fn sine_law_right_triangle() {
        // right angle at v: o, h on one geodesic from o; v the foot of h on
        // another geodesic through o
        let o = H3Point::origin();
        let h = H3Point::along([0.2, -0.4, 1.0], 0.9);
        let dir: [f64; 3] = [0.5, 0.1, 0.8];
        let hc = h.coords();
        let n = (dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]).sqrt();
        let proj = (hc.x1 * dir[0] + hc.x2 * dir[1] + hc.x3 * dir[2]) / n;
        let s = (proj / hc.x0).atanh();
        let v = H3Point::along(dir, s);
        let theta = {
            let a = hc.spatial();
            let an = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            ((a[0] * dir[0] + a[1] * dir[1] + a[2] * dir[2]) / (an * n)).acos()
        };
        let lhs = theta.sin();
        let rhs = dist_h3(&h, &v).sinh() / dist_h3(&o, &h).sinh();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn submultiplicative_and_unitary_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..1000 {
            let a = Sl2::random(&mut rng, 2.0);
            let b = Sl2::random(&mut rng, 2.0);
            let (am, bm) = (*a.matrix(), *b.matrix());
            assert!((am * bm).norm() <= am.norm() * bm.norm() * (1.0 + 1e-12));
            let x = [c(rng.gen_range(-1.0..1.0), 0.3), c(0.2, rng.gen_range(-1.0..1.0))];
            let ax = am.apply(x);
            let nx = (x[0].norm_sqr() + x[1].norm_sqr()).sqrt();
            assert!((ax[0].norm_sqr() + ax[1].norm_sqr()).sqrt() <= am.norm() * nx * (1.0 + 1e-12));
            let u = Sl2::random_su2(&mut rng);
            let conj = *u.matrix() * am * u.matrix().adjoint();
            assert!((conj.norm() - am.norm()).abs() <= 1e-12 * am.norm());
        }
    }

    #[test]
    fn isometric_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..500 {
            let a = Sl2::random(&mut rng, 1.0);
            let p = to_h3(&Sl2::random(&mut rng, 1.0));
            let q = to_h3(&Sl2::random(&mut rng, 1.0));
            let d0 = dist_h3(&p, &q);
            let d1 = dist_h3(&p.act(&a), &q.act(&a));
            assert!((d0 - d1).abs() < 1e-8);
        }
    }

    #[test]
    fn rotation_matches_axis_angle() {
        let a = Sl2::su2_axis_angle([0.0, 0.0, 1.0], std::f64::consts::FRAC_PI_2);
        let r = rotation_of(&a);
        // rotation by π/2 about x3 maps e1 to ±e2 and fixes e3
        assert!((r[2][2] - 1.0).abs() < 1e-14);
        assert!((r[1][0].abs() - 1.0).abs() < 1e-14);
        let a = Sl2::su2_axis_angle([1.0, 0.0, 0.0], 0.3);
        let r = rotation_of(&a);
        assert!((r[2][2] - 0.3f64.cos()).abs() < 1e-14);
    }
}
