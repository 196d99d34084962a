//! The labyrinth on the unit disc: `2N²` thin annuli between the radii
//! `r_k = 1 - k/N³`, walled by circles and by radial cuts, and the sector
//! sets `ω_j ⊂ ϖ_j` used by the deformation step.
//!
//! Walls: every circle `|z| = r_k`; on even annuli (`r_{k+1} < |z| < r_k`,
//! `k` even) the rays at angles `2mπ/N`; on odd annuli the rays at
//! `(2m+1)π/N`. A component of `Ω` is then the part of one annulus between
//! two consecutive cuts, kept `δ = 1/(4N³)` away from every wall.

use std::f64::consts::PI;

use num_complex::Complex64;
use num_rational::Ratio;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance slack below `δ` tolerated for path vertices.
pub const PATH_SLACK: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabyrinthError {
    #[error("labyrinth needs N >= 4, got {0}")]
    TooSmall(u32),
    #[error("N = {0} is too large for exact radii")]
    TooLarge(u32),
    #[error("sector index {j} outside 1..={max}")]
    BadSector { j: u32, max: u32 },
    #[error("component ({band}, {slot}) is not claimed by any sector")]
    Unclaimed { band: u32, slot: u32 },
    #[error("endpoint {0} lies inside the neighbourhood of the sector")]
    EndpointInside(Complex64),
    #[error("no path found from {from} to {to}")]
    NoPath { from: Complex64, to: Complex64 },
}

/// Identifies a component of `Ω`: annulus `band` (between `r_{band+1}` and
/// `r_band`) and the cut interval `slot` within it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Component {
    pub band: u32,
    pub slot: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Labyrinth {
    n: u32,
    radii_exact: Vec<Ratio<i64>>,
    radii: Vec<f64>,
    delta: f64,
}

impl Labyrinth {
    pub fn build(n: u32) -> Result<Labyrinth, LabyrinthError> {
        if n < 4 {
            return Err(LabyrinthError::TooSmall(n));
        }
        if n > 10_000 {
            return Err(LabyrinthError::TooLarge(n));
        }
        let n3 = (n as i64).pow(3);
        let count = 2 * (n as i64).pow(2);
        let radii_exact: Vec<Ratio<i64>> = (0..=count).map(|k| Ratio::new(n3 - k, n3)).collect();
        let radii = radii_exact.iter().map(ratio_to_f64).collect();
        let delta = ratio_to_f64(&Ratio::new(1, 4 * n3));
        let lab = Labyrinth { n, radii_exact, radii, delta };
        lab.audit_coverage()?;
        Ok(lab)
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    /// Number of annuli, `2N²`.
    pub fn bands(&self) -> u32 {
        2 * self.n * self.n
    }

    /// `r_0, …, r_{2N²}` exactly.
    pub fn radii_exact(&self) -> &[Ratio<i64>] {
        &self.radii_exact
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn radius(&self, k: usize) -> f64 {
        self.radii[k]
    }

    /// `1/(4N³)` exactly.
    pub fn delta_exact(&self) -> Ratio<i64> {
        Ratio::new(1, 4 * (self.n as i64).pow(3))
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Exact width of each component of `Ω`, `1/(2N³)`.
    pub fn corridor_width_exact(&self) -> Ratio<i64> {
        (self.radii_exact[0] - self.radii_exact[1]) - self.delta_exact() * 2
    }

    /// Inner radius of the big annulus, `1 - 2/N`.
    pub fn inner_radius(&self) -> f64 {
        *self.radii.last().unwrap()
    }

    /// `1 - 2/N - 1/(4N³)` exactly.
    pub fn zeta_modulus_exact(&self) -> Ratio<i64> {
        *self.radii_exact.last().unwrap() - self.delta_exact()
    }

    /// Angle of the ray `l_{jπ/N}`.
    pub fn ray_angle(&self, j: u32) -> f64 {
        j as f64 * PI / self.n as f64
    }

    /// Slots per annulus (`N`).
    pub fn slots(&self) -> u32 {
        self.n
    }

    /// Angles of the cuts bounding a slot; even annuli are cut at `2mπ/N`,
    /// odd annuli at `(2m+1)π/N`.
    pub fn slot_bounds(&self, c: Component) -> (f64, f64) {
        let step = PI / self.n as f64;
        let first = (2 * c.slot + c.band % 2) as f64 * step;
        (first, first + 2.0 * step)
    }

    pub fn component_radii(&self, c: Component) -> (f64, f64) {
        let k = c.band as usize;
        (self.radii[k + 1] + self.delta, self.radii[k] - self.delta)
    }

    /// `z ∈ 𝒜 = D₁ ∖ D_{1-2/N}`.
    pub fn in_big_annulus(&self, z: Complex64) -> bool {
        let r = z.norm();
        r >= self.inner_radius() && r < 1.0
    }

    /// Index of the annulus containing radius `r` (clamped to valid bands).
    fn band_of(&self, r: f64) -> u32 {
        let n3 = (self.n as f64).powi(3);
        let k = ((1.0 - r) * n3).floor();
        k.clamp(0.0, (self.bands() - 1) as f64) as u32
    }

    fn cut_angles(&self, band: u32) -> impl Iterator<Item = f64> + '_ {
        let step = PI / self.n as f64;
        (0..self.n).map(move |m| (2 * m + band % 2) as f64 * step)
    }

    /// Euclidean distance to the walls `Σ`.
    pub fn dist_to_walls(&self, z: Complex64) -> f64 {
        let r = z.norm();
        let mut d = f64::INFINITY;
        let k = ((1.0 - r) * (self.n as f64).powi(3)).floor() as i64;
        for kk in (k - 1)..=(k + 2) {
            if kk >= 0 && (kk as usize) < self.radii.len() {
                d = d.min((r - self.radii[kk as usize]).abs());
            }
        }
        for kk in (k - 1)..=(k + 1) {
            if kk < 0 || kk as u32 >= self.bands() {
                continue;
            }
            let band = kk as u32;
            let (lo, hi) = (self.radii[band as usize + 1], self.radii[band as usize]);
            for a in self.cut_angles(band) {
                let u = Complex64::from_polar(1.0, a);
                d = d.min(dist_to_segment(z, u * lo, u * hi));
            }
        }
        d
    }

    /// `z ∈ Ω = 𝒜 ∖ U_δ(Σ)`.
    pub fn in_omega(&self, z: Complex64) -> bool {
        self.in_big_annulus(z) && self.dist_to_walls(z) >= self.delta
    }

    /// The component of `Ω` containing `z`, if any.
    pub fn component_of(&self, z: Complex64) -> Option<Component> {
        if !self.in_omega(z) {
            return None;
        }
        let band = self.band_of(z.norm());
        let step = PI / self.n as f64;
        let offset = if band % 2 == 1 { step } else { 0.0 };
        let theta = (z.arg() - offset).rem_euclid(2.0 * PI);
        let slot = ((theta / (2.0 * step)).floor() as u32).min(self.n - 1);
        Some(Component { band, slot })
    }

    /// Exact Euclidean distance from `z` to a component.
    pub fn dist_to_component(&self, z: Complex64, c: Component) -> f64 {
        let (a0, a1) = self.slot_bounds(c);
        let (ri, ro) = self.component_radii(c);
        let dl = self.delta;
        let u0 = Complex64::from_polar(1.0, a0);
        let u1 = Complex64::from_polar(1.0, a1);
        let i = Complex64::new(0.0, 1.0);
        // offset lines parallel to the cuts, on the component side
        let line0 = |r: f64| u0 * ((r * r - dl * dl).sqrt()) + i * u0 * dl;
        let line1 = |r: f64| u1 * ((r * r - dl * dl).sqrt()) - i * u1 * dl;
        let inside = {
            let r = z.norm();
            let s0 = (z * u0.conj()).im;
            let s1 = -(z * u1.conj()).im;
            let mid = Complex64::from_polar(1.0, 0.5 * (a0 + a1));
            r >= ri && r <= ro && s0 >= dl && s1 >= dl && (z * mid.conj()).re > 0.0
        };
        if inside {
            return 0.0;
        }
        let arc = |r: f64| {
            let p0 = line0(r);
            let p1 = line1(r);
            dist_to_arc(z, r, p0.arg(), p1.arg())
        };
        arc(ri)
            .min(arc(ro))
            .min(dist_to_segment(z, line0(ri), line0(ro)))
            .min(dist_to_segment(z, line1(ri), line1(ro)))
    }

    /// Component midpoint (used for labelling and audits).
    pub fn component_centre(&self, c: Component) -> Complex64 {
        let (a0, a1) = self.slot_bounds(c);
        let (ri, ro) = self.component_radii(c);
        Complex64::from_polar(0.5 * (ri + ro), 0.5 * (a0 + a1))
    }

    pub fn components(&self) -> impl Iterator<Item = Component> + '_ {
        (0..self.bands()).flat_map(move |band| (0..self.n).map(move |slot| Component { band, slot }))
    }

    /// Components of `Ω` meeting the ray `l_{jπ/N}`: on annuli whose cuts do
    /// not include that ray, the slot centred on it.
    pub fn sector_components(&self, j: u32) -> Vec<Component> {
        let parity = (j + 1) % 2;
        (0..self.bands())
            .filter(|b| b % 2 == parity)
            .map(|band| {
                // slot whose centre angle is jπ/N
                let centre_index = (j % (2 * self.n)) as i64;
                let first = centre_index - 1 - (band % 2) as i64;
                let slot = (first.rem_euclid(2 * self.n as i64) / 2) as u32;
                Component { band, slot }
            })
            .collect()
    }

    /// Every component must meet some ray `l_{jπ/N}`; checked with the
    /// membership predicate along each ray.
    pub fn audit_coverage(&self) -> Result<(), LabyrinthError> {
        let mut claimed = std::collections::HashSet::new();
        for j in 1..=2 * self.n {
            let dir = Complex64::from_polar(1.0, self.ray_angle(j));
            for band in 0..self.bands() {
                let (lo, hi) = (self.radii[band as usize + 1], self.radii[band as usize]);
                if let Some(c) = self.component_of(dir * (0.5 * (lo + hi))) {
                    claimed.insert(c);
                }
            }
        }
        for c in self.components() {
            if !claimed.contains(&c) {
                return Err(LabyrinthError::Unclaimed { band: c.band, slot: c.slot });
            }
        }
        Ok(())
    }

    pub fn sector(&self, j: u32) -> Result<SectorSets, LabyrinthError> {
        if j < 1 || j > 2 * self.n {
            return Err(LabyrinthError::BadSector { j, max: 2 * self.n });
        }
        let zeta_modulus = self.zeta_modulus_exact();
        let zeta = Complex64::from_polar(ratio_to_f64(&zeta_modulus), self.ray_angle(j));
        Ok(SectorSets { lab: self.clone(), j, zeta, zeta_modulus, components: self.sector_components(j) })
    }

    /// A simple SVG drawing of the walls, optionally highlighting `ω_j`.
    pub fn to_svg(&self, highlight: Option<u32>) -> String {
        let size = 800.0;
        let s = size / 2.2;
        let c = size / 2.0;
        let mut out = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" viewBox=\"0 0 {size} {size}\">\n"
        );
        out.push_str(&format!("<circle cx=\"{c}\" cy=\"{c}\" r=\"{s}\" fill=\"none\" stroke=\"#999\" stroke-width=\"0.3\"/>\n"));
        for r in &self.radii {
            out.push_str(&format!(
                "<circle cx=\"{c}\" cy=\"{c}\" r=\"{:.4}\" fill=\"none\" stroke=\"#000\" stroke-width=\"0.2\"/>\n",
                r * s
            ));
        }
        for band in 0..self.bands() {
            let (lo, hi) = (self.radii[band as usize + 1], self.radii[band as usize]);
            for a in self.cut_angles(band) {
                let (p, q) = (Complex64::from_polar(lo, a), Complex64::from_polar(hi, a));
                out.push_str(&format!(
                    "<line x1=\"{:.4}\" y1=\"{:.4}\" x2=\"{:.4}\" y2=\"{:.4}\" stroke=\"#000\" stroke-width=\"0.4\"/>\n",
                    c + p.re * s,
                    c - p.im * s,
                    c + q.re * s,
                    c - q.im * s
                ));
            }
        }
        if let Some(j) = highlight {
            for comp in self.sector_components(j) {
                let (a0, a1) = self.slot_bounds(comp);
                let r = 0.5 * (self.radii[comp.band as usize] + self.radii[comp.band as usize + 1]);
                let (p, q) = (Complex64::from_polar(r, a0), Complex64::from_polar(r, a1));
                out.push_str(&format!(
                    "<path d=\"M {:.4} {:.4} A {:.4} {:.4} 0 0 0 {:.4} {:.4}\" fill=\"none\" stroke=\"#c00\" stroke-width=\"0.6\"/>\n",
                    c + p.re * s,
                    c - p.im * s,
                    r * s,
                    r * s,
                    c + q.re * s,
                    c - q.im * s
                ));
            }
        }
        out.push_str("</svg>\n");
        out
    }
}

fn ratio_to_f64(r: &Ratio<i64>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

pub fn dist_to_segment(z: Complex64, a: Complex64, b: Complex64) -> f64 {
    let d = b - a;
    let l2 = d.norm_sqr();
    if l2 == 0.0 {
        return (z - a).norm();
    }
    let t = (((z - a) * d.conj()).re / l2).clamp(0.0, 1.0);
    (z - (a + d * t)).norm()
}

/// Distance to the arc of radius `r` running counter-clockwise from angle
/// `a0` to `a1`.
fn dist_to_arc(z: Complex64, r: f64, a0: f64, a1: f64) -> f64 {
    let span = (a1 - a0).rem_euclid(2.0 * PI);
    let rel = (z.arg() - a0).rem_euclid(2.0 * PI);
    if z.norm() > 0.0 && rel <= span {
        (z.norm() - r).abs()
    } else {
        (z - Complex64::from_polar(r, a0)).norm().min((z - Complex64::from_polar(r, a1)).norm())
    }
}

/// `ω_j`, `ϖ_j = U_δ(ω_j)` and `ζ_j` for one sector.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorSets {
    lab: Labyrinth,
    pub j: u32,
    pub zeta: Complex64,
    pub zeta_modulus: Ratio<i64>,
    pub components: Vec<Component>,
}

/// Polyline produced by [`SectorSets::avoid_path`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabPath {
    pub vertices: Vec<Complex64>,
    pub length: f64,
}

impl SectorSets {
    pub fn labyrinth(&self) -> &Labyrinth {
        &self.lab
    }

    fn ray_dir(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.lab.ray_angle(self.j))
    }

    /// Distance from `z` to `ω_j`.
    pub fn dist_to_omega(&self, z: Complex64) -> f64 {
        let u = self.ray_dir();
        let mut d = dist_to_segment(z, u * self.lab.inner_radius(), u);
        // only components on nearby annuli can be closer than the ray
        let r = z.norm();
        for c in &self.components {
            let (ri, ro) = self.lab.component_radii(*c);
            if r - ro > d || ri - r > d {
                continue;
            }
            d = d.min(self.lab.dist_to_component(z, *c));
            if d == 0.0 {
                break;
            }
        }
        d
    }

    pub fn in_omega_j(&self, z: Complex64) -> bool {
        self.dist_to_omega(z) == 0.0 || self.on_ray(z)
    }

    fn on_ray(&self, z: Complex64) -> bool {
        let u = self.ray_dir();
        dist_to_segment(z, u * self.lab.inner_radius(), u) <= 1e-15
    }

    /// `z ∈ ϖ_j` (open `δ`-neighbourhood of `ω_j`).
    pub fn in_varpi(&self, z: Complex64) -> bool {
        self.dist_to_omega(z) < self.lab.delta
    }

    /// Membership in `ϖ_j` shrunk by [`PATH_SLACK`], so that points of `∂ϖ_j`
    /// computed in floating point count as outside.
    fn in_varpi_interior(&self, z: Complex64) -> bool {
        self.dist_to_omega(z) < self.lab.delta - PATH_SLACK
    }

    /// Random points of `ω_j` (components only) and of `ϖ_j`.
    pub fn sample_omega<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let c = self.components[rng.gen_range(0..self.components.len())];
            let (a0, a1) = self.lab.slot_bounds(c);
            let (ri, ro) = self.lab.component_radii(c);
            let z = Complex64::from_polar(rng.gen_range(ri..=ro), rng.gen_range(a0..a1));
            if self.lab.dist_to_component(z, c) == 0.0 {
                out.push(z);
            }
        }
        out
    }

    pub fn sample_varpi<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<Complex64> {
        let mut out = Vec::with_capacity(count);
        let d = self.lab.delta;
        while out.len() < count {
            let base = if rng.gen_bool(0.2) {
                self.ray_dir() * rng.gen_range(self.lab.inner_radius()..1.0)
            } else {
                self.sample_omega(rng, 1)[0]
            };
            let z = base + Complex64::from_polar(rng.gen_range(0.0..d), rng.gen_range(0.0..2.0 * PI));
            if self.in_varpi(z) {
                out.push(z);
            }
        }
        out
    }

    /// The first point of `∂ϖ_j` met when moving outward along the ray at
    /// angle `theta`, found by bisection on the membership predicate.
    pub fn inner_boundary_point(&self, theta: f64) -> Option<Complex64> {
        let dir = Complex64::from_polar(1.0, theta);
        let lo0 = self.lab.inner_radius() - 2.0 * self.lab.delta;
        let step = 0.25 * self.lab.delta;
        let mut r = lo0;
        while r < 1.0 {
            if self.in_varpi(dir * (r + step)) {
                let (mut lo, mut hi) = (r, r + step);
                for _ in 0..80 {
                    let mid = 0.5 * (lo + hi);
                    if self.in_varpi(dir * mid) {
                        hi = mid;
                    } else {
                        lo = mid;
                    }
                }
                return Some(dir * lo);
            }
            r += step;
        }
        None
    }

    /// Polyline from `from` to `to` staying outside `ϖ_j`: the straight
    /// segment when clear, otherwise a detour along the circle `|z| = ρ`
    /// below the sector with `ρ = min(|ζ_j|, |from|, |to|)`.
    pub fn avoid_path(&self, from: Complex64, to: Complex64) -> Result<LabPath, LabyrinthError> {
        for p in [from, to] {
            if self.in_varpi_interior(p) {
                return Err(LabyrinthError::EndpointInside(p));
            }
        }
        if from == to {
            return Ok(LabPath { vertices: vec![from], length: 0.0 });
        }
        if self.polyline_clear(&[from, to]) {
            return Ok(LabPath { vertices: vec![from, to], length: (to - from).norm() });
        }
        let rho = ratio_to_f64(&self.zeta_modulus).min(from.norm()).min(to.norm());
        if rho <= 0.0 {
            return Err(LabyrinthError::NoPath { from, to });
        }
        let a0 = from.arg();
        let mut span = (to.arg() - a0).rem_euclid(2.0 * PI);
        if span > PI {
            span -= 2.0 * PI;
        }
        let pieces = ((span.abs() / (PI / 720.0)).ceil() as usize).max(1);
        let mut v = vec![from];
        for k in 0..=pieces {
            v.push(Complex64::from_polar(rho, a0 + span * k as f64 / pieces as f64));
        }
        v.push(to);
        v.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
        if !self.polyline_clear(&v) {
            return Err(LabyrinthError::NoPath { from, to });
        }
        let length = v.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
        Ok(LabPath { vertices: v, length })
    }

    fn polyline_clear(&self, v: &[Complex64]) -> bool {
        let h = self.lab.delta / 8.0;
        v.windows(2).all(|w| {
            let l = (w[1] - w[0]).norm();
            let n = (l / h).ceil().max(1.0) as usize;
            (0..=n).all(|k| !self.in_varpi_interior(w[0] + (w[1] - w[0]) * (k as f64 / n as f64)))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn radii_examples() {
        let lab = Labyrinth::build(4).unwrap();
        assert_eq!(lab.radii_exact()[0], Ratio::from_integer(1));
        assert_eq!(lab.radii_exact()[1], Ratio::new(63, 64));
        assert_eq!(lab.radii_exact()[32], Ratio::new(1, 2));
        assert_eq!(lab.delta_exact(), Ratio::new(1, 256));
        assert_eq!(lab.corridor_width_exact(), Ratio::new(1, 128));
        assert_eq!(Labyrinth::build(3), Err(LabyrinthError::TooSmall(3)));
    }

    #[test]
    fn zeta_example() {
        let lab = Labyrinth::build(4).unwrap();
        let s = lab.sector(4).unwrap();
        assert!((s.zeta - Complex64::new(-0.49609375, 0.0)).norm() < 1e-15);
        assert!(lab.sector(0).is_err() && lab.sector(9).is_err());
    }

    #[test]
    fn membership_examples() {
        for n in [4, 8] {
            let lab = Labyrinth::build(n).unwrap();
            for j in 1..=2 * n {
                let s = lab.sector(j).unwrap();
                let r = 1.0 - 1.0 / n as f64;
                let on_ray = Complex64::from_polar(r, lab.ray_angle(j));
                assert!(s.in_omega_j(on_ray));
                let off = Complex64::from_polar(r, (j + 1) as f64 * PI / n as f64 + PI / (2.0 * n as f64));
                assert!(!s.in_varpi(off));
                // ζ_j lies on the boundary of ϖ_j
                assert!((s.dist_to_omega(s.zeta) - lab.delta()).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn sector_components_meet_their_ray() {
        let lab = Labyrinth::build(5).unwrap();
        for j in 1..=10 {
            let s = lab.sector(j).unwrap();
            assert_eq!(s.components.len(), lab.bands() as usize / 2);
            let u = Complex64::from_polar(1.0, lab.ray_angle(j));
            for c in &s.components {
                let (ri, ro) = lab.component_radii(*c);
                assert_eq!(lab.component_of(u * (0.5 * (ri + ro))), Some(*c));
            }
        }
    }

    #[test]
    fn component_distance_matches_brute_force() {
        let lab = Labyrinth::build(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = Component { band: 3, slot: 1 };
        let (a0, a1) = lab.slot_bounds(c);
        let (ri, ro) = lab.component_radii(c);
        // dense sample of the component
        let mut pts = Vec::new();
        for i in 0..=40 {
            for k in 0..=2000 {
                let z = Complex64::from_polar(ri + (ro - ri) * i as f64 / 40.0, a0 + (a1 - a0) * k as f64 / 2000.0);
                if lab.dist_to_component(z, c) == 0.0 {
                    pts.push(z);
                }
            }
        }
        for _ in 0..50 {
            let z = lab.component_centre(c) + Complex64::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
            let brute = pts.iter().map(|p| (p - z).norm()).fold(f64::INFINITY, f64::min);
            let exact = lab.dist_to_component(z, c);
            assert!(exact <= brute + 1e-12);
            assert!(brute - exact < 2e-3, "{brute} {exact}");
        }
    }

    #[test]
    fn sampled_omega_inside_varpi() {
        let lab = Labyrinth::build(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = lab.sector(3).unwrap();
        for z in s.sample_omega(&mut rng, 500) {
            assert!(s.in_varpi(z) && s.in_omega_j(z) && lab.in_omega(z));
        }
        for z in s.sample_varpi(&mut rng, 500) {
            assert!(s.dist_to_omega(z) < lab.delta());
        }
    }

    #[test]
    fn avoid_paths() {
        for n in [8, 16] {
            let lab = Labyrinth::build(n).unwrap();
            let s = lab.sector(3).unwrap();
            let trivial = s.avoid_path(s.zeta, s.zeta).unwrap();
            assert_eq!(trivial.length, 0.0);
            let target = s.inner_boundary_point(lab.ray_angle(3) + PI / (2.0 * n as f64)).unwrap();
            let p = s.avoid_path(s.zeta, target).unwrap();
            assert!(p.length <= 10.0 / n as f64, "{}", p.length);
            for v in &p.vertices {
                assert!(s.dist_to_omega(*v) >= lab.delta() - 1e-12);
            }
            // close to the ray on both sides the chord would cross ϖ_j
            let a = 0.5 / (n as f64).powf(1.5);
            let left = s.inner_boundary_point(lab.ray_angle(3) + a).unwrap();
            let right = s.inner_boundary_point(lab.ray_angle(3) - a).unwrap();
            let q = s.avoid_path(left, right).unwrap();
            assert!(q.vertices.len() > 2 && q.length <= 10.0 / n as f64);
        }
    }

    #[test]
    fn svg_mentions_every_wall_circle() {
        let lab = Labyrinth::build(4).unwrap();
        let svg = lab.to_svg(Some(1));
        assert_eq!(svg.matches("<circle").count(), lab.radii().len() + 1);
    }
}
