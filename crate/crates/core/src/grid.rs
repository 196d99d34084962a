//! Polar sampling grids on the closed unit disc.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Rings `i = 1..=radial` at radius `radius · i / radial`, each with
/// `angular` equally spaced nodes, plus a centre node (index 0).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolarGrid {
    pub radial: usize,
    pub angular: usize,
}

impl Default for PolarGrid {
    fn default() -> Self {
        PolarGrid { radial: 256, angular: 512 }
    }
}

impl PolarGrid {
    pub fn new(radial: usize, angular: usize) -> Self {
        assert!(radial >= 1 && angular >= 3, "polar grid needs at least one ring of three nodes");
        PolarGrid { radial, angular }
    }

    pub fn len(&self) -> usize {
        1 + self.radial * self.angular
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Node index for ring `i ≥ 1` and angle index `k` (taken mod `angular`).
    pub fn index(&self, ring: usize, k: usize) -> usize {
        debug_assert!(ring >= 1 && ring <= self.radial);
        1 + (ring - 1) * self.angular + k % self.angular
    }

    pub fn ring_radius(&self, ring: usize) -> f64 {
        ring as f64 / self.radial as f64
    }

    pub fn angle(&self, k: usize) -> f64 {
        TAU * k as f64 / self.angular as f64
    }

    /// `(ring, angle index)` of a node; the centre reports ring 0.
    pub fn ring_and_angle(&self, idx: usize) -> (usize, usize) {
        if idx == 0 {
            return (0, 0);
        }
        let j = idx - 1;
        (j / self.angular + 1, j % self.angular)
    }

    pub fn point(&self, idx: usize) -> Complex64 {
        if idx == 0 {
            return Complex64::new(0.0, 0.0);
        }
        let (ring, k) = self.ring_and_angle(idx);
        Complex64::from_polar(self.ring_radius(ring), self.angle(k))
    }

    pub fn points(&self) -> Vec<Complex64> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Indices of the outermost ring (`|z| = 1`).
    pub fn boundary(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.angular).map(move |k| self.index(self.radial, k))
    }

    /// Undirected edges: centre spokes, radial edges, and angular chords.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e = Vec::with_capacity(self.angular * (2 * self.radial + 1));
        for k in 0..self.angular {
            e.push((0, self.index(1, k)));
        }
        for ring in 1..=self.radial {
            for k in 0..self.angular {
                e.push((self.index(ring, k), self.index(ring, k + 1)));
                if ring < self.radial {
                    e.push((self.index(ring, k), self.index(ring + 1, k)));
                }
            }
        }
        e
    }

    /// Triangles and quads of the grid for mesh export (centre fan as
    /// degenerate quads).
    pub fn faces(&self) -> Vec<[usize; 4]> {
        let mut f = Vec::new();
        for k in 0..self.angular {
            f.push([0, self.index(1, k), self.index(1, k + 1), 0]);
        }
        for ring in 1..self.radial {
            for k in 0..self.angular {
                f.push([
                    self.index(ring, k),
                    self.index(ring + 1, k),
                    self.index(ring + 1, k + 1),
                    self.index(ring, k + 1),
                ]);
            }
        }
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indexing_round_trips() {
        let g = PolarGrid::new(4, 6);
        assert_eq!(g.len(), 25);
        for idx in 1..g.len() {
            let (r, k) = g.ring_and_angle(idx);
            assert_eq!(g.index(r, k), idx);
        }
        assert!((g.point(g.index(4, 0)) - Complex64::new(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(g.boundary().count(), 6);
        assert_eq!(g.edges().len(), 6 + 4 * 6 + 3 * 6);
    }
}
