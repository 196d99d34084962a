//! Complete null curves in `C³` and `SL(2,C)` and the Bryant surfaces
//! they induce in hyperbolic space, built by iterated Runge-type
//! deformations of Weierstrass data.

pub mod algebra;
pub mod appendix;
pub mod construction;
pub mod deformation;
pub mod grid;
pub mod holo;
pub mod integrator;
pub mod labyrinth;
pub mod transforms;
pub mod weierstrass;

pub use num_complex::Complex64;
