//! Simulation and verification toolkit for an SO(2)-symmetric diffusion on
//! the punctured product space `(R^2 \ {0}) x R^2`.
//!
//! The circle acts by opposite rotations on the two planes. In bundle-adapted
//! coordinates `(q*, ft1, ft2, a)` every geometric object of the reduction —
//! metric, mechanical connection, diffusion square roots, orbit metric — has a
//! closed form ([`geometry`]). On top of that sit finite-difference operator
//! checks ([`generators`]), Euler–Maruyama integrators with path weights
//! ([`sde`]), heat-kernel estimators on both the flat space and the orbit
//! space ([`kernels`]), and a CLI-facing orchestration layer ([`harness`]).

pub mod generators;
pub mod geometry;
pub mod harness;
pub mod kernels;
pub mod sde;
pub mod stats;
