//! Numerical laboratory for toric Kähler models.
//!
//! A compact toric Kähler manifold is represented by its Delzant moment
//! polytope together with a symplectic potential on the polytope interior.
//! On top of that model the crate implements
//!
//! * the family of Kähler structures obtained by flowing the symplectic
//!   potential along a strictly convex Hamiltonian `φ(μ)` in imaginary time
//!   ([`kahler`]),
//! * weight sections of the prequantum line bundle in an invariant gauge, the
//!   quantum operator `φ̂ = -i∇_{X_φ} + φ` and its exponential ([`prequantum`]),
//! * the normalisation constants, pairings and concentration statistics that
//!   describe how normalised flowed sections collapse onto moment fibers
//!   ([`convergence`]),
//! * supporting quadrature ([`quadrature`]), polytope ([`polytope`]) and
//!   convex-potential ([`potential`]) machinery.
//!
//! The [`cli`] module drives experiments from a plain-text config file.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod convergence;
mod error;
pub mod fit;
pub mod kahler;
pub mod polytope;
pub mod potential;
pub mod prequantum;
pub mod quadrature;

pub use error::{Error, Result};

pub use convergence::{ConcentrationStats, ConvergenceReport, FiberMeasureModel, NormalizationConstant, TestSection};
pub use kahler::{KahlerFlowState, OrbitPoint, PolarizationFrame, SymplecticPotential, ToricModel};
pub use polytope::{DelzantPolytope, Facet, LatticePoint};
pub use potential::{ConvexPotential, SmoothConvex};
pub use prequantum::WeightSection;
pub use quadrature::QuadratureSpec;

/// Length of one torus circle; `(2π)^n` is the Liouville volume of a
/// regular fiber of a full-rank toric moment map.
pub const CIRCLE_LENGTH: f64 = std::f64::consts::TAU;
