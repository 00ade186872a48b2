//! Numerics for Carnot groups: stratified algebras of step ≤ 3 with their
//! exact group law, homogeneous gauges and ball-box horizontal paths, seeded
//! Monte Carlo integration with the radial (polar) reduction, radial
//! mollifier families, horizontal gradients with nonlocal difference
//! functionals, and one-dimensional plus group-level Poincaré inequalities.
//!
//! Everything is generic over the scalar type through [`Real`]; the aliases
//! below fix `f64` for ordinary use.

pub mod algebra;
pub mod integrate;
pub mod metric;
pub mod mollify;
pub mod poincare;
pub mod quad;
pub mod scalar;
pub mod sobolev;

mod linalg;
mod opt;

pub use scalar::Real;

/// `f64` instantiations of the main types.
pub type Algebra = algebra::StratifiedAlgebra<f64>;
pub type Point = algebra::GroupPoint<f64>;
pub type Gauge = metric::HomogeneousGauge<f64>;
pub type BallBox = metric::BallBoxDecomposition<f64>;
pub type Path = metric::HorizontalPath<f64>;
pub type Integrator = integrate::IntegratorConfig<f64>;
pub type Mollifiers = mollify::MollifierFamily<f64>;
pub type Field = sobolev::ScalarField<f64>;

