//! Biorthogonal polynomials, band operators, kernels and loop equations for
//! the two-matrix model with polynomial potentials.

pub mod asymptotics;
pub mod band;
pub mod biortho;
pub mod cd;
pub mod curve;
pub mod diffsys;
pub mod error;
pub mod group;
pub mod laurent;
pub mod linalg;
pub mod loops;
pub mod model;
pub mod poly;
pub mod quadrature;
pub mod real;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{validate_model, ModelSpec, Potential, ValidatedModel};
pub use real::{Precision, Real};
