//! Variational data assimilation for the 2D incompressible Navier–Stokes
//! equations with `L^p` and `L^inf` misfits.
//!
//! The admissible class is parametrised by a clamped stream function and a
//! zero-mean pressure; the model error `y` is whatever residual the state
//! leaves in the momentum equation. Minimising the dotted `L^p` misfit for
//! an increasing sequence of exponents approximates the minimax (`L^inf`)
//! problem, and the [`diagnostics`] module measures how the dual-weight
//! measures concentrate along the way.

pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod grid;
pub mod misfit;
pub mod mms;
pub mod norms;
pub mod nse;
pub mod observation;
pub mod optimizer;
mod precond;
mod solver;

pub use error::{Error, Result};
pub use grid::{GridSpec, ScalarField, TensorField, VectorField, VectorSlice};
pub use norms::{PExponent, WeightedSamples};
