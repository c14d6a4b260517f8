//! Lorenz 96 physics, neural emulators trained on forecasts and on
//! tangent linear / adjoint responses, and the tooling around them.

pub mod container;
pub mod dataset;
pub mod diagnostics;
pub mod emulator;
pub mod error;
pub mod experiment;
pub mod lorenz96;
pub mod optimizer;
pub mod state;
pub mod training;
pub mod verify;

pub use error::{Error, Result};
pub use state::{JacobianMatrix, StateVector};
