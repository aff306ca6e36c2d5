//! Large-dimensional kernel ridge regression on spheres.

#[cfg(feature = "cli")]
pub mod cli;
pub mod harness;
pub mod kernel;
pub mod linalg;
pub mod quadrature;
pub mod quantities;
pub mod rates;
pub mod regression;
pub mod rng;
pub mod sim;
pub mod spectrum;
pub mod verify;

pub use kernel::{KernelError, KernelSpec};
pub use spectrum::{build_spectrum, Spectrum, SpectrumError, Truncation};
