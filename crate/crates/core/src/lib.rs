//! Spatio-temporal log-Gaussian Cox process models on gridded domains, fitted
//! with a Laplace-approximation engine and compared by thinning-based
//! K-fold cross-validation scored with the CRPS.

pub mod crossval;
pub mod error;
pub mod geodata;
pub mod gmrf;
pub mod inference;
pub mod model;
pub mod rng;
pub mod simulate;
pub mod sparse;

pub use error::{Error, Result};
