//! Missingness-aware dynamic ensemble weighting (M-DEW) for binary
//! classification on incomplete tabular data, with the amputation,
//! imputation and evaluation machinery needed to benchmark it.

pub mod data;
pub mod ensemble;
pub mod error;
pub mod imputers;
pub mod learners;
pub mod matrix;
pub mod metrics;
pub mod missingness;
pub mod rng;
pub mod runner;

pub use data::Dataset;
pub use error::{Error, Result};
pub use matrix::Matrix;
