//! Non-stationary geostatistical models whose covariance depends on
//! covariate distances as well as spatial distance.

pub mod cli;
pub mod error;
pub mod io;
pub mod kernels;
pub mod likelihood;
mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod predict;
mod serde_f64;
pub mod simulate;

pub use error::{GeoError, Result};
