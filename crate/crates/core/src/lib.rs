//! Warped dynamic linear models for count time series.

pub mod dlm;
pub mod error;
pub mod eval;
pub mod inference;
pub mod linalg;
pub mod mvn;
pub mod particle;
pub mod selnorm;
pub mod series;
pub mod simgen;
pub mod spline;
pub mod stats;
pub mod warp;

pub use dlm::DlmSystem;
pub use error::{Error, Result};
pub use series::CountSeries;
pub use warp::{RoundingOperator, Transformation, Warp};
