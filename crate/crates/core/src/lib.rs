//! Iteratively weight-shared multi-scale face detector.

pub mod anchors;
pub mod cli;
pub mod cost;
pub mod detect;
pub mod error;
pub mod graph;
pub mod io;
pub mod loss;
pub mod model;
pub mod par;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
