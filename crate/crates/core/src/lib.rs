pub mod dataset;
pub mod error;
pub mod linalg;
pub mod models;
pub mod nn;
pub mod params;
pub mod solve;
pub mod spline;
pub mod train;
pub mod veriloga;

pub use error::{Error, Result};
