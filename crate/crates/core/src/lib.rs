pub mod basis;
pub mod benchmarks;
pub mod error;
pub mod evaluation;
pub mod model;
pub mod processes;
pub mod regression;
pub mod solvers;

pub use error::{Error, Result};
