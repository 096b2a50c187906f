pub mod analysis;
pub mod analytic;
pub mod error;
pub mod integrator;
pub mod lyapunov;
pub mod model;
pub mod pipeline;
pub mod sensing;
pub mod sweep;

pub use error::{Error, Result};
