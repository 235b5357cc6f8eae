pub mod abstraction;
pub mod bounds;
pub mod config;
pub mod credal;
pub mod error;
pub mod geometry;
pub mod kernels;
pub mod montecarlo;
pub mod pipeline;
pub mod quadrature;
pub mod synthesis;

pub use error::{Error, Result};
