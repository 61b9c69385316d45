pub mod entropy;
pub mod error;
pub mod cli;
pub mod fft;
pub mod montecarlo;
pub mod noise;
pub mod occupation;
pub mod quad;
pub mod solver;
pub mod special;
pub mod stats;
pub mod spectral;

pub use error::{Error, Result};
