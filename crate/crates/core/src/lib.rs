pub mod assignment;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod pipeline;
pub mod scoring;
pub mod synth;
pub mod tracking;

pub use error::{Error, Result};
