//! Explainable face verification by back-propagating similarity-score
//! arguments, plus the patch benchmark and decision-based patch replacement
//! evaluation used to score explanation maps.

pub mod argument;
pub mod bench;
pub mod cache;
pub mod config;
pub mod dpr;
pub mod error;
pub mod imageio;
pub mod latency;
pub mod metrics;
pub mod model;
pub mod plot;
pub mod render;
pub mod saliency;
pub mod synthetic;
pub mod tensor;

pub use error::{Error, Result};
