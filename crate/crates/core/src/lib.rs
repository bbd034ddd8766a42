//! Cross-lingual speaker verification toolkit: cosine scoring with adaptive
//! score normalization, language-aware quality features, logistic-regression
//! calibration, detection metrics, trial construction, language-aware batch
//! sampling and a synthetic data generator.

pub mod calibration;
pub mod data;
pub mod error;
pub mod features;
pub mod io;
pub mod metrics;
pub mod sampler;
pub mod scoring;
pub mod synth;
pub mod trials;

pub use error::{Error, ParseErrorKind, Result};
