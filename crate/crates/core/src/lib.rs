//! Binaural MVDR beamforming steered by relative transfer functions, with an
//! external-microphone spatial-coherence RTF estimator, a diffuse-field scene
//! simulator and evaluation metrics.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod beamformer;
pub mod covariance;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod rtf;
pub mod scene;
pub mod stft;

pub use error::{Error, Result};
