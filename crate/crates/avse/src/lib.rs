//! Audio-visual speech enhancement at desk scale.
//!
//! The crate implements the full enhancement pipeline: an audio encoder and a
//! visual front end, cross-attentional fusion of the two streams, a dual-path
//! GRU separator with a transposed-convolution decoder, binary-mask
//! reconstruction with noisy phase, SI-SDR/STOI/mask metrics, synthetic data
//! generation, RMSprop training, and a benchmarking harness.

pub mod dsp;
pub mod encoders;
pub mod error;
pub mod harness;
pub mod kernel;
pub mod metrics;
pub mod model;
pub mod params;
pub mod separator;
pub mod training;
pub mod xattn;

pub use error::{Error, Result};
