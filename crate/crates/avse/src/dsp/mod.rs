//! Time-frequency analysis, binary-mask machinery and the SI-SDR objective.

mod mask;
mod sisdr;
mod stft;
pub mod wav;

pub use mask::{apply_mask, ibm, BinaryMask};
pub use sisdr::{si_sdr, si_sdr_loss, si_sdr_with_scaling, Scaling, LOSS_CLIP_DB, SI_SDR_CAP_DB};
pub use stft::{istft, stft, SpectroGram, StftParams, Window};
pub use wav::{read_wav, write_wav};

use crate::error::{Error, Result};

/// Mono sampled audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, rate: u32) -> Result<Self> {
        if rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("non-finite waveform sample".into()));
        }
        Ok(Waveform { samples, rate })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| s * s).sum()
    }
}
