//! Ideal binary masks and mask application with phase preservation.

use super::stft::SpectroGram;
use crate::error::{Error, Result};

/// Per time-frequency-bin {0,1} mask, frames × bins row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<u8>,
}

impl BinaryMask {
    pub fn at(&self, frame: usize, bin: usize) -> u8 {
        self.values[frame * self.bins + bin]
    }

    pub fn ones_fraction(&self) -> f64 {
        self.values.iter().filter(|&&v| v == 1).count() as f64 / self.values.len() as f64
    }

    pub fn as_soft(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }
}

/// Ideal binary mask: 1 where the clean magnitude strictly exceeds the noise
/// magnitude, 0 otherwise (ties give 0).
pub fn ibm(clean: &SpectroGram, noise: &SpectroGram) -> Result<BinaryMask> {
    if clean.frames != noise.frames || clean.bins != noise.bins {
        return Err(Error::shape_mismatch(
            "ibm spectrograms",
            &[clean.frames, clean.bins],
            &[noise.frames, noise.bins],
        ));
    }
    let values = clean
        .values
        .iter()
        .zip(&noise.values)
        .map(|(c, n)| u8::from(c.norm() > n.norm()))
        .collect();
    Ok(BinaryMask {
        frames: clean.frames,
        bins: clean.bins,
        values,
    })
}

/// Scale the noisy magnitudes by a real mask in [0,1], keeping the noisy
/// phase untouched.
pub fn apply_mask(noisy: &SpectroGram, mask: &[f64]) -> Result<SpectroGram> {
    if mask.len() != noisy.values.len() {
        return Err(Error::shape_mismatch(
            "apply_mask",
            &[noisy.frames, noisy.bins],
            &[mask.len()],
        ));
    }
    if mask.iter().any(|&m| !(0.0..=1.0).contains(&m)) {
        return Err(Error::Domain("mask values must lie in [0, 1]".into()));
    }
    let mut out = noisy.clone();
    for (v, &m) in out.values.iter_mut().zip(mask) {
        *v *= m;
    }
    Ok(out)
}
