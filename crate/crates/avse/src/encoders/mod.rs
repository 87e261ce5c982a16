//! Audio and visual front ends producing temporally aligned feature streams.

mod files;
mod visual;

pub use files::{read_vfr, read_vft, write_vfr, write_vft};
pub use visual::VisualEncoder;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{conv1d_out_len, Scalar, Tape, Var};
use crate::params::{Array, Bound, ParamSet, ParamId};

/// Latent frame count for an audio input of `t` samples.
pub fn encoded_len(t: usize, kernel: usize, stride: usize) -> usize {
    conv1d_out_len(t, kernel, stride)
}

/// Lip/face input, either raw grayscale frames or precomputed per-frame
/// features. Frame values live in [0,1]; features are unconstrained reals.
#[derive(Debug, Clone, PartialEq)]
pub enum VisualStream {
    Frames {
        /// N×H×W row-major.
        data: Vec<f64>,
        n: usize,
        h: usize,
        w: usize,
        fps: f64,
    },
    Features {
        /// N×d_v row-major.
        data: Vec<f64>,
        n: usize,
        d_v: usize,
        fps: f64,
    },
}

impl VisualStream {
    pub fn n(&self) -> usize {
        match self {
            VisualStream::Frames { n, .. } | VisualStream::Features { n, .. } => *n,
        }
    }

    pub fn fps(&self) -> f64 {
        match self {
            VisualStream::Frames { fps, .. } | VisualStream::Features { fps, .. } => *fps,
        }
    }
}

/// Bias-free 1-D convolutional audio encoder with ReLU.
pub struct AudioEncoder {
    pub w: ParamId,
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl AudioEncoder {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        AudioEncoder {
            w: ps.add(
                format!("{prefix}.w"),
                Array::uniform(&[channels, 1, kernel], kernel, rng),
            ),
            channels,
            kernel,
            stride,
        }
    }

    /// `B×1×T` waveform batch → nonnegative features `B×C×T̂`.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        audio: Var,
    ) -> Result<Var> {
        let z = tape.conv1d(audio, bound.var(self.w), self.stride)?;
        Ok(tape.relu(z))
    }
}

/// Per-frame visual features (frames mode runs the CNN, features mode is a
/// validated bit-exact passthrough). Returns N×d_v row-major.
pub fn visual_encode(
    v: &VisualStream,
    enc: &VisualEncoder,
    ps: &ParamSet,
) -> Result<Vec<f64>> {
    match v {
        VisualStream::Features { data, n, d_v, .. } => {
            if *d_v != enc.d_v {
                return Err(Error::Dim(format!(
                    "visual features have dim {d_v}, model expects {}",
                    enc.d_v
                )));
            }
            if data.len() != n * d_v {
                return Err(Error::shape_mismatch("visual features", &[*n, *d_v], &[data.len()]));
            }
            Ok(data.clone())
        }
        VisualStream::Frames { data, n, h, w, .. } => enc.forward(ps, data, *n, *h, *w),
    }
}

/// Linear interpolation along time from N frames to `target_len`, endpoints
/// mapped to endpoints. Input and output are row-major (frames × d).
pub fn temporal_align(feats: &[f64], n: usize, d: usize, target_len: usize) -> Result<Vec<f64>> {
    if n == 0 || target_len == 0 {
        return Err(Error::Dim("temporal_align needs at least one frame".into()));
    }
    if feats.len() != n * d {
        return Err(Error::shape_mismatch("temporal_align input", &[n, d], &[feats.len()]));
    }
    let mut out = Vec::with_capacity(target_len * d);
    for i in 0..target_len {
        let pos = if target_len == 1 || n == 1 {
            0.0
        } else {
            i as f64 * (n - 1) as f64 / (target_len - 1) as f64
        };
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        let frac = pos - lo as f64;
        for j in 0..d {
            out.push(feats[lo * d + j] * (1.0 - frac) + feats[hi * d + j] * frac);
        }
    }
    Ok(out)
}
