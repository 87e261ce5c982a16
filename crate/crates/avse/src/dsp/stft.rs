//! STFT analysis and weighted overlap-add resynthesis.

use num_complex::Complex64;
use rustfft::FftPlanner;

use super::Waveform;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Window {
    Hann,
    Rect,
}

/// Analysis parameters. Default is Hann 512/256 (32 ms / 16 ms at 16 kHz).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct StftParams {
    pub window_len: usize,
    pub hop: usize,
    pub window: Window,
}

impl Default for StftParams {
    fn default() -> Self {
        StftParams {
            window_len: 512,
            hop: 256,
            window: Window::Hann,
        }
    }
}

impl StftParams {
    pub fn bins(&self) -> usize {
        self.window_len / 2 + 1
    }

    pub fn taper(&self) -> Vec<f64> {
        let n = self.window_len;
        match self.window {
            Window::Rect => vec![1.0; n],
            Window::Hann => (0..n)
                .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
                .collect(),
        }
    }

    /// Check the constant-overlap-add condition: the per-sample synthesis
    /// denominator (overlap-added squared window) must stay bounded away from
    /// zero on the interior.
    pub fn check_cola(&self) -> Result<()> {
        if self.hop == 0 || self.hop > self.window_len {
            return Err(Error::Config(format!(
                "hop {} must satisfy 0 < hop <= window_len {}",
                self.hop, self.window_len
            )));
        }
        let w = self.taper();
        // Denominator over three hops of interior, enough frames to cover.
        let span = self.window_len + 3 * self.hop;
        let mut denom = vec![0.0; span];
        let mut start = 0;
        while start + self.window_len <= span {
            for (i, &wv) in w.iter().enumerate() {
                denom[start + i] += wv * wv;
            }
            start += self.hop;
        }
        let interior = &denom[self.window_len..2 * self.hop.max(1) + self.window_len];
        if interior.iter().any(|&d| d < 1e-6) {
            return Err(Error::Config(format!(
                "window/hop pair ({:?}, {}/{}) does not satisfy constant overlap-add",
                self.window, self.window_len, self.hop
            )));
        }
        Ok(())
    }
}

/// Complex STFT matrix, frames × bins (one-sided spectrum).
#[derive(Debug, Clone)]
pub struct SpectroGram {
    pub frames: usize,
    pub bins: usize,
    /// Row-major frames × bins.
    pub values: Vec<Complex64>,
    pub params: StftParams,
    pub rate: u32,
}

impl SpectroGram {
    pub fn at(&self, frame: usize, bin: usize) -> Complex64 {
        self.values[frame * self.bins + bin]
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }
}

/// Windowed DFT per frame; frames = floor((len − window_len)/hop) + 1.
pub fn stft(w: &Waveform, p: &StftParams) -> Result<SpectroGram> {
    p.check_cola()?;
    if w.len() < p.window_len {
        return Err(Error::SignalTooShort(format!(
            "stft needs at least {} samples, got {}",
            p.window_len,
            w.len()
        )));
    }
    let n = p.window_len;
    let frames = (w.len() - n) / p.hop + 1;
    let bins = p.bins();
    let taper = p.taper();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let mut values = Vec::with_capacity(frames * bins);
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..frames {
        let start = f * p.hop;
        for i in 0..n {
            buf[i] = Complex64::new(w.samples[start + i] * taper[i], 0.0);
        }
        fft.process(&mut buf);
        values.extend_from_slice(&buf[..bins]);
    }
    Ok(SpectroGram {
        frames,
        bins,
        values,
        params: *p,
        rate: w.rate,
    })
}

/// Weighted overlap-add inverse. Interior samples reproduce the analyzed
/// signal exactly (edges are attenuated by the partial window sum and are
/// trimmed by callers that need exactness).
pub fn istft(s: &SpectroGram) -> Result<Waveform> {
    let p = &s.params;
    p.check_cola()?;
    let n = p.window_len;
    if s.bins != p.bins() {
        return Err(Error::Dim(format!(
            "spectrogram bins {} inconsistent with window {}",
            s.bins, n
        )));
    }
    let out_len = if s.frames == 0 {
        0
    } else {
        (s.frames - 1) * p.hop + n
    };
    let taper = p.taper();
    let mut planner = FftPlanner::new();
    let ifft = planner.plan_fft_inverse(n);
    let mut acc = vec![0.0; out_len];
    let mut denom = vec![0.0; out_len];
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for f in 0..s.frames {
        let row = &s.values[f * s.bins..(f + 1) * s.bins];
        buf[..s.bins].copy_from_slice(row);
        // Hermitian completion of the one-sided spectrum.
        for k in s.bins..n {
            buf[k] = row[n - k].conj();
        }
        ifft.process(&mut buf);
        let start = f * p.hop;
        for i in 0..n {
            let v = buf[i].re / n as f64;
            acc[start + i] += v * taper[i];
            denom[start + i] += taper[i] * taper[i];
        }
    }
    // Dividing by a near-zero window sum amplifies inconsistencies of
    // modified (masked) spectra without bound, so the outermost taper
    // samples are zeroed instead of divided.
    for (a, d) in acc.iter_mut().zip(&denom) {
        if *d > 1e-2 {
            *a /= d;
        } else {
            *a = 0.0;
        }
    }
    Waveform::new(acc, s.rate)
}
