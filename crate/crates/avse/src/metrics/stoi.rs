//! Short-time objective intelligibility: mean correlation of one-third
//! octave temporal envelopes between clean and processed speech, per the
//! original algorithm (10 kHz internal rate, 256/512 frames, 15 bands from
//! 150 Hz, 384 ms segments, −15 dB clipping).

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

const FS: usize = 10_000;
const FRAME: usize = 256;
const HOP: usize = 128;
const NFFT: usize = 512;
const NUM_BANDS: usize = 15;
const MIN_CENTER_HZ: f64 = 150.0;
const SEG_FRAMES: usize = 30;
const BETA_DB: f64 = -15.0;
const DYN_RANGE_DB: f64 = 40.0;

pub fn stoi(clean: &Waveform, processed: &Waveform) -> Result<f64> {
    if clean.len() != processed.len() {
        return Err(Error::shape_mismatch(
            "stoi lengths",
            &[clean.len()],
            &[processed.len()],
        ));
    }
    if clean.rate != processed.rate {
        return Err(Error::Config(format!(
            "stoi rate mismatch: {} vs {}",
            clean.rate, processed.rate
        )));
    }
    let x = to_internal_rate(&clean.samples, clean.rate)?;
    let y = to_internal_rate(&processed.samples, processed.rate)?;

    let (x, y) = remove_silent_frames(&x, &y);
    let min_len = (SEG_FRAMES - 1) * HOP + FRAME;
    if x.len() < min_len {
        return Err(Error::SignalTooShort(format!(
            "stoi needs at least {min_len} active samples at {FS} Hz, got {}",
            x.len()
        )));
    }

    let xb = band_envelopes(&x);
    let yb = band_envelopes(&y);
    let frames = xb.len() / NUM_BANDS;
    if frames < SEG_FRAMES {
        return Err(Error::SignalTooShort(format!(
            "stoi needs {SEG_FRAMES} analysis frames, got {frames}"
        )));
    }

    let clip = 10f64.powf(-BETA_DB / 20.0);
    let mut sum = 0.0;
    let mut count = 0usize;
    for m in SEG_FRAMES..=frames {
        for j in 0..NUM_BANDS {
            let xs: Vec<f64> = (m - SEG_FRAMES..m).map(|f| xb[f * NUM_BANDS + j]).collect();
            let ys: Vec<f64> = (m - SEG_FRAMES..m).map(|f| yb[f * NUM_BANDS + j]).collect();
            let xn: f64 = xs.iter().map(|v| v * v).sum::<f64>().sqrt();
            let yn: f64 = ys.iter().map(|v| v * v).sum::<f64>().sqrt();
            let alpha = if yn == 0.0 { 0.0 } else { xn / yn };
            let yp: Vec<f64> = ys
                .iter()
                .zip(&xs)
                .map(|(&y, &x)| (alpha * y).min(x * (1.0 + clip)))
                .collect();
            sum += correlation(&xs, &yp);
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut da = 0.0;
    let mut db = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        da += (x - ma) * (x - ma);
        db += (y - mb) * (y - mb);
    }
    let denom = da.sqrt() * db.sqrt();
    if denom == 0.0 {
        0.0
    } else {
        num / denom
    }
}

/// Resample to the 10 kHz internal rate with a windowed-sinc polyphase
/// filter (identity at 10 kHz; only 16 kHz input is supported otherwise).
fn to_internal_rate(x: &[f64], rate: u32) -> Result<Vec<f64>> {
    match rate {
        10_000 => Ok(x.to_vec()),
        16_000 => Ok(resample(x, 5, 8)),
        other => Err(Error::Config(format!(
            "stoi supports 16 kHz (or native 10 kHz) input, got {other} Hz"
        ))),
    }
}

/// Rational resampling by `up`/`down` with a Blackman-windowed sinc
/// low-pass at π/max(up, down).
fn resample(x: &[f64], up: usize, down: usize) -> Vec<f64> {
    let m = up.max(down);
    let half = 24 * m;
    let taps = 2 * half + 1;
    let h: Vec<f64> = (0..taps)
        .map(|k| {
            let t = k as f64 - half as f64;
            let sinc = if t == 0.0 {
                1.0
            } else {
                let a = std::f64::consts::PI * t / m as f64;
                a.sin() / a
            };
            let w = 0.42
                - 0.5 * (std::f64::consts::TAU * k as f64 / (taps - 1) as f64).cos()
                + 0.08 * (2.0 * std::f64::consts::TAU * k as f64 / (taps - 1) as f64).cos();
            sinc * w * up as f64 / m as f64
        })
        .collect();
    let out_len = (x.len() * up).div_ceil(down);
    let mut out = vec![0.0; out_len];
    for (mi, o) in out.iter_mut().enumerate() {
        // Position on the up-rate grid, centered by the filter delay.
        let t0 = (mi * down) as isize + half as isize;
        let mut acc = 0.0;
        for (k, &hv) in h.iter().enumerate() {
            let up_idx = t0 - k as isize;
            if up_idx >= 0 && up_idx % up as isize == 0 {
                let src = (up_idx / up as isize) as usize;
                if src < x.len() {
                    acc += hv * x[src];
                }
            }
        }
        *o = acc;
    }
    out
}

/// Symmetric Hann window without zero endpoints, as the reference uses.
fn analysis_window() -> Vec<f64> {
    (0..FRAME)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * (i + 1) as f64 / (FRAME + 1) as f64).cos()))
        .collect()
}

/// Drop frames where the clean signal is more than 40 dB below its loudest
/// frame, then rebuild both signals by overlap-adding the kept windowed
/// frames (the window satisfies amplitude overlap-add at 50%).
fn remove_silent_frames(x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let w = analysis_window();
    if x.len() < FRAME {
        return (x.to_vec(), y.to_vec());
    }
    let frames = (x.len() - FRAME) / HOP + 1;
    let energies: Vec<f64> = (0..frames)
        .map(|f| {
            (0..FRAME)
                .map(|i| {
                    let v = x[f * HOP + i] * w[i];
                    v * v
                })
                .sum::<f64>()
        })
        .collect();
    let max_energy = energies.iter().fold(0.0f64, |m, &e| m.max(e));
    let floor = max_energy * 10f64.powf(-DYN_RANGE_DB / 10.0);
    let keep: Vec<usize> = (0..frames).filter(|&f| energies[f] > floor).collect();
    let out_len = if keep.is_empty() {
        0
    } else {
        (keep.len() - 1) * HOP + FRAME
    };
    let mut xs = vec![0.0; out_len];
    let mut ys = vec![0.0; out_len];
    for (slot, &f) in keep.iter().enumerate() {
        for i in 0..FRAME {
            xs[slot * HOP + i] += x[f * HOP + i] * w[i];
            ys[slot * HOP + i] += y[f * HOP + i] * w[i];
        }
    }
    (xs, ys)
}

/// One-third octave band envelope per frame; row-major frames × bands.
fn band_envelopes(x: &[f64]) -> Vec<f64> {
    let w = analysis_window();
    let frames = (x.len() - FRAME) / HOP + 1;
    let bins = NFFT / 2 + 1;
    let bands = band_bins();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(NFFT);
    let mut out = Vec::with_capacity(frames * NUM_BANDS);
    let mut buf = vec![Complex64::new(0.0, 0.0); NFFT];
    for f in 0..frames {
        for v in buf.iter_mut() {
            *v = Complex64::new(0.0, 0.0);
        }
        for i in 0..FRAME {
            buf[i] = Complex64::new(x[f * HOP + i] * w[i], 0.0);
        }
        fft.process(&mut buf);
        for band in bands.iter() {
            let e: f64 = band
                .iter()
                .filter(|&&b| b < bins)
                .map(|&b| buf[b].norm_sqr())
                .sum();
            out.push(e.sqrt());
        }
    }
    out
}

/// Nearest-bin edges of the 15 one-third octave bands from 150 Hz.
fn band_bins() -> Vec<Vec<usize>> {
    let bins = NFFT / 2 + 1;
    let freq = |b: usize| b as f64 * FS as f64 / NFFT as f64;
    let nearest = |target: f64| -> usize {
        (0..bins)
            .min_by(|&a, &b| {
                (freq(a) - target).abs().total_cmp(&(freq(b) - target).abs())
            })
            .unwrap()
    };
    (0..NUM_BANDS)
        .map(|k| {
            let cf = MIN_CENTER_HZ * 2f64.powf(k as f64 / 3.0);
            let lo = nearest(cf * 2f64.powf(-1.0 / 6.0));
            let hi = nearest(cf * 2f64.powf(1.0 / 6.0));
            (lo..hi).collect()
        })
        .collect()
}
