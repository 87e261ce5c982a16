//! WAV read/write: RIFF PCM 16-bit and IEEE float 32-bit, mono, 16 kHz.

use std::path::Path;

use super::Waveform;
use crate::error::{Error, Result};

pub const CANONICAL_RATE: u32 = 16000;

/// Read a mono 16 kHz WAV file (16-bit PCM or 32-bit float).
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Format(format!(
            "{}: expected mono audio, got {} channels",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != CANONICAL_RATE {
        return Err(Error::Format(format!(
            "{}: expected {CANONICAL_RATE} Hz audio, got {} Hz (resampling is out of scope)",
            path.display(),
            spec.sample_rate
        )));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported sample format {fmt:?}/{bits}-bit",
                path.display()
            )))
        }
    };
    Waveform::new(samples, CANONICAL_RATE)
}

/// Write a mono WAV file as IEEE float 32-bit.
pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for &s in &w.samples {
        writer
            .write_sample(s as f32)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    }
    writer
        .finalize()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    Ok(())
}
