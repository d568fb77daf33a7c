//! WAV file I/O for the 16 kHz mono world this pipeline lives in.
//!
//! Readers accept integer PCM (16/24/32 bit) and 32-bit float; the writer
//! always emits 32-bit float, which keeps dataset artifacts exact (no
//! quantization noise eating into high-SNR conditions) and makes
//! silence-in/silence-out literal.

use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::data::SAMPLE_RATE_HZ;
use crate::error::{Error, Result};

/// Reads a 16 kHz mono WAV into f64 samples in [-1, 1] nominal range.
pub fn read_wav(path: &Path) -> Result<Vec<f64>> {
    let reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(Error::Data(format!(
            "{}: {} channels, this pipeline is mono only",
            path.display(),
            spec.channels
        )));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(Error::Data(format!(
            "{}: sample rate {} Hz, this pipeline runs at {SAMPLE_RATE_HZ} Hz only",
            path.display(),
            spec.sample_rate
        )));
    }
    match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(f64::from).map_err(Error::Wav))
            .collect(),
        (SampleFormat::Int, bits @ (16 | 24 | 32)) => {
            let scale = (1u64 << (bits - 1)) as f64;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale).map_err(Error::Wav))
                .collect()
        }
        (fmt, bits) => Err(Error::Data(format!(
            "{}: unsupported sample format {fmt:?}/{bits} bit",
            path.display()
        ))),
    }
}

/// Writes samples as a 32-bit float 16 kHz mono WAV. Values outside [-1, 1]
/// are clamped; the number of clamped samples is returned so callers can
/// report clipping.
pub fn write_wav(path: &Path, samples: &[f64]) -> Result<usize> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE_HZ,
        bits_per_sample: 32,
        sample_format: SampleFormat::Float,
    };
    let mut writer = WavWriter::create(path, spec)?;
    let mut clipped = 0usize;
    for &v in samples {
        if !v.is_finite() {
            return Err(Error::Numeric(format!(
                "refusing to write non-finite sample {v} to {}",
                path.display()
            )));
        }
        if v.abs() > 1.0 {
            clipped += 1;
        }
        writer.write_sample(v.clamp(-1.0, 1.0) as f32)?;
    }
    writer.finalize()?;
    Ok(clipped)
}
