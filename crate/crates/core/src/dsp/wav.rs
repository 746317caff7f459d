use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Mono PCM audio with amplitudes in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate_hz: u32,
}

impl<T: Scalar> Waveform<T> {
    pub fn new(samples: Vec<T>, sample_rate_hz: u32) -> Result<Self> {
        if sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("waveform samples".into()));
        }
        Ok(Self {
            samples,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }
}

/// Reads a 16-bit integer PCM RIFF/WAVE file, averaging channels to mono and
/// scaling by 1/32768.
pub fn load_wav<T: Scalar>(path: &Path) -> Result<Waveform<T>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let reader = WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(format!("{}: {other}", path.display())),
    })?;
    let spec = reader.spec();
    if spec.sample_format != SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: {:?} {}-bit (need 16-bit integer PCM)",
            path.display(),
            spec.sample_format,
            spec.bits_per_sample
        )));
    }
    let channels = spec.channels.max(1) as usize;
    let raw: Vec<i16> = reader
        .into_samples::<i16>()
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", path.display())))?;
    if raw.is_empty() {
        return Err(Error::EmptyAudio(path.to_path_buf()));
    }
    let scale = 1.0 / (32768.0 * channels as f64);
    let samples = raw
        .chunks(channels)
        .map(|frame| T::lit(frame.iter().map(|&s| s as f64).sum::<f64>() * scale))
        .collect();
    Waveform::new(samples, spec.sample_rate)
}

/// Writes mono 16-bit PCM, clamping to the representable range.
pub fn write_wav<T: Scalar>(path: &Path, w: &Waveform<T>) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let map_err = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::UnsupportedFormat(other.to_string()),
    };
    let mut writer = WavWriter::create(path, spec).map_err(map_err)?;
    for &s in &w.samples {
        let v = (s.as_f64() * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(map_err)?;
    }
    writer.finalize().map_err(map_err)?;
    Ok(())
}

/// Linear-interpolation resampling to `target_hz`.
pub fn resample_linear<T: Scalar>(w: &Waveform<T>, target_hz: u32) -> Result<Waveform<T>> {
    if target_hz == 0 {
        return Err(Error::InvalidConfig("target sample rate must be positive".into()));
    }
    if target_hz == w.sample_rate_hz || w.samples.is_empty() {
        return Waveform::new(w.samples.clone(), target_hz);
    }
    let ratio = w.sample_rate_hz as f64 / target_hz as f64;
    let out_len = ((w.samples.len() as f64) / ratio).round().max(1.0) as usize;
    let last = w.samples.len() - 1;
    let samples = (0..out_len)
        .map(|n| {
            let pos = n as f64 * ratio;
            let i = (pos.floor() as usize).min(last);
            let frac = T::lit(pos - i as f64);
            let a = w.samples[i];
            let b = w.samples[(i + 1).min(last)];
            a + (b - a) * frac
        })
        .collect();
    Waveform::new(samples, target_hz)
}
