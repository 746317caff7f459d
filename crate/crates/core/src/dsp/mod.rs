//! Audio ingestion and spectrogram front end.

pub mod cache;
pub mod crop;
pub mod stft;
pub mod wav;

use rand::Rng;

pub use cache::{read_spectrogram, write_spectrogram};
pub use crop::{crop_or_pad, target_len};
pub use stft::{normalize, stft_magnitude, NormScope, Spectrogram, StftConfig, Window};
pub use wav::{load_wav, resample_linear, write_wav, Waveform};

use crate::error::Result;
use crate::scalar::Scalar;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;
pub const DEFAULT_CROP_S: f64 = 2.5;

/// Waveform -> fixed-length normalised spectrogram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frontend {
    pub sample_rate_hz: u32,
    pub crop_s: f64,
    pub stft: StftConfig,
    pub norm: NormScope,
}

impl Default for Frontend {
    fn default() -> Self {
        Self {
            sample_rate_hz: DEFAULT_SAMPLE_RATE,
            crop_s: DEFAULT_CROP_S,
            stft: StftConfig::default(),
            norm: NormScope::Global,
        }
    }
}

impl Frontend {
    pub fn n_bins(&self) -> usize {
        self.stft.n_bins()
    }

    /// Frames produced by one crop.
    pub fn n_frames(&self) -> usize {
        self.stft
            .n_frames(target_len(self.crop_s, self.sample_rate_hz), self.sample_rate_hz)
    }

    pub fn resample<T: Scalar>(&self, w: &Waveform<T>) -> Result<Waveform<T>> {
        resample_linear(w, self.sample_rate_hz)
    }

    /// Random crop, STFT, normalisation. `w` must already be at the pipeline rate.
    pub fn prepare<T: Scalar, R: Rng + ?Sized>(&self, w: &Waveform<T>, rng: &mut R) -> Result<Spectrogram<T>> {
        let w = if w.sample_rate_hz == self.sample_rate_hz {
            crop_or_pad(w, self.crop_s, rng)?
        } else {
            crop_or_pad(&self.resample(w)?, self.crop_s, rng)?
        };
        Ok(normalize(&stft_magnitude(&w, &self.stft)?, self.norm))
    }

    /// Same as [`Frontend::prepare`] but starting from a cached full-utterance
    /// magnitude spectrogram: frame-domain crop, then normalisation.
    pub fn prepare_cached<T: Scalar, R: Rng + ?Sized>(&self, s: &Spectrogram<T>, rng: &mut R) -> Spectrogram<T> {
        normalize(&s.crop_frames(self.n_frames(), rng), self.norm)
    }
}
