use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::crop::crop_slice;
use super::wav::Waveform;
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    Hamming,
    Rectangular,
}

impl Window {
    /// Symmetric window coefficients of length `n`.
    pub fn coefficients<T: Scalar>(self, n: usize) -> Vec<T> {
        match self {
            Window::Rectangular => vec![T::one(); n],
            Window::Hamming if n == 1 => vec![T::one()],
            Window::Hamming => (0..n)
                .map(|i| {
                    let phase = 2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64;
                    T::lit(0.54 - 0.46 * phase.cos())
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StftConfig {
    pub fft_size: usize,
    pub win_s: f64,
    pub hop_s: f64,
    pub window: Window,
}

impl Default for StftConfig {
    /// 512-point FFT, 25 ms Hamming window, 10 ms hop.
    fn default() -> Self {
        Self {
            fft_size: 512,
            win_s: 0.025,
            hop_s: 0.010,
            window: Window::Hamming,
        }
    }
}

impl StftConfig {
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn win_len(&self, rate_hz: u32) -> usize {
        (self.win_s * rate_hz as f64).round() as usize
    }

    pub fn hop_len(&self, rate_hz: u32) -> usize {
        (self.hop_s * rate_hz as f64).round() as usize
    }

    /// `1 + floor((len - win) / hop)`, or 0 if shorter than one window.
    pub fn n_frames(&self, n_samples: usize, rate_hz: u32) -> usize {
        let (win, hop) = (self.win_len(rate_hz), self.hop_len(rate_hz).max(1));
        if n_samples < win {
            0
        } else {
            1 + (n_samples - win) / hop
        }
    }

    fn validate(&self, rate_hz: u32) -> Result<(usize, usize)> {
        let (win, hop) = (self.win_len(rate_hz), self.hop_len(rate_hz));
        if win == 0 || hop == 0 {
            return Err(Error::InvalidConfig(format!(
                "window {win} / hop {hop} samples at {rate_hz} Hz"
            )));
        }
        if win > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "window of {win} samples exceeds FFT size {}",
                self.fft_size
            )));
        }
        Ok((win, hop))
    }
}

/// Magnitude spectrogram, `values[frame * n_bins + bin]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram<T> {
    pub values: Vec<T>,
    pub n_frames: usize,
    pub n_bins: usize,
    pub hop_s: f64,
    pub win_s: f64,
    pub normalized: bool,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn frame(&self, t: usize) -> &[T] {
        &self.values[t * self.n_bins..(t + 1) * self.n_bins]
    }

    /// `[1, n_bins, n_frames]` tensor (frequency rows, time columns), the
    /// per-example network input layout.
    pub fn to_input(&self) -> Tensor<T> {
        let mut data = vec![T::zero(); self.values.len()];
        for t in 0..self.n_frames {
            for f in 0..self.n_bins {
                data[f * self.n_frames + t] = self.values[t * self.n_bins + f];
            }
        }
        Tensor::from_vec(&[1, self.n_bins, self.n_frames], data).expect("non-empty spectrogram")
    }

    /// Random window of `n_frames` consecutive frames, wrap-padding short
    /// spectrograms.
    pub fn crop_frames<R: Rng + ?Sized>(&self, n_frames: usize, rng: &mut R) -> Self {
        let rows: Vec<&[T]> = self.values.chunks(self.n_bins).collect();
        let picked = crop_slice(&rows, n_frames, rng);
        Self {
            values: picked.concat(),
            n_frames,
            ..self.clone()
        }
    }
}

/// Short-time magnitude spectrum: each frame of `win_len` samples is windowed,
/// zero-padded to `fft_size`, and transformed; bins `0..=fft_size/2` are kept.
pub fn stft_magnitude<T: Scalar>(w: &Waveform<T>, cfg: &StftConfig) -> Result<Spectrogram<T>> {
    let (win, hop) = cfg.validate(w.sample_rate_hz)?;
    if w.samples.len() < win {
        return Err(Error::TooShort {
            samples: w.samples.len(),
            needed: win,
        });
    }
    let n_frames = cfg.n_frames(w.samples.len(), w.sample_rate_hz);
    let n_bins = cfg.n_bins();
    let window: Vec<T> = cfg.window.coefficients(win);
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    let mut scratch = vec![Complex::new(T::zero(), T::zero()); fft.get_inplace_scratch_len()];
    let mut values = Vec::with_capacity(n_frames * n_bins);
    for t in 0..n_frames {
        let frame = &w.samples[t * hop..t * hop + win];
        for (i, slot) in buf.iter_mut().enumerate() {
            let re = if i < win { frame[i] * window[i] } else { T::zero() };
            *slot = Complex::new(re, T::zero());
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        values.extend(buf[..n_bins].iter().map(|c| c.norm()));
    }
    Ok(Spectrogram {
        values,
        n_frames,
        n_bins,
        hop_s: cfg.hop_s,
        win_s: cfg.win_s,
        normalized: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormScope {
    /// One mean and standard deviation over every entry.
    #[default]
    Global,
    /// Separate statistics per frequency bin.
    PerBin,
}

pub const NORM_EPS: f64 = 1e-6;

fn standardize<T: Scalar>(vals: &mut [T], idx: impl Iterator<Item = usize> + Clone) {
    let n = idx.clone().count() as f64;
    let mean = idx.clone().map(|i| vals[i].as_f64()).sum::<f64>() / n;
    let var = idx.clone().map(|i| (vals[i].as_f64() - mean).powi(2)).sum::<f64>() / n;
    let denom = var.sqrt() + NORM_EPS;
    for i in idx {
        vals[i] = T::lit((vals[i].as_f64() - mean) / denom);
    }
}

/// `(s - mean) / (std + 1e-6)` with population statistics.
pub fn normalize<T: Scalar>(s: &Spectrogram<T>, scope: NormScope) -> Spectrogram<T> {
    let mut out = s.clone();
    match scope {
        NormScope::Global => standardize(&mut out.values, 0..s.values.len()),
        NormScope::PerBin => {
            for f in 0..s.n_bins {
                standardize(&mut out.values, (0..s.n_frames).map(move |t| t * s.n_bins + f));
            }
        }
    }
    out.normalized = true;
    out
}
