use rand::Rng;

use super::wav::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Number of samples in `duration_s` at `rate_hz`, rounded to nearest.
pub fn target_len(duration_s: f64, rate_hz: u32) -> usize {
    (duration_s * rate_hz as f64).round() as usize
}

/// Cuts a uniformly random contiguous segment of `duration_s`, or wrap-pads
/// (repeating from the start) when the input is shorter.
pub fn crop_or_pad<T: Scalar, R: Rng + ?Sized>(
    w: &Waveform<T>,
    duration_s: f64,
    rng: &mut R,
) -> Result<Waveform<T>> {
    if !(duration_s > 0.0) {
        return Err(Error::InvalidConfig(format!("crop duration {duration_s} must be > 0")));
    }
    if w.samples.is_empty() {
        return Err(Error::TooShort {
            samples: 0,
            needed: 1,
        });
    }
    let len = target_len(duration_s, w.sample_rate_hz).max(1);
    let samples = crop_slice(&w.samples, len, rng);
    Waveform::new(samples, w.sample_rate_hz)
}

/// Random `len`-element window of `src`, wrap-padded if `src` is shorter.
pub(crate) fn crop_slice<T: Copy, R: Rng + ?Sized>(src: &[T], len: usize, rng: &mut R) -> Vec<T> {
    if src.len() >= len {
        let offset = rng.gen_range(0..=src.len() - len);
        src[offset..offset + len].to_vec()
    } else {
        (0..len).map(|k| src[k % src.len()]).collect()
    }
}
