//! Synthetic speakers and converters for testing the pipeline without real
//! recordings.
//!
//! A speaker is a harmonic source (fundamental, jitter) shaped by a fixed
//! three-formant envelope. The warp converter mixes a dominant copy of the
//! target audio with a weak, frequency-warped copy of the source, so the
//! source identity survives only as a faint signature.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::corpus::{scan_corpus, CorpusIndex};
use crate::dsp::{resample_linear, write_wav, Waveform};
use crate::error::{Error, Result};

pub const SYNTH_RATE: u32 = 16_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerVoice {
    pub f0_hz: f64,
    /// `(centre Hz, bandwidth Hz, gain)` per formant.
    pub formants: [(f64, f64, f64); 3],
    /// Spectral tilt in dB per kHz.
    pub tilt_db_per_khz: f64,
}

impl SpeakerVoice {
    /// Voice of speaker `index` out of `n`; fundamentals are spread over
    /// 90..260 Hz so neighbouring speakers stay distinguishable.
    pub fn generate<R: Rng + ?Sized>(index: usize, n: usize, rng: &mut R) -> Self {
        let frac = (index as f64 + rng.gen_range(0.2..0.8)) / n.max(1) as f64;
        Self {
            f0_hz: 90.0 + 170.0 * frac,
            formants: [
                (rng.gen_range(300.0..900.0), rng.gen_range(60.0..150.0), 1.0),
                (rng.gen_range(900.0..2400.0), rng.gen_range(80.0..200.0), rng.gen_range(0.4..0.9)),
                (rng.gen_range(2400.0..3800.0), rng.gen_range(100.0..300.0), rng.gen_range(0.2..0.6)),
            ],
            tilt_db_per_khz: rng.gen_range(-6.0..-2.0),
        }
    }

    pub fn envelope(&self, f_hz: f64) -> f64 {
        let peaks: f64 = self
            .formants
            .iter()
            .map(|&(c, bw, g)| g * (-(f_hz - c).powi(2) / (2.0 * bw * bw)).exp())
            .sum();
        (peaks + 0.05) * 10f64.powf(self.tilt_db_per_khz * f_hz / 1000.0 / 20.0)
    }
}

/// One utterance: harmonics of a slowly drifting fundamental with syllable-rate
/// amplitude modulation, random phases and a little noise; peak 0.5.
pub fn synth_utterance<R: Rng + ?Sized>(voice: &SpeakerVoice, duration_s: f64, rng: &mut R) -> Waveform<f32> {
    let rate = SYNTH_RATE as f64;
    let n = (duration_s * rate).round() as usize;
    let f0 = voice.f0_hz * rng.gen_range(0.95..1.05);
    let drift_hz = rng.gen_range(0.2..0.6);
    let drift_phase = rng.gen_range(0.0..2.0 * PI);
    let syllable_hz = rng.gen_range(2.5..5.5);
    let syllable_phase = rng.gen_range(0.0..2.0 * PI);
    let n_harm = ((0.45 * rate) / (f0 * 1.05)).floor() as usize;
    let amps: Vec<f64> = (1..=n_harm).map(|h| voice.envelope(h as f64 * f0)).collect();
    let mut phases: Vec<f64> = (0..n_harm).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate;
        let inst_f0 = f0 * (1.0 + 0.03 * (2.0 * PI * drift_hz * t + drift_phase).sin());
        let step = 2.0 * PI * inst_f0 / rate;
        let mut s = 0.0;
        for (h, (ph, &a)) in phases.iter_mut().zip(&amps).enumerate() {
            s += a * ph.sin();
            *ph += step * (h + 1) as f64;
            if *ph > 2.0 * PI * 64.0 {
                *ph %= 2.0 * PI;
            }
        }
        let am = 0.6 + 0.4 * (2.0 * PI * syllable_hz * t + syllable_phase).sin();
        out.push(s * am + 0.01 * rng.gen_range(-1.0..1.0));
    }
    peak_normalize(&out, 0.5)
}

fn peak_normalize(x: &[f64], peak: f64) -> Waveform<f32> {
    let m = x.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let g = if m > 0.0 { peak / m } else { 0.0 };
    Waveform::new(x.iter().map(|&v| (v * g) as f32).collect(), SYNTH_RATE).expect("finite samples")
}

/// Writes `n_speakers` x `n_utts` utterances as `root/sNNN/sNNN_UUU.wav` and
/// returns the scanned index.
pub fn generate_corpus(
    root: &Path,
    n_speakers: usize,
    n_utts: usize,
    duration_s: f64,
    seed: u64,
) -> Result<CorpusIndex> {
    if n_speakers == 0 || n_utts == 0 || !(duration_s > 0.0) {
        return Err(Error::InvalidConfig(
            "synthetic corpus needs speakers, utterances and a positive duration".into(),
        ));
    }
    let mut voice_rng = ChaCha8Rng::seed_from_u64(seed);
    let voices: Vec<SpeakerVoice> = (0..n_speakers)
        .map(|i| SpeakerVoice::generate(i, n_speakers, &mut voice_rng))
        .collect();
    for (i, voice) in voices.iter().enumerate() {
        let name = format!("s{i:03}");
        let dir = root.join(&name);
        std::fs::create_dir_all(&dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64 + 1);
        for u in 0..n_utts {
            let w = synth_utterance(voice, duration_s * rng.gen_range(0.9..1.1), &mut rng);
            write_wav(&dir.join(format!("{name}_{u:03}.wav")), &w)?;
        }
    }
    scan_corpus(root, &[])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpOptions {
    pub target_gain: f64,
    pub source_gain: f64,
    /// Frequency scale applied to the source before mixing.
    pub alpha: f64,
}

impl Default for WarpOptions {
    fn default() -> Self {
        Self {
            target_gain: 1.0,
            source_gain: 0.35,
            alpha: 1.12,
        }
    }
}

/// Dominant target audio (looped over the source duration) plus the source
/// scaled in frequency by `alpha`, both at their own peak level before mixing.
pub fn warp_convert(source: &Waveform<f32>, targets: &[Waveform<f32>], opts: WarpOptions) -> Result<Waveform<f32>> {
    if targets.is_empty() {
        return Err(Error::InvalidConfig("warp converter needs a target utterance".into()));
    }
    let source = resample_linear(source, SYNTH_RATE)?;
    // Reading the source at `alpha` times its rate multiplies every frequency by `alpha`.
    let warped_rate = (SYNTH_RATE as f64 / opts.alpha).round() as u32;
    let warped = resample_linear(&Waveform::new(source.samples.clone(), SYNTH_RATE)?, warped_rate)?;
    let n = source.len();
    let mut target = Vec::with_capacity(n);
    'fill: loop {
        for t in targets {
            let t = resample_linear(t, SYNTH_RATE)?;
            if t.is_empty() {
                return Err(Error::InvalidConfig("empty target utterance".into()));
            }
            for &v in &t.samples {
                if target.len() == n {
                    break 'fill;
                }
                target.push(v as f64);
            }
        }
    }
    let peak = |x: &mut dyn Iterator<Item = f64>| x.fold(0.0f64, |a, v| a.max(v.abs())).max(1e-12);
    let tp = peak(&mut target.iter().copied());
    let wp = peak(&mut warped.samples.iter().map(|&v| v as f64));
    let mixed: Vec<f64> = (0..n)
        .map(|i| {
            let w = warped.samples[i % warped.len()] as f64;
            opts.target_gain * target[i] / tp + opts.source_gain * w / wp
        })
        .collect();
    Ok(peak_normalize(&mixed, 0.9))
}
