#![allow(dead_code)]

use hvlad::dsp::Spectrogram;
use hvlad::model::{EncoderConfig, Variant};
use hvlad::nn::AdamConfig;
use hvlad::traineval::{Example, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Classes differ by a bright frequency band over uniform noise.
pub fn band_examples(n_classes: usize, n_per_class: usize, bins: usize, frames: usize, seed: u64) -> Vec<Example<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = bins / n_classes;
    let mut out = Vec::new();
    for label in 0..n_classes {
        for _ in 0..n_per_class {
            let values = (0..frames * bins)
                .map(|i| {
                    let f = i % bins;
                    let band = if f / width == label { 3.0 } else { 0.0 };
                    band + rng.gen_range(0.0..1.0f32)
                })
                .collect();
            out.push(Example {
                spec: Spectrogram {
                    values,
                    n_frames: frames,
                    n_bins: bins,
                    hop_s: 0.01,
                    win_s: 0.025,
                    normalized: false,
                },
                label,
            });
        }
    }
    out
}

/// Small HVLAD over 33-bin, 18-frame crops (64-point FFT, 0.2 s).
pub fn small_setup(n_classes: usize, seed: u64, steps: u32) -> (EncoderConfig, TrainConfig) {
    let model = EncoderConfig {
        variant: Variant::Hvlad,
        clusters: 4,
        n_classes,
        trunk_channels: vec![4, 4, 8, 8],
        embed_dim: 16,
        input_bins: 33,
        input_frames: 18,
        ..EncoderConfig::default()
    };
    let train = TrainConfig {
        batch_size: 8,
        steps,
        seed,
        crop_s: 0.2,
        fft_size: 64,
        eval_every: 0,
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        ..TrainConfig::default()
    };
    (model, train)
}

pub mod gradients;
pub mod oracles;
