use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{format_percent, moving_average, topk_accuracy};
use super::train::{crop_batch, stream_rng, Example, StepLog};
use crate::dsp::Frontend;
use crate::error::{Error, Result};
use crate::model::{EncoderConfig, ModelParams};
use crate::nn::{read_checkpoint, Tensor};
use crate::scalar::Scalar;

/// Window of the accuracy-curve smoothing.
pub const SMOOTHING_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Seeded crops per record; logits are averaged over crops.
    pub n_crops: usize,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_crops: 1,
            seed: 0,
            batch_size: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub clusters: usize,
    pub n_targets: usize,
    pub seed: u64,
    pub step: u32,
    pub n_records: usize,
    pub n_crops: usize,
    pub top1: f64,
    pub top5: f64,
    pub top1_percent: String,
    pub top5_percent: String,
    /// Train-batch top-1 per logged step.
    pub accuracy_series: Vec<f64>,
    pub smoothed_series: Vec<f64>,
}

impl EvalReport {
    /// Attaches the training curve and its smoothed version.
    pub fn with_log(mut self, log: &[StepLog]) -> Result<Self> {
        self.accuracy_series = log.iter().map(|l| l.top1).collect();
        self.smoothed_series = if log.is_empty() {
            Vec::new()
        } else {
            moving_average(&self.accuracy_series, SMOOTHING_WINDOW)?
        };
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Eval-mode logits `[N, n_classes]`. The crops of record `i` come from
/// stream `i` of `opts.seed`, so results do not depend on batching.
pub fn predict_logits<T: Scalar>(
    model: &ModelParams<T>,
    examples: &[Example<T>],
    frontend: &Frontend,
    opts: &EvalOptions,
) -> Result<Tensor<T>> {
    if opts.n_crops == 0 || opts.batch_size == 0 {
        return Err(Error::InvalidConfig("n_crops and batch_size must be >= 1".into()));
    }
    let n_classes = model.config.n_classes;
    let per_chunk: Vec<Vec<T>> = examples
        .par_chunks(opts.batch_size)
        .enumerate()
        .map(|(c, chunk)| {
            let mut sums = vec![T::zero(); chunk.len() * n_classes];
            let mut rngs: Vec<_> = (0..chunk.len())
                .map(|j| stream_rng(opts.seed, (c * opts.batch_size + j) as u64))
                .collect();
            for _ in 0..opts.n_crops {
                let mut data = Vec::new();
                for (ex, rng) in chunk.iter().zip(rngs.iter_mut()) {
                    data.extend(crop_batch(&[ex], frontend, rng)?.0.into_data());
                }
                let x = Tensor::from_vec(&[chunk.len(), 1, frontend.n_bins(), frontend.n_frames()], data)?;
                for (s, &v) in sums.iter_mut().zip(model.logits(&x)?.data()) {
                    *s += v;
                }
            }
            let scale = T::from_usize_lossy(opts.n_crops);
            Ok(sums.into_iter().map(|v| v / scale).collect())
        })
        .collect::<Result<_>>()?;
    Tensor::from_vec(&[examples.len(), n_classes], per_chunk.concat())
}

/// Top-1/top-5 of `model` over `examples` (top-k uses `k = min(5, n_classes)`).
pub fn evaluate<T: Scalar>(
    model: &ModelParams<T>,
    examples: &[Example<T>],
    frontend: &Frontend,
    opts: &EvalOptions,
    step: u32,
    n_targets: usize,
) -> Result<EvalReport> {
    if examples.is_empty() {
        return Err(Error::InvalidConfig("no evaluation records".into()));
    }
    let logits = predict_logits(model, examples, frontend, opts)?;
    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let top1 = topk_accuracy(&logits, &labels, 1)?;
    let top5 = topk_accuracy(&logits, &labels, 5.min(model.config.n_classes))?;
    Ok(EvalReport {
        variant: model.config.variant.as_str().to_string(),
        clusters: model.config.clusters,
        n_targets,
        seed: opts.seed,
        step,
        n_records: examples.len(),
        n_crops: opts.n_crops,
        top1,
        top5,
        top1_percent: format_percent(top1),
        top5_percent: format_percent(top5),
        accuracy_series: Vec::new(),
        smoothed_series: Vec::new(),
    })
}

/// Loads `path` against `config` and evaluates it.
pub fn evaluate_checkpoint<T: Scalar>(
    config: &EncoderConfig,
    path: &Path,
    examples: &[Example<T>],
    frontend: &Frontend,
    opts: &EvalOptions,
    n_targets: usize,
) -> Result<EvalReport> {
    let ckpt = read_checkpoint::<T>(path)?;
    let model = ModelParams::from_store(config, &ckpt.tensors)?;
    evaluate(&model, examples, frontend, opts, ckpt.step, n_targets)
}
