use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::metrics::topk_accuracy;
use crate::data::{PairingManifest, Split};
use crate::dsp::{load_wav, read_spectrogram, stft_magnitude, write_spectrogram, Frontend, Spectrogram,
    StftConfig,
};
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::model::{EncoderConfig, ModelParams};
use crate::nn::{
    read_checkpoint, softmax_cross_entropy, write_checkpoint, AdamConfig, AdamState, Checkpoint, Mode,
    Tensor,
};
use crate::scalar::Scalar;

/// Examples drawn for the k-means VLAD initialisation.
const VLAD_INIT_EXAMPLES: usize = 64;
/// RNG stream reserved for the VLAD initialisation batch.
const VLAD_INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: u32,
    pub seed: u64,
    pub crop_s: f64,
    /// FFT length of the front end; sets the number of frequency bins.
    pub fft_size: usize,
    /// Checkpoint cadence in steps; 0 writes only the first and last.
    pub eval_every: u32,
    pub checkpoint_dir: Option<PathBuf>,
    pub adam: AdamConfig,
    /// Fit VLAD centroids by k-means on trunk descriptors before step 1.
    pub init_vlad: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            steps: 1000,
            seed: 0,
            crop_s: crate::dsp::DEFAULT_CROP_S,
            fft_size: StftConfig::default().fft_size,
            eval_every: 100,
            checkpoint_dir: None,
            adam: AdamConfig::default(),
            init_vlad: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.crop_s > 0.0) {
            return Err(Error::InvalidConfig(format!("crop_s must be > 0, got {}", self.crop_s)));
        }
        if self.fft_size < 2 {
            return Err(Error::InvalidConfig(format!("fft_size must be >= 2, got {}", self.fft_size)));
        }
        if !(self.adam.lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("lr must be >= 0, got {}", self.adam.lr)));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.set("batch_size", self.batch_size.to_string());
        kv.set("steps", self.steps.to_string());
        kv.set("seed", self.seed.to_string());
        kv.set("crop_s", self.crop_s.to_string());
        kv.set("fft_size", self.fft_size.to_string());
        kv.set("eval_every", self.eval_every.to_string());
        kv.set("lr", self.adam.lr.to_string());
        kv.set("init_vlad", self.init_vlad.to_string());
        kv
    }

    /// Reads known keys, keeping defaults for missing ones.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = Self::default();
        let cfg = Self {
            batch_size: kv.parse_or("batch_size", d.batch_size)?,
            steps: kv.parse_or("steps", d.steps)?,
            seed: kv.parse_or("seed", d.seed)?,
            crop_s: kv.parse_or("crop_s", d.crop_s)?,
            fft_size: kv.parse_or("fft_size", d.fft_size)?,
            eval_every: kv.parse_or("eval_every", d.eval_every)?,
            checkpoint_dir: kv.get("checkpoint_dir").map(PathBuf::from),
            adam: AdamConfig {
                lr: kv.parse_or("lr", d.adam.lr)?,
                ..d.adam
            },
            init_vlad: kv.parse_or("init_vlad", d.init_vlad)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn frontend(&self) -> Frontend {
        let mut f = Frontend {
            crop_s: self.crop_s,
            ..Frontend::default()
        };
        f.stft.fft_size = self.fft_size;
        f
    }
}

/// A full-utterance magnitude spectrogram (not normalised) and its label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example<T> {
    pub spec: Spectrogram<T>,
    pub label: usize,
}

pub fn cache_path(cache_dir: &Path, record: usize) -> PathBuf {
    cache_dir.join(format!("{record:05}.spec"))
}

fn spectrogram_of<T: Scalar>(path: &Path, frontend: &Frontend) -> Result<Spectrogram<T>> {
    let w = frontend.resample(&load_wav::<T>(path)?)?;
    // utterances shorter than one analysis window are wrap-padded to one crop
    let w = if w.len() < frontend.stft.win_len(frontend.sample_rate_hz) {
        crate::dsp::crop_or_pad(&w, frontend.crop_s, &mut ChaCha8Rng::seed_from_u64(0))?
    } else {
        w
    };
    stft_magnitude(&w, &frontend.stft)
}

fn converted_path(manifest: &PairingManifest, i: usize) -> Result<&Path> {
    manifest.records[i]
        .converted_path
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig(format!("record {i} has no converted audio; run convert first")))
}

/// Writes an `HVSPEC1` cache file for every converted record that lacks one.
pub fn extract_cache(manifest: &PairingManifest, frontend: &Frontend, cache_dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(cache_dir)?;
    let todo: Vec<usize> = (0..manifest.records.len())
        .filter(|&i| !cache_path(cache_dir, i).exists())
        .collect();
    todo.par_iter()
        .map(|&i| {
            let s = spectrogram_of::<f32>(converted_path(manifest, i)?, frontend)?;
            write_spectrogram(&cache_path(cache_dir, i), &s)
        })
        .collect::<Result<Vec<()>>>()?;
    Ok(todo.len())
}

/// Spectrograms of the records in `split`, from `cache_dir` when a cache
/// file exists and from the converted audio otherwise.
pub fn load_examples<T: Scalar>(
    manifest: &PairingManifest,
    split: Split,
    frontend: &Frontend,
    cache_dir: Option<&Path>,
) -> Result<Vec<Example<T>>> {
    manifest
        .indices(split)
        .par_iter()
        .map(|&i| {
            let cached = cache_dir.map(|d| cache_path(d, i)).filter(|p| p.exists());
            let spec = match cached {
                Some(p) => read_spectrogram(&p)?,
                None => spectrogram_of(converted_path(manifest, i)?, frontend)?,
            };
            Ok(Example {
                spec,
                label: manifest.records[i].label,
            })
        })
        .collect()
}

/// Stacks one normalised random crop per chosen example into `[B, 1, F, T]`.
pub fn crop_batch<T: Scalar, R: Rng + ?Sized>(
    examples: &[&Example<T>],
    frontend: &Frontend,
    rng: &mut R,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (f, t) = (frontend.n_bins(), frontend.n_frames());
    let mut data = Vec::with_capacity(examples.len() * f * t);
    let mut labels = Vec::with_capacity(examples.len());
    for ex in examples {
        if ex.spec.n_bins != f {
            return Err(Error::shape(format!("spectrogram has {} bins, expected {f}", ex.spec.n_bins)));
        }
        data.extend(frontend.prepare_cached(&ex.spec, rng).to_input().into_data());
        labels.push(ex.label);
    }
    Ok((Tensor::from_vec(&[examples.len(), 1, f, t], data)?, labels))
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The training batch of `step`, a function of `(seed, step)` only.
pub fn batch_for_step<T: Scalar>(
    examples: &[Example<T>],
    frontend: &Frontend,
    cfg: &TrainConfig,
    step: u32,
) -> Result<(Tensor<T>, Vec<usize>)> {
    let mut rng = stream_rng(cfg.seed, step as u64);
    let chosen: Vec<&Example<T>> = (0..cfg.batch_size)
        .map(|_| &examples[rng.gen_range(0..examples.len())])
        .collect();
    crop_batch(&chosen, frontend, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub model: ModelParams<T>,
    pub adam: AdamState<T>,
    /// Completed optimisation steps.
    pub step: u32,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(model: ModelParams<T>, adam: AdamConfig) -> Self {
        let adam = AdamState::new(&model.params, adam);
        Self { model, adam, step: 0 }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint<T>> {
        Ok(Checkpoint {
            tensors: self.model.to_store()?,
            step: self.step,
            adam: Some(self.adam.clone()),
        })
    }

    /// Restores a state written by [`Self::checkpoint`]; `adam` replaces the
    /// stored hyper-parameters.
    pub fn from_checkpoint(config: &EncoderConfig, ckpt: Checkpoint<T>, adam: AdamConfig) -> Result<Self> {
        let model = ModelParams::from_store(config, &ckpt.tensors)?;
        let mut state = match ckpt.adam {
            Some(a) if a.m.same_layout(&model.params) && a.v.same_layout(&model.params) => a,
            Some(_) => return Err(Error::ConfigMismatch("optimizer state layout differs from model".into())),
            None => AdamState::new(&model.params, adam),
        };
        state.config = adam;
        state.t = ckpt.step as u64;
        Ok(Self {
            model,
            adam: state,
            step: ckpt.step,
        })
    }
}

pub fn checkpoint_name(step: u32) -> String {
    format!("ckpt_{step:08}.bin")
}

/// Newest `ckpt_*.bin` in `dir`, by step.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(u32, PathBuf)> = None;
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let step = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("ckpt_"))
            .and_then(|n| n.strip_suffix(".bin"))
            .and_then(|n| n.parse::<u32>().ok());
        if let Some(s) = step {
            if best.as_ref().is_none_or(|(b, _)| s > *b) {
                best = Some((s, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

pub fn load_state<T: Scalar>(config: &EncoderConfig, path: &Path, adam: AdamConfig) -> Result<TrainState<T>> {
    TrainState::from_checkpoint(config, read_checkpoint(path)?, adam)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLog {
    pub step: u32,
    pub loss: f64,
    pub top1: f64,
}

impl StepLog {
    pub fn line(&self) -> String {
        format!("{},{:.6},{:.4}", self.step, self.loss, self.top1)
    }
}

/// `# key=value` lines echoing the run configuration, then the column header.
pub fn write_log_header<W: Write>(w: &mut W, model: &EncoderConfig, train: &TrainConfig, n_targets: usize) -> Result<()> {
    let mut kv = model.to_key_values().merged(&train.to_key_values());
    kv.set("n_targets", n_targets.to_string());
    for line in kv.render().lines() {
        writeln!(w, "# {line}")?;
    }
    writeln!(w, "step,loss,top1")?;
    Ok(())
}

/// Parses a training log into its records, skipping comments and the header.
pub fn read_log(text: &str) -> Result<Vec<StepLog>> {
    let mut out = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "step,loss,top1" {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let bad = || Error::malformed("training log", format!("line {line:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        out.push(StepLog {
            step: parts[0].parse().map_err(|_| bad())?,
            loss: parts[1].parse().map_err(|_| bad())?,
            top1: parts[2].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

fn save(state: &TrainState<impl Scalar>, dir: &Path, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    write_checkpoint(&path, &state.checkpoint()?)?;
    Ok(path)
}

/// Runs optimisation steps `state.step + 1 ..= cfg.steps`, appending one log
/// line per step. Batches and crops depend only on `(cfg.seed, step)`, so a
/// run resumed from a checkpoint follows the unbroken trajectory.
///
/// A non-finite loss or gradient stops training after writing
/// `ckpt_nonfinite_<step>.bin` (when a checkpoint directory is set).
pub fn train<T: Scalar, W: Write>(
    state: &mut TrainState<T>,
    examples: &[Example<T>],
    cfg: &TrainConfig,
    log: &mut W,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::InvalidConfig("no training examples".into()));
    }
    let n_classes = state.model.config.n_classes;
    if let Some(e) = examples.iter().find(|e| e.label >= n_classes) {
        return Err(Error::LabelOutOfRange {
            label: e.label,
            n_classes,
        });
    }
    let frontend = cfg.frontend();
    if frontend.n_frames() != state.model.config.input_frames || frontend.n_bins() != state.model.config.input_bins {
        return Err(Error::InvalidConfig(format!(
            "crop of {} s gives {}x{} inputs, model expects {}x{}",
            cfg.crop_s,
            frontend.n_bins(),
            frontend.n_frames(),
            state.model.config.input_bins,
            state.model.config.input_frames
        )));
    }
    if state.step == 0 {
        if cfg.init_vlad && state.model.config.variant.uses_vlad() {
            let mut rng = stream_rng(cfg.seed, VLAD_INIT_STREAM);
            let n = examples.len().min(VLAD_INIT_EXAMPLES);
            let chosen: Vec<&Example<T>> = rand::seq::index::sample(&mut rng, examples.len(), n)
                .into_iter()
                .map(|i| &examples[i])
                .collect();
            let (x, _) = crop_batch(&chosen, &frontend, &mut rng)?;
            state.model.init_vlad_from_batch(&x, &mut rng)?;
            state.adam = AdamState::new(&state.model.params, cfg.adam);
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            save(state, dir, &checkpoint_name(0))?;
        }
    }
    let mut history = Vec::new();
    while state.step < cfg.steps {
        let step = state.step + 1;
        let (x, labels) = batch_for_step(examples, &frontend, cfg, step)?;
        let out = state.model.forward(&x, Mode::Train)?;
        let (loss, dlogits) = softmax_cross_entropy(&out.logits, &labels)?;
        let grads = if loss.is_finite() {
            let g = state.model.backward(&out.tape, &dlogits)?;
            g.ensure_finite().map(|_| g)
        } else {
            Err(Error::NonFinite(format!("loss at step {step}")))
        };
        let grads = match grads {
            Ok(g) => g,
            Err(e) => {
                if let Some(dir) = &cfg.checkpoint_dir {
                    save(state, dir, &format!("ckpt_nonfinite_{step:08}.bin"))?;
                }
                return Err(match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("{what} (step {step})")),
                    other => other,
                });
            }
        };
        let top1 = topk_accuracy(&out.logits, &labels, 1)?;
        state.adam.step(&mut state.model.params, &grads)?;
        state.model.commit_running(out.running)?;
        state.step = step;
        let entry = StepLog {
            step,
            loss: loss.as_f64(),
            top1,
        };
        writeln!(log, "{}", entry.line())?;
        history.push(entry);
        let due = (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.steps;
        if let (true, Some(dir)) = (due, &cfg.checkpoint_dir) {
            save(state, dir, &checkpoint_name(step))?;
        }
    }
    log.flush()?;
    Ok(history)
}
