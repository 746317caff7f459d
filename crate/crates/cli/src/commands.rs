use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use hvlad::data::synth::{generate_corpus, warp_convert, WarpOptions};
use hvlad::data::{
    build_pairing_manifest, convert_manifest, default_test_size, scan_corpus, split_train_test, ConverterCommand,
    PairingManifest, Split, DEFAULT_EXCLUDE,
};
use hvlad::dsp::{load_wav, write_wav};
use hvlad::kv::{parse_list, KeyValues};
use hvlad::model::{build_encoder, EncoderConfig};
use hvlad::traineval::{
    checkpoint_name, evaluate_checkpoint, extract_cache, latest_checkpoint, load_examples, load_state, read_log,
    render_svg, render_table, summarize, group_series, train, write_log_header, EvalOptions, EvalReport, TrainConfig,
    TrainState,
};
use log::{info, warn};

use crate::args::*;
use crate::UsageError;

const MODEL_CFG: &str = "model.cfg";
const TRAIN_CFG: &str = "train.cfg";
const TRAIN_LOG: &str = "train.log";

pub fn run(cli: Cli) -> Result<()> {
    let settings = match &cli.config {
        Some(p) => KeyValues::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => KeyValues::default(),
    };
    match cli.command {
        Command::Pair(a) => pair(a, settings),
        Command::Convert(a) => convert(a, settings),
        Command::Extract(a) => extract(a, settings),
        Command::Train(a) => train_cmd(a, settings),
        Command::Eval(a) => eval(a, settings),
        Command::Report(a) => report(a),
        Command::SynthCorpus(a) => synth_corpus(a, settings),
        Command::SynthConvert(a) => synth_convert(a),
    }
}

/// Writes `v` into `kv` under `key` when the flag was given.
fn flag<V: ToString>(kv: &mut KeyValues, key: &str, v: Option<V>) {
    if let Some(v) = v {
        kv.set(key, v.to_string());
    }
}

fn pair(a: PairArgs, mut kv: KeyValues) -> Result<()> {
    flag(&mut kv, "n_targets", a.n_targets);
    flag(&mut kv, "per_speaker", a.per_speaker);
    flag(&mut kv, "test_size", a.test_size);
    flag(&mut kv, "seed", a.seed);
    flag(&mut kv, "exclude", a.exclude.map(|e| e.join(",")));
    let n_targets = kv.parse_or("n_targets", 1usize)?;
    let per_speaker = kv.parse_or("per_speaker", hvlad::data::manifest::DEFAULT_PER_SPEAKER)?;
    let seed = kv.parse_or("seed", 0u64)?;
    let exclude: Vec<String> = match kv.get("exclude") {
        Some("") => Vec::new(),
        Some(list) => parse_list(list)?,
        None => DEFAULT_EXCLUDE.iter().map(|s| s.to_string()).collect(),
    };
    let exclude: Vec<&str> = exclude.iter().map(String::as_str).collect();

    let index = scan_corpus(&a.corpus, &exclude)?;
    info!("{} speakers, {} utterances", index.speakers.len(), index.n_utterances());
    let manifest = build_pairing_manifest(&index, per_speaker, n_targets, seed)?;
    let n = manifest.records.len();
    let n_test = match kv.get("test_size") {
        Some(_) => kv.parse_or("test_size", 0usize)?,
        None => default_test_size(n),
    };
    if n_test > n {
        return Err(UsageError(format!("test size {n_test} exceeds {n} records")).into());
    }
    let manifest = split_train_test(&manifest, n - n_test, n_test, seed)?;
    manifest.save(&a.out)?;
    info!("wrote {} records ({} train / {} test) to {}", n, n - n_test, n_test, a.out.display());
    Ok(())
}

fn convert(a: ConvertArgs, mut kv: KeyValues) -> Result<()> {
    flag(&mut kv, "converter", a.converter);
    let template = kv
        .get("converter")
        .ok_or_else(|| UsageError("no converter given (--converter or `converter=` in --config)".into()))?;
    let cmd = ConverterCommand::new(template)?;
    let mut manifest = PairingManifest::load(&a.manifest)?;
    let jobs = rayon::current_num_threads();
    let result = convert_manifest(&mut manifest, &cmd, &a.out_dir, jobs);
    // keep finished conversions even when some failed, so a re-run resumes
    let out = a.out.as_ref().unwrap_or(&a.manifest);
    manifest.save(out)?;
    let done = result?;
    info!("converted {done} records; manifest at {}", out.display());
    Ok(())
}

fn extract(a: ExtractArgs, mut kv: KeyValues) -> Result<()> {
    flag(&mut kv, "fft_size", a.fft_size);
    let cfg = TrainConfig::from_key_values(&kv)?;
    let manifest = PairingManifest::load(&a.manifest)?;
    let n = extract_cache(&manifest, &cfg.frontend(), &a.cache)?;
    info!("cached {n} spectrograms in {}", a.cache.display());
    Ok(())
}

fn clear_checkpoints(dir: &Path) -> Result<()> {
    while let Some(p) = latest_checkpoint(dir)? {
        warn!("removing stale checkpoint {}", p.display());
        std::fs::remove_file(&p)?;
    }
    Ok(())
}

fn train_cmd(a: TrainArgs, mut kv: KeyValues) -> Result<()> {
    flag(&mut kv, "variant", a.variant.map(|v| hvlad::model::Variant::from(v).as_str()));
    flag(&mut kv, "clusters", a.clusters);
    flag(&mut kv, "steps", a.steps);
    flag(&mut kv, "batch_size", a.batch_size);
    flag(&mut kv, "lr", a.lr);
    flag(&mut kv, "crop_s", a.crop_s);
    flag(&mut kv, "eval_every", a.eval_every);
    flag(&mut kv, "seed", a.seed);
    let mut cfg = TrainConfig::from_key_values(&kv)?;
    cfg.checkpoint_dir = Some(a.out_dir.clone());
    let manifest = PairingManifest::load(&a.manifest)?;
    let frontend = cfg.frontend();
    kv.set("n_classes", manifest.n_speakers().to_string());
    kv.set("input_bins", frontend.n_bins().to_string());
    kv.set("input_frames", frontend.n_frames().to_string());
    let model_cfg = EncoderConfig::from_key_values(&kv)?;

    std::fs::create_dir_all(&a.out_dir)?;
    let model_path = a.out_dir.join(MODEL_CFG);
    let log_path = a.out_dir.join(TRAIN_LOG);
    let resume_from = if a.resume { latest_checkpoint(&a.out_dir)? } else { None };
    let (mut state, log_file) = match resume_from {
        Some(ckpt) => {
            let stored = EncoderConfig::load(&model_path)?;
            if stored != model_cfg {
                return Err(hvlad::Error::ConfigMismatch(format!(
                    "settings differ from the run's {}",
                    model_path.display()
                ))
                .into());
            }
            info!("resuming from {}", ckpt.display());
            let state = load_state::<f32>(&model_cfg, &ckpt, cfg.adam)?;
            truncate_log(&log_path, state.step)?;
            (state, OpenOptions::new().append(true).open(&log_path)?)
        }
        None => {
            clear_checkpoints(&a.out_dir)?;
            model_cfg.save(&model_path)?;
            std::fs::write(a.out_dir.join(TRAIN_CFG), cfg.to_key_values().render())?;
            let mut f = File::create(&log_path)?;
            write_log_header(&mut f, &model_cfg, &cfg, manifest.header.n_targets)?;
            (TrainState::new(build_encoder::<f32>(&model_cfg, cfg.seed)?, cfg.adam), f)
        }
    };
    let examples = load_examples::<f32>(&manifest, Split::Train, &frontend, a.cache.as_deref())?;
    info!(
        "{} on {} train records, {} classes, {} parameters",
        model_cfg.variant,
        examples.len(),
        model_cfg.n_classes,
        state.model.num_trainable()
    );
    let mut log = BufWriter::new(log_file);
    let history = train(&mut state, &examples, &cfg, &mut log)?;
    log.flush()?;
    if let Some(last) = history.last() {
        info!("step {}: loss {:.4}, batch top-1 {:.3}", last.step, last.loss, last.top1);
    }
    info!("checkpoint {}", a.out_dir.join(checkpoint_name(state.step)).display());
    Ok(())
}

/// Drops log lines past `step`, so a resumed run does not repeat steps.
fn truncate_log(path: &Path, step: u32) -> Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let kept: String = text
        .lines()
        .filter(|l| {
            l.split(',')
                .next()
                .and_then(|s| s.parse::<u32>().ok())
                .is_none_or(|s| s <= step)
        })
        .map(|l| format!("{l}\n"))
        .collect();
    std::fs::write(path, kept)?;
    Ok(())
}

fn eval(a: EvalArgs, mut kv: KeyValues) -> Result<()> {
    flag(&mut kv, "n_crops", a.n_crops);
    flag(&mut kv, "eval_seed", a.seed);
    let model_cfg = EncoderConfig::load(&a.run.join(MODEL_CFG))?;
    let train_cfg = TrainConfig::from_key_values(&KeyValues::load(&a.run.join(TRAIN_CFG))?)?;
    let manifest = PairingManifest::load(&a.manifest)?;
    if manifest.n_speakers() != model_cfg.n_classes {
        return Err(hvlad::Error::ConfigMismatch(format!(
            "manifest has {} speakers, model has {} classes",
            manifest.n_speakers(),
            model_cfg.n_classes
        ))
        .into());
    }
    let ckpt = match a.checkpoint {
        Some(p) => p,
        None => latest_checkpoint(&a.run)?.ok_or_else(|| hvlad::Error::NotFound(a.run.join("ckpt_*.bin")))?,
    };
    let opts = EvalOptions {
        n_crops: kv.parse_or("n_crops", 1usize)?,
        seed: kv.parse_or("eval_seed", 0u64)?,
        ..EvalOptions::default()
    };
    let split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let frontend = train_cfg.frontend();
    let examples = load_examples::<f32>(&manifest, split, &frontend, a.cache.as_deref())?;
    let mut report = evaluate_checkpoint(&model_cfg, &ckpt, &examples, &frontend, &opts, manifest.header.n_targets)?;
    let log_path = a.run.join(TRAIN_LOG);
    if log_path.exists() {
        let log = read_log(&std::fs::read_to_string(&log_path)?)?;
        let upto: Vec<_> = log.into_iter().filter(|l| l.step <= report.step).collect();
        report = report.with_log(&upto)?;
    }
    info!("top-1 {} %, top-5 {} % over {} records", report.top1_percent, report.top5_percent, report.n_records);
    let json = report.to_json()? + "\n";
    match a.out {
        Some(p) => std::fs::write(p, json)?,
        None => std::io::stdout().write_all(json.as_bytes())?,
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let reports = a
        .reports
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|_| hvlad::Error::NotFound(p.clone()))?;
            EvalReport::from_json(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let groups = summarize(&reports, a.group)?;
    let table = render_table(&groups);
    match a.table {
        Some(p) => std::fs::write(p, &table)?,
        None => std::io::stdout().write_all(table.as_bytes())?,
    }
    if let Some(p) = a.plot {
        std::fs::write(&p, render_svg(&group_series(&groups)))?;
        info!("plot written to {}", p.display());
    }
    Ok(())
}

fn synth_corpus(a: SynthCorpusArgs, mut kv: KeyValues) -> Result<()> {
    flag(&mut kv, "seed", a.seed);
    let seed = kv.parse_or("seed", 0u64)?;
    let index = generate_corpus(&a.out, a.speakers, a.utterances, a.duration_s, seed)?;
    info!("wrote {} utterances of {} speakers", index.n_utterances(), index.speakers.len());
    Ok(())
}

fn synth_convert(a: SynthConvertArgs) -> Result<()> {
    let source = load_wav::<f32>(&a.source)?;
    let out = match a.mode {
        ConvertMode::Identity => source,
        ConvertMode::Warp => {
            if a.targets.is_empty() {
                return Err(UsageError("warp mode needs at least one target utterance".into()).into());
            }
            let targets = a
                .targets
                .iter()
                .map(|p| load_wav::<f32>(p))
                .collect::<hvlad::Result<Vec<_>>>()?;
            let d = WarpOptions::default();
            let opts = WarpOptions {
                source_gain: a.source_gain.unwrap_or(d.source_gain),
                alpha: a.alpha.unwrap_or(d.alpha),
                ..d
            };
            warp_convert(&source, &targets, opts)?
        }
    };
    write_wav(&a.out, &out)?;
    Ok(())
}
