//! Client for an external voice-conversion program.
//!
//! The converter is a command template split on whitespace. `{source}` and
//! `{out}` are replaced by paths; a token that is exactly `{targets}` expands
//! to one argument per target utterance, elsewhere it becomes a
//! comma-separated list.

use std::path::{Path, PathBuf};
use std::process::Command;

use rayon::prelude::*;

use super::manifest::{PairingManifest, PairingRecord};
use crate::dsp::load_wav;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConverterCommand {
    template: String,
}

impl ConverterCommand {
    pub fn new(template: &str) -> Result<Self> {
        let t = template.trim();
        if t.is_empty() {
            return Err(Error::InvalidConfig("empty converter command".into()));
        }
        if !t.contains("{out}") {
            return Err(Error::InvalidConfig(format!(
                "converter command {t:?} has no {{out}} placeholder"
            )));
        }
        Ok(Self {
            template: t.to_string(),
        })
    }

    /// Identity string recorded in the manifest header.
    pub fn id(&self) -> &str {
        &self.template
    }

    pub fn argv(&self, source: &Path, targets: &[PathBuf], out: &Path) -> Vec<String> {
        let joined = targets
            .iter()
            .map(|p| p.to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join(",");
        let mut argv = Vec::new();
        for tok in self.template.split_whitespace() {
            if tok == "{targets}" {
                argv.extend(targets.iter().map(|p| p.to_string_lossy().into_owned()));
                continue;
            }
            argv.push(
                tok.replace("{source}", &source.to_string_lossy())
                    .replace("{out}", &out.to_string_lossy())
                    .replace("{targets}", &joined),
            );
        }
        argv
    }
}

/// Output file name for record `i`.
pub fn converted_name(i: usize, r: &PairingRecord) -> String {
    format!("{i:05}_{}_{}.wav", r.source_speaker, r.target_speaker)
}

/// Runs the converter for one record and checks that it produced loadable,
/// non-empty audio at `out`.
pub fn invoke_converter(record: &PairingRecord, cmd: &ConverterCommand, out: &Path) -> Result<PairingRecord> {
    let argv = cmd.argv(&record.source_utt, &record.target_utts, out);
    let output = Command::new(&argv[0]).args(&argv[1..]).output().map_err(|e| {
        Error::ConverterFailed {
            status: "spawn failed".into(),
            stderr: format!("{}: {e}", argv[0]),
        }
    })?;
    if !output.status.success() {
        return Err(Error::ConverterFailed {
            status: output.status.to_string(),
            stderr: String::from_utf8_lossy(&output.stderr).trim().to_string(),
        });
    }
    let bad = |reason: String| Error::BadOutput {
        path: out.to_path_buf(),
        reason,
    };
    match std::fs::metadata(out) {
        Ok(m) if m.len() > 0 => {}
        Ok(_) => return Err(bad("empty file".into())),
        Err(e) => return Err(bad(e.to_string())),
    }
    let w = load_wav::<f32>(out).map_err(|e| bad(e.to_string()))?;
    if w.is_empty() {
        return Err(bad("no samples".into()));
    }
    let mut r = record.clone();
    r.converted_path = Some(out.to_path_buf());
    Ok(r)
}

/// Converts every record that has no existing output, using up to `jobs`
/// concurrent converter processes. Records are updated in place and the
/// converter identity is stored in the header; the first failure (in record
/// order) is returned after all conversions finish.
pub fn convert_manifest(
    manifest: &mut PairingManifest,
    cmd: &ConverterCommand,
    out_dir: &Path,
    jobs: usize,
) -> Result<usize> {
    std::fs::create_dir_all(out_dir)?;
    let todo: Vec<usize> = (0..manifest.records.len())
        .filter(|&i| {
            manifest.records[i]
                .converted_path
                .as_ref()
                .is_none_or(|p| !p.exists())
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let records = &manifest.records;
    let results: Vec<(usize, Result<PairingRecord>)> = pool.install(|| {
        todo.par_iter()
            .map(|&i| {
                let out = out_dir.join(converted_name(i, &records[i]));
                (i, invoke_converter(&records[i], cmd, &out))
            })
            .collect()
    });
    let mut first_err = None;
    let mut done = 0;
    for (i, r) in results {
        match r {
            Ok(r) => {
                manifest.records[i] = r;
                done += 1;
            }
            Err(e) => {
                if first_err.is_none() {
                    first_err = Some(e);
                }
            }
        }
    }
    manifest.header.converter_id = Some(cmd.id().to_string());
    match first_err {
        Some(e) => Err(e),
        None => Ok(done),
    }
}
