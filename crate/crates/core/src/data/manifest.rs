//! Source/target pairing manifests.
//!
//! Serialized as UTF-8 JSON lines: a header object followed by one record per
//! line. Field order is fixed, so equal manifests serialize to equal bytes.

use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::CorpusIndex;
use crate::error::{Error, Result};

pub const DEFAULT_PER_SPEAKER: usize = 100;
pub const MAX_TARGETS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub seed: u64,
    pub n_per_speaker: usize,
    pub n_targets: usize,
    pub converter_id: Option<String>,
    /// Speaker IDs in label order.
    pub speakers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairingRecord {
    pub source_speaker: String,
    pub source_utt: PathBuf,
    pub target_speaker: String,
    pub target_utts: Vec<PathBuf>,
    pub converted_path: Option<PathBuf>,
    /// Class index of the source speaker.
    pub label: usize,
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairingManifest {
    pub header: ManifestHeader,
    pub records: Vec<PairingRecord>,
}

/// Pairs `n_per_speaker` distinct source utterances of every speaker with a
/// uniformly drawn other speaker and `n_targets` of that speaker's utterances.
pub fn build_pairing_manifest(
    index: &CorpusIndex,
    n_per_speaker: usize,
    n_targets: usize,
    seed: u64,
) -> Result<PairingManifest> {
    let s = index.speakers.len();
    if s < 2 {
        return Err(Error::TooFewSpeakers(s));
    }
    if !(1..=MAX_TARGETS).contains(&n_targets) {
        return Err(Error::InvalidConfig(format!(
            "n_targets must be in 1..={MAX_TARGETS}, got {n_targets}"
        )));
    }
    if n_per_speaker == 0 {
        return Err(Error::InvalidConfig("n_per_speaker must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(s * n_per_speaker);
    for (label, speaker) in index.speakers.iter().enumerate() {
        let utts = index.utterances_of(speaker);
        let n = if utts.len() < n_per_speaker {
            log::warn!(
                "speaker {speaker} has {} utterances, fewer than {n_per_speaker}; using all",
                utts.len()
            );
            utts.len()
        } else {
            n_per_speaker
        };
        for ui in sample(&mut rng, utts.len(), n).into_iter() {
            let mut t = rng.gen_range(0..s - 1);
            if t >= label {
                t += 1;
            }
            let target = &index.speakers[t];
            let target_pool = index.utterances_of(target);
            let k = n_targets.min(target_pool.len());
            let target_utts = sample(&mut rng, target_pool.len(), k)
                .into_iter()
                .map(|i| target_pool[i].clone())
                .collect();
            records.push(PairingRecord {
                source_speaker: speaker.clone(),
                source_utt: utts[ui].clone(),
                target_speaker: target.clone(),
                target_utts,
                converted_path: None,
                label,
                split: None,
            });
        }
    }
    Ok(PairingManifest {
        header: ManifestHeader {
            seed,
            n_per_speaker,
            n_targets,
            converter_id: None,
            speakers: index.speakers.clone(),
        },
        records,
    })
}

/// Labels a seeded random `n_train` records as train and the rest as test.
pub fn split_train_test(
    manifest: &PairingManifest,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<PairingManifest> {
    let n = manifest.records.len();
    if n_train + n_test != n {
        return Err(Error::SizeMismatch {
            n_train,
            n_test,
            n_records: n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut out = manifest.clone();
    for (rank, &i) in order.iter().enumerate() {
        out.records[i].split = Some(if rank < n_train { Split::Train } else { Split::Test });
    }
    Ok(out)
}

/// Default test-set size: one sixth of the records (1800 of 10800).
pub fn default_test_size(n_records: usize) -> usize {
    (n_records as f64 / 6.0).round() as usize
}

impl PairingManifest {
    pub fn n_speakers(&self) -> usize {
        self.header.speakers.len()
    }

    /// Indices of records in `split`.
    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == Some(split))
            .collect()
    }

    /// Checks the structural invariants of the pairing protocol.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::malformed("manifest", m));
        let mut seen = std::collections::HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.target_speaker == r.source_speaker {
                return bad(format!("record {i}: target speaker equals source"));
            }
            if r.target_utts.is_empty() || r.target_utts.len() > MAX_TARGETS {
                return bad(format!("record {i}: {} target utterances", r.target_utts.len()));
            }
            if r.label >= self.n_speakers() || self.header.speakers[r.label] != r.source_speaker {
                return bad(format!("record {i}: label {} does not match source", r.label));
            }
            if !seen.insert((&r.source_speaker, &r.source_utt)) {
                return bad(format!("record {i}: repeated source utterance"));
            }
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        serde_json::to_writer(&mut *w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut *w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(buf)
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::malformed("manifest", "empty file"))??;
        let header: ManifestHeader = serde_json::from_str(&header_line)?;
        let mut records = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str(&line)?);
        }
        Ok(Self { header, records })
    }

    /// Writes to a temporary file next to `path`, then renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        self.write_to(&mut std::io::BufWriter::new(tmp.as_file_mut()))?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| Error::Io(e.error))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}
