use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Speakers dropped from the corpus because of recording problems.
pub const DEFAULT_EXCLUDE: [&str; 2] = ["p280", "p315"];

/// Speaker-per-directory corpus listing, sorted lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusIndex {
    pub root: PathBuf,
    pub speakers: Vec<String>,
    pub utterances: BTreeMap<String, Vec<PathBuf>>,
}

impl CorpusIndex {
    pub fn n_utterances(&self) -> usize {
        self.utterances.values().map(Vec::len).sum()
    }

    pub fn utterances_of(&self, speaker: &str) -> &[PathBuf] {
        self.utterances.get(speaker).map(Vec::as_slice).unwrap_or(&[])
    }
}

fn is_wav(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Lists `root/<speaker>/*.wav`, skipping `exclude`d speaker IDs.
pub fn scan_corpus(root: &Path, exclude: &[&str]) -> Result<CorpusIndex> {
    if !root.is_dir() {
        return Err(Error::NotFound(root.to_path_buf()));
    }
    let mut dirs: Vec<(String, PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if exclude.contains(&name.as_str()) {
            continue;
        }
        dirs.push((name, entry.path()));
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::EmptyCorpus(root.to_path_buf()));
    }
    let mut speakers = Vec::with_capacity(dirs.len());
    let mut utterances = BTreeMap::new();
    for (name, dir) in dirs {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file() && is_wav(p))
            .collect();
        if files.is_empty() {
            return Err(Error::EmptySpeaker(dir));
        }
        files.sort();
        speakers.push(name.clone());
        utterances.insert(name, files);
    }
    Ok(CorpusIndex {
        root: root.to_path_buf(),
        speakers,
        utterances,
    })
}
