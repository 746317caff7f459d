use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kv::KeyValues;

/// Number of VLAD taps on the last trunk stage in the hierarchical variants.
pub const HIERARCHICAL_TAPS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variant {
    /// Trunk -> frequency max-pool -> flatten -> FC.
    Baseline1,
    /// Trunk -> frequency max-pool -> VLAD -> FC.
    Baseline2,
    /// Every last-stage sub-block -> flatten -> shared FC.
    Baseline3,
    /// Every last-stage sub-block -> its own VLAD -> shared FC.
    Hvlad,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline1,
        Variant::Baseline2,
        Variant::Baseline3,
        Variant::Hvlad,
    ];

    pub fn uses_vlad(self) -> bool {
        matches!(self, Variant::Baseline2 | Variant::Hvlad)
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, Variant::Baseline3 | Variant::Hvlad)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline1 => "baseline1",
            Variant::Baseline2 => "baseline2",
            Variant::Baseline3 => "baseline3",
            Variant::Hvlad => "hvlad",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline1" => Ok(Variant::Baseline1),
            "baseline2" => Ok(Variant::Baseline2),
            "baseline3" => Ok(Variant::Baseline3),
            "hvlad" => Ok(Variant::Hvlad),
            other => Err(Error::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub variant: Variant,
    /// VLAD cluster count `K`.
    pub clusters: usize,
    pub n_classes: usize,
    pub trunk_channels: Vec<usize>,
    pub stage_depths: Vec<usize>,
    pub embed_dim: usize,
    /// Frequency bins of the input spectrogram.
    pub input_bins: usize,
    /// Time frames of the input spectrogram.
    pub input_frames: usize,
    pub intra_norm: bool,
    /// Assignment sharpness used when centroids are initialised by k-means,
    /// relative to the mean squared distance to the nearest centroid.
    pub vlad_sharpness: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Hvlad,
            clusters: 64,
            n_classes: 108,
            trunk_channels: vec![16, 32, 64, 128],
            stage_depths: vec![2, 3, 3, 3],
            embed_dim: 512,
            input_bins: 257,
            input_frames: 248,
            intra_norm: true,
            vlad_sharpness: 1.0,
        }
    }
}

impl EncoderConfig {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.clusters < 2 {
            return bad(format!("clusters must be >= 2, got {}", self.clusters));
        }
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.trunk_channels.is_empty() || self.trunk_channels.len() != self.stage_depths.len() {
            return bad(format!(
                "trunk_channels {:?} and stage_depths {:?} must be non-empty and equal length",
                self.trunk_channels, self.stage_depths
            ));
        }
        if self.trunk_channels.iter().any(|&c| c == 0) || self.stage_depths.iter().any(|&d| d == 0) {
            return bad("channel widths and stage depths must be positive".into());
        }
        if *self.stage_depths.last().unwrap() != HIERARCHICAL_TAPS {
            return bad(format!(
                "last stage depth must equal the {HIERARCHICAL_TAPS} hierarchical taps, got {}",
                self.stage_depths.last().unwrap()
            ));
        }
        if self.embed_dim == 0 || self.input_bins == 0 || self.input_frames == 0 {
            return bad("embed_dim and input dimensions must be positive".into());
        }
        if !(self.vlad_sharpness > 0.0) {
            return bad(format!("vlad_sharpness must be > 0, got {}", self.vlad_sharpness));
        }
        Ok(())
    }

    /// Number of aggregation taps feeding the shared FC layer.
    pub fn n_taps(&self) -> usize {
        if self.variant.is_hierarchical() {
            HIERARCHICAL_TAPS
        } else {
            1
        }
    }

    pub fn to_key_values(&self) -> KeyValues {
        let join = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let mut kv = KeyValues::default();
        kv.set("variant", self.variant.as_str());
        kv.set("clusters", self.clusters.to_string());
        kv.set("n_classes", self.n_classes.to_string());
        kv.set("trunk_channels", join(&self.trunk_channels));
        kv.set("stage_depths", join(&self.stage_depths));
        kv.set("embed_dim", self.embed_dim.to_string());
        kv.set("input_bins", self.input_bins.to_string());
        kv.set("input_frames", self.input_frames.to_string());
        kv.set("intra_norm", self.intra_norm.to_string());
        kv.set("vlad_sharpness", self.vlad_sharpness.to_string());
        kv
    }

    /// Reads known keys from `kv`, falling back to defaults for missing ones.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(v) = kv.get("variant") {
            cfg.variant = v.parse()?;
        }
        cfg.clusters = kv.parse_or("clusters", cfg.clusters)?;
        cfg.n_classes = kv.parse_or("n_classes", cfg.n_classes)?;
        if let Some(v) = kv.get("trunk_channels") {
            cfg.trunk_channels = crate::kv::parse_list(v)?;
        }
        if let Some(v) = kv.get("stage_depths") {
            cfg.stage_depths = crate::kv::parse_list(v)?;
        }
        cfg.embed_dim = kv.parse_or("embed_dim", cfg.embed_dim)?;
        cfg.input_bins = kv.parse_or("input_bins", cfg.input_bins)?;
        cfg.input_frames = kv.parse_or("input_frames", cfg.input_frames)?;
        cfg.intra_norm = kv.parse_or("intra_norm", cfg.intra_norm)?;
        cfg.vlad_sharpness = kv.parse_or("vlad_sharpness", cfg.vlad_sharpness)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_key_values().render())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(&KeyValues::load(path)?)
    }
}
