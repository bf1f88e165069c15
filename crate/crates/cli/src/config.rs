//! Run configuration: one JSON file, every key optional, unknown keys rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thyme_core::hier::HierarchyConfig;
use thyme_core::loss::FocalConfig;
use thyme_core::model::ModelConfig;
use thyme_core::temporal::{AttentionKind, CyclicConfig};
use thyme_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub d0: usize,
    /// Hierarchy depth `L_h`.
    pub levels: usize,
    /// Fraction of hierarchy levels that are active.
    pub factor: f64,
    pub attention: AttentionKind,
    pub window: f64,
    pub pool: usize,
    /// Attention width `d_a`; `null` means `d0`.
    pub d_a: Option<usize>,
    pub depth: usize,
    pub head_width: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub lr: f64,
    pub steps: usize,
    pub ks: Vec<usize>,
    /// Feature, attention and head width of the `gradcheck` instance.
    pub gradcheck_width: usize,
    /// Synthetic dataset shape.
    pub videos: usize,
    pub frames: usize,
    pub max_objects: usize,
    /// Train/val/test fractions used by `ablate`.
    pub split: [f64; 3],
    pub data: PathBuf,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            d0: 64,
            levels: 4,
            factor: 1.0,
            attention: AttentionKind::Cyclic,
            window: 1.0,
            pool: 1,
            d_a: None,
            depth: 1,
            head_width: 32,
            focal_alpha: 0.25,
            focal_gamma: 2.0,
            lr: 4.0,
            steps: 500,
            ks: vec![20, 50, 100],
            gradcheck_width: 8,
            videos: 4,
            frames: 8,
            max_objects: 5,
            split: [0.75, 0.0, 0.25],
            data: PathBuf::from("data"),
            out: PathBuf::from("runs"),
            checkpoint: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.ks.contains(&0) {
            return Err(Error::InvalidConfig(format!("K list {:?} must be non-empty and ≥ 1", self.ks)));
        }
        if self.gradcheck_width == 0 {
            return Err(Error::InvalidConfig("gradcheck width must be ≥ 1".into()));
        }
        if self.videos == 0 || self.frames == 0 || self.max_objects == 0 {
            return Err(Error::InvalidConfig("videos, frames and max_objects must be ≥ 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be ≥ 0", self.lr)));
        }
        self.model().validate()
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d0: self.d0,
            hierarchy: HierarchyConfig::uniform(self.levels, self.d0, self.factor),
            temporal: CyclicConfig {
                window_frac: self.window,
                kind: self.attention,
                d_a: self.d_a.unwrap_or(self.d0),
                pool: self.pool,
                depth: self.depth,
                ln_eps: thyme_core::ops::DEFAULT_LN_EPS,
            },
            head_width: self.head_width,
            focal: FocalConfig {
                alpha: self.focal_alpha,
                gamma: self.focal_gamma,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_partial_files() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = RunConfig::from_json(r#"{"seed": 7, "attention": "standard"}"#).unwrap();
        assert_eq!(partial.seed, 7);
        assert_eq!(partial.attention, AttentionKind::Standard);
        assert_eq!(partial.d0, 64);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::from_json(r#"{"sede": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"factor": 0}"#).is_err());
        assert!(RunConfig::from_json(r#"{"ks": []}"#).is_err());
    }
}
