use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::augment::SnrSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Single clean reference branch, diffusion loss only.
    Baseline,
    /// Clean and noisy branches with the contrastive speaker loss.
    Noro,
}

/// Training configuration, stored as flat `key = value` lines (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    /// Reference query count.
    pub m: usize,
    /// Model width.
    pub d: usize,
    /// Codebook size.
    pub k: usize,
    pub heads: usize,
    pub layers: usize,
    pub n_blocks: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub momentum: f64,
    pub grad_clip: f64,
    pub seed: u64,
    /// Diffusion target crop length in frames.
    pub crop_frames: usize,
    /// Remove the per-utterance cepstral mean before quantization.
    pub semantic_mean_norm: bool,
    /// Frame budget for fitting the codebook.
    pub kmeans_max_frames: usize,
    pub snr_mean_db: f64,
    pub snr_std_db: f64,
    pub snr_min_db: f64,
    pub snr_max_db: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Baseline,
            alpha: 1.0,
            beta: 0.25,
            tau: 0.1,
            m: 32,
            d: 128,
            k: 64,
            heads: 4,
            layers: 2,
            n_blocks: 6,
            batch_size: 8,
            steps: 2000,
            lr: 1e-3,
            momentum: 0.9,
            grad_clip: 1.0,
            seed: 0,
            crop_frames: 64,
            semantic_mean_norm: true,
            kmeans_max_frames: 4000,
            snr_mean_db: 0.0,
            snr_std_db: 20.0,
            snr_min_db: -10.0,
            snr_max_db: 40.0,
        }
    }
}

impl TrainConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("flat config serializes")
    }

    /// Applies `NORO_SEED` if set.
    pub fn with_env_overrides(mut self) -> Result<Self> {
        if let Ok(v) = std::env::var("NORO_SEED") {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("NORO_SEED is not an integer: {v:?}")))?;
        }
        Ok(self)
    }

    pub fn snr_spec(&self) -> SnrSpec {
        SnrSpec {
            mean_db: self.snr_mean_db,
            std_db: self.snr_std_db,
            clip_range_db: (self.snr_min_db, self.snr_max_db),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return fail(format!(
                "loss weights must be nonnegative (alpha {}, beta {})",
                self.alpha, self.beta
            ));
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if self.m == 0 || self.d == 0 || self.k == 0 || self.layers == 0 || self.n_blocks == 0 {
            return fail("m, d, k, layers and n_blocks must be positive".into());
        }
        if self.heads == 0 || self.d % self.heads != 0 {
            return fail(format!(
                "d = {} is not divisible by {} heads",
                self.d, self.heads
            ));
        }
        if self.d % 2 != 0 {
            return fail(format!("d = {} must be even", self.d));
        }
        if self.batch_size == 0 || (self.mode == Mode::Noro && self.batch_size < 2) {
            return fail(format!(
                "batch size {} too small for {:?} mode",
                self.batch_size, self.mode
            ));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.grad_clip > 0.0) {
            return fail("lr and grad_clip must be positive, momentum in [0, 1)".into());
        }
        if self.crop_frames == 0 || self.kmeans_max_frames < self.k {
            return fail("crop_frames must be positive and kmeans_max_frames at least k".into());
        }
        if !(self.snr_std_db > 0.0 && self.snr_min_db < self.snr_max_db) {
            return fail("invalid SNR distribution".into());
        }
        Ok(())
    }
}
