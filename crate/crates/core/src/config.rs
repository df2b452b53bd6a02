//! Model and training hyperparameters.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type SubjectId = u32;

/// Every architectural and training hyperparameter.
///
/// [`ModelConfig::paper`] carries the full-scale values; the `Default`
/// instance is the desk-scale configuration used by the tests and the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub voxel_counts_by_subject: BTreeMap<SubjectId, usize>,
    /// Fixed length every input is max-pooled to after the stem convolution.
    pub pooled_len: usize,
    pub base_channels: usize,
    /// `ch_mult[0]` is the stem multiplier; each further entry is one level.
    pub ch_mult: Vec<usize>,
    pub num_res_blocks: usize,
    pub num_down_blocks: usize,
    /// Rows of the encoder's output grid (channels of its last convolution).
    pub hidden_tokens: usize,
    /// Columns of the encoder's output grid; equals `pooled_len / 2^num_down_blocks`.
    pub hidden_dim: usize,
    pub latent_dim: usize,
    pub projector_dim: usize,
    pub s2n_layers: usize,
    pub s2n_heads: usize,
    pub s2n_mlp_ratio: usize,
    pub lambda_kl: f64,
    pub lambda_clip: f64,
    pub clip_temperature: f64,
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub s2n_steps: usize,
    pub s2n_eval_every: usize,
    /// Fixed epoch budget for few-shot autoencoder adaptation.
    pub adapt_epochs: usize,
    /// Learning rate for few-shot adaptation of both models.
    pub adapt_lr: f64,
    /// Fixed step budget for few-shot mapper adaptation.
    pub adapt_s2n_steps: usize,
    /// When false the autoencoder is deterministic: `z = mu` and no KL term.
    pub variational: bool,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Full-scale hyperparameters.
    pub fn paper() -> Self {
        Self {
            voxel_counts_by_subject: BTreeMap::from([
                (1, 15724),
                (2, 14278),
                (5, 13039),
                (7, 12682),
            ]),
            pooled_len: 8192,
            base_channels: 128,
            ch_mult: vec![1, 2, 4, 4],
            num_res_blocks: 2,
            num_down_blocks: 1,
            hidden_tokens: 256,
            hidden_dim: 4096,
            latent_dim: 1664,
            projector_dim: 2048,
            s2n_layers: 8,
            s2n_heads: 13,
            s2n_mlp_ratio: 4,
            lambda_kl: 0.001,
            lambda_clip: 1000.0,
            clip_temperature: 0.05,
            lr: 1e-4,
            betas: (0.9, 0.999),
            weight_decay: 0.05,
            batch_size: 24,
            max_epochs: 100,
            patience: 5,
            val_fraction: 0.1,
            s2n_steps: 50_000,
            s2n_eval_every: 500,
            adapt_epochs: 20,
            adapt_lr: 1e-4,
            adapt_s2n_steps: 5_000,
            variational: true,
            seed: 0,
        }
    }

    /// CPU-sized configuration that keeps every shape relationship of
    /// [`ModelConfig::paper`].
    pub fn desk() -> Self {
        Self {
            voxel_counts_by_subject: BTreeMap::from([(0, 512), (1, 480)]),
            pooled_len: 128,
            base_channels: 8,
            ch_mult: vec![1, 2, 2],
            num_res_blocks: 1,
            num_down_blocks: 1,
            hidden_tokens: 16,
            hidden_dim: 64,
            latent_dim: 32,
            projector_dim: 64,
            s2n_layers: 2,
            s2n_heads: 4,
            s2n_mlp_ratio: 4,
            lr: 1e-3,
            batch_size: 16,
            max_epochs: 100,
            s2n_steps: 600,
            s2n_eval_every: 50,
            adapt_epochs: 30,
            adapt_s2n_steps: 300,
            ..Self::paper()
        }
    }

    pub fn num_levels(&self) -> usize {
        self.ch_mult.len().saturating_sub(1)
    }

    /// Channel count of level `i` (0 is the stem).
    pub fn channels(&self, level: usize) -> usize {
        self.base_channels * self.ch_mult[level]
    }

    pub fn voxel_count(&self, subject: SubjectId) -> Result<usize> {
        self.voxel_counts_by_subject
            .get(&subject)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown subject {subject}")))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("pooled_len", self.pooled_len),
            ("base_channels", self.base_channels),
            ("num_res_blocks", self.num_res_blocks),
            ("hidden_tokens", self.hidden_tokens),
            ("hidden_dim", self.hidden_dim),
            ("latent_dim", self.latent_dim),
            ("projector_dim", self.projector_dim),
            ("s2n_layers", self.s2n_layers),
            ("s2n_heads", self.s2n_heads),
            ("s2n_mlp_ratio", self.s2n_mlp_ratio),
            ("max_epochs", self.max_epochs),
            ("s2n_eval_every", self.s2n_eval_every),
            ("adapt_epochs", self.adapt_epochs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.ch_mult.len() < 2 || self.ch_mult.contains(&0) {
            return Err(Error::Config(format!(
                "ch_mult {:?} needs a stem multiplier plus at least one positive level",
                self.ch_mult
            )));
        }
        if self.num_down_blocks > self.num_levels() {
            return Err(Error::Config(format!(
                "num_down_blocks {} exceeds {} levels",
                self.num_down_blocks,
                self.num_levels()
            )));
        }
        let factor = 1usize << self.num_down_blocks;
        if !self.pooled_len.is_multiple_of(factor) {
            return Err(Error::Config(format!(
                "pooled_len {} is not divisible by 2^{}",
                self.pooled_len, self.num_down_blocks
            )));
        }
        if self.hidden_dim != self.pooled_len / factor {
            return Err(Error::Config(format!(
                "hidden_dim {} must equal pooled_len / 2^num_down_blocks = {}",
                self.hidden_dim,
                self.pooled_len / factor
            )));
        }
        if !self.latent_dim.is_multiple_of(self.s2n_heads) {
            return Err(Error::Config(format!(
                "latent_dim {} is not divisible by {} mapper heads",
                self.latent_dim, self.s2n_heads
            )));
        }
        if self.voxel_counts_by_subject.values().any(|&v| v < 2) {
            return Err(Error::Config("every subject needs at least 2 voxels".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if !(self.lr > 0.0 && self.adapt_lr > 0.0 && self.clip_temperature > 0.0) {
            return Err(Error::Config("learning rates and clip_temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("val_fraction must lie in [0, 1)".into()));
        }
        if self.lambda_kl < 0.0 || self.lambda_clip < 0.0 || self.weight_decay < 0.0 {
            return Err(Error::Config("loss weights and weight decay must be >= 0".into()));
        }
        Ok(())
    }
}
