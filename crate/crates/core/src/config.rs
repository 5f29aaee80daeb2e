//! Run configuration shared by every pipeline stage.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embed::PretrainConfig;
use crate::error::{Error, Result};
use crate::miner::MineConfig;
use crate::ppr::ReasonOptions;
use crate::profile::{ProfileConfig, ProfileVariant};
use crate::reasoner::{Hyperparams, RankLoss};
use crate::seed::derive_seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Embedding size `d`.
    pub dim: usize,
    pub hidden: usize,
    /// Maximum pattern length `H`.
    pub max_len: usize,
    /// Candidate pattern count `M`.
    pub max_patterns: usize,
    /// Output paths per user `K`.
    pub budget: usize,
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub negatives: usize,
    pub rank_loss: RankLoss,
    pub walks_per_pair: usize,
    /// Training paths kept per (user, pattern).
    pub paths_per_pattern: usize,
    pub bound_cap: usize,
    pub prominence_cap: usize,
    pub pretrain_epochs: usize,
    pub pretrain_learning_rate: f64,
    pub pretrain_margin: f64,
    pub top_n: usize,
    pub mask_interacted: bool,
    pub exclude_train: bool,
    pub variant: ProfileVariant,
    pub keep_fraction: f64,
    pub seed: u64,
    /// Worker threads; 0 uses every core.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dim: 100,
            hidden: 256,
            max_len: 3,
            max_patterns: 15,
            budget: 15,
            lambda: 10.0,
            learning_rate: 1e-4,
            batch_size: 128,
            epochs: 20,
            negatives: 5,
            rank_loss: RankLoss::Sigmoid,
            walks_per_pair: 20,
            paths_per_pattern: 50,
            bound_cap: 10,
            prominence_cap: 20,
            pretrain_epochs: 10,
            pretrain_learning_rate: 0.01,
            pretrain_margin: 1.0,
            top_n: 10,
            mask_interacted: true,
            exclude_train: true,
            variant: ProfileVariant::Cafe,
            keep_fraction: 0.7,
            seed: 0,
            threads: 0,
        }
    }
}

impl RunConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.dim == 0 || self.hidden == 0 {
            return bad("dim and hidden must be positive");
        }
        if self.max_len == 0 {
            return bad("max_len must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.keep_fraction) {
            return bad("keep_fraction must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn mine(&self) -> MineConfig {
        MineConfig {
            max_len: self.max_len,
            max_patterns: self.max_patterns,
            walks_per_pair: self.walks_per_pair,
            seed: derive_seed(self.seed, 1),
        }
    }

    pub fn path_seed(&self) -> u64 {
        derive_seed(self.seed, 2)
    }

    pub fn pretrain(&self) -> PretrainConfig {
        PretrainConfig {
            dim: self.dim,
            epochs: self.pretrain_epochs,
            learning_rate: self.pretrain_learning_rate,
            margin: self.pretrain_margin,
            seed: derive_seed(self.seed, 3),
        }
    }

    pub fn hyper(&self) -> Hyperparams {
        Hyperparams {
            dim: self.dim,
            hidden: self.hidden,
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            negatives: self.negatives,
            rank_loss: self.rank_loss,
            seed: derive_seed(self.seed, 4),
        }
    }

    /// Seed for module initialization.
    pub fn init_seed(&self) -> u64 {
        derive_seed(self.seed, 5)
    }

    pub fn profile(&self) -> ProfileConfig {
        ProfileConfig {
            budget: self.budget,
            bound_cap: self.bound_cap,
            prominence_cap: self.prominence_cap,
            seed: derive_seed(self.seed, 6),
        }
    }

    /// Seed for per-user pattern dropping in the unseen-pattern study.
    pub fn keep_seed(&self) -> u64 {
        derive_seed(self.seed, 7)
    }

    pub fn reason(&self) -> ReasonOptions {
        ReasonOptions {
            mask_interacted: self.mask_interacted,
        }
    }

    /// Hex SHA-256 of the canonical JSON form; thread count is excluded
    /// because it never changes results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = 0;
        crate::fingerprint::hash_bytes(&serde_json::to_vec(&c).expect("plain data serializes"))
    }
}
