//! Run configuration: one TOML file covering the environment, policy
//! dimensions, corpus generation, pretraining, and GRPO training. Every
//! field has a default, so a partial file (or none) is valid.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::CepstrogramConfig;
use crate::error::{Error, Result};
use crate::grpo::GrpoConfig;
use crate::policy::PolicyConfig;
use crate::synthenv::SynthSpec;

/// Width and context settings of the policy; the vocabulary size always
/// mirrors the environment's.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicySettings {
    pub embed_dim: usize,
    pub context_window: usize,
    pub init_seed: u64,
}

impl Default for PolicySettings {
    fn default() -> Self {
        Self { embed_dim: 16, context_window: 8, init_seed: 1 }
    }
}

/// Corpus generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_pairs: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Fraction of prompts held out for evaluation.
    pub holdout_fraction: f64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self { n_pairs: 200, min_words: 3, max_words: 8, holdout_fraction: 0.2 }
    }
}

/// Supervised pretraining settings for the reference policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: u64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Stop early once the running loss drops below this value.
    pub target_loss: Option<f64>,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { steps: 200, learning_rate: 0.02, batch_size: 16, target_loss: None, seed: 7 }
    }
}

/// Everything a run needs, loadable from a single TOML file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub env: SynthSpec,
    pub cepstrogram: CepstrogramConfig,
    pub policy: PolicySettings,
    pub corpus: CorpusConfig,
    pub pretrain: PretrainConfig,
    pub grpo: GrpoConfig,
}

impl RunConfig {
    pub fn policy_config(&self) -> PolicyConfig {
        PolicyConfig {
            vocab_size: self.env.vocab_size,
            embed_dim: self.policy.embed_dim,
            context_window: self.policy.context_window,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.cepstrogram.validate()?;
        self.policy_config().validate()?;
        self.grpo.validate()?;
        if self.corpus.n_pairs == 0 || self.corpus.min_words == 0 {
            return Err(Error::Config("corpus sizes must be positive".into()));
        }
        if self.corpus.max_words < self.corpus.min_words {
            return Err(Error::Config("corpus max_words < min_words".into()));
        }
        if !(0.0..1.0).contains(&self.corpus.holdout_fraction) {
            return Err(Error::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if self.pretrain.learning_rate <= 0.0 || self.pretrain.batch_size == 0 {
            return Err(Error::Config("pretrain learning_rate and batch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }
}
