//! Run configuration: a flat JSON file with documented keys.
//!
//! CLI flags override individual fields; the SHA-256 hash of the canonical
//! JSON serialization is recorded in every artifact so a run can be traced
//! back to the exact configuration that produced it.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use crate::continual::{ScheduleParams, SliceTrainConfig};
use crate::model::Reparam;

/// How integer timestamps are bucketed into time slices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// Each distinct timestamp value becomes its own slice.
    Unit,
    /// Timestamps are calendar years; values that look like unix epochs
    /// (|t| >= 10000) are converted to their UTC year first.
    Year,
}

fn default_k() -> usize {
    50
}
fn default_topn() -> usize {
    crate::eval::DEFAULT_TOP_N
}
fn default_tau0() -> f64 {
    1.0
}
fn default_kappa() -> f64 {
    0.7
}
fn default_steps() -> usize {
    200
}
fn default_batch() -> usize {
    100
}
fn default_lr() -> f64 {
    0.01
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_seed() -> u64 {
    42
}
fn default_alpha0() -> f64 {
    0.02
}
fn default_hidden() -> usize {
    100
}
fn default_alpha_min() -> f64 {
    1e-4
}
fn default_boost() -> u32 {
    10
}
fn default_train_ratio() -> f64 {
    0.8
}
fn default_val_ratio() -> f64 {
    0.1
}
fn default_test_ratio() -> f64 {
    0.1
}
fn default_min_df() -> f64 {
    0.0
}
fn default_max_df() -> f64 {
    1.0
}
fn default_granularity() -> Granularity {
    Granularity::Year
}
fn default_reparam() -> Reparam {
    Reparam::GammaBoost
}
fn default_synth_v() -> usize {
    200
}
fn default_synth_slices() -> usize {
    5
}
fn default_synth_docs() -> usize {
    500
}
fn default_synth_len() -> usize {
    50
}
fn default_synth_strength() -> f64 {
    2.5
}

/// Declarative configuration for a run. All fields have documented defaults;
/// unknown keys are rejected so typos fail loudly.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Input corpus (JSON-Lines with `id`, `timestamp`, `text`).
    #[serde(default)]
    pub corpus: Option<String>,
    /// Optional stopword list, one lowercase word per line. A small built-in
    /// English list is used when absent.
    #[serde(default)]
    pub stopwords: Option<String>,
    /// Directory receiving the ingested store / timeline / reports.
    #[serde(default)]
    pub output_dir: Option<String>,

    /// Number of topics K.
    #[serde(default = "default_k")]
    pub k: usize,
    /// Top words per topic used by the metrics and exports.
    #[serde(default = "default_topn")]
    pub topn: usize,

    /// Schedule offset tau0 >= 0; damps early global updates.
    #[serde(default = "default_tau0")]
    pub tau0: f64,
    /// Schedule exponent kappa in (0.5, 1]; controls the forgetting rate.
    #[serde(default = "default_kappa")]
    pub kappa: f64,

    /// Optimizer steps per slice.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Minibatch size.
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Adam learning rate.
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Master seed; every random draw in the pipeline derives from it.
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Carry the encoder across slices instead of re-initializing it.
    #[serde(default)]
    pub warm_start: bool,
    /// Stop a slice early when the validation ELBO plateaus.
    #[serde(default)]
    pub early_stop: bool,
    /// Reparameterization used for the Dirichlet sample.
    #[serde(default = "default_reparam")]
    pub reparam: Reparam,
    /// Symmetric Dirichlet prior concentration per component.
    #[serde(default = "default_alpha0")]
    pub alpha0: f64,
    /// Encoder hidden width H.
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    /// Floor applied to the variational Dirichlet parameters.
    #[serde(default = "default_alpha_min")]
    pub alpha_min: f64,
    /// Shape-augmentation boost B for the Gamma reparameterization.
    #[serde(default = "default_boost")]
    pub boost: u32,

    #[serde(default = "default_train_ratio")]
    pub train_ratio: f64,
    #[serde(default = "default_val_ratio")]
    pub val_ratio: f64,
    #[serde(default = "default_test_ratio")]
    pub test_ratio: f64,

    /// Document-frequency pruning thresholds as corpus fractions.
    #[serde(default = "default_min_df")]
    pub min_df: f64,
    #[serde(default = "default_max_df")]
    pub max_df: f64,
    #[serde(default = "default_granularity")]
    pub granularity: Granularity,

    /// Synthetic-stream generator knobs (`contm synth`).
    #[serde(default = "default_synth_v")]
    pub synth_v: usize,
    #[serde(default = "default_synth_slices")]
    pub synth_slices: usize,
    #[serde(default = "default_synth_docs")]
    pub synth_docs: usize,
    #[serde(default = "default_synth_len")]
    pub synth_len: usize,
    #[serde(default = "default_synth_strength")]
    pub synth_strength: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

/// Errors raised while loading or validating a configuration.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config value: {0}")]
    Invalid(String),
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let err = |msg: String| Err(ConfigError::Invalid(msg));
        if self.k == 0 {
            return err("k must be >= 1".into());
        }
        if self.topn == 0 {
            return err("topn must be >= 1".into());
        }
        if self.tau0 < 0.0 {
            return err(format!("tau0 must be >= 0, got {}", self.tau0));
        }
        if !(self.kappa > 0.5 && self.kappa <= 1.0) {
            return err(format!("kappa must lie in (0.5, 1], got {}", self.kappa));
        }
        if self.steps == 0 || self.batch == 0 {
            return err("steps and batch must be >= 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return err(format!("lr must be positive, got {}", self.lr));
        }
        if self.alpha0 <= 0.0 {
            return err(format!("alpha0 must be positive, got {}", self.alpha0));
        }
        if self.hidden == 0 {
            return err("hidden must be >= 1".into());
        }
        if self.alpha_min <= 0.0 {
            return err(format!("alpha_min must be positive, got {}", self.alpha_min));
        }
        if self.boost == 0 {
            return err("boost must be >= 1".into());
        }
        let ratio_sum = self.train_ratio + self.val_ratio + self.test_ratio;
        if self.train_ratio < 0.0 || self.val_ratio < 0.0 || self.test_ratio < 0.0 {
            return err("split ratios must be nonnegative".into());
        }
        if (ratio_sum - 1.0).abs() > 1e-9 {
            return err(format!("split ratios must sum to 1, got {ratio_sum}"));
        }
        if !(0.0..1.0).contains(&self.min_df) || !(self.max_df > self.min_df && self.max_df <= 1.0)
        {
            return err(format!(
                "require 0 <= min_df < max_df <= 1, got ({}, {})",
                self.min_df, self.max_df
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON serialization, hex-encoded. The output
    /// directory is excluded: where a run is written is not part of what the
    /// run is, and relocated artifacts should keep verifying.
    pub fn hash(&self) -> String {
        let mut semantic = self.clone();
        semantic.output_dir = None;
        let canonical = serde_json::to_string(&semantic).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = String::with_capacity(64);
        for byte in digest {
            use std::fmt::Write;
            write!(out, "{byte:02x}").expect("hex write");
        }
        out
    }

    pub fn schedule(&self) -> ScheduleParams {
        ScheduleParams {
            tau0: self.tau0,
            kappa: self.kappa,
        }
    }

    pub fn train_config(&self) -> SliceTrainConfig {
        SliceTrainConfig {
            steps: self.steps,
            batch: self.batch,
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            seed: self.seed,
            warm_start: self.warm_start,
            early_stop: self.early_stop,
            reparam: self.reparam,
            alpha0: self.alpha0,
            hidden: self.hidden,
            alpha_min: self.alpha_min,
            boost: self.boost,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_documented_values() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.k, 50);
        assert_eq!(cfg.kappa, 0.7);
        assert_eq!(cfg.tau0, 1.0);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.batch, 100);
        assert_eq!(cfg.steps, 200);
        assert_eq!(
            (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio),
            (0.8, 0.1, 0.1)
        );
        cfg.validate().unwrap();
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = RunConfig::default();
        let b = RunConfig::default();
        assert_eq!(a.hash(), b.hash());
        let c = RunConfig {
            k: 20,
            ..RunConfig::default()
        };
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let res: Result<RunConfig, _> = serde_json::from_str(r#"{"kapa": 0.7}"#);
        assert!(res.is_err());
    }

    #[test]
    fn bad_ranges_are_rejected() {
        let cfg = RunConfig {
            kappa: 0.4,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = RunConfig {
            min_df: 0.9,
            max_df: 0.5,
            ..RunConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
