//! Run configuration: strict JSON (unknown keys rejected), with defaults
//! for everything except the seed and output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::Activation;
use crate::error::{Error, Result};
use crate::losses::{Curriculum, LossWeights};
use crate::matlayers::{ModelDims, Sharing};
use crate::optim::FirstOrderMethod;
use crate::teacher_data::LabelMode;

/// A single seed or a list for multi-seed runs.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(untagged)]
pub enum SeedSpec {
    One(u64),
    Many(Vec<u64>),
}

impl SeedSpec {
    pub fn all(&self) -> Vec<u64> {
        match self {
            SeedSpec::One(s) => vec![*s],
            SeedSpec::Many(v) => v.clone(),
        }
    }

    pub fn first(&self) -> u64 {
        match self {
            SeedSpec::One(s) => *s,
            SeedSpec::Many(v) => v.first().copied().unwrap_or(0),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskConfig {
    #[serde(default = "d16")]
    pub d_in: usize,
    #[serde(default = "two")]
    pub classes: usize,
    #[serde(default = "d32")]
    pub teacher_hidden: usize,
    #[serde(default = "eight")]
    pub mixture_components: usize,
    #[serde(default = "one_f")]
    pub temperature: f64,
    #[serde(default = "soft")]
    pub label_mode: LabelMode,
}

impl Default for TaskConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "d16")]
    pub d: usize,
    #[serde(default = "d16")]
    pub h_s: usize,
    #[serde(default = "d32")]
    pub h_ta: usize,
    #[serde(default = "two")]
    pub n_shared: usize,
    #[serde(default = "one")]
    pub n_extra: usize,
    #[serde(default = "gelu")]
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "one_f")]
    pub w_s: f64,
    #[serde(default = "one_f")]
    pub w_ta: f64,
    /// Distillation weight after the ramp completes.
    #[serde(default = "one_f")]
    pub w_d_target: f64,
    #[serde(default = "ramp_start")]
    pub ramp_start_step: u64,
    #[serde(default = "ramp_end")]
    pub ramp_end_step: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

impl LossConfig {
    pub fn curriculum(&self) -> Curriculum {
        Curriculum {
            ramp_start_step: self.ramp_start_step,
            ramp_end_step: self.ramp_end_step,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptMethod {
    Sgd,
    Adagrad,
    Adam,
    Shampoo,
}

impl OptMethod {
    pub fn as_first_order(self) -> Option<FirstOrderMethod> {
        match self {
            OptMethod::Sgd => Some(FirstOrderMethod::Sgd),
            OptMethod::Adagrad => Some(FirstOrderMethod::Adagrad),
            OptMethod::Adam => Some(FirstOrderMethod::Adam),
            OptMethod::Shampoo => None,
        }
    }
}

/// Whether Shampoo preconditions each nested layer's weight triple as one
/// combined TA matrix (the block structure the report visualizes) or every
/// tensor separately.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PrecondMode {
    Joint,
    PerTensor,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    #[serde(default = "adagrad")]
    pub method: OptMethod,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default = "ten")]
    pub update_interval: u64,
    #[serde(default = "b1")]
    pub beta1: f64,
    #[serde(default = "b2")]
    pub beta2: f64,
    #[serde(default = "joint")]
    pub precond_mode: PrecondMode,
    /// Optional separate learning rate for TA-only parameters; off by
    /// default (one learning rate for both sets).
    #[serde(default)]
    pub lr_ta: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults")
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: SeedSpec,
    #[serde(default)]
    pub task: TaskConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "shared")]
    pub sharing: Sharing,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "d64")]
    pub batch_size: usize,
    #[serde(default = "thousand")]
    pub eval_every: u64,
    #[serde(default = "default_eval_n")]
    pub eval_n: usize,
    pub output_dir: PathBuf,
}

fn one() -> usize { 1 }
fn two() -> usize { 2 }
fn eight() -> usize { 8 }
fn d16() -> usize { 16 }
fn d32() -> usize { 32 }
fn d64() -> usize { 64 }
fn one_f() -> f64 { 1.0 }
fn ten() -> u64 { 10 }
fn thousand() -> u64 { 1000 }
fn ramp_start() -> u64 { 500 }
fn ramp_end() -> u64 { 2000 }
fn default_lr() -> f64 { 0.05 }
fn default_eps() -> f64 { 1e-6 }
fn default_steps() -> u64 { 20_000 }
fn default_eval_n() -> usize { 4096 }
fn b1() -> f64 { 0.9 }
fn b2() -> f64 { 0.999 }
fn soft() -> LabelMode { LabelMode::Soft }
fn gelu() -> Activation { Activation::GeluTanh }
fn adagrad() -> OptMethod { OptMethod::Adagrad }
fn joint() -> PrecondMode { PrecondMode::Joint }
fn shared() -> Sharing { Sharing::Shared }

impl RunConfig {
    pub fn model_dims(&self) -> ModelDims {
        ModelDims {
            d_in: self.task.d_in,
            d: self.model.d,
            h_s: self.model.h_s,
            h_ta: self.model.h_ta,
            n_shared: self.model.n_shared,
            n_extra: self.model.n_extra,
            c: self.task.classes,
        }
    }

    pub fn loss_weights_at(&self, w_d_effective: f64) -> LossWeights {
        LossWeights {
            w_s: self.loss.w_s,
            w_ta: self.loss.w_ta,
            w_d: w_d_effective,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.all().is_empty() {
            return Err(Error::Config("seed list must not be empty".into()));
        }
        self.model_dims().validate()?;
        LossWeights {
            w_s: self.loss.w_s,
            w_ta: self.loss.w_ta,
            w_d: self.loss.w_d_target,
        }
        .validate()?;
        self.loss.curriculum().validate()?;
        let o = &self.optimizer;
        if !(o.lr > 0.0 && o.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", o.lr)));
        }
        if let Some(lr_ta) = o.lr_ta {
            if !(lr_ta > 0.0 && lr_ta.is_finite()) {
                return Err(Error::Config(format!("lr_ta must be positive, got {lr_ta}")));
            }
        }
        if o.epsilon < 0.0 || (o.method == OptMethod::Shampoo && o.epsilon == 0.0) {
            return Err(Error::Config(
                "epsilon must be nonnegative (positive for shampoo)".into(),
            ));
        }
        if o.update_interval == 0 {
            return Err(Error::Config("update_interval must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 || self.eval_n == 0 {
            return Err(Error::Config(
                "batch_size, eval_every and eval_n must be >= 1".into(),
            ));
        }
        if self.task.temperature <= 0.0 {
            return Err(Error::Config("task temperature must be positive".into()));
        }
        Ok(())
    }
}

/// Parses a config file strictly; unknown keys anywhere are an error.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{"seed": 1, "output_dir": "/tmp/x"}"#.to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg: RunConfig = serde_json::from_str(&minimal()).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.seed.all(), vec![1]);
        assert_eq!(cfg.task.d_in, 16);
        assert_eq!(cfg.model.h_ta, 32);
        assert_eq!(cfg.steps, 20_000);
        assert_eq!(cfg.optimizer.method, OptMethod::Adagrad);
    }

    #[test]
    fn unknown_keys_rejected_everywhere() {
        let bad = r#"{"seed": 1, "output_dir": "/tmp/x", "stepz": 3}"#;
        assert!(serde_json::from_str::<RunConfig>(bad).is_err());
        let bad_nested = r#"{"seed": 1, "output_dir": "/tmp/x", "model": {"dd": 4}}"#;
        assert!(serde_json::from_str::<RunConfig>(bad_nested).is_err());
    }

    #[test]
    fn seed_lists_parse() {
        let cfg: RunConfig =
            serde_json::from_str(r#"{"seed": [1, 2, 3], "output_dir": "/tmp/x"}"#).unwrap();
        assert_eq!(cfg.seed.all(), vec![1, 2, 3]);
        assert_eq!(cfg.seed.first(), 1);
    }

    #[test]
    fn validation_catches_bad_dims_and_hypers() {
        let mut cfg: RunConfig = serde_json::from_str(&minimal()).unwrap();
        cfg.model.h_s = 64; // > h_ta
        assert!(cfg.validate().is_err());

        let mut cfg: RunConfig = serde_json::from_str(&minimal()).unwrap();
        cfg.optimizer.lr = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg: RunConfig = serde_json::from_str(&minimal()).unwrap();
        cfg.optimizer.method = OptMethod::Shampoo;
        cfg.optimizer.epsilon = 0.0;
        assert!(cfg.validate().is_err());

        let mut cfg: RunConfig = serde_json::from_str(&minimal()).unwrap();
        cfg.loss.ramp_start_step = 10;
        cfg.loss.ramp_end_step = 5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg: RunConfig = serde_json::from_str(&minimal()).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.model.h_ta, cfg.model.h_ta);
    }
}
