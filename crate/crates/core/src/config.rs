//! Experiment configuration: every hyperparameter as a named key.
//!
//! Files are JSON or TOML (by extension). Unknown keys are rejected. Any key
//! can be overridden from the environment as `DCREC_<KEY>` (case-insensitive),
//! with the value parsed as JSON and falling back to a plain string.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::dcdt::{DcdtConfig, Variant};
use crate::error::{Error, Result};
use crate::eval::EvalSettings;
use crate::schedule::{NoiseSchedule, ScheduleConfig};
use crate::trainer::{AdamConfig, LambdaKind, LambdaSchedule, LossMask, LossTerm};

pub const ENV_PREFIX: &str = "DCREC_";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub dim: usize,
    pub blocks: usize,
    pub lr: f64,
    pub max_len: usize,
    pub min_len: usize,
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub dropout: f64,
    pub emb_dropout: f64,
    pub delta: f64,
    pub lambda: LambdaKind,
    pub lambda_c: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
    pub tau: f64,
    pub loss_mask: Vec<LossTerm>,
    pub variant: Variant,
    pub max_epochs: usize,
    pub patience: usize,
    pub grad_clip: f64,
    /// Reverse steps `T′` for final evaluation.
    pub inference_steps: usize,
    /// Reverse steps used for the per-epoch validation pass.
    pub val_inference_steps: usize,
    pub eval_batch_size: usize,
    /// Evaluation worker threads; `0` uses all cores. Results do not depend on it.
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            batch_size: 512,
            dim: 128,
            blocks: 4,
            lr: 4e-3,
            max_len: 50,
            min_len: 5,
            steps: 50,
            beta_min: 1e-4,
            beta_max: 0.02,
            dropout: 0.1,
            emb_dropout: 0.4,
            delta: 0.1,
            lambda: LambdaKind::Fix,
            lambda_c: 0.1,
            lambda_max: 0.2,
            lambda_min: 0.003,
            tau: 0.07,
            loss_mask: vec![LossTerm::Prior, LossTerm::Recon, LossTerm::Rank],
            variant: Variant::Dcrec,
            max_epochs: 100,
            patience: 5,
            grad_clip: 1.0,
            inference_steps: 50,
            val_inference_steps: 50,
            eval_batch_size: 256,
            threads: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.message().to_string()))
    }

    /// Reads `.toml` as TOML and anything else as JSON.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)?
        } else {
            Self::from_json(&text)?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `DCREC_*` overrides from `vars`.
    pub fn with_overrides(&self, vars: impl IntoIterator<Item = (String, String)>) -> Result<Self> {
        let Value::Object(mut map) = serde_json::to_value(self)? else {
            unreachable!("config serializes to an object")
        };
        for (key, raw) in vars {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else { continue };
            let field = map
                .keys()
                .find(|k| k.eq_ignore_ascii_case(name))
                .cloned()
                .ok_or_else(|| Error::InvalidConfig(format!("unknown key {name:?} in {key}")))?;
            let value = match serde_json::from_str::<Value>(&raw) {
                Ok(v) => v,
                Err(_) if map[&field].is_array() => {
                    Value::Array(raw.split(',').map(|s| Value::String(s.trim().to_string())).collect())
                }
                Err(_) => Value::String(raw),
            };
            map.insert(field, value);
        }
        let cfg: Self = serde_json::from_value(Value::Object(map)).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies overrides from the process environment.
    pub fn with_env(&self) -> Result<Self> {
        self.with_overrides(std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 || self.dim == 0 || self.blocks == 0 || self.eval_batch_size == 0 {
            return fail("batch_size, dim, blocks and eval_batch_size must be positive".into());
        }
        if !(self.lr > 0.0 && self.tau > 0.0) {
            return fail(format!("lr and tau must be positive, got {} and {}", self.lr, self.tau));
        }
        if self.min_len < 3 || self.min_len > self.max_len {
            return fail(format!("need 3 <= min_len <= max_len, got {} and {}", self.min_len, self.max_len));
        }
        if self.delta < 0.0 || self.grad_clip < 0.0 {
            return fail("delta and grad_clip must be non-negative".into());
        }
        for (name, s) in [("inference_steps", self.inference_steps), ("val_inference_steps", self.val_inference_steps)]
        {
            if s == 0 || s > self.steps {
                return fail(format!("{name} must lie in 1..={}, got {s}", self.steps));
            }
        }
        if self.loss_mask.is_empty() {
            return fail("loss_mask must name at least one term".into());
        }
        self.schedule()?;
        Ok(())
    }

    pub fn schedule_config(&self) -> ScheduleConfig {
        ScheduleConfig { steps: self.steps, beta_min: self.beta_min, beta_max: self.beta_max }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        self.schedule_config().build()
    }

    pub fn dcdt_config(&self, max_len: usize) -> DcdtConfig {
        DcdtConfig {
            blocks: self.blocks,
            dim: self.dim,
            seq_len: max_len,
            dropout: self.dropout,
            emb_dropout: self.emb_dropout,
            variant: self.variant,
        }
    }

    pub fn lambda_schedule(&self) -> LambdaSchedule {
        LambdaSchedule { kind: self.lambda, c: self.lambda_c, max: self.lambda_max, min: self.lambda_min }
    }

    pub fn loss_mask(&self) -> LossMask {
        LossMask::from_terms(&self.loss_mask)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, ..AdamConfig::default() }
    }

    pub fn eval_settings(&self, steps: usize) -> EvalSettings {
        EvalSettings {
            steps,
            delta: self.delta,
            seed: self.seed,
            ks: vec![5, 10],
            batch_size: self.eval_batch_size,
            threads: self.threads,
        }
    }

    /// Keys whose values differ from `other`, in declaration order.
    pub fn diff(&self, other: &Self) -> Vec<String> {
        let (Value::Object(a), Value::Object(b)) =
            (serde_json::to_value(self).expect("object"), serde_json::to_value(other).expect("object"))
        else {
            unreachable!("config serializes to an object")
        };
        a.iter().filter(|(k, v)| b.get(*k) != Some(v)).map(|(k, _)| k.clone()).collect()
    }
}
