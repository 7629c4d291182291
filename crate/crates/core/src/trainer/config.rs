use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

macro_rules! enum_text {
    ($t:ty, $($v:ident => $s:literal),+) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $(Self::$v => $s),+ })
            }
        }
        impl FromStr for $t {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok(Self::$v),)+
                    _ => Err(Error::Config(format!("`{s}` is not one of {}", [$($s),+].join(", ")))),
                }
            }
        }
    };
}
enum_text!(Schedule, Cosine => "cosine", Linear => "linear");
enum_text!(Precision, F32 => "f32", F64 => "f64");

/// Optimization hyper-parameters of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub base_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub layer_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub grad_clip: f64,
    /// Loss is recorded every this many steps.
    pub log_every: usize,
    /// Pretraining only.
    pub mask_ratio: f64,
    /// Exponent applied to inverse-frequency segmentation class weights;
    /// 1 is plain inverse frequency, 0 disables weighting.
    pub class_weight_power: f64,
}

impl TrainConfig {
    /// Desk pretraining defaults: cosine schedule, no layer decay.
    pub fn pretrain() -> Self {
        Self {
            base_lr: 1e-3,
            warmup_steps: 25,
            total_steps: 500,
            schedule: Schedule::Cosine,
            weight_decay: 0.05,
            layer_decay: 1.0,
            batch_size: 32,
            seed: 0,
            precision: Precision::F32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            grad_clip: 1.0,
            log_every: 10,
            mask_ratio: 0.75,
            class_weight_power: 1.0,
        }
    }

    /// Fine-tuning defaults: linear decay, layer decay 0.85, weight decay 0.1.
    pub fn finetune() -> Self {
        Self {
            base_lr: 5e-4,
            warmup_steps: 20,
            total_steps: 400,
            schedule: Schedule::Linear,
            weight_decay: 0.1,
            layer_decay: 0.85,
            batch_size: 16,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.base_lr, self.beta1, self.beta2, self.eps, self.layer_decay];
        if positive.iter().any(|v| !(*v > 0.0)) || self.weight_decay < 0.0 || self.grad_clip < 0.0 {
            return Err(Error::Config("learning rate, betas, eps and layer decay must be positive".into()));
        }
        if self.beta1 >= 1.0 || self.beta2 >= 1.0 {
            return Err(Error::Config("betas must be below 1".into()));
        }
        if self.layer_decay > 1.0 {
            return Err(Error::BadDecay(self.layer_decay));
        }
        if self.warmup_steps > self.total_steps || self.total_steps == 0 {
            return Err(Error::Config(format!(
                "warmup {} must not exceed total {} (> 0)",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::Config("batch size and log interval must be positive".into()));
        }
        if !(self.class_weight_power >= 0.0) {
            return Err(Error::Config("class weight power must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return Err(Error::BadRatio(self.mask_ratio));
        }
        Ok(())
    }

    /// Flat `train.*` keys for config blobs.
    pub fn to_kv(&self, out: &mut BTreeMap<String, String>) {
        let mut put = |k: &str, v: String| {
            out.insert(format!("train.{k}"), v);
        };
        put("base_lr", self.base_lr.to_string());
        put("warmup_steps", self.warmup_steps.to_string());
        put("total_steps", self.total_steps.to_string());
        put("schedule", self.schedule.to_string());
        put("weight_decay", self.weight_decay.to_string());
        put("layer_decay", self.layer_decay.to_string());
        put("batch_size", self.batch_size.to_string());
        put("seed", self.seed.to_string());
        put("precision", self.precision.to_string());
        put("beta1", self.beta1.to_string());
        put("beta2", self.beta2.to_string());
        put("eps", self.eps.to_string());
        put("grad_clip", self.grad_clip.to_string());
        put("log_every", self.log_every.to_string());
        put("mask_ratio", self.mask_ratio.to_string());
        put("class_weight_power", self.class_weight_power.to_string());
    }

    /// Overrides fields from `key = value` pairs (without the `train.` prefix).
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn p<T: FromStr>(k: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("bad value `{v}` for `{k}`")))
        }
        match key {
            "base_lr" => self.base_lr = p(key, value)?,
            "warmup_steps" => self.warmup_steps = p(key, value)?,
            "total_steps" => self.total_steps = p(key, value)?,
            "schedule" => self.schedule = value.trim().parse()?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "layer_decay" => self.layer_decay = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "precision" => self.precision = value.trim().parse()?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "eps" => self.eps = p(key, value)?,
            "grad_clip" => self.grad_clip = p(key, value)?,
            "log_every" => self.log_every = p(key, value)?,
            "mask_ratio" => self.mask_ratio = p(key, value)?,
            "class_weight_power" => self.class_weight_power = p(key, value)?,
            _ => return Err(Error::Config(format!("unknown training key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_kv(kv: &BTreeMap<String, String>, base: TrainConfig) -> Result<Self> {
        let mut c = base;
        for (k, v) in kv {
            if let Some(k) = k.strip_prefix("train.") {
                c.set(k, v)?;
            }
        }
        Ok(c)
    }
}

/// Learning rate at `step`: linear ramp from 0 over the warmup, then cosine
/// or linear decay to 0 at `total_steps`.
pub fn lr_at(step: usize, cfg: &TrainConfig) -> Result<f64> {
    if step > cfg.total_steps {
        return Err(Error::StepOutOfRange {
            step,
            total: cfg.total_steps,
        });
    }
    let (w, n) = (cfg.warmup_steps, cfg.total_steps);
    if step < w {
        return Ok(cfg.base_lr * step as f64 / w as f64);
    }
    if n == w {
        return Ok(cfg.base_lr);
    }
    let t = (step - w) as f64 / (n - w) as f64;
    Ok(match cfg.schedule {
        Schedule::Cosine => cfg.base_lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()),
        Schedule::Linear => cfg.base_lr * (1.0 - t),
    })
}

/// Learning-rate multipliers from the embedding up to the task head.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerMultipliers {
    pub embedding: f64,
    pub layers: Vec<f64>,
    pub head: f64,
}

impl LayerMultipliers {
    /// Multiplier for a named parameter: patch/positional embeddings use the
    /// embedding rate, `blocks.{i}` its layer rate, everything else (final
    /// norm, decoder, task head) the head rate.
    pub fn for_param(&self, name: &str) -> f64 {
        if name.starts_with("patch_embed.") || name == "pos_embed" {
            return self.embedding;
        }
        if let Some(rest) = name.strip_prefix("blocks.") {
            if let Some(i) = rest.split('.').next().and_then(|i| i.parse::<usize>().ok()) {
                if let Some(&m) = self.layers.get(i) {
                    return m;
                }
            }
        }
        self.head
    }
}

/// Head 1, layer `i` gets `decay^(L - i)`, the embedding `decay^(L + 1)`.
pub fn layerwise_multipliers(n_layers: usize, layer_decay: f64) -> Result<LayerMultipliers> {
    if !(layer_decay > 0.0 && layer_decay <= 1.0) {
        return Err(Error::BadDecay(layer_decay));
    }
    Ok(LayerMultipliers {
        embedding: layer_decay.powi(n_layers as i32 + 1),
        layers: (0..n_layers).map(|i| layer_decay.powi((n_layers - i) as i32)).collect(),
        head: 1.0,
    })
}

/// Biases, norms, positional tables and the mask token are not decayed.
pub fn decays(name: &str) -> bool {
    !(name.ends_with(".bias") || name.contains("norm") || name.ends_with("pos_embed") || name.ends_with("mask_token"))
}
