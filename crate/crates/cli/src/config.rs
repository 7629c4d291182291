//! Run configuration: flat `key = value` lines, `#` starts a comment.
//!
//! Recognized keys:
//!
//! - `model` (registry name) and `model.<field>` overrides of its
//!   architecture (`hidden_size`, `layers`, `heads`, `mlp_ratio`,
//!   `patch_size`, `image_height`, `image_width`, `decoder_hidden`,
//!   `decoder_layers`, `decoder_heads`);
//! - `train.<field>` for every [`TrainConfig`] field, plus the shorthands
//!   `seed` and `precision`;
//! - `task`, `init` (`random` or a pretraining checkpoint path), `eval_every`;
//! - `data.manifest` (pretraining images), `data.train`, `data.val`;
//! - `eval.oks_sigma`, `eval.pck_alpha`, `eval.max_dets`,
//!   `eval.delta_threshold`, `eval.flip_test`.
//!
//! Relative paths resolve against the config file's directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sapiens_core::datagen::FINETUNE_SIZE;
use sapiens_core::heads::{Task, DESK_K};
use sapiens_core::metrics::EvalProtocol;
use sapiens_core::trainer::{vit_to_kv, TrainConfig};
use sapiens_core::vit::{registry, ViTConfig};

use crate::error::{io_err, CliError, Result};

/// Which command a config is read for; decides defaults and required keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Pretrain,
    Finetune,
    Eval,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolOverrides {
    pub oks_sigma: Option<f64>,
    pub pck_alpha: Option<f64>,
    pub max_dets: Option<usize>,
    pub delta_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ViTConfig,
    pub train: TrainConfig,
    pub task: Option<Task>,
    /// Pretraining checkpoint to start from; `None` is random init.
    pub init: Option<PathBuf>,
    pub eval_every: usize,
    pub manifest: Option<PathBuf>,
    pub train_manifest: Option<PathBuf>,
    pub val_manifest: Option<PathBuf>,
    pub protocol: ProtocolOverrides,
    pub flip_test: bool,
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Config(format!("bad value `{value}` for `{key}`"))
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

/// Splits config text into ordered pairs, rejecting malformed and repeated keys.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeMap::new();
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", i + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(CliError::Config(format!("line {}: empty key", i + 1)));
        }
        if seen.insert(k.clone(), i + 1).is_some() {
            return Err(CliError::Config(format!("line {}: duplicate key `{k}`", i + 1)));
        }
        out.push((k, v));
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults for `mode` with nothing overridden.
    pub fn defaults(mode: Mode) -> Self {
        let model = registry("desk-tiny").expect("desk-tiny is registered");
        let (model, train) = match mode {
            Mode::Pretrain => (model, TrainConfig::pretrain()),
            _ => (model.with_image(FINETUNE_SIZE.0, FINETUNE_SIZE.1), TrainConfig::finetune()),
        };
        Self {
            model,
            train,
            task: None,
            init: None,
            eval_every: 0,
            manifest: None,
            train_manifest: None,
            val_manifest: None,
            protocol: ProtocolOverrides::default(),
            flip_test: false,
        }
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path, mode: Mode) -> Result<Self> {
        if !path.is_file() {
            return Err(CliError::Config(format!("config file `{}` does not exist", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let cfg = Self::parse(&text, &base, mode)?;
        cfg.validate(mode)?;
        Ok(cfg)
    }

    /// Parses config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path, mode: Mode) -> Result<Self> {
        let pairs = parse_pairs(text)?;
        let mut c = Self::defaults(mode);
        if let Some((_, name)) = pairs.iter().find(|(k, _)| k == "model") {
            let m = registry(name).map_err(|_| bad("model", name))?;
            c.model = if mode == Mode::Pretrain { m } else { m.with_image(FINETUNE_SIZE.0, FINETUNE_SIZE.1) };
        }
        let path = |v: &str| if Path::new(v).is_absolute() { PathBuf::from(v) } else { base.join(v) };
        for (k, v) in &pairs {
            let v = v.as_str();
            match k.as_str() {
                "model" => {}
                "task" => c.task = Some(v.parse().map_err(|_| bad(k, v))?),
                "init" => c.init = if v == "random" { None } else { Some(path(v)) },
                "eval_every" => c.eval_every = num(k, v)?,
                "seed" => c.train.seed = num(k, v)?,
                "precision" => c.train.precision = v.parse().map_err(|_| bad(k, v))?,
                "data.manifest" => c.manifest = Some(path(v)),
                "data.train" => c.train_manifest = Some(path(v)),
                "data.val" => c.val_manifest = Some(path(v)),
                "eval.oks_sigma" => c.protocol.oks_sigma = Some(num(k, v)?),
                "eval.pck_alpha" => c.protocol.pck_alpha = Some(num(k, v)?),
                "eval.max_dets" => c.protocol.max_dets = Some(num(k, v)?),
                "eval.delta_threshold" => c.protocol.delta_threshold = Some(num(k, v)?),
                "eval.flip_test" => c.flip_test = num(k, v)?,
                other => {
                    if let Some(field) = other.strip_prefix("model.") {
                        set_model_field(&mut c.model, field, v)?;
                    } else if let Some(field) = other.strip_prefix("train.") {
                        c.train.set(field, v).map_err(|e| CliError::Config(e.to_string()))?;
                    } else {
                        return Err(CliError::Config(format!("unknown key `{other}`")));
                    }
                }
            }
        }
        Ok(c)
    }

    /// Checks values and that every referenced path exists.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        self.model.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.protocol(Task::Pose).validate().map_err(|e| CliError::Config(e.to_string()))?;
        let need = |p: &Option<PathBuf>, key: &str| -> Result<()> {
            match p {
                None => Err(CliError::Config(format!("`{key}` is required"))),
                Some(_) => Ok(()),
            }
        };
        match mode {
            Mode::Pretrain => need(&self.manifest, "data.manifest")?,
            Mode::Finetune => {
                if self.task.is_none() {
                    return Err(CliError::Config("`task` is required".into()));
                }
                need(&self.train_manifest, "data.train")?;
                need(&self.val_manifest, "data.val")?;
            }
            Mode::Eval => {}
        }
        for p in [&self.manifest, &self.train_manifest, &self.val_manifest, &self.init].into_iter().flatten() {
            if !p.exists() {
                return Err(CliError::Config(format!("path `{}` does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// Evaluation protocol for `task` with this config's overrides applied.
    pub fn protocol(&self, task: Task) -> EvalProtocol {
        let mut p = EvalProtocol::new(task, DESK_K);
        if let Some(s) = self.protocol.oks_sigma {
            p.oks_sigmas = vec![s; DESK_K];
        }
        if let Some(a) = self.protocol.pck_alpha {
            p.pck_alpha = a;
        }
        if let Some(m) = self.protocol.max_dets {
            p.max_dets = m;
        }
        if let Some(d) = self.protocol.delta_threshold {
            p.delta_threshold = d;
        }
        p
    }

    /// Every effective setting as sorted `key = value` lines.
    pub fn echo(&self) -> String {
        let mut kv = BTreeMap::new();
        vit_to_kv(&self.model, &mut kv);
        self.train.to_kv(&mut kv);
        if let Some(t) = self.task {
            kv.insert("task".into(), t.to_string());
        }
        kv.insert(
            "init".into(),
            self.init.as_ref().map_or("random".into(), |p| p.display().to_string()),
        );
        kv.insert("eval_every".into(), self.eval_every.to_string());
        for (k, p) in [("data.manifest", &self.manifest), ("data.train", &self.train_manifest), ("data.val", &self.val_manifest)] {
            if let Some(p) = p {
                kv.insert(k.into(), p.display().to_string());
            }
        }
        kv.insert("eval.flip_test".into(), self.flip_test.to_string());
        let mut s = String::new();
        for (k, v) in kv {
            writeln!(s, "{k} = {v}").expect("write to string");
        }
        s
    }
}

fn set_model_field(m: &mut ViTConfig, field: &str, v: &str) -> Result<()> {
    let key = format!("model.{field}");
    match field {
        "hidden_size" => m.hidden_size = num(&key, v)?,
        "layers" => m.layers = num(&key, v)?,
        "heads" => m.heads = num(&key, v)?,
        "mlp_ratio" => m.mlp_ratio = num(&key, v)?,
        "patch_size" => m.patch_size = num(&key, v)?,
        "image_height" => m.image_height = num(&key, v)?,
        "image_width" => m.image_width = num(&key, v)?,
        "decoder_hidden" => m.decoder_hidden = num(&key, v)?,
        "decoder_layers" => m.decoder_layers = num(&key, v)?,
        "decoder_heads" => m.decoder_heads = num(&key, v)?,
        _ => return Err(CliError::Config(format!("unknown key `{key}`"))),
    }
    Ok(())
}
