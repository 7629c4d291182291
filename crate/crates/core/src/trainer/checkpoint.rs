//! Binary checkpoint: magic `SAPD`, a `u32` version, a length-prefixed
//! `key=value` text blob, then a tensor table. Each tensor is a
//! length-prefixed UTF-8 name, a `u32` rank, `u64` extents and a
//! little-endian `f32` payload. Optimizer moments ride along as
//! `optim.m.<name>` / `optim.v.<name>`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use sapiens_tensor::{Float, Tensor};

use super::optim::AdamW;
use crate::error::{io_err, Error, Result};
use crate::heads::{Task, HEAD_WIDTH};
use crate::vit::{ParamStore, ViTConfig};

pub const MAGIC: &[u8; 4] = b"SAPD";
pub const VERSION: u32 = 1;

/// What a checkpoint holds besides the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckpointKind {
    /// Encoder plus reconstruction decoder.
    Pretrain,
    /// Encoder plus one task head.
    Finetune { task: Task, channels: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)>,
}

/// Flat `model.*` keys.
pub fn vit_to_kv(cfg: &ViTConfig, out: &mut BTreeMap<String, String>) {
    let mut put = |k: &str, v: String| {
        out.insert(format!("model.{k}"), v);
    };
    put("name", cfg.name.clone());
    put("hidden_size", cfg.hidden_size.to_string());
    put("layers", cfg.layers.to_string());
    put("heads", cfg.heads.to_string());
    put("mlp_ratio", cfg.mlp_ratio.to_string());
    put("patch_size", cfg.patch_size.to_string());
    put("image_height", cfg.image_height.to_string());
    put("image_width", cfg.image_width.to_string());
    put("in_channels", cfg.in_channels.to_string());
    put("decoder_hidden", cfg.decoder_hidden.to_string());
    put("decoder_layers", cfg.decoder_layers.to_string());
    put("decoder_heads", cfg.decoder_heads.to_string());
}

fn field<T: FromStr>(kv: &BTreeMap<String, String>, key: &str) -> Result<T> {
    let v = kv
        .get(key)
        .ok_or_else(|| Error::CorruptCheckpoint(format!("missing config key `{key}`")))?;
    v.parse()
        .map_err(|_| Error::CorruptCheckpoint(format!("bad value `{v}` for `{key}`")))
}

pub fn vit_from_kv(kv: &BTreeMap<String, String>) -> Result<ViTConfig> {
    let cfg = ViTConfig {
        name: field(kv, "model.name")?,
        hidden_size: field(kv, "model.hidden_size")?,
        layers: field(kv, "model.layers")?,
        heads: field(kv, "model.heads")?,
        mlp_ratio: field(kv, "model.mlp_ratio")?,
        patch_size: field(kv, "model.patch_size")?,
        image_height: field(kv, "model.image_height")?,
        image_width: field(kv, "model.image_width")?,
        in_channels: field(kv, "model.in_channels")?,
        decoder_hidden: field(kv, "model.decoder_hidden")?,
        decoder_layers: field(kv, "model.decoder_layers")?,
        decoder_heads: field(kv, "model.decoder_heads")?,
    };
    cfg.validate()
        .map_err(|e| Error::CorruptCheckpoint(format!("stored model config invalid: {e}")))?;
    Ok(cfg)
}

fn block_shapes(out: &mut BTreeMap<String, Vec<usize>>, prefix: &str, d: usize, m: usize) {
    let mut lin = |name: &str, i: usize, o: usize| {
        out.insert(format!("{prefix}.{name}.weight"), vec![i, o]);
        out.insert(format!("{prefix}.{name}.bias"), vec![o]);
    };
    lin("attn.qkv", d, 3 * d);
    lin("attn.proj", d, d);
    lin("mlp.fc1", d, m);
    lin("mlp.fc2", m, d);
    for n in ["norm1", "norm2"] {
        out.insert(format!("{prefix}.{n}.weight"), vec![d]);
        out.insert(format!("{prefix}.{n}.bias"), vec![d]);
    }
}

/// Name and shape of every parameter a model of this config and kind owns.
pub fn expected_shapes(cfg: &ViTConfig, kind: CheckpointKind) -> BTreeMap<String, Vec<usize>> {
    let d = cfg.hidden_size;
    let mut s = BTreeMap::new();
    s.insert("patch_embed.weight".into(), vec![cfg.patch_dim(), d]);
    s.insert("patch_embed.bias".into(), vec![d]);
    s.insert("pos_embed".into(), vec![cfg.n_tokens(), d]);
    for i in 0..cfg.layers {
        block_shapes(&mut s, &format!("blocks.{i}"), d, cfg.mlp_hidden());
    }
    if cfg.layers > 0 {
        s.insert("norm.weight".into(), vec![d]);
        s.insert("norm.bias".into(), vec![d]);
    }
    match kind {
        CheckpointKind::Pretrain => {
            let dd = cfg.decoder_hidden;
            s.insert("decoder.embed.weight".into(), vec![d, dd]);
            s.insert("decoder.embed.bias".into(), vec![dd]);
            s.insert("decoder.mask_token".into(), vec![dd]);
            s.insert("decoder.pos_embed".into(), vec![cfg.n_tokens(), dd]);
            for i in 0..cfg.decoder_layers {
                block_shapes(&mut s, &format!("decoder.blocks.{i}"), dd, cfg.decoder_mlp_hidden());
            }
            s.insert("decoder.norm.weight".into(), vec![dd]);
            s.insert("decoder.norm.bias".into(), vec![dd]);
            s.insert("decoder.pred.weight".into(), vec![dd, cfg.patch_dim()]);
            s.insert("decoder.pred.bias".into(), vec![cfg.patch_dim()]);
        }
        CheckpointKind::Finetune { channels, .. } => {
            let w = HEAD_WIDTH;
            s.insert("head.deconv1.weight".into(), vec![d, w, 4, 4]);
            s.insert("head.deconv1.bias".into(), vec![w]);
            s.insert("head.deconv2.weight".into(), vec![w, w, 4, 4]);
            s.insert("head.deconv2.bias".into(), vec![w]);
            s.insert("head.final.weight".into(), vec![channels, w, 3, 3]);
            s.insert("head.final.bias".into(), vec![channels]);
        }
    }
    s
}

impl Checkpoint {
    /// Packs weights (rounded to `f32`) and, optionally, optimizer moments.
    pub fn new<F: Float>(
        cfg: &ViTConfig,
        kind: CheckpointKind,
        weights: &ParamStore<F>,
        optim: Option<&AdamW<F>>,
        mut meta: BTreeMap<String, String>,
    ) -> Self {
        vit_to_kv(cfg, &mut meta);
        match kind {
            CheckpointKind::Pretrain => {
                meta.insert("kind".into(), "pretrain".into());
            }
            CheckpointKind::Finetune { task, channels } => {
                meta.insert("kind".into(), "finetune".into());
                meta.insert("task".into(), task.to_string());
                meta.insert("head_channels".into(), channels.to_string());
            }
        }
        let f32s = |v: &[F]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>();
        let mut tensors = BTreeMap::new();
        for (name, t) in weights.iter() {
            tensors.insert(name.clone(), (t.shape().to_vec(), f32s(t.data())));
        }
        if let Some(o) = optim {
            meta.insert("optim.step".into(), o.step.to_string());
            for (prefix, map) in [("optim.m.", &o.m), ("optim.v.", &o.v)] {
                for (name, v) in map {
                    let shape = tensors.get(name).map(|(s, _)| s.clone()).unwrap_or_else(|| vec![v.len()]);
                    tensors.insert(format!("{prefix}{name}"), (shape, f32s(v)));
                }
            }
        }
        Self { meta, tensors }
    }

    pub fn model_config(&self) -> Result<ViTConfig> {
        vit_from_kv(&self.meta)
    }

    pub fn kind(&self) -> Result<CheckpointKind> {
        match self.meta.get("kind").map(String::as_str) {
            Some("pretrain") => Ok(CheckpointKind::Pretrain),
            Some("finetune") => Ok(CheckpointKind::Finetune {
                task: field(&self.meta, "task")?,
                channels: field(&self.meta, "head_channels")?,
            }),
            other => Err(Error::CorruptCheckpoint(format!("unknown checkpoint kind {other:?}"))),
        }
    }

    pub fn get_meta<T: FromStr>(&self, key: &str) -> Result<T> {
        field(&self.meta, key)
    }

    /// Model weights (moments excluded) as trainable-free tensors.
    pub fn weights<F: Float>(&self) -> Result<ParamStore<F>> {
        let mut s = ParamStore::new();
        for (name, (shape, data)) in self.tensors.iter().filter(|(n, _)| !n.starts_with("optim.")) {
            s.insert(name.clone(), Tensor::new(data.iter().map(|&x| F::of_f64(x as f64)).collect(), shape)?);
        }
        Ok(s)
    }

    /// Optimizer state, if the checkpoint carries one.
    pub fn optimizer<F: Float>(&self) -> Result<Option<AdamW<F>>> {
        let Some(step) = self.meta.get("optim.step") else {
            return Ok(None);
        };
        let step = step
            .parse()
            .map_err(|_| Error::CorruptCheckpoint(format!("bad optimizer step `{step}`")))?;
        let mut o = AdamW { step, ..AdamW::new() };
        for (name, (_, data)) in &self.tensors {
            let conv = || data.iter().map(|&x| F::of_f64(x as f64)).collect();
            if let Some(n) = name.strip_prefix("optim.m.") {
                o.m.insert(n.to_string(), conv());
            } else if let Some(n) = name.strip_prefix("optim.v.") {
                o.v.insert(n.to_string(), conv());
            }
        }
        Ok(Some(o))
    }

    /// Checks every stored tensor against the names and shapes implied by the
    /// stored config and kind.
    pub fn validate(&self) -> Result<()> {
        let cfg = self.model_config()?;
        let expected = expected_shapes(&cfg, self.kind()?);
        let mut unknown = Vec::new();
        for (name, (shape, data)) in &self.tensors {
            let base = name
                .strip_prefix("optim.m.")
                .or_else(|| name.strip_prefix("optim.v."))
                .unwrap_or(name);
            match expected.get(base) {
                None => unknown.push(name.clone()),
                Some(s) if s != shape || data.len() != s.iter().product::<usize>() => {
                    return Err(Error::CorruptCheckpoint(format!(
                        "`{name}` has shape {shape:?}, expected {s:?}"
                    )));
                }
                Some(_) => {}
            }
        }
        if !unknown.is_empty() {
            return Err(Error::CorruptCheckpoint(format!("unknown tensors: {}", unknown.join(", "))));
        }
        let present: BTreeSet<&str> = self.tensors.keys().map(String::as_str).collect();
        let missing: Vec<&str> = expected.keys().map(String::as_str).filter(|n| !present.contains(n)).collect();
        if !missing.is_empty() {
            return Err(Error::CorruptCheckpoint(format!("missing tensors: {}", missing.join(", "))));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let blob: String = self.meta.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        out.extend_from_slice(&(blob.len() as u32).to_le_bytes());
        out.extend_from_slice(blob.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, (shape, data)) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
            for &e in shape {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &x in data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::CorruptCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
        }
        let blob_len = r.u32()? as usize;
        let blob = std::str::from_utf8(r.take(blob_len)?)
            .map_err(|_| Error::CorruptCheckpoint("config blob is not UTF-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in blob.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::CorruptCheckpoint(format!("bad config line `{line}`")))?;
            meta.insert(k.to_string(), v.to_string());
        }
        let count = r.u32()?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
            let rank = r.u32()? as usize;
            if rank > 8 {
                return Err(Error::CorruptCheckpoint(format!("`{name}` has rank {rank}")));
            }
            let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &e| a.checked_mul(e));
            let numel = numel
                .filter(|n| n.checked_mul(4).is_some_and(|b| b <= bytes.len()))
                .ok_or_else(|| Error::CorruptCheckpoint(format!("`{name}` extents {shape:?} exceed the file")))?;
            let data = r
                .take(numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.insert(name, (shape, data));
        }
        if r.pos != bytes.len() {
            return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let ck = Self { meta, tensors };
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(io_err(path))?;
        f.write_all(&self.to_bytes()).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(io_err(path))?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::heads::init_head;
    use crate::mae::init_mae;
    use crate::vit::{init_encoder, registry};

    fn shapes<F: Float>(s: &ParamStore<F>) -> BTreeMap<String, Vec<usize>> {
        s.iter().map(|(k, v)| (k.clone(), v.shape().to_vec())).collect()
    }

    #[test]
    fn expected_shapes_match_initializers() {
        let cfg = registry("desk-tiny").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mae = init_mae::<f32, _>(&cfg, &mut rng).unwrap();
        assert_eq!(shapes(&mae), expected_shapes(&cfg, CheckpointKind::Pretrain));
        let mut enc = init_encoder::<f32, _>(&cfg, &mut rng).unwrap();
        enc.extend_prefixed(&init_head(&cfg, 5, &mut rng), "head.");
        let kind = CheckpointKind::Finetune { task: Task::Seg, channels: 5 };
        assert_eq!(shapes(&enc), expected_shapes(&cfg, kind));
    }

    #[test]
    fn bytes_round_trip_and_truncation() {
        let cfg = registry("desk-tiny").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = init_mae::<f32, _>(&cfg, &mut rng).unwrap();
        let ck = Checkpoint::new(&cfg, CheckpointKind::Pretrain, &w, None, BTreeMap::new());
        let bytes = ck.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))));
        }
    }
}
