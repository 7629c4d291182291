use rand::Rng;
use sapiens_tensor::{Float, Tensor};

use super::config::ViTConfig;
use super::params::{trunc_normal, ParamStore, INIT_STD};
use super::patch::patchify_batch;
use crate::error::{Error, Result};

pub const LN_EPS: f64 = 1e-6;

/// Per-item token indices kept by the encoder; every item keeps the same count.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSelection {
    pub n_tokens: usize,
    pub per_item: Vec<Vec<usize>>,
}

impl TokenSelection {
    pub fn new(n_tokens: usize, per_item: Vec<Vec<usize>>) -> Result<Self> {
        let k = per_item.first().map_or(0, Vec::len);
        for idx in &per_item {
            if idx.len() != k {
                return Err(Error::ShapeMismatch("items keep different token counts".into()));
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= n_tokens) {
                return Err(Error::ShapeMismatch(format!("token {bad} out of {n_tokens}")));
            }
        }
        Ok(Self { n_tokens, per_item })
    }

    /// Builds a selection from one boolean visibility mask per item.
    pub fn from_masks(masks: &[Vec<bool>]) -> Result<Self> {
        let n = masks.first().map_or(0, Vec::len);
        if masks.iter().any(|m| m.len() != n) {
            return Err(Error::ShapeMismatch("visibility masks differ in length".into()));
        }
        let per_item = masks
            .iter()
            .map(|m| m.iter().enumerate().filter(|(_, &v)| v).map(|(i, _)| i).collect())
            .collect();
        Self::new(n, per_item)
    }

    pub fn kept(&self) -> usize {
        self.per_item.first().map_or(0, Vec::len)
    }

    /// Flat row indices into a `[batch * n_tokens, ..]` view.
    pub fn flat_indices(&self) -> Vec<usize> {
        self.per_item
            .iter()
            .enumerate()
            .flat_map(|(b, idx)| idx.iter().map(move |&i| b * self.n_tokens + i))
            .collect()
    }
}

fn linear_params<F: Float, R: Rng + ?Sized>(store: &mut ParamStore<F>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    store.insert(format!("{name}.weight"), trunc_normal(&[fan_in, fan_out], INIT_STD, rng));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out]));
}

fn norm_params<F: Float>(store: &mut ParamStore<F>, name: &str, d: usize) {
    store.insert(format!("{name}.weight"), Tensor::ones(&[d]));
    store.insert(format!("{name}.bias"), Tensor::zeros(&[d]));
}

/// Allocates one pre-norm block under `prefix`.
pub fn init_block<F: Float, R: Rng + ?Sized>(store: &mut ParamStore<F>, prefix: &str, d: usize, mlp: usize, rng: &mut R) {
    norm_params(store, &format!("{prefix}.norm1"), d);
    linear_params(store, &format!("{prefix}.attn.qkv"), d, 3 * d, rng);
    linear_params(store, &format!("{prefix}.attn.proj"), d, d, rng);
    norm_params(store, &format!("{prefix}.norm2"), d);
    linear_params(store, &format!("{prefix}.mlp.fc1"), d, mlp, rng);
    linear_params(store, &format!("{prefix}.mlp.fc2"), mlp, d, rng);
}

/// Encoder weights: truncated-normal projections and positional table, zero
/// biases, unit norms.
pub fn init_encoder<F: Float, R: Rng + ?Sized>(cfg: &ViTConfig, rng: &mut R) -> Result<ParamStore<F>> {
    cfg.validate()?;
    let d = cfg.hidden_size;
    let mut s = ParamStore::new();
    linear_params(&mut s, "patch_embed", cfg.patch_dim(), d, rng);
    s.insert("pos_embed", trunc_normal(&[cfg.n_tokens(), d], INIT_STD, rng));
    for i in 0..cfg.layers {
        init_block(&mut s, &format!("blocks.{i}"), d, cfg.mlp_hidden(), rng);
    }
    if cfg.layers > 0 {
        norm_params(&mut s, "norm", d);
    }
    Ok(s)
}

pub fn linear<F: Float>(x: &Tensor<F>, w: &ParamStore<F>, name: &str) -> Result<Tensor<F>> {
    let weight = w.get(&format!("{name}.weight"))?;
    let bias = w.get(&format!("{name}.bias"))?;
    Ok(x.matmul(weight)?.add(bias)?)
}

pub fn layer_norm<F: Float>(x: &Tensor<F>, w: &ParamStore<F>, name: &str) -> Result<Tensor<F>> {
    let weight = w.get(&format!("{name}.weight"))?;
    let bias = w.get(&format!("{name}.bias"))?;
    Ok(x.layer_norm(Some(weight), Some(bias), LN_EPS)?)
}

/// Multi-head self-attention over `[b, n, d]`.
pub fn attention<F: Float>(x: &Tensor<F>, w: &ParamStore<F>, prefix: &str, heads: usize) -> Result<Tensor<F>> {
    let [b, n, d] = match *x.shape() {
        [b, n, d] => [b, n, d],
        _ => return Err(Error::ShapeMismatch(format!("attention input {:?}", x.shape()))),
    };
    let dh = d / heads;
    let qkv = linear(x, w, &format!("{prefix}.qkv"))?
        .reshape(&[b, n, 3, heads, dh])?
        .permute(&[2, 0, 3, 1, 4])?
        .reshape(&[3, b * heads, n, dh])?;
    let pick = |i: usize| -> Result<Tensor<F>> { Ok(qkv.slice(0, i, i + 1)?.reshape(&[b * heads, n, dh])?) };
    let (q, k, v) = (pick(0)?, pick(1)?, pick(2)?);
    let scores = q.matmul(&k.transpose(1, 2)?)?.scale(1.0 / (dh as f64).sqrt())?;
    let attn = scores.softmax()?;
    let ctx = attn
        .matmul(&v)?
        .reshape(&[b, heads, n, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(&[b, n, d])?;
    linear(&ctx, w, &format!("{prefix}.proj"))
}

/// `x + attn(norm1(x))` then `x + mlp(norm2(x))`.
pub fn block_forward<F: Float>(x: &Tensor<F>, w: &ParamStore<F>, prefix: &str, heads: usize) -> Result<Tensor<F>> {
    let h = layer_norm(x, w, &format!("{prefix}.norm1"))?;
    let x = x.add(&attention(&h, w, &format!("{prefix}.attn"), heads)?)?;
    let h = layer_norm(&x, w, &format!("{prefix}.norm2"))?;
    let h = linear(&h, w, &format!("{prefix}.mlp.fc1"))?.gelu()?;
    let h = linear(&h, w, &format!("{prefix}.mlp.fc2"))?;
    Ok(x.add(&h)?)
}

/// Runs the encoder on `[batch, h, w, c]` images and returns
/// `[batch, n_kept, hidden]` features in the kept-token order.
///
/// Positional embeddings are added before dropping hidden tokens, so a kept
/// token carries its original position.
pub fn encode<F: Float>(
    images: &Tensor<F>,
    cfg: &ViTConfig,
    weights: &ParamStore<F>,
    visible: Option<&TokenSelection>,
) -> Result<Tensor<F>> {
    let shape = images.shape();
    if shape.len() != 4 || shape[1] != cfg.image_height || shape[2] != cfg.image_width || shape[3] != cfg.in_channels {
        return Err(Error::ShapeMismatch(format!(
            "images {:?} for a {}x{}x{} model",
            shape, cfg.image_height, cfg.image_width, cfg.in_channels
        )));
    }
    let b = shape[0];
    let n = cfg.n_tokens();
    let d = cfg.hidden_size;
    let patches = patchify_batch(images, cfg.patch_size)?;
    let pos = weights.get("pos_embed")?;
    if pos.shape() != [n, d] {
        return Err(Error::ShapeMismatch(format!("pos_embed {:?}, expected [{n}, {d}]", pos.shape())));
    }
    let mut x = linear(&patches, weights, "patch_embed")?.add(pos)?;
    if let Some(sel) = visible {
        if sel.n_tokens != n || sel.per_item.len() != b {
            return Err(Error::ShapeMismatch(format!(
                "selection over {} tokens x {} items for {n} tokens x {b} items",
                sel.n_tokens,
                sel.per_item.len()
            )));
        }
        x = x
            .reshape(&[b * n, d])?
            .index_select(0, &sel.flat_indices())?
            .reshape(&[b, sel.kept(), d])?;
    }
    for i in 0..cfg.layers {
        x = block_forward(&x, weights, &format!("blocks.{i}"), cfg.heads)?;
    }
    if cfg.layers > 0 {
        x = layer_norm(&x, weights, "norm")?;
    }
    Ok(x)
}
