//! Encoder plus task head as one trainable model, and the per-task
//! training targets and losses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sapiens_tensor::{Float, Tensor};

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::heads::{
    depth_loss, head_output_size, normalize_depth, init_head, make_heatmaps, normal_loss, pose_loss, seg_loss, task_head_forward, Task,
    DEFAULT_SIGMA, POSE_STRIDE,
};
use crate::image::{batch_tensor, Image};
use crate::vit::{encode, init_encoder, interpolate_pos_embed, ParamStore, ViTConfig};

/// A ViT encoder with one dense head.
#[derive(Debug, Clone)]
pub struct TaskModel<F: Float = f32> {
    pub cfg: ViTConfig,
    pub task: Task,
    pub channels: usize,
    pub weights: ParamStore<F>,
}

/// Whether `name` belongs to the encoder (as opposed to a decoder or head).
pub fn is_encoder_param(name: &str) -> bool {
    !(name.starts_with("decoder.") || name.starts_with("head."))
}

impl<F: Float> TaskModel<F> {
    /// Encoder and head both freshly initialized from `seed`.
    pub fn random(cfg: &ViTConfig, task: Task, channels: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = init_encoder(cfg, &mut rng)?;
        let mut head_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4845_4144);
        weights.extend_prefixed(&init_head(cfg, channels, &mut head_rng), "head.");
        Ok(Self { cfg: cfg.clone(), task, channels, weights })
    }

    /// Encoder copied from `encoder` (trained at `src_cfg`), positional
    /// embeddings resampled to this model's grid; head initialized from `seed`.
    pub fn from_encoder(
        cfg: &ViTConfig,
        task: Task,
        channels: usize,
        src_cfg: &ViTConfig,
        encoder: &ParamStore<F>,
        seed: u64,
    ) -> Result<Self> {
        let same = |a: &ViTConfig, b: &ViTConfig| {
            (a.hidden_size, a.layers, a.heads, a.mlp_ratio, a.patch_size, a.in_channels)
                == (b.hidden_size, b.layers, b.heads, b.mlp_ratio, b.patch_size, b.in_channels)
        };
        if !same(cfg, src_cfg) {
            return Err(Error::IncompatibleCheckpoint(format!(
                "encoder {}x{} ({} heads, patch {}) vs model {}x{} ({} heads, patch {})",
                src_cfg.layers, src_cfg.hidden_size, src_cfg.heads, src_cfg.patch_size, cfg.layers, cfg.hidden_size, cfg.heads, cfg.patch_size
            )));
        }
        let mut m = Self::random(cfg, task, channels, seed)?;
        let (sr, sc) = src_cfg.grid();
        let (tr, tc) = cfg.grid();
        for (name, t) in encoder.iter().filter(|(n, _)| is_encoder_param(n)) {
            if !m.weights.contains(name) {
                return Err(Error::IncompatibleCheckpoint(format!("unexpected encoder tensor `{name}`")));
            }
            let t = if name == "pos_embed" { interpolate_pos_embed(t, sr, sc, tr, tc)? } else { t.detach() };
            if t.shape() != m.weights.get(name)?.shape() {
                return Err(Error::IncompatibleCheckpoint(format!("`{name}` has shape {:?}", t.shape())));
            }
            m.weights.insert(name.clone(), t);
        }
        Ok(m)
    }

    /// `[b, h, w, c]` images to `[b, channels, h', w']` predictions.
    pub fn forward(&self, images: &Tensor<F>) -> Result<Tensor<F>> {
        let f = encode(images, &self.cfg, &self.weights, None)?;
        task_head_forward(&f, &self.cfg, self.task, &self.weights)
    }

    /// Inference without gradient tracking, in batches of `batch`.
    pub fn predict(&self, images: &[&Image], batch: usize) -> Result<Vec<Vec<F>>> {
        let frozen = Self { weights: self.weights.detached(), ..self.clone() };
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(batch.max(1)) {
            let y = frozen.forward(&batch_tensor(chunk)?)?;
            let per = y.numel() / chunk.len();
            out.extend(y.data().chunks(per).map(|c| c.to_vec()));
        }
        Ok(out)
    }

    pub fn output_size(&self) -> (usize, usize) {
        head_output_size(&self.cfg, self.task)
    }
}

/// Ground truth for one batch, shaped like the head output.
#[derive(Debug, Clone)]
pub enum Targets<F: Float> {
    Pose { heatmaps: Tensor<F>, valid: Vec<bool> },
    Seg { labels: Vec<usize>, class_weights: Vec<f64> },
    Depth { depth: Vec<Tensor<F>>, masks: Vec<Vec<bool>> },
    Normal { normals: Tensor<F>, mask: Vec<bool> },
}

/// Builds targets for the first person of each sample.
pub fn make_targets<F: Float>(task: Task, samples: &[&Sample], cfg: &ViTConfig, class_weights: &[f64]) -> Result<Targets<F>> {
    let (oh, ow) = head_output_size(cfg, task);
    for s in samples {
        if (s.height, s.width) != (cfg.image_height, cfg.image_width) {
            return Err(Error::ShapeMismatch(format!(
                "sample {}x{} for a {}x{} model",
                s.height, s.width, cfg.image_height, cfg.image_width
            )));
        }
    }
    Ok(match task {
        Task::Pose => {
            let k = crate::heads::DESK_K;
            let mut maps = Vec::with_capacity(samples.len() * k * oh * ow);
            let mut valid = Vec::with_capacity(samples.len() * k);
            for s in samples {
                match s.keypoints.first() {
                    Some(kp) => {
                        let h = make_heatmaps(kp, oh, ow, DEFAULT_SIGMA, POSE_STRIDE as f64)?;
                        maps.extend(h.maps);
                        valid.extend(kp.visibility.iter().map(|v| v.labeled()));
                    }
                    None => {
                        maps.extend(std::iter::repeat(0.0).take(k * oh * ow));
                        valid.extend(std::iter::repeat(false).take(k));
                    }
                }
            }
            Targets::Pose {
                heatmaps: Tensor::from_f64(&maps, &[samples.len(), k, oh, ow])?,
                valid,
            }
        }
        Task::Seg => Targets::Seg {
            labels: samples.iter().flat_map(|s| s.part_mask.iter().map(|&c| c as usize)).collect(),
            class_weights: class_weights.to_vec(),
        },
        Task::Depth => Targets::Depth {
            depth: samples
                .iter()
                .map(|s| {
                    let metric: Vec<f64> = s.depth.iter().map(|&d| d as f64).collect();
                    Ok(Tensor::from_f64(&normalize_depth(&metric, &s.human_mask())?, &[1, oh, ow])?)
                })
                .collect::<Result<_>>()?,
            masks: samples.iter().map(|s| s.human_mask()).collect(),
        },
        Task::Normal => {
            let n = oh * ow;
            let mut chw = vec![0.0; samples.len() * 3 * n];
            for (i, s) in samples.iter().enumerate() {
                for p in 0..n {
                    for c in 0..3 {
                        chw[(i * 3 + c) * n + p] = s.normal[p * 3 + c] as f64;
                    }
                }
            }
            Targets::Normal {
                normals: Tensor::from_f64(&chw, &[samples.len(), 3, oh, ow])?,
                mask: samples.iter().flat_map(|s| s.human_mask()).collect(),
            }
        }
    })
}

/// Task loss of a head output against its targets. Depth loss is computed
/// per image (each has its own scale) and averaged.
pub fn task_loss<F: Float>(pred: &Tensor<F>, targets: &Targets<F>) -> Result<Tensor<F>> {
    match targets {
        Targets::Pose { heatmaps, valid } => pose_loss(pred, heatmaps, valid),
        Targets::Seg { labels, class_weights } => seg_loss(pred, labels, class_weights),
        Targets::Depth { depth, masks } => {
            let mut total: Option<Tensor<F>> = None;
            let mut n = 0usize;
            for (i, (d, m)) in depth.iter().zip(masks).enumerate() {
                if !m.iter().any(|&v| v) {
                    continue;
                }
                let p = pred.slice(0, i, i + 1)?.reshape(d.shape())?;
                let l = depth_loss(d, &p, m)?;
                total = Some(match total {
                    Some(t) => t.add(&l)?,
                    None => l,
                });
                n += 1;
            }
            match total {
                Some(t) => Ok(t.scale(1.0 / n as f64)?),
                None => Err(Error::EmptyMask),
            }
        }
        Targets::Normal { normals, mask } => normal_loss(normals, pred, mask),
    }
}
