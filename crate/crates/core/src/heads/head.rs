use std::fmt;
use std::str::FromStr;

use rand::Rng;
use sapiens_tensor::{Conv2dParams, Float, Tensor};
use serde::{Deserialize, Serialize};

use super::heatmap::POSE_STRIDE;
use super::skeleton::{DESK_K, PART_C};
use crate::error::{Error, Result};
use crate::vit::{trunc_normal, ParamStore, ViTConfig, INIT_STD};

/// Channel width of the upsampling stages.
pub const HEAD_WIDTH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Pose,
    Seg,
    Depth,
    Normal,
}

pub const TASKS: [Task; 4] = [Task::Pose, Task::Seg, Task::Depth, Task::Normal];

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Pose => "pose",
            Task::Seg => "seg",
            Task::Depth => "depth",
            Task::Normal => "normal",
        }
    }

    /// Output channels for the desk skeleton and part vocabulary.
    pub fn default_channels(self) -> usize {
        match self {
            Task::Pose => DESK_K,
            Task::Seg => PART_C,
            Task::Depth => 1,
            Task::Normal => 3,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TASKS
            .iter()
            .copied()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task `{s}` (expected pose, seg, depth or normal)")))
    }
}

/// Output `(height, width)` of a task head for the configured input size.
pub fn head_output_size(cfg: &ViTConfig, task: Task) -> (usize, usize) {
    match task {
        Task::Pose => (cfg.image_height / POSE_STRIDE, cfg.image_width / POSE_STRIDE),
        _ => (cfg.image_height, cfg.image_width),
    }
}

/// Two stride-2 transposed convolutions and a 3x3 convolution, stored under `head.`.
pub fn init_head<F: Float, R: Rng + ?Sized>(cfg: &ViTConfig, out_channels: usize, rng: &mut R) -> ParamStore<F> {
    let (d, w) = (cfg.hidden_size, HEAD_WIDTH);
    let mut s = ParamStore::new();
    s.insert("head.deconv1.weight", trunc_normal(&[d, w, 4, 4], conv_std(d * 4), rng));
    s.insert("head.deconv1.bias", Tensor::zeros(&[w]));
    s.insert("head.deconv2.weight", trunc_normal(&[w, w, 4, 4], conv_std(w * 4), rng));
    s.insert("head.deconv2.bias", Tensor::zeros(&[w]));
    s.insert("head.final.weight", trunc_normal(&[out_channels, w, 3, 3], INIT_STD, rng));
    s.insert("head.final.bias", Tensor::zeros(&[out_channels]));
    s
}

// fan-in scaled so activations keep unit scale through the upsampling stack;
// a stride-2 kernel-4 deconvolution sees four taps per input channel
fn conv_std(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

/// Maps encoder tokens `[b, n, d]` to a dense prediction `[b, c, h', w']`.
///
/// Depth predictions are made positive by exponentiating the raw output.
pub fn task_head_forward<F: Float>(features: &Tensor<F>, cfg: &ViTConfig, task: Task, w: &ParamStore<F>) -> Result<Tensor<F>> {
    let (rows, cols) = cfg.grid();
    let s = features.shape();
    if s.len() != 3 || s[1] != rows * cols || s[2] != cfg.hidden_size {
        return Err(Error::ShapeMismatch(format!(
            "features {s:?} for a {rows}x{cols} grid of width {}",
            cfg.hidden_size
        )));
    }
    let b = s[0];
    let up = Conv2dParams { stride: 2, padding: 1 };
    let x = features
        .reshape(&[b, rows, cols, cfg.hidden_size])?
        .permute(&[0, 3, 1, 2])?
        .conv_transpose2d(w.get("head.deconv1.weight")?, Some(w.get("head.deconv1.bias")?), up)?
        .gelu()?
        .conv_transpose2d(w.get("head.deconv2.weight")?, Some(w.get("head.deconv2.bias")?), up)?
        .gelu()?
        .conv2d(w.get("head.final.weight")?, Some(w.get("head.final.bias")?), Conv2dParams { stride: 1, padding: 1 })?;
    let (oh, ow) = head_output_size(cfg, task);
    let x = x.resize_bilinear(oh, ow)?;
    Ok(match task {
        Task::Depth => x.exp()?,
        _ => x,
    })
}
