use std::path::PathBuf;

use sapiens_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("image {height}x{width} is not divisible by patch size {patch}")]
    IndivisibleImage { height: usize, width: usize, patch: usize },
    #[error("embedding of {len} rows cannot form a {rows}x{cols} grid")]
    BadGrid { len: usize, rows: usize, cols: usize },
    #[error("missing weight `{0}`")]
    MissingWeight(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("mask ratio {0} outside [0, 1)")]
    BadRatio(f64),
    #[error("mask plan covers {plan} tokens but the image has {image}")]
    PlanMismatch { plan: usize, image: usize },
    #[error("bad size: {0}")]
    BadSize(String),
    #[error("class {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },
    #[error("depth map has a single distinct value over the human mask")]
    DegenerateDepth,
    #[error("human mask is empty")]
    EmptyMask,
    #[error("non-positive depth {0} on a human pixel")]
    NonPositiveDepth(f64),
    #[error("scene has no visible figure pixel")]
    EmptyScene,
    #[error("background {bg_h}x{bg_w} smaller than sample {h}x{w}")]
    TooSmallBackground { bg_h: usize, bg_w: usize, h: usize, w: usize },
    #[error("crop leaves no human pixel")]
    DegenerateCrop,
    #[error("step {step} outside 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("layer decay {0} outside (0, 1]")]
    BadDecay(f64),
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("box has zero area")]
    DegenerateBox,
    #[error("ground truth has no labeled keypoint")]
    NoLabeledKeypoints,
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}
