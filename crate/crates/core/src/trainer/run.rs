use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sapiens_tensor::{Float, Tensor};

use super::checkpoint::{Checkpoint, CheckpointKind};
use super::config::{layerwise_multipliers, lr_at, TrainConfig};
use super::optim::AdamW;
use crate::datagen::{augment, sample_seed, AugOp, Sample};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::heads::{class_weights_from_counts, task_head_forward, Task};
use crate::image::{batch_tensor, Image};
use crate::mae::{init_mae, mae_forward_batch, sample_mask};
use crate::metrics::{EvalProtocol, MetricReport};
use crate::model::{make_targets, task_loss, TaskModel};
use crate::vit::{encode, ParamStore, ViTConfig};

const MASK_SALT: u64 = 0x4d41_534b;
const AUG_SALT: u64 = 0x4155_4721;

/// Dataset positions for each step: consecutive windows over a stream of
/// per-epoch permutations, so every item is seen once per epoch.
struct BatchStream {
    n: usize,
    seed: u64,
    epoch: usize,
    perm: Vec<usize>,
}

impl BatchStream {
    fn new(n: usize, seed: u64) -> Self {
        let mut s = Self {
            n,
            seed,
            epoch: usize::MAX,
            perm: Vec::new(),
        };
        s.shuffle(0);
        s
    }

    fn shuffle(&mut self, epoch: usize) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        self.perm = (0..self.n).collect();
        self.perm.shuffle(&mut rng);
        self.epoch = epoch;
    }

    fn batch(&mut self, step: usize, size: usize) -> Vec<usize> {
        (step * size..(step + 1) * size)
            .map(|p| {
                if p / self.n != self.epoch {
                    self.shuffle(p / self.n);
                }
                self.perm[p % self.n]
            })
            .collect()
    }
}

fn base_meta(tc: &TrainConfig, step: usize) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    tc.to_kv(&mut m);
    m.insert("step".into(), step.to_string());
    m.insert("seed".into(), tc.seed.to_string());
    m
}

/// Forward, backward and one optimizer update; returns the pre-update loss.
fn train_step<F: Float>(
    weights: &mut ParamStore<F>,
    opt: &mut AdamW<F>,
    step: usize,
    n_layers: usize,
    tc: &TrainConfig,
    loss_fn: impl FnOnce(&ParamStore<F>) -> Result<Tensor<F>>,
) -> Result<f64> {
    let loss = loss_fn(weights)?;
    let value = loss.item()?.as_f64();
    if !value.is_finite() {
        return Err(Error::Config(format!("loss diverged to {value} at step {step}")));
    }
    loss.backward()?;
    drop(loss);
    let mults = layerwise_multipliers(n_layers, tc.layer_decay)?;
    opt.step(weights, lr_at(step + 1, tc)?, &mults, tc)?;
    Ok(value)
}

#[derive(Debug, Clone)]
pub struct PretrainResult {
    pub checkpoint: Checkpoint,
    /// `(step, loss)` at every step divisible by `log_every`.
    pub loss_curve: Vec<(usize, f64)>,
}

/// Masked-autoencoder pretraining on model-sized images.
pub fn run_pretrain<F: Float>(
    images: &[Image],
    cfg: &ViTConfig,
    tc: &TrainConfig,
    mut on_log: impl FnMut(usize, f64),
) -> Result<PretrainResult> {
    tc.validate()?;
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut weights = init_mae::<F, _>(cfg, &mut rng)?.trainable();
    let mut opt = AdamW::new();
    let mut stream = BatchStream::new(images.len(), tc.seed);
    let mut curve = Vec::new();
    for step in 0..tc.total_steps {
        let idx = stream.batch(step, tc.batch_size);
        let batch: Vec<&Image> = idx.iter().map(|&i| &images[i]).collect();
        let plans = (0..batch.len())
            .map(|j| sample_mask(cfg.n_tokens(), tc.mask_ratio, sample_seed(tc.seed ^ MASK_SALT, step as u64, j as u64)))
            .collect::<Result<Vec<_>>>()?;
        let x = batch_tensor::<F>(&batch)?;
        let loss = train_step(&mut weights, &mut opt, step, cfg.layers, tc, |w| {
            Ok(mae_forward_batch(&x, cfg, w, &plans)?.loss)
        })?;
        if step % tc.log_every == 0 {
            curve.push((step, loss));
            on_log(step, loss);
        }
    }
    Ok(PretrainResult {
        checkpoint: Checkpoint::new(cfg, CheckpointKind::Pretrain, &weights, Some(&opt), base_meta(tc, tc.total_steps)),
        loss_curve: curve,
    })
}

/// Encoder initialization for fine-tuning.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    Random,
    Pretrained(&'a Checkpoint),
}

#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub step: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub report: MetricReport,
}

#[derive(Debug, Clone)]
pub struct FinetuneResult {
    pub checkpoint: Checkpoint,
    pub loss_curve: Vec<(usize, f64)>,
    /// Validation loss and metrics every `eval_every` steps and at the end.
    pub trace: Vec<TraceEntry>,
}

impl FinetuneResult {
    pub fn final_val_loss(&self) -> f64 {
        self.trace.last().map_or(f64::NAN, |e| e.val_loss)
    }

    pub fn final_report(&self) -> Option<&MetricReport> {
        self.trace.last().map(|e| &e.report)
    }
}

/// Inverse-frequency part weights over the training masks, raised to `power`
/// and rescaled to mean 1.
pub fn seg_class_weights(samples: &[Sample], classes: usize, power: f64) -> Vec<f64> {
    let mut counts = vec![0u64; classes];
    for s in samples {
        for &c in &s.part_mask {
            if (c as usize) < classes {
                counts[c as usize] += 1;
            }
        }
    }
    let w: Vec<f64> = class_weights_from_counts(&counts).iter().map(|w| w.powf(power)).collect();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|v| v / mean).collect()
}

/// Mean task loss over `samples` in fixed batches, without gradients.
pub fn validation_loss<F: Float>(model: &TaskModel<F>, samples: &[Sample], class_weights: &[f64], batch: usize) -> Result<f64> {
    let frozen = TaskModel {
        weights: model.weights.detached(),
        ..model.clone()
    };
    let (mut total, mut n) = (0.0, 0usize);
    for chunk in samples.chunks(batch.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let images: Vec<&Image> = chunk.iter().map(|s| &s.image).collect();
        let targets = make_targets::<F>(frozen.task, &refs, &frozen.cfg, class_weights)?;
        let pred = frozen.forward(&batch_tensor(&images)?)?;
        total += task_loss(&pred, &targets)?.item()?.as_f64() * chunk.len() as f64;
        n += chunk.len();
    }
    Ok(total / n.max(1) as f64)
}

/// Trains encoder and head end to end with layer-wise learning-rate decay,
/// horizontal-flip and photometric augmentation, evaluating on `val` every
/// `eval_every` steps (0: only at the end).
#[allow(clippy::too_many_arguments)]
pub fn run_finetune<F: Float>(
    task: Task,
    channels: usize,
    init: Init<'_>,
    train: &[Sample],
    val: &[Sample],
    cfg: &ViTConfig,
    tc: &TrainConfig,
    eval_every: usize,
    protocol: &EvalProtocol,
    mut on_log: impl FnMut(usize, f64),
) -> Result<FinetuneResult> {
    tc.validate()?;
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let mut model = match init {
        Init::Random => TaskModel::<F>::random(cfg, task, channels, tc.seed)?,
        Init::Pretrained(ck) => {
            if ck.kind()? != CheckpointKind::Pretrain {
                return Err(Error::IncompatibleCheckpoint("fine-tuning needs a pretraining checkpoint".into()));
            }
            let src = ck.model_config()?;
            TaskModel::from_encoder(cfg, task, channels, &src, &ck.weights()?, tc.seed)?
        }
    };
    model.weights = model.weights.trainable();
    let class_weights = if task == Task::Seg {
        seg_class_weights(train, channels, tc.class_weight_power)
    } else {
        Vec::new()
    };
    let mut opt = AdamW::new();
    let mut stream = BatchStream::new(train.len(), tc.seed);
    let (mut curve, mut trace) = (Vec::new(), Vec::new());
    for step in 0..tc.total_steps {
        let idx = stream.batch(step, tc.batch_size);
        let batch = idx
            .iter()
            .enumerate()
            .map(|(j, &i)| {
                let seed = sample_seed(tc.seed ^ AUG_SALT, step as u64, j as u64);
                let flip = ChaCha8Rng::seed_from_u64(seed).gen_bool(0.5);
                let ops: &[AugOp] = if flip { &[AugOp::HFlip, AugOp::Photometric] } else { &[AugOp::Photometric] };
                augment(&train[i], ops, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Sample> = batch.iter().collect();
        let images: Vec<&Image> = batch.iter().map(|s| &s.image).collect();
        let targets = make_targets::<F>(task, &refs, cfg, &class_weights)?;
        let x = batch_tensor::<F>(&images)?;
        let loss = train_step(&mut model.weights, &mut opt, step, cfg.layers, tc, |w| {
            let f = encode(&x, cfg, w, None)?;
            task_loss(&task_head_forward(&f, cfg, task, w)?, &targets)
        })?;
        if step % tc.log_every == 0 {
            curve.push((step, loss));
            on_log(step, loss);
        }
        let done = step + 1;
        if done == tc.total_steps || (eval_every > 0 && done % eval_every == 0) {
            trace.push(TraceEntry {
                step: done,
                train_loss: loss,
                val_loss: validation_loss(&model, val, &class_weights, 32)?,
                report: evaluate(&model, val, protocol, false)?,
            });
        }
    }
    let mut meta = base_meta(tc, tc.total_steps);
    if task == Task::Seg {
        meta.insert(
            "class_weights".into(),
            class_weights.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
        );
    }
    meta.insert("init".into(), if matches!(init, Init::Random) { "random" } else { "pretrained" }.into());
    Ok(FinetuneResult {
        checkpoint: Checkpoint::new(cfg, CheckpointKind::Finetune { task, channels }, &model.weights, Some(&opt), meta),
        loss_curve: curve,
        trace,
    })
}

/// Rebuilds a task model from a fine-tuning checkpoint.
pub fn load_task_model<F: Float>(ck: &Checkpoint) -> Result<TaskModel<F>> {
    match ck.kind()? {
        CheckpointKind::Finetune { task, channels } => Ok(TaskModel {
            cfg: ck.model_config()?,
            task,
            channels,
            weights: ck.weights()?,
        }),
        CheckpointKind::Pretrain => Err(Error::IncompatibleCheckpoint(
            "expected a fine-tuned checkpoint, found a pretraining one".into(),
        )),
    }
}
