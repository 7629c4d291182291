//! Optimization: AdamW with decoupled weight decay, warmup schedules,
//! layer-wise learning-rate decay, checkpoints, and the pretraining and
//! fine-tuning drivers.

mod checkpoint;
mod config;
mod optim;
mod run;

pub use checkpoint::{expected_shapes, vit_from_kv, vit_to_kv, Checkpoint, CheckpointKind, MAGIC, VERSION};
pub use config::{decays, layerwise_multipliers, lr_at, LayerMultipliers, Precision, Schedule, TrainConfig};
pub use optim::{adamw_update, global_grad_norm, AdamW};
pub use run::{
    load_task_model, run_finetune, run_pretrain, seg_class_weights, validation_loss, FinetuneResult, Init,
    PretrainResult, TraceEntry,
};
