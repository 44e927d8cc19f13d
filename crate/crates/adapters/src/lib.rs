//! Parameter-efficient fine-tuning adapters for the toy decoder.
//!
//! Two adapter families and the staged procedure that combines them:
//!
//! * [`PrefixAdapter`] — trainable virtual-token key/values produced by a
//!   small reparameterization MLP, injected into every attention layer as a
//!   past block. After training the projected table can be baked and the
//!   MLP dropped.
//! * [`LoraAdapter`] — low-rank `ΔW = B·A` updates beside named base
//!   matrices, `B` zero-initialized so a fresh adapter is a no-op, mergeable
//!   into the base weights for inference.
//! * [`joint_finetune`] — trains the prefix first (base frozen), bakes and
//!   freezes it, then trains LoRA on top.

mod check;
mod checkpoint;
mod error;
mod lora;
mod prefix;
mod stack;
mod trainer;

pub use check::grad_check_paths;

pub use checkpoint::{
    load_checkpoint, load_lora, load_model, load_prefix, save_checkpoint, save_lora, save_model,
    save_prefix, CheckpointKind, RawCheckpoint, FORMAT_MAGIC, FORMAT_VERSION,
};
pub use error::{AdapterError, Result};
pub use lora::{lora_param_count, BoundLora, EvalLora, LoraAdapter, LoraConfig};
pub use prefix::{prefix_param_count, PrefixAdapter, PrefixConfig};
pub use stack::{freeze_base, AdapterStack, StageRecord};
pub use trainer::{
    default_mlp_hidden, joint_finetune, mean_loss, train_stage, EpochLog, Stage, TrainExample,
    TrainParams,
};
