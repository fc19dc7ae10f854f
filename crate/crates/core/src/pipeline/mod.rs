//! Training orchestration: configuration, model layout, two-phase training,
//! evaluation, ablations, checkpoints and run records.

pub mod checkpoint;
mod config;
mod model;
mod record;
mod train;

pub use config::{Ablation, TrainConfig};
pub use model::{finetune_objective, forward_batch, BatchForward, ModelParams, Phase};
pub use record::{EpochLoss, RunRecord};
pub use train::{
    assignments_path, cluster_embeddings, derive_seed, embed, evaluate, export_embeddings, finetune,
    finetune_with, kmeans_config, pretrain, run_ablation, train, write_export, Evaluation, TrainedRun,
};
