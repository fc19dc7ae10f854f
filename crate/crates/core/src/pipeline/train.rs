//! Two-phase training, evaluation and ablation runs.

use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::TrainConfig;
use super::model::{forward_batch, BatchForward, ModelParams, Phase};
use super::record::{EpochLoss, RunRecord};
use crate::cluster::{kmeans, metrics, ClusterResult, KMeansConfig, MetricTriple};
use crate::dataio::{batch_indices, write_matrix_csv, MultiViewDataset};
use crate::error::{Error, Result};
use crate::mlp::DropoutCtx;
use crate::numkit::{adam_step, AdamState, Matrix, ParamId};

/// Mixes a base seed with a stream tag and an index (splitmix64 finaliser).
pub fn derive_seed(base: u64, tag: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(tag.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const SHUFFLE_PRETRAIN: u64 = 1;
const SHUFFLE_FINETUNE: u64 = 2;
const DROPOUT_PRETRAIN: u64 = 3;
const DROPOUT_FINETUNE: u64 = 4;

fn check_data(model: &ModelParams, data: &MultiViewDataset, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    model.check_compatible(&data.view_dims(), cfg)
}

#[allow(clippy::too_many_arguments)]
fn run_phase(
    model: &mut ModelParams,
    data: &MultiViewDataset,
    cfg: &TrainConfig,
    phase: Phase,
    epochs: usize,
    params: &[ParamId],
    first_epoch: usize,
    observer: &mut dyn FnMut(&BatchForward),
) -> Result<Vec<EpochLoss>> {
    let (shuffle_tag, dropout_tag) = match phase {
        Phase::Pretrain => (SHUFFLE_PRETRAIN, DROPOUT_PRETRAIN),
        _ => (SHUFFLE_FINETUNE, DROPOUT_FINETUNE),
    };
    let mut adam = AdamState::new(&model.store, params);
    let mut drop = DropoutCtx::train(cfg.dropout, derive_seed(cfg.seed, dropout_tag, 0));
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let chunks = batch_indices(
            data.n_samples(),
            cfg.batch_size,
            Some(derive_seed(cfg.seed, shuffle_tag, epoch as u64)),
        )?;
        let (mut rec, mut egc, mut total) = (0.0, 0.0, 0.0);
        for idx in &chunks {
            let batch = data.batch(idx);
            let fw = forward_batch(model, &batch.views, cfg, phase, &mut drop)?;
            let loss = fw.total.expect("training phases produce a loss");
            if !fw.tape.value(loss).is_finite() {
                return Err(Error::Evaluation(format!("non-finite loss at epoch {}", first_epoch + epoch)));
            }
            rec += fw.scalar(fw.rec);
            egc += fw.scalar(fw.egc);
            total += fw.scalar(fw.total);
            observer(&fw);
            let grads = fw.tape.backward(loss, &model.store)?;
            adam_step(&mut model.store, &grads, &mut adam, cfg.learning_rate)?;
        }
        let b = chunks.len() as f64;
        history.push(EpochLoss {
            epoch: first_epoch + epoch,
            rec: rec / b,
            egc: egc / b,
            total: total / b,
        });
    }
    Ok(history)
}

/// Reconstruction-only training of the autoencoders.
pub fn pretrain(model: &mut ModelParams, data: &MultiViewDataset, cfg: &TrainConfig) -> Result<RunRecord> {
    check_data(model, data, cfg)?;
    let start = Instant::now();
    let params = model.autoencoder_params();
    let epochs = run_phase(model, data, cfg, Phase::Pretrain, cfg.pretrain_epochs, &params, 1, &mut |_| {})?;
    Ok(RunRecord::new(epochs, None, start.elapsed(), cfg.clone()))
}

/// Full-objective training of every parameter with fresh Adam moments.
pub fn finetune(model: &mut ModelParams, data: &MultiViewDataset, cfg: &TrainConfig) -> Result<RunRecord> {
    finetune_with(model, data, cfg, 1, &mut |_| {})
}

/// [`finetune`] with a per-batch observer; epochs are numbered from `first_epoch`.
pub fn finetune_with(
    model: &mut ModelParams,
    data: &MultiViewDataset,
    cfg: &TrainConfig,
    first_epoch: usize,
    observer: &mut dyn FnMut(&BatchForward),
) -> Result<RunRecord> {
    check_data(model, data, cfg)?;
    let start = Instant::now();
    let params = model.all_params();
    let epochs = run_phase(model, data, cfg, Phase::Finetune, cfg.finetune_epochs, &params, first_epoch, observer)?;
    Ok(RunRecord::new(epochs, None, start.elapsed(), cfg.clone()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// N × d_phi fused embeddings in dataset order.
    pub embeddings: Matrix,
    pub clusters: ClusterResult,
    pub metrics: Option<MetricTriple>,
}

/// Fused embeddings of all samples (sequential batches, no dropout).
pub fn embed(model: &ModelParams, data: &MultiViewDataset, cfg: &TrainConfig) -> Result<Matrix> {
    check_data(model, data, cfg)?;
    let chunks = batch_indices(data.n_samples(), cfg.batch_size, None)?;
    let mut parts = Vec::with_capacity(chunks.len());
    for idx in &chunks {
        let batch = data.batch(idx);
        let fw = forward_batch(model, &batch.views, cfg, Phase::Eval, &mut DropoutCtx::eval())?;
        parts.push(fw.tape.value(fw.hhat.expect("eval yields embeddings")).clone());
    }
    Matrix::concat_rows(&parts)
}

pub fn kmeans_config(data_k: usize, cfg: &TrainConfig) -> KMeansConfig {
    KMeansConfig {
        k: data_k,
        restarts: cfg.kmeans_restarts,
        max_iters: cfg.kmeans_max_iters,
        seed: cfg.seed,
    }
}

/// Clusters already computed embeddings and scores them when labels exist.
pub fn cluster_embeddings(
    embeddings: Matrix,
    labels: Option<&[usize]>,
    n_clusters: usize,
    cfg: &TrainConfig,
) -> Result<Evaluation> {
    let clusters = kmeans(&embeddings, &kmeans_config(n_clusters, cfg))?;
    let metrics = labels.map(|l| metrics(l, &clusters.assignments)).transpose()?;
    Ok(Evaluation {
        embeddings,
        clusters,
        metrics,
    })
}

pub fn evaluate(model: &ModelParams, data: &MultiViewDataset, cfg: &TrainConfig) -> Result<Evaluation> {
    let emb = embed(model, data, cfg)?;
    cluster_embeddings(emb, data.labels.as_deref(), data.n_clusters, cfg)
}

/// Sidecar path holding `assignment,label` rows next to an embedding export.
pub fn assignments_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".assignments.csv");
    path.with_file_name(name)
}

/// Writes the fused embeddings as CSV plus the assignment/label sidecar.
pub fn write_export(eval: &Evaluation, labels: Option<&[usize]>, path: &Path) -> Result<()> {
    write_matrix_csv(path, &eval.embeddings)?;
    let mut s = String::from("assignment,label\n");
    for (i, a) in eval.clusters.assignments.iter().enumerate() {
        match labels {
            Some(l) => s.push_str(&format!("{a},{}\n", l[i])),
            None => s.push_str(&format!("{a},\n")),
        }
    }
    let side = assignments_path(path);
    std::fs::write(&side, s).map_err(|e| Error::io(side, e))
}

pub fn export_embeddings(
    model: &ModelParams,
    data: &MultiViewDataset,
    cfg: &TrainConfig,
    path: &Path,
) -> Result<Evaluation> {
    let eval = evaluate(model, data, cfg)?;
    write_export(&eval, data.labels.as_deref(), path)?;
    Ok(eval)
}

/// Output of a full pretrain → finetune → evaluate run.
pub struct TrainedRun {
    pub model: ModelParams,
    pub record: RunRecord,
    pub evaluation: Evaluation,
}

/// Fresh model, both training phases, then evaluation. The ablation variant
/// is taken from `cfg`.
pub fn train(data: &MultiViewDataset, cfg: &TrainConfig) -> Result<TrainedRun> {
    let start = Instant::now();
    let mut model = ModelParams::new(&data.view_dims(), cfg)?;
    let pre = pretrain(&mut model, data, cfg)?;
    let fine = finetune_with(&mut model, data, cfg, cfg.pretrain_epochs + 1, &mut |_| {})?;
    let evaluation = evaluate(&model, data, cfg)?;
    let mut epochs = pre.epochs;
    epochs.extend(fine.epochs);
    let record = RunRecord::new(epochs, evaluation.metrics, start.elapsed(), cfg.clone());
    Ok(TrainedRun {
        model,
        record,
        evaluation,
    })
}

/// Trains and evaluates one ablation variant.
pub fn run_ablation(data: &MultiViewDataset, cfg: &TrainConfig) -> Result<RunRecord> {
    if cfg.ablation == super::config::Ablation::None {
        return Err(Error::param("run_ablation needs a variant other than none"));
    }
    Ok(train(data, cfg)?.record)
}

