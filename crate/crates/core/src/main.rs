use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use moegcl::dataio::{load_dataset, synth_generate, write_labels, write_matrix_csv, DatasetManifest, MultiViewDataset, SynthSpec};
use moegcl::pipeline::{
    checkpoint, evaluate, export_embeddings, finetune_with, pretrain, train, Ablation, ModelParams, RunRecord,
    TrainConfig,
};

#[derive(Parser)]
#[command(name = "moegcl", version, about = "Multi-view clustering with mixture-of-experts ego-graph fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic multi-view dataset and its manifest.
    Synth(SynthArgs),
    /// Reconstruction-only pretraining; saves a checkpoint.
    Pretrain(RunArgs),
    /// Pretraining followed by finetuning; saves a checkpoint.
    Train(TrainCmd),
    /// Cluster a dataset with a trained checkpoint.
    Eval(EvalArgs),
    /// Train and evaluate one ablation variant.
    Ablate(AblateArgs),
    /// Write fused embeddings (CSV) plus assignments/labels sidecar.
    Export(ExportArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    clusters: usize,
    #[arg(long, default_value_t = 100)]
    per_cluster: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [16, 24, 8])]
    dims: Vec<usize>,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 10.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.5)]
    tau: f64,
    #[arg(long, default_value_t = 10)]
    knn_k: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    #[arg(long, default_value_t = 200)]
    epochs_pretrain: usize,
    #[arg(long, default_value_t = 300)]
    epochs_finetune: usize,
    #[arg(long, default_value_t = 3e-4)]
    lr: f64,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Insert a relu between the two graph convolution layers.
    #[arg(long)]
    gcn_activation: bool,
    /// Propagate over (Δ + Δᵀ)/2 instead of the directed fused graph.
    #[arg(long)]
    symmetrize: bool,
    #[arg(long, default_value_t = 512)]
    d_psi: usize,
    #[arg(long, default_value_t = 128)]
    d_phi: usize,
    #[arg(long, default_value_t = 512)]
    d_g: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [1024, 1024])]
    encoder_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [256])]
    gate_hidden: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [256])]
    head_hidden: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    kmeans_restarts: usize,
    /// Model variant the checkpoint was trained as.
    #[arg(long, default_value = "none")]
    ablation: String,
}

impl ConfigArgs {
    fn to_config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            lambda: self.lambda,
            tau: self.tau,
            knn_k: self.knn_k,
            d_psi: self.d_psi,
            d_phi: self.d_phi,
            d_g: self.d_g,
            encoder_hidden: self.encoder_hidden.clone(),
            gate_hidden: self.gate_hidden.clone(),
            head_hidden: self.head_hidden.clone(),
            batch_size: self.batch_size,
            pretrain_epochs: self.epochs_pretrain,
            finetune_epochs: self.epochs_finetune,
            learning_rate: self.lr,
            dropout: self.dropout,
            seed: self.seed,
            ablation: self.ablation.parse::<Ablation>()?,
            gcn_activation: self.gcn_activation,
            symmetrize: self.symmetrize,
            kmeans_restarts: self.kmeans_restarts,
            ..TrainConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Where to write the run record (stdout if omitted).
    #[arg(long)]
    record: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct TrainCmd {
    #[command(flatten)]
    run: RunArgs,
    /// Start finetuning from this (pretrained) checkpoint instead of pretraining.
    #[arg(long)]
    init: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Write `assignment` per line here (stdout if omitted and no labels).
    #[arg(long)]
    assignments: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    variant: String,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    record: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    config: ConfigArgs,
}

fn load(manifest: &Path) -> Result<MultiViewDataset> {
    let m = DatasetManifest::read(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    Ok(load_dataset(&m)?)
}

fn load_model(path: &Path) -> Result<ModelParams> {
    let store = checkpoint::load(path)?;
    Ok(ModelParams::from_store(store)?)
}

fn emit_record(record: &RunRecord, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => fs::write(p, record.to_text()).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{}", record.to_text()),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let spec = SynthSpec {
                n_clusters: a.clusters,
                per_cluster: a.per_cluster,
                view_dims: a.dims,
                noise_scale: a.noise,
                separation: a.separation,
                latent_dim: None,
                seed: a.seed,
            };
            let data = synth_generate(&spec)?;
            fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
            let mut files = Vec::new();
            for (m, v) in data.views.iter().enumerate() {
                let p = a.out.join(format!("view{}.csv", m + 1));
                write_matrix_csv(&p, v)?;
                files.push(p);
            }
            let labels = a.out.join("labels.csv");
            write_labels(&labels, data.labels.as_deref().unwrap_or_default())?;
            let manifest = DatasetManifest {
                name: "synthetic".into(),
                view_files: files,
                labels_file: Some(labels),
                n_clusters: data.n_clusters,
            };
            let path = a.out.join("manifest.txt");
            manifest.write(&path)?;
            println!("{}", path.display());
        }
        Command::Pretrain(a) => {
            let cfg = a.config.to_config()?;
            let data = load(&a.manifest)?;
            let mut model = ModelParams::new(&data.view_dims(), &cfg)?;
            let record = pretrain(&mut model, &data, &cfg)?;
            checkpoint::save(&model.store, &a.checkpoint)?;
            emit_record(&record, a.record.as_deref())?;
        }
        Command::Train(t) => {
            let a = t.run;
            let cfg = a.config.to_config()?;
            let data = load(&a.manifest)?;
            let (model, record) = match &t.init {
                Some(init) => {
                    let mut model = load_model(init)?;
                    let mut record = finetune_with(&mut model, &data, &cfg, 1, &mut |_| {})?;
                    record.metrics = evaluate(&model, &data, &cfg)?.metrics;
                    (model, record)
                }
                None => {
                    let run = train(&data, &cfg)?;
                    (run.model, run.record)
                }
            };
            checkpoint::save(&model.store, &a.checkpoint)?;
            emit_record(&record, a.record.as_deref())?;
        }
        Command::Eval(a) => {
            let cfg = a.config.to_config()?;
            let data = load(&a.manifest)?;
            let model = load_model(&a.checkpoint)?;
            let eval = evaluate(&model, &data, &cfg)?;
            let lines: String = eval.clusters.assignments.iter().map(|c| format!("{c}\n")).collect();
            match (&a.assignments, &eval.metrics) {
                (Some(p), _) => fs::write(p, lines).with_context(|| format!("writing {}", p.display()))?,
                (None, None) => print!("{lines}"),
                _ => {}
            }
            if let Some(m) = eval.metrics {
                println!("metrics,{},{},{}", m.acc, m.nmi, m.pur);
            }
        }
        Command::Ablate(a) => {
            let mut cfg = a.config.to_config()?;
            cfg.ablation = a.variant.parse()?;
            if cfg.ablation == Ablation::None {
                bail!("--variant must be one of no-moe, no-gcn, no-moegf, no-egcl");
            }
            let data = load(&a.manifest)?;
            let run = train(&data, &cfg)?;
            if let Some(p) = &a.checkpoint {
                checkpoint::save(&run.model.store, p)?;
            }
            emit_record(&run.record, a.record.as_deref())?;
        }
        Command::Export(a) => {
            let cfg = a.config.to_config()?;
            let data = load(&a.manifest)?;
            let model = load_model(&a.checkpoint)?;
            let eval = export_embeddings(&model, &data, &cfg, &a.out)?;
            if let Some(m) = eval.metrics {
                println!("metrics,{},{},{}", m.acc, m.nmi, m.pur);
            }
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
