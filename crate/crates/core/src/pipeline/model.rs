//! Parameter layout and the per-batch forward pass.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Ablation, TrainConfig};
use crate::autoencoder::{reconstruction_loss_on, ViewAutoencoder};
use crate::egcl::egcl_loss_on;
use crate::egograph::{knn_adjacency, EgoAdjacency};
use crate::error::{Error, Result};
use crate::gcnproj::{gcn_forward, normalize_adjacency_on, symmetrize_on, GcnWeights, ProjectionHeads};
use crate::mlp::DropoutCtx;
use crate::moefusion::{fuse_on, GatingNetwork};
use crate::numkit::{Matrix, ParamId, ParamStore, Tape, Var};

/// Every trainable weight of the model, with typed handles into one store.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub store: ParamStore,
    pub autoencoders: Vec<ViewAutoencoder>,
    pub gate: GatingNetwork,
    pub gcn: GcnWeights,
    pub heads: ProjectionHeads,
}

impl ModelParams {
    pub fn new(view_dims: &[usize], cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        if view_dims.is_empty() {
            return Err(Error::Config("model needs at least one view".into()));
        }
        let m = view_dims.len();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let autoencoders = view_dims
            .iter()
            .enumerate()
            .map(|(v, &d)| ViewAutoencoder::new(&mut store, v + 1, d, &cfg.encoder_hidden, cfg.d_psi, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let gate = GatingNetwork::new(&mut store, m, cfg.d_psi, &cfg.gate_hidden, &mut rng)?;
        let gcn = GcnWeights::new(&mut store, m * cfg.d_psi, cfg.d_g, &mut rng);
        let fused_in = if cfg.ablation.bypasses_gcn() {
            m * cfg.d_psi
        } else {
            cfg.d_g
        };
        let heads = ProjectionHeads::new(
            &mut store,
            fused_in,
            cfg.d_psi,
            m,
            &cfg.head_hidden,
            cfg.d_phi,
            &mut rng,
        )?;
        Ok(Self {
            store,
            autoencoders,
            gate,
            gcn,
            heads,
        })
    }

    /// Rebuilds the typed layout from a store of named parameters.
    pub fn from_store(store: ParamStore) -> Result<Self> {
        let mut autoencoders = Vec::new();
        while store.find(&format!("view{}.encoder.0.weight", autoencoders.len() + 1)).is_some() {
            autoencoders.push(ViewAutoencoder::from_store(&store, autoencoders.len() + 1)?);
        }
        if autoencoders.is_empty() {
            return Err(Error::Checkpoint("no view autoencoders in checkpoint".into()));
        }
        let m = autoencoders.len();
        let gate = GatingNetwork::from_store(&store)?;
        let gcn = GcnWeights::from_store(&store)?;
        let heads = ProjectionHeads::from_store(&store, m)?;
        let model = Self {
            store,
            autoencoders,
            gate,
            gcn,
            heads,
        };
        model.check_consistency()?;
        Ok(model)
    }

    fn check_consistency(&self) -> Result<()> {
        let m = self.n_views();
        let d_psi = self.d_psi();
        if self.autoencoders.iter().any(|a| a.latent_dim() != d_psi) {
            return Err(Error::Checkpoint("views disagree on embedding width".into()));
        }
        if self.gate.n_views != m || self.gate.mlp.input_width() != m * d_psi {
            return Err(Error::Checkpoint("gate does not match view layout".into()));
        }
        if self.store.get(self.gcn.w0).rows() != m * d_psi {
            return Err(Error::Checkpoint("gcn input width does not match views".into()));
        }
        if self.heads.views.iter().any(|h| h.input_width() != d_psi) {
            return Err(Error::Checkpoint("view heads do not match embedding width".into()));
        }
        Ok(())
    }

    pub fn n_views(&self) -> usize {
        self.autoencoders.len()
    }

    pub fn d_psi(&self) -> usize {
        self.autoencoders[0].latent_dim()
    }

    pub fn d_phi(&self) -> usize {
        self.heads.d_phi()
    }

    pub fn view_dims(&self) -> Vec<usize> {
        self.autoencoders.iter().map(ViewAutoencoder::input_dim).collect()
    }

    pub fn autoencoder_params(&self) -> Vec<ParamId> {
        self.autoencoders.iter().flat_map(ViewAutoencoder::param_ids).collect()
    }

    pub fn all_params(&self) -> Vec<ParamId> {
        self.store.ids().collect()
    }

    /// Fails unless the model's layout fits `view_dims` under `cfg`.
    pub fn check_compatible(&self, view_dims: &[usize], cfg: &TrainConfig) -> Result<()> {
        if self.view_dims() != view_dims {
            return Err(Error::Config(format!(
                "model expects view widths {:?}, data has {:?}",
                self.view_dims(),
                view_dims
            )));
        }
        let expect_in = if cfg.ablation.bypasses_gcn() {
            self.n_views() * self.d_psi()
        } else {
            self.gcn.output_width(&self.store)
        };
        if self.heads.fused.input_width() != expect_in {
            return Err(Error::Config(format!(
                "fused head reads {} features but ablation {} supplies {expect_in}",
                self.heads.fused.input_width(),
                cfg.ablation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Finetune,
    Eval,
}

/// Everything recorded by one batch forward pass.
pub struct BatchForward {
    pub tape: Tape,
    pub rec: Option<Var>,
    pub egc: Option<Var>,
    /// The optimised scalar: Γ_Rec in pretraining, Γ_Rec + λΓ_Egc in finetuning.
    pub total: Option<Var>,
    pub hhat: Option<Var>,
    pub coefficients: Option<Var>,
    pub fused: Option<Var>,
    pub experts: Vec<EgoAdjacency>,
    pub lambda: f64,
}

impl BatchForward {
    pub fn scalar(&self, v: Option<Var>) -> f64 {
        v.map_or(0.0, |v| self.tape.value(v).data()[0])
    }
}

/// Runs one batch through the model. `Eval` stops at the fused embeddings.
pub fn forward_batch(
    model: &ModelParams,
    views: &[Matrix],
    cfg: &TrainConfig,
    phase: Phase,
    drop: &mut DropoutCtx,
) -> Result<BatchForward> {
    let m = model.n_views();
    if views.len() != m {
        return Err(Error::shape(format!("{} views for a {m}-view model", views.len())));
    }
    let store = &model.store;
    let mut tape = Tape::new();
    let mut out = BatchForward {
        tape: Tape::new(),
        rec: None,
        egc: None,
        total: None,
        hhat: None,
        coefficients: None,
        fused: None,
        experts: Vec::new(),
        lambda: 0.0,
    };

    let xs: Vec<Var> = views.iter().map(|x| tape.constant(x.clone())).collect();
    let mut zs = Vec::with_capacity(m);
    for (ae, &x) in model.autoencoders.iter().zip(&xs) {
        zs.push(ae.encode(&mut tape, store, x, drop)?);
    }

    if phase != Phase::Eval {
        let mut recons = Vec::with_capacity(m);
        for (ae, &z) in model.autoencoders.iter().zip(&zs) {
            recons.push(ae.decode(&mut tape, store, z, drop)?);
        }
        let rec = reconstruction_loss_on(&mut tape, &xs, &recons)?;
        out.rec = Some(rec);
        if phase == Phase::Pretrain {
            out.total = Some(rec);
            out.tape = tape;
            return Ok(out);
        }
    }

    let n = views[0].rows();
    let z_cat = tape.concat_cols(&zs)?;
    let (z_tilde, delta) = if cfg.ablation == Ablation::NoMoegf {
        (z_cat, tape.constant(Matrix::zeros(n, n)))
    } else {
        let experts = zs
            .iter()
            .enumerate()
            .map(|(v, &z)| knn_adjacency(tape.value(z), cfg.knn_k, v))
            .collect::<Result<Vec<_>>>()?;
        let coeffs = if cfg.ablation == Ablation::NoMoe {
            tape.constant(Matrix::filled(n, m, 1.0 / m as f64))
        } else {
            model.gate.gate(&mut tape, store, z_cat, drop)?
        };
        let (delta, _) = fuse_on(&mut tape, coeffs, &experts)?;
        out.coefficients = Some(coeffs);
        out.fused = Some(delta);
        out.experts = experts;
        let z_tilde = if cfg.ablation == Ablation::NoGcn {
            z_cat
        } else {
            let graph = if cfg.symmetrize {
                symmetrize_on(&mut tape, delta)?
            } else {
                delta
            };
            let a_hat = normalize_adjacency_on(&mut tape, graph)?;
            gcn_forward(&mut tape, store, a_hat, z_cat, &model.gcn, cfg.gcn_activation)?
        };
        (z_tilde, delta)
    };

    let hhat = model.heads.project_fused(&mut tape, store, z_tilde, drop)?;
    out.hhat = Some(hhat);

    if phase == Phase::Finetune {
        let mut hs = Vec::with_capacity(m);
        for (v, &z) in zs.iter().enumerate() {
            hs.push(model.heads.project_view(&mut tape, store, z, v, drop)?);
        }
        let egc = egcl_loss_on(&mut tape, hhat, &hs, delta, cfg.tau)?;
        let lambda = cfg.effective_lambda();
        let weighted = tape.scale(egc, lambda);
        let rec = out.rec.expect("finetune computes reconstruction");
        out.total = Some(tape.add(rec, weighted)?);
        out.egc = Some(egc);
        out.lambda = lambda;
    }
    out.tape = tape;
    Ok(out)
}

/// Scalar finetuning objective for one batch, without gradients.
pub fn finetune_objective(model: &ModelParams, views: &[Matrix], cfg: &TrainConfig) -> Result<f64> {
    let fw = forward_batch(model, views, cfg, Phase::Finetune, &mut DropoutCtx::eval())?;
    Ok(fw.scalar(fw.total))
}
