//! Per-view encoder/decoder pairs and the summed squared reconstruction error.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mlp::{DropoutCtx, Mlp};
use crate::numkit::{Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct ViewAutoencoder {
    pub view: usize,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl ViewAutoencoder {
    /// Encoder `D_m → hidden… → d_psi`; decoder mirrors it back to `D_m`.
    pub fn new(
        store: &mut ParamStore,
        view: usize,
        input_dim: usize,
        hidden: &[usize],
        d_psi: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut enc = vec![input_dim];
        enc.extend_from_slice(hidden);
        enc.push(d_psi);
        let dec: Vec<usize> = enc.iter().rev().copied().collect();
        Ok(Self {
            view,
            encoder: Mlp::new(store, &format!("view{view}.encoder"), &enc, rng)?,
            decoder: Mlp::new(store, &format!("view{view}.decoder"), &dec, rng)?,
        })
    }

    pub fn from_store(store: &ParamStore, view: usize) -> Result<Self> {
        let encoder = Mlp::from_store(store, &format!("view{view}.encoder"))?;
        let decoder = Mlp::from_store(store, &format!("view{view}.decoder"))?;
        if decoder.input_width() != encoder.output_width()
            || decoder.output_width() != encoder.input_width()
        {
            return Err(Error::Checkpoint(format!(
                "view {view}: decoder {:?} does not mirror encoder {:?}",
                decoder.widths(),
                encoder.widths()
            )));
        }
        Ok(Self {
            view,
            encoder,
            decoder,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_width()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.output_width()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.encoder.param_ids();
        ids.extend(self.decoder.param_ids());
        ids
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        drop: &mut DropoutCtx,
    ) -> Result<Var> {
        self.encoder.forward(tape, store, x, drop)
    }

    pub fn decode(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        drop: &mut DropoutCtx,
    ) -> Result<Var> {
        self.decoder.forward(tape, store, z, drop)
    }

    /// Evaluation-mode encoding.
    pub fn encode_eval(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        self.encoder.eval(store, x)
    }

    pub fn decode_eval(&self, store: &ParamStore, z: &Matrix) -> Result<Matrix> {
        self.decoder.eval(store, z)
    }
}

/// `Σ_m ‖X^m − X̂^m‖²_F`.
pub fn reconstruction_loss(views: &[Matrix], reconstructions: &[Matrix]) -> Result<f64> {
    if views.len() != reconstructions.len() {
        return Err(Error::shape(format!(
            "{} views but {} reconstructions",
            views.len(),
            reconstructions.len()
        )));
    }
    let mut total = 0.0;
    for (x, r) in views.iter().zip(reconstructions) {
        total += x.sub(r)?.sq_norm();
    }
    Ok(total)
}

/// Tape version of [`reconstruction_loss`].
pub fn reconstruction_loss_on(tape: &mut Tape, views: &[Var], reconstructions: &[Var]) -> Result<Var> {
    if views.is_empty() || views.len() != reconstructions.len() {
        return Err(Error::shape(format!(
            "{} views but {} reconstructions",
            views.len(),
            reconstructions.len()
        )));
    }
    let mut terms = Vec::with_capacity(views.len());
    for (&x, &r) in views.iter().zip(reconstructions) {
        terms.push(tape.sq_diff_sum(x, r)?);
    }
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}
