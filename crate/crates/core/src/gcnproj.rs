//! Two-layer graph convolution over the fused graph, and the projection
//! heads feeding the contrastive loss.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mlp::{DropoutCtx, Mlp};
use crate::moefusion::FusedAdjacency;
use crate::numkit::{glorot_uniform, Function, Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnWeights {
    pub w0: ParamId,
    pub w1: ParamId,
}

impl GcnWeights {
    pub fn new(store: &mut ParamStore, in_dim: usize, d_g: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            w0: store.add("gcn.w0", glorot_uniform(in_dim, d_g, rng)),
            w1: store.add("gcn.w1", glorot_uniform(d_g, d_g, rng)),
        }
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let get = |n: &str| store.find(n).ok_or_else(|| Error::Checkpoint(format!("missing {n}")));
        let (w0, w1) = (get("gcn.w0")?, get("gcn.w1")?);
        let (a, b) = (store.get(w0).shape(), store.get(w1).shape());
        if a.1 != b.0 || b.0 != b.1 {
            return Err(Error::Checkpoint(format!("gcn weight shapes {a:?}, {b:?} incompatible")));
        }
        Ok(Self { w0, w1 })
    }

    pub fn output_width(&self, store: &ParamStore) -> usize {
        store.get(self.w1).cols()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![self.w0, self.w1]
    }
}

/// Row sums of the self-looped adjacency.
fn degrees(delta: &Matrix) -> Result<Vec<f64>> {
    (0..delta.rows())
        .map(|i| {
            let d = 1.0 + delta.row(i).iter().sum::<f64>();
            if d > 0.0 && d.is_finite() {
                Ok(d)
            } else {
                Err(Error::Internal(format!("degree {d} of node {i}")))
            }
        })
        .collect()
}

fn normalize_values(delta: &Matrix) -> Result<Matrix> {
    let (n, c) = delta.shape();
    if n != c {
        return Err(Error::shape(format!("adjacency must be square, got {n}x{c}")));
    }
    let d = degrees(delta)?;
    Ok(Matrix::from_fn(n, n, |i, j| {
        let t = delta.get(i, j) + if i == j { 1.0 } else { 0.0 };
        t / (d[i] * d[j]).sqrt()
    }))
}

/// `D̃^{-1/2} (I + Δ) D̃^{-1/2}` with `D̃` the row sums of `I + Δ`.
pub fn normalize_adjacency(delta: &FusedAdjacency) -> Result<Matrix> {
    normalize_values(&delta.adjacency)
}

struct NormalizeOp;

impl Function for NormalizeOp {
    fn name(&self) -> &'static str {
        "normalize_adjacency"
    }

    fn backward(&self, inputs: &[&Matrix], out: &Matrix, grad: &Matrix) -> Result<Vec<Matrix>> {
        let delta = inputs[0];
        let n = delta.rows();
        let d = degrees(delta)?;
        // dL/d(degree_l), shared by every entry of row l.
        let mut gdeg = vec![0.0; n];
        for (l, gd) in gdeg.iter_mut().enumerate() {
            let row: f64 = (0..n).map(|j| grad.get(l, j) * out.get(l, j)).sum();
            let col: f64 = (0..n).map(|i| grad.get(i, l) * out.get(i, l)).sum();
            *gd = -0.5 * (row + col) / d[l];
        }
        let g = Matrix::from_fn(n, n, |i, j| grad.get(i, j) / (d[i] * d[j]).sqrt() + gdeg[i]);
        Ok(vec![g])
    }
}

/// Tape version of [`normalize_adjacency`]; differentiable w.r.t. `delta`.
pub fn normalize_adjacency_on(tape: &mut Tape, delta: Var) -> Result<Var> {
    let value = normalize_values(tape.value(delta))?;
    Ok(tape.custom(&[delta], value, Box::new(NormalizeOp)))
}

/// `(Δ + Δᵀ) / 2` on the tape.
pub fn symmetrize_on(tape: &mut Tape, delta: Var) -> Result<Var> {
    let t = tape.transpose(delta);
    let s = tape.add(delta, t)?;
    Ok(tape.scale(s, 0.5))
}

/// `Â (Â Z W⁰) W¹`, with an optional relu between the layers.
pub fn gcn_forward(
    tape: &mut Tape,
    store: &ParamStore,
    a_hat: Var,
    z: Var,
    w: &GcnWeights,
    hidden_relu: bool,
) -> Result<Var> {
    let (an, ac) = tape.value(a_hat).shape();
    let zn = tape.value(z).rows();
    if an != ac || an != zn {
        return Err(Error::shape(format!(
            "gcn: propagation matrix {an}x{ac} for {zn} node features"
        )));
    }
    let w0 = tape.param(store, w.w0);
    let w1 = tape.param(store, w.w1);
    let az = tape.matmul(a_hat, z)?;
    let mut h = tape.matmul(az, w0)?;
    if hidden_relu {
        h = tape.relu(h);
    }
    let ah = tape.matmul(a_hat, h)?;
    tape.matmul(ah, w1)
}

/// Fused head (`d_g → d_phi`) plus one head per view (`d_psi → d_phi`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHeads {
    pub fused: Mlp,
    pub views: Vec<Mlp>,
}

impl ProjectionHeads {
    pub fn new(
        store: &mut ParamStore,
        fused_in: usize,
        d_psi: usize,
        n_views: usize,
        hidden: &[usize],
        d_phi: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let widths = |input: usize| {
            let mut w = vec![input];
            w.extend_from_slice(hidden);
            w.push(d_phi);
            w
        };
        let fused = Mlp::new(store, "head.fused", &widths(fused_in), rng)?;
        let views = (0..n_views)
            .map(|m| Mlp::new(store, &format!("head.view{}", m + 1), &widths(d_psi), rng))
            .collect::<Result<_>>()?;
        Ok(Self { fused, views })
    }

    pub fn from_store(store: &ParamStore, n_views: usize) -> Result<Self> {
        Ok(Self {
            fused: Mlp::from_store(store, "head.fused")?,
            views: (0..n_views)
                .map(|m| Mlp::from_store(store, &format!("head.view{}", m + 1)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn d_phi(&self) -> usize {
        self.fused.output_width()
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = self.fused.param_ids();
        for v in &self.views {
            ids.extend(v.param_ids());
        }
        ids
    }

    pub fn project_fused(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z_tilde: Var,
        drop: &mut DropoutCtx,
    ) -> Result<Var> {
        self.fused.forward(tape, store, z_tilde, drop)
    }

    /// `view` is zero-based.
    pub fn project_view(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        view: usize,
        drop: &mut DropoutCtx,
    ) -> Result<Var> {
        let head = self.views.get(view).ok_or_else(|| {
            Error::param(format!("view index {view} out of range for {} heads", self.views.len()))
        })?;
        head.forward(tape, store, z, drop)
    }
}
