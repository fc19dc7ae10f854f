//! Ego-graph contrastive loss.
//!
//! For every sample `i` and view `m` the positive pair is (ĥ_i, h_i^m).
//! Every h_j^m enters the denominator with its cosine similarity scaled by
//! `1 − Δ_ij`, so strongly connected neighbours are pushed away less:
//!
//! ```text
//! L = −1/(2n) Σ_i Σ_m [ s_ii/τ − log Σ_j exp((1 − Δ_ij) s_ij / τ) ]
//! ```
//!
//! with `s_ij = cos(ĥ_i, h_j^m)`. The prefactor stays `1/(2n)` for any
//! number of views.

use crate::error::{Error, Result};
use crate::numkit::{dot, Function, Matrix, Tape, Var};

/// Loss components of one objective evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub reconstruction: f64,
    pub contrastive: f64,
    pub total: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl LossReport {
    pub fn new(reconstruction: f64, contrastive: f64, lambda: f64, tau: f64) -> Self {
        Self {
            reconstruction,
            contrastive,
            total: total_loss(reconstruction, contrastive, lambda),
            lambda,
            tau,
        }
    }
}

/// `rec + λ·egc`.
pub fn total_loss(rec: f64, egc: f64, lambda: f64) -> f64 {
    rec + lambda * egc
}

/// Cosine similarity; 0 when either vector has zero norm.
pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "cosine of vectors of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (na, nb) = (dot(a, a).sqrt(), dot(b, b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot(a, b) / (na * nb))
}

/// Unit-normalised rows and the original norms (zero rows stay zero).
fn normalize_rows(x: &Matrix) -> (Matrix, Vec<f64>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let nrm = dot(x.row(i), x.row(i)).sqrt();
        norms.push(nrm);
        if nrm > 0.0 {
            for v in out.row_mut(i) {
                *v /= nrm;
            }
        }
    }
    (out, norms)
}

fn normalize_rows_backward(unit: &Matrix, norms: &[f64], g_unit: &Matrix) -> Matrix {
    let mut g = Matrix::zeros(unit.rows(), unit.cols());
    for i in 0..unit.rows() {
        if norms[i] == 0.0 {
            continue;
        }
        let (u, gu) = (unit.row(i), g_unit.row(i));
        let proj = dot(u, gu);
        for ((o, uv), gv) in g.row_mut(i).iter_mut().zip(u).zip(gu) {
            *o = (gv - uv * proj) / norms[i];
        }
    }
    g
}

fn check_inputs(hhat: &Matrix, views: &[&Matrix], delta: &Matrix, tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::param(format!("temperature {tau} must be > 0")));
    }
    if views.is_empty() {
        return Err(Error::shape("contrastive loss needs at least one view"));
    }
    let n = hhat.rows();
    for v in views {
        if v.shape() != hhat.shape() {
            return Err(Error::shape(format!(
                "view embedding {}x{} vs fused {}x{}",
                v.rows(),
                v.cols(),
                n,
                hhat.cols()
            )));
        }
    }
    if delta.shape() != (n, n) {
        return Err(Error::shape(format!(
            "graph {}x{} for {n} samples",
            delta.rows(),
            delta.cols()
        )));
    }
    Ok(())
}

struct ViewTerms {
    unit: Matrix,
    norms: Vec<f64>,
    sim: Matrix,
    probs: Matrix,
}

struct Forward {
    loss: f64,
    h_unit: Matrix,
    h_norms: Vec<f64>,
    views: Vec<ViewTerms>,
}

fn forward(hhat: &Matrix, views: &[&Matrix], delta: &Matrix, tau: f64) -> Result<Forward> {
    check_inputs(hhat, views, delta, tau)?;
    let n = hhat.rows();
    let (h_unit, h_norms) = normalize_rows(hhat);
    let mut total = 0.0;
    let mut terms = Vec::with_capacity(views.len());
    for v in views {
        let (unit, norms) = normalize_rows(v);
        let sim = h_unit.matmul_nt(&unit)?;
        let mut probs = Matrix::zeros(n, n);
        for i in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|j| (1.0 - delta.get(i, j)) * sim.get(i, j) / tau)
                .collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logits.iter().map(|a| (a - max).exp()).sum();
            let lse = max + sum.ln();
            for (p, a) in probs.row_mut(i).iter_mut().zip(&logits) {
                *p = (a - lse).exp();
            }
            total += sim.get(i, i) / tau - lse;
        }
        terms.push(ViewTerms {
            unit,
            norms,
            sim,
            probs,
        });
    }
    Ok(Forward {
        loss: -total / (2.0 * n as f64),
        h_unit,
        h_norms,
        views: terms,
    })
}

/// Value of the ego-graph contrastive loss.
pub fn egcl_loss(hhat: &Matrix, views: &[Matrix], delta: &Matrix, tau: f64) -> Result<f64> {
    let refs: Vec<&Matrix> = views.iter().collect();
    Ok(forward(hhat, &refs, delta, tau)?.loss)
}

struct EgclOp {
    tau: f64,
}

impl Function for EgclOp {
    fn name(&self) -> &'static str {
        "egcl_loss"
    }

    fn backward(&self, inputs: &[&Matrix], _out: &Matrix, grad: &Matrix) -> Result<Vec<Matrix>> {
        let n_in = inputs.len();
        let (hhat, delta) = (inputs[0], inputs[n_in - 1]);
        let views = &inputs[1..n_in - 1];
        let fw = forward(hhat, views, delta, self.tau)?;
        let n = hhat.rows();
        let c = grad.data()[0] / (2.0 * n as f64);
        let tau = self.tau;

        let mut g_hunit = Matrix::zeros(n, hhat.cols());
        let mut g_delta = Matrix::zeros(n, n);
        let mut out = Vec::with_capacity(n_in);
        out.push(Matrix::zeros(0, 0));
        for vt in &fw.views {
            let mut g_sim = Matrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let p = vt.probs.get(i, j);
                    let w = 1.0 - delta.get(i, j);
                    let mut gs = c * p * w / tau;
                    if i == j {
                        gs -= c / tau;
                    }
                    g_sim.set(i, j, gs);
                    let gd = g_delta.get(i, j) - c * p * vt.sim.get(i, j) / tau;
                    g_delta.set(i, j, gd);
                }
            }
            g_hunit.add_assign(&g_sim.matmul(&vt.unit)?);
            let g_vunit = g_sim.matmul_tn(&fw.h_unit)?;
            out.push(normalize_rows_backward(&vt.unit, &vt.norms, &g_vunit));
        }
        out[0] = normalize_rows_backward(&fw.h_unit, &fw.h_norms, &g_hunit);
        out.push(g_delta);
        Ok(out)
    }
}

/// Tape version of [`egcl_loss`]; differentiable w.r.t. the fused and
/// per-view embeddings and the graph.
pub fn egcl_loss_on(tape: &mut Tape, hhat: Var, views: &[Var], delta: Var, tau: f64) -> Result<Var> {
    let loss = {
        let refs: Vec<&Matrix> = views.iter().map(|&v| tape.value(v)).collect();
        forward(tape.value(hhat), &refs, tape.value(delta), tau)?.loss
    };
    let mut inputs = Vec::with_capacity(views.len() + 2);
    inputs.push(hhat);
    inputs.extend_from_slice(views);
    inputs.push(delta);
    Ok(tape.custom(&inputs, Matrix::scalar(loss), Box::new(EgclOp { tau })))
}
