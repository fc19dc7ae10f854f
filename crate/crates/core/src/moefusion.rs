//! Sample-level mixture of ego-graph experts.
//!
//! A gating MLP reads the concatenated view embeddings of each sample and
//! emits one softmax weight per view; the fused adjacency row of sample `i`
//! is the weighted sum of the per-view adjacency rows of `i`. The experts
//! are constants, so the only gradient path through fusion is the gate.

use rand_chacha::ChaCha8Rng;

use crate::egograph::EgoAdjacency;
use crate::error::{Error, Result};
use crate::mlp::{DropoutCtx, Mlp};
use crate::numkit::{softmax_rows, Function, Matrix, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct GatingNetwork {
    pub mlp: Mlp,
    pub n_views: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingCoefficients {
    /// n × M, rows on the simplex.
    pub coefficients: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusedAdjacency {
    pub adjacency: Matrix,
    pub k: usize,
}

impl GatingNetwork {
    /// `M·d_psi → hidden… → M`.
    pub fn new(
        store: &mut ParamStore,
        n_views: usize,
        d_psi: usize,
        hidden: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut widths = vec![n_views * d_psi];
        widths.extend_from_slice(hidden);
        widths.push(n_views);
        Ok(Self {
            mlp: Mlp::new(store, "gate", &widths, rng)?,
            n_views,
        })
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let mlp = Mlp::from_store(store, "gate")?;
        Ok(Self {
            n_views: mlp.output_width(),
            mlp,
        })
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.mlp.param_ids()
    }

    /// Gating coefficients on the tape; differentiable w.r.t. the MLP and `z`.
    pub fn gate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        z: Var,
        drop: &mut DropoutCtx,
    ) -> Result<Var> {
        let logits = self.mlp.forward(tape, store, z, drop)?;
        tape.softmax_rows(logits)
    }

    pub fn gate_eval(&self, store: &ParamStore, z: &Matrix) -> Result<GatingCoefficients> {
        let logits = self.mlp.eval(store, z)?;
        Ok(GatingCoefficients {
            coefficients: softmax_rows(&logits)?,
        })
    }
}

/// Horizontal concatenation of the per-view embeddings.
pub fn concat_views(views: &[&Matrix]) -> Result<Matrix> {
    Matrix::concat_cols(views)
}

fn check_experts(coeffs: &Matrix, experts: &[EgoAdjacency]) -> Result<usize> {
    let (n, m) = coeffs.shape();
    if experts.len() != m {
        return Err(Error::shape(format!(
            "{} experts for {m} gating columns",
            experts.len()
        )));
    }
    let k = experts.first().map_or(0, |e| e.k);
    for e in experts {
        if e.adjacency.shape() != (n, n) {
            return Err(Error::shape(format!(
                "expert adjacency {}x{} for {n} gated samples",
                e.adjacency.rows(),
                e.adjacency.cols()
            )));
        }
        if e.k != k {
            return Err(Error::shape(format!("experts disagree on k: {} vs {k}", e.k)));
        }
    }
    Ok(k)
}

fn fuse_values(coeffs: &Matrix, experts: &[&Matrix]) -> Matrix {
    let n = coeffs.rows();
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        let row = out.row_mut(i);
        for (m, e) in experts.iter().enumerate() {
            let c = coeffs.get(i, m);
            for (o, v) in row.iter_mut().zip(e.row(i)) {
                *o += c * v;
            }
        }
    }
    out
}

/// Row `i` of the result is `Σ_m C[i,m] · V^m_i`.
pub fn fuse(c: &GatingCoefficients, experts: &[EgoAdjacency]) -> Result<FusedAdjacency> {
    let k = check_experts(&c.coefficients, experts)?;
    let mats: Vec<&Matrix> = experts.iter().map(|e| &e.adjacency).collect();
    Ok(FusedAdjacency {
        adjacency: fuse_values(&c.coefficients, &mats),
        k,
    })
}

struct FuseOp {
    experts: Vec<Matrix>,
}

impl Function for FuseOp {
    fn name(&self) -> &'static str {
        "fuse"
    }

    fn backward(&self, inputs: &[&Matrix], _output: &Matrix, grad: &Matrix) -> Result<Vec<Matrix>> {
        let (n, m) = inputs[0].shape();
        let gc = Matrix::from_fn(n, m, |i, v| {
            grad.row(i)
                .iter()
                .zip(self.experts[v].row(i))
                .map(|(g, e)| g * e)
                .sum()
        });
        Ok(vec![gc])
    }
}

/// Tape version of [`fuse`]; returns the fused adjacency node and its k.
pub fn fuse_on(tape: &mut Tape, coeffs: Var, experts: &[EgoAdjacency]) -> Result<(Var, usize)> {
    let k = check_experts(tape.value(coeffs), experts)?;
    let mats: Vec<Matrix> = experts.iter().map(|e| e.adjacency.clone()).collect();
    let refs: Vec<&Matrix> = mats.iter().collect();
    let value = fuse_values(tape.value(coeffs), &refs);
    Ok((tape.custom(&[coeffs], value, Box::new(FuseOp { experts: mats })), k))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn expert(rows: &[[f64; 4]], k: usize) -> EgoAdjacency {
        EgoAdjacency {
            adjacency: Matrix::from_rows(rows),
            k,
            view: 0,
        }
    }

    #[test]
    fn half_half_mix() {
        let zero = [0.0; 4];
        let e1 = expert(&[zero, [0.0, 1.0, 0.0, 1.0], zero, zero], 2);
        let e2 = expert(&[zero, [0.0, 0.0, 1.0, 1.0], zero, zero], 2);
        let c = GatingCoefficients {
            coefficients: Matrix::filled(4, 2, 0.5),
        };
        let f = fuse(&c, &[e1.clone(), e2.clone()]).unwrap();
        assert_eq!(f.adjacency.row(1), &[0.0, 0.5, 0.5, 1.0]);

        let one_hot = GatingCoefficients {
            coefficients: Matrix::from_fn(4, 2, |_, j| if j == 0 { 1.0 } else { 0.0 }),
        };
        let f = fuse(&one_hot, &[e1.clone(), e2]).unwrap();
        assert_eq!(f.adjacency, e1.adjacency);
        assert!(fuse(&one_hot, &[e1]).is_err());
    }

    #[test]
    fn single_view_gate_is_one_and_zero_weights_uniform() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GatingNetwork::new(&mut store, 1, 3, &[4], &mut rng).unwrap();
        let z = Matrix::from_fn(5, 3, |i, j| (i as f64) - (j as f64));
        let c = g.gate_eval(&store, &z).unwrap();
        assert!(c.coefficients.data().iter().all(|&v| v == 1.0));

        let mut store = ParamStore::new();
        let g = GatingNetwork::new(&mut store, 3, 2, &[4], &mut rng).unwrap();
        for id in g.param_ids() {
            let (r, cc) = store.get(id).shape();
            *store.get_mut(id) = Matrix::zeros(r, cc);
        }
        let z = Matrix::from_fn(4, 6, |i, j| (i * j) as f64);
        let c = g.gate_eval(&store, &z).unwrap();
        assert!(c.coefficients.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert!(g.gate_eval(&store, &Matrix::zeros(4, 5)).is_err());
    }

    #[test]
    fn concat_layout() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        assert_eq!(concat_views(&[&a]).unwrap(), a);
        let b = a.scale(10.0);
        let c = concat_views(&[&a, &b]).unwrap();
        assert_eq!(c.column(2), b.column(0));
        assert!(concat_views(&[&a, &Matrix::zeros(2, 2)]).is_err());
    }
}
