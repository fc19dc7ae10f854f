use super::matrix::Matrix;
use super::tape::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam moments for a subset of a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    params: Vec<ParamId>,
    first: Vec<Matrix>,
    second: Vec<Matrix>,
}

impl AdamState {
    /// Fresh (zero) moments for the given parameters.
    pub fn new(store: &ParamStore, params: &[ParamId]) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|&p| {
                    let (r, c) = store.get(p).shape();
                    Matrix::zeros(r, c)
                })
                .collect::<Vec<_>>()
        };
        Self {
            step: 0,
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
            params: params.to_vec(),
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn first_moment(&self, i: usize) -> &Matrix {
        &self.first[i]
    }

    pub fn second_moment(&self, i: usize) -> &Matrix {
        &self.second[i]
    }
}

/// One bias-corrected Adam update of every parameter tracked by `state`.
///
/// `grads` is indexed by [`ParamId`] over the whole store, as returned by
/// [`Tape::backward`](super::Tape::backward).
pub fn adam_step(
    store: &mut ParamStore,
    grads: &[Matrix],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    for (k, &pid) in state.params.iter().enumerate() {
        let Some(g) = grads.get(pid.0) else {
            return Err(Error::shape(format!(
                "no gradient for parameter {}",
                store.name(pid)
            )));
        };
        let p = store.get(pid);
        if g.shape() != p.shape() || state.first[k].shape() != p.shape() {
            return Err(Error::shape(format!(
                "adam: parameter {} is {}x{}, gradient {}x{}, moment {}x{}",
                store.name(pid),
                p.rows(),
                p.cols(),
                g.rows(),
                g.cols(),
                state.first[k].rows(),
                state.first[k].cols()
            )));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.epsilon);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);

    for (k, &pid) in state.params.iter().enumerate() {
        let g = grads[pid.0].data();
        let m = state.first[k].data_mut();
        let v = state.second[k].data_mut();
        let p = store.get_mut(pid).data_mut();
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let mh = m[i] / c1;
            let vh = v[i] / c2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}
