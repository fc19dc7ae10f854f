//! Central finite differences, used as an independent gradient oracle.

use super::matrix::Matrix;
use super::tape::{ParamId, ParamStore};
use crate::error::{Error, Result};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Numeric gradient of `f` with respect to each listed parameter.
pub fn numeric_gradient<F>(
    mut f: F,
    store: &mut ParamStore,
    params: &[ParamId],
    step: f64,
) -> Result<Vec<Matrix>>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::param(format!("finite-difference step {step} must be > 0")));
    }
    let mut out = Vec::with_capacity(params.len());
    for &pid in params {
        let (r, c) = store.get(pid).shape();
        let mut g = Matrix::zeros(r, c);
        for k in 0..r * c {
            let orig = store.get(pid).data()[k];
            store.get_mut(pid).data_mut()[k] = orig + step;
            let plus = f(store);
            store.get_mut(pid).data_mut()[k] = orig - step;
            let minus = f(store);
            store.get_mut(pid).data_mut()[k] = orig;
            let (plus, minus) = (plus?, minus?);
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Evaluation(format!(
                    "non-finite objective perturbing {}[{k}]",
                    store.name(pid)
                )));
            }
            g.data_mut()[k] = (plus - minus) / (2.0 * step);
        }
        out.push(g);
    }
    Ok(out)
}

/// `|analytic − numeric| / max(1, |numeric|)`, maximised over coordinates.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(a, n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max)
}

/// Compares analytic gradients (indexed by [`ParamId`] over the whole store)
/// against central differences of `f` for the listed parameters.
pub fn finite_diff_check<F>(
    f: F,
    store: &mut ParamStore,
    params: &[ParamId],
    analytic: &[Matrix],
    step: f64,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let numeric = numeric_gradient(f, store, params, step)?;
    let mut worst = 0.0f64;
    for (&pid, num) in params.iter().zip(&numeric) {
        let a = analytic
            .get(pid.0)
            .ok_or_else(|| Error::shape(format!("missing analytic gradient for {}", store.name(pid))))?;
        if a.shape() != num.shape() {
            return Err(Error::shape(format!(
                "analytic gradient for {} has wrong shape",
                store.name(pid)
            )));
        }
        worst = worst.max(max_relative_error(a, num));
    }
    Ok(worst)
}
