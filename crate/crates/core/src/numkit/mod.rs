//! Dense matrices, a reverse-mode tape, finite-difference checking and Adam.

pub mod adam;
pub mod gradcheck;
mod matrix;
pub mod par;
mod tape;

pub use adam::{adam_step, AdamState};
pub use gradcheck::{finite_diff_check, numeric_gradient};
pub use matrix::{dot, Matrix};
pub use tape::{dropout, relu, softmax_rows, Function, ParamId, ParamStore, Tape, Var};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
    Matrix::from_fn(fan_in, fan_out, |_, _| dist.sample(rng))
}
