//! Fully connected stacks shared by the encoders, decoders, gate and heads.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkit::{glorot_uniform, Matrix, ParamId, ParamStore, Tape, Var};

/// Dropout switch threaded through every forward pass. Each MLP draws its
/// masks from its own stream, keyed by parameter prefix, so the masks one
/// module sees do not depend on which other modules ran.
#[derive(Debug, Clone)]
pub struct DropoutCtx {
    pub rate: f64,
    pub training: bool,
    seed: u64,
    streams: BTreeMap<String, ChaCha8Rng>,
}

impl DropoutCtx {
    pub fn train(rate: f64, seed: u64) -> Self {
        Self {
            rate,
            training: true,
            seed,
            streams: BTreeMap::new(),
        }
    }

    pub fn eval() -> Self {
        Self {
            rate: 0.0,
            training: false,
            seed: 0,
            streams: BTreeMap::new(),
        }
    }

    pub fn rng_for(&mut self, prefix: &str) -> &mut ChaCha8Rng {
        let seed = self.seed;
        self.streams.entry(prefix.to_owned()).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(fnv1a(prefix.as_bytes()));
            rng
        })
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

/// `in → hidden… → out`, relu and dropout after each hidden layer, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    prefix: String,
    layers: Vec<Linear>,
    widths: Vec<usize>,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        widths: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!(
                "{prefix}: layer widths {widths:?} must be positive with at least input and output"
            )));
        }
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(l, w)| Linear {
                weight: store.add(format!("{prefix}.{l}.weight"), glorot_uniform(w[0], w[1], rng)),
                bias: store.add(format!("{prefix}.{l}.bias"), Matrix::zeros(1, w[1])),
            })
            .collect();
        Ok(Self {
            prefix: prefix.to_owned(),
            layers,
            widths: widths.to_vec(),
        })
    }

    /// Rebinds an MLP to parameters already present in `store`.
    pub fn from_store(store: &ParamStore, prefix: &str) -> Result<Self> {
        let mut layers = Vec::new();
        let mut widths = Vec::new();
        for l in 0.. {
            let (Some(w), Some(b)) = (
                store.find(&format!("{prefix}.{l}.weight")),
                store.find(&format!("{prefix}.{l}.bias")),
            ) else {
                break;
            };
            let (fan_in, fan_out) = store.get(w).shape();
            if store.get(b).shape() != (1, fan_out) {
                return Err(Error::Checkpoint(format!("{prefix}.{l}: bias shape mismatch")));
            }
            match widths.last() {
                None => widths.push(fan_in),
                Some(&prev) if prev != fan_in => {
                    return Err(Error::Checkpoint(format!(
                        "{prefix}.{l}: expects {fan_in} inputs, previous layer emits {prev}"
                    )))
                }
                _ => {}
            }
            widths.push(fan_out);
            layers.push(Linear { weight: w, bias: b });
        }
        if layers.is_empty() {
            return Err(Error::Checkpoint(format!("no layers found for {prefix}")));
        }
        Ok(Self {
            prefix: prefix.to_owned(),
            layers,
            widths,
        })
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("nonempty")
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        drop: &mut DropoutCtx,
    ) -> Result<Var> {
        let w_in = tape.value(x).cols();
        if w_in != self.input_width() {
            return Err(Error::shape(format!(
                "MLP expects {} input columns, got {w_in}",
                self.input_width()
            )));
        }
        let mut h = x;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let w = tape.param(store, layer.weight);
            let b = tape.param(store, layer.bias);
            h = tape.matmul(h, w)?;
            h = tape.add_row_bias(h, b)?;
            if l < last {
                h = tape.relu(h);
                let (rate, training) = (drop.rate, drop.training);
                h = tape.dropout(h, rate, drop.rng_for(&self.prefix), training)?;
            }
        }
        Ok(h)
    }

    /// Tape-free evaluation-mode forward.
    pub fn eval(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, store, xv, &mut DropoutCtx::eval())?;
        Ok(tape.value(out).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glorot_bounds_and_zero_bias() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&mut store, "m", &[10, 20, 5], &mut rng).unwrap();
        let limit = (6.0f64 / 30.0).sqrt();
        let w0 = store.get(store.find("m.0.weight").unwrap());
        assert!(w0.data().iter().all(|v| v.abs() <= limit));
        assert_eq!(store.get(store.find("m.1.bias").unwrap()), &Matrix::zeros(1, 5));
        assert_eq!(Mlp::from_store(&store, "m").unwrap(), mlp);
    }

    #[test]
    fn rejects_wrong_input_width() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::new(&mut store, "m", &[4, 3], &mut rng).unwrap();
        assert!(matches!(mlp.eval(&store, &Matrix::zeros(2, 5)), Err(Error::Shape(_))));
    }
}
