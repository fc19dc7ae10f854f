use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which component of the full model is removed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Ablation {
    #[default]
    None,
    /// Uniform gate: the fused graph is the mean of the view graphs.
    NoMoe,
    /// Skip graph convolution; the fused representation is the concatenation.
    NoGcn,
    /// Skip graphs entirely; plain contrastive loss on the concatenation.
    NoMoegf,
    /// Finetune on reconstruction only.
    NoEgcl,
}

impl Ablation {
    pub const VARIANTS: [Ablation; 4] = [
        Ablation::NoMoe,
        Ablation::NoGcn,
        Ablation::NoMoegf,
        Ablation::NoEgcl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::None => "none",
            Ablation::NoMoe => "no-moe",
            Ablation::NoGcn => "no-gcn",
            Ablation::NoMoegf => "no-moegf",
            Ablation::NoEgcl => "no-egcl",
        }
    }

    /// Whether the fused head reads the concatenated embeddings directly.
    pub fn bypasses_gcn(self) -> bool {
        matches!(self, Ablation::NoGcn | Ablation::NoMoegf)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Ablation::None),
            "no-moe" => Ok(Ablation::NoMoe),
            "no-gcn" => Ok(Ablation::NoGcn),
            "no-moegf" => Ok(Ablation::NoMoegf),
            "no-egcl" => Ok(Ablation::NoEgcl),
            other => Err(Error::param(format!(
                "unknown ablation variant {other:?} (expected none, no-moe, no-gcn, no-moegf, no-egcl)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tau: f64,
    pub knn_k: usize,
    pub d_psi: usize,
    pub d_phi: usize,
    pub d_g: usize,
    pub encoder_hidden: Vec<usize>,
    pub gate_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    pub finetune_epochs: usize,
    pub learning_rate: f64,
    pub dropout: f64,
    pub seed: u64,
    pub ablation: Ablation,
    pub gcn_activation: bool,
    pub symmetrize: bool,
    pub kmeans_restarts: usize,
    pub kmeans_max_iters: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            tau: 0.5,
            knn_k: 10,
            d_psi: 512,
            d_phi: 128,
            d_g: 512,
            encoder_hidden: vec![1024, 1024],
            gate_hidden: vec![256],
            head_hidden: vec![256],
            batch_size: 256,
            pretrain_epochs: 200,
            finetune_epochs: 300,
            learning_rate: 3e-4,
            dropout: 0.1,
            seed: 0,
            ablation: Ablation::None,
            gcn_activation: false,
            symmetrize: false,
            kmeans_restarts: 10,
            kmeans_max_iters: 300,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("knn-k", self.knn_k),
            ("d-psi", self.d_psi),
            ("d-phi", self.d_phi),
            ("d-g", self.d_g),
            ("kmeans restarts", self.kmeans_restarts),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.encoder_hidden.iter().chain(&self.gate_hidden).chain(&self.head_hidden).any(|&w| w == 0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch size {} must be >= 2", self.batch_size)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau {} must be > 0", self.tau)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if !(self.learning_rate > 0.0) || !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config("learning rate must be > 0 and lambda >= 0".into()));
        }
        Ok(())
    }

    /// Lambda actually applied during finetuning.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation == Ablation::NoEgcl {
            0.0
        } else {
            self.lambda
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!(c.lambda, 1.0);
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.d_psi, 512);
        assert_eq!(c.d_phi, 128);
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.pretrain_epochs, 200);
        assert_eq!(c.finetune_epochs, 300);
        assert_eq!(c.learning_rate, 0.0003);
        assert_eq!(c.dropout, 0.1);
        assert_eq!(c.knn_k, 10);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn ablation_parsing() {
        for v in Ablation::VARIANTS {
            assert_eq!(v.as_str().parse::<Ablation>().unwrap(), v);
        }
        assert!(matches!("no-foo".parse::<Ablation>(), Err(Error::Param(_))));
    }

    #[test]
    fn invalid_configs() {
        let bad = [
            TrainConfig { tau: 0.0, ..Default::default() },
            TrainConfig { dropout: 1.0, ..Default::default() },
            TrainConfig { batch_size: 1, ..Default::default() },
            TrainConfig { d_phi: 0, ..Default::default() },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }
}
