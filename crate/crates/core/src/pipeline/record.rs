use std::fmt::Write as _;
use std::time::Duration;

use super::config::TrainConfig;
use crate::cluster::MetricTriple;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub rec: f64,
    pub egc: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub epochs: Vec<EpochLoss>,
    pub metrics: Option<MetricTriple>,
    pub wall_time: Duration,
    pub config: TrainConfig,
    pub seed: u64,
}

impl RunRecord {
    pub fn new(
        epochs: Vec<EpochLoss>,
        metrics: Option<MetricTriple>,
        wall_time: Duration,
        config: TrainConfig,
    ) -> Self {
        Self {
            epochs,
            metrics,
            wall_time,
            seed: config.seed,
            config,
        }
    }

    /// Line-delimited text: a header, one `epoch,rec,egc,total` row per
    /// epoch, and a closing `metrics,acc,nmi,pur` row when labels exist.
    pub fn to_text(&self) -> String {
        let mut s = String::from("epoch,rec_loss,egc_loss,total_loss\n");
        for e in &self.epochs {
            let _ = writeln!(s, "{},{},{},{}", e.epoch, e.rec, e.egc, e.total);
        }
        if let Some(m) = &self.metrics {
            let _ = writeln!(s, "metrics,{},{},{}", m.acc, m.nmi, m.pur);
        }
        s
    }

    /// Same losses and metrics, ignoring wall time.
    pub fn same_outcome(&self, other: &RunRecord) -> bool {
        self.epochs == other.epochs && self.metrics == other.metrics
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_layout() {
        let r = RunRecord::new(
            vec![EpochLoss {
                epoch: 1,
                rec: 2.5,
                egc: 0.0,
                total: 2.5,
            }],
            Some(MetricTriple {
                acc: 1.0,
                nmi: 0.5,
                pur: 1.0,
            }),
            Duration::from_millis(3),
            TrainConfig::default(),
        );
        assert_eq!(
            r.to_text(),
            "epoch,rec_loss,egc_loss,total_loss\n1,2.5,0,2.5\nmetrics,1,0.5,1\n"
        );
    }
}
