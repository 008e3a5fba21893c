use std::io::Write;

use serde::Serialize;

use crate::dqn::TrainingLog;
use crate::Result;

/// Means over each tenth of a training series (batch losses or episode PUR_AMT).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Deciles {
    pub means: Vec<f64>,
}

impl Deciles {
    pub fn of_loss(log: &TrainingLog) -> Option<Self> {
        let losses: Vec<f64> = log.batches.iter().map(|b| b.loss).collect();
        Self::from_values(&losses)
    }

    pub fn of_episode_pur_amt(log: &TrainingLog) -> Option<Self> {
        let pur: Vec<f64> = log.episodes.iter().map(|e| e.pur_amt).collect();
        Self::from_values(&pur)
    }

    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n < 10 {
            return None;
        }
        let means = (0..10)
            .map(|d| {
                let s = &values[d * n / 10..(d + 1) * n / 10];
                s.iter().sum::<f64>() / s.len() as f64
            })
            .collect();
        Some(Self { means })
    }

    pub fn first(&self) -> f64 {
        self.means[0]
    }

    pub fn last(&self) -> f64 {
        self.means[9]
    }

    pub fn falls(&self) -> bool {
        self.last() < self.first()
    }

    pub fn rises(&self) -> bool {
        self.last() > self.first()
    }

    /// Last-decile mean below `fraction` of the first.
    pub fn dropped_below(&self, fraction: f64) -> bool {
        self.last() < fraction * self.first()
    }

    /// No decile after the first exceeds `factor` times the first.
    pub fn bounded_by(&self, factor: f64) -> bool {
        self.means[1..].iter().all(|m| *m <= factor * self.first())
    }
}

/// The training log as CSV (`batch, loss, episode, pur_amt`).
pub fn emit_convergence<W: Write>(log: &TrainingLog, w: W) -> Result<()> {
    log.write_csv(w)
}
