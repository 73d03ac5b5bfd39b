//! Evaluation metrics and the per-run report.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::Method;
use crate::error::{Error, Result};
use crate::trust::UavId;

pub const BYTES_PER_MB: f64 = 1e6;
pub const BYTES_PER_KB: f64 = 1e3;

pub fn accuracy(predictions: &[bool], truth: &[bool]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch(predictions.len(), truth.len()));
    }
    if truth.is_empty() {
        return Err(Error::UndefinedMetric("accuracy of zero predictions"));
    }
    let correct = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(correct as f64 / truth.len() as f64)
}

pub fn detection_rate(flagged: &BTreeSet<UavId>, actual_rogues: &BTreeSet<UavId>) -> Result<f64> {
    if actual_rogues.is_empty() {
        return Err(Error::UndefinedMetric("detection rate without rogues"));
    }
    Ok(flagged.intersection(actual_rogues).count() as f64 / actual_rogues.len() as f64)
}

/// Bytes put on the air by one protocol, split by source.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ByteBill {
    pub model_bytes: u64,
    pub block_bytes: u64,
    pub record_bytes: u64,
}

impl ByteBill {
    pub fn total(&self) -> u64 {
        self.model_bytes + self.block_bytes + self.record_bytes
    }

    pub fn add(&mut self, other: ByteBill) {
        self.model_bytes += other.model_bytes;
        self.block_bytes += other.block_bytes;
        self.record_bytes += other.record_bytes;
    }
}

pub fn comm_overhead_mb_per_uav(bill: &ByteBill, uav_count: usize) -> f64 {
    if uav_count == 0 {
        return 0.0;
    }
    bill.total() as f64 / BYTES_PER_MB / uav_count as f64
}

pub fn energy_per_transaction(joules: f64, transactions: u64) -> Result<f64> {
    if transactions == 0 {
        return Err(Error::UndefinedMetric("energy per transaction with no transactions"));
    }
    Ok(joules / transactions as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convergence {
    /// First FL round at which the accuracy change fell below epsilon.
    Rounds(u32),
    /// Hit the FL round cap without meeting the criterion.
    NotReached(u32),
    NotApplicable,
}

impl Convergence {
    pub fn rounds(&self) -> Option<u32> {
        match *self {
            Convergence::Rounds(n) | Convergence::NotReached(n) => Some(n),
            Convergence::NotApplicable => None,
        }
    }

    pub fn converged(&self) -> bool {
        matches!(self, Convergence::Rounds(_))
    }
}

impl Serialize for Convergence {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        match self {
            Convergence::NotApplicable => s.serialize_str("N/A"),
            Convergence::Rounds(n) | Convergence::NotReached(n) => {
                let mut m = s.serialize_map(Some(2))?;
                m.serialize_entry("rounds", n)?;
                m.serialize_entry("converged", &self.converged())?;
                m.end()
            }
        }
    }
}

impl<'de> Deserialize<'de> for Convergence {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Text(String),
            Counted { rounds: u32, converged: bool },
        }
        match Repr::deserialize(d)? {
            Repr::Text(t) if t == "N/A" => Ok(Convergence::NotApplicable),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("unexpected convergence value {t:?}"))),
            Repr::Counted { rounds, converged: true } => Ok(Convergence::Rounds(rounds)),
            Repr::Counted { rounds, converged: false } => Ok(Convergence::NotReached(rounds)),
        }
    }
}

/// One row of rounds.csv.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub method: String,
    pub seed: u64,
    pub round: u32,
    pub accuracy: f64,
    pub detection_rate: Option<f64>,
    pub flagged: u32,
    pub bytes: u64,
    pub cumulative_mb_per_uav: f64,
    pub energy_j: f64,
    pub cumulative_energy_j: f64,
    pub transactions: u64,
    pub cumulative_transactions: u64,
    pub fl_round: Option<u32>,
    pub validation_accuracy: Option<f64>,
    pub mean_trust_honest: f64,
    pub mean_trust_rogue: Option<f64>,
    pub remaining_energy_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstDetection {
    pub uav: UavId,
    pub onset_round: u32,
    pub detected_round: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub method: Method,
    pub seed: u64,
    /// Mean per-round classification accuracy over the evaluation window.
    pub accuracy: f64,
    /// Mean per-round detection rate over the evaluation window; `None` without rogues.
    pub detection_rate: Option<f64>,
    pub comm_overhead_mb_per_uav: f64,
    /// `None` when the run committed no transactions.
    pub energy_per_transaction: Option<f64>,
    pub convergence_rounds: Convergence,
    pub bytes: ByteBill,
    pub protocol_energy_j: f64,
    pub base_drain_j: f64,
    pub transactions: u64,
    pub first_detection: Vec<FirstDetection>,
    pub rounds: Vec<RoundMetrics>,
}

impl MetricsReport {
    pub fn final_detection(&self) -> Option<f64> {
        self.rounds.last().and_then(|r| r.detection_rate)
    }

    pub fn cumulative_energy(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.cumulative_energy_j).collect()
    }
}

/// Mean of the last `window` values (all of them if fewer).
pub fn window_mean(values: &[f64], window: usize) -> Option<f64> {
    let w = window.min(values.len());
    if w == 0 {
        return None;
    }
    Some(values[values.len() - w..].iter().sum::<f64>() / w as f64)
}
