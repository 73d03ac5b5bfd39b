//! Dynamic trust scoring.
//!
//! Each round a UAV's trust is refreshed as a convex blend of its previous
//! trust, a behavior score built from observed packet delivery and response
//! times, and its remaining-energy fraction:
//!
//! ```text
//! T(t) = alpha * T(t-1) + beta * B(t) + gamma * E(t)
//! B(t) = w1 * mean(PDR) + w2 * (1 - min(mean(RT), RT_max) / RT_max)
//! E(t) = remaining / capacity
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, Error, Result};

const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Identifier of a UAV in a scenario. Ids are dense: `0..uav_count`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UavId(pub u32);

impl UavId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for UavId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "uav-{}", self.0)
    }
}

/// Blend weights of the trust recursion: history, behavior, energy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrustWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl TrustWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self> {
        let w = Self { alpha, beta, gamma };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("gamma", self.gamma)] {
            check_unit(name, v)?;
        }
        let sum = self.alpha + self.beta + self.gamma;
        if (sum - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidWeights(format!("alpha + beta + gamma = {sum}, expected 1")));
        }
        Ok(())
    }
}

impl Default for TrustWeights {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.3, gamma: 0.2 }
    }
}

/// Weights of packet delivery versus responsiveness in the behavior score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorWeights {
    pub w1: f64,
    pub w2: f64,
}

impl BehaviorWeights {
    pub fn new(w1: f64, w2: f64) -> Result<Self> {
        let w = Self { w1, w2 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("w1", self.w1)?;
        check_unit("w2", self.w2)?;
        if (self.w1 + self.w2 - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(Error::InvalidWeights(format!(
                "w1 + w2 = {}, expected 1",
                self.w1 + self.w2
            )));
        }
        Ok(())
    }
}

impl Default for BehaviorWeights {
    fn default() -> Self {
        Self { w1: 0.6, w2: 0.4 }
    }
}

/// One observed exchange: `observer` watched `subject` deliver packets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub observer: UavId,
    pub subject: UavId,
    /// Packet delivery ratio in [0, 1].
    pub pdr: f64,
    /// Response time in milliseconds.
    pub response_time: f64,
    pub round: u32,
}

impl InteractionRecord {
    pub fn new(observer: UavId, subject: UavId, pdr: f64, response_time: f64, round: u32) -> Result<Self> {
        check_unit("pdr", pdr)?;
        if !(response_time >= 0.0) {
            return Err(Error::Domain { name: "response_time", value: response_time });
        }
        Ok(Self { observer, subject, pdr, response_time, round })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyState {
    pub remaining: f64,
    pub capacity: f64,
}

impl EnergyState {
    pub fn full(capacity: f64) -> Self {
        Self { remaining: capacity, capacity }
    }

    pub fn is_depleted(&self) -> bool {
        self.remaining <= 0.0
    }
}

/// Trust score of one UAV and the rounds at which it was set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustState {
    pub uav: UavId,
    pub score: f64,
    pub history: Vec<(u32, f64)>,
}

impl TrustState {
    pub fn new(uav: UavId, initial: f64) -> Result<Self> {
        check_unit("initial trust", initial)?;
        Ok(Self { uav, score: initial, history: Vec::new() })
    }

    /// Records `score` for `round`. Rounds must strictly increase.
    pub fn record(&mut self, round: u32, score: f64) -> Result<()> {
        check_unit("trust", score)?;
        if let Some(&(last, _)) = self.history.last() {
            assert!(round > last, "trust history rounds must strictly increase ({last} -> {round})");
        }
        self.score = score;
        self.history.push((round, score));
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrustClass {
    Trustworthy,
    Rogue,
}

/// Behavior score of one subject from the records observed about it this round.
///
/// The mean response time saturates at `rt_max`, so the responsiveness term
/// never goes negative.
pub fn behavior_score(records: &[InteractionRecord], rt_max: f64, weights: BehaviorWeights) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::NoObservations);
    }
    if !(rt_max > 0.0) {
        return Err(Error::Domain { name: "rt_max", value: rt_max });
    }
    let n = records.len() as f64;
    let (pdr_sum, rt_sum) = records
        .iter()
        .fold((0.0, 0.0), |(p, r), rec| (p + rec.pdr, r + rec.response_time));
    Ok(behavior_from_means(pdr_sum / n, rt_sum / n, rt_max, weights))
}

/// Same formula over precomputed means; used on hot paths that aggregate
/// records without materializing per-subject slices.
pub fn behavior_from_means(mean_pdr: f64, mean_rt: f64, rt_max: f64, weights: BehaviorWeights) -> f64 {
    let rt_term = 1.0 - mean_rt.min(rt_max) / rt_max;
    (weights.w1 * mean_pdr + weights.w2 * rt_term).clamp(0.0, 1.0)
}

pub fn energy_score(e: &EnergyState) -> Result<f64> {
    if !(e.capacity > 0.0) {
        return Err(Error::InvalidCapacity(e.capacity));
    }
    Ok((e.remaining / e.capacity).clamp(0.0, 1.0))
}

pub fn update_trust(prev: f64, behavior: f64, energy: f64, weights: TrustWeights) -> Result<f64> {
    check_unit("previous trust", prev)?;
    check_unit("behavior", behavior)?;
    check_unit("energy", energy)?;
    let t = weights.alpha * prev + weights.beta * behavior + weights.gamma * energy;
    // Rounding can push a convex combination of ones a hair past 1.
    Ok(t.clamp(0.0, 1.0))
}

/// Rogue iff `trust < threshold`; a score exactly at the threshold is trusted.
pub fn classify(trust: f64, threshold: f64) -> Result<TrustClass> {
    check_unit("trust", trust)?;
    check_unit("threshold", threshold)?;
    Ok(if trust < threshold { TrustClass::Rogue } else { TrustClass::Trustworthy })
}
