//! Local logistic trust models and their federated aggregation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ledger::{sha256, Digest};
use crate::trust::{EnergyState, UavId};

pub const FEATURES: usize = 4;
pub const PARAM_COUNT: usize = FEATURES + 1;

/// Per observer/subject/round summary of interaction records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub pdr_mean: f64,
    /// Mean response time over `rt_max`, clipped to 1.
    pub rt_norm: f64,
    pub energy_score: f64,
    /// Observed interactions of the subject over the per-round maximum.
    pub interaction_rate: f64,
}

impl FeatureVector {
    pub fn as_array(&self) -> [f64; FEATURES] {
        [self.pdr_mean, self.rt_norm, self.energy_score, self.interaction_rate]
    }

    pub fn is_valid(&self) -> bool {
        self.as_array().iter().all(|v| (0.0..=1.0).contains(v))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalDataset {
    pub owner: UavId,
    /// Label 1 marks a rogue subject.
    pub samples: Vec<(FeatureVector, u8)>,
}

impl LocalDataset {
    pub fn new(owner: UavId) -> Self {
        Self { owner, samples: Vec::new() }
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelParams {
    pub coefficients: [f64; FEATURES],
    pub bias: f64,
}

impl ModelParams {
    pub fn zeros() -> Self {
        Self::default()
    }

    pub fn as_array(&self) -> [f64; PARAM_COUNT] {
        let c = self.coefficients;
        [c[0], c[1], c[2], c[3], self.bias]
    }

    pub fn from_array(a: [f64; PARAM_COUNT]) -> Self {
        Self { coefficients: [a[0], a[1], a[2], a[3]], bias: a[4] }
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    /// Reverses the update from `global` to `self` and stretches it by `scale`:
    /// `global - scale * (self - global)`.
    pub fn reversed_update(&self, global: &ModelParams, scale: f64) -> Self {
        let (l, g) = (self.as_array(), global.as_array());
        Self::from_array(std::array::from_fn(|i| g[i] - scale * (l[i] - g[i])))
    }

    /// Coefficients then bias, each as a little-endian f64.
    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.as_array().iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != PARAM_COUNT * 8 {
            return None;
        }
        let mut a = [0.0; PARAM_COUNT];
        for (slot, chunk) in a.iter_mut().zip(bytes.chunks_exact(8)) {
            *slot = f64::from_le_bytes(chunk.try_into().ok()?);
        }
        Some(Self::from_array(a))
    }

    pub fn digest(&self) -> Digest {
        sha256(&self.to_le_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 1.5, epochs: 100 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trained {
    pub params: ModelParams,
    /// Set when the dataset was empty and `init` came back untouched.
    pub skipped: bool,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn logit(params: &ModelParams, x: &[f64; FEATURES]) -> f64 {
    params.coefficients.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + params.bias
}

/// Predicted probability that the subject is rogue.
pub fn predict(params: &ModelParams, x: &FeatureVector) -> f64 {
    sigmoid(logit(params, &x.as_array()))
}

/// Mean binary cross-entropy over the dataset.
pub fn loss(params: &ModelParams, data: &LocalDataset) -> f64 {
    if data.samples.is_empty() {
        return 0.0;
    }
    let total: f64 = data
        .samples
        .iter()
        .map(|(x, y)| {
            let z = logit(params, &x.as_array());
            // log(1 + e^z) - y z, written to stay finite for large |z|
            let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
            softplus - f64::from(*y) * z
        })
        .sum();
    total / data.samples.len() as f64
}

/// Analytic gradient of [`loss`] in `[coefficients.., bias]` order.
pub fn gradient(params: &ModelParams, data: &LocalDataset) -> [f64; PARAM_COUNT] {
    let mut g = [0.0; PARAM_COUNT];
    if data.samples.is_empty() {
        return g;
    }
    for (x, y) in &data.samples {
        let xs = x.as_array();
        let err = sigmoid(logit(params, &xs)) - f64::from(*y);
        for k in 0..FEATURES {
            g[k] += err * xs[k];
        }
        g[FEATURES] += err;
    }
    let n = data.samples.len() as f64;
    g.map(|v| v / n)
}

/// Full-batch gradient descent on the logistic loss.
pub fn train_local(data: &LocalDataset, init: ModelParams, hyper: TrainConfig) -> Trained {
    assert!(hyper.learning_rate > 0.0, "learning rate must be positive");
    if data.samples.is_empty() {
        return Trained { params: init, skipped: true };
    }
    let mut theta = init.as_array();
    for _ in 0..hyper.epochs {
        let g = gradient(&ModelParams::from_array(theta), data);
        for (t, gk) in theta.iter_mut().zip(g) {
            *t -= hyper.learning_rate * gk;
        }
    }
    Trained { params: ModelParams::from_array(theta), skipped: false }
}

fn weighted_mean(models: &[ModelParams], weights: &[f64]) -> Result<ModelParams> {
    if models.len() != weights.len() {
        return Err(Error::LengthMismatch(models.len(), weights.len()));
    }
    let total: f64 = weights.iter().sum();
    if models.is_empty() || !(total > 0.0) {
        return Err(Error::DegenerateWeights);
    }
    let mut acc = [0.0; PARAM_COUNT];
    for (m, w) in models.iter().zip(weights) {
        let share = w / total;
        for (a, v) in acc.iter_mut().zip(m.as_array()) {
            *a += share * v;
        }
    }
    Ok(ModelParams::from_array(acc))
}

/// Dataset-size weighted average.
pub fn fedavg_aggregate(models: &[ModelParams], sizes: &[usize]) -> Result<ModelParams> {
    let weights: Vec<f64> = sizes.iter().map(|&s| s as f64).collect();
    weighted_mean(models, &weights)
}

/// Average weighted by `trust * |D|`.
pub fn trust_weighted_aggregate(models: &[ModelParams], sizes: &[usize], trusts: &[f64]) -> Result<ModelParams> {
    if sizes.len() != trusts.len() {
        return Err(Error::LengthMismatch(sizes.len(), trusts.len()));
    }
    let weights: Vec<f64> = sizes.iter().zip(trusts).map(|(&s, &t)| s as f64 * t).collect();
    weighted_mean(models, &weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlRoundState {
    pub round: u32,
    pub accuracy_history: Vec<f64>,
    pub epsilon: f64,
}

impl FlRoundState {
    pub fn new(epsilon: f64) -> Self {
        Self { round: 0, accuracy_history: Vec::new(), epsilon }
    }

    pub fn push(&mut self, accuracy: f64) {
        debug_assert!((0.0..=1.0).contains(&accuracy));
        self.round += 1;
        self.accuracy_history.push(accuracy);
    }
}

/// Converged once the last round-over-round accuracy change is strictly below epsilon.
pub fn has_converged(state: &FlRoundState) -> bool {
    match state.accuracy_history.as_slice() {
        [.., prev, last] => (last - prev).abs() < state.epsilon,
        _ => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationMode {
    FedAvg,
    TrustWeighted,
}

#[derive(Debug, Clone, Copy)]
pub struct Participant<'a> {
    pub id: UavId,
    pub data: &'a LocalDataset,
    pub trust: f64,
    pub energy: &'a EnergyState,
    /// When set, submits its local update reversed and stretched by this factor.
    pub poison: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MessageCost {
    pub bytes_per_param: u64,
    pub envelope_bytes: u64,
}

impl Default for MessageCost {
    fn default() -> Self {
        Self { bytes_per_param: 8, envelope_bytes: 256 }
    }
}

impl MessageCost {
    pub fn message_bytes(&self) -> u64 {
        PARAM_COUNT as u64 * self.bytes_per_param + self.envelope_bytes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlRoundOutcome {
    pub global: ModelParams,
    /// Bytes each contributing UAV uploaded this round.
    pub bytes: Vec<(UavId, u64)>,
}

/// One federated round: local training from `global`, upload, aggregation.
///
/// Participants with no energy are ineligible; participants with an empty
/// dataset have nothing to contribute and stay silent.
pub fn run_fl_round(
    participants: &[Participant<'_>],
    global: ModelParams,
    mode: AggregationMode,
    hyper: TrainConfig,
    cost: MessageCost,
) -> Result<FlRoundOutcome> {
    let eligible: Vec<&Participant<'_>> = participants
        .iter()
        .filter(|p| p.energy.remaining > 0.0 && p.data.size() > 0)
        .collect();
    if eligible.is_empty() {
        return Err(Error::RoundSkipped);
    }
    let submitted: Vec<ModelParams> = eligible
        .par_iter()
        .map(|p| {
            let local = train_local(p.data, global, hyper).params;
            match p.poison {
                Some(scale) => local.reversed_update(&global, scale),
                None => local,
            }
        })
        .collect();
    let sizes: Vec<usize> = eligible.iter().map(|p| p.data.size()).collect();
    let aggregated = match mode {
        AggregationMode::FedAvg => fedavg_aggregate(&submitted, &sizes),
        AggregationMode::TrustWeighted => {
            let trusts: Vec<f64> = eligible.iter().map(|p| p.trust).collect();
            trust_weighted_aggregate(&submitted, &sizes, &trusts)
        }
    };
    let global = match aggregated {
        Ok(g) => g,
        Err(Error::DegenerateWeights) => return Err(Error::RoundSkipped),
        Err(e) => return Err(e),
    };
    let per_message = cost.message_bytes();
    Ok(FlRoundOutcome { global, bytes: eligible.iter().map(|p| (p.id, per_message)).collect() })
}
