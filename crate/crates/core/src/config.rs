//! Scenario configuration, named presets and JSON loading.
//!
//! A config file is a JSON object whose keys overlay a preset (by default
//! `desk-default`). Unknown keys are rejected with their full key path.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::fed::{AggregationMode, MessageCost, TrainConfig};
use crate::trust::{BehaviorWeights, TrustWeights};

pub const PRESETS: [&str; 4] = ["desk-default", "paper-scale", "star-sparse", "mesh-dense"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dtsam,
    Cte,
    Sbst,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Dtsam, Method::Cte, Method::Sbst];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Dtsam => "dtsam",
            Method::Cte => "cte",
            Method::Sbst => "sbst",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Method::Dtsam => "DTSAM-EAC",
            Method::Cte => "CTE",
            Method::Sbst => "SBST",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dtsam" => Ok(Method::Dtsam),
            "cte" => Ok(Method::Cte),
            "sbst" => Ok(Method::Sbst),
            other => Err(Error::Config { path: "method".into(), message: format!("unknown method `{other}`") }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum TopologyConfig {
    Mesh { radius_km: f64 },
    Star { hub: u32 },
}

/// Uniform draw ranges for one behavior mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BehaviorRanges {
    pub pdr: [f64; 2],
    pub rt_ms: [f64; 2],
}

impl BehaviorRanges {
    pub const HONEST: Self = Self { pdr: [0.85, 1.0], rt_ms: [5.0, 60.0] };
    pub const ROGUE: Self = Self { pdr: [0.2, 0.6], rt_ms: [60.0, 200.0] };

    fn validate(&self, path: &str) -> Result<()> {
        let [lo, hi] = self.pdr;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return Err(cfg_err(format!("{path}.pdr"), "need 0 <= low <= high <= 1"));
        }
        let [lo, hi] = self.rt_ms;
        if !(0.0 <= lo && lo <= hi) {
            return Err(cfg_err(format!("{path}.rt_ms"), "need 0 <= low <= high"));
        }
        Ok(())
    }
}

/// How rogue UAVs behave before and after they turn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RogueConfig {
    /// Behavior while attacking.
    pub attack: BehaviorRanges,
    /// Per-round probability of attacking once past the onset round.
    pub attack_prob: f64,
    /// Per-link, per-round probability of misbehaving toward one observer
    /// outside attack rounds.
    pub probe_prob: f64,
    /// Onset round drawn uniformly from this inclusive range.
    pub onset_rounds: [u32; 2],
    /// From their onset on, rogues submit their local model update reversed.
    pub poison_updates: bool,
    /// Stretch factor applied to a reversed update.
    pub poison_scale: f64,
    /// Rogue validators tamper with the blocks they produce while attacking.
    pub tamper_blocks: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergyConfig {
    pub capacity: f64,
    pub base_drain: f64,
    pub tx_cost_per_kb: f64,
    pub validation_cost: f64,
    /// Charged to every other peer that re-validates a block under scheduled consensus.
    pub peer_verification_cost: f64,
    pub joules_per_unit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlConfig {
    pub learning_rate: f64,
    pub epochs: u32,
    pub epsilon: f64,
    /// Convergence is only searched for within this many FL rounds; training
    /// itself continues every round.
    pub max_rounds: u32,
    pub aggregation: AggregationMode,
    pub bytes_per_param: u64,
    pub envelope_bytes: u64,
}

impl FlConfig {
    pub fn train(&self) -> TrainConfig {
        TrainConfig { learning_rate: self.learning_rate, epochs: self.epochs }
    }

    pub fn message(&self) -> MessageCost {
        MessageCost { bytes_per_param: self.bytes_per_param, envelope_bytes: self.envelope_bytes }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub preset: String,
    pub method: Method,
    pub seed: u64,
    pub uav_count: usize,
    pub rogue_fraction: f64,
    pub user_count: usize,
    pub area_km: f64,
    pub topology: TopologyConfig,
    pub max_speed_km: f64,
    pub rounds: u32,
    pub interactions_per_link: u32,
    pub trust: TrustWeights,
    pub behavior: BehaviorWeights,
    pub rt_max_ms: f64,
    pub initial_trust: f64,
    pub trust_threshold: f64,
    pub sbst_pdr_threshold: f64,
    pub honest: BehaviorRanges,
    pub rogue: RogueConfig,
    pub energy: EnergyConfig,
    pub tx_envelope_bytes: u64,
    pub record_bytes: u64,
    pub fl: FlConfig,
    pub audit_delay: u32,
    pub validation_samples_per_uav: u32,
    pub eval_window: u32,
}

fn cfg_err(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config { path: path.into(), message: message.into() }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::desk_default()
    }
}

impl ScenarioConfig {
    pub fn desk_default() -> Self {
        Self {
            preset: "desk-default".into(),
            method: Method::Dtsam,
            seed: 0,
            uav_count: 20,
            rogue_fraction: 0.2,
            user_count: 40,
            area_km: 2.0,
            topology: TopologyConfig::Mesh { radius_km: 0.8 },
            max_speed_km: 0.05,
            rounds: 100,
            interactions_per_link: 500,
            trust: TrustWeights::default(),
            behavior: BehaviorWeights::default(),
            rt_max_ms: 100.0,
            initial_trust: 0.5,
            trust_threshold: 0.4,
            sbst_pdr_threshold: 0.7,
            honest: BehaviorRanges::HONEST,
            rogue: RogueConfig {
                attack: BehaviorRanges::ROGUE,
                attack_prob: 0.6,
                probe_prob: 0.1,
                onset_rounds: [20, 60],
                poison_updates: true,
                poison_scale: 6.0,
                tamper_blocks: true,
            },
            energy: EnergyConfig {
                capacity: 100.0,
                base_drain: 0.5,
                tx_cost_per_kb: 0.001,
                validation_cost: 2.0,
                peer_verification_cost: 0.05,
                joules_per_unit: 1.0,
            },
            tx_envelope_bytes: 256,
            record_bytes: 64,
            fl: FlConfig {
                learning_rate: 1.5,
                epochs: 100,
                epsilon: 0.01,
                max_rounds: 50,
                aggregation: AggregationMode::TrustWeighted,
                bytes_per_param: 8,
                envelope_bytes: 256,
            },
            audit_delay: 2,
            validation_samples_per_uav: 20,
            eval_window: 10,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        let mut c = Self::desk_default();
        match name {
            "desk-default" => {}
            "paper-scale" => {
                c.uav_count = 50;
                c.user_count = 100;
                c.area_km = 5.0;
                c.topology = TopologyConfig::Mesh { radius_km: 1.2 };
                c.max_speed_km = 0.1;
            }
            "star-sparse" => {
                c.uav_count = 12;
                c.user_count = 24;
                c.area_km = 3.0;
                c.topology = TopologyConfig::Star { hub: 0 };
            }
            "mesh-dense" => {
                c.uav_count = 30;
                c.user_count = 80;
                c.area_km = 1.5;
                c.topology = TopologyConfig::Mesh { radius_km: 0.9 };
            }
            other => return Err(Error::UnknownPreset(other.to_string())),
        }
        c.preset = name.to_string();
        Ok(c)
    }

    pub fn rogue_count(&self) -> usize {
        (self.uav_count as f64 * self.rogue_fraction).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.uav_count == 0 {
            return Err(cfg_err("uav_count", "need at least one UAV"));
        }
        if !(0.0..1.0).contains(&self.rogue_fraction) {
            return Err(cfg_err("rogue_fraction", "must lie in [0, 1)"));
        }
        if !(self.area_km > 0.0) {
            return Err(cfg_err("area_km", "must be positive"));
        }
        match self.topology {
            TopologyConfig::Mesh { radius_km } if !(radius_km >= 0.0) => {
                return Err(cfg_err("topology.radius_km", "must be non-negative"))
            }
            TopologyConfig::Star { hub } if hub as usize >= self.uav_count => {
                return Err(cfg_err("topology.hub", format!("hub {hub} out of range for {} UAVs", self.uav_count)))
            }
            _ => {}
        }
        if !(self.max_speed_km >= 0.0) {
            return Err(cfg_err("max_speed_km", "must be non-negative"));
        }
        if self.rounds == 0 {
            return Err(cfg_err("rounds", "need at least one round"));
        }
        self.trust.validate().map_err(|e| cfg_err("trust", e.to_string()))?;
        self.behavior.validate().map_err(|e| cfg_err("behavior", e.to_string()))?;
        if !(self.rt_max_ms > 0.0) {
            return Err(cfg_err("rt_max_ms", "must be positive"));
        }
        for (path, v) in [
            ("initial_trust", self.initial_trust),
            ("trust_threshold", self.trust_threshold),
            ("sbst_pdr_threshold", self.sbst_pdr_threshold),
            ("rogue.attack_prob", self.rogue.attack_prob),
            ("rogue.probe_prob", self.rogue.probe_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(cfg_err(path, "must lie in [0, 1]"));
            }
        }
        self.honest.validate("honest")?;
        self.rogue.attack.validate("rogue.attack")?;
        if self.rogue.onset_rounds[0] > self.rogue.onset_rounds[1] {
            return Err(cfg_err("rogue.onset_rounds", "need low <= high"));
        }
        if !(self.rogue.poison_scale >= 0.0 && self.rogue.poison_scale.is_finite()) {
            return Err(cfg_err("rogue.poison_scale", "must be finite and non-negative"));
        }
        let e = &self.energy;
        if !(e.capacity > 0.0) {
            return Err(cfg_err("energy.capacity", "must be positive"));
        }
        for (path, v) in [
            ("energy.base_drain", e.base_drain),
            ("energy.tx_cost_per_kb", e.tx_cost_per_kb),
            ("energy.validation_cost", e.validation_cost),
            ("energy.peer_verification_cost", e.peer_verification_cost),
            ("energy.joules_per_unit", e.joules_per_unit),
        ] {
            if !(v >= 0.0) {
                return Err(cfg_err(path, "must be non-negative"));
            }
        }
        if !(self.fl.learning_rate > 0.0) {
            return Err(cfg_err("fl.learning_rate", "must be positive"));
        }
        if !(self.fl.epsilon > 0.0) {
            return Err(cfg_err("fl.epsilon", "must be positive"));
        }
        if self.fl.max_rounds == 0 {
            return Err(cfg_err("fl.max_rounds", "must be positive"));
        }
        if self.eval_window == 0 || self.eval_window > self.rounds {
            return Err(cfg_err("eval_window", "must lie in 1..=rounds"));
        }
        Ok(())
    }

    /// Parses a JSON config overlay on top of its `preset` (default `desk-default`).
    pub fn from_json_str(text: &str) -> Result<Self> {
        let overlay: Value = serde_json::from_str(text).map_err(|e| cfg_err("<root>", e.to_string()))?;
        let preset = match overlay.get("preset") {
            None => "desk-default".to_string(),
            Some(Value::String(s)) => s.clone(),
            Some(_) => return Err(cfg_err("preset", "expected a preset name")),
        };
        Self::preset(&preset)?.overlay(overlay)
    }

    /// Applies a JSON object of overrides; nested objects merge key by key.
    pub fn overlay(&self, overrides: Value) -> Result<Self> {
        let mut base = serde_json::to_value(self).expect("config serializes");
        merge(&mut base, overrides);
        let cfg: Self = serde_path_to_error::deserialize(base).map_err(|e| {
            let path = e.path().to_string();
            cfg_err(path, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

fn merge(base: &mut Value, overrides: Value) {
    match (base, overrides) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    // Tagged enums (topology) are replaced wholesale when the tag changes.
                    Some(slot) if slot.is_object() && v.is_object() && !tag_changes(slot, &v) => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn tag_changes(base: &Value, over: &Value) -> bool {
    match (base.get("kind"), over.get("kind")) {
        (Some(a), Some(b)) => a != b,
        _ => false,
    }
}
