//! Discrete-time UAV world: placement, mobility, topology, behavior and energy.
//!
//! Every random draw comes from a stream derived from `(seed, purpose, round)`
//! so the three evaluated methods see identical positions, behavior and
//! interaction records no matter how much randomness each one consumes.

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{BehaviorRanges, ScenarioConfig, TopologyConfig};
use crate::error::{Error, Result};
use crate::fed::FeatureVector;
use crate::ledger::energy_charge;
use crate::trust::{energy_score, EnergyState, InteractionRecord, TrustState, UavId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Placement = 1,
    Mobility = 2,
    Behavior = 3,
    Interactions = 4,
    Lottery = 5,
    Validation = 6,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn stream(seed: u64, purpose: Stream, round: u32) -> ChaCha8Rng {
    let key = splitmix(splitmix(seed ^ splitmix(purpose as u64)) ^ u64::from(round));
    ChaCha8Rng::seed_from_u64(key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UavKind {
    Honest,
    Rogue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UavProfile {
    pub id: UavId,
    pub kind: UavKind,
    /// Ranges while misbehaving; equal to `cover` for honest UAVs.
    pub pdr_range: [f64; 2],
    pub rt_range: [f64; 2],
    /// Ranges while behaving normally.
    pub cover: BehaviorRanges,
    /// Stretch factor of the reversed model updates it submits after onset.
    pub poison: Option<f64>,
    pub onset_round: u32,
    pub attack_prob: f64,
    pub probe_prob: f64,
}

impl UavProfile {
    pub fn honest(id: UavId, ranges: BehaviorRanges) -> Self {
        Self {
            id,
            kind: UavKind::Honest,
            pdr_range: ranges.pdr,
            rt_range: ranges.rt_ms,
            cover: ranges,
            poison: None,
            onset_round: u32::MAX,
            attack_prob: 0.0,
            probe_prob: 0.0,
        }
    }

    pub fn rogue(id: UavId, attack: BehaviorRanges, cover: BehaviorRanges, onset_round: u32, attack_prob: f64, probe_prob: f64, poison: Option<f64>) -> Self {
        Self {
            id,
            kind: UavKind::Rogue,
            pdr_range: attack.pdr,
            rt_range: attack.rt_ms,
            cover,
            poison,
            onset_round,
            attack_prob,
            probe_prob,
        }
    }

    pub fn is_rogue(&self) -> bool {
        self.kind == UavKind::Rogue
    }

    pub fn active_ranges(&self, attacking: bool) -> BehaviorRanges {
        if attacking {
            BehaviorRanges { pdr: self.pdr_range, rt_ms: self.rt_range }
        } else {
            self.cover
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Uav {
    pub profile: UavProfile,
    pub position: (f64, f64),
    pub energy: EnergyState,
    pub trust: TrustState,
    /// Misbehaving during the current round.
    pub attacking: bool,
}

impl Uav {
    pub fn id(&self) -> UavId {
        self.profile.id
    }

    pub fn is_depleted(&self) -> bool {
        self.energy.is_depleted()
    }

    pub fn energy_score(&self) -> f64 {
        energy_score(&self.energy).expect("capacity validated at construction")
    }

    /// Past its onset round, so its model updates are hostile.
    pub fn turned(&self, round: u32) -> bool {
        self.profile.is_rogue() && round >= self.profile.onset_round
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Topology {
    Mesh { radius_km: f64 },
    Star { hub: UavId },
}

impl From<TopologyConfig> for Topology {
    fn from(t: TopologyConfig) -> Self {
        match t {
            TopologyConfig::Mesh { radius_km } => Topology::Mesh { radius_km },
            TopologyConfig::Star { hub } => Topology::Star { hub: UavId(hub) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub round: u32,
    pub uavs: Vec<Uav>,
    pub users: usize,
    pub topology: Topology,
    pub area_km: f64,
    pub max_speed_km: f64,
}

/// Undirected edges stored as `(low, high)` pairs.
pub type Adjacency = BTreeSet<(UavId, UavId)>;

impl WorldState {
    /// Places UAVs uniformly, picks rogues and their onset rounds.
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let mut rng = stream(cfg.seed, Stream::Placement, 0);
        let n = cfg.uav_count;
        let mut ids: Vec<usize> = (0..n).collect();
        ids.shuffle(&mut rng);
        let mut rogue = vec![false; n];
        for &i in ids.iter().take(cfg.rogue_count()) {
            rogue[i] = true;
        }
        let [on_lo, on_hi] = cfg.rogue.onset_rounds;
        let mut uavs = Vec::with_capacity(n);
        for (i, &is_rogue) in rogue.iter().enumerate() {
            let id = UavId(i as u32);
            let position = (rng.gen_range(0.0..=cfg.area_km), rng.gen_range(0.0..=cfg.area_km));
            let onset = rng.gen_range(on_lo..=on_hi);
            let profile = if is_rogue {
                let r = &cfg.rogue;
                UavProfile::rogue(id, r.attack, cfg.honest, onset, r.attack_prob, r.probe_prob, r.poison_updates.then_some(r.poison_scale))
            } else {
                UavProfile::honest(id, cfg.honest)
            };
            uavs.push(Uav {
                profile,
                position,
                energy: EnergyState::full(cfg.energy.capacity),
                trust: TrustState::new(id, cfg.initial_trust)?,
                attacking: false,
            });
        }
        Ok(Self {
            round: 0,
            uavs,
            users: cfg.user_count,
            topology: cfg.topology.into(),
            area_km: cfg.area_km,
            max_speed_km: cfg.max_speed_km,
        })
    }

    pub fn len(&self) -> usize {
        self.uavs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.uavs.is_empty()
    }

    pub fn rogue_ids(&self) -> BTreeSet<UavId> {
        self.uavs.iter().filter(|u| u.profile.is_rogue()).map(Uav::id).collect()
    }

    /// Decides which rogues misbehave this round.
    pub fn refresh_behavior<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let round = self.round;
        for uav in &mut self.uavs {
            // One draw per UAV regardless of kind keeps the stream aligned.
            let coin: f64 = rng.gen();
            uav.attacking = uav.turned(round) && coin < uav.profile.attack_prob;
        }
    }
}

fn distance(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

pub fn build_topology(world: &WorldState) -> Result<Adjacency> {
    let n = world.uavs.len();
    let mut edges = Adjacency::new();
    match world.topology {
        Topology::Mesh { radius_km } => {
            for i in 0..n {
                for j in i + 1..n {
                    if distance(world.uavs[i].position, world.uavs[j].position) <= radius_km {
                        edges.insert((UavId(i as u32), UavId(j as u32)));
                    }
                }
            }
        }
        Topology::Star { hub } => {
            if hub.index() >= n {
                return Err(Error::InvalidHub { hub: hub.0, n });
            }
            for i in (0..n as u32).filter(|&i| i != hub.0) {
                let leaf = UavId(i);
                edges.insert((hub.min(leaf), hub.max(leaf)));
            }
        }
    }
    Ok(edges)
}

pub fn degrees(adj: &Adjacency, n: usize) -> Vec<usize> {
    let mut d = vec![0; n];
    for &(a, b) in adj {
        d[a.index()] += 1;
        d[b.index()] += 1;
    }
    d
}

/// Folds a coordinate back into `[0, side]` by mirroring at the walls.
pub fn reflect(v: f64, side: f64) -> f64 {
    if side <= 0.0 {
        return 0.0;
    }
    let period = 2.0 * side;
    let r = v.rem_euclid(period);
    if r > side {
        period - r
    } else {
        r
    }
}

pub fn move_reflecting(pos: (f64, f64), delta: (f64, f64), side: f64) -> (f64, f64) {
    (reflect(pos.0 + delta.0, side), reflect(pos.1 + delta.1, side))
}

/// Random-heading move of at most `max_speed_km` per UAV.
pub fn step_mobility<R: Rng + ?Sized>(world: &mut WorldState, rng: &mut R) {
    let side = world.area_km;
    let vmax = world.max_speed_km;
    for uav in &mut world.uavs {
        let heading = rng.gen_range(0.0..TAU);
        let dist = vmax * rng.gen::<f64>();
        uav.position = move_reflecting(uav.position, (dist * heading.cos(), dist * heading.sin()), side);
    }
}

fn draw<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// `per_link` records in each direction of every edge, drawn from the
/// subject's currently active behavior ranges. A rogue that is not attacking
/// this round, including before its onset, still misbehaves toward each
/// single observer with its probe probability.
pub fn generate_interactions<R: Rng + ?Sized>(world: &WorldState, adj: &Adjacency, per_link: u32, rng: &mut R) -> Vec<InteractionRecord> {
    let mut out = Vec::with_capacity(adj.len() * 2 * per_link as usize);
    for &(a, b) in adj {
        for (observer, subject) in [(a, b), (b, a)] {
            let s = &world.uavs[subject.index()];
            let probe = rng.gen::<f64>() < s.profile.probe_prob;
            let ranges = s.profile.active_ranges(s.attacking || probe);
            for _ in 0..per_link {
                let pdr = draw(rng, ranges.pdr);
                let rt = draw(rng, ranges.rt_ms);
                out.push(InteractionRecord { observer, subject, pdr, response_time: rt, round: world.round });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DrainCharge {
    pub activity: f64,
    pub base: f64,
}

/// Charges each UAV its activity cost, then the base drain, flooring at zero.
/// Returns what was actually removed from each battery.
pub fn deplete_energy(world: &mut WorldState, activity: &[f64], base_drain: f64) -> Vec<DrainCharge> {
    assert_eq!(activity.len(), world.uavs.len());
    world
        .uavs
        .iter_mut()
        .zip(activity)
        .map(|(uav, &cost)| {
            let a = energy_charge(uav.energy, cost);
            let b = energy_charge(a.state, base_drain);
            uav.energy = b.state;
            DrainCharge { activity: a.charged, base: b.charged }
        })
        .collect()
}

/// Per-pair and per-subject sums over one round's records.
#[derive(Debug, Clone)]
pub struct RoundObservations {
    n: usize,
    /// Row-major `observer * n + subject`: (count, pdr sum, rt sum).
    pairs: Vec<(u32, f64, f64)>,
    per_link: u32,
}

impl RoundObservations {
    pub fn new(records: &[InteractionRecord], n: usize, per_link: u32) -> Self {
        let mut pairs = vec![(0u32, 0.0, 0.0); n * n];
        for r in records {
            let slot = &mut pairs[r.observer.index() * n + r.subject.index()];
            slot.0 += 1;
            slot.1 += r.pdr;
            slot.2 += r.response_time;
        }
        Self { n, pairs, per_link }
    }

    pub fn pair(&self, observer: UavId, subject: UavId) -> (u32, f64, f64) {
        self.pairs[observer.index() * self.n + subject.index()]
    }

    /// Observers that saw `subject` this round.
    pub fn observers_of(&self, subject: UavId) -> impl Iterator<Item = UavId> + '_ {
        (0..self.n).map(|o| UavId(o as u32)).filter(move |&o| self.pair(o, subject).0 > 0)
    }

    pub fn subjects_of(&self, observer: UavId) -> impl Iterator<Item = UavId> + '_ {
        (0..self.n).map(|s| UavId(s as u32)).filter(move |&s| self.pair(observer, s).0 > 0)
    }

    pub fn records_about(&self, subject: UavId) -> u32 {
        (0..self.n).map(|o| self.pairs[o * self.n + subject.index()].0).sum()
    }

    pub fn records_by(&self, observer: UavId) -> u32 {
        let row = observer.index() * self.n;
        self.pairs[row..row + self.n].iter().map(|p| p.0).sum()
    }

    /// Mean PDR and mean response time of everything observed about `subject`.
    pub fn subject_means(&self, subject: UavId) -> Option<(f64, f64)> {
        let (c, p, r) = (0..self.n)
            .map(|o| self.pairs[o * self.n + subject.index()])
            .fold((0u32, 0.0, 0.0), |acc, x| (acc.0 + x.0, acc.1 + x.1, acc.2 + x.2));
        (c > 0).then(|| (p / f64::from(c), r / f64::from(c)))
    }

    /// Feature vector of what `observer` saw of `subject`.
    pub fn features(&self, world: &WorldState, observer: UavId, subject: UavId, rt_max: f64) -> Option<FeatureVector> {
        let (c, p, r) = self.pair(observer, subject);
        if c == 0 {
            return None;
        }
        let c = f64::from(c);
        Some(FeatureVector {
            pdr_mean: (p / c).clamp(0.0, 1.0),
            rt_norm: ((r / c) / rt_max).clamp(0.0, 1.0),
            energy_score: world.uavs[subject.index()].energy_score(),
            interaction_rate: (c / f64::from(self.per_link.max(1))).clamp(0.0, 1.0),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendingSample {
    pub observer: UavId,
    pub subject: UavId,
    pub features: FeatureVector,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledExample {
    pub observer: UavId,
    pub subject: UavId,
    pub features: FeatureVector,
    /// 1 iff the subject is rogue.
    pub label: u8,
}

/// Observations waiting for their delayed ground-truth audit.
#[derive(Debug, Clone, Default)]
pub struct AuditQueue {
    pending: VecDeque<(u32, Vec<PendingSample>)>,
}

impl AuditQueue {
    pub fn push(&mut self, round: u32, samples: Vec<PendingSample>) {
        self.pending.push_back((round, samples));
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }
}

/// Releases every queued observation from round `world.round - audit_delay`
/// or earlier, labeled by the subject's true kind.
pub fn ground_truth_labels(world: &WorldState, queue: &mut AuditQueue, audit_delay: u32) -> Vec<LabeledExample> {
    let mut out = Vec::new();
    while let Some((round, _)) = queue.pending.front() {
        if u64::from(*round) + u64::from(audit_delay) > u64::from(world.round) {
            break;
        }
        let (_, samples) = queue.pending.pop_front().expect("front exists");
        out.extend(samples.into_iter().map(|s| LabeledExample {
            observer: s.observer,
            subject: s.subject,
            features: s.features,
            label: u8::from(world.uavs[s.subject.index()].profile.is_rogue()),
        }));
    }
    out
}

/// Per-round CSV rows: round, uav, x_km, y_km, energy, trust.
pub fn trace_rows(world: &WorldState) -> impl Iterator<Item = (u32, u32, f64, f64, f64, f64)> + '_ {
    world
        .uavs
        .iter()
        .map(move |u| (world.round, u.id().0, u.position.0, u.position.1, u.energy.remaining, u.trust.score))
}
