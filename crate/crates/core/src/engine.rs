//! Round driver shared by all three methods, and the DTSAM-EAC protocol.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Method, ScenarioConfig};
use crate::error::{Error, Result};
use crate::fed::{has_converged, predict, run_fl_round, FeatureVector, FlRoundState, LocalDataset, ModelParams, Participant};
use crate::ledger::{select_validator, Ledger, LotteryEntry, Transaction, TxKind, ValidatorLottery};
use crate::metrics::{
    accuracy, comm_overhead_mb_per_uav, detection_rate, energy_per_transaction, window_mean, ByteBill, Convergence,
    FirstDetection, MetricsReport, RoundMetrics, BYTES_PER_KB,
};
use crate::netsim::{
    build_topology, deplete_energy, generate_interactions, ground_truth_labels, step_mobility, stream, Adjacency,
    AuditQueue, LabeledExample, PendingSample, RoundObservations, Stream, WorldState,
};
use crate::trust::{behavior_from_means, classify, update_trust, InteractionRecord, TrustClass, UavId};

/// Behavior score given to a UAV nobody observed this round.
pub const NEUTRAL_BEHAVIOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub round: u32,
    pub uav: u32,
    pub x_km: f64,
    pub y_km: f64,
    pub energy: f64,
    pub trust: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub ledger: Option<Ledger>,
    pub trace: Vec<TraceRow>,
}

pub struct RoundContext {
    pub adjacency: Adjacency,
    pub records: Vec<InteractionRecord>,
    pub observations: RoundObservations,
}

/// What a method spent in one round, before the batteries are debited.
#[derive(Debug, Clone)]
pub struct RoundSpend {
    pub bytes: ByteBill,
    /// Protocol energy per UAV in battery units.
    pub activity: Vec<f64>,
    pub transactions: u64,
    pub fl_round: Option<u32>,
    pub validation_accuracy: Option<f64>,
}

impl RoundSpend {
    pub fn new(n: usize) -> Self {
        Self { bytes: ByteBill::default(), activity: vec![0.0; n], transactions: 0, fl_round: None, validation_accuracy: None }
    }

    /// Charges the radio cost of sending `bytes` to `uav`.
    pub fn transmit(&mut self, cfg: &ScenarioConfig, uav: UavId, bytes: u64) {
        self.activity[uav.index()] += bytes as f64 / BYTES_PER_KB * cfg.energy.tx_cost_per_kb;
    }
}

/// World, label oracle and metric bookkeeping for one seeded run.
pub struct Simulation {
    pub cfg: ScenarioConfig,
    pub world: WorldState,
    audit: AuditQueue,
    rogues: BTreeSet<UavId>,
    bytes: ByteBill,
    protocol_units: f64,
    base_units: f64,
    transactions: u64,
    rows: Vec<RoundMetrics>,
    first_detected: BTreeMap<UavId, u32>,
    trace: Vec<TraceRow>,
}

impl Simulation {
    /// The report is labeled with `method` whatever `cfg.method` says.
    pub fn new(cfg: &ScenarioConfig, method: Method) -> Result<Self> {
        cfg.validate()?;
        let world = WorldState::from_config(cfg)?;
        let rogues = world.rogue_ids();
        Ok(Self {
            cfg: ScenarioConfig { method, ..cfg.clone() },
            world,
            audit: AuditQueue::default(),
            rogues,
            bytes: ByteBill::default(),
            protocol_units: 0.0,
            base_units: 0.0,
            transactions: 0,
            rows: Vec::new(),
            first_detected: BTreeMap::new(),
            trace: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.world.len()
    }

    pub fn rogues(&self) -> &BTreeSet<UavId> {
        &self.rogues
    }

    /// Moves the world to `round` and produces its interactions. Depends only
    /// on (config, seed, round), never on what a method did earlier.
    pub fn begin_round(&mut self, round: u32) -> Result<RoundContext> {
        let seed = self.cfg.seed;
        self.world.round = round;
        if round > 0 {
            step_mobility(&mut self.world, &mut stream(seed, Stream::Mobility, round));
        }
        self.world.refresh_behavior(&mut stream(seed, Stream::Behavior, round));
        let adjacency = build_topology(&self.world)?;
        let per_link = self.cfg.interactions_per_link;
        let records = generate_interactions(&self.world, &adjacency, per_link, &mut stream(seed, Stream::Interactions, round));
        let observations = RoundObservations::new(&records, self.n(), per_link);
        Ok(RoundContext { adjacency, records, observations })
    }

    /// Queues this round's pair observations for audit and returns every
    /// observation whose audit has completed.
    pub fn audit(&mut self, ctx: &RoundContext) -> Vec<LabeledExample> {
        let n = self.n();
        let rt_max = self.cfg.rt_max_ms;
        let mut pending = Vec::new();
        for o in (0..n as u32).map(UavId) {
            for s in ctx.observations.subjects_of(o) {
                if let Some(features) = ctx.observations.features(&self.world, o, s, rt_max) {
                    pending.push(PendingSample { observer: o, subject: s, features });
                }
            }
        }
        self.audit.push(self.world.round, pending);
        ground_truth_labels(&self.world, &mut self.audit, self.cfg.audit_delay)
    }

    /// Everything this round revealed about `subject`, as one feature vector.
    pub fn subject_features(&self, ctx: &RoundContext, subject: UavId) -> Option<FeatureVector> {
        let (pdr, rt) = ctx.observations.subject_means(subject)?;
        let observers = ctx.observations.observers_of(subject).count() as f64;
        let max_records = (observers * f64::from(self.cfg.interactions_per_link)).max(1.0);
        Some(FeatureVector {
            pdr_mean: pdr.clamp(0.0, 1.0),
            rt_norm: (rt / self.cfg.rt_max_ms).clamp(0.0, 1.0),
            energy_score: self.world.uavs[subject.index()].energy_score(),
            interaction_rate: (f64::from(ctx.observations.records_about(subject)) / max_records).clamp(0.0, 1.0),
        })
    }

    /// Debits batteries and records the round's metrics.
    pub fn finish_round(&mut self, flagged: &BTreeSet<UavId>, spend: RoundSpend) -> Result<()> {
        let jpu = self.cfg.energy.joules_per_unit;
        let charges = deplete_energy(&mut self.world, &spend.activity, self.cfg.energy.base_drain);
        let protocol: f64 = charges.iter().map(|c| c.activity).sum();
        self.protocol_units += protocol;
        self.base_units += charges.iter().map(|c| c.base).sum::<f64>();
        self.bytes.add(spend.bytes);
        self.transactions += spend.transactions;

        let round = self.world.round;
        let truth: Vec<bool> = self.world.uavs.iter().map(|u| u.profile.is_rogue()).collect();
        let predicted: Vec<bool> = self.world.uavs.iter().map(|u| flagged.contains(&u.id())).collect();
        let acc = accuracy(&predicted, &truth)?;
        let detection = detection_rate(flagged, &self.rogues).ok();
        for id in flagged.intersection(&self.rogues) {
            self.first_detected.entry(*id).or_insert(round);
        }

        let (mut honest_sum, mut honest_n, mut rogue_sum, mut rogue_n) = (0.0, 0usize, 0.0, 0usize);
        for u in &self.world.uavs {
            if u.profile.is_rogue() {
                rogue_sum += u.trust.score;
                rogue_n += 1;
            } else {
                honest_sum += u.trust.score;
                honest_n += 1;
            }
        }
        let remaining: f64 = self.world.uavs.iter().map(|u| u.energy.remaining).sum();
        self.rows.push(RoundMetrics {
            method: self.cfg.method.as_str().to_string(),
            seed: self.cfg.seed,
            round,
            accuracy: acc,
            detection_rate: detection,
            flagged: flagged.len() as u32,
            bytes: spend.bytes.total(),
            cumulative_mb_per_uav: comm_overhead_mb_per_uav(&self.bytes, self.n()),
            energy_j: protocol * jpu,
            cumulative_energy_j: self.protocol_units * jpu,
            transactions: spend.transactions,
            cumulative_transactions: self.transactions,
            fl_round: spend.fl_round,
            validation_accuracy: spend.validation_accuracy,
            mean_trust_honest: if honest_n > 0 { honest_sum / honest_n as f64 } else { 0.0 },
            mean_trust_rogue: (rogue_n > 0).then(|| rogue_sum / rogue_n as f64),
            remaining_energy_mean: remaining / self.n().max(1) as f64,
        });
        self.trace.extend(self.world.uavs.iter().map(|u| TraceRow {
            round,
            uav: u.id().0,
            x_km: u.position.0,
            y_km: u.position.1,
            energy: u.energy.remaining,
            trust: u.trust.score,
        }));
        Ok(())
    }

    pub fn finish(self, convergence: Convergence, ledger: Option<Ledger>) -> RunOutput {
        let jpu = self.cfg.energy.joules_per_unit;
        let window = self.cfg.eval_window as usize;
        let accs: Vec<f64> = self.rows.iter().map(|r| r.accuracy).collect();
        let dets: Vec<f64> = self.rows.iter().filter_map(|r| r.detection_rate).collect();
        let protocol_j = self.protocol_units * jpu;
        let first_detection = self
            .world
            .uavs
            .iter()
            .filter(|u| u.profile.is_rogue())
            .map(|u| FirstDetection {
                uav: u.id(),
                onset_round: u.profile.onset_round,
                detected_round: self.first_detected.get(&u.id()).copied(),
            })
            .collect();
        let report = MetricsReport {
            method: self.cfg.method,
            seed: self.cfg.seed,
            accuracy: window_mean(&accs, window).unwrap_or(0.0),
            detection_rate: window_mean(&dets, window),
            comm_overhead_mb_per_uav: comm_overhead_mb_per_uav(&self.bytes, self.n()),
            energy_per_transaction: energy_per_transaction(protocol_j, self.transactions).ok(),
            convergence_rounds: convergence,
            bytes: self.bytes,
            protocol_energy_j: protocol_j,
            base_drain_j: self.base_units * jpu,
            transactions: self.transactions,
            first_detection,
            rounds: self.rows,
        };
        RunOutput { report, ledger, trace: self.trace }
    }
}

/// Held-out labeled feature vectors for measuring model accuracy. Each UAV
/// contributes samples drawn from its own profile; a rogue sample shows
/// misbehavior with the rogue's attack probability.
pub fn validation_set(cfg: &ScenarioConfig, world: &WorldState) -> LocalDataset {
    let mut rng = stream(cfg.seed, Stream::Validation, 0);
    let mut set = LocalDataset::new(UavId(0));
    let records = cfg.interactions_per_link.max(1);
    for uav in &world.uavs {
        for _ in 0..cfg.validation_samples_per_uav {
            let attacking = uav.profile.is_rogue() && rng.gen::<f64>() < uav.profile.attack_prob;
            let ranges = uav.profile.active_ranges(attacking);
            let (mut pdr, mut rt) = (0.0, 0.0);
            for _ in 0..records {
                pdr += uniform(&mut rng, ranges.pdr);
                rt += uniform(&mut rng, ranges.rt_ms);
            }
            let k = f64::from(records);
            let features = FeatureVector {
                pdr_mean: (pdr / k).clamp(0.0, 1.0),
                rt_norm: (rt / k / cfg.rt_max_ms).clamp(0.0, 1.0),
                energy_score: rng.gen_range(0.5..=1.0),
                // Every link carries its full interaction budget.
                interaction_rate: 1.0,
            };
            set.samples.push((features, u8::from(uav.profile.is_rogue())));
        }
    }
    set
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Fraction of samples where `predict >= 0.5` matches the rogue label.
pub fn model_accuracy(params: &ModelParams, data: &LocalDataset) -> Option<f64> {
    if data.samples.is_empty() {
        return None;
    }
    let correct = data.samples.iter().filter(|(x, y)| (predict(params, x) >= 0.5) == (*y == 1)).count();
    Some(correct as f64 / data.samples.len() as f64)
}

fn trust_payload(t: f64, b: f64, e: f64) -> Vec<u8> {
    [t, b, e].iter().flat_map(|v| v.to_be_bytes()).collect()
}

/// Proposes a block, letting a misbehaving rogue validator corrupt it after
/// sealing. Returns whether the block was accepted.
pub(crate) fn propose(ledger: &mut Ledger, txs: Vec<Transaction>, validator: UavId, round: u32, tamper: bool) -> Result<bool> {
    let mut block = ledger.candidate(txs, validator, round)?;
    if tamper {
        block.transactions[0].payload[0] ^= 0x01;
    }
    match ledger.commit(block) {
        Ok(()) => Ok(true),
        Err(Error::CorruptLedger(_)) => Ok(false),
        Err(e) => Err(e),
    }
}

/// Dynamic trust, federated rogue model, trust-weighted aggregation and an
/// energy-aware validator lottery.
pub fn run_dtsam(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg, Method::Dtsam)?;
    let cfg = sim.cfg.clone();
    let n = sim.n();
    let validation = validation_set(&cfg, &sim.world);
    let mut datasets: Vec<LocalDataset> = (0..n as u32).map(|i| LocalDataset::new(UavId(i))).collect();
    let mut global = ModelParams::zeros();
    let mut fl_state = FlRoundState::new(cfg.fl.epsilon);
    let mut convergence = None;
    // Trust in each UAV as judged by the shared model, smoothed like the
    // trust score itself. It drives revocation.
    let mut learned = vec![cfg.initial_trust; n];
    let mut revoked = BTreeSet::new();
    let mut ledger = Ledger::new();
    let envelope = cfg.tx_envelope_bytes;
    let alpha = cfg.trust.alpha;

    for round in 0..cfg.rounds {
        let ctx = sim.begin_round(round)?;
        let mut spend = RoundSpend::new(n);

        let mut scores = Vec::with_capacity(n);
        for i in 0..n {
            let uav = &sim.world.uavs[i];
            let b = ctx
                .observations
                .subject_means(uav.id())
                .map_or(NEUTRAL_BEHAVIOR, |(pdr, rt)| behavior_from_means(pdr, rt, cfg.rt_max_ms, cfg.behavior));
            let e = uav.energy_score();
            let t = update_trust(uav.trust.score, b, e, cfg.trust)?;
            scores.push((t, b, e));
        }
        for (uav, &(t, _, _)) in sim.world.uavs.iter_mut().zip(&scores) {
            uav.trust.record(round, t)?;
        }

        for ex in sim.audit(&ctx) {
            datasets[ex.observer.index()].samples.push((ex.features, ex.label));
        }

        // Training never stops: rogues can turn at any time. Convergence is
        // only looked for within the first `max_rounds` FL rounds.
        let mut model_digest = None;
        {
            let participants: Vec<Participant<'_>> = sim
                .world
                .uavs
                .iter()
                .map(|u| Participant {
                    id: u.id(),
                    data: &datasets[u.id().index()],
                    trust: if revoked.contains(&u.id()) { 0.0 } else { u.trust.score },
                    energy: &u.energy,
                    poison: u.profile.poison.filter(|_| u.turned(round)),
                })
                .collect();
            match run_fl_round(&participants, global, cfg.fl.aggregation, cfg.fl.train(), cfg.fl.message()) {
                Ok(outcome) => {
                    global = outcome.global;
                    for (id, bytes) in outcome.bytes {
                        spend.bytes.model_bytes += bytes;
                        spend.transmit(&cfg, id, bytes);
                    }
                    let acc = model_accuracy(&global, &validation).unwrap_or(0.0);
                    fl_state.push(acc);
                    if convergence.is_none() && fl_state.round <= cfg.fl.max_rounds && has_converged(&fl_state) {
                        convergence = Some(fl_state.round);
                    }
                    spend.fl_round = Some(fl_state.round);
                    spend.validation_accuracy = Some(acc);
                    model_digest = Some(global.digest());
                }
                Err(Error::RoundSkipped) => {}
                Err(e) => return Err(e),
            }
        }

        if fl_state.round > 0 {
            for (i, s) in learned.iter_mut().enumerate() {
                let id = UavId(i as u32);
                if let Some(x) = sim.subject_features(&ctx, id) {
                    *s = alpha * *s + (1.0 - alpha) * (1.0 - predict(&global, &x));
                    if classify(*s, cfg.trust_threshold)? == TrustClass::Rogue {
                        revoked.insert(id);
                    }
                }
            }
        }

        let entries: Vec<LotteryEntry> = sim
            .world
            .uavs
            .iter()
            .filter(|u| !u.is_depleted() && !revoked.contains(&u.id()))
            .map(|u| LotteryEntry { uav: u.id(), trust: u.trust.score, energy: u.energy_score() })
            .collect();
        if !entries.is_empty() {
            let mut lottery = ValidatorLottery::new(entries)?;
            let mut rng = stream(cfg.seed, Stream::Lottery, round);
            loop {
                let validator = select_validator(&lottery, &mut rng);
                spend.activity[validator.index()] += cfg.energy.validation_cost;
                let mut txs: Vec<Transaction> = scores
                    .iter()
                    .enumerate()
                    .map(|(i, &(t, b, e))| Transaction::new(TxKind::TrustUpdate, UavId(i as u32), trust_payload(t, b, e), round))
                    .collect();
                if let Some(d) = model_digest {
                    txs.push(Transaction::new(TxKind::ModelDigest, validator, d.to_vec(), round));
                }
                let v = &sim.world.uavs[validator.index()];
                let tamper = cfg.rogue.tamper_blocks && v.attacking;
                if propose(&mut ledger, txs, validator, round, tamper)? {
                    let block = ledger.tip();
                    let bytes = block.wire_bytes(envelope);
                    spend.bytes.block_bytes += bytes;
                    spend.transactions += block.transactions.len() as u64;
                    spend.transmit(&cfg, validator, bytes);
                    break;
                }
                if lottery.entries().len() == 1 {
                    break;
                }
                lottery = lottery.without(validator)?;
            }
        }

        sim.finish_round(&revoked, spend)?;
    }

    let convergence = match convergence {
        Some(r) => Convergence::Rounds(r),
        None => Convergence::NotReached(fl_state.round.min(cfg.fl.max_rounds)),
    };
    Ok(sim.finish(convergence, Some(ledger)))
}
