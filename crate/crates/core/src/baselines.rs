//! Comparison systems: centralized trust evaluation (CTE) and a standard
//! blockchain with static trust and scheduled consensus (SBST).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::config::{Method, ScenarioConfig};
use crate::engine::{propose, RoundSpend, RunOutput, Simulation};
use crate::error::Result;
use crate::fed::{predict, train_local, LocalDataset, ModelParams};
use crate::ledger::{sha256, Ledger, Transaction, TxKind};
use crate::metrics::Convergence;
use crate::trust::{classify, TrustClass, UavId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    Cte,
    Sbst,
}

impl BaselineKind {
    pub fn method(self) -> Method {
        match self {
            BaselineKind::Cte => Method::Cte,
            BaselineKind::Sbst => Method::Sbst,
        }
    }
}

/// Uplink cost of shipping `records` raw interaction records.
pub fn upload_bytes(records: u32, record_bytes: u64) -> u64 {
    u64::from(records) * record_bytes
}

/// Every UAV ships its raw records to one server, which trains a single
/// model on the pooled audited data and classifies each observed UAV anew
/// every round. No ledger and no consensus.
pub fn run_cte(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg, Method::Cte)?;
    let cfg = sim.cfg.clone();
    let n = sim.n();
    let mut pooled = LocalDataset::new(UavId(0));
    let mut model = ModelParams::zeros();
    let mut flagged = BTreeSet::new();

    for round in 0..cfg.rounds {
        let ctx = sim.begin_round(round)?;
        let mut spend = RoundSpend::new(n);

        for i in 0..n {
            let id = UavId(i as u32);
            let records = ctx.observations.records_by(id);
            if records == 0 || sim.world.uavs[i].is_depleted() {
                continue;
            }
            let bytes = upload_bytes(records, cfg.record_bytes);
            spend.bytes.record_bytes += bytes;
            spend.transactions += 1;
            spend.transmit(&cfg, id, bytes);
        }

        pooled.samples.extend(sim.audit(&ctx).into_iter().map(|ex| (ex.features, ex.label)));
        model = train_local(&pooled, model, cfg.fl.train()).params;

        for i in 0..n {
            let id = UavId(i as u32);
            let Some(x) = sim.subject_features(&ctx, id) else { continue };
            let score = 1.0 - predict(&model, &x);
            sim.world.uavs[i].trust.record(round, score)?;
            if classify(score, cfg.trust_threshold)? == TrustClass::Rogue {
                flagged.insert(id);
            } else {
                flagged.remove(&id);
            }
        }

        sim.finish_round(&flagged, spend)?;
    }
    Ok(sim.finish(Convergence::NotApplicable, None))
}

/// Fixed validator rotation over all UAVs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundRobin {
    next: usize,
    n: usize,
}

impl RoundRobin {
    pub fn new(n: usize) -> Self {
        Self { next: 0, n }
    }

    /// The next scheduled validator; the schedule always advances.
    pub fn advance(&mut self) -> UavId {
        let id = UavId(self.next as u32);
        self.next = (self.next + 1) % self.n;
        id
    }
}

/// Digest of an observer's batch followed by a 16-byte summary per subject:
/// subject id, record count, mean PDR.
fn batch_payload(summary: &[(UavId, u32, f64)]) -> Vec<u8> {
    let mut body = Vec::with_capacity(summary.len() * 16);
    for &(s, count, pdr) in summary {
        body.extend_from_slice(&s.0.to_be_bytes());
        body.extend_from_slice(&count.to_be_bytes());
        body.extend_from_slice(&pdr.to_be_bytes());
    }
    let mut payload = sha256(&body).to_vec();
    payload.extend_from_slice(&body);
    payload
}

/// Trust never moves from its initial value; validators rotate on a fixed
/// schedule and every other peer re-validates each block. A UAV is flagged
/// once the mean PDR observed about it over the whole run drops below a
/// fixed threshold.
pub fn run_sbst(cfg: &ScenarioConfig) -> Result<RunOutput> {
    let mut sim = Simulation::new(cfg, Method::Sbst)?;
    let cfg = sim.cfg.clone();
    let n = sim.n();
    let mut ledger = Ledger::new();
    let mut schedule = RoundRobin::new(n);
    let mut pdr_totals = vec![(0.0f64, 0u64); n];
    let envelope = cfg.tx_envelope_bytes;

    for round in 0..cfg.rounds {
        let ctx = sim.begin_round(round)?;
        let mut spend = RoundSpend::new(n);

        for r in &ctx.records {
            let slot = &mut pdr_totals[r.subject.index()];
            slot.0 += r.pdr;
            slot.1 += 1;
        }
        for uav in &mut sim.world.uavs {
            uav.trust.record(round, cfg.initial_trust)?;
        }
        let flagged: BTreeSet<UavId> = pdr_totals
            .iter()
            .enumerate()
            .filter(|(_, &(sum, count))| count > 0 && sum / (count as f64) < cfg.sbst_pdr_threshold)
            .map(|(i, _)| UavId(i as u32))
            .collect();

        let txs: Vec<Transaction> = (0..n as u32)
            .map(UavId)
            .filter_map(|o| {
                let summary: Vec<(UavId, u32, f64)> = ctx
                    .observations
                    .subjects_of(o)
                    .map(|s| {
                        let (c, p, _) = ctx.observations.pair(o, s);
                        (s, c, p / f64::from(c))
                    })
                    .collect();
                (!summary.is_empty()).then(|| Transaction::new(TxKind::InteractionBatchDigest, o, batch_payload(&summary), round))
            })
            .collect();

        if !txs.is_empty() {
            for _ in 0..n {
                let validator = schedule.advance();
                let v = &sim.world.uavs[validator.index()];
                if v.is_depleted() {
                    continue;
                }
                spend.activity[validator.index()] += cfg.energy.validation_cost;
                let tamper = cfg.rogue.tamper_blocks && v.attacking;
                if propose(&mut ledger, txs.clone(), validator, round, tamper)? {
                    let block = ledger.tip();
                    let bytes = block.wire_bytes(envelope);
                    spend.bytes.block_bytes += bytes;
                    spend.transactions += block.transactions.len() as u64;
                    spend.transmit(&cfg, validator, bytes);
                    for (i, u) in sim.world.uavs.iter().enumerate() {
                        if i != validator.index() && !u.is_depleted() {
                            spend.activity[i] += cfg.energy.peer_verification_cost;
                        }
                    }
                    break;
                }
            }
        }

        sim.finish_round(&flagged, spend)?;
    }
    Ok(sim.finish(Convergence::NotApplicable, Some(ledger)))
}
