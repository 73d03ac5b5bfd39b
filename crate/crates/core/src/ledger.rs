//! Energy-aware validator selection and the hash-chained trust ledger.
//!
//! Block hashes are SHA-256 over a fixed big-endian layout:
//!
//! ```text
//! height u64 | prev_hash [32] | timestamp u64 | validator u32 | tx_count u32 |
//!   per tx: kind u8 | subject u32 | round u64 | payload_len u32 | payload
//! ```

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::error::{check_unit, Error, Result};
use crate::trust::{EnergyState, UavId};

pub type Digest = [u8; 32];

pub const ZERO_DIGEST: Digest = [0u8; 32];

/// Bytes of a block excluding its transactions: the hashed header fields plus the hash itself.
pub const BLOCK_HEADER_BYTES: u64 = 8 + 32 + 8 + 4 + 4 + 32;

pub fn sha256(bytes: &[u8]) -> Digest {
    Sha256::digest(bytes).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxKind {
    TrustUpdate,
    ModelDigest,
    InteractionBatchDigest,
}

impl TxKind {
    pub fn code(self) -> u8 {
        match self {
            TxKind::TrustUpdate => 1,
            TxKind::ModelDigest => 2,
            TxKind::InteractionBatchDigest => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub kind: TxKind,
    pub subject: UavId,
    #[serde(with = "hex_bytes")]
    pub payload: Vec<u8>,
    pub round: u32,
}

impl Transaction {
    pub fn new(kind: TxKind, subject: UavId, payload: Vec<u8>, round: u32) -> Self {
        assert!(!payload.is_empty(), "transaction payload must be non-empty");
        Self { kind, subject, payload, round }
    }

    /// Billed wire size: fixed envelope plus payload.
    pub fn wire_bytes(&self, envelope: u64) -> u64 {
        envelope + self.payload.len() as u64
    }

    fn write_canonical(&self, out: &mut Vec<u8>) {
        out.push(self.kind.code());
        out.extend_from_slice(&self.subject.0.to_be_bytes());
        out.extend_from_slice(&u64::from(self.round).to_be_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub height: u64,
    #[serde(with = "hex_digest")]
    pub prev_hash: Digest,
    pub timestamp: u64,
    pub validator: UavId,
    pub transactions: Vec<Transaction>,
    #[serde(with = "hex_digest")]
    pub hash: Digest,
}

impl Block {
    pub fn seal(height: u64, prev_hash: Digest, timestamp: u64, validator: UavId, transactions: Vec<Transaction>) -> Self {
        let mut block = Self { height, prev_hash, timestamp, validator, transactions, hash: ZERO_DIGEST };
        block.hash = block.compute_hash();
        block
    }

    pub fn genesis() -> Self {
        Self::seal(0, ZERO_DIGEST, 0, UavId(0), Vec::new())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(56 + self.transactions.len() * 64);
        out.extend_from_slice(&self.height.to_be_bytes());
        out.extend_from_slice(&self.prev_hash);
        out.extend_from_slice(&self.timestamp.to_be_bytes());
        out.extend_from_slice(&self.validator.0.to_be_bytes());
        out.extend_from_slice(&(self.transactions.len() as u32).to_be_bytes());
        for tx in &self.transactions {
            tx.write_canonical(&mut out);
        }
        out
    }

    pub fn compute_hash(&self) -> Digest {
        sha256(&self.canonical_bytes())
    }

    pub fn wire_bytes(&self, envelope: u64) -> u64 {
        BLOCK_HEADER_BYTES + self.transactions.iter().map(|t| t.wire_bytes(envelope)).sum::<u64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChainStatus {
    Valid,
    Corrupt(u64),
}

/// Append-only single chain starting at a genesis block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ledger {
    blocks: Vec<Block>,
}

impl Default for Ledger {
    fn default() -> Self {
        Self::new()
    }
}

impl Ledger {
    pub fn new() -> Self {
        Self { blocks: vec![Block::genesis()] }
    }

    /// Wraps blocks read from storage without checking them; call [`verify_chain`].
    pub fn from_blocks(blocks: Vec<Block>) -> Self {
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [Block] {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("ledger always holds genesis")
    }

    pub fn transaction_count(&self) -> usize {
        self.blocks.iter().map(|b| b.transactions.len()).sum()
    }

    /// Builds (but does not append) the next block on top of the tip.
    pub fn candidate(&self, txs: Vec<Transaction>, validator: UavId, round: u32) -> Result<Block> {
        if txs.is_empty() {
            return Err(Error::EmptyBlockRejected);
        }
        let tip = self.tip();
        Ok(Block::seal(tip.height + 1, tip.hash, u64::from(round), validator, txs))
    }

    /// Appends a block proposed by a validator after checking it against the tip.
    pub fn commit(&mut self, block: Block) -> Result<()> {
        let tip = self.tip();
        if tip.compute_hash() != tip.hash {
            return Err(Error::CorruptLedger(tip.height));
        }
        if block.height != tip.height + 1 || block.prev_hash != tip.hash || block.compute_hash() != block.hash {
            return Err(Error::CorruptLedger(block.height));
        }
        if block.transactions.is_empty() {
            return Err(Error::EmptyBlockRejected);
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn append_block(&mut self, txs: Vec<Transaction>, validator: UavId, round: u32) -> Result<&Block> {
        let block = self.candidate(txs, validator, round)?;
        self.commit(block)?;
        Ok(self.tip())
    }

    /// Newline-delimited JSON, one block per line.
    pub fn write_ndjson<W: Write>(&self, mut out: W) -> Result<()> {
        for block in &self.blocks {
            let line = serde_json::to_string(block).map_err(|e| Error::Io(e.to_string()))?;
            out.write_all(line.as_bytes())?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_ndjson<R: BufRead>(input: R) -> Result<Self> {
        let mut blocks = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let block: Block = serde_json::from_str(&line)
                .map_err(|e| Error::LedgerFormat { line: i + 1, message: e.to_string() })?;
            blocks.push(block);
        }
        Ok(Self { blocks })
    }
}

/// Checks hash recomputation and linkage; reports the first failing height.
pub fn verify_chain(ledger: &Ledger) -> ChainStatus {
    let mut prev: Option<&Block> = None;
    for (i, block) in ledger.blocks().iter().enumerate() {
        let expected_prev = prev.map_or(ZERO_DIGEST, |p| p.hash);
        if block.height != i as u64 || block.prev_hash != expected_prev || block.compute_hash() != block.hash {
            return ChainStatus::Corrupt(i as u64);
        }
        prev = Some(block);
    }
    ChainStatus::Valid
}

/// Selection probabilities proportional to `trust * energy`.
///
/// When every product is zero the formula is undefined; the lottery falls
/// back to a uniform draw so a round still gets a validator.
pub fn validation_probabilities(entries: &[(f64, f64)]) -> Result<Vec<f64>> {
    if entries.is_empty() {
        return Err(Error::NoCandidates);
    }
    let mut products = Vec::with_capacity(entries.len());
    for &(t, e) in entries {
        products.push(check_unit("trust", t)? * check_unit("energy", e)?);
    }
    let total: f64 = products.iter().sum();
    if total <= 0.0 {
        let p = 1.0 / entries.len() as f64;
        return Ok(vec![p; entries.len()]);
    }
    Ok(products.into_iter().map(|x| x / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LotteryEntry {
    pub uav: UavId,
    pub trust: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidatorLottery {
    entries: Vec<LotteryEntry>,
    probabilities: Vec<f64>,
}

impl ValidatorLottery {
    pub fn new(entries: Vec<LotteryEntry>) -> Result<Self> {
        let pairs: Vec<_> = entries.iter().map(|e| (e.trust, e.energy)).collect();
        let probabilities = validation_probabilities(&pairs)?;
        Ok(Self { entries, probabilities })
    }

    pub fn entries(&self) -> &[LotteryEntry] {
        &self.entries
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }

    /// The same lottery with one candidate removed (after it produced a bad block).
    pub fn without(&self, uav: UavId) -> Result<Self> {
        Self::new(self.entries.iter().filter(|e| e.uav != uav).cloned().collect())
    }
}

/// Draws one validator; consumes exactly one `f64` from `rng`.
pub fn select_validator<R: Rng + ?Sized>(lottery: &ValidatorLottery, rng: &mut R) -> UavId {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (entry, &p) in lottery.entries.iter().zip(&lottery.probabilities) {
        acc += p;
        if u < acc {
            return entry.uav;
        }
    }
    // u landed in the rounding gap above the cumulative sum; take the last
    // candidate with non-zero mass.
    lottery
        .entries
        .iter()
        .zip(&lottery.probabilities)
        .rev()
        .find(|(_, &p)| p > 0.0)
        .map(|(e, _)| e.uav)
        .unwrap_or(lottery.entries[lottery.entries.len() - 1].uav)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Charge {
    pub state: EnergyState,
    /// Energy actually removed (less than the cost when the battery runs dry).
    pub charged: f64,
    pub depleted: bool,
}

pub fn energy_charge(state: EnergyState, cost: f64) -> Charge {
    assert!(cost >= 0.0, "energy cost must be non-negative");
    let charged = cost.min(state.remaining.max(0.0));
    let remaining = (state.remaining - charged).max(0.0);
    Charge {
        state: EnergyState { remaining, capacity: state.capacity },
        charged,
        depleted: remaining <= 0.0,
    }
}

mod hex_digest {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &[u8; 32], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(d))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<[u8; 32], D::Error> {
        let s = String::deserialize(d)?;
        let bytes = hex::decode(&s).map_err(D::Error::custom)?;
        bytes
            .try_into()
            .map_err(|v: Vec<u8>| D::Error::custom(format!("digest must be 32 bytes, got {}", v.len())))
    }
}

mod hex_bytes {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(b: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(b))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(&s).map_err(D::Error::custom)
    }
}
