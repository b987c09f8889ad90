//! Block and chain validation.
//!
//! [`ChainState`] is the validated ledger for one active chain: it connects
//! and disconnects blocks at its tip and keeps an undo log per block.
//! [`Chain`] wraps it with a forest of every known block and applies the
//! most-cumulative-work rule, reorganising when a heavier branch appears.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use primitive_types::{U256, U512};
use thiserror::Error;

use crate::crypto::{hash256, Digest32};
use crate::model::{
    tx_commitment, Block, BlockHeader, ChainParams, OutPoint, Transaction, TxOutput, MAX_FUTURE_BLOCK_TIME,
};
use crate::script::{eval, is_final, ExecContext, ScriptFailure};
use crate::MAX_MONEY;

/// Orphans (blocks whose parent is unknown) kept at most.
pub const MAX_ORPHANS: usize = 1000;

/// Compact difficulty encoding: one exponent byte `E` and a 3-byte mantissa
/// `M`, expanding to `M × 256^(E−3)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct CompactTarget(pub u32);

impl CompactTarget {
    fn parts(self) -> (u32, U256) {
        (self.0 >> 24, U256::from(self.0 & 0x00ff_ffff))
    }

    /// Expanded 256-bit target, or `None` when the encoding overflows 256 bits.
    pub fn checked_expand(self) -> Option<U256> {
        let (exp, mantissa) = self.parts();
        if exp <= 3 {
            return Some(mantissa >> (8 * (3 - exp)));
        }
        let shift = 8 * (exp - 3) as usize;
        if mantissa.is_zero() {
            return Some(U256::zero());
        }
        if mantissa.bits() + shift > 256 {
            return None;
        }
        Some(mantissa << shift)
    }

    /// Expanded target, saturating at `2²⁵⁶ − 1` on overflow.
    pub fn expand(self) -> U256 {
        self.checked_expand().unwrap_or(U256::MAX)
    }

    /// Compact form of `target`, truncated to the 3-byte mantissa.
    pub fn from_target(target: U256) -> Self {
        let size = target.bits().div_ceil(8);
        let mantissa =
            if size <= 3 { target.low_u32() << (8 * (3 - size)) } else { (target >> (8 * (size - 3))).low_u32() };
        CompactTarget(((size as u32) << 24) | (mantissa & 0x00ff_ffff))
    }
}

pub fn block_subsidy(height: u64, params: &ChainParams) -> u64 {
    let halvings = height / params.halving_interval;
    if halvings >= 64 {
        0
    } else {
        params.initial_subsidy >> halvings
    }
}

/// Sum of subsidies for heights `0..=height`.
pub fn cumulative_supply(height: u64, params: &ChainParams) -> u64 {
    let interval = params.halving_interval;
    let mut total: u64 = 0;
    let mut epoch = 0u64;
    loop {
        let start = epoch * interval;
        if start > height || epoch >= 64 {
            return total;
        }
        let subsidy = params.initial_subsidy >> epoch;
        if subsidy == 0 {
            return total;
        }
        let end = height.min(start + interval - 1);
        total += subsidy * (end - start + 1);
        epoch += 1;
    }
}

/// Per-epoch issuance schedule until the subsidy reaches zero.
#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize)]
pub struct SupplyEpoch {
    pub epoch: u64,
    pub first_height: u64,
    pub last_height: u64,
    pub subsidy: u64,
    pub epoch_total: u64,
    pub running_total: u64,
}

pub fn supply_schedule(params: &ChainParams) -> Vec<SupplyEpoch> {
    let mut rows = Vec::new();
    let mut running = 0u64;
    for epoch in 0..64u64 {
        let subsidy = params.initial_subsidy >> epoch;
        if subsidy == 0 {
            break;
        }
        let epoch_total = subsidy * params.halving_interval;
        running += epoch_total;
        rows.push(SupplyEpoch {
            epoch,
            first_height: epoch * params.halving_interval,
            last_height: (epoch + 1) * params.halving_interval - 1,
            subsidy,
            epoch_total,
            running_total: running,
        });
    }
    rows
}

/// Total issuance over all heights.
pub fn supply_limit(params: &ChainParams) -> u64 {
    supply_schedule(params).last().map_or(0, |r| r.running_total)
}

/// Proof of work: the header hash, read big-endian, must not exceed the
/// target its bits encode, and that target must not exceed `max_target`.
pub fn check_pow(header: &BlockHeader, params: &ChainParams) -> bool {
    let Some(target) = CompactTarget(header.bits).checked_expand() else {
        return false;
    };
    if target.is_zero() || target > params.max_target {
        return false;
    }
    meets_target(&header.hash(), target)
}

/// `hash`, read as a big-endian integer, is at most `target`.
pub fn meets_target(hash: &Digest32, target: U256) -> bool {
    U256::from_big_endian(&hash.0) <= target
}

/// Scales `old_target` by `actual_timespan / expected`, with the ratio
/// clamped to `[1/clamp_factor, clamp_factor]` and the result capped at
/// `max_target`.
pub fn retarget(old_target: U256, actual_timespan: u64, params: &ChainParams) -> Result<U256, ConsensusError> {
    if actual_timespan == 0 {
        return Err(ConsensusError::ZeroTimespan);
    }
    let expected = params.expected_timespan();
    let clamp = params.clamp_factor;
    let old = U512::from(old_target);
    let scaled = if u128::from(actual_timespan) * u128::from(clamp) < u128::from(expected) {
        old / U512::from(clamp)
    } else if u128::from(actual_timespan) > u128::from(expected) * u128::from(clamp) {
        old * U512::from(clamp)
    } else {
        old * U512::from(actual_timespan) / U512::from(expected)
    };
    let max = U512::from(params.max_target);
    let capped = if scaled > max { max } else { scaled.max(U512::one()) };
    Ok(U256::try_from(capped).expect("capped at a 256-bit value"))
}

/// Expected number of hashes to meet `target`: `⌊2²⁵⁶ / (target + 1)⌋`.
pub fn chain_work(target: U256) -> Result<U256, ConsensusError> {
    if target.is_zero() {
        return Err(ConsensusError::ZeroTarget);
    }
    if target == U256::MAX {
        return Ok(U256::one());
    }
    Ok((!target / (target + 1)) + 1)
}

/// Bits required for the block at `child_height`.
///
/// `window_start_time` is the timestamp of the block at height
/// `child_height − retarget_interval − 1` (or genesis for the first window);
/// it is only consulted on retarget heights.
pub fn required_bits(params: &ChainParams, child_height: u64, parent: &BlockHeader, window_start_time: u64) -> u32 {
    if child_height == 0 || !child_height.is_multiple_of(params.retarget_interval) {
        return parent.bits;
    }
    let span = parent.time.saturating_sub(window_start_time).max(1);
    let target = retarget(CompactTarget(parent.bits).expand(), span, params).expect("span is positive");
    CompactTarget::from_target(target).0
}

/// Height of the block whose timestamp opens the window ending at `child_height − 1`.
pub fn window_start_height(params: &ChainParams, child_height: u64) -> u64 {
    child_height.saturating_sub(params.retarget_interval + 1)
}

/// Builds the next block on `state`'s tip: a coinbase paying
/// subsidy plus `fees` to `payout`, then `txs` in order, with a nonce
/// searched upward from zero. The time is clamped to the parent's.
pub fn mine_block(
    state: &ChainState,
    txs: Vec<Transaction>,
    fees: u64,
    payout: crate::script::Script,
    time: u64,
    tag: &[u8],
) -> Block {
    let height = state.height() + 1;
    let params = state.params();
    let reward = block_subsidy(height, params) + fees;
    let mut transactions = Vec::with_capacity(txs.len() + 1);
    transactions.push(Transaction::coinbase(height, tag, vec![TxOutput { amount: reward, script_pubkey: payout }]));
    transactions.extend(txs);
    let bits = state.next_bits();
    let target = CompactTarget(bits).expand();
    let mut header = BlockHeader {
        version: 1,
        prev_hash: state.tip(),
        tx_commitment: tx_commitment(&transactions).expect("coinbase present"),
        time: time.max(state.tip_header().time),
        bits,
        nonce: 0,
    };
    while !meets_target(&header.hash(), target) {
        header.nonce += 1;
    }
    Block { header, transactions }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConsensusError {
    #[error("proof of work does not meet the target")]
    BadPow,
    #[error("difficulty bits {found:#010x} differ from required {required:#010x}")]
    BadBits { found: u32, required: u32 },
    #[error("previous-block hash does not link to the tip")]
    BadLink,
    #[error("transaction commitment mismatch")]
    BadCommitment,
    #[error("block time outside the allowed window")]
    BadTime,
    #[error("outpoint {0:?} spent twice")]
    DoubleSpend(OutPoint),
    #[error("outpoint {0:?} is not in the unspent set")]
    MissingUtxo(OutPoint),
    #[error("coinbase output {0:?} is not yet mature")]
    ImmatureCoinbase(OutPoint),
    #[error("script rejected input {input} of transaction {tx}: {reason}")]
    ScriptReject { tx: usize, input: usize, reason: ScriptFailure },
    #[error("transaction {0} is not final at the block time")]
    NonFinal(Digest32),
    #[error("coinbase claims {claimed}, allowed {allowed}")]
    BadSubsidy { claimed: u64, allowed: u64 },
    #[error("amount out of range or outputs exceed inputs")]
    ValueOverflow,
    #[error("bad coinbase: {0}")]
    BadCoinbase(&'static str),
    #[error("malformed transaction: {0}")]
    BadTransaction(&'static str),
    #[error("retarget timespan must be positive")]
    ZeroTimespan,
    #[error("target must be positive")]
    ZeroTarget,
    #[error("cannot disconnect the genesis block")]
    AtGenesis,
    #[error("no undo record for the tip")]
    MissingUndo,
    #[error("block descends from an invalid block")]
    InvalidAncestor,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct UtxoEntry {
    pub output: TxOutput,
    pub height: u64,
    pub is_coinbase: bool,
}

#[derive(Clone, PartialEq, Eq, Debug)]
enum UndoOp {
    Spent(OutPoint, UtxoEntry),
    Created(OutPoint),
}

/// Everything needed to reverse one connected block.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct BlockUndo {
    ops: Vec<UndoOp>,
}

pub type UtxoSet = BTreeMap<OutPoint, UtxoEntry>;

/// Validated state of the active chain.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChainState {
    params: ChainParams,
    utxos: UtxoSet,
    headers: Vec<BlockHeader>,
    hashes: Vec<Digest32>,
    work: Vec<U256>,
    undo: Vec<BlockUndo>,
}

impl ChainState {
    /// State holding only `genesis`, whose outputs enter the unspent set.
    pub fn new(params: ChainParams, genesis: &Block) -> Self {
        let mut utxos = UtxoSet::new();
        for tx in &genesis.transactions {
            let txid = tx.txid();
            for (i, out) in tx.outputs.iter().enumerate() {
                utxos.insert(
                    OutPoint::new(txid, i as u32),
                    UtxoEntry { output: out.clone(), height: 0, is_coinbase: tx.is_coinbase() },
                );
            }
        }
        let work = chain_work(CompactTarget(genesis.header.bits).expand()).unwrap_or_default();
        ChainState {
            params,
            utxos,
            headers: vec![genesis.header],
            hashes: vec![genesis.hash()],
            work: vec![work],
            undo: Vec::new(),
        }
    }

    pub fn params(&self) -> &ChainParams {
        &self.params
    }

    pub fn height(&self) -> u64 {
        (self.headers.len() - 1) as u64
    }

    pub fn tip(&self) -> Digest32 {
        *self.hashes.last().unwrap()
    }

    pub fn tip_header(&self) -> &BlockHeader {
        self.headers.last().unwrap()
    }

    pub fn genesis_hash(&self) -> Digest32 {
        self.hashes[0]
    }

    pub fn cumulative_work(&self) -> U256 {
        *self.work.last().unwrap()
    }

    pub fn utxos(&self) -> &UtxoSet {
        &self.utxos
    }

    pub fn utxo(&self, outpoint: &OutPoint) -> Option<&UtxoEntry> {
        self.utxos.get(outpoint)
    }

    pub fn hash_at(&self, height: u64) -> Option<Digest32> {
        self.hashes.get(height as usize).copied()
    }

    pub fn header_at(&self, height: u64) -> Option<&BlockHeader> {
        self.headers.get(height as usize)
    }

    pub fn active_hashes(&self) -> &[Digest32] {
        &self.hashes
    }

    pub fn contains_active(&self, hash: &Digest32, height: u64) -> bool {
        self.hash_at(height) == Some(*hash)
    }

    /// Bits the next block must carry.
    pub fn next_bits(&self) -> u32 {
        let child = self.height() + 1;
        let start = window_start_height(&self.params, child);
        required_bits(&self.params, child, self.tip_header(), self.headers[start as usize].time)
    }

    pub fn unspent_total(&self) -> u64 {
        self.utxos.values().map(|e| e.output.amount).sum()
    }

    /// Digest over the canonical encoding of the unspent set.
    pub fn utxo_digest(&self) -> Digest32 {
        let mut buf = Vec::with_capacity(self.utxos.len() * 80);
        for (op, entry) in &self.utxos {
            buf.extend_from_slice(&op.txid.0);
            buf.extend_from_slice(&op.index.to_le_bytes());
            buf.extend_from_slice(&entry.output.amount.to_le_bytes());
            buf.extend_from_slice(&(entry.output.script_pubkey.len() as u32).to_le_bytes());
            buf.extend_from_slice(entry.output.script_pubkey.as_bytes());
            buf.extend_from_slice(&entry.height.to_le_bytes());
            buf.push(entry.is_coinbase as u8);
        }
        hash256(&buf)
    }

    /// Digest over tip, height, cumulative work and the unspent set.
    pub fn state_digest(&self) -> Digest32 {
        let mut buf = Vec::new();
        buf.extend_from_slice(&self.tip().0);
        buf.extend_from_slice(&self.height().to_le_bytes());
        let mut work = [0u8; 32];
        self.cumulative_work().to_big_endian(&mut work);
        buf.extend_from_slice(&work);
        buf.extend_from_slice(&self.utxo_digest().0);
        hash256(&buf)
    }

    /// Checks a non-coinbase transaction's inputs against the current unspent
    /// set as if it were included at `height` with block time `time`.
    /// Returns the fee.
    pub fn check_tx_inputs(&self, tx: &Transaction, height: u64, time: u64) -> Result<u64, ConsensusError> {
        check_structure(tx)?;
        if tx.is_coinbase() {
            return Err(ConsensusError::BadCoinbase("coinbase outside first position"));
        }
        if !is_final(tx, time) {
            return Err(ConsensusError::NonFinal(tx.txid()));
        }
        let mut seen = HashSet::new();
        let mut total_in: u64 = 0;
        for (i, input) in tx.inputs.iter().enumerate() {
            if !seen.insert(input.prevout) {
                return Err(ConsensusError::DoubleSpend(input.prevout));
            }
            let entry = self.utxos.get(&input.prevout).ok_or(ConsensusError::MissingUtxo(input.prevout))?;
            if entry.is_coinbase && height < entry.height + self.params.coinbase_maturity {
                return Err(ConsensusError::ImmatureCoinbase(input.prevout));
            }
            let ctx = ExecContext::new(tx, i).expect("index in range");
            eval(&input.script_sig, &entry.output.script_pubkey, &ctx)
                .map_err(|reason| ConsensusError::ScriptReject { tx: 0, input: i, reason })?;
            total_in = total_in.checked_add(entry.output.amount).ok_or(ConsensusError::ValueOverflow)?;
        }
        let total_out = tx.output_total().ok_or(ConsensusError::ValueOverflow)?;
        if total_in > MAX_MONEY || total_out > total_in {
            return Err(ConsensusError::ValueOverflow);
        }
        Ok(total_in - total_out)
    }

    /// Validates `block` as the child of the current tip and applies it.
    /// On any error the state is unchanged.
    pub fn validate_and_connect(&mut self, block: &Block, now: u64) -> Result<(), ConsensusError> {
        let header = &block.header;
        if header.prev_hash != self.tip() {
            return Err(ConsensusError::BadLink);
        }
        let required = self.next_bits();
        if header.bits != required {
            return Err(ConsensusError::BadBits { found: header.bits, required });
        }
        if !check_pow(header, &self.params) {
            return Err(ConsensusError::BadPow);
        }
        let commitment = tx_commitment(&block.transactions).map_err(|_| ConsensusError::BadCoinbase("empty block"))?;
        if commitment != header.tx_commitment {
            return Err(ConsensusError::BadCommitment);
        }
        if header.time < self.tip_header().time || header.time > now.saturating_add(MAX_FUTURE_BLOCK_TIME) {
            return Err(ConsensusError::BadTime);
        }
        let height = self.height() + 1;
        check_coinbase_shape(block, height)?;

        let mut undo = BlockUndo::default();
        match self.apply_body(block, height, &mut undo) {
            Ok(()) => {
                let work = chain_work(CompactTarget(header.bits).expand())?;
                self.headers.push(*header);
                self.hashes.push(block.hash());
                self.work.push(self.cumulative_work() + work);
                self.undo.push(undo);
                Ok(())
            }
            Err(e) => {
                self.revert(undo);
                Err(e)
            }
        }
    }

    fn apply_body(&mut self, block: &Block, height: u64, undo: &mut BlockUndo) -> Result<(), ConsensusError> {
        let time = block.header.time;
        let mut spent_here: HashSet<OutPoint> = HashSet::new();
        let mut fees: u64 = 0;
        for (tx_index, tx) in block.transactions.iter().enumerate().skip(1) {
            for input in &tx.inputs {
                if spent_here.contains(&input.prevout) {
                    return Err(ConsensusError::DoubleSpend(input.prevout));
                }
            }
            let fee = self.check_tx_inputs(tx, height, time).map_err(|e| match e {
                ConsensusError::ScriptReject { input, reason, .. } => {
                    ConsensusError::ScriptReject { tx: tx_index, input, reason }
                }
                other => other,
            })?;
            fees = fees.checked_add(fee).ok_or(ConsensusError::ValueOverflow)?;
            for input in &tx.inputs {
                spent_here.insert(input.prevout);
                let entry = self.utxos.remove(&input.prevout).expect("checked above");
                undo.ops.push(UndoOp::Spent(input.prevout, entry));
            }
            self.create_outputs(tx, height, undo)?;
        }

        let coinbase = &block.transactions[0];
        let claimed = coinbase.output_total().ok_or(ConsensusError::ValueOverflow)?;
        let allowed = block_subsidy(height, &self.params).saturating_add(fees);
        if claimed > allowed {
            return Err(ConsensusError::BadSubsidy { claimed, allowed });
        }
        self.create_outputs(coinbase, height, undo)
    }

    fn create_outputs(&mut self, tx: &Transaction, height: u64, undo: &mut BlockUndo) -> Result<(), ConsensusError> {
        let txid = tx.txid();
        for (i, out) in tx.outputs.iter().enumerate() {
            if out.amount > MAX_MONEY {
                return Err(ConsensusError::ValueOverflow);
            }
            let op = OutPoint::new(txid, i as u32);
            if self.utxos.contains_key(&op) {
                return Err(ConsensusError::BadTransaction("output already exists"));
            }
            self.utxos.insert(op, UtxoEntry { output: out.clone(), height, is_coinbase: tx.is_coinbase() });
            undo.ops.push(UndoOp::Created(op));
        }
        Ok(())
    }

    fn revert(&mut self, undo: BlockUndo) {
        for op in undo.ops.into_iter().rev() {
            match op {
                UndoOp::Created(op) => {
                    self.utxos.remove(&op);
                }
                UndoOp::Spent(op, entry) => {
                    self.utxos.insert(op, entry);
                }
            }
        }
    }

    /// Exact inverse of the last `validate_and_connect`.
    pub fn disconnect_tip(&mut self) -> Result<(), ConsensusError> {
        if self.height() == 0 {
            return Err(ConsensusError::AtGenesis);
        }
        let undo = self.undo.pop().ok_or(ConsensusError::MissingUndo)?;
        self.revert(undo);
        self.headers.pop();
        self.hashes.pop();
        self.work.pop();
        Ok(())
    }
}

fn check_structure(tx: &Transaction) -> Result<(), ConsensusError> {
    if tx.inputs.is_empty() {
        return Err(ConsensusError::BadTransaction("no inputs"));
    }
    if tx.outputs.is_empty() {
        return Err(ConsensusError::BadTransaction("no outputs"));
    }
    if !tx.is_coinbase() && tx.inputs.iter().any(|i| i.prevout.is_coinbase_marker()) {
        return Err(ConsensusError::BadTransaction("coinbase marker in a regular input"));
    }
    Ok(())
}

fn check_coinbase_shape(block: &Block, height: u64) -> Result<(), ConsensusError> {
    let coinbase = &block.transactions[0];
    if !coinbase.is_coinbase() {
        return Err(ConsensusError::BadCoinbase("first transaction is not a coinbase"));
    }
    check_structure(coinbase)?;
    if block.transactions[1..].iter().any(Transaction::is_coinbase) {
        return Err(ConsensusError::BadCoinbase("more than one coinbase"));
    }
    let pushes = coinbase.inputs[0]
        .script_sig
        .pushes()
        .map_err(|_| ConsensusError::BadCoinbase("coinbase script is not push-only"))?;
    if pushes.first().map(Vec::as_slice) != Some(&height.to_le_bytes()[..]) {
        return Err(ConsensusError::BadCoinbase("coinbase does not commit to its height"));
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Validity {
    /// Connected at least once, or currently on the active chain.
    Valid,
    /// Header checks passed; body not yet validated.
    Unchecked,
    Invalid,
}

#[derive(Clone, Debug)]
struct BlockRecord {
    block: Block,
    height: u64,
    work: U256,
    validity: Validity,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AcceptStatus {
    /// The block extended the active tip.
    Extended,
    /// The block completed a heavier branch and the active chain switched to it.
    Reorged,
    /// Stored on a branch with no more work than the active chain.
    SideBranch,
    /// Parent unknown; held until it arrives.
    Orphan,
    Duplicate,
}

/// Result of [`Chain::accept_block`], including the effect of any orphans
/// that became connectable.
#[derive(Clone, Debug)]
pub struct AcceptOutcome {
    pub status: AcceptStatus,
    /// Blocks removed from the active chain, tip first.
    pub disconnected: Vec<Block>,
    /// Blocks added to the active chain, in connection order.
    pub connected: Vec<Block>,
}

impl AcceptOutcome {
    fn new(status: AcceptStatus) -> Self {
        AcceptOutcome { status, disconnected: Vec::new(), connected: Vec::new() }
    }
}

/// Block forest plus the validated active chain.
#[derive(Clone, Debug)]
pub struct Chain {
    state: ChainState,
    records: HashMap<Digest32, BlockRecord>,
    orphans: HashMap<Digest32, Block>,
    orphan_order: VecDeque<Digest32>,
}

impl Chain {
    pub fn new(params: ChainParams, genesis: Block) -> Self {
        let state = ChainState::new(params, &genesis);
        let hash = genesis.hash();
        let work = state.cumulative_work();
        let mut records = HashMap::new();
        records.insert(hash, BlockRecord { block: genesis, height: 0, work, validity: Validity::Valid });
        Chain { state, records, orphans: HashMap::new(), orphan_order: VecDeque::new() }
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn params(&self) -> &ChainParams {
        self.state.params()
    }

    pub fn tip(&self) -> Digest32 {
        self.state.tip()
    }

    pub fn height(&self) -> u64 {
        self.state.height()
    }

    pub fn block(&self, hash: &Digest32) -> Option<&Block> {
        self.records.get(hash).map(|r| &r.block)
    }

    pub fn block_height(&self, hash: &Digest32) -> Option<u64> {
        self.records.get(hash).map(|r| r.height)
    }

    pub fn knows(&self, hash: &Digest32) -> bool {
        self.records.contains_key(hash) || self.orphans.contains_key(hash)
    }

    pub fn orphan_count(&self) -> usize {
        self.orphans.len()
    }

    pub fn block_count(&self) -> usize {
        self.records.len()
    }

    /// Active-chain blocks from genesis to tip.
    pub fn active_blocks(&self) -> impl Iterator<Item = &Block> + '_ {
        self.state.active_hashes().iter().map(move |h| &self.records[h].block)
    }

    fn ancestor(&self, mut hash: Digest32, height: u64) -> &BlockRecord {
        loop {
            let rec = &self.records[&hash];
            if rec.height == height {
                return rec;
            }
            hash = rec.block.header.prev_hash;
        }
    }

    /// Context checks that need only the parent branch: bits, proof of work,
    /// commitment and timestamp bounds.
    fn check_header(&self, block: &Block, parent: &BlockRecord, now: u64) -> Result<(), ConsensusError> {
        let header = &block.header;
        let params = self.state.params();
        let height = parent.height + 1;
        let start = self.ancestor(parent.block.hash(), window_start_height(params, height));
        let required = required_bits(params, height, &parent.block.header, start.block.header.time);
        if header.bits != required {
            return Err(ConsensusError::BadBits { found: header.bits, required });
        }
        if !check_pow(header, params) {
            return Err(ConsensusError::BadPow);
        }
        let commitment = tx_commitment(&block.transactions).map_err(|_| ConsensusError::BadCoinbase("empty block"))?;
        if commitment != header.tx_commitment {
            return Err(ConsensusError::BadCommitment);
        }
        if header.time < parent.block.header.time || header.time > now.saturating_add(MAX_FUTURE_BLOCK_TIME) {
            return Err(ConsensusError::BadTime);
        }
        Ok(())
    }

    /// Adds `block` to the forest and keeps the active chain on the branch
    /// with the most cumulative work; equal work keeps the first-seen tip.
    pub fn accept_block(&mut self, block: Block, now: u64) -> Result<AcceptOutcome, ConsensusError> {
        let hash = block.hash();
        if self.knows(&hash) {
            return Ok(AcceptOutcome::new(AcceptStatus::Duplicate));
        }
        if !self.records.contains_key(&block.header.prev_hash) {
            if self.orphans.len() >= MAX_ORPHANS {
                if let Some(old) = self.orphan_order.pop_front() {
                    self.orphans.remove(&old);
                }
            }
            self.orphan_order.push_back(hash);
            self.orphans.insert(hash, block);
            return Ok(AcceptOutcome::new(AcceptStatus::Orphan));
        }

        let mut outcome = self.accept_connected(block, now)?;

        // Orphans waiting on anything just added.
        let mut frontier = vec![hash];
        while let Some(parent) = frontier.pop() {
            let children: Vec<Digest32> = self
                .orphan_order
                .iter()
                .filter(|h| self.orphans.get(*h).is_some_and(|b| b.header.prev_hash == parent))
                .copied()
                .collect();
            for child in children {
                self.orphan_order.retain(|h| *h != child);
                let Some(orphan) = self.orphans.remove(&child) else { continue };
                if let Ok(sub) = self.accept_connected(orphan, now) {
                    frontier.push(child);
                    if !sub.disconnected.is_empty() || !sub.connected.is_empty() {
                        merge_outcome(&mut outcome, sub);
                    }
                }
            }
        }
        Ok(outcome)
    }

    fn accept_connected(&mut self, block: Block, now: u64) -> Result<AcceptOutcome, ConsensusError> {
        let hash = block.hash();
        let parent = &self.records[&block.header.prev_hash];
        if parent.validity == Validity::Invalid {
            return Err(ConsensusError::InvalidAncestor);
        }
        self.check_header(&block, parent, now)?;
        let height = parent.height + 1;
        let work = parent.work + chain_work(CompactTarget(block.header.bits).expand())?;

        if block.header.prev_hash == self.state.tip() {
            self.state.validate_and_connect(&block, now)?;
            self.records.insert(hash, BlockRecord { block: block.clone(), height, work, validity: Validity::Valid });
            let mut out = AcceptOutcome::new(AcceptStatus::Extended);
            out.connected.push(block);
            return Ok(out);
        }

        self.records.insert(hash, BlockRecord { block, height, work, validity: Validity::Unchecked });
        if work <= self.state.cumulative_work() {
            return Ok(AcceptOutcome::new(AcceptStatus::SideBranch));
        }
        match self.reorganize(hash, now) {
            Ok(outcome) => Ok(outcome),
            Err((bad, e)) => {
                if bad == hash {
                    self.records.remove(&hash);
                }
                Err(e)
            }
        }
    }

    /// Switches the active chain to end at `new_tip`. On failure the
    /// original chain is restored and the offending block is marked invalid.
    fn reorganize(&mut self, new_tip: Digest32, now: u64) -> Result<AcceptOutcome, (Digest32, ConsensusError)> {
        let mut path = Vec::new();
        let mut cursor = new_tip;
        loop {
            let rec = &self.records[&cursor];
            if self.state.contains_active(&cursor, rec.height) {
                break;
            }
            path.push(cursor);
            cursor = rec.block.header.prev_hash;
        }
        path.reverse();
        let fork_height = self.records[&cursor].height;

        let mut disconnected = Vec::new();
        while self.state.height() > fork_height {
            let tip = self.state.tip();
            self.state.disconnect_tip().expect("active blocks above the fork have undo records");
            disconnected.push(self.records[&tip].block.clone());
        }

        let mut connected = Vec::new();
        for (i, hash) in path.iter().enumerate() {
            let block = self.records[hash].block.clone();
            if let Err(e) = self.state.validate_and_connect(&block, now) {
                for bad in &path[i..] {
                    if let Some(rec) = self.records.get_mut(bad) {
                        rec.validity = Validity::Invalid;
                    }
                }
                for _ in 0..connected.len() {
                    self.state.disconnect_tip().expect("just connected");
                }
                for old in disconnected.iter().rev() {
                    self.state.validate_and_connect(old, now).expect("previously valid block reconnects");
                }
                return Err((*hash, e));
            }
            self.records.get_mut(hash).unwrap().validity = Validity::Valid;
            connected.push(block);
        }
        Ok(AcceptOutcome { status: AcceptStatus::Reorged, disconnected, connected })
    }
}

fn merge_outcome(into: &mut AcceptOutcome, sub: AcceptOutcome) {
    if sub.status == AcceptStatus::Reorged || into.status == AcceptStatus::Reorged {
        into.status = AcceptStatus::Reorged;
    } else if matches!(into.status, AcceptStatus::Orphan | AcceptStatus::SideBranch | AcceptStatus::Duplicate) {
        into.status = sub.status;
    }
    // A later reorg may disconnect blocks the earlier step connected.
    for block in sub.disconnected {
        if let Some(pos) = into.connected.iter().position(|b| b.hash() == block.hash()) {
            into.connected.remove(pos);
        } else {
            into.disconnected.push(block);
        }
    }
    into.connected.extend(sub.connected);
}
