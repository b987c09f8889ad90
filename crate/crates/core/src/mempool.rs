//! Pool of valid, final, mutually non-conflicting unconfirmed transactions.
//!
//! Conflicts resolve first-seen: a transaction spending an outpoint already
//! claimed by a pooled transaction is refused. A connected block evicts both
//! the transactions it confirms and any that conflict with it.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::consensus::{ChainState, ConsensusError};
use crate::crypto::Digest32;
use crate::model::{Block, OutPoint, Transaction};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MempoolError {
    #[error("transaction already in the pool")]
    Duplicate,
    #[error("transaction conflicts with pooled transaction {0}")]
    Conflict(Digest32),
    #[error("coinbase transactions are never pooled")]
    Coinbase,
    #[error(transparent)]
    Invalid(#[from] ConsensusError),
}

#[derive(Clone, Debug)]
pub struct PoolEntry {
    pub tx: Transaction,
    pub fee: u64,
    pub seq: u64,
}

#[derive(Clone, Debug, Default)]
pub struct Mempool {
    by_seq: BTreeMap<u64, Digest32>,
    entries: HashMap<Digest32, PoolEntry>,
    spends: HashMap<OutPoint, Digest32>,
    next_seq: u64,
}

impl Mempool {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, txid: &Digest32) -> bool {
        self.entries.contains_key(txid)
    }

    pub fn get(&self, txid: &Digest32) -> Option<&Transaction> {
        self.entries.get(txid).map(|e| &e.tx)
    }

    pub fn spender_of(&self, outpoint: &OutPoint) -> Option<Digest32> {
        self.spends.get(outpoint).copied()
    }

    /// Admits `tx` if it spends only confirmed outputs, is final at `now`,
    /// and conflicts with nothing already pooled. Returns the fee.
    pub fn add(&mut self, tx: Transaction, state: &ChainState, now: u64) -> Result<u64, MempoolError> {
        if tx.is_coinbase() {
            return Err(MempoolError::Coinbase);
        }
        let txid = tx.txid();
        if self.entries.contains_key(&txid) {
            return Err(MempoolError::Duplicate);
        }
        if let Some(other) = tx.inputs.iter().find_map(|i| self.spends.get(&i.prevout)) {
            return Err(MempoolError::Conflict(*other));
        }
        let fee = state.check_tx_inputs(&tx, state.height() + 1, now)?;
        for input in &tx.inputs {
            self.spends.insert(input.prevout, txid);
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.by_seq.insert(seq, txid);
        self.entries.insert(txid, PoolEntry { tx, fee, seq });
        Ok(fee)
    }

    pub fn remove(&mut self, txid: &Digest32) -> Option<PoolEntry> {
        let entry = self.entries.remove(txid)?;
        self.by_seq.remove(&entry.seq);
        for input in &entry.tx.inputs {
            self.spends.remove(&input.prevout);
        }
        Some(entry)
    }

    /// Evicts transactions confirmed by `block` and those conflicting with it.
    pub fn remove_for_block(&mut self, block: &Block) -> Vec<Digest32> {
        let mut evicted = Vec::new();
        for tx in block.transactions.iter().skip(1) {
            let txid = tx.txid();
            if self.remove(&txid).is_some() {
                evicted.push(txid);
            }
            for input in &tx.inputs {
                if let Some(loser) = self.spends.get(&input.prevout).copied() {
                    self.remove(&loser);
                    evicted.push(loser);
                }
            }
        }
        evicted
    }

    /// Rebuilds the pool after a reorganisation: transactions from the
    /// disconnected blocks come back as candidates, and every entry is
    /// re-checked against the new active chain, oldest first.
    pub fn reorganize(&mut self, disconnected: &[Block], state: &ChainState, now: u64) {
        let mut candidates: Vec<Transaction> = Vec::new();
        for block in disconnected.iter().rev() {
            candidates.extend(block.transactions.iter().skip(1).cloned());
        }
        let pooled: Vec<Transaction> = self.by_seq.values().map(|id| self.entries[id].tx.clone()).collect();
        candidates.extend(pooled);
        *self = Mempool { next_seq: self.next_seq, ..Mempool::default() };
        for tx in candidates {
            let _ = self.add(tx, state, now);
        }
    }

    /// Pooled transactions, oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &PoolEntry> + '_ {
        self.by_seq.values().map(move |id| &self.entries[id])
    }
}
