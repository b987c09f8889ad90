//! Deterministic discrete-event simulation of a gossiping network of full
//! nodes and miners.
//!
//! Time is kept in integer milliseconds; block headers carry whole seconds.
//! Events run in `(time, insertion sequence)` order. Each miner draws from
//! its own ChaCha8 stream, so the mining luck of one participant does not
//! depend on what the others do.

mod config;
mod report;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::sync::Arc;

use primitive_types::U256;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{apply_param_override, Adversary, ConfigError, RateChange, ScenarioConfig, Topology};
pub use report::{
    sweep_summary, AdversaryOutcome, AttackReport, NodeReport, RetargetRecord, SimReport, TxRecord, WithholdReport,
};

use crate::consensus::{cumulative_supply, mine_block, AcceptStatus, Chain, CompactTarget};
use crate::crypto::Digest32;
use crate::mempool::Mempool;
use crate::model::{make_genesis, Block, OutPoint, Transaction};
use crate::script::{make_p2pkh, Script};
use crate::wallet::{build_payment, sign_all, Wallet};
use crate::COIN;

/// Transactions a mined block takes from the mempool at most.
pub const MAX_BLOCK_TXS: usize = 1000;
/// Ticks the settle phase may spend mining before giving up on convergence.
pub const MAX_SETTLE_TICKS: u64 = 100_000;
const TX_STREAM: u64 = 1 << 32;

/// Probability that one tick of `tick_ms` at `rate` attempts per second
/// finds a block against `target`: `rate × tick × (target + 1) / 2²⁵⁶`, capped at 1.
pub fn tick_probability(rate: f64, tick_ms: u64, target: U256) -> f64 {
    let mut fraction = 0.0f64;
    let mut scale = 1.0 / 18_446_744_073_709_551_616.0; // 2⁻⁶⁴
    for limb in target.0.iter().rev() {
        fraction += *limb as f64 * scale;
        scale /= 18_446_744_073_709_551_616.0;
    }
    (rate * (tick_ms as f64 / 1000.0) * fraction).min(1.0)
}

#[derive(Clone, Debug)]
enum Payload {
    Tick,
    Block(Arc<Block>),
    Tx(Arc<Transaction>),
    TxGen,
}

#[derive(Clone, Debug)]
struct Event {
    at: u64,
    seq: u64,
    node: usize,
    from: Option<usize>,
    payload: Payload,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        (self.at, self.seq) == (other.at, other.seq)
    }
}
impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    // BinaryHeap is a max-heap; reverse so the earliest event pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.at, other.seq).cmp(&(self.at, self.seq))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Role {
    Honest,
    DoubleSpender,
    Withholder,
}

struct Node {
    id: usize,
    role: Role,
    chain: Chain,
    mempool: Mempool,
    known: HashSet<Digest32>,
    seen_at: HashMap<Digest32, u64>,
    peers: Vec<usize>,
    wallet: Wallet,
    payout: Script,
    rate: f64,
    rng: ChaCha8Rng,
}

struct AttackState {
    confirmations: u64,
    give_up: u64,
    fork_height: u64,
    payment: Transaction,
    conflict: Transaction,
    accepted_ms: Option<u64>,
    released_ms: Option<u64>,
    gave_up: bool,
    private_blocks: u64,
    public_at_release: Option<u64>,
}

struct WithholdState {
    lead: u64,
    withheld: Vec<Block>,
    mined: u64,
    released: u64,
}

pub struct Simulation {
    cfg: ScenarioConfig,
    nodes: Vec<Node>,
    honest: usize,
    queue: BinaryHeap<Event>,
    seq: u64,
    now: u64,
    tick_ms: u64,
    start_ms: u64,
    end_ms: u64,
    mining: bool,
    halted: bool,
    settle_ticks: u64,
    settle_capped: bool,
    designated: usize,
    bootstrap_height: u64,
    found_ms: HashMap<Digest32, u64>,
    mined: Vec<Digest32>,
    last_block_ms: u64,
    inflight_blocks: usize,
    converged_at: Option<u64>,
    best_honest_height: u64,
    workload_rng: ChaCha8Rng,
    tx_interval_ms: u64,
    txs: Vec<TxRecord>,
    tx_index: HashMap<Digest32, usize>,
    attack: Option<AttackState>,
    withhold: Option<WithholdState>,
}

impl Simulation {
    /// Builds genesis, the optional bootstrap pre-chain and every node, and
    /// schedules the first ticks. Nothing runs until [`Simulation::run`] or [`Simulation::step`].
    pub fn new(cfg: ScenarioConfig) -> Result<Simulation, ConfigError> {
        cfg.validate()?;
        let params = cfg.params.clone();
        let genesis =
            make_genesis(&params, &cfg.genesis_message, 0).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let honest = cfg.nodes;
        let role = match cfg.adversary {
            Adversary::None => None,
            Adversary::DoubleSpend { .. } => Some(Role::DoubleSpender),
            Adversary::Withhold { .. } => Some(Role::Withholder),
        };
        let total = honest + role.is_some() as usize;

        let mut wallets = Vec::with_capacity(total);
        for id in 0..total {
            let mut w = Wallet::new();
            let seed = format!("sim:{}:node:{id}", cfg.seed);
            w.add_key("main", seed.as_bytes()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
            if id == honest {
                w.add_key("stash", format!("{seed}:stash").as_bytes())
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
            wallets.push(w);
        }
        let payouts: Vec<Script> =
            wallets.iter().map(|w| make_p2pkh(&w.key("main").expect("main key").public_key().hash())).collect();

        let spacing = params.target_spacing;
        let mut template = Chain::new(params.clone(), genesis);
        let mut found_ms = HashMap::new();
        found_ms.insert(template.tip(), 0);
        let bootstrap_height = if cfg.bootstrap { params.coinbase_maturity + total as u64 } else { 0 };
        for h in 1..=bootstrap_height {
            let time = h * spacing;
            let payout = payouts[((h - 1) % total as u64) as usize].clone();
            let block = mine_block(template.state(), Vec::new(), 0, payout, time, b"bootstrap");
            found_ms.insert(block.hash(), time * 1000);
            template.accept_block(block, time).map_err(|e| ConfigError::Invalid(format!("bootstrap: {e}")))?;
        }
        let start_ms = bootstrap_height * spacing * 1000;
        let known: HashSet<Digest32> = template.active_blocks().map(Block::hash).collect();

        let mut nodes = Vec::with_capacity(total);
        for (id, wallet) in wallets.into_iter().enumerate() {
            let (role, rate, peers) = if id < honest {
                let mut peers = cfg.topology.peers(id, honest);
                if id == 0 && role == Some(Role::Withholder) {
                    peers.push(honest);
                }
                (Role::Honest, cfg.hash_rates[id], peers)
            } else {
                (role.expect("attacker slot"), cfg.adversary.attacker_rate().unwrap_or(0.0), (0..honest).collect())
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(id as u64);
            nodes.push(Node {
                id,
                role,
                chain: template.clone(),
                mempool: Mempool::new(),
                known: known.clone(),
                seen_at: known.iter().map(|h| (*h, 0)).collect(),
                peers,
                wallet,
                payout: payouts[id].clone(),
                rate,
                rng,
            });
        }

        let designated = (0..honest)
            .max_by(|&a, &b| cfg.hash_rates[a].total_cmp(&cfg.hash_rates[b]).then(b.cmp(&a)))
            .expect("at least one node");
        let mut workload_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        workload_rng.set_stream(TX_STREAM);
        let tx_interval_ms = if cfg.tx_rate > 0.0 { ((1000.0 / cfg.tx_rate).round() as u64).max(1) } else { 0 };

        let mut sim = Simulation {
            tick_ms: spacing * 100,
            end_ms: start_ms + cfg.duration_s * 1000,
            cfg,
            nodes,
            honest,
            queue: BinaryHeap::new(),
            seq: 0,
            now: start_ms,
            start_ms,
            mining: true,
            halted: false,
            settle_ticks: 0,
            settle_capped: false,
            designated,
            bootstrap_height,
            found_ms,
            mined: Vec::new(),
            last_block_ms: start_ms,
            inflight_blocks: 0,
            converged_at: Some(start_ms),
            best_honest_height: bootstrap_height,
            workload_rng,
            tx_interval_ms,
            txs: Vec::new(),
            tx_index: HashMap::new(),
            attack: None,
            withhold: None,
        };
        for id in 0..total {
            if sim.nodes[id].rate > 0.0 {
                sim.schedule(start_ms + sim.tick_ms, id, None, Payload::Tick);
            }
        }
        if tx_interval_ms > 0 {
            sim.schedule(start_ms + tx_interval_ms, 0, None, Payload::TxGen);
        }
        match sim.cfg.adversary {
            Adversary::DoubleSpend { confirmations, give_up, .. } => sim.start_double_spend(confirmations, give_up)?,
            Adversary::Withhold { lead, .. } => {
                sim.withhold = Some(WithholdState { lead, withheld: Vec::new(), mined: 0, released: 0 })
            }
            Adversary::None => {}
        }
        Ok(sim)
    }

    fn start_double_spend(&mut self, confirmations: u64, give_up: u64) -> Result<(), ConfigError> {
        let attacker = self.honest;
        let fee = self.cfg.fee;
        let merchant = self.nodes[0].wallet.address("main").expect("merchant key");
        let node = &self.nodes[attacker];
        let state = node.chain.state();
        let coin = node
            .wallet
            .spendable(state, &HashSet::new())
            .into_iter()
            .max_by(|a, b| a.entry.output.amount.cmp(&b.entry.output.amount).then(b.outpoint.cmp(&a.outpoint)))
            .ok_or_else(|| ConfigError::Invalid("attacker has no mature funds".into()))?;
        let amount = coin
            .entry
            .output
            .amount
            .checked_sub(fee)
            .filter(|a| *a > 0)
            .ok_or_else(|| ConfigError::Invalid("fee exceeds the attacker's coin".into()))?;
        let invalid = |e: crate::wallet::WalletError| ConfigError::Invalid(e.to_string());
        let payment = build_payment(&node.wallet, state, &merchant, amount, fee, &HashSet::new()).map_err(invalid)?;
        let payment = sign_all(&node.wallet, &payment, state).map_err(invalid)?;
        let stash = node.wallet.address("stash").expect("stash key");
        let mut conflict = build_payment(&node.wallet, state, &stash, amount, fee, &HashSet::new()).map_err(invalid)?;
        conflict.inputs = payment
            .inputs
            .iter()
            .map(|i| crate::model::TxInput { prevout: i.prevout, script_sig: Script::default() })
            .collect();
        let conflict = sign_all(&node.wallet, &conflict, state).map_err(invalid)?;

        let now = self.now / 1000;
        let node = &mut self.nodes[attacker];
        node.mempool.add(conflict.clone(), node.chain.state(), now).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        node.known.insert(conflict.txid());
        let at = self.now + self.cfg.latency_ms;
        self.schedule(at, 0, Some(attacker), Payload::Tx(Arc::new(payment.clone())));
        self.attack = Some(AttackState {
            confirmations,
            give_up,
            fork_height: self.bootstrap_height,
            payment,
            conflict,
            accepted_ms: None,
            released_ms: None,
            gave_up: false,
            private_blocks: 0,
            public_at_release: None,
        });
        Ok(())
    }

    fn schedule(&mut self, at: u64, node: usize, from: Option<usize>, payload: Payload) {
        if matches!(payload, Payload::Block(_)) {
            self.inflight_blocks += 1;
        }
        self.queue.push(Event { at, seq: self.seq, node, from, payload });
        self.seq += 1;
    }

    /// Current simulated time in milliseconds.
    pub fn now_ms(&self) -> u64 {
        self.now
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    /// Active tip hash and height of `node`.
    pub fn tip(&self, node: usize) -> (Digest32, u64) {
        let c = &self.nodes[node].chain;
        (c.tip(), c.height())
    }

    pub fn chain(&self, node: usize) -> &Chain {
        &self.nodes[node].chain
    }

    pub fn mempool(&self, node: usize) -> &Mempool {
        &self.nodes[node].mempool
    }

    /// When `node` first learned of a block or transaction.
    pub fn seen_at(&self, node: usize, item: &Digest32) -> Option<u64> {
        self.nodes[node].seen_at.get(item).copied()
    }

    pub fn wallet(&self, node: usize) -> &Wallet {
        &self.nodes[node].wallet
    }

    /// Stops all mining, including the settle phase; queued ticks are dropped.
    pub fn stop_mining(&mut self) {
        self.mining = false;
        self.halted = true;
    }

    /// Hands `node` a transaction as if a local user submitted it; it is
    /// gossiped on admission. Returns whether the mempool accepted it.
    pub fn submit_tx(&mut self, node: usize, tx: Transaction) -> bool {
        self.on_tx(node, None, Arc::new(tx))
    }

    /// Hands `node` a block as if it had just mined it.
    pub fn submit_block(&mut self, node: usize, block: Block) -> bool {
        self.on_block(node, None, Arc::new(block))
    }

    /// One per-tick Bernoulli trial at `node`; on success the block is
    /// built on the node's tip (coinbase plus mempool contents oldest first)
    /// with a real nonce. The block is returned, not yet delivered anywhere.
    pub fn miner_tick(&mut self, node: usize) -> Option<Block> {
        let now_s = self.now / 1000;
        let rate_change = self.cfg.rate_change;
        let n = &mut self.nodes[node];
        let state = n.chain.state();
        let mut rate = n.rate;
        if let Some(rc) = rate_change {
            if state.height() >= rc.height {
                rate *= rc.factor;
            }
        }
        let p = tick_probability(rate, self.tick_ms, CompactTarget(state.next_bits()).expand());
        let draw: f64 = n.rng.gen();
        if draw >= p {
            return None;
        }
        let entries: Vec<_> = n.mempool.iter().take(MAX_BLOCK_TXS).collect();
        let fees = entries.iter().map(|e| e.fee).sum();
        let txs = entries.into_iter().map(|e| e.tx.clone()).collect();
        let tag = format!("node{}", n.id);
        Some(mine_block(state, txs, fees, n.payout.clone(), now_s, tag.as_bytes()))
    }

    /// Processes the next event. Returns false once the queue is empty.
    pub fn step(&mut self) -> bool {
        let Some(ev) = self.queue.pop() else { return false };
        if self.mining && ev.at > self.end_ms {
            self.mining = false;
        }
        self.now = ev.at;
        match ev.payload {
            Payload::Tick => self.on_tick(ev.node),
            Payload::Block(b) => {
                self.inflight_blocks -= 1;
                self.on_block(ev.node, ev.from, b);
            }
            Payload::Tx(tx) => {
                self.on_tx(ev.node, ev.from, tx);
            }
            Payload::TxGen => self.on_txgen(),
        }
        self.after_event();
        true
    }

    /// Runs until stable and returns the report.
    pub fn run(mut self) -> SimReport {
        while self.step() {}
        self.report()
    }

    fn needs_settling(&self) -> bool {
        let first = self.nodes[0].chain.tip();
        if self.nodes[..self.honest].iter().any(|n| n.chain.tip() != first) {
            return true;
        }
        if let Some(a) = &self.attack {
            let state = self.nodes[0].chain.state();
            let paid = state.utxo(&OutPoint::new(a.payment.txid(), 0)).is_some();
            let stolen = state.utxo(&OutPoint::new(a.conflict.txid(), 0)).is_some();
            return !paid && !stolen;
        }
        false
    }

    fn on_tick(&mut self, node: usize) {
        if self.halted {
            return;
        }
        if !self.mining {
            if node != self.designated || self.settle_ticks >= MAX_SETTLE_TICKS {
                self.settle_capped |= node == self.designated;
                return;
            }
            if self.inflight_blocks == 0 && !self.needs_settling() {
                return;
            }
            self.settle_ticks += 1;
        } else if let Some(a) = &self.attack {
            if node == self.honest && a.gave_up {
                return;
            }
        }
        let at = self.now + self.tick_ms;
        self.schedule(at, node, None, Payload::Tick);
        if let Some(block) = self.miner_tick(node) {
            self.found_ms.insert(block.hash(), self.now);
            self.mined.push(block.hash());
            self.last_block_ms = self.now;
            match self.nodes[node].role {
                Role::Honest => {
                    self.on_block(node, None, Arc::new(block));
                }
                Role::DoubleSpender => self.attacker_mined(block),
                Role::Withholder => self.withholder_mined(block),
            }
        }
    }

    fn attacker_mined(&mut self, block: Block) {
        let id = self.honest;
        let now_s = self.now / 1000;
        let n = &mut self.nodes[id];
        n.known.insert(block.hash());
        if let Ok(out) = n.chain.accept_block(block.clone(), now_s) {
            for b in &out.connected {
                n.mempool.remove_for_block(b);
            }
        }
        let a = self.attack.as_mut().expect("attack running");
        a.private_blocks += 1;
        if a.released_ms.is_some() {
            self.send_to_honest(id, &[block]);
        }
    }

    fn withholder_mined(&mut self, block: Block) {
        let id = self.honest;
        let now_s = self.now / 1000;
        let n = &mut self.nodes[id];
        n.known.insert(block.hash());
        n.seen_at.insert(block.hash(), self.now);
        let _ = n.chain.accept_block(block.clone(), now_s);
        let w = self.withhold.as_mut().expect("withhold running");
        w.mined += 1;
        w.withheld.push(block);
        self.withhold_check();
    }

    fn withhold_check(&mut self) {
        let id = self.honest;
        let Some(w) = self.withhold.as_mut() else { return };
        let tip = self.nodes[id].chain.tip();
        // Adopted the public chain: anything still held is dead.
        if w.withheld.last().is_some_and(|b| b.hash() != tip) {
            w.withheld.clear();
        }
        let private = self.nodes[id].chain.height();
        let public = self.nodes[0].chain.height();
        if !w.withheld.is_empty() && private >= public + w.lead {
            let blocks = std::mem::take(&mut w.withheld);
            w.released += blocks.len() as u64;
            self.send_to_honest(id, &blocks);
        }
    }

    fn send_to_honest(&mut self, from: usize, blocks: &[Block]) {
        let at = self.now + self.cfg.latency_ms;
        for node in 0..self.honest {
            for b in blocks {
                self.schedule(at, node, Some(from), Payload::Block(Arc::new(b.clone())));
            }
        }
    }

    fn gossip(&mut self, node: usize, from: Option<usize>, payload: Payload) {
        let at = self.now + self.cfg.latency_ms;
        let peers: Vec<usize> = self.nodes[node].peers.iter().copied().filter(|p| Some(*p) != from).collect();
        for p in peers {
            self.schedule(at, p, Some(node), payload.clone());
        }
    }

    fn on_block(&mut self, node: usize, from: Option<usize>, block: Arc<Block>) -> bool {
        let hash = block.hash();
        let now_s = self.now / 1000;
        let now_ms = self.now;
        let n = &mut self.nodes[node];
        if !n.known.insert(hash) {
            return false;
        }
        n.seen_at.insert(hash, now_ms);
        if n.role == Role::DoubleSpender {
            return false;
        }
        let Ok(out) = n.chain.accept_block((*block).clone(), now_s) else {
            return false;
        };
        if out.status == AcceptStatus::Duplicate {
            return false;
        }
        if !out.disconnected.is_empty() {
            n.mempool.reorganize(&out.disconnected, n.chain.state(), now_s);
        } else {
            for b in &out.connected {
                n.mempool.remove_for_block(b);
            }
        }
        if n.role == Role::Withholder {
            self.withhold_check();
            return true;
        }
        self.best_honest_height = self.best_honest_height.max(n.chain.height());
        if node == 0 {
            for b in &out.connected {
                for tx in &b.transactions {
                    if let Some(&i) = self.tx_index.get(&tx.txid()) {
                        self.txs[i].confirmed_ms.get_or_insert(now_ms);
                    }
                }
            }
        }
        self.gossip(node, from, Payload::Block(block));
        true
    }

    fn on_tx(&mut self, node: usize, from: Option<usize>, tx: Arc<Transaction>) -> bool {
        let txid = tx.txid();
        let now_s = self.now / 1000;
        let now_ms = self.now;
        let n = &mut self.nodes[node];
        if !n.known.insert(txid) {
            return false;
        }
        n.seen_at.insert(txid, now_ms);
        if n.role != Role::Honest {
            return false;
        }
        if n.mempool.add((*tx).clone(), n.chain.state(), now_s).is_err() {
            return false;
        }
        self.gossip(node, from, Payload::Tx(tx));
        true
    }

    fn on_txgen(&mut self) {
        if !self.mining {
            return;
        }
        let at = self.now + self.tx_interval_ms;
        self.schedule(at, 0, None, Payload::TxGen);
        let sender = self.workload_rng.gen_range(0..self.honest);
        let recipient =
            if self.honest > 1 { (sender + self.workload_rng.gen_range(1..self.honest)) % self.honest } else { sender };
        let amount = self.workload_rng.gen_range(1..=10) * COIN / 10;
        let dest = self.nodes[recipient].wallet.address("main").expect("main key");
        let n = &self.nodes[sender];
        let exclude: HashSet<OutPoint> = n.mempool.iter().flat_map(|e| e.tx.inputs.iter().map(|i| i.prevout)).collect();
        let state = n.chain.state();
        let Ok(unsigned) = build_payment(&n.wallet, state, &dest, amount, self.cfg.fee, &exclude) else { return };
        let Ok(tx) = sign_all(&n.wallet, &unsigned, state) else { return };
        let txid = tx.txid();
        if self.on_tx(sender, None, Arc::new(tx)) {
            self.tx_index.insert(txid, self.txs.len());
            self.txs.push(TxRecord { txid, sent_ms: self.now, confirmed_ms: None });
        }
    }

    fn after_event(&mut self) {
        let first = self.nodes[0].chain.tip();
        let agree = self.nodes[..self.honest].iter().all(|n| n.chain.tip() == first);
        match (agree, self.converged_at) {
            (true, None) => self.converged_at = Some(self.now),
            (false, Some(_)) => self.converged_at = None,
            _ => {}
        }
        if let Some(max) = self.cfg.max_height {
            if self.mining && self.best_honest_height >= max {
                self.mining = false;
            }
        }
        self.attack_check();
    }

    fn attack_check(&mut self) {
        let now = self.now;
        let Some(a) = self.attack.as_mut() else { return };
        let merchant = self.nodes[0].chain.state();
        if a.accepted_ms.is_none() {
            let accepted = if a.confirmations == 0 {
                self.nodes[0].mempool.contains(&a.payment.txid())
                    || merchant.utxo(&OutPoint::new(a.payment.txid(), 0)).is_some()
            } else {
                merchant
                    .utxo(&OutPoint::new(a.payment.txid(), 0))
                    .is_some_and(|e| merchant.height() + 1 - e.height >= a.confirmations)
            };
            if accepted {
                a.accepted_ms = Some(now);
            }
        }
        if a.released_ms.is_some() || a.gave_up || !self.mining {
            return;
        }
        let private = &self.nodes[self.honest].chain;
        let public_blocks = merchant.height().saturating_sub(a.fork_height);
        let private_blocks = private.height().saturating_sub(a.fork_height);
        if a.accepted_ms.is_some() && private.state().cumulative_work() > merchant.cumulative_work() {
            a.released_ms = Some(now);
            a.public_at_release = Some(public_blocks);
            let blocks: Vec<Block> = private.active_blocks().skip(a.fork_height as usize + 1).cloned().collect();
            self.send_to_honest(self.honest, &blocks);
        } else if public_blocks >= private_blocks + a.give_up {
            a.gave_up = true;
        }
    }

    fn report(&self) -> SimReport {
        let node0 = &self.nodes[0].chain;
        let params = node0.params();
        let nodes = self.nodes[..self.honest]
            .iter()
            .map(|n| {
                let state = n.chain.state();
                NodeReport {
                    id: n.id,
                    tip: state.tip(),
                    height: state.height(),
                    utxo_digest: state.utxo_digest(),
                    orphans: n.chain.orphan_count(),
                    known_blocks: n.chain.block_count(),
                    mempool: n.mempool.len(),
                    conservation_ok: state.unspent_total() <= cumulative_supply(state.height(), params),
                }
            })
            .collect();
        let active: HashSet<Digest32> = node0.state().active_hashes().iter().copied().collect();
        let stale = self.mined.iter().filter(|h| !active.contains(h)).count() as u64;
        let block_found_ms: Vec<u64> =
            node0.state().active_hashes().iter().map(|h| self.found_ms.get(h).copied().unwrap_or(0)).collect();
        let mean_interval_ms = {
            let b = self.bootstrap_height as usize;
            let last = block_found_ms.len() - 1;
            (last > b).then(|| (block_found_ms[last] - block_found_ms[b]) / (last - b) as u64)
        };
        let interval = params.retarget_interval;
        let retargets = (1..=node0.height() / interval)
            .map(|k| {
                let h = k * interval;
                let header = node0.state().header_at(h).expect("active height");
                RetargetRecord { height: h, bits: header.bits, time: header.time }
            })
            .collect();
        let adversary = match (&self.attack, &self.withhold) {
            (Some(a), _) => {
                let (pay, steal) = (a.payment.txid(), a.conflict.txid());
                let mut payment_confirmed = false;
                let mut conflict_confirmed = false;
                for b in node0.active_blocks() {
                    for tx in &b.transactions {
                        let id = tx.txid();
                        payment_confirmed |= id == pay;
                        conflict_confirmed |= id == steal;
                    }
                }
                AdversaryOutcome::DoubleSpend(AttackReport {
                    confirmations: a.confirmations,
                    payment_txid: pay,
                    conflict_txid: steal,
                    accepted_ms: a.accepted_ms,
                    released_ms: a.released_ms,
                    gave_up: a.gave_up,
                    private_blocks: a.private_blocks,
                    public_blocks_at_release: a.public_at_release,
                    payment_confirmed,
                    conflict_confirmed,
                    success: a.accepted_ms.is_some() && conflict_confirmed,
                })
            }
            (None, Some(w)) => {
                let attacker_payout = &self.nodes[self.honest].payout;
                let mut attacker_in_chain = 0;
                let mut honest_in_chain = 0;
                for b in node0.active_blocks().skip(self.bootstrap_height as usize + 1) {
                    if b.transactions[0].outputs[0].script_pubkey == *attacker_payout {
                        attacker_in_chain += 1;
                    } else {
                        honest_in_chain += 1;
                    }
                }
                AdversaryOutcome::Withhold(WithholdReport {
                    lead: w.lead,
                    attacker_mined: w.mined,
                    attacker_released: w.released,
                    attacker_in_chain,
                    honest_in_chain,
                })
            }
            _ => AdversaryOutcome::None,
        };
        let converged = !self.needs_settling()
            && self.nodes[..self.honest]
                .windows(2)
                .all(|w| w[0].chain.state().utxo_digest() == w[1].chain.state().utxo_digest());
        SimReport {
            seed: self.cfg.seed,
            nodes,
            bootstrap_height: self.bootstrap_height,
            start_ms: self.start_ms,
            end_ms: self.now,
            settled: !self.settle_capped,
            converged,
            last_block_ms: self.last_block_ms,
            converged_at_ms: self.converged_at,
            blocks_mined: self.mined.len() as u64,
            stale_blocks: stale,
            block_found_ms,
            mean_interval_ms,
            retargets,
            txs: self.txs.clone(),
            adversary,
        }
    }
}

/// Runs one scenario to completion.
pub fn run(cfg: &ScenarioConfig) -> Result<SimReport, ConfigError> {
    Ok(Simulation::new(cfg.clone())?.run())
}

/// Runs a double-spend scenario and returns its attack outcome.
pub fn run_double_spend(cfg: &ScenarioConfig) -> Result<AttackReport, ConfigError> {
    if !matches!(cfg.adversary, Adversary::DoubleSpend { .. }) {
        return Err(ConfigError::Invalid("scenario has no double-spend adversary".into()));
    }
    let report = run(cfg)?;
    Ok(report.attack().cloned().expect("double-spend outcome"))
}

/// Runs `count` copies of `cfg` with seeds `cfg.seed, cfg.seed + 1, …` in
/// parallel. Results come back in seed order.
pub fn sweep(cfg: &ScenarioConfig, count: u64) -> Result<Vec<SimReport>, ConfigError> {
    cfg.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i);
            run(&c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ChainParams;

    fn quiet(nodes: usize, topology: Topology) -> ScenarioConfig {
        ScenarioConfig { nodes, topology, hash_rates: vec![1.0; nodes], duration_s: 10, ..ScenarioConfig::default() }
    }

    #[test]
    fn probability_at_the_ceiling() {
        let p = tick_probability(4.0, 100, ChainParams::simnet().max_target);
        assert!((p - 0.4).abs() < 1e-6, "{p}");
        assert_eq!(tick_probability(1e9, 100, U256::MAX), 1.0);
        let half = tick_probability(1.0, 1000, U256::MAX >> 1);
        assert!((half - 0.5).abs() < 1e-12);
    }

    #[test]
    fn complete_graph_delivers_in_one_hop() {
        let mut sim = Simulation::new(quiet(4, Topology::Complete)).unwrap();
        sim.stop_mining();
        let t0 = sim.now_ms();
        let block = mine_block(sim.chain(0).state(), vec![], 0, Script::default(), t0 / 1000, b"t");
        let hash = block.hash();
        assert!(sim.submit_block(0, block));
        while sim.step() {}
        for n in 1..4 {
            assert_eq!(sim.seen_at(n, &hash), Some(t0 + 100));
            assert_eq!(sim.tip(n).0, hash);
        }
    }

    #[test]
    fn ring_farthest_node_is_two_hops() {
        let mut sim = Simulation::new(quiet(5, Topology::Ring)).unwrap();
        sim.stop_mining();
        let t0 = sim.now_ms();
        let block = mine_block(sim.chain(0).state(), vec![], 0, Script::default(), t0 / 1000, b"t");
        let hash = block.hash();
        sim.submit_block(0, block.clone());
        while sim.step() {}
        assert_eq!(sim.seen_at(1, &hash), Some(t0 + 100));
        assert_eq!(sim.seen_at(4, &hash), Some(t0 + 100));
        assert_eq!(sim.seen_at(2, &hash), Some(t0 + 200));
        assert_eq!(sim.seen_at(3, &hash), Some(t0 + 200));
        // Already known everywhere: no further events.
        assert!(!sim.submit_block(2, block));
        assert_eq!(sim.pending_events(), 0);
    }

    #[test]
    fn empty_mempool_gives_coinbase_only_block() {
        let mut cfg = quiet(1, Topology::Complete);
        cfg.hash_rates = vec![1e9];
        let mut sim = Simulation::new(cfg).unwrap();
        let block = sim.miner_tick(0).expect("certain success");
        assert_eq!(block.transactions.len(), 1);
        let height = sim.chain(0).height() + 1;
        assert_eq!(
            block.transactions[0].output_total(),
            Some(crate::consensus::block_subsidy(height, sim.chain(0).params()))
        );
    }

    #[test]
    fn same_seed_same_report() {
        let mut cfg = quiet(3, Topology::Ring);
        cfg.tx_rate = 0.5;
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.to_text(), b.to_text());
        cfg.seed = 2;
        assert_ne!(run(&cfg).unwrap().digest(), a.digest());
    }
}
