//! Simulation results and their two renderings: `key=value` lines and JSON.

use std::fmt::Write;

use serde::Serialize;

use crate::crypto::{hash256, Digest32};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct NodeReport {
    pub id: usize,
    pub tip: Digest32,
    pub height: u64,
    pub utxo_digest: Digest32,
    pub orphans: usize,
    pub known_blocks: usize,
    pub mempool: usize,
    /// Unspent total at most the cumulative subsidy at this height.
    pub conservation_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RetargetRecord {
    pub height: u64,
    pub bits: u32,
    pub time: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TxRecord {
    pub txid: Digest32,
    pub sent_ms: u64,
    /// First time node 0's active chain included it, if it ever did.
    pub confirmed_ms: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttackReport {
    pub confirmations: u64,
    pub payment_txid: Digest32,
    pub conflict_txid: Digest32,
    /// When the merchant (node 0) considered the payment settled.
    pub accepted_ms: Option<u64>,
    pub released_ms: Option<u64>,
    pub gave_up: bool,
    /// Blocks the attacker mined on its private branch.
    pub private_blocks: u64,
    /// Honest chain height above the fork when the attacker released.
    pub public_blocks_at_release: Option<u64>,
    pub payment_confirmed: bool,
    pub conflict_confirmed: bool,
    /// Merchant accepted the payment and the conflicting spend won.
    pub success: bool,
}

impl AttackReport {
    pub fn confirmed_spender(&self) -> &'static str {
        match (self.payment_confirmed, self.conflict_confirmed) {
            (true, false) => "payment",
            (false, true) => "conflict",
            (false, false) => "none",
            (true, true) => "both",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WithholdReport {
    pub lead: u64,
    pub attacker_mined: u64,
    pub attacker_released: u64,
    pub attacker_in_chain: u64,
    pub honest_in_chain: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AdversaryOutcome {
    None,
    DoubleSpend(AttackReport),
    Withhold(WithholdReport),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SimReport {
    pub seed: u64,
    pub nodes: Vec<NodeReport>,
    /// Height of the last pre-mined block (0 without bootstrap).
    pub bootstrap_height: u64,
    pub start_ms: u64,
    pub end_ms: u64,
    /// Mining stopped at the configured end, not at the settle cap.
    pub settled: bool,
    pub converged: bool,
    pub last_block_ms: u64,
    pub converged_at_ms: Option<u64>,
    pub blocks_mined: u64,
    /// Mined blocks that are not on node 0's final active chain.
    pub stale_blocks: u64,
    /// Discovery time of each block on node 0's active chain, by height.
    pub block_found_ms: Vec<u64>,
    pub mean_interval_ms: Option<u64>,
    pub retargets: Vec<RetargetRecord>,
    pub txs: Vec<TxRecord>,
    pub adversary: AdversaryOutcome,
}

impl SimReport {
    /// Stable `key=value` lines, one per fact.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut kv = |k: &str, v: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("seed", &self.seed);
        kv("node_count", &self.nodes.len());
        kv("bootstrap_height", &self.bootstrap_height);
        kv("start_ms", &self.start_ms);
        kv("end_ms", &self.end_ms);
        kv("settled", &self.settled);
        kv("converged", &self.converged);
        kv("converged_at_ms", &opt(self.converged_at_ms));
        kv("last_block_ms", &self.last_block_ms);
        kv("blocks_mined", &self.blocks_mined);
        kv("stale_blocks", &self.stale_blocks);
        kv("mean_interval_ms", &opt(self.mean_interval_ms));
        for n in &self.nodes {
            let p = format!("node.{}", n.id);
            kv(&format!("{p}.tip"), &n.tip);
            kv(&format!("{p}.height"), &n.height);
            kv(&format!("{p}.utxo_digest"), &n.utxo_digest);
            kv(&format!("{p}.orphans"), &n.orphans);
            kv(&format!("{p}.known_blocks"), &n.known_blocks);
            kv(&format!("{p}.mempool"), &n.mempool);
            kv(&format!("{p}.conservation_ok"), &n.conservation_ok);
        }
        for r in &self.retargets {
            kv(&format!("retarget.{}", r.height), &format!("{:#010x}@{}", r.bits, r.time));
        }
        let confirmed: Vec<u64> = self.txs.iter().filter_map(|t| t.confirmed_ms.map(|c| c - t.sent_ms)).collect();
        kv("tx.sent", &self.txs.len());
        kv("tx.confirmed", &confirmed.len());
        let mean = (!confirmed.is_empty()).then(|| confirmed.iter().sum::<u64>() / confirmed.len() as u64);
        kv("tx.mean_confirm_ms", &opt(mean));
        for t in &self.txs {
            kv(&format!("tx.{}", t.txid), &format!("{}->{}", t.sent_ms, opt(t.confirmed_ms)));
        }
        match &self.adversary {
            AdversaryOutcome::None => kv("adversary", &"none"),
            AdversaryOutcome::DoubleSpend(a) => {
                kv("adversary", &"double-spend");
                kv("attack.confirmations", &a.confirmations);
                kv("attack.payment_txid", &a.payment_txid);
                kv("attack.conflict_txid", &a.conflict_txid);
                kv("attack.accepted_ms", &opt(a.accepted_ms));
                kv("attack.released_ms", &opt(a.released_ms));
                kv("attack.gave_up", &a.gave_up);
                kv("attack.private_blocks", &a.private_blocks);
                kv("attack.public_blocks_at_release", &opt(a.public_blocks_at_release));
                kv("attack.confirmed_spender", &a.confirmed_spender());
                kv("attack.success", &a.success);
            }
            AdversaryOutcome::Withhold(w) => {
                kv("adversary", &"withhold");
                kv("withhold.lead", &w.lead);
                kv("withhold.attacker_mined", &w.attacker_mined);
                kv("withhold.attacker_released", &w.attacker_released);
                kv("withhold.attacker_in_chain", &w.attacker_in_chain);
                kv("withhold.honest_in_chain", &w.honest_in_chain);
            }
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Digest of the text rendering; equal reports have equal digests.
    pub fn digest(&self) -> Digest32 {
        hash256(self.to_text().as_bytes())
    }

    pub fn attack(&self) -> Option<&AttackReport> {
        match &self.adversary {
            AdversaryOutcome::DoubleSpend(a) => Some(a),
            _ => None,
        }
    }

    /// Whether every node ended on one tip with identical unspent sets.
    pub fn nodes_agree(&self) -> bool {
        self.nodes.windows(2).all(|w| w[0].tip == w[1].tip && w[0].utxo_digest == w[1].utxo_digest)
    }
}

fn opt(v: Option<u64>) -> String {
    v.map_or_else(|| "none".to_string(), |v| v.to_string())
}

/// Summary lines for a batch of runs sharing one scenario.
pub fn sweep_summary(reports: &[SimReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "runs={}", reports.len());
    let agree = reports.iter().filter(|r| r.nodes_agree()).count();
    let _ = writeln!(out, "runs_converged={agree}");
    let attacks: Vec<&AttackReport> = reports.iter().filter_map(|r| r.attack()).collect();
    if !attacks.is_empty() {
        let wins = attacks.iter().filter(|a| a.success).count();
        let one = attacks.iter().filter(|a| a.payment_confirmed != a.conflict_confirmed).count();
        let _ = writeln!(out, "attack.successes={wins}");
        let _ = writeln!(out, "attack.exactly_one_confirmed={one}");
    }
    for r in reports {
        let _ = writeln!(out, "run.{}.digest={}", r.seed, r.digest());
    }
    out
}
