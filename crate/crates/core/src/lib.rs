//! A miniature permissionless UTXO blockchain.
//!
//! Blocks are hash-chained through their headers and secured by proof of work
//! with periodic difficulty retargeting. Value moves between outputs locked by
//! small stack-machine scripts (single signature, M-of-N multisig, pay to
//! script hash, transaction lock times). Around that core sit an append-only
//! block store with a log-structured metadata index, a wallet with a
//! unidirectional micropayment channel, and a deterministic discrete-event
//! network simulator for mining races, forks and double-spend attempts.

pub mod consensus;
pub mod crypto;
pub mod mempool;
pub mod model;
pub mod netsim;
pub mod script;
pub mod storage;
pub mod wallet;

pub use crypto::{Address, Digest20, Digest32, KeyPair, PublicKey, Signature};
pub use model::{Block, BlockHeader, ChainParams, OutPoint, Transaction, TxInput, TxOutput};
pub use script::Script;

/// Base units per coin.
pub const COIN: u64 = 100_000_000;

/// Hard ceiling on any single amount and on total issuance: 21 million coins.
pub const MAX_MONEY: u64 = 21_000_000 * COIN;

/// Formats base units as a fixed eight-decimal coin amount, e.g. `50.00000000`.
pub fn format_amount(units: u64) -> String {
    format!("{}.{:08}", units / COIN, units % COIN)
}

/// Parses a decimal coin amount with at most eight fractional digits.
pub fn parse_amount(text: &str) -> Option<u64> {
    let (whole, frac) = match text.split_once('.') {
        Some((w, f)) => (w, f),
        None => (text, ""),
    };
    if whole.is_empty() && frac.is_empty() {
        return None;
    }
    if frac.len() > 8 || !whole.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().ok()? };
    let mut frac_units: u64 = 0;
    for (i, b) in frac.bytes().enumerate() {
        frac_units += u64::from(b - b'0') * 10u64.pow(7 - i as u32);
    }
    whole.checked_mul(COIN)?.checked_add(frac_units)
}
