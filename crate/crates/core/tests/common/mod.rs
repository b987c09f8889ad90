#![allow(dead_code)]

use minichain::consensus::{mine_block, Chain, ChainState};
use minichain::model::{make_genesis, GENESIS_MESSAGE};
use minichain::script::make_p2pkh;
use minichain::wallet::Wallet;
use minichain::{Block, ChainParams, KeyPair, Transaction};

pub fn params() -> ChainParams {
    let mut p = ChainParams::simnet();
    p.coinbase_maturity = 2;
    p
}

pub fn genesis(params: &ChainParams) -> Block {
    make_genesis(params, GENESIS_MESSAGE, 0).unwrap()
}

pub fn key(seed: &str) -> KeyPair {
    KeyPair::generate(seed.as_bytes()).unwrap()
}

pub fn wallet(labels: &[&str]) -> Wallet {
    let mut w = Wallet::new();
    for l in labels {
        w.add_key(l, l.as_bytes()).unwrap();
    }
    w
}

/// Next block on `state` with `txs`, paying the reward to `payee` one
/// spacing after the tip.
pub fn next_block(state: &ChainState, txs: Vec<Transaction>, payee: &KeyPair, tag: &[u8]) -> Block {
    let height = state.height() + 1;
    let fees: u64 = txs.iter().map(|t| state.check_tx_inputs(t, height, u64::MAX / 2).unwrap_or(0)).sum();
    let time = state.tip_header().time + state.params().target_spacing;
    mine_block(state, txs, fees, make_p2pkh(&payee.public_key().hash()), time, tag)
}

/// Appends `n` coinbase-only blocks paying `payee`.
pub fn extend(chain: &mut Chain, n: usize, payee: &KeyPair, tag: &[u8]) -> Vec<Block> {
    let mut out = Vec::new();
    for _ in 0..n {
        let b = next_block(chain.state(), vec![], payee, tag);
        let now = b.header.time;
        chain.accept_block(b.clone(), now).unwrap();
        out.push(b);
    }
    out
}

pub fn chain_with(params: &ChainParams, blocks: usize, payee: &KeyPair) -> Chain {
    let mut chain = Chain::new(params.clone(), genesis(params));
    extend(&mut chain, blocks, payee, b"");
    chain
}

/// Mining a block that spends `txs` on the chain's tip and accepting it.
pub fn confirm(chain: &mut Chain, txs: Vec<Transaction>, payee: &KeyPair) -> Block {
    let b = next_block(chain.state(), txs, payee, b"");
    let now = b.header.time;
    chain.accept_block(b.clone(), now).unwrap();
    b
}

/// Signed payment of `amount` from `from` to `to`'s key hash.
pub fn pay(from: &Wallet, state: &ChainState, to: &KeyPair, amount: u64, fee: u64) -> Transaction {
    use minichain::crypto::P2PKH_VERSION;
    use minichain::Address;
    let dest = Address::new(P2PKH_VERSION, to.public_key().hash());
    let unsigned = minichain::wallet::build_payment(from, state, &dest, amount, fee, &Default::default()).unwrap();
    minichain::wallet::sign_all(from, &unsigned, state).unwrap()
}

/// Recomputes the commitment and searches a fresh nonce after `block` was edited.
pub fn reseal(block: &mut Block) {
    use minichain::consensus::{meets_target, CompactTarget};
    block.header.tx_commitment = minichain::model::tx_commitment(&block.transactions).unwrap();
    let target = CompactTarget(block.header.bits).expand();
    block.header.nonce = 0;
    while !meets_target(&block.header.hash(), target) {
        block.header.nonce += 1;
    }
}

/// Like [`confirm`] with an explicit block time.
pub fn confirm_at(
    chain: &mut Chain,
    txs: Vec<Transaction>,
    payee: &KeyPair,
    time: u64,
) -> Result<Block, minichain::consensus::ConsensusError> {
    let height = chain.height() + 1;
    let fees: u64 = txs.iter().map(|t| chain.state().check_tx_inputs(t, height, time).unwrap_or(0)).sum();
    let b = mine_block(chain.state(), txs, fees, make_p2pkh(&payee.public_key().hash()), time, b"");
    let mut scratch = chain.state().clone();
    scratch.validate_and_connect(&b, time)?;
    chain.accept_block(b.clone(), time)?;
    Ok(b)
}
