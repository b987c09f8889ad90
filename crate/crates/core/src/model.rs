//! Chain data types and their canonical byte layout.
//!
//! All integers are little-endian and fixed width; counts are `u32`.
//!
//! ```text
//! header = version u32 | prev_hash 32 | tx_commitment 32 | time u64 | bits u32 | nonce u64   (88 bytes)
//! tx     = version u32 | lock_time u64 | n_in u32 | inputs | n_out u32 | outputs
//! input  = prev_txid 32 | prev_index u32 | script_len u32 | script
//! output = amount u64 | script_len u32 | script
//! block  = header | n_tx u32 | transactions
//! ```

use primitive_types::U256;
use serde::Serialize;
use thiserror::Error;

use crate::consensus::{check_pow, CompactTarget};
use crate::crypto::{hash256, Digest32};
use crate::script::Script;
use crate::COIN;

pub const HEADER_SIZE: usize = 88;

/// Largest element count accepted by the decoder for any list.
pub const MAX_DECODE_COUNT: u32 = 100_000;

/// Largest genesis message accepted.
pub const MAX_GENESIS_MESSAGE: usize = 1000;

/// Headers may run at most this many seconds ahead of the validating node's clock.
pub const MAX_FUTURE_BLOCK_TIME: u64 = 7200;

pub const GENESIS_MESSAGE: &str = "The Times 03/Jan/2009 Chancellor on brink of second bailout for banks";

/// Sighash type constant appended to every signature digest (sign everything).
pub const SIGHASH_ALL: u32 = 1;

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum DecodeError {
    #[error("input truncated: needed {needed} more bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("{0} trailing bytes after a complete value")]
    TrailingBytes(usize),
    #[error("declared count {0} exceeds the decoder limit")]
    CountOverflow(u32),
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum ModelError {
    #[error("transaction list must not be empty")]
    EmptyTransactionList,
    #[error("genesis message must be 1..={MAX_GENESIS_MESSAGE} bytes, got {0}")]
    BadGenesisMessage(usize),
    #[error("input index {index} out of range for a transaction with {inputs} inputs")]
    InputIndexOutOfRange { index: usize, inputs: usize },
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug, Serialize)]
pub struct OutPoint {
    pub txid: Digest32,
    pub index: u32,
}

impl OutPoint {
    pub const COINBASE: OutPoint = OutPoint { txid: Digest32::ZERO, index: u32::MAX };

    pub fn new(txid: Digest32, index: u32) -> Self {
        OutPoint { txid, index }
    }

    pub fn is_coinbase_marker(&self) -> bool {
        *self == Self::COINBASE
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TxInput {
    pub prevout: OutPoint,
    pub script_sig: Script,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct TxOutput {
    pub amount: u64,
    pub script_pubkey: Script,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Transaction {
    pub version: u32,
    /// Earliest simulated time (seconds) at which the transaction may be
    /// included in a block; 0 means always final.
    pub lock_time: u64,
    pub inputs: Vec<TxInput>,
    pub outputs: Vec<TxOutput>,
}

impl Transaction {
    /// Builds a coinbase whose unlocking script starts with the block height,
    /// which keeps coinbase txids unique across heights.
    pub fn coinbase(height: u64, tag: &[u8], outputs: Vec<TxOutput>) -> Transaction {
        let mut script = Script::builder().push_data(&height.to_le_bytes());
        if !tag.is_empty() {
            script = script.push_data(tag);
        }
        Transaction {
            version: 1,
            lock_time: 0,
            inputs: vec![TxInput { prevout: OutPoint::COINBASE, script_sig: script.into_script() }],
            outputs,
        }
    }

    pub fn is_coinbase(&self) -> bool {
        self.inputs.len() == 1 && self.inputs[0].prevout.is_coinbase_marker()
    }

    pub fn txid(&self) -> Digest32 {
        txid(self)
    }

    pub fn serialize(&self) -> Vec<u8> {
        serialize_tx(self)
    }

    pub fn output_total(&self) -> Option<u64> {
        self.outputs.iter().try_fold(0u64, |acc, o| acc.checked_add(o.amount))
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct BlockHeader {
    pub version: u32,
    pub prev_hash: Digest32,
    pub tx_commitment: Digest32,
    pub time: u64,
    pub bits: u32,
    pub nonce: u64,
}

impl BlockHeader {
    pub fn hash(&self) -> Digest32 {
        block_hash(self)
    }

    pub fn serialize(&self) -> [u8; HEADER_SIZE] {
        let mut w = Writer::default();
        write_header(&mut w, self);
        w.0.try_into().expect("header is 88 bytes")
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Block {
    pub header: BlockHeader,
    pub transactions: Vec<Transaction>,
}

impl Block {
    pub fn hash(&self) -> Digest32 {
        self.header.hash()
    }

    pub fn serialize(&self) -> Vec<u8> {
        serialize_block(self)
    }

    pub fn coinbase(&self) -> Option<&Transaction> {
        self.transactions.first()
    }
}

/// Consensus parameters of a network.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ChainParams {
    pub initial_subsidy: u64,
    pub halving_interval: u64,
    pub retarget_interval: u64,
    /// Target seconds between blocks.
    pub target_spacing: u64,
    pub max_target: U256,
    pub clamp_factor: u64,
    pub coinbase_maturity: u64,
    pub network_magic: u32,
}

impl ChainParams {
    /// Desk-scale parameters: 1 s blocks, retarget every 32, halving every 150.
    pub fn simnet() -> Self {
        ChainParams {
            initial_subsidy: 50 * COIN,
            halving_interval: 150,
            retarget_interval: 32,
            target_spacing: 1,
            max_target: CompactTarget(0x20ff_ffff).expand(),
            clamp_factor: 4,
            coinbase_maturity: 10,
            network_magic: 0x4D49_4E49,
        }
    }

    /// Bitcoin-sized schedule: 10 minute blocks, retarget every 2016, halving every 210,000.
    pub fn mainnet_like() -> Self {
        ChainParams {
            initial_subsidy: 50 * COIN,
            halving_interval: 210_000,
            retarget_interval: 2016,
            target_spacing: 600,
            max_target: CompactTarget(0x1d00_ffff).expand(),
            clamp_factor: 4,
            coinbase_maturity: 100,
            network_magic: 0x4D49_4E49,
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "simnet" => Some(Self::simnet()),
            "mainnet-like" | "mainnet" => Some(Self::mainnet_like()),
            _ => None,
        }
    }

    pub fn expected_timespan(&self) -> u64 {
        self.retarget_interval * self.target_spacing
    }

    pub fn max_bits(&self) -> u32 {
        CompactTarget::from_target(self.max_target).0
    }

    /// Checks that every parameter is positive and that the first epoch's
    /// issuance, doubled, stays under the 21 million coin ceiling.
    pub fn validate(&self) -> Result<(), String> {
        let positives = [
            ("initial_subsidy", self.initial_subsidy),
            ("halving_interval", self.halving_interval),
            ("retarget_interval", self.retarget_interval),
            ("target_spacing", self.target_spacing),
            ("clamp_factor", self.clamp_factor),
            ("coinbase_maturity", self.coinbase_maturity),
            ("network_magic", u64::from(self.network_magic)),
        ];
        for (name, value) in positives {
            if value == 0 {
                return Err(format!("{name} must be positive"));
            }
        }
        if self.max_target.is_zero() {
            return Err("max_target must be positive".into());
        }
        let first_epoch = self.initial_subsidy.checked_mul(self.halving_interval).and_then(|v| v.checked_mul(2));
        match first_epoch {
            Some(v) if v <= crate::MAX_MONEY => Ok(()),
            _ => Err("initial_subsidy × halving_interval × 2 exceeds the supply cap".into()),
        }
    }
}

#[derive(Default)]
pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    pub fn var_bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.bytes(b);
    }
}

pub(crate) struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let remaining = self.data.len() - self.pos;
        if n > remaining {
            return Err(DecodeError::Truncated { offset: self.pos, needed: n - remaining });
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn digest(&mut self) -> Result<Digest32, DecodeError> {
        Ok(Digest32(self.take(32)?.try_into().unwrap()))
    }

    pub fn count(&mut self) -> Result<u32, DecodeError> {
        let n = self.u32()?;
        if n > MAX_DECODE_COUNT {
            return Err(DecodeError::CountOverflow(n));
        }
        Ok(n)
    }

    pub fn var_bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn remaining(&self) -> usize {
        self.data.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(DecodeError::TrailingBytes(n)),
        }
    }
}

fn write_tx(w: &mut Writer, tx: &Transaction) {
    w.u32(tx.version);
    w.u64(tx.lock_time);
    w.u32(tx.inputs.len() as u32);
    for input in &tx.inputs {
        w.bytes(&input.prevout.txid.0);
        w.u32(input.prevout.index);
        w.var_bytes(input.script_sig.as_bytes());
    }
    w.u32(tx.outputs.len() as u32);
    for output in &tx.outputs {
        w.u64(output.amount);
        w.var_bytes(output.script_pubkey.as_bytes());
    }
}

fn read_tx(r: &mut Reader<'_>) -> Result<Transaction, DecodeError> {
    let version = r.u32()?;
    let lock_time = r.u64()?;
    let n_in = r.count()?;
    let mut inputs = Vec::with_capacity((n_in as usize).min(r.remaining() / 40));
    for _ in 0..n_in {
        let txid = r.digest()?;
        let index = r.u32()?;
        let script_sig = Script::from(r.var_bytes()?);
        inputs.push(TxInput { prevout: OutPoint { txid, index }, script_sig });
    }
    let n_out = r.count()?;
    let mut outputs = Vec::with_capacity((n_out as usize).min(r.remaining() / 12));
    for _ in 0..n_out {
        let amount = r.u64()?;
        let script_pubkey = Script::from(r.var_bytes()?);
        outputs.push(TxOutput { amount, script_pubkey });
    }
    Ok(Transaction { version, lock_time, inputs, outputs })
}

fn write_header(w: &mut Writer, h: &BlockHeader) {
    w.u32(h.version);
    w.bytes(&h.prev_hash.0);
    w.bytes(&h.tx_commitment.0);
    w.u64(h.time);
    w.u32(h.bits);
    w.u64(h.nonce);
}

fn read_header(r: &mut Reader<'_>) -> Result<BlockHeader, DecodeError> {
    Ok(BlockHeader {
        version: r.u32()?,
        prev_hash: r.digest()?,
        tx_commitment: r.digest()?,
        time: r.u64()?,
        bits: r.u32()?,
        nonce: r.u64()?,
    })
}

pub fn serialize_tx(tx: &Transaction) -> Vec<u8> {
    let mut w = Writer::default();
    write_tx(&mut w, tx);
    w.0
}

pub fn deserialize_tx(bytes: &[u8]) -> Result<Transaction, DecodeError> {
    let mut r = Reader::new(bytes);
    let tx = read_tx(&mut r)?;
    r.finish()?;
    Ok(tx)
}

pub fn serialize_header(header: &BlockHeader) -> [u8; HEADER_SIZE] {
    header.serialize()
}

pub fn deserialize_header(bytes: &[u8]) -> Result<BlockHeader, DecodeError> {
    let mut r = Reader::new(bytes);
    let h = read_header(&mut r)?;
    r.finish()?;
    Ok(h)
}

pub fn serialize_block(block: &Block) -> Vec<u8> {
    let mut w = Writer::default();
    write_header(&mut w, &block.header);
    w.u32(block.transactions.len() as u32);
    for tx in &block.transactions {
        write_tx(&mut w, tx);
    }
    w.0
}

pub fn deserialize_block(bytes: &[u8]) -> Result<Block, DecodeError> {
    let mut r = Reader::new(bytes);
    let header = read_header(&mut r)?;
    let n = r.count()?;
    let mut transactions = Vec::with_capacity((n as usize).min(r.remaining() / 24));
    for _ in 0..n {
        transactions.push(read_tx(&mut r)?);
    }
    r.finish()?;
    Ok(Block { header, transactions })
}

pub fn txid(tx: &Transaction) -> Digest32 {
    hash256(&serialize_tx(tx))
}

/// Hash of the 88-byte header only; the body is bound through `tx_commitment`.
pub fn block_hash(header: &BlockHeader) -> Digest32 {
    hash256(&header.serialize())
}

/// Flat commitment: `hash256` over the concatenated txids in block order.
pub fn tx_commitment(txs: &[Transaction]) -> Result<Digest32, ModelError> {
    if txs.is_empty() {
        return Err(ModelError::EmptyTransactionList);
    }
    let mut buf = Vec::with_capacity(32 * txs.len());
    for tx in txs {
        buf.extend_from_slice(&tx.txid().0);
    }
    Ok(hash256(&buf))
}

/// Builds block #0: a single coinbase carrying `message` in its unlocking
/// script, paying the initial subsidy to an unspendable script, mined
/// against `params.max_target`.
pub fn make_genesis(params: &ChainParams, message: &str, timestamp: u64) -> Result<Block, ModelError> {
    let bytes = message.as_bytes();
    if bytes.is_empty() || bytes.len() > MAX_GENESIS_MESSAGE {
        return Err(ModelError::BadGenesisMessage(bytes.len()));
    }
    let coinbase = Transaction {
        version: 1,
        lock_time: 0,
        inputs: vec![TxInput {
            prevout: OutPoint::COINBASE,
            script_sig: Script::builder().push_data(bytes).into_script(),
        }],
        outputs: vec![TxOutput { amount: params.initial_subsidy, script_pubkey: Script::unspendable() }],
    };
    let transactions = vec![coinbase];
    let mut header = BlockHeader {
        version: 1,
        prev_hash: Digest32::ZERO,
        tx_commitment: tx_commitment(&transactions)?,
        time: timestamp,
        bits: params.max_bits(),
        nonce: 0,
    };
    while !check_pow(&header, params) {
        header.nonce += 1;
    }
    Ok(Block { header, transactions })
}

/// Recovers the message embedded in a genesis coinbase.
pub fn genesis_message(genesis: &Block) -> Option<Vec<u8>> {
    let script = &genesis.coinbase()?.inputs.first()?.script_sig;
    script.pushes().ok()?.into_iter().next()
}

/// Digest signed by input `input_index`: the transaction with every unlocking
/// script emptied, followed by the input index and the sighash type.
pub fn sighash(tx: &Transaction, input_index: usize) -> Result<Digest32, ModelError> {
    if input_index >= tx.inputs.len() {
        return Err(ModelError::InputIndexOutOfRange { index: input_index, inputs: tx.inputs.len() });
    }
    let mut stripped = tx.clone();
    for input in &mut stripped.inputs {
        input.script_sig = Script::default();
    }
    let mut w = Writer::default();
    write_tx(&mut w, &stripped);
    w.u32(input_index as u32);
    w.u32(SIGHASH_ALL);
    Ok(hash256(&w.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::script::make_p2pkh;

    fn fixture_tx() -> Transaction {
        let key = KeyPair::generate(b"alice").unwrap();
        Transaction {
            version: 1,
            lock_time: 0,
            inputs: vec![TxInput {
                prevout: OutPoint::new(hash256(b"prev"), 0),
                script_sig: Script::from(vec![0x01, 0xAB]),
            }],
            outputs: vec![TxOutput { amount: COIN, script_pubkey: make_p2pkh(&key.public_key().hash()) }],
        }
    }

    #[test]
    fn header_is_88_bytes() {
        let h = BlockHeader {
            version: 1,
            prev_hash: Digest32::ZERO,
            tx_commitment: Digest32::ZERO,
            time: 0,
            bits: 0,
            nonce: 0,
        };
        assert_eq!(h.serialize().len(), HEADER_SIZE);
        assert_eq!(deserialize_header(&h.serialize()).unwrap(), h);
    }

    #[test]
    fn truncation_and_trailing_are_distinct() {
        let bytes = fixture_tx().serialize();
        assert!(matches!(deserialize_tx(&bytes[..bytes.len() - 1]), Err(DecodeError::Truncated { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(deserialize_tx(&extra), Err(DecodeError::TrailingBytes(1)));

        let mut huge = bytes.clone();
        huge[12..16].copy_from_slice(&u32::MAX.to_le_bytes());
        assert_eq!(deserialize_tx(&huge), Err(DecodeError::CountOverflow(u32::MAX)));
    }

    #[test]
    fn txid_is_sensitive_to_amounts() {
        let tx = fixture_tx();
        assert_eq!(tx.txid(), tx.clone().txid());
        let mut other = tx.clone();
        other.outputs[0].amount += 1;
        assert_ne!(tx.txid(), other.txid());
    }

    #[test]
    fn commitment_rules() {
        let a = fixture_tx();
        let mut b = fixture_tx();
        b.lock_time = 5;
        assert_eq!(tx_commitment(std::slice::from_ref(&a)).unwrap(), hash256(&a.txid().0));
        assert_ne!(tx_commitment(&[a.clone(), b.clone()]).unwrap(), tx_commitment(&[b, a]).unwrap());
        assert_eq!(tx_commitment(&[]), Err(ModelError::EmptyTransactionList));
    }

    #[test]
    fn block_hash_ignores_body() {
        let genesis = make_genesis(&ChainParams::simnet(), GENESIS_MESSAGE, 0).unwrap();
        let mut tampered = genesis.clone();
        tampered.transactions[0].outputs[0].amount -= 1;
        assert_eq!(genesis.hash(), tampered.hash());
        assert_ne!(tx_commitment(&tampered.transactions).unwrap(), tampered.header.tx_commitment);

        let mut renonced = genesis.header;
        renonced.nonce += 1;
        assert_ne!(renonced.hash(), genesis.hash());
    }

    #[test]
    fn genesis_carries_message() {
        let params = ChainParams::simnet();
        let genesis = make_genesis(&params, GENESIS_MESSAGE, 0).unwrap();
        assert_eq!(genesis.header.prev_hash, Digest32::ZERO);
        assert_eq!(genesis_message(&genesis).unwrap(), GENESIS_MESSAGE.as_bytes());
        assert_eq!(genesis.transactions.len(), 1);
        assert!(genesis.transactions[0].is_coinbase());
        assert_eq!(genesis.transactions[0].outputs[0].amount, params.initial_subsidy);
        assert!(check_pow(&genesis.header, &params));

        let long = "x".repeat(MAX_GENESIS_MESSAGE);
        let g = make_genesis(&params, &long, 0).unwrap();
        assert_eq!(genesis_message(&g).unwrap(), long.as_bytes());
        assert_eq!(
            make_genesis(&params, &"x".repeat(MAX_GENESIS_MESSAGE + 1), 0),
            Err(ModelError::BadGenesisMessage(1001))
        );
        assert_eq!(make_genesis(&params, "", 0), Err(ModelError::BadGenesisMessage(0)));
    }

    #[test]
    fn sighash_clears_scripts_and_covers_outputs() {
        let mut tx = fixture_tx();
        tx.inputs.push(TxInput { prevout: OutPoint::new(hash256(b"p2"), 1), script_sig: Script::default() });
        let d0 = sighash(&tx, 0).unwrap();
        let d1 = sighash(&tx, 1).unwrap();
        assert_ne!(d0, d1);

        let mut rescripted = tx.clone();
        rescripted.inputs[0].script_sig = Script::from(vec![0x51]);
        assert_eq!(sighash(&rescripted, 0).unwrap(), d0);

        let mut repaid = tx.clone();
        repaid.outputs[0].amount -= 1;
        assert_ne!(sighash(&repaid, 0).unwrap(), d0);
        assert_ne!(sighash(&repaid, 1).unwrap(), d1);

        assert_eq!(sighash(&tx, 2), Err(ModelError::InputIndexOutOfRange { index: 2, inputs: 2 }));
    }

    #[test]
    fn coinbase_marker() {
        let cb = Transaction::coinbase(7, b"", vec![]);
        assert!(cb.is_coinbase());
        assert!(!fixture_tx().is_coinbase());
        assert_ne!(Transaction::coinbase(7, b"", vec![]).txid(), Transaction::coinbase(8, b"", vec![]).txid());
    }

    #[test]
    fn params_validate() {
        assert!(ChainParams::simnet().validate().is_ok());
        assert!(ChainParams::mainnet_like().validate().is_ok());
        let mut bad = ChainParams::simnet();
        bad.clamp_factor = 0;
        assert!(bad.validate().is_err());
        let mut greedy = ChainParams::mainnet_like();
        greedy.initial_subsidy += 1;
        assert!(greedy.validate().is_err());
    }
}
