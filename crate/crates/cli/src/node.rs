//! A data directory opened as one node: chain, wallet and mempool.
//!
//! Files: `blocks.dat` and `index.kv` from the storage module, plus
//! `wallet.kv` (key seeds, watched redeem scripts, channels) and
//! `mempool.kv` (pending transactions by arrival, an empty value marking
//! removal).

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use minichain::consensus::{mine_block, AcceptStatus, Chain};
use minichain::mempool::Mempool;
use minichain::model::{deserialize_tx, make_genesis};
use minichain::storage::{replay_blocks, KvStore, Store, BLOCKS_FILE};
use minichain::wallet::{Channel, Wallet};
use minichain::{Block, ChainParams, Digest32, OutPoint, PublicKey, Script, Transaction};

use crate::CliError;

pub const WALLET_FILE: &str = "wallet.kv";
pub const MEMPOOL_FILE: &str = "mempool.kv";
pub const DEFAULT_LABEL: &str = "default";
const MAX_BLOCK_TXS: usize = 1000;

pub struct Node {
    pub params: ChainParams,
    pub store: Store,
    pub chain: Chain,
    pub wallet: Wallet,
    wallet_kv: KvStore,
    pub mempool: Mempool,
    mempool_kv: KvStore,
    pool_keys: BTreeMap<Digest32, Vec<u8>>,
    next_seq: u64,
}

fn open_kv(dir: &Path, name: &str) -> Result<KvStore, CliError> {
    Ok(KvStore::open(&dir.join(name))?.0)
}

impl Node {
    pub fn is_initialized(dir: &Path) -> bool {
        std::fs::metadata(dir.join(BLOCKS_FILE)).is_ok_and(|m| m.len() > 0)
    }

    /// Creates genesis and the default wallet key.
    pub fn init(dir: &Path, params: &ChainParams, message: &str, seed: u64) -> Result<Block, CliError> {
        if Self::is_initialized(dir) {
            return Err(CliError::User(format!("{} already holds a chain", dir.display())));
        }
        let genesis = make_genesis(params, message, 0).map_err(|e| CliError::User(e.to_string()))?;
        let (mut store, _) = Store::open(dir, params.network_magic)?;
        let loc = store.append_block(&genesis)?;
        store.index_block(&genesis.hash(), 0, loc, None, true)?;
        let mut kv = open_kv(dir, WALLET_FILE)?;
        kv.put(b"seed", seed.to_string().as_bytes())?;
        kv.put(format!("key:{DEFAULT_LABEL}").as_bytes(), key_seed(seed, DEFAULT_LABEL).as_bytes())?;
        kv.flush()?;
        Ok(genesis)
    }

    pub fn open(dir: &Path, params: &ChainParams) -> Result<Node, CliError> {
        if !Self::is_initialized(dir) {
            return Err(CliError::User(format!("{} holds no chain; run `minichain init` first", dir.display())));
        }
        let (mut store, recovery) = Store::open(dir, params.network_magic)?;
        if recovery.truncated_bytes > 0 {
            eprintln!("warning: discarded {} bytes of a torn block record", recovery.truncated_bytes);
        }
        let replayed = if store.index_is_coherent() { Some(replay_blocks(store.blocks(), params)?) } else { None };
        let chain = match replayed {
            Some(chain) if store.tip() == Some(chain.tip()) => chain,
            _ => {
                eprintln!("warning: block index disagreed with {BLOCKS_FILE}; rebuilt it");
                store.rebuild_index(params)?
            }
        };

        let wallet_kv = open_kv(dir, WALLET_FILE)?;
        let mut wallet = Wallet::new();
        for (k, v) in wallet_kv.scan_prefix(b"key:") {
            let label = String::from_utf8_lossy(&k[4..]).into_owned();
            wallet.add_key(&label, v).map_err(|e| CliError::User(e.to_string()))?;
        }
        if wallet.key(DEFAULT_LABEL).is_some() {
            wallet.set_change_label(DEFAULT_LABEL).map_err(|e| CliError::User(e.to_string()))?;
        }
        for (_, v) in wallet_kv.scan_prefix(b"redeem:") {
            wallet.watch_redeem(Script::new(v.to_vec()));
        }

        let mempool_kv = open_kv(dir, MEMPOOL_FILE)?;
        let mut node = Node {
            params: params.clone(),
            store,
            chain,
            wallet,
            wallet_kv,
            mempool: Mempool::new(),
            mempool_kv,
            pool_keys: BTreeMap::new(),
            next_seq: 0,
        };
        node.load_mempool()?;
        Ok(node)
    }

    fn load_mempool(&mut self) -> Result<(), CliError> {
        let entries: Vec<(Vec<u8>, Vec<u8>)> =
            self.mempool_kv.scan_prefix(b"tx:").map(|(k, v)| (k.to_vec(), v.to_vec())).collect();
        let now = self.next_time();
        for (key, value) in entries {
            self.next_seq += 1;
            if value.is_empty() {
                continue;
            }
            let admitted = deserialize_tx(&value)
                .ok()
                .and_then(|tx| self.mempool.add(tx.clone(), self.chain.state(), now).ok().map(|_| tx.txid()));
            match admitted {
                Some(txid) => {
                    self.pool_keys.insert(txid, key);
                }
                None => self.mempool_kv.put(&key, &[])?,
            }
        }
        Ok(())
    }

    /// Timestamp the next mined block carries: parent time plus one spacing.
    pub fn next_time(&self) -> u64 {
        self.chain.state().tip_header().time + self.params.target_spacing
    }

    /// Outpoints already claimed by pending transactions.
    pub fn pending_spends(&self) -> HashSet<OutPoint> {
        self.mempool.iter().flat_map(|e| e.tx.inputs.iter().map(|i| i.prevout)).collect()
    }

    /// Validates `tx` into the mempool and persists it. Returns the fee.
    pub fn submit(&mut self, tx: Transaction) -> Result<u64, CliError> {
        let txid = tx.txid();
        let fee = self
            .mempool
            .add(tx.clone(), self.chain.state(), self.next_time())
            .map_err(|e| CliError::User(format!("transaction rejected: {e}")))?;
        let key = format!("tx:{:016}", self.next_seq).into_bytes();
        self.next_seq += 1;
        self.mempool_kv.put(&key, &tx.serialize())?;
        self.mempool_kv.flush()?;
        self.pool_keys.insert(txid, key);
        Ok(fee)
    }

    /// Mines one block on the tip from the mempool, oldest first, and stores it.
    pub fn mine_one(&mut self, payout: Script) -> Result<Block, CliError> {
        let entries: Vec<_> = self.mempool.iter().take(MAX_BLOCK_TXS).collect();
        let fees = entries.iter().map(|e| e.fee).sum();
        let txs = entries.into_iter().map(|e| e.tx.clone()).collect();
        let time = self.next_time();
        let block = mine_block(self.chain.state(), txs, fees, payout, time, b"minichain-cli");
        let out = self.chain.accept_block(block.clone(), time).map_err(|e| CliError::User(e.to_string()))?;
        if out.status != AcceptStatus::Extended {
            return Err(CliError::User(format!("mined block was not connected: {:?}", out.status)));
        }
        let loc = self.store.append_block(&block)?;
        self.store.index_block(&block.hash(), self.chain.height(), loc, Some(block.header.prev_hash), true)?;
        for txid in self.mempool.remove_for_block(&block) {
            if let Some(key) = self.pool_keys.remove(&txid) {
                self.mempool_kv.put(&key, &[])?;
            }
        }
        self.mempool_kv.flush()?;
        Ok(block)
    }

    fn base_seed(&self) -> String {
        self.wallet_kv.get(b"seed").map(|v| String::from_utf8_lossy(v).into_owned()).unwrap_or_else(|| "0".into())
    }

    /// Returns `label`'s key, deriving and saving it first if it is new.
    pub fn ensure_key(&mut self, label: &str) -> Result<PublicKey, CliError> {
        if label.is_empty() || label.contains(char::is_whitespace) {
            return Err(CliError::User(format!("bad key label {label:?}")));
        }
        if let Some(k) = self.wallet.key(label) {
            return Ok(k.public_key());
        }
        let seed = key_seed_text(&self.base_seed(), label);
        self.wallet.add_key(label, seed.as_bytes()).map_err(|e| CliError::User(e.to_string()))?;
        if self.wallet.key(DEFAULT_LABEL).is_some() {
            let _ = self.wallet.set_change_label(DEFAULT_LABEL);
        }
        self.wallet_kv.put(format!("key:{label}").as_bytes(), seed.as_bytes())?;
        self.wallet_kv.flush()?;
        Ok(self.wallet.key(label).expect("just added").public_key())
    }

    pub fn label_for(&self, pk: &PublicKey) -> Option<String> {
        self.wallet.labels().find(|l| self.wallet.key(l).is_some_and(|k| k.public_key() == *pk)).map(str::to_string)
    }

    pub fn watch_redeem(&mut self, redeem: &Script) -> Result<(), CliError> {
        let hash = self.wallet.watch_redeem(redeem.clone());
        self.wallet_kv.put(format!("redeem:{}", hex::encode(hash.0)).as_bytes(), redeem.as_bytes())?;
        self.wallet_kv.flush()?;
        Ok(())
    }

    pub fn save_channel(&mut self, channel: &Channel) -> Result<String, CliError> {
        let id = channel.funding_outpoint().txid.to_hex();
        self.wallet_kv.put(format!("channel:{id}").as_bytes(), &channel.encode())?;
        self.wallet_kv.flush()?;
        Ok(id)
    }

    /// All stored channels, refreshed against the active chain.
    pub fn channels(&self) -> Result<Vec<(String, Channel)>, CliError> {
        let mut out = Vec::new();
        for (k, v) in self.wallet_kv.scan_prefix(b"channel:") {
            let id = String::from_utf8_lossy(&k[8..]).into_owned();
            let mut c = Channel::decode(v).map_err(|e| CliError::User(format!("channel {id}: {e}")))?;
            c.sync(self.chain.state());
            out.push((id, c));
        }
        Ok(out)
    }

    /// The channel whose id starts with `prefix`.
    pub fn channel(&self, prefix: &str) -> Result<(String, Channel), CliError> {
        let mut matches: Vec<_> = self.channels()?.into_iter().filter(|(id, _)| id.starts_with(prefix)).collect();
        match matches.len() {
            0 => Err(CliError::NotFound(format!("no channel {prefix}"))),
            1 => Ok(matches.remove(0)),
            _ => Err(CliError::User(format!("channel id {prefix} is ambiguous"))),
        }
    }
}

fn key_seed(seed: u64, label: &str) -> String {
    key_seed_text(&seed.to_string(), label)
}

fn key_seed_text(seed: &str, label: &str) -> String {
    format!("minichain:{seed}:{label}")
}
