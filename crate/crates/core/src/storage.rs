//! Append-only block file, log-structured key-value index, explorer queries.
//!
//! `blocks.dat` holds records `magic u32 ‖ length u32 ‖ block bytes`.
//! `index.kv` holds records `key_len u16 ‖ key ‖ val_len u32 ‖ value`,
//! replayed into memory on open with the last write for a key winning.
//! A record cut short by a crash is dropped and the file truncated back to
//! the last complete record.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use crate::consensus::{Chain, ChainState};
use crate::crypto::Digest32;
use crate::model::{deserialize_block, tx_commitment, Block, ChainParams, DecodeError};

pub const BLOCKS_FILE: &str = "blocks.dat";
pub const INDEX_FILE: &str = "index.kv";
pub const RECORD_HEADER: u64 = 8;
pub const MAX_KEY_LEN: usize = u16::MAX as usize;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("disk full")]
    DiskFull,
    #[error("I/O error: {0}")]
    Io(io::Error),
    #[error("corrupt record at offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },
    #[error("block {0} not found")]
    NotFound(String),
    #[error("key of {0} bytes exceeds the limit")]
    KeyTooLarge(usize),
    #[error("value of {0} bytes exceeds the limit")]
    ValueTooLarge(usize),
    #[error("inconsistent index entry: {0}")]
    Inconsistent(String),
    #[error("malformed block bytes: {0}")]
    Decode(#[from] DecodeError),
}

impl From<io::Error> for StorageError {
    fn from(e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::StorageFull {
            StorageError::DiskFull
        } else {
            StorageError::Io(e)
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize)]
pub struct BlockLocation {
    pub offset: u64,
    pub length: u32,
}

/// What reopening a file had to discard.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub struct Recovery {
    pub records: usize,
    pub truncated_bytes: u64,
}

pub struct BlockFile {
    file: File,
    magic: u32,
    len: u64,
    locations: Vec<BlockLocation>,
}

impl BlockFile {
    pub fn open(path: &Path, magic: u32) -> Result<(BlockFile, Recovery), StorageError> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;

        let mut locations = Vec::new();
        let mut pos: u64 = 0;
        let total = data.len() as u64;
        while pos + RECORD_HEADER <= total {
            let p = pos as usize;
            let found = u32::from_le_bytes(data[p..p + 4].try_into().unwrap());
            if found != magic {
                return Err(StorageError::Corrupt { offset: pos, reason: format!("bad magic {found:#010x}") });
            }
            let length = u32::from_le_bytes(data[p + 4..p + 8].try_into().unwrap());
            if pos + RECORD_HEADER + u64::from(length) > total {
                break;
            }
            locations.push(BlockLocation { offset: pos, length });
            pos += RECORD_HEADER + u64::from(length);
        }
        let recovery = Recovery { records: locations.len(), truncated_bytes: total - pos };
        if pos < total {
            file.set_len(pos)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((BlockFile { file, magic, len: pos, locations }, recovery))
    }

    pub fn append(&mut self, block: &Block) -> Result<BlockLocation, StorageError> {
        let bytes = block.serialize();
        let length = u32::try_from(bytes.len()).map_err(|_| StorageError::ValueTooLarge(bytes.len()))?;
        let mut record = Vec::with_capacity(bytes.len() + 8);
        record.extend_from_slice(&self.magic.to_le_bytes());
        record.extend_from_slice(&length.to_le_bytes());
        record.extend_from_slice(&bytes);
        self.file.seek(SeekFrom::Start(self.len))?;
        self.file.write_all(&record)?;
        let loc = BlockLocation { offset: self.len, length };
        self.len += record.len() as u64;
        self.locations.push(loc);
        Ok(loc)
    }

    pub fn flush(&mut self) -> Result<(), StorageError> {
        self.file.sync_data()?;
        Ok(())
    }

    pub fn read_raw(&mut self, loc: BlockLocation) -> Result<Vec<u8>, StorageError> {
        if loc.offset + RECORD_HEADER + u64::from(loc.length) > self.len {
            return Err(StorageError::Corrupt { offset: loc.offset, reason: "location past end of file".into() });
        }
        let mut header = [0u8; 8];
        self.file.seek(SeekFrom::Start(loc.offset))?;
        self.file.read_exact(&mut header)?;
        let magic = u32::from_le_bytes(header[..4].try_into().unwrap());
        let length = u32::from_le_bytes(header[4..].try_into().unwrap());
        if magic != self.magic || length != loc.length {
            return Err(StorageError::Corrupt { offset: loc.offset, reason: "record header mismatch".into() });
        }
        let mut bytes = vec![0u8; length as usize];
        self.file.read_exact(&mut bytes)?;
        self.file.seek(SeekFrom::End(0))?;
        Ok(bytes)
    }

    pub fn read(&mut self, loc: BlockLocation) -> Result<Block, StorageError> {
        let bytes = self.read_raw(loc)?;
        Ok(deserialize_block(&bytes)?)
    }

    pub fn locations(&self) -> &[BlockLocation] {
        &self.locations
    }

    pub fn len(&self) -> u64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Replayed append-only key-value log.
pub struct KvStore {
    file: File,
    map: BTreeMap<Vec<u8>, Vec<u8>>,
    len: u64,
}

impl KvStore {
    pub fn open(path: &Path) -> Result<(KvStore, Recovery), StorageError> {
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let mut data = Vec::new();
        file.read_to_end(&mut data)?;
        let mut map = BTreeMap::new();
        let mut pos = 0usize;
        let mut records = 0;
        while let Some(klen) = data.get(pos..pos + 2) {
            let klen = u16::from_le_bytes([klen[0], klen[1]]) as usize;
            let Some(vlen) = data.get(pos + 2 + klen..pos + 6 + klen) else { break };
            let vlen = u32::from_le_bytes(vlen.try_into().unwrap()) as usize;
            let end = pos + 6 + klen + vlen;
            if end > data.len() {
                break;
            }
            map.insert(data[pos + 2..pos + 2 + klen].to_vec(), data[pos + 6 + klen..end].to_vec());
            records += 1;
            pos = end;
        }
        let recovery = Recovery { records, truncated_bytes: (data.len() - pos) as u64 };
        if pos < data.len() {
            file.set_len(pos as u64)?;
            file.sync_data()?;
        }
        file.seek(SeekFrom::End(0))?;
        Ok((KvStore { file, map, len: pos as u64 }, recovery))
    }

    pub fn put(&mut self, key: &[u8], value: &[u8]) -> Result<(), StorageError> {
        if key.len() > MAX_KEY_LEN {
            return Err(StorageError::KeyTooLarge(key.len()));
        }
        let vlen = u32::try_from(value.len()).map_err(|_| StorageError::ValueTooLarge(value.len()))?;
        let mut record = Vec::with_capacity(6 + key.len() + value.len());
        record.extend_from_slice(&(key.len() as u16).to_le_bytes());
        record.extend_from_slice(key);
        record.extend_from_slice(&vlen.to_le_bytes());
        record.extend_from_slice(value);
        self.file.write_all(&record)?;
        self.len += record.len() as u64;
        self.map.insert(key.to_vec(), value.to_vec());
        Ok(())
    }

    pub fn get(&self, key: &[u8]) -> Option<&[u8]> {
        self.map.get(key).map(Vec::as_slice)
    }

    pub fn flush(&mut self) -> Result<(), StorageError> {
        self.file.sync_data()?;
        Ok(())
    }

    /// Entries whose key starts with `prefix`, in key order.
    pub fn scan_prefix<'a>(&'a self, prefix: &'a [u8]) -> impl Iterator<Item = (&'a [u8], &'a [u8])> + 'a {
        self.map
            .range(prefix.to_vec()..)
            .take_while(move |(k, _)| k.starts_with(prefix))
            .map(|(k, v)| (k.as_slice(), v.as_slice()))
    }

    pub fn entries(&self) -> &BTreeMap<Vec<u8>, Vec<u8>> {
        &self.map
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// First height at which [`Store::verify_active_chain`] found a problem.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("height {height}: {reason}")]
pub struct VerifyFailure {
    pub height: u64,
    pub reason: String,
}

/// Block-explorer view of one block.
#[derive(Clone, PartialEq, Eq, Debug, Serialize)]
pub struct ExplorerInfo {
    pub block_hash: String,
    pub height: u64,
    pub next_block: Option<String>,
    pub size_bytes: u32,
    pub prev_block: Option<String>,
    pub tx_count: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
struct IndexEntry {
    location: BlockLocation,
    height: u64,
    prev: Option<Digest32>,
}

impl IndexEntry {
    fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(52);
        v.extend_from_slice(&self.location.offset.to_le_bytes());
        v.extend_from_slice(&self.location.length.to_le_bytes());
        v.extend_from_slice(&self.height.to_le_bytes());
        v.extend_from_slice(&self.prev.unwrap_or(Digest32::ZERO).0);
        v
    }

    fn decode(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != 52 {
            return None;
        }
        let prev = Digest32::from_slice(&bytes[20..52])?;
        Some(IndexEntry {
            location: BlockLocation {
                offset: u64::from_le_bytes(bytes[0..8].try_into().ok()?),
                length: u32::from_le_bytes(bytes[8..12].try_into().ok()?),
            },
            height: u64::from_le_bytes(bytes[12..20].try_into().ok()?),
            prev: (prev != Digest32::ZERO).then_some(prev),
        })
    }
}

fn block_key(hash: &Digest32) -> Vec<u8> {
    format!("b:{}", hash.to_hex()).into_bytes()
}

fn height_key(height: u64) -> Vec<u8> {
    format!("h:{height}").into_bytes()
}

const TIP_KEY: &[u8] = b"tip";
const HEIGHT_KEY: &[u8] = b"height";

/// Block file plus metadata index in one data directory.
///
/// Keys: `b:<hash-hex>` → location/height/parent (branch-agnostic),
/// `h:<height>` → active-chain hash, `tip` → active tip, `height` → tip height.
/// `h:` entries above `height` are stale leftovers of a longer former chain.
pub struct Store {
    dir: PathBuf,
    blocks: BlockFile,
    index: KvStore,
}

impl Store {
    pub fn open(dir: &Path, magic: u32) -> Result<(Store, Recovery), StorageError> {
        fs::create_dir_all(dir)?;
        let (blocks, recovery) = BlockFile::open(&dir.join(BLOCKS_FILE), magic)?;
        let (index, _) = KvStore::open(&dir.join(INDEX_FILE))?;
        Ok((Store { dir: dir.to_path_buf(), blocks, index }, recovery))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn append_block(&mut self, block: &Block) -> Result<BlockLocation, StorageError> {
        let loc = self.blocks.append(block)?;
        self.blocks.flush()?;
        Ok(loc)
    }

    pub fn kv_put(&mut self, key: &[u8], value: &[u8]) -> Result<(), StorageError> {
        self.index.put(key, value)
    }

    pub fn kv_get(&self, key: &[u8]) -> Option<&[u8]> {
        self.index.get(key)
    }

    pub fn kv(&self) -> &KvStore {
        &self.index
    }

    pub fn blocks(&mut self) -> &mut BlockFile {
        &mut self.blocks
    }

    fn entry(&self, hash: &Digest32) -> Option<IndexEntry> {
        self.index.get(&block_key(hash)).and_then(IndexEntry::decode)
    }

    pub fn location(&self, hash: &Digest32) -> Option<BlockLocation> {
        self.entry(hash).map(|e| e.location)
    }

    pub fn is_indexed(&self, hash: &Digest32) -> bool {
        self.entry(hash).is_some()
    }

    pub fn tip(&self) -> Option<Digest32> {
        self.index.get(TIP_KEY).and_then(Digest32::from_slice)
    }

    pub fn tip_height(&self) -> Option<u64> {
        self.index.get(HEIGHT_KEY).and_then(|v| Some(u64::from_le_bytes(v.try_into().ok()?)))
    }

    pub fn hash_at_height(&self, height: u64) -> Option<Digest32> {
        if height > self.tip_height()? {
            return None;
        }
        self.index.get(&height_key(height)).and_then(Digest32::from_slice)
    }

    /// Records a stored block. `extends_active` marks it as the new active tip.
    pub fn index_block(
        &mut self,
        hash: &Digest32,
        height: u64,
        location: BlockLocation,
        prev: Option<Digest32>,
        extends_active: bool,
    ) -> Result<(), StorageError> {
        match prev {
            None if height != 0 => {
                return Err(StorageError::Inconsistent(format!("block {hash} at height {height} has no parent")));
            }
            Some(p) => {
                let parent = self
                    .entry(&p)
                    .ok_or_else(|| StorageError::Inconsistent(format!("parent {p} of {hash} is not indexed")))?;
                if parent.height + 1 != height {
                    return Err(StorageError::Inconsistent(format!(
                        "block {hash} claims height {height} but parent is at {}",
                        parent.height
                    )));
                }
                if extends_active && self.tip() != Some(p) {
                    return Err(StorageError::Inconsistent(format!("{hash} does not extend the active tip")));
                }
            }
            None => {}
        }
        self.index.put(&block_key(hash), &IndexEntry { location, height, prev }.encode())?;
        if extends_active {
            self.index.put(&height_key(height), &hash.0)?;
            self.index.put(TIP_KEY, &hash.0)?;
            self.index.put(HEIGHT_KEY, &height.to_le_bytes())?;
        }
        self.index.flush()
    }

    /// Points `h:*` at `hashes` starting from `from_height` and makes the
    /// last one the tip.
    pub fn set_active_chain(&mut self, from_height: u64, hashes: &[Digest32]) -> Result<(), StorageError> {
        for (i, hash) in hashes.iter().enumerate() {
            let height = from_height + i as u64;
            match self.entry(hash) {
                Some(e) if e.height == height => {}
                _ => return Err(StorageError::Inconsistent(format!("{hash} is not indexed at height {height}"))),
            }
            self.index.put(&height_key(height), &hash.0)?;
        }
        if let Some(last) = hashes.last() {
            self.index.put(TIP_KEY, &last.0)?;
            self.index.put(HEIGHT_KEY, &(from_height + hashes.len() as u64 - 1).to_le_bytes())?;
        }
        self.index.flush()
    }

    pub fn read_block(&mut self, hash: &Digest32) -> Result<Block, StorageError> {
        let loc = self.location(hash).ok_or_else(|| StorageError::NotFound(hash.to_hex()))?;
        self.blocks.read(loc)
    }

    /// Every complete block in file order.
    pub fn all_blocks(&mut self) -> Result<Vec<Block>, StorageError> {
        let locs = self.blocks.locations().to_vec();
        locs.into_iter().map(|loc| self.blocks.read(loc)).collect()
    }

    pub fn explorer_info(&mut self, hash: &Digest32) -> Result<ExplorerInfo, StorageError> {
        let entry = self.entry(hash).ok_or_else(|| StorageError::NotFound(hash.to_hex()))?;
        let block = self.blocks.read(entry.location)?;
        let on_active = self.hash_at_height(entry.height) == Some(*hash);
        let next_block = if on_active { self.hash_at_height(entry.height + 1).map(|h| h.to_hex()) } else { None };
        Ok(ExplorerInfo {
            block_hash: hash.to_hex(),
            height: entry.height,
            next_block,
            size_bytes: entry.location.length,
            prev_block: entry.prev.map(|p| p.to_hex()),
            tx_count: block.transactions.len() as u32,
        })
    }

    /// Replays every stored block through fork choice and writes a fresh
    /// index. The old index file is replaced atomically.
    pub fn rebuild_index(&mut self, params: &ChainParams) -> Result<Chain, StorageError> {
        let chain = replay_blocks(&mut self.blocks, params)?;
        let tmp = self.dir.join(format!("{INDEX_FILE}.tmp"));
        let _ = fs::remove_file(&tmp);
        let (mut fresh, _) = KvStore::open(&tmp)?;
        write_index(&mut fresh, &chain, &mut self.blocks)?;
        fresh.flush()?;
        drop(fresh);
        fs::rename(&tmp, self.dir.join(INDEX_FILE))?;
        let (index, _) = KvStore::open(&self.dir.join(INDEX_FILE))?;
        self.index = index;
        Ok(chain)
    }

    /// Re-reads the active chain from disk and validates it from genesis.
    /// Each block must hash to the value indexed at its height and connect
    /// to its parent. Returns the verified tip height.
    pub fn verify_active_chain(&mut self, params: &ChainParams) -> Result<u64, VerifyFailure> {
        let fail = |height: u64, reason: String| VerifyFailure { height, reason };
        let tip = self.tip_height().ok_or_else(|| fail(0, "empty index".into()))?;
        let mut state: Option<ChainState> = None;
        for height in 0..=tip {
            let hash = self.hash_at_height(height).ok_or_else(|| fail(height, "height not indexed".into()))?;
            let loc = self.location(&hash).ok_or_else(|| fail(height, "block not indexed".into()))?;
            let bytes = self.blocks.read_raw(loc).map_err(|e| fail(height, e.to_string()))?;
            let block = deserialize_block(&bytes).map_err(|e| fail(height, e.to_string()))?;
            if block.hash() != hash {
                return Err(fail(height, "hash differs from index".into()));
            }
            match state.as_mut() {
                None => {
                    if tx_commitment(&block.transactions).ok() != Some(block.header.tx_commitment) {
                        return Err(fail(0, "genesis commitment mismatch".into()));
                    }
                    state = Some(ChainState::new(params.clone(), &block));
                }
                Some(s) => {
                    s.validate_and_connect(&block, block.header.time).map_err(|e| fail(height, e.to_string()))?
                }
            }
        }
        Ok(tip)
    }

    /// True when every block in the file is indexed and the tip resolves.
    pub fn index_is_coherent(&mut self) -> bool {
        let locs = self.blocks.locations().to_vec();
        for loc in locs {
            let Ok(block) = self.blocks.read(loc) else { return false };
            if self.location(&block.hash()) != Some(loc) {
                return false;
            }
        }
        self.blocks.locations().is_empty() || self.tip().is_some_and(|t| self.is_indexed(&t))
    }
}

/// Builds fork-choice state from the file's blocks in order. The first
/// record is genesis; blocks that fail validation are skipped.
pub fn replay_blocks(blocks: &mut BlockFile, params: &ChainParams) -> Result<Chain, StorageError> {
    let locs = blocks.locations().to_vec();
    let mut iter = locs.into_iter();
    let first = iter.next().ok_or_else(|| StorageError::NotFound("genesis".into()))?;
    let mut chain = Chain::new(params.clone(), blocks.read(first)?);
    for loc in iter {
        let block = blocks.read(loc)?;
        let now = block.header.time;
        let _ = chain.accept_block(block, now);
    }
    Ok(chain)
}

fn write_index(kv: &mut KvStore, chain: &Chain, blocks: &mut BlockFile) -> Result<(), StorageError> {
    let locs = blocks.locations().to_vec();
    for loc in locs {
        let block = blocks.read(loc)?;
        let hash = block.hash();
        let Some(height) = chain.block_height(&hash) else { continue };
        let prev = (height > 0).then_some(block.header.prev_hash);
        kv.put(&block_key(&hash), &IndexEntry { location: loc, height, prev }.encode())?;
    }
    let active = chain.state().active_hashes();
    for (height, hash) in active.iter().enumerate() {
        kv.put(&height_key(height as u64), &hash.0)?;
    }
    kv.put(TIP_KEY, &chain.tip().0)?;
    kv.put(HEIGHT_KEY, &chain.height().to_le_bytes())?;
    Ok(())
}
