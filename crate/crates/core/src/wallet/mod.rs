//! Keys, owned outputs, payment construction and signing.

mod channel;

use std::collections::{BTreeMap, HashSet};

use thiserror::Error;

pub use channel::{channel_open, payee_refund_signature, Channel, ChannelError, ChannelProposal, ChannelState};

use crate::consensus::{ChainState, UtxoEntry};
use crate::crypto::{Address, Digest20, KeyError, KeyPair, PublicKey, P2PKH_VERSION};
use crate::model::{sighash, OutPoint, Transaction, TxInput, TxOutput};
use crate::script::{make_multisig, make_p2pkh, p2sh_address, script_for_address, Script, TemplateError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WalletError {
    #[error("insufficient funds: have {available}, need {required}")]
    InsufficientFunds { available: u64, required: u64 },
    #[error("payment amount must be positive")]
    ZeroAmount,
    #[error("unknown address version {0:#04x}")]
    UnknownAddressVersion(u8),
    #[error("no key or redeem script to sign input {input}")]
    MissingKey { input: usize },
    #[error("unknown key label {0}")]
    UnknownLabel(String),
    #[error(transparent)]
    Key(#[from] KeyError),
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// An unspent output the wallet can spend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OwnedOutput {
    pub outpoint: OutPoint,
    pub entry: UtxoEntry,
}

#[derive(Clone, Debug, Default)]
pub struct Wallet {
    keys: BTreeMap<String, KeyPair>,
    redeem_scripts: BTreeMap<Digest20, Script>,
    change_label: Option<String>,
}

impl Wallet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds (or replaces) the key derived from `seed` under `label`. The
    /// first key added receives change.
    pub fn add_key(&mut self, label: &str, seed: &[u8]) -> Result<&KeyPair, WalletError> {
        let key = KeyPair::generate(seed)?;
        if self.change_label.is_none() {
            self.change_label = Some(label.to_string());
        }
        self.keys.insert(label.to_string(), key);
        Ok(&self.keys[label])
    }

    pub fn key(&self, label: &str) -> Option<&KeyPair> {
        self.keys.get(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.keys.keys().map(String::as_str)
    }

    pub fn set_change_label(&mut self, label: &str) -> Result<(), WalletError> {
        if !self.keys.contains_key(label) {
            return Err(WalletError::UnknownLabel(label.into()));
        }
        self.change_label = Some(label.into());
        Ok(())
    }

    pub fn address(&self, label: &str) -> Option<Address> {
        self.key(label).map(|k| Address::new(P2PKH_VERSION, k.public_key().hash()))
    }

    fn change_key(&self) -> Option<&KeyPair> {
        self.change_label.as_deref().and_then(|l| self.keys.get(l))
    }

    fn key_for_hash(&self, hash: &Digest20) -> Option<&KeyPair> {
        self.keys.values().find(|k| k.public_key().hash() == *hash)
    }

    fn key_for_pubkey(&self, pubkey: &PublicKey) -> Option<&KeyPair> {
        self.keys.values().find(|k| k.public_key() == *pubkey)
    }

    /// Remembers a redeem script so outputs paying its hash count as owned.
    pub fn watch_redeem(&mut self, redeem: Script) -> Digest20 {
        let hash = crate::crypto::hash20(redeem.as_bytes());
        self.redeem_scripts.insert(hash, redeem);
        hash
    }

    pub fn redeem_script(&self, hash: &Digest20) -> Option<&Script> {
        self.redeem_scripts.get(hash)
    }

    /// Whether the wallet can produce an accepted unlocking script for `script`.
    pub fn can_spend(&self, script: &Script) -> bool {
        if let Some(h) = script.p2pkh_hash() {
            return self.key_for_hash(&h).is_some();
        }
        if let Some(pk) = script.p2pk_key() {
            return self.key_for_pubkey(&pk).is_some();
        }
        if let Some(h) = script.p2sh_hash() {
            let Some((m, keys)) = self.redeem_scripts.get(&h).and_then(Script::multisig_params) else {
                return false;
            };
            return keys.iter().filter(|k| self.key_for_pubkey(k).is_some()).count() >= m;
        }
        false
    }

    /// Every unspent output on the active chain the wallet can spend, in outpoint order.
    pub fn owned_outputs(&self, state: &ChainState) -> Vec<OwnedOutput> {
        state
            .utxos()
            .iter()
            .filter(|(_, e)| self.can_spend(&e.output.script_pubkey))
            .map(|(op, e)| OwnedOutput { outpoint: *op, entry: e.clone() })
            .collect()
    }

    pub fn balance(&self, state: &ChainState) -> u64 {
        self.owned_outputs(state).iter().map(|o| o.entry.output.amount).sum()
    }

    /// Owned outputs spendable in the next block: mature, and not in `exclude`.
    pub fn spendable(&self, state: &ChainState, exclude: &HashSet<OutPoint>) -> Vec<OwnedOutput> {
        let next = state.height() + 1;
        let maturity = state.params().coinbase_maturity;
        self.owned_outputs(state)
            .into_iter()
            .filter(|o| !exclude.contains(&o.outpoint))
            .filter(|o| !o.entry.is_coinbase || next >= o.entry.height + maturity)
            .collect()
    }
}

/// Largest-first selection covering `target`. Ties keep outpoint order.
pub fn select_coins(mut candidates: Vec<OwnedOutput>, target: u64) -> Result<Vec<OwnedOutput>, WalletError> {
    candidates.sort_by(|a, b| b.entry.output.amount.cmp(&a.entry.output.amount).then(a.outpoint.cmp(&b.outpoint)));
    let available: u64 = candidates.iter().map(|c| c.entry.output.amount).sum();
    let mut picked = Vec::new();
    let mut total = 0u64;
    for c in candidates {
        if total >= target {
            break;
        }
        total += c.entry.output.amount;
        picked.push(c);
    }
    if total < target {
        return Err(WalletError::InsufficientFunds { available, required: target });
    }
    Ok(picked)
}

/// Builds an unsigned payment of `amount` to `dest` paying `fee`, with change
/// back to the wallet's change key when there is any.
pub fn build_payment(
    wallet: &Wallet,
    state: &ChainState,
    dest: &Address,
    amount: u64,
    fee: u64,
    exclude: &HashSet<OutPoint>,
) -> Result<Transaction, WalletError> {
    if amount == 0 {
        return Err(WalletError::ZeroAmount);
    }
    let dest_script = script_for_address(dest).ok_or(WalletError::UnknownAddressVersion(dest.version))?;
    build_to_script(wallet, state, dest_script, amount, fee, exclude)
}

pub(crate) fn build_to_script(
    wallet: &Wallet,
    state: &ChainState,
    dest_script: Script,
    amount: u64,
    fee: u64,
    exclude: &HashSet<OutPoint>,
) -> Result<Transaction, WalletError> {
    let required =
        amount.checked_add(fee).ok_or(WalletError::InsufficientFunds { available: 0, required: u64::MAX })?;
    let picked = select_coins(wallet.spendable(state, exclude), required)?;
    let total: u64 = picked.iter().map(|p| p.entry.output.amount).sum();
    let mut outputs = vec![TxOutput { amount, script_pubkey: dest_script }];
    let change = total - required;
    if change > 0 {
        let key = wallet.change_key().ok_or(WalletError::MissingKey { input: 0 })?;
        outputs.push(TxOutput { amount: change, script_pubkey: make_p2pkh(&key.public_key().hash()) });
    }
    Ok(Transaction {
        version: 1,
        lock_time: 0,
        inputs: picked.into_iter().map(|p| TxInput { prevout: p.outpoint, script_sig: Script::default() }).collect(),
        outputs,
    })
}

/// Multisig unlocking script: signatures from the wallet's keys in redeem
/// key order (the first `m` available), followed by the redeem script.
pub fn multisig_script_sig(
    wallet: &Wallet,
    redeem: &Script,
    tx: &Transaction,
    input: usize,
) -> Result<Script, WalletError> {
    let (m, keys) = redeem.multisig_params().ok_or(WalletError::MissingKey { input })?;
    let digest = sighash(tx, input).map_err(|_| WalletError::MissingKey { input })?;
    let sigs: Vec<Vec<u8>> =
        keys.iter().filter_map(|pk| wallet.key_for_pubkey(pk)).take(m).map(|k| k.sign(&digest).0).collect();
    if sigs.len() < m {
        return Err(WalletError::MissingKey { input });
    }
    let mut b = Script::builder();
    for sig in &sigs {
        b = b.push_data(sig);
    }
    Ok(b.push_data(redeem.as_bytes()).into_script())
}

/// Fills every input's unlocking script. Each input's locking script is
/// looked up in `state`.
pub fn sign_all(wallet: &Wallet, tx: &Transaction, state: &ChainState) -> Result<Transaction, WalletError> {
    let mut signed = tx.clone();
    for (i, input) in tx.inputs.iter().enumerate() {
        let entry = state.utxo(&input.prevout).ok_or(WalletError::MissingKey { input: i })?;
        signed.inputs[i].script_sig = sign_input(wallet, tx, i, &entry.output.script_pubkey)?;
    }
    Ok(signed)
}

/// Unlocking script for input `i` spending an output locked by `lock`.
pub fn sign_input(wallet: &Wallet, tx: &Transaction, i: usize, lock: &Script) -> Result<Script, WalletError> {
    let digest = || sighash(tx, i).map_err(|_| WalletError::MissingKey { input: i });
    if let Some(h) = lock.p2pkh_hash() {
        let key = wallet.key_for_hash(&h).ok_or(WalletError::MissingKey { input: i })?;
        let sig = key.sign(&digest()?);
        return Ok(Script::builder().push_data(&sig.0).push_data(&key.public_key().0).into_script());
    }
    if let Some(pk) = lock.p2pk_key() {
        let key = wallet.key_for_pubkey(&pk).ok_or(WalletError::MissingKey { input: i })?;
        return Ok(Script::builder().push_data(&key.sign(&digest()?).0).into_script());
    }
    if let Some(h) = lock.p2sh_hash() {
        let redeem = wallet.redeem_script(&h).ok_or(WalletError::MissingKey { input: i })?;
        return multisig_script_sig(wallet, redeem, tx, i);
    }
    Err(WalletError::MissingKey { input: i })
}

/// M-of-N redeem script and its pay-to-script-hash address.
pub fn create_multisig(m: usize, pubkeys: &[PublicKey]) -> Result<(Script, Address), WalletError> {
    let redeem = make_multisig(m, pubkeys)?;
    let address = p2sh_address(&redeem)?;
    Ok((redeem, address))
}
