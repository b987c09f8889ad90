//! Unidirectional micropayment channel built from a 2-of-2 multisig funding
//! output and a lock-timed refund.
//!
//! The funder locks `capacity` into `2-of-2(funder, payee)` behind a script
//! hash. Before the funding transaction may be broadcast, both parties sign a
//! refund that returns `capacity − fee` to the funder and only becomes final
//! at `refund_time`. Each payment is a fresh funder-signed commitment that
//! splits the funding output; the payee countersigns and broadcasts the
//! latest one to close. Refund and commitments all spend the same outpoint,
//! so at most one of them ever confirms.

use std::collections::HashSet;

use thiserror::Error;

use super::{build_to_script, sign_all, Wallet, WalletError};
use crate::consensus::ChainState;
use crate::crypto::{verify, PublicKey, Signature};
use crate::model::{sighash, OutPoint, Reader, Transaction, TxInput, TxOutput, Writer};
use crate::script::{make_multisig, make_p2pkh, make_p2sh, Script};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ChannelError {
    #[error("refund time {refund_time} is not after the current time {now}")]
    RefundTimeNotInFuture { refund_time: u64, now: u64 },
    #[error("capacity must exceed the fee")]
    CapacityTooSmall,
    #[error("payee refused to sign the refund")]
    PayeeRefused,
    #[error("funding may not be released before the refund carries both signatures")]
    RefundNotSigned,
    #[error("payee signature on the refund does not verify")]
    BadRefundSignature,
    #[error("payment would bring the payee to {requested}, above the limit {limit}")]
    OverCapacity { requested: u64, limit: u64 },
    #[error("payment increment must be positive")]
    ZeroIncrement,
    #[error("channel is {0:?}")]
    NotOpen(ChannelState),
    #[error("no commitment to close with")]
    NoCommitment,
    #[error("wallet lacks the key for {0}")]
    MissingKey(&'static str),
    #[error(transparent)]
    Wallet(#[from] WalletError),
    #[error("malformed channel record")]
    Decode,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ChannelState {
    Open,
    Closed,
    Refunded,
}

/// Funding and refund drafted by the funder, waiting for the payee's refund signature.
#[derive(Clone, Debug)]
pub struct ChannelProposal {
    funder: PublicKey,
    payee: PublicKey,
    redeem: Script,
    capacity: u64,
    fee: u64,
    refund_time: u64,
    funding_tx: Transaction,
    refund_tx: Transaction,
    funder_refund_sig: Vec<u8>,
    payee_refund_sig: Option<Vec<u8>>,
}

impl ChannelProposal {
    /// Drafts a channel from `funder_label` in `funder` to `payee`.
    /// Nothing is broadcast; the funding transaction stays locked inside the
    /// proposal until the payee has signed the refund.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        funder: &Wallet,
        funder_label: &str,
        payee: PublicKey,
        capacity: u64,
        refund_time: u64,
        fee: u64,
        state: &ChainState,
        now: u64,
        exclude: &HashSet<OutPoint>,
    ) -> Result<Self, ChannelError> {
        if refund_time <= now {
            return Err(ChannelError::RefundTimeNotInFuture { refund_time, now });
        }
        if capacity <= fee {
            return Err(ChannelError::CapacityTooSmall);
        }
        let funder_key = funder.key(funder_label).ok_or(ChannelError::MissingKey("funder"))?.public_key();
        let redeem = make_multisig(2, &[funder_key, payee]).map_err(WalletError::from)?;
        let lock = make_p2sh(&crate::crypto::hash20(redeem.as_bytes()));

        let unsigned = build_to_script(funder, state, lock, capacity, fee, exclude)?;
        let funding_tx = sign_all(funder, &unsigned, state)?;
        let funding = OutPoint::new(funding_tx.txid(), 0);

        let refund_tx = Transaction {
            version: 1,
            lock_time: refund_time,
            inputs: vec![TxInput { prevout: funding, script_sig: Script::default() }],
            outputs: vec![TxOutput { amount: capacity - fee, script_pubkey: make_p2pkh(&funder_key.hash()) }],
        };
        let funder_refund_sig = sign_with(funder, funder_label, &refund_tx)?;
        Ok(ChannelProposal {
            funder: funder_key,
            payee,
            redeem,
            capacity,
            fee,
            refund_time,
            funding_tx,
            refund_tx,
            funder_refund_sig,
            payee_refund_sig: None,
        })
    }

    /// The refund the payee is asked to sign.
    pub fn refund_tx(&self) -> &Transaction {
        &self.refund_tx
    }

    pub fn redeem_script(&self) -> &Script {
        &self.redeem
    }

    pub fn attach_payee_signature(&mut self, sig: Signature) -> Result<(), ChannelError> {
        let digest = sighash(&self.refund_tx, 0).expect("refund has one input");
        if !verify(&self.payee.0, &digest, &sig.0) {
            return Err(ChannelError::BadRefundSignature);
        }
        self.payee_refund_sig = Some(sig.0);
        Ok(())
    }

    /// The funding transaction, available only once the refund is fully signed.
    pub fn funding_tx(&self) -> Result<&Transaction, ChannelError> {
        match self.payee_refund_sig {
            Some(_) => Ok(&self.funding_tx),
            None => Err(ChannelError::RefundNotSigned),
        }
    }

    /// Turns the proposal into an open channel plus the funding transaction
    /// to broadcast.
    pub fn finish(self) -> Result<(Channel, Transaction), ChannelError> {
        let payee_sig = self.payee_refund_sig.clone().ok_or(ChannelError::RefundNotSigned)?;
        let mut refund_tx = self.refund_tx.clone();
        refund_tx.inputs[0].script_sig = two_of_two_sig(&self.funder_refund_sig, &payee_sig, &self.redeem);
        let channel = Channel {
            funder: self.funder,
            payee: self.payee,
            redeem: self.redeem,
            funding: OutPoint::new(self.funding_tx.txid(), 0),
            capacity: self.capacity,
            fee: self.fee,
            refund_time: self.refund_time,
            refund_tx,
            commitment_index: 0,
            payee_amount: 0,
            commitment: None,
            funder_commitment_sig: Vec::new(),
            state: ChannelState::Open,
        };
        Ok((channel, self.funding_tx))
    }
}

/// What a payee does when asked to sign a refund: check that it spends a
/// 2-of-2 including `payee_label`'s key, is lock-timed, and pays the funder,
/// then sign it.
pub fn payee_refund_signature(
    payee: &Wallet,
    payee_label: &str,
    refund: &Transaction,
    redeem: &Script,
) -> Option<Signature> {
    let key = payee.key(payee_label)?;
    let (m, keys) = redeem.multisig_params()?;
    if m != 2 || keys.len() != 2 || keys[1] != key.public_key() {
        return None;
    }
    if refund.lock_time == 0 || refund.inputs.len() != 1 || refund.outputs.len() != 1 {
        return None;
    }
    if refund.outputs[0].script_pubkey != make_p2pkh(&keys[0].hash()) {
        return None;
    }
    Some(key.sign(&sighash(refund, 0).ok()?))
}

fn sign_with(wallet: &Wallet, label: &str, tx: &Transaction) -> Result<Vec<u8>, ChannelError> {
    let key = wallet.key(label).ok_or(ChannelError::MissingKey("signer"))?;
    Ok(key.sign(&sighash(tx, 0).expect("channel transactions have one input")).0)
}

fn two_of_two_sig(funder_sig: &[u8], payee_sig: &[u8], redeem: &Script) -> Script {
    Script::builder().push_data(funder_sig).push_data(payee_sig).push_data(redeem.as_bytes()).into_script()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Channel {
    funder: PublicKey,
    payee: PublicKey,
    redeem: Script,
    funding: OutPoint,
    capacity: u64,
    fee: u64,
    refund_time: u64,
    refund_tx: Transaction,
    commitment_index: u64,
    payee_amount: u64,
    commitment: Option<Transaction>,
    funder_commitment_sig: Vec<u8>,
    state: ChannelState,
}

impl Channel {
    pub fn funding_outpoint(&self) -> OutPoint {
        self.funding
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn fee(&self) -> u64 {
        self.fee
    }

    pub fn refund_time(&self) -> u64 {
        self.refund_time
    }

    pub fn state(&self) -> ChannelState {
        self.state
    }

    pub fn commitment_index(&self) -> u64 {
        self.commitment_index
    }

    pub fn payee_amount(&self) -> u64 {
        self.payee_amount
    }

    pub fn funder_amount(&self) -> u64 {
        self.capacity - self.fee - self.payee_amount
    }

    pub fn funder_key(&self) -> PublicKey {
        self.funder
    }

    pub fn payee_key(&self) -> PublicKey {
        self.payee
    }

    pub fn redeem_script(&self) -> &Script {
        &self.redeem
    }

    /// The fully signed refund; final only from `refund_time` on.
    pub fn refund_tx(&self) -> &Transaction {
        &self.refund_tx
    }

    /// Latest funder-signed commitment (payee signature still missing).
    pub fn latest_commitment(&self) -> Option<&Transaction> {
        self.commitment.as_ref()
    }

    /// `funder_amount + payee_amount + fee = capacity`.
    pub fn is_conserved(&self) -> bool {
        self.funder_amount() + self.payee_amount + self.fee == self.capacity
    }

    /// Funder side of a payment: signs a new commitment moving `increment`
    /// more to the payee.
    pub fn pay(&mut self, funder: &Wallet, funder_label: &str, increment: u64) -> Result<&Transaction, ChannelError> {
        if self.state != ChannelState::Open {
            return Err(ChannelError::NotOpen(self.state));
        }
        if increment == 0 {
            return Err(ChannelError::ZeroIncrement);
        }
        let limit = self.capacity - self.fee;
        let requested = self.payee_amount.saturating_add(increment);
        if requested > limit {
            return Err(ChannelError::OverCapacity { requested, limit });
        }
        let key = funder.key(funder_label).ok_or(ChannelError::MissingKey("funder"))?;
        if key.public_key() != self.funder {
            return Err(ChannelError::MissingKey("funder"));
        }
        let mut outputs = vec![TxOutput { amount: requested, script_pubkey: make_p2pkh(&self.payee.hash()) }];
        if limit - requested > 0 {
            outputs.push(TxOutput { amount: limit - requested, script_pubkey: make_p2pkh(&self.funder.hash()) });
        }
        let tx = Transaction {
            version: 1,
            lock_time: 0,
            inputs: vec![TxInput { prevout: self.funding, script_sig: Script::default() }],
            outputs,
        };
        self.funder_commitment_sig = sign_with(funder, funder_label, &tx)?;
        self.payee_amount = requested;
        self.commitment_index += 1;
        self.commitment = Some(tx);
        Ok(self.commitment.as_ref().unwrap())
    }

    /// Payee side of closing: countersigns the latest commitment. The result
    /// is ready to broadcast.
    pub fn close(&self, payee: &Wallet, payee_label: &str) -> Result<Transaction, ChannelError> {
        if self.state != ChannelState::Open {
            return Err(ChannelError::NotOpen(self.state));
        }
        let commitment = self.commitment.as_ref().ok_or(ChannelError::NoCommitment)?;
        let key = payee.key(payee_label).ok_or(ChannelError::MissingKey("payee"))?;
        if key.public_key() != self.payee {
            return Err(ChannelError::MissingKey("payee"));
        }
        let payee_sig = sign_with(payee, payee_label, commitment)?;
        let mut tx = commitment.clone();
        tx.inputs[0].script_sig = two_of_two_sig(&self.funder_commitment_sig, &payee_sig, &self.redeem);
        Ok(tx)
    }

    /// Reads which transaction, if any, spent the funding output.
    pub fn sync(&mut self, state: &ChainState) -> ChannelState {
        if state.utxo(&self.funding).is_none() {
            let refund_out = OutPoint::new(self.refund_tx.txid(), 0);
            if state.utxo(&refund_out).is_some() {
                self.state = ChannelState::Refunded;
            } else if self.commitment.is_some() {
                self.state = ChannelState::Closed;
            }
        }
        self.state
    }

    pub fn mark_closed(&mut self) {
        self.state = ChannelState::Closed;
    }

    pub fn mark_refunded(&mut self) {
        self.state = ChannelState::Refunded;
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&self.funder.0);
        w.bytes(&self.payee.0);
        w.var_bytes(self.redeem.as_bytes());
        w.bytes(&self.funding.txid.0);
        w.u32(self.funding.index);
        w.u64(self.capacity);
        w.u64(self.fee);
        w.u64(self.refund_time);
        w.var_bytes(&self.refund_tx.serialize());
        w.u64(self.commitment_index);
        w.u64(self.payee_amount);
        w.var_bytes(&self.commitment.as_ref().map(Transaction::serialize).unwrap_or_default());
        w.var_bytes(&self.funder_commitment_sig);
        w.u32(match self.state {
            ChannelState::Open => 0,
            ChannelState::Closed => 1,
            ChannelState::Refunded => 2,
        });
        w.0
    }

    pub fn decode(bytes: &[u8]) -> Result<Channel, ChannelError> {
        let mut r = Reader::new(bytes);
        let d = |_| ChannelError::Decode;
        let key = |r: &mut Reader<'_>| -> Result<PublicKey, ChannelError> {
            PublicKey::from_slice(r.take(33).map_err(d)?).map_err(|_| ChannelError::Decode)
        };
        let funder = key(&mut r)?;
        let payee = key(&mut r)?;
        let redeem = Script::from(r.var_bytes().map_err(d)?);
        let funding = OutPoint::new(r.digest().map_err(d)?, r.u32().map_err(d)?);
        let capacity = r.u64().map_err(d)?;
        let fee = r.u64().map_err(d)?;
        let refund_time = r.u64().map_err(d)?;
        let refund_tx = crate::model::deserialize_tx(r.var_bytes().map_err(d)?).map_err(d)?;
        let commitment_index = r.u64().map_err(d)?;
        let payee_amount = r.u64().map_err(d)?;
        let commitment_bytes = r.var_bytes().map_err(d)?;
        let commitment = if commitment_bytes.is_empty() {
            None
        } else {
            Some(crate::model::deserialize_tx(commitment_bytes).map_err(d)?)
        };
        let funder_commitment_sig = r.var_bytes().map_err(d)?.to_vec();
        let state = match r.u32().map_err(d)? {
            0 => ChannelState::Open,
            1 => ChannelState::Closed,
            2 => ChannelState::Refunded,
            _ => return Err(ChannelError::Decode),
        };
        r.finish().map_err(d)?;
        if fee + payee_amount > capacity {
            return Err(ChannelError::Decode);
        }
        Ok(Channel {
            funder,
            payee,
            redeem,
            funding,
            capacity,
            fee,
            refund_time,
            refund_tx,
            commitment_index,
            payee_amount,
            commitment,
            funder_commitment_sig,
            state,
        })
    }
}

/// Runs the whole opening handshake: draft, ask the payee to sign the
/// refund via `payee_sign`, and only then release the funding transaction.
#[allow(clippy::too_many_arguments)]
pub fn channel_open(
    funder: &Wallet,
    funder_label: &str,
    payee: PublicKey,
    capacity: u64,
    refund_time: u64,
    fee: u64,
    state: &ChainState,
    now: u64,
    exclude: &HashSet<OutPoint>,
    payee_sign: impl FnOnce(&Transaction, &Script) -> Option<Signature>,
) -> Result<(Channel, Transaction), ChannelError> {
    let mut proposal =
        ChannelProposal::new(funder, funder_label, payee, capacity, refund_time, fee, state, now, exclude)?;
    let sig = payee_sign(proposal.refund_tx(), proposal.redeem_script()).ok_or(ChannelError::PayeeRefused)?;
    proposal.attach_payee_signature(sig)?;
    proposal.finish()
}
