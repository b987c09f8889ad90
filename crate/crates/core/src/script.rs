//! Stack-based script interpreter and standard output templates.
//!
//! A spend runs the unlocking script (`script_sig`) and then the locking
//! script (`script_pubkey`) on one shared stack, left to right. The spend is
//! accepted when execution completes and the top element is truthy. There is
//! no flow control, so every script terminates after at most
//! [`MAX_OPS`] instructions.

use std::fmt;

use thiserror::Error;

use crate::crypto::{encode_address, hash20, verify, Address, Digest20, Digest32, PublicKey, P2SH_VERSION};
use crate::model::{sighash, Transaction};

pub mod opcodes {
    pub const OP_0: u8 = 0x00;
    pub const OP_PUSHDATA1: u8 = 0x4c;
    pub const OP_PUSHDATA2: u8 = 0x4d;
    pub const OP_1: u8 = 0x51;
    pub const OP_16: u8 = 0x60;
    /// Never executed successfully; marks provably unspendable outputs.
    pub const OP_RETURN: u8 = 0x6a;
    pub const OP_DUP: u8 = 0x76;
    pub const OP_EQUAL: u8 = 0x87;
    pub const OP_EQUALVERIFY: u8 = 0x88;
    pub const OP_HASH20: u8 = 0xa9;
    pub const OP_CHECKSIG: u8 = 0xac;
    pub const OP_CHECKMULTISIG: u8 = 0xae;
}

use opcodes::*;

/// Instruction budget shared by the unlocking, locking and redeem scripts.
pub const MAX_OPS: usize = 1000;
pub const MAX_STACK: usize = 1000;
pub const MAX_ELEMENT_SIZE: usize = 520;
pub const MAX_REDEEM_SIZE: usize = 520;
pub const MAX_MULTISIG_KEYS: usize = 16;

#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Script(Vec<u8>);

impl Script {
    pub fn new(bytes: Vec<u8>) -> Self {
        Script(bytes)
    }

    pub fn builder() -> ScriptBuilder {
        ScriptBuilder::default()
    }

    /// A locking script no unlocking script can satisfy.
    pub fn unspendable() -> Self {
        Script(vec![OP_RETURN])
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_hex(&self) -> String {
        hex::encode(&self.0)
    }

    pub fn instructions(&self) -> Instructions<'_> {
        Instructions { bytes: &self.0, pos: 0 }
    }

    /// The pushed data items, if the script consists only of pushes.
    pub fn pushes(&self) -> Result<Vec<Vec<u8>>, ScriptFailure> {
        let mut out = Vec::new();
        for ins in self.instructions() {
            match ins? {
                Instruction::Push(data) => out.push(data.to_vec()),
                Instruction::Op(op) if (OP_1..=OP_16).contains(&op) => out.push(vec![op - OP_1 + 1]),
                Instruction::Op(_) => return Err(ScriptFailure::BadOpcode),
            }
        }
        Ok(out)
    }

    pub fn is_p2sh(&self) -> bool {
        self.0.len() == 23 && self.0[0] == OP_HASH20 && self.0[1] == 20 && self.0[22] == OP_EQUAL
    }

    pub fn p2sh_hash(&self) -> Option<Digest20> {
        self.is_p2sh().then(|| Digest20::from_slice(&self.0[2..22]).unwrap())
    }

    pub fn p2pkh_hash(&self) -> Option<Digest20> {
        let b = &self.0;
        let is = b.len() == 25
            && b[0] == OP_DUP
            && b[1] == OP_HASH20
            && b[2] == 20
            && b[23] == OP_EQUALVERIFY
            && b[24] == OP_CHECKSIG;
        is.then(|| Digest20::from_slice(&b[3..23]).unwrap())
    }

    pub fn p2pk_key(&self) -> Option<PublicKey> {
        let b = &self.0;
        if b.len() == 35 && b[0] == 33 && b[34] == OP_CHECKSIG {
            PublicKey::from_slice(&b[1..34]).ok()
        } else {
            None
        }
    }

    /// Decodes `OP_m <pk…> OP_n OP_CHECKMULTISIG`.
    pub fn multisig_params(&self) -> Option<(usize, Vec<PublicKey>)> {
        let ins: Vec<Instruction<'_>> = self.instructions().collect::<Result<_, _>>().ok()?;
        if ins.len() < 4 {
            return None;
        }
        let small = |i: &Instruction<'_>| match i {
            Instruction::Op(op) if (OP_1..=OP_16).contains(op) => Some((op - OP_1 + 1) as usize),
            _ => None,
        };
        let m = small(&ins[0])?;
        let n = small(&ins[ins.len() - 2])?;
        if ins[ins.len() - 1] != Instruction::Op(OP_CHECKMULTISIG) || ins.len() != n + 3 || m > n {
            return None;
        }
        let keys = ins[1..=n]
            .iter()
            .map(|i| match i {
                Instruction::Push(data) => PublicKey::from_slice(data).ok(),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Some((m, keys))
    }
}

impl From<Vec<u8>> for Script {
    fn from(bytes: Vec<u8>) -> Self {
        Script(bytes)
    }
}

impl From<&[u8]> for Script {
    fn from(bytes: &[u8]) -> Self {
        Script(bytes.to_vec())
    }
}

impl fmt::Debug for Script {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Script({})", self.to_hex())
    }
}

#[derive(Default, Clone)]
pub struct ScriptBuilder(Vec<u8>);

impl ScriptBuilder {
    /// Appends the shortest push encoding for `data`.
    pub fn push_data(mut self, data: &[u8]) -> Self {
        match data.len() {
            0 => self.0.push(OP_0),
            n @ 1..=0x4b => self.0.push(n as u8),
            n @ 0x4c..=0xff => {
                self.0.push(OP_PUSHDATA1);
                self.0.push(n as u8);
            }
            n => {
                assert!(n <= u16::MAX as usize, "push of {n} bytes does not fit PUSHDATA2");
                self.0.push(OP_PUSHDATA2);
                self.0.extend_from_slice(&(n as u16).to_le_bytes());
            }
        }
        self.0.extend_from_slice(data);
        self
    }

    /// Appends `OP_0` or `OP_1..OP_16`.
    pub fn push_int(mut self, n: u8) -> Self {
        assert!(n <= 16, "small integers are 0..=16");
        self.0.push(if n == 0 { OP_0 } else { OP_1 + n - 1 });
        self
    }

    pub fn push_opcode(mut self, op: u8) -> Self {
        self.0.push(op);
        self
    }

    pub fn into_script(self) -> Script {
        Script(self.0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Instruction<'a> {
    Push(&'a [u8]),
    Op(u8),
}

pub struct Instructions<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Iterator for Instructions<'a> {
    type Item = Result<Instruction<'a>, ScriptFailure>;

    fn next(&mut self) -> Option<Self::Item> {
        let op = *self.bytes.get(self.pos)?;
        self.pos += 1;
        let (len, header) = match op {
            OP_0 => return Some(Ok(Instruction::Push(&[]))),
            0x01..=0x4b => (op as usize, 0),
            OP_PUSHDATA1 => match self.bytes.get(self.pos) {
                Some(&n) => (n as usize, 1),
                None => return Some(self.overflow()),
            },
            OP_PUSHDATA2 => match self.bytes.get(self.pos..self.pos + 2) {
                Some(n) => (u16::from_le_bytes([n[0], n[1]]) as usize, 2),
                None => return Some(self.overflow()),
            },
            _ => return Some(Ok(Instruction::Op(op))),
        };
        let start = self.pos + header;
        match self.bytes.get(start..start + len) {
            Some(data) => {
                self.pos = start + len;
                Some(Ok(Instruction::Push(data)))
            }
            None => Some(self.overflow()),
        }
    }
}

impl<'a> Instructions<'a> {
    fn overflow(&mut self) -> Result<Instruction<'a>, ScriptFailure> {
        self.pos = self.bytes.len();
        Err(ScriptFailure::PushOverflow)
    }
}

/// Why a spend was rejected.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Error)]
pub enum ScriptFailure {
    #[error("stack empty where an element was required")]
    EmptyStack,
    #[error("script finished with a false top element")]
    FalseTop,
    #[error("unknown or disallowed opcode")]
    BadOpcode,
    #[error("push extends past the end of the script or exceeds the element limit")]
    PushOverflow,
    #[error("signature check failed")]
    SigFail,
    #[error("redeem script does not match the committed script hash")]
    RedeemMismatch,
    #[error("instruction or stack budget exceeded")]
    OpLimit,
    #[error("equality check failed")]
    VerifyFailed,
}

/// `Ok(())` means the spend is accepted.
pub type EvalResult = Result<(), ScriptFailure>;

/// The spending transaction and input under evaluation. Signatures are
/// checked against `sighash(tx, input_index)`.
pub struct ExecContext<'a> {
    tx: &'a Transaction,
    input_index: usize,
    digest: Digest32,
}

impl<'a> ExecContext<'a> {
    pub fn new(tx: &'a Transaction, input_index: usize) -> Option<Self> {
        let digest = sighash(tx, input_index).ok()?;
        Some(ExecContext { tx, input_index, digest })
    }

    pub fn tx(&self) -> &Transaction {
        self.tx
    }

    pub fn input_index(&self) -> usize {
        self.input_index
    }

    pub fn digest(&self) -> &Digest32 {
        &self.digest
    }
}

fn truthy(element: &[u8]) -> bool {
    element.iter().any(|&b| b != 0)
}

fn small_int(element: &[u8]) -> Result<usize, ScriptFailure> {
    match element {
        [] => Ok(0),
        [n] if *n <= 16 => Ok(*n as usize),
        _ => Err(ScriptFailure::BadOpcode),
    }
}

struct Machine<'c, 'a> {
    stack: Vec<Vec<u8>>,
    ops: usize,
    ctx: &'c ExecContext<'a>,
}

impl Machine<'_, '_> {
    fn pop(&mut self) -> Result<Vec<u8>, ScriptFailure> {
        self.stack.pop().ok_or(ScriptFailure::EmptyStack)
    }

    fn push(&mut self, element: Vec<u8>) -> Result<(), ScriptFailure> {
        if self.stack.len() >= MAX_STACK {
            return Err(ScriptFailure::OpLimit);
        }
        self.stack.push(element);
        Ok(())
    }

    fn run(&mut self, script: &Script) -> EvalResult {
        for ins in script.instructions() {
            self.ops += 1;
            if self.ops > MAX_OPS {
                return Err(ScriptFailure::OpLimit);
            }
            match ins? {
                Instruction::Push(data) => {
                    if data.len() > MAX_ELEMENT_SIZE {
                        return Err(ScriptFailure::PushOverflow);
                    }
                    self.push(data.to_vec())?;
                }
                Instruction::Op(op) => self.step(op)?,
            }
        }
        Ok(())
    }

    fn step(&mut self, op: u8) -> EvalResult {
        match op {
            OP_1..=OP_16 => self.push(vec![op - OP_1 + 1]),
            OP_DUP => {
                let top = self.stack.last().ok_or(ScriptFailure::EmptyStack)?.clone();
                self.push(top)
            }
            OP_HASH20 => {
                let top = self.pop()?;
                self.push(hash20(&top).0.to_vec())
            }
            OP_EQUAL | OP_EQUALVERIFY => {
                let a = self.pop()?;
                let b = self.pop()?;
                match (a == b, op == OP_EQUALVERIFY) {
                    (true, true) => Ok(()),
                    (false, true) => Err(ScriptFailure::VerifyFailed),
                    (eq, false) => self.push(if eq { vec![1] } else { vec![] }),
                }
            }
            OP_CHECKSIG => {
                let key = self.pop()?;
                let sig = self.pop()?;
                if !verify(&key, self.ctx.digest(), &sig) {
                    return Err(ScriptFailure::SigFail);
                }
                self.push(vec![1])
            }
            OP_CHECKMULTISIG => self.check_multisig(),
            _ => Err(ScriptFailure::BadOpcode),
        }
    }

    /// Pops `n`, `n` keys, `m`, `m` signatures. Signatures must appear in the
    /// same order as their keys; each key is tried at most once.
    fn check_multisig(&mut self) -> EvalResult {
        let n = small_int(&self.pop()?)?;
        if n == 0 || n > MAX_MULTISIG_KEYS {
            return Err(ScriptFailure::BadOpcode);
        }
        let mut keys = Vec::with_capacity(n);
        for _ in 0..n {
            keys.push(self.pop()?);
        }
        keys.reverse();
        let m = small_int(&self.pop()?)?;
        if m == 0 || m > n {
            return Err(ScriptFailure::BadOpcode);
        }
        let mut sigs = Vec::with_capacity(m);
        for _ in 0..m {
            sigs.push(self.pop()?);
        }
        sigs.reverse();

        let digest = *self.ctx.digest();
        let mut key_iter = keys.iter();
        for sig in &sigs {
            if !key_iter.by_ref().any(|key| verify(key, &digest, sig)) {
                return Err(ScriptFailure::SigFail);
            }
        }
        self.push(vec![1])
    }

    fn finish(&self) -> EvalResult {
        match self.stack.last() {
            None => Err(ScriptFailure::EmptyStack),
            Some(top) if truthy(top) => Ok(()),
            Some(_) => Err(ScriptFailure::FalseTop),
        }
    }
}

/// Evaluates an unlocking script against a locking script.
///
/// When the locking script is the pay-to-script-hash template, the last item
/// pushed by `script_sig` is taken as the redeem script: it must hash to the
/// committed value and then run successfully against the remaining stack.
pub fn eval(script_sig: &Script, script_pubkey: &Script, ctx: &ExecContext<'_>) -> EvalResult {
    let mut m = Machine { stack: Vec::new(), ops: 0, ctx };
    m.run(script_sig)?;
    let p2sh = script_pubkey.is_p2sh();
    let saved = if p2sh { Some(m.stack.clone()) } else { None };

    m.run(script_pubkey)?;
    match m.finish() {
        Err(ScriptFailure::FalseTop) if p2sh => return Err(ScriptFailure::RedeemMismatch),
        other => other?,
    }

    let Some(mut stack) = saved else {
        return Ok(());
    };
    if script_sig.pushes().is_err() {
        return Err(ScriptFailure::BadOpcode);
    }
    let redeem = Script(stack.pop().ok_or(ScriptFailure::EmptyStack)?);
    m.stack = stack;
    m.run(&redeem)?;
    m.finish()
}

/// `OP_DUP OP_HASH20 <h> OP_EQUALVERIFY OP_CHECKSIG`
pub fn make_p2pkh(pubkey_hash: &Digest20) -> Script {
    Script::builder()
        .push_opcode(OP_DUP)
        .push_opcode(OP_HASH20)
        .push_data(&pubkey_hash.0)
        .push_opcode(OP_EQUALVERIFY)
        .push_opcode(OP_CHECKSIG)
        .into_script()
}

/// `<pubkey> OP_CHECKSIG`
pub fn make_p2pk(pubkey: &PublicKey) -> Script {
    Script::builder().push_data(&pubkey.0).push_opcode(OP_CHECKSIG).into_script()
}

#[derive(Debug, Error, PartialEq, Eq, Clone)]
pub enum TemplateError {
    #[error("multisig requires 1 <= m <= n <= 16, got m={m} n={n}")]
    MultisigBounds { m: usize, n: usize },
    #[error("redeem script is {0} bytes, limit is {MAX_REDEEM_SIZE}")]
    RedeemTooLarge(usize),
}

/// `OP_m <pk₁> … <pk_n> OP_n OP_CHECKMULTISIG`
pub fn make_multisig(m: usize, pubkeys: &[PublicKey]) -> Result<Script, TemplateError> {
    let n = pubkeys.len();
    if m == 0 || m > n || n > MAX_MULTISIG_KEYS {
        return Err(TemplateError::MultisigBounds { m, n });
    }
    let mut b = Script::builder().push_int(m as u8);
    for key in pubkeys {
        b = b.push_data(&key.0);
    }
    Ok(b.push_int(n as u8).push_opcode(OP_CHECKMULTISIG).into_script())
}

/// `OP_HASH20 <h> OP_EQUAL`
pub fn make_p2sh(script_hash: &Digest20) -> Script {
    Script::builder().push_opcode(OP_HASH20).push_data(&script_hash.0).push_opcode(OP_EQUAL).into_script()
}

pub fn p2sh_address(redeem: &Script) -> Result<Address, TemplateError> {
    if redeem.len() > MAX_REDEEM_SIZE {
        return Err(TemplateError::RedeemTooLarge(redeem.len()));
    }
    Ok(Address::new(P2SH_VERSION, hash20(redeem.as_bytes())))
}

/// Locking script an address pays to, if its version is known.
pub fn script_for_address(address: &Address) -> Option<Script> {
    match address.version {
        crate::crypto::P2PKH_VERSION => Some(make_p2pkh(&address.payload)),
        P2SH_VERSION => Some(make_p2sh(&address.payload)),
        _ => None,
    }
}

/// Address text for a standard locking script.
pub fn address_for_script(script: &Script) -> Option<String> {
    if let Some(h) = script.p2pkh_hash() {
        Some(encode_address(crate::crypto::P2PKH_VERSION, &h))
    } else {
        script.p2sh_hash().map(|h| encode_address(P2SH_VERSION, &h))
    }
}

/// A transaction is final when it has no lock time or the block time has
/// reached it (inclusive).
pub fn is_final(tx: &Transaction, block_time: u64) -> bool {
    tx.lock_time == 0 || block_time >= tx.lock_time
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::KeyPair;
    use crate::model::{OutPoint, TxInput, TxOutput};

    fn spending_tx() -> Transaction {
        Transaction {
            version: 1,
            lock_time: 0,
            inputs: vec![TxInput { prevout: OutPoint::new(Digest32([7; 32]), 0), script_sig: Script::default() }],
            outputs: vec![TxOutput { amount: 1, script_pubkey: Script::unspendable() }],
        }
    }

    fn key(label: &str) -> KeyPair {
        KeyPair::generate(label.as_bytes()).unwrap()
    }

    fn sig_for(k: &KeyPair, tx: &Transaction) -> Vec<u8> {
        k.sign(&sighash(tx, 0).unwrap()).0
    }

    #[test]
    fn p2pkh_spend() {
        let tx = spending_tx();
        let ctx = ExecContext::new(&tx, 0).unwrap();
        let alice = key("alice");
        let lock = make_p2pkh(&alice.public_key().hash());
        assert_eq!(lock.len(), 25);

        let unlock = Script::builder().push_data(&sig_for(&alice, &tx)).push_data(&alice.public_key().0).into_script();
        assert_eq!(eval(&unlock, &lock, &ctx), Ok(()));

        let other = alice.sign(&crate::crypto::sha256(b"something else"));
        let bad_sig = Script::builder().push_data(&other.0).push_data(&alice.public_key().0).into_script();
        assert_eq!(eval(&bad_sig, &lock, &ctx), Err(ScriptFailure::SigFail));

        let bob = key("bob");
        let wrong_key = Script::builder().push_data(&sig_for(&bob, &tx)).push_data(&bob.public_key().0).into_script();
        assert_eq!(eval(&wrong_key, &lock, &ctx), Err(ScriptFailure::VerifyFailed));
    }

    #[test]
    fn p2pk_spend() {
        let tx = spending_tx();
        let ctx = ExecContext::new(&tx, 0).unwrap();
        let alice = key("alice");
        let lock = make_p2pk(&alice.public_key());
        assert_eq!(lock.p2pk_key(), Some(alice.public_key()));
        let unlock = Script::builder().push_data(&sig_for(&alice, &tx)).into_script();
        assert_eq!(eval(&unlock, &lock, &ctx), Ok(()));
        assert_eq!(eval(&Script::default(), &lock, &ctx), Err(ScriptFailure::EmptyStack));
    }

    #[test]
    fn multisig_construction_bounds() {
        let keys: Vec<PublicKey> = (0..17).map(|i| key(&format!("k{i}")).public_key()).collect();
        assert!(make_multisig(2, &keys[..3]).is_ok());
        assert_eq!(make_multisig(4, &keys[..3]), Err(TemplateError::MultisigBounds { m: 4, n: 3 }));
        assert_eq!(make_multisig(0, &keys[..3]), Err(TemplateError::MultisigBounds { m: 0, n: 3 }));
        assert_eq!(make_multisig(1, &keys), Err(TemplateError::MultisigBounds { m: 1, n: 17 }));
        let s = make_multisig(16, &keys[..16]).unwrap();
        assert_eq!(s.multisig_params().unwrap().0, 16);
    }

    #[test]
    fn two_of_three() {
        let tx = spending_tx();
        let ctx = ExecContext::new(&tx, 0).unwrap();
        let ks: Vec<KeyPair> = ["k1", "k2", "k3"].iter().map(|l| key(l)).collect();
        let pubs: Vec<PublicKey> = ks.iter().map(|k| k.public_key()).collect();
        let lock = make_multisig(2, &pubs).unwrap();
        assert_eq!(lock.multisig_params(), Some((2, pubs.clone())));
        let s0 = sig_for(&ks[0], &tx);
        let s1 = sig_for(&ks[1], &tx);

        let in_order = Script::builder().push_data(&s0).push_data(&s1).into_script();
        assert_eq!(eval(&in_order, &lock, &ctx), Ok(()));

        let reversed = Script::builder().push_data(&s1).push_data(&s0).into_script();
        assert_eq!(eval(&reversed, &lock, &ctx), Err(ScriptFailure::SigFail));

        let one = Script::builder().push_data(&s0).into_script();
        assert_eq!(eval(&one, &lock, &ctx), Err(ScriptFailure::EmptyStack));
    }

    #[test]
    fn p2sh_matrix() {
        let tx = spending_tx();
        let ctx = ExecContext::new(&tx, 0).unwrap();
        let truthy_redeem = Script::builder().push_int(1).into_script();
        let falsy_redeem = Script::builder().push_int(0).into_script();
        let lock = make_p2sh(&hash20(truthy_redeem.as_bytes()));
        assert_eq!(lock.len(), 23);

        let spend = |redeem: &Script| Script::builder().push_data(redeem.as_bytes()).into_script();
        assert_eq!(eval(&spend(&truthy_redeem), &lock, &ctx), Ok(()));
        assert_eq!(eval(&spend(&falsy_redeem), &lock, &ctx), Err(ScriptFailure::RedeemMismatch));

        let false_lock = make_p2sh(&hash20(falsy_redeem.as_bytes()));
        assert_eq!(eval(&spend(&falsy_redeem), &false_lock, &ctx), Err(ScriptFailure::FalseTop));
    }

    #[test]
    fn p2sh_address_is_34_chars() {
        let redeem = make_multisig(1, &[key("a").public_key()]).unwrap();
        let addr = p2sh_address(&redeem).unwrap().encode();
        assert_eq!(addr.len(), 34);
        assert!(addr.starts_with('3'));
        assert_eq!(p2sh_address(&Script::new(vec![0x51; 521])), Err(TemplateError::RedeemTooLarge(521)));
    }

    #[test]
    fn malformed_scripts_fail_cleanly() {
        let tx = spending_tx();
        let ctx = ExecContext::new(&tx, 0).unwrap();
        let t = Script::builder().push_int(1).into_script();
        assert_eq!(eval(&Script::new(vec![0x05, 1, 2]), &t, &ctx), Err(ScriptFailure::PushOverflow));
        assert_eq!(eval(&Script::new(vec![OP_PUSHDATA2, 1]), &t, &ctx), Err(ScriptFailure::PushOverflow));
        assert_eq!(eval(&Script::new(vec![0xff]), &t, &ctx), Err(ScriptFailure::BadOpcode));
        assert_eq!(eval(&Script::default(), &Script::unspendable(), &ctx), Err(ScriptFailure::BadOpcode));
        assert_eq!(eval(&Script::new(vec![OP_1; 1001]), &t, &ctx), Err(ScriptFailure::OpLimit));
        assert_eq!(eval(&Script::default(), &Script::default(), &ctx), Err(ScriptFailure::EmptyStack));
    }

    #[test]
    fn truthiness() {
        let tx = spending_tx();
        let ctx = ExecContext::new(&tx, 0).unwrap();
        let empty = Script::default();
        assert_eq!(
            eval(&empty, &Script::builder().push_data(&[0, 0]).into_script(), &ctx),
            Err(ScriptFailure::FalseTop)
        );
        assert_eq!(eval(&empty, &Script::builder().push_data(&[0, 1]).into_script(), &ctx), Ok(()));
        assert_eq!(eval(&empty, &Script::builder().push_int(0).into_script(), &ctx), Err(ScriptFailure::FalseTop));
    }

    #[test]
    fn push_encodings() {
        for len in [0usize, 1, 75, 76, 255, 256, 1000] {
            let data = vec![0xAB; len];
            let s = Script::builder().push_data(&data).into_script();
            assert_eq!(s.pushes().unwrap(), vec![data]);
        }
    }

    #[test]
    fn finality() {
        let mut tx = spending_tx();
        assert!(is_final(&tx, 0));
        tx.lock_time = 1000;
        assert!(!is_final(&tx, 999));
        assert!(is_final(&tx, 1000));
        assert!(is_final(&tx, 1001));
    }
}
