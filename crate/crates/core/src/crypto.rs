//! Hashing, ECDSA keys and signatures, and Base58Check addresses.

use std::fmt;
use std::str::FromStr;

use k256::ecdsa::signature::hazmat::{PrehashSigner, PrehashVerifier};
use k256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Address version byte for pay-to-public-key-hash outputs.
pub const P2PKH_VERSION: u8 = 0x00;
/// Address version byte for pay-to-script-hash outputs.
pub const P2SH_VERSION: u8 = 0x05;

macro_rules! digest_type {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_hex(text: &str) -> Option<Self> {
                let bytes = hex::decode(text).ok()?;
                Self::from_slice(&bytes)
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; $len]>::try_from(bytes).ok().map(Self)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl AsRef<[u8]> for $name {
            fn as_ref(&self) -> &[u8] {
                &self.0
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let text = String::deserialize(d)?;
                Self::from_hex(&text)
                    .ok_or_else(|| serde::de::Error::custom(concat!("invalid ", stringify!($name), " hex")))
            }
        }
    };
}

digest_type!(Digest32, 32);
digest_type!(Digest20, 20);

impl Digest32 {
    pub const ZERO: Digest32 = Digest32([0u8; 32]);
}

/// Single SHA-256.
pub fn sha256(data: &[u8]) -> Digest32 {
    Digest32(Sha256::digest(data).into())
}

/// Double SHA-256, used for block and transaction identifiers.
pub fn hash256(data: &[u8]) -> Digest32 {
    sha256(&sha256(data).0)
}

/// Short hash used for public key hashes and script hashes: the first
/// 20 bytes of `hash256`.
pub fn hash20(data: &[u8]) -> Digest20 {
    let full = hash256(data);
    let mut out = [0u8; 20];
    out.copy_from_slice(&full.0[..20]);
    Digest20(out)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum KeyError {
    #[error("key seed must not be empty")]
    EmptySeed,
    #[error("malformed public key encoding")]
    BadPublicKey,
}

/// A 33-byte compressed secp256k1 public key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; 33]);

impl PublicKey {
    pub fn from_slice(bytes: &[u8]) -> Result<Self, KeyError> {
        let raw = <[u8; 33]>::try_from(bytes).map_err(|_| KeyError::BadPublicKey)?;
        VerifyingKey::from_sec1_bytes(&raw).map_err(|_| KeyError::BadPublicKey)?;
        Ok(PublicKey(raw))
    }

    pub fn as_bytes(&self) -> &[u8; 33] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(text: &str) -> Result<Self, KeyError> {
        let bytes = hex::decode(text).map_err(|_| KeyError::BadPublicKey)?;
        Self::from_slice(&bytes)
    }

    pub fn hash(&self) -> Digest20 {
        hash20(&self.0)
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", self.to_hex())
    }
}

/// A secp256k1 key pair. The secret half never appears in chain data or in
/// `Debug` output.
#[derive(Clone)]
pub struct KeyPair {
    secret: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    /// Derives a key pair deterministically from `seed`.
    ///
    /// The secret scalar is `hash256(seed ‖ counter_le32)` for the smallest
    /// counter giving a scalar in `[1, n)`.
    pub fn generate(seed: &[u8]) -> Result<KeyPair, KeyError> {
        if seed.is_empty() {
            return Err(KeyError::EmptySeed);
        }
        let mut counter: u32 = 0;
        loop {
            let mut buf = Vec::with_capacity(seed.len() + 4);
            buf.extend_from_slice(seed);
            buf.extend_from_slice(&counter.to_le_bytes());
            let candidate = hash256(&buf);
            if let Ok(secret) = SigningKey::from_bytes(&candidate.0.into()) {
                let encoded = VerifyingKey::from(&secret).to_encoded_point(true);
                let mut public = [0u8; 33];
                public.copy_from_slice(encoded.as_bytes());
                return Ok(KeyPair { secret, public: PublicKey(public) });
            }
            counter += 1;
        }
    }

    pub fn public_key(&self) -> PublicKey {
        self.public
    }

    pub fn secret_bytes(&self) -> [u8; 32] {
        self.secret.to_bytes().into()
    }

    pub fn sign(&self, digest: &Digest32) -> Signature {
        sign(self, digest)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl PartialEq for KeyPair {
    fn eq(&self, other: &Self) -> bool {
        self.public == other.public && self.secret_bytes() == other.secret_bytes()
    }
}

impl Eq for KeyPair {}

/// Compact 64-byte `r ‖ s` ECDSA signature.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<u8>);

impl Signature {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0))
    }
}

/// Signs a 32-byte digest with RFC 6979 deterministic nonces.
pub fn sign(key: &KeyPair, digest: &Digest32) -> Signature {
    let sig: EcdsaSignature =
        key.secret.sign_prehash(&digest.0).expect("prehash signing of a 32-byte digest cannot fail");
    Signature(sig.to_bytes().to_vec())
}

/// Verifies `sig` over `digest`. Malformed keys or signatures yield `false`.
pub fn verify(public_key: &[u8], digest: &Digest32, sig: &[u8]) -> bool {
    let Ok(key) = VerifyingKey::from_sec1_bytes(public_key) else {
        return false;
    };
    let Ok(sig) = EcdsaSignature::from_slice(sig) else {
        return false;
    };
    key.verify_prehash(&digest.0, &sig).is_ok()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AddressError {
    #[error("address contains a character outside the Base58 alphabet at position {0}")]
    BadCharacter(usize),
    #[error("address checksum mismatch")]
    BadChecksum,
    #[error("address payload has wrong length {0}")]
    BadLength(usize),
}

/// A Base58Check address: `version ‖ payload ‖ checksum`, where the checksum
/// is the first four bytes of `hash256(version ‖ payload)`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Address {
    pub version: u8,
    pub payload: Digest20,
}

impl Address {
    pub fn new(version: u8, payload: Digest20) -> Self {
        Address { version, payload }
    }

    pub fn encode(&self) -> String {
        encode_address(self.version, &self.payload)
    }

    pub fn decode(text: &str) -> Result<Self, AddressError> {
        let (version, payload) = decode_address(text)?;
        Ok(Address { version, payload })
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.encode())
    }
}

impl FromStr for Address {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Address::decode(s)
    }
}

pub fn encode_address(version: u8, payload: &Digest20) -> String {
    let mut raw = Vec::with_capacity(21);
    raw.push(version);
    raw.extend_from_slice(&payload.0);
    bs58::encode(raw).with_check().into_string()
}

pub fn decode_address(text: &str) -> Result<(u8, Digest20), AddressError> {
    let raw = bs58::decode(text).with_check(None).into_vec().map_err(|e| match e {
        bs58::decode::Error::InvalidCharacter { index, .. } => AddressError::BadCharacter(index),
        bs58::decode::Error::NonAsciiCharacter { index } => AddressError::BadCharacter(index),
        bs58::decode::Error::InvalidChecksum { .. } => AddressError::BadChecksum,
        _ => AddressError::BadLength(0),
    })?;
    // `with_check` strips the checksum but keeps the version byte.
    if raw.len() != 21 {
        return Err(AddressError::BadLength(raw.len().saturating_sub(1)));
    }
    let payload = Digest20::from_slice(&raw[1..]).expect("length checked");
    Ok((raw[0], payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sha256_standard_vectors() {
        assert_eq!(sha256(b"").to_hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(sha256(b"abc").to_hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    }

    #[test]
    fn sha256_small_change_flips_many_bits() {
        let a = sha256(b"abc");
        let b = sha256(b"abd");
        let differing: u32 = a.0.iter().zip(b.0.iter()).map(|(x, y)| (x ^ y).count_ones()).sum();
        // 30% of 256 bits
        assert!(differing as f64 >= 0.30 * 256.0, "only {differing} bits differ");
    }

    #[test]
    fn hash256_empty() {
        let inner = sha256(b"");
        assert_eq!(hash256(b""), sha256(&inner.0));
        assert_eq!(hash256(b"").to_hex(), "5df6e0e2761359d30a8275058e299fcc0381534545f55cf43e41983f5d4c9456");
        assert_ne!(hash256(b""), sha256(b""));
    }

    #[test]
    fn hash20_is_prefix_of_hash256() {
        for input in [&b""[..], b"abc", b"minichain"] {
            assert_eq!(&hash20(input).0[..], &hash256(input).0[..20]);
        }
        assert_ne!(hash20(&[0x51, 0x87]), hash20(&[0x52, 0x87]));
    }

    #[test]
    fn keypair_is_deterministic_per_seed() {
        let a1 = KeyPair::generate(b"alice").unwrap();
        let a2 = KeyPair::generate(b"alice").unwrap();
        let b = KeyPair::generate(b"bob").unwrap();
        assert_eq!(a1, a2);
        assert_ne!(a1.public_key(), b.public_key());
        assert_eq!(KeyPair::generate(b"").unwrap_err(), KeyError::EmptySeed);
    }

    #[test]
    fn keypair_debug_hides_secret() {
        let kp = KeyPair::generate(b"alice").unwrap();
        let text = format!("{kp:?}");
        assert!(!text.contains(&hex::encode(kp.secret_bytes())));
    }

    #[test]
    fn sign_and_verify() {
        let alice = KeyPair::generate(b"alice").unwrap();
        let bob = KeyPair::generate(b"bob").unwrap();
        let digest = sha256(b"pay bob");
        let sig = sign(&alice, &digest);
        assert_eq!(sig.0.len(), 64);
        assert!(verify(&alice.public_key().0, &digest, &sig.0));
        assert!(!verify(&bob.public_key().0, &digest, &sig.0));

        let mut flipped = digest;
        flipped.0[0] ^= 1;
        assert!(!verify(&alice.public_key().0, &flipped, &sig.0));
        assert!(!verify(&alice.public_key().0, &digest, &[]));
        assert!(!verify(&[0u8; 33], &digest, &sig.0));
        // deterministic nonces
        assert_eq!(sign(&alice, &digest), sig);
    }

    #[test]
    fn zero_payload_address() {
        let addr = encode_address(0x00, &Digest20([0u8; 20]));
        assert_eq!(addr, "1111111111111111111114oLvT2");
        assert_eq!(decode_address(&addr).unwrap(), (0x00, Digest20([0u8; 20])));
    }

    #[test]
    fn p2sh_version_gives_34_chars_with_prefix_3() {
        for fill in [0u8, 1, 0x7f, 0xff] {
            let text = encode_address(P2SH_VERSION, &Digest20([fill; 20]));
            assert_eq!(text.len(), 34, "{text}");
            assert!(text.starts_with('3'));
        }
    }

    #[test]
    fn decode_distinguishes_checksum_from_alphabet() {
        let good = encode_address(P2SH_VERSION, &hash20(b"redeem"));
        let mut chars: Vec<char> = good.chars().collect();
        chars[10] = if chars[10] == 'a' { 'b' } else { 'a' };
        let corrupted: String = chars.iter().collect();
        assert_eq!(decode_address(&corrupted).unwrap_err(), AddressError::BadChecksum);

        let mut bad_alpha = good.clone();
        bad_alpha.replace_range(5..6, "0");
        assert!(matches!(decode_address(&bad_alpha), Err(AddressError::BadCharacter(5))));
    }

    #[test]
    fn digest_hex_round_trip() {
        let d = sha256(b"x");
        assert_eq!(Digest32::from_hex(&d.to_hex()), Some(d));
        assert_eq!(Digest32::from_hex("00"), None);
        assert_eq!(serde_json::to_string(&d).unwrap(), format!("\"{}\"", d.to_hex()));
    }
}
