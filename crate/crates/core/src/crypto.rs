//! Hashing, keys, signatures and sealed commitments.
//!
//! Every primitive here is deterministic in its inputs so that a whole
//! protocol run can be replayed byte for byte from a seed:
//!
//! * `hash` is SHA-256.
//! * A [`KeyPair`] bundles an Ed25519 signing key and an X25519 sealing key,
//!   both derived from a 32-byte seed.
//! * [`encrypt`] is an ECIES-style construction (X25519 + ChaCha20-Poly1305)
//!   whose ephemeral key is derived from the caller supplied randomness, so
//!   the same `(pk, plaintext, randomness)` always yields the same bytes.
//!   That property is what lets a ciphertext double as a binding commitment.

use std::fmt;
use std::str::FromStr;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, Verifier, VerifyingKey};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as XPublic, StaticSecret};

const SIG_DOMAIN: &[u8] = b"cloak/sig-key";
const ENC_DOMAIN: &[u8] = b"cloak/enc-key";
const EPH_DOMAIN: &[u8] = b"cloak/ephemeral";
const KDF_DOMAIN: &[u8] = b"cloak/kdf";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("decryption failed: wrong key or corrupted ciphertext")]
    Decrypt,
    #[error("invalid hex encoding: {0}")]
    Hex(String),
    #[error("invalid length: expected {expected} bytes, got {got}")]
    Length { expected: usize, got: usize },
}

macro_rules! hex_bytes {
    ($name:ident, $len:expr) => {
        impl $name {
            pub const LEN: usize = $len;

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn from_slice(bytes: &[u8]) -> Result<Self, CryptoError> {
                let arr: [u8; $len] = bytes.try_into().map_err(|_| CryptoError::Length {
                    expected: $len,
                    got: bytes.len(),
                })?;
                Ok(Self(arr))
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

        impl FromStr for $name {
            type Err = CryptoError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                let s = s.strip_prefix("0x").unwrap_or(s);
                let bytes = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
                Self::from_slice(&bytes)
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

/// 32-byte SHA-256 digest.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);
hex_bytes!(Digest, 32);

/// 20-byte account address: the last 20 bytes of `hash(pk)`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub [u8; 20]);
hex_bytes!(Address, 20);

impl Address {
    pub const ZERO: Address = Address([0u8; 20]);

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Signature(pub [u8; 64]);
hex_bytes!(Signature, 64);

/// Public half of a [`KeyPair`]: verification key followed by sealing key.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct PublicKey(pub [u8; 64]);
hex_bytes!(PublicKey, 64);

impl PublicKey {
    fn verifying_half(&self) -> [u8; 32] {
        self.0[..32].try_into().expect("32-byte half")
    }

    fn sealing_half(&self) -> [u8; 32] {
        self.0[32..].try_into().expect("32-byte half")
    }

    pub fn address(&self) -> Address {
        let h = hash(&self.0);
        Address(h.0[12..].try_into().expect("20-byte tail"))
    }

    /// Short identifier carried in ciphertexts so recipients can route them.
    pub fn fingerprint(&self) -> [u8; 8] {
        hash(&self.0).0[..8].try_into().expect("8-byte prefix")
    }
}

pub fn hash(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of several byte strings, each prefixed by its length so that
/// `["ab", "c"]` and `["a", "bc"]` never collide.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_be_bytes());
        h.update(p);
    }
    Digest(h.finalize().into())
}

#[derive(Clone)]
pub struct KeyPair {
    pub pk: PublicKey,
    seed: [u8; 32],
    pub addr: Address,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("pk", &self.pk)
            .field("addr", &self.addr)
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    fn signing_key(&self) -> SigningKey {
        SigningKey::from_bytes(&hash_parts(&[SIG_DOMAIN, &self.seed]).0)
    }

    fn sealing_secret(&self) -> StaticSecret {
        StaticSecret::from(hash_parts(&[ENC_DOMAIN, &self.seed]).0)
    }

    /// Secret key bytes. Only the owning actor ever calls this.
    pub fn secret_seed(&self) -> &[u8; 32] {
        &self.seed
    }
}

pub fn keygen(seed: &[u8; 32]) -> KeyPair {
    let signing = SigningKey::from_bytes(&hash_parts(&[SIG_DOMAIN, seed]).0);
    let sealing = StaticSecret::from(hash_parts(&[ENC_DOMAIN, seed]).0);
    let mut pk = [0u8; 64];
    pk[..32].copy_from_slice(signing.verifying_key().as_bytes());
    pk[32..].copy_from_slice(XPublic::from(&sealing).as_bytes());
    let pk = PublicKey(pk);
    KeyPair {
        addr: pk.address(),
        pk,
        seed: *seed,
    }
}

/// Convenience for simulations: key pair from a label and a small integer.
pub fn keygen_labeled(label: &str, n: u64) -> KeyPair {
    keygen(&hash_parts(&[label.as_bytes(), &n.to_be_bytes()]).0)
}

pub fn sign(keys: &KeyPair, msg: &[u8]) -> Signature {
    Signature(keys.signing_key().sign(msg).to_bytes())
}

pub fn verify_sig(pk: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    let Ok(vk) = VerifyingKey::from_bytes(&pk.verifying_half()) else {
        return false;
    };
    vk.verify(msg, &ed25519_dalek::Signature::from_bytes(&sig.0))
        .is_ok()
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Ciphertext {
    #[serde(with = "hex_array")]
    pub recipient: [u8; 8],
    #[serde(with = "hex_array")]
    pub ephemeral: [u8; 32],
    #[serde(with = "hex_vec")]
    pub body: Vec<u8>,
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Ciphertext(to={}, {} bytes)",
            hex::encode(self.recipient),
            self.body.len()
        )
    }
}

impl Ciphertext {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.body.len());
        out.extend_from_slice(&self.recipient);
        out.extend_from_slice(&self.ephemeral);
        out.extend_from_slice(&self.body);
        out
    }

    pub fn digest(&self) -> Digest {
        hash(&self.to_bytes())
    }

    pub fn is_for(&self, pk: &PublicKey) -> bool {
        self.recipient == pk.fingerprint()
    }
}

fn channel_key(shared: &[u8; 32], ephemeral: &[u8; 32], recipient: &[u8; 32]) -> Key {
    let k = hash_parts(&[KDF_DOMAIN, shared, ephemeral, recipient]);
    *Key::from_slice(&k.0)
}

/// Deterministic public-key encryption of `plaintext` to `pk`.
pub fn encrypt(pk: &PublicKey, plaintext: &[u8], randomness: &[u8; 32]) -> Ciphertext {
    let eph = StaticSecret::from(hash_parts(&[EPH_DOMAIN, randomness, &pk.0]).0);
    let eph_pub = XPublic::from(&eph);
    let recipient = XPublic::from(pk.sealing_half());
    let shared = eph.diffie_hellman(&recipient);
    let key = channel_key(shared.as_bytes(), eph_pub.as_bytes(), recipient.as_bytes());
    // Each key is used for exactly one message, so a fixed nonce is fine.
    let body = ChaCha20Poly1305::new(&key)
        .encrypt(Nonce::from_slice(&[0u8; 12]), plaintext)
        .expect("in-memory encryption cannot fail");
    Ciphertext {
        recipient: pk.fingerprint(),
        ephemeral: *eph_pub.as_bytes(),
        body,
    }
}

pub fn decrypt(keys: &KeyPair, ct: &Ciphertext) -> Result<Vec<u8>, CryptoError> {
    if !ct.is_for(&keys.pk) {
        return Err(CryptoError::Decrypt);
    }
    let secret = keys.sealing_secret();
    let eph_pub = XPublic::from(ct.ephemeral);
    let shared = secret.diffie_hellman(&eph_pub);
    let own = XPublic::from(&secret);
    let key = channel_key(shared.as_bytes(), &ct.ephemeral, own.as_bytes());
    ChaCha20Poly1305::new(&key)
        .decrypt(Nonce::from_slice(&[0u8; 12]), ct.body.as_slice())
        .map_err(|_| CryptoError::Decrypt)
}

/// Opening of a commitment: the committed bytes and the randomness used.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommitmentOpening {
    #[serde(with = "hex_array")]
    pub randomness: [u8; 32],
    #[serde(with = "hex_vec")]
    pub plaintext: Vec<u8>,
}

impl fmt::Debug for CommitmentOpening {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CommitmentOpening({} bytes)", self.plaintext.len())
    }
}

impl CommitmentOpening {
    pub fn new(plaintext: Vec<u8>, randomness: [u8; 32]) -> Self {
        Self {
            randomness,
            plaintext,
        }
    }

    /// `Enc(pk, plaintext ∥ randomness)` with the same randomness driving
    /// the encryption, so the owner can recover both by decrypting.
    pub fn commit(&self, pk: &PublicKey) -> Ciphertext {
        let mut m = self.plaintext.clone();
        m.extend_from_slice(&self.randomness);
        encrypt(pk, &m, &self.randomness)
    }

    pub fn open(keys: &KeyPair, ct: &Ciphertext) -> Result<Self, CryptoError> {
        let mut m = decrypt(keys, ct)?;
        if m.len() < 32 {
            return Err(CryptoError::Decrypt);
        }
        let r = m.split_off(m.len() - 32);
        Ok(Self {
            randomness: r.try_into().expect("32 bytes"),
            plaintext: m,
        })
    }
}

pub(crate) mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}

pub(crate) mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(
        d: D,
    ) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(d)?;
        let v = hex::decode(s).map_err(serde::de::Error::custom)?;
        v.try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected {N} bytes")))
    }
}
