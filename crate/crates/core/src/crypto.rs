// SPDX-License-Identifier: Apache-2.0

//! Cryptographic atoms shared by every protocol artifact.
//!
//! Every composite that is hashed or signed goes through [`canonical_encode`],
//! a tagged, length-prefixed layout. Plain concatenation would let bytes slide
//! between adjacent fields without changing the digest.

use std::collections::HashSet;
use std::fmt;

use chacha20poly1305::aead::{Aead, KeyInit, Payload};
use chacha20poly1305::{XChaCha20Poly1305, XNonce};
use curve25519_dalek::montgomery::MontgomeryPoint;
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use rand::rngs::OsRng;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

pub const DIGEST_LEN: usize = 32;
pub const PUBLIC_KEY_LEN: usize = 32;
pub const SIGNATURE_LEN: usize = 64;
pub const SEAL_NONCE_LEN: usize = 24;
pub const MAX_TAG_LEN: usize = 16;

const SEAL_INFO: &[u8] = b"aw/1 sealed-box key";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum EncodingError {
    #[error("duplicate field tag {0:?}")]
    DuplicateTag(String),
    #[error("field tag {0:?} must be ASCII and at most 16 bytes")]
    BadTag(String),
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum DecodeError {
    #[error("truncated canonical encoding at offset {0}")]
    Truncated(usize),
    #[error("malformed field tag at offset {0}")]
    BadTag(usize),
    #[error("duplicate field tag {0:?}")]
    DuplicateTag(String),
    #[error("expected field {expected:?}, found {found:?}")]
    UnexpectedField { expected: String, found: String },
    #[error("missing field {0:?}")]
    MissingField(String),
    #[error("trailing fields after {0:?}")]
    TrailingFields(String),
    #[error("field {field:?} has invalid value: {reason}")]
    BadValue { field: String, reason: String },
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum KeyError {
    #[error("key seed must be 32 bytes, got {0}")]
    BadSeed(usize),
    #[error("malformed public key")]
    BadPublicKey,
    #[error("malformed hex: {0}")]
    BadHex(String),
}

/// Decryption failed. Carries no detail so that every failure cause looks the same.
#[derive(Debug, thiserror::Error, PartialEq, Eq, Clone, Copy)]
#[error("sealed box could not be opened")]
pub struct DecryptError;

macro_rules! hex_newtype_serde {
    ($ty:ident, $len:expr) => {
        impl Serialize for $ty {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&hex::encode(self.0))
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                $ty::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }

        impl $ty {
            pub fn from_hex(s: &str) -> Result<Self, KeyError> {
                let bytes = decode_lower_hex(s)?;
                Self::from_slice(&bytes).ok_or_else(|| KeyError::BadHex(format!("expected {} bytes", $len)))
            }

            pub fn from_slice(bytes: &[u8]) -> Option<Self> {
                <[u8; $len]>::try_from(bytes).ok().map($ty)
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&hex::encode(self.0))
            }
        }

        impl fmt::Debug for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($ty), hex::encode(self.0))
            }
        }
    };
}

/// Lowercase-only hex decoding; uppercase is rejected so every value has one spelling.
pub fn decode_lower_hex(s: &str) -> Result<Vec<u8>, KeyError> {
    if s.bytes().any(|b| b.is_ascii_uppercase()) {
        return Err(KeyError::BadHex("uppercase hex digit".into()));
    }
    hex::decode(s).map_err(|e| KeyError::BadHex(e.to_string()))
}

/// SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest256(pub [u8; DIGEST_LEN]);
hex_newtype_serde!(Digest256, DIGEST_LEN);

/// 32-byte Ed25519 verification key as it travels on the wire.
///
/// Kept as raw bytes so that garbage keys can be carried and rejected at
/// verification time instead of at parse time.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey(pub [u8; PUBLIC_KEY_LEN]);
hex_newtype_serde!(PublicKey, PUBLIC_KEY_LEN);

pub fn digest(data: &[u8]) -> Digest256 {
    Digest256(Sha256::digest(data).into())
}

/// Encodes `(tag, value)` pairs as `len(tag):u8 ∥ tag ∥ len(value):u64be ∥ value`.
pub fn canonical_encode<T, V>(fields: &[(T, V)]) -> Result<Vec<u8>, EncodingError>
where
    T: AsRef<str>,
    V: AsRef<[u8]>,
{
    let mut seen = HashSet::with_capacity(fields.len());
    let mut out = Vec::new();
    for (tag, value) in fields {
        let tag = tag.as_ref();
        if !tag.is_ascii() || tag.len() > MAX_TAG_LEN {
            return Err(EncodingError::BadTag(tag.to_string()));
        }
        if !seen.insert(tag) {
            return Err(EncodingError::DuplicateTag(tag.to_string()));
        }
        let value = value.as_ref();
        out.push(tag.len() as u8);
        out.extend_from_slice(tag.as_bytes());
        out.extend_from_slice(&(value.len() as u64).to_be_bytes());
        out.extend_from_slice(value);
    }
    Ok(out)
}

/// Inverse of [`canonical_encode`]. Rejects truncation, bad tags and duplicates.
pub fn canonical_decode(bytes: &[u8]) -> Result<Vec<(String, Vec<u8>)>, DecodeError> {
    let mut fields = Vec::new();
    let mut seen = HashSet::new();
    let mut pos = 0usize;
    while pos < bytes.len() {
        let tag_len = bytes[pos] as usize;
        if tag_len > MAX_TAG_LEN {
            return Err(DecodeError::BadTag(pos));
        }
        let tag_end = pos + 1 + tag_len;
        let tag = bytes.get(pos + 1..tag_end).ok_or(DecodeError::Truncated(pos))?;
        if !tag.is_ascii() {
            return Err(DecodeError::BadTag(pos));
        }
        let tag = String::from_utf8(tag.to_vec()).map_err(|_| DecodeError::BadTag(pos))?;
        let len_bytes: [u8; 8] = bytes
            .get(tag_end..tag_end + 8)
            .ok_or(DecodeError::Truncated(tag_end))?
            .try_into()
            .expect("slice of length 8");
        let len = u64::from_be_bytes(len_bytes);
        let start = tag_end + 8;
        let end = usize::try_from(len)
            .ok()
            .and_then(|l| start.checked_add(l))
            .filter(|&e| e <= bytes.len())
            .ok_or(DecodeError::Truncated(start))?;
        if !seen.insert(tag.clone()) {
            return Err(DecodeError::DuplicateTag(tag));
        }
        fields.push((tag, bytes[start..end].to_vec()));
        pos = end;
    }
    Ok(fields)
}

/// Builder over [`canonical_encode`] for fixed, statically known tags.
#[derive(Default)]
pub struct FieldWriter {
    fields: Vec<(&'static str, Vec<u8>)>,
}

impl FieldWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(mut self, tag: &'static str, value: impl AsRef<[u8]>) -> Self {
        self.fields.push((tag, value.as_ref().to_vec()));
        self
    }

    pub fn put_u32(self, tag: &'static str, value: u32) -> Self {
        self.put(tag, value.to_be_bytes())
    }

    pub fn finish(self) -> Vec<u8> {
        canonical_encode(&self.fields).expect("static tags are unique and short")
    }
}

/// Sequential reader over decoded fields that insists on the declared order.
pub struct FieldReader {
    fields: std::vec::IntoIter<(String, Vec<u8>)>,
    last: String,
}

impl FieldReader {
    pub fn new(bytes: &[u8]) -> Result<Self, DecodeError> {
        Ok(Self {
            fields: canonical_decode(bytes)?.into_iter(),
            last: String::new(),
        })
    }

    pub fn take(&mut self, tag: &str) -> Result<Vec<u8>, DecodeError> {
        match self.fields.next() {
            Some((found, value)) if found == tag => {
                self.last = found;
                Ok(value)
            }
            Some((found, _)) => Err(DecodeError::UnexpectedField {
                expected: tag.to_string(),
                found,
            }),
            None => Err(DecodeError::MissingField(tag.to_string())),
        }
    }

    pub fn take_array<const N: usize>(&mut self, tag: &str) -> Result<[u8; N], DecodeError> {
        let v = self.take(tag)?;
        <[u8; N]>::try_from(v.as_slice()).map_err(|_| DecodeError::BadValue {
            field: tag.to_string(),
            reason: format!("expected {N} bytes, got {}", v.len()),
        })
    }

    pub fn take_u32(&mut self, tag: &str) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take_array::<4>(tag)?))
    }

    pub fn take_string(&mut self, tag: &str) -> Result<String, DecodeError> {
        String::from_utf8(self.take(tag)?).map_err(|_| DecodeError::BadValue {
            field: tag.to_string(),
            reason: "not UTF-8".into(),
        })
    }

    pub fn expect_literal(&mut self, tag: &str, literal: &[u8]) -> Result<(), DecodeError> {
        let v = self.take(tag)?;
        if v != literal {
            return Err(DecodeError::BadValue {
                field: tag.to_string(),
                reason: "unexpected literal".into(),
            });
        }
        Ok(())
    }

    /// Peeks whether the next field carries `tag`.
    pub fn next_is(&self, tag: &str) -> bool {
        self.fields.as_slice().first().is_some_and(|(t, _)| t == tag)
    }

    pub fn finish(mut self) -> Result<(), DecodeError> {
        match self.fields.next() {
            None => Ok(()),
            Some(_) => Err(DecodeError::TrailingFields(self.last)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Prover,
    Auditor,
    Verifier,
    HardwareRoot,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Prover => "prover",
            Role::Auditor => "auditor",
            Role::Verifier => "verifier",
            Role::HardwareRoot => "hardware_root",
        })
    }
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    role: Role,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair")
            .field("role", &self.role)
            .field("public_key", &self.public_key())
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    /// Deterministic when `seed` is given, random otherwise.
    pub fn generate(seed: Option<&[u8]>, role: Role) -> Result<Self, KeyError> {
        let signing = match seed {
            Some(seed) => {
                let seed: [u8; 32] = seed.try_into().map_err(|_| KeyError::BadSeed(seed.len()))?;
                SigningKey::from_bytes(&seed)
            }
            None => SigningKey::generate(&mut OsRng),
        };
        Ok(Self { signing, role })
    }

    pub fn from_rng<R: RngCore + CryptoRng>(rng: &mut R, role: Role) -> Self {
        Self {
            signing: SigningKey::generate(rng),
            role,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(self.signing.verifying_key().to_bytes())
    }

    /// The 32-byte seed; enough to rebuild the pair with [`KeyPair::generate`].
    pub fn seed_bytes(&self) -> [u8; 32] {
        self.signing.to_bytes()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        Signature {
            bytes: self.signing.sign(message).to_bytes(),
            signer_role: Some(self.role),
        }
    }
}

pub fn sign(keys: &KeyPair, message: &[u8]) -> Signature {
    keys.sign(message)
}

/// An Ed25519 signature. The role tag is diagnostic and never serialized.
#[derive(Clone, Copy)]
pub struct Signature {
    pub bytes: [u8; SIGNATURE_LEN],
    pub signer_role: Option<Role>,
}

impl PartialEq for Signature {
    fn eq(&self, other: &Self) -> bool {
        self.bytes == other.bytes
    }
}
impl Eq for Signature {}

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({}…)", &hex::encode(self.bytes)[..16])
    }
}

impl Signature {
    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        Some(Self {
            bytes: bytes.try_into().ok()?,
            signer_role: None,
        })
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.bytes)
    }

    pub fn from_hex(s: &str) -> Result<Self, KeyError> {
        let raw = decode_lower_hex(s)?;
        Self::from_slice(&raw).ok_or_else(|| KeyError::BadHex("expected 64 bytes".into()))
    }
}

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Signature::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

pub fn verify(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    verify_bytes(&public_key.0, message, &signature.bytes)
}

/// Verification over raw byte slices. Any malformed input yields `false`.
pub fn verify_bytes(public_key: &[u8], message: &[u8], signature: &[u8]) -> bool {
    let Ok(pk) = <[u8; PUBLIC_KEY_LEN]>::try_from(public_key) else {
        return false;
    };
    let Ok(sig) = <[u8; SIGNATURE_LEN]>::try_from(signature) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk) else {
        return false;
    };
    vk.verify_strict(message, &ed25519_dalek::Signature::from_bytes(&sig))
        .is_ok()
}

/// Authenticated public-key encryption to an Ed25519 identity.
///
/// The recipient key is mapped to its X25519 form; an ephemeral X25519 share
/// and HKDF-SHA256 derive an XChaCha20-Poly1305 key. `associated_digest` is
/// bound as AEAD associated data.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedBox {
    #[serde(with = "hex_array")]
    pub ephemeral_key: [u8; 32],
    #[serde(with = "hex_array")]
    pub nonce: [u8; SEAL_NONCE_LEN],
    #[serde(with = "hex_vec")]
    pub ciphertext: Vec<u8>,
    pub associated_digest: Digest256,
}

impl fmt::Debug for SealedBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SealedBox")
            .field("ciphertext_len", &self.ciphertext.len())
            .field("associated_digest", &self.associated_digest)
            .finish_non_exhaustive()
    }
}

fn seal_key(shared: &MontgomeryPoint, ephemeral: &[u8; 32], recipient: &[u8; 32]) -> [u8; 32] {
    let mut salt = Vec::with_capacity(64);
    salt.extend_from_slice(ephemeral);
    salt.extend_from_slice(recipient);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared.as_bytes());
    let mut okm = [0u8; 32];
    hk.expand(SEAL_INFO, &mut okm)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    okm
}

fn recipient_montgomery(recipient: &PublicKey) -> Option<MontgomeryPoint> {
    VerifyingKey::from_bytes(&recipient.0).ok().map(|vk| vk.to_montgomery())
}

pub fn seal(recipient_public: &PublicKey, plaintext: &[u8], associated: &Digest256) -> Result<SealedBox, KeyError> {
    seal_with_rng(&mut OsRng, recipient_public, plaintext, associated)
}

pub fn seal_with_rng<R: RngCore + CryptoRng>(
    rng: &mut R,
    recipient_public: &PublicKey,
    plaintext: &[u8],
    associated: &Digest256,
) -> Result<SealedBox, KeyError> {
    let recipient = recipient_montgomery(recipient_public).ok_or(KeyError::BadPublicKey)?;
    let mut ephemeral_secret = [0u8; 32];
    rng.fill_bytes(&mut ephemeral_secret);
    let ephemeral = MontgomeryPoint::mul_base_clamped(ephemeral_secret);
    let shared = recipient.mul_clamped(ephemeral_secret);
    let key = seal_key(&shared, &ephemeral.0, &recipient.0);

    let mut nonce = [0u8; SEAL_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let cipher = XChaCha20Poly1305::new(&key.into());
    let ciphertext = cipher
        .encrypt(
            XNonce::from_slice(&nonce),
            Payload {
                msg: plaintext,
                aad: &associated.0,
            },
        )
        .expect("XChaCha20-Poly1305 encryption is infallible for in-memory buffers");
    Ok(SealedBox {
        ephemeral_key: ephemeral.0,
        nonce,
        ciphertext,
        associated_digest: *associated,
    })
}

pub fn unseal(secret: &KeyPair, sealed: &SealedBox, associated: &Digest256) -> Result<Vec<u8>, DecryptError> {
    if sealed.associated_digest != *associated {
        return Err(DecryptError);
    }
    let own = secret.signing.verifying_key().to_montgomery();
    let ephemeral = MontgomeryPoint(sealed.ephemeral_key);
    let shared = ephemeral * secret.signing.to_scalar();
    if shared.0 == [0u8; 32] {
        return Err(DecryptError);
    }
    let key = seal_key(&shared, &sealed.ephemeral_key, &own.0);
    XChaCha20Poly1305::new(&key.into())
        .decrypt(
            XNonce::from_slice(&sealed.nonce),
            Payload {
                msg: &sealed.ciphertext,
                aad: &associated.0,
            },
        )
        .map_err(|_| DecryptError)
}

pub(crate) mod hex_array {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer, const N: usize>(v: &[u8; N], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>, const N: usize>(d: D) -> Result<[u8; N], D::Error> {
        let s = String::deserialize(d)?;
        let raw = super::decode_lower_hex(&s).map_err(serde::de::Error::custom)?;
        raw.as_slice()
            .try_into()
            .map_err(|_| serde::de::Error::custom(format!("expected {N} bytes")))
    }
}

pub(crate) mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        super::decode_lower_hex(&s).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sha256_vectors() {
        assert_eq!(
            digest(b"").to_hex(),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
        assert_eq!(
            digest(b"abc").to_hex(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn encode_empty_and_count_injective() {
        let empty: [(&str, &[u8]); 0] = [];
        assert!(canonical_encode(&empty).unwrap().is_empty());
        let one = canonical_encode(&[("a", &[1u8][..])]).unwrap();
        let two = canonical_encode(&[("a", &[1u8][..]), ("b", &[][..])]).unwrap();
        assert_ne!(one, two);
    }

    #[test]
    fn encode_boundary_shift() {
        // Straight-line expectation: 1|q|len=2|AB|1|a|len=1|C
        let left = canonical_encode(&[("q", "AB"), ("a", "C")]).unwrap();
        let right = canonical_encode(&[("q", "A"), ("a", "BC")]).unwrap();
        let mut expected = vec![1, b'q'];
        expected.extend_from_slice(&2u64.to_be_bytes());
        expected.extend_from_slice(b"AB");
        expected.extend_from_slice(&[1, b'a']);
        expected.extend_from_slice(&1u64.to_be_bytes());
        expected.extend_from_slice(b"C");
        assert_eq!(left, expected);
        assert_ne!(left, right);
    }

    #[test]
    fn encode_rejects_duplicate_and_long_tags() {
        assert_eq!(
            canonical_encode(&[("a", "1"), ("a", "2")]),
            Err(EncodingError::DuplicateTag("a".into()))
        );
        assert!(matches!(
            canonical_encode(&[("seventeen-bytes!!", "")]),
            Err(EncodingError::BadTag(_))
        ));
    }

    #[test]
    fn seeded_keys_are_deterministic() {
        let seed = [7u8; 32];
        let a = KeyPair::generate(Some(&seed), Role::Prover).unwrap();
        let b = KeyPair::generate(Some(&seed), Role::Prover).unwrap();
        assert_eq!(a.public_key(), b.public_key());
        let sig = a.sign(b"m");
        assert!(verify(&b.public_key(), b"m", &sig));

        let r1 = KeyPair::generate(None, Role::Auditor).unwrap();
        let r2 = KeyPair::generate(None, Role::Auditor).unwrap();
        assert_ne!(r1.public_key(), r2.public_key());

        assert_eq!(
            KeyPair::generate(Some(&[0u8; 31]), Role::Prover).unwrap_err(),
            KeyError::BadSeed(31)
        );
    }

    #[test]
    fn signature_bit_flips_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let keys = KeyPair::from_rng(&mut rng, Role::Prover);
        let msg: Vec<u8> = (0..64).map(|_| rng.gen()).collect();
        let sig = keys.sign(&msg);
        assert!(verify(&keys.public_key(), &msg, &sig));
        for _ in 0..10 {
            let mut m = msg.clone();
            let bit = rng.gen_range(0..m.len() * 8);
            m[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&keys.public_key(), &m, &sig));
        }
    }

    #[test]
    fn cross_key_and_garbage_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let a = KeyPair::from_rng(&mut rng, Role::Prover);
            let b = KeyPair::from_rng(&mut rng, Role::Verifier);
            let sig = a.sign(b"payload");
            assert!(!verify(&b.public_key(), b"payload", &sig));
        }
        let k = KeyPair::from_rng(&mut rng, Role::Prover);
        let sig = k.sign(b"x");
        assert!(!verify_bytes(&k.public_key().0, b"x", &sig.bytes[..63]));
        assert!(!verify_bytes(&[0xff; 32], b"x", &sig.bytes));
        assert!(!verify_bytes(&[], b"x", &[]));
    }

    #[test]
    fn seal_round_trip_and_failures() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let recipient = KeyPair::from_rng(&mut rng, Role::Prover);
        let other = KeyPair::from_rng(&mut rng, Role::Verifier);
        let ad = digest(b"binding");
        let boxed = seal_with_rng(&mut rng, &recipient.public_key(), b"audit log", &ad).unwrap();
        assert_eq!(unseal(&recipient, &boxed, &ad).unwrap(), b"audit log");
        assert_eq!(unseal(&other, &boxed, &ad), Err(DecryptError));
        let mut wrong = ad;
        wrong.0[0] ^= 1;
        assert_eq!(unseal(&recipient, &boxed, &wrong), Err(DecryptError));
        // associated digest stored in the box is also checked by the AEAD
        let mut forged = boxed.clone();
        forged.associated_digest = wrong;
        assert_eq!(unseal(&recipient, &forged, &wrong), Err(DecryptError));
    }

    #[test]
    fn seal_single_byte_perturbations() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let recipient = KeyPair::from_rng(&mut rng, Role::Prover);
        let ad = digest(b"ctx");
        let boxed = seal_with_rng(&mut rng, &recipient.public_key(), b"hello world", &ad).unwrap();
        for i in 0..boxed.ciphertext.len() {
            let mut b = boxed.clone();
            b.ciphertext[i] ^= 0x80;
            assert!(unseal(&recipient, &b, &ad).is_err());
        }
        for i in 0..32 {
            let mut b = boxed.clone();
            b.ephemeral_key[i] ^= 0x01;
            assert!(unseal(&recipient, &b, &ad).is_err());
        }
        for i in 0..SEAL_NONCE_LEN {
            let mut b = boxed.clone();
            b.nonce[i] ^= 0x01;
            assert!(unseal(&recipient, &b, &ad).is_err());
        }
    }

    fn field_list() -> impl Strategy<Value = Vec<(String, Vec<u8>)>> {
        prop::collection::vec(("[a-z]{1,4}", prop::collection::vec(any::<u8>(), 0..6)), 0..5).prop_map(|v| {
            let mut seen = HashSet::new();
            v.into_iter().filter(|(t, _)| seen.insert(t.clone())).collect()
        })
    }

    proptest! {
        #[test]
        fn canonical_encoding_is_injective(a in field_list(), b in field_list()) {
            let ea = canonical_encode(&a).unwrap();
            let eb = canonical_encode(&b).unwrap();
            prop_assert_eq!(a == b, ea == eb);
        }

        #[test]
        fn canonical_decode_inverts_encode(a in field_list()) {
            let enc = canonical_encode(&a).unwrap();
            prop_assert_eq!(canonical_decode(&enc).unwrap(), a);
        }

        #[test]
        fn digest_is_pure(data in prop::collection::vec(any::<u8>(), 0..256)) {
            prop_assert_eq!(digest(&data), digest(&data));
            prop_assert_eq!(digest(&data).0.len(), 32);
        }
    }
}
