//! Cryptographic primitives used by every other module.
//!
//! - signatures: Ed25519
//! - public-key encryption: X25519 ECDH + HKDF-SHA256 + ChaCha20-Poly1305
//! - symmetric encryption: ChaCha20-Poly1305 under an HKDF-expanded key
//! - block cipher: Threefish-256 (production) or a 1-byte XOR cipher (toy)
//!
//! Public and private key byte strings carry a one-byte purpose tag so a
//! signing key handed to an encryption routine (or the reverse) is rejected
//! instead of silently misused.

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, Verifier};
use hkdf::Hkdf;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use threefish::cipher::BlockEncrypt;
use threefish::Threefish256;

const SIGNING_TAG: u8 = 0x01;
const ENCRYPTION_TAG: u8 = 0x02;
const RAW_KEY_LEN: usize = 32;
const AEAD_NONCE_LEN: usize = 12;
const AEAD_TAG_LEN: usize = 16;

/// Length of every hash produced by [`hash`].
pub const HASH_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("key purpose mismatch: expected {expected:?}, got {actual:?}")]
    Purpose {
        expected: KeyPurpose,
        actual: KeyPurpose,
    },
    #[error("malformed key: {0}")]
    Key(&'static str),
    #[error("authentication failed")]
    Authenticity,
    #[error("malformed input: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPurpose {
    Signing,
    Encryption,
}

impl KeyPurpose {
    fn tag(self) -> u8 {
        match self {
            KeyPurpose::Signing => SIGNING_TAG,
            KeyPurpose::Encryption => ENCRYPTION_TAG,
        }
    }

    fn from_tag(tag: u8) -> Result<Self, CryptoError> {
        match tag {
            SIGNING_TAG => Ok(KeyPurpose::Signing),
            ENCRYPTION_TAG => Ok(KeyPurpose::Encryption),
            _ => Err(CryptoError::Key("unknown purpose tag")),
        }
    }
}

/// Split a tagged key into its purpose and the raw 32 key bytes.
fn untag(bytes: &[u8]) -> Result<(KeyPurpose, [u8; RAW_KEY_LEN]), CryptoError> {
    if bytes.len() != RAW_KEY_LEN + 1 {
        return Err(CryptoError::Key("wrong key length"));
    }
    let purpose = KeyPurpose::from_tag(bytes[0])?;
    let mut raw = [0u8; RAW_KEY_LEN];
    raw.copy_from_slice(&bytes[1..]);
    Ok((purpose, raw))
}

fn tagged(purpose: KeyPurpose, raw: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(raw.len() + 1);
    out.push(purpose.tag());
    out.extend_from_slice(raw);
    out
}

fn expect_purpose(bytes: &[u8], expected: KeyPurpose) -> Result<[u8; RAW_KEY_LEN], CryptoError> {
    let (actual, raw) = untag(bytes)?;
    if actual != expected {
        return Err(CryptoError::Purpose { expected, actual });
    }
    Ok(raw)
}

#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    public_key: Vec<u8>,
    private_key: Vec<u8>,
    purpose: KeyPurpose,
}

impl std::fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("KeyPair")
            .field("purpose", &self.purpose)
            .field("public_key", &hex::encode(&self.public_key))
            .finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn generate<R: RngCore + CryptoRng>(purpose: KeyPurpose, rng: &mut R) -> Self {
        match purpose {
            KeyPurpose::Signing => {
                let sk = ed25519_dalek::SigningKey::generate(rng);
                KeyPair {
                    public_key: tagged(purpose, sk.verifying_key().as_bytes()),
                    private_key: tagged(purpose, &sk.to_bytes()),
                    purpose,
                }
            }
            KeyPurpose::Encryption => {
                let sk = x25519_dalek::StaticSecret::random_from_rng(rng);
                let pk = x25519_dalek::PublicKey::from(&sk);
                KeyPair {
                    public_key: tagged(purpose, pk.as_bytes()),
                    private_key: tagged(purpose, &sk.to_bytes()),
                    purpose,
                }
            }
        }
    }

    /// Rebuild a key pair from its tagged private half, checking that the
    /// stored public half matches.
    pub fn from_parts(public_key: Vec<u8>, private_key: Vec<u8>) -> Result<Self, CryptoError> {
        let (purpose, raw) = untag(&private_key)?;
        let derived = match purpose {
            KeyPurpose::Signing => {
                let sk = ed25519_dalek::SigningKey::from_bytes(&raw);
                tagged(purpose, sk.verifying_key().as_bytes())
            }
            KeyPurpose::Encryption => {
                let sk = x25519_dalek::StaticSecret::from(raw);
                tagged(purpose, x25519_dalek::PublicKey::from(&sk).as_bytes())
            }
        };
        if derived != public_key {
            return Err(CryptoError::Key("public key does not match private key"));
        }
        Ok(KeyPair {
            public_key,
            private_key,
            purpose,
        })
    }

    pub fn public_key(&self) -> &[u8] {
        &self.public_key
    }

    pub fn private_key(&self) -> &[u8] {
        &self.private_key
    }

    pub fn purpose(&self) -> KeyPurpose {
        self.purpose
    }
}

/// Sign `message`; the key pair must be a signing key.
pub fn sign(message: &[u8], keypair: &KeyPair) -> Result<Vec<u8>, CryptoError> {
    let raw = expect_purpose(&keypair.private_key, KeyPurpose::Signing)?;
    let sk = ed25519_dalek::SigningKey::from_bytes(&raw);
    Ok(sk.sign(message).to_bytes().to_vec())
}

/// Verify a signature. Any malformed input or wrong-purpose key yields `false`.
pub fn verify(message: &[u8], signature: &[u8], public_key: &[u8]) -> bool {
    let Ok(raw) = expect_purpose(public_key, KeyPurpose::Signing) else {
        return false;
    };
    let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&raw) else {
        return false;
    };
    let Ok(sig) = ed25519_dalek::Signature::from_slice(signature) else {
        return false;
    };
    vk.verify(message, &sig).is_ok()
}

fn hkdf_key(ikm: &[u8], info: &[u8]) -> [u8; 32] {
    let hk = Hkdf::<Sha256>::new(None, ikm);
    let mut okm = [0u8; 32];
    hk.expand(info, &mut okm)
        .expect("32 bytes is a valid HKDF-SHA256 output length");
    okm
}

fn aead_seal<R: RngCore + CryptoRng>(
    key: &[u8; 32],
    plaintext: &[u8],
    aad: &[u8],
    rng: &mut R,
) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
    let mut nonce = [0u8; AEAD_NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let ct = cipher
        .encrypt(
            Nonce::from_slice(&nonce),
            chacha20poly1305::aead::Payload {
                msg: plaintext,
                aad,
            },
        )
        .expect("ChaCha20-Poly1305 encryption is infallible for in-memory buffers");
    let mut out = Vec::with_capacity(AEAD_NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

fn aead_open(key: &[u8; 32], sealed: &[u8], aad: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if sealed.len() < AEAD_NONCE_LEN + AEAD_TAG_LEN {
        return Err(CryptoError::Format(format!(
            "ciphertext of {} bytes is shorter than nonce and tag",
            sealed.len()
        )));
    }
    let (nonce, ct) = sealed.split_at(AEAD_NONCE_LEN);
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
    cipher
        .decrypt(
            Nonce::from_slice(nonce),
            chacha20poly1305::aead::Payload { msg: ct, aad },
        )
        .map_err(|_| CryptoError::Authenticity)
}

/// Encrypt to an encryption-purpose public key.
///
/// Output layout: `ephemeral_public (32) || nonce (12) || ciphertext || tag (16)`.
pub fn pk_encrypt<R: RngCore + CryptoRng>(
    plaintext: &[u8],
    recipient_public: &[u8],
    rng: &mut R,
) -> Result<Vec<u8>, CryptoError> {
    let raw = expect_purpose(recipient_public, KeyPurpose::Encryption)?;
    let recipient = x25519_dalek::PublicKey::from(raw);
    let eph = x25519_dalek::StaticSecret::random_from_rng(&mut *rng);
    let eph_pub = x25519_dalek::PublicKey::from(&eph);
    let shared = eph.diffie_hellman(&recipient);

    let mut info = Vec::with_capacity(64 + 8);
    info.extend_from_slice(b"pk-seal");
    info.extend_from_slice(eph_pub.as_bytes());
    info.extend_from_slice(recipient.as_bytes());
    let key = hkdf_key(shared.as_bytes(), &info);

    let mut out = eph_pub.as_bytes().to_vec();
    out.extend(aead_seal(&key, plaintext, eph_pub.as_bytes(), rng));
    Ok(out)
}

pub fn pk_decrypt(ciphertext: &[u8], recipient: &KeyPair) -> Result<Vec<u8>, CryptoError> {
    let raw = expect_purpose(&recipient.private_key, KeyPurpose::Encryption)?;
    if ciphertext.len() < RAW_KEY_LEN {
        return Err(CryptoError::Format("missing ephemeral key".into()));
    }
    let (eph_bytes, sealed) = ciphertext.split_at(RAW_KEY_LEN);
    let mut eph_raw = [0u8; RAW_KEY_LEN];
    eph_raw.copy_from_slice(eph_bytes);
    let eph_pub = x25519_dalek::PublicKey::from(eph_raw);
    let sk = x25519_dalek::StaticSecret::from(raw);
    let shared = sk.diffie_hellman(&eph_pub);
    let own_pub = x25519_dalek::PublicKey::from(&sk);

    let mut info = Vec::with_capacity(64 + 8);
    info.extend_from_slice(b"pk-seal");
    info.extend_from_slice(eph_pub.as_bytes());
    info.extend_from_slice(own_pub.as_bytes());
    let key = hkdf_key(shared.as_bytes(), &info);
    aead_open(&key, sealed, eph_pub.as_bytes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CipherProfile {
    Production,
    Toy,
}

impl CipherProfile {
    pub fn block_width(self) -> usize {
        match self {
            CipherProfile::Production => 32,
            CipherProfile::Toy => 1,
        }
    }

    pub fn key_width(self) -> usize {
        self.block_width()
    }

    pub fn name(self) -> &'static str {
        match self {
            CipherProfile::Production => "production",
            CipherProfile::Toy => "toy",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            CipherProfile::Production => 0,
            CipherProfile::Toy => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CipherProfile::Production),
            1 => Some(CipherProfile::Toy),
            _ => None,
        }
    }
}

impl std::str::FromStr for CipherProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "production" => Ok(CipherProfile::Production),
            "toy" => Ok(CipherProfile::Toy),
            other => Err(format!("unknown cipher profile `{other}`")),
        }
    }
}

/// A key for [`block_encrypt`] and the symmetric record cipher.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockCipherKey(#[serde(with = "crate::codec::bytes")] Vec<u8>);

impl std::fmt::Debug for BlockCipherKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BlockCipherKey({} bytes)", self.0.len())
    }
}

impl BlockCipherKey {
    pub fn new(bytes: Vec<u8>, profile: CipherProfile) -> Result<Self, CryptoError> {
        if bytes.len() != profile.key_width() {
            return Err(CryptoError::Format(format!(
                "{} profile expects {}-byte keys, got {}",
                profile.name(),
                profile.key_width(),
                bytes.len()
            )));
        }
        Ok(BlockCipherKey(bytes))
    }

    pub fn random<R: RngCore + CryptoRng>(profile: CipherProfile, rng: &mut R) -> Self {
        let mut bytes = vec![0u8; profile.key_width()];
        rng.fill_bytes(&mut bytes);
        BlockCipherKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

/// Encrypt one block. The toy profile XORs the input with the key byte;
/// the production profile is Threefish-256 with an all-zero tweak.
pub fn block_encrypt(
    input: &[u8],
    key: &BlockCipherKey,
    profile: CipherProfile,
) -> Result<Vec<u8>, CryptoError> {
    let width = profile.block_width();
    if input.len() != width {
        return Err(CryptoError::Format(format!(
            "block of {} bytes, profile {} expects {}",
            input.len(),
            profile.name(),
            width
        )));
    }
    if key.0.len() != profile.key_width() {
        return Err(CryptoError::Format(format!(
            "key of {} bytes, profile {} expects {}",
            key.0.len(),
            profile.name(),
            profile.key_width()
        )));
    }
    match profile {
        CipherProfile::Toy => Ok(vec![input[0] ^ key.0[0]]),
        CipherProfile::Production => {
            let cipher = Threefish256::new_from_slice(&key.0)
                .map_err(|_| CryptoError::Key("threefish key length"))?;
            let mut block = threefish::cipher::generic_array::GenericArray::clone_from_slice(input);
            cipher.encrypt_block(&mut block);
            Ok(block.to_vec())
        }
    }
}

/// Authenticated symmetric encryption under a block-cipher key of any
/// profile width. Output: `nonce (12) || ciphertext || tag (16)`.
pub fn sym_encrypt<R: RngCore + CryptoRng>(
    plaintext: &[u8],
    key: &BlockCipherKey,
    rng: &mut R,
) -> Vec<u8> {
    let aead_key = hkdf_key(&key.0, b"record-cipher");
    aead_seal(&aead_key, plaintext, b"", rng)
}

pub fn sym_decrypt(ciphertext: &[u8], key: &BlockCipherKey) -> Result<Vec<u8>, CryptoError> {
    let aead_key = hkdf_key(&key.0, b"record-cipher");
    aead_open(&aead_key, ciphertext, b"")
}

/// SHA-256 over the concatenation of `parts`.
pub fn hash(parts: &[&[u8]]) -> [u8; HASH_LEN] {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update(part);
    }
    hasher.finalize().into()
}

pub fn random_bytes<R: RngCore + CryptoRng>(len: usize, rng: &mut R) -> Vec<u8> {
    let mut out = vec![0u8; len];
    rng.fill_bytes(&mut out);
    out
}

/// XOR `rhs` into `lhs` in place. Panics if lengths differ.
pub fn xor_in_place(lhs: &mut [u8], rhs: &[u8]) {
    assert_eq!(lhs.len(), rhs.len(), "xor of unequal lengths");
    for (a, b) in lhs.iter_mut().zip(rhs) {
        *a ^= b;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(7)
    }

    #[test]
    fn sign_verify_round_trip_and_rejections() {
        let mut rng = rng();
        let kp = KeyPair::generate(KeyPurpose::Signing, &mut rng);
        let other = KeyPair::generate(KeyPurpose::Signing, &mut rng);
        let m = b"grant access to record 17";
        let s = sign(m, &kp).unwrap();
        assert!(verify(m, &s, kp.public_key()));

        let mut extended = m.to_vec();
        extended.push(0);
        assert!(!verify(&extended, &s, kp.public_key()));
        assert!(!verify(m, &s, other.public_key()));
    }

    #[test]
    fn purpose_separation() {
        let mut rng = rng();
        let sig = KeyPair::generate(KeyPurpose::Signing, &mut rng);
        let enc = KeyPair::generate(KeyPurpose::Encryption, &mut rng);
        assert!(matches!(
            sign(b"x", &enc),
            Err(CryptoError::Purpose { .. })
        ));
        assert!(matches!(
            pk_encrypt(b"x", sig.public_key(), &mut rng),
            Err(CryptoError::Purpose { .. })
        ));
        let ct = pk_encrypt(b"x", enc.public_key(), &mut rng).unwrap();
        assert!(matches!(
            pk_decrypt(&ct, &sig),
            Err(CryptoError::Purpose { .. })
        ));
        // an encryption key never verifies a signature
        let s = sign(b"x", &sig).unwrap();
        let mut forged_pub = sig.public_key().to_vec();
        forged_pub[0] = ENCRYPTION_TAG;
        assert!(!verify(b"x", &s, &forged_pub));
    }

    #[test]
    fn pk_round_trip_empty_and_key_sized() {
        let mut rng = rng();
        let kp = KeyPair::generate(KeyPurpose::Encryption, &mut rng);
        let c = pk_encrypt(b"", kp.public_key(), &mut rng).unwrap();
        assert_eq!(pk_decrypt(&c, &kp).unwrap(), b"");

        let sk = random_bytes(32, &mut rng);
        let c = pk_encrypt(&sk, kp.public_key(), &mut rng).unwrap();
        assert_eq!(pk_decrypt(&c, &kp).unwrap(), sk);
    }

    #[test]
    fn pk_tamper_detected_at_every_position() {
        let mut rng = rng();
        let kp = KeyPair::generate(KeyPurpose::Encryption, &mut rng);
        let c = pk_encrypt(b"secret key material", kp.public_key(), &mut rng).unwrap();
        for i in 0..c.len() {
            let mut t = c.clone();
            t[i] ^= 0x01;
            assert!(pk_decrypt(&t, &kp).is_err(), "flip at {i} accepted");
        }
    }

    #[test]
    fn malformed_public_key() {
        let mut rng = rng();
        assert!(matches!(
            pk_encrypt(b"x", &[ENCRYPTION_TAG, 1, 2], &mut rng),
            Err(CryptoError::Key(_))
        ));
        assert!(matches!(
            pk_encrypt(b"x", &[9u8; 33], &mut rng),
            Err(CryptoError::Key(_))
        ));
    }

    #[test]
    fn sym_round_trip_and_failures() {
        let mut rng = rng();
        let k = BlockCipherKey::random(CipherProfile::Production, &mut rng);
        let k2 = BlockCipherKey::random(CipherProfile::Production, &mut rng);
        let payload = random_bytes(1024, &mut rng);
        let c = sym_encrypt(&payload, &k, &mut rng);
        assert_eq!(sym_decrypt(&c, &k).unwrap(), payload);
        assert_eq!(sym_decrypt(&c, &k2), Err(CryptoError::Authenticity));

        let mut t = c.clone();
        *t.last_mut().unwrap() ^= 0x80;
        assert_eq!(sym_decrypt(&t, &k), Err(CryptoError::Authenticity));

        assert!(matches!(
            sym_decrypt(&c[..20], &k),
            Err(CryptoError::Format(_))
        ));
    }

    #[test]
    fn toy_block_examples() {
        let k = BlockCipherKey::new(vec![0x3C], CipherProfile::Toy).unwrap();
        assert_eq!(block_encrypt(&[0x00], &k, CipherProfile::Toy).unwrap(), vec![0x3C]);
        let k = BlockCipherKey::new(vec![0x0F], CipherProfile::Toy).unwrap();
        assert_eq!(block_encrypt(&[0x55], &k, CipherProfile::Toy).unwrap(), vec![0x5A]);
    }

    #[test]
    fn toy_cipher_is_xor_for_all_pairs() {
        for key in 0..=255u8 {
            let k = BlockCipherKey::new(vec![key], CipherProfile::Toy).unwrap();
            for input in 0..=255u8 {
                assert_eq!(
                    block_encrypt(&[input], &k, CipherProfile::Toy).unwrap(),
                    vec![input ^ key]
                );
            }
        }
    }

    #[test]
    fn block_width_mismatch() {
        let mut rng = rng();
        let k = BlockCipherKey::random(CipherProfile::Production, &mut rng);
        assert!(matches!(
            block_encrypt(&[0u8; 16], &k, CipherProfile::Production),
            Err(CryptoError::Format(_))
        ));
        assert!(BlockCipherKey::new(vec![1, 2], CipherProfile::Toy).is_err());
    }

    #[test]
    fn production_block_cipher_injective_on_sample() {
        let mut rng = rng();
        let k = BlockCipherKey::random(CipherProfile::Production, &mut rng);
        let mut inputs = HashSet::new();
        while inputs.len() < 256 {
            inputs.insert(random_bytes(32, &mut rng));
        }
        let outputs: HashSet<Vec<u8>> = inputs
            .iter()
            .map(|i| block_encrypt(i, &k, CipherProfile::Production).unwrap())
            .collect();
        assert_eq!(outputs.len(), 256);
    }

    #[test]
    fn zero_key_is_valid() {
        let k = BlockCipherKey::new(vec![0u8; 32], CipherProfile::Production).unwrap();
        let out = block_encrypt(&[0u8; 32], &k, CipherProfile::Production).unwrap();
        assert_eq!(out.len(), 32);
        assert_ne!(out, vec![0u8; 32]);
    }

    #[test]
    fn keypair_from_parts_checks_consistency() {
        let mut rng = rng();
        let kp = KeyPair::generate(KeyPurpose::Encryption, &mut rng);
        let again =
            KeyPair::from_parts(kp.public_key().to_vec(), kp.private_key().to_vec()).unwrap();
        assert_eq!(again, kp);
        let other = KeyPair::generate(KeyPurpose::Encryption, &mut rng);
        assert!(KeyPair::from_parts(other.public_key().to_vec(), kp.private_key().to_vec()).is_err());
    }
}
