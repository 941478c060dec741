//! Decentralized identifiers, DID documents and wallets, plus the canonical
//! field encoding that all signed material in the crate is computed over.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credential::DelegationCredential;
use crate::crypto::{self, CryptoError, KeyPair, KeyPurpose};
use crate::ledger::Ledger;
use crate::Tick;

/// The only DID method this crate issues and resolves.
pub const DID_METHOD: &str = "sim";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IdentityError {
    #[error("canonical encoding: {0}")]
    Format(String),
    #[error("invalid DID `{0}`")]
    InvalidDid(String),
    #[error("DID not found: {0}")]
    NotFound(Did),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// Encode named fields deterministically.
///
/// Fields are sorted by name; each is written as a 4-byte big-endian name
/// length, the name, a 4-byte big-endian value length, and the value.
pub fn canonical_encode<'a, I>(fields: I) -> Result<Vec<u8>, IdentityError>
where
    I: IntoIterator<Item = (&'a str, &'a [u8])>,
{
    let mut sorted: BTreeMap<&str, &[u8]> = BTreeMap::new();
    for (name, value) in fields {
        if sorted.insert(name, value).is_some() {
            return Err(IdentityError::Format(format!("duplicate field `{name}`")));
        }
    }
    Ok(encode_sorted(sorted.iter().map(|(k, v)| (*k, *v))))
}

/// Infallible variant for maps, whose keys are unique by construction.
pub fn canonical_encode_map(fields: &BTreeMap<String, Vec<u8>>) -> Vec<u8> {
    encode_sorted(fields.iter().map(|(k, v)| (k.as_str(), v.as_slice())))
}

fn encode_sorted<'a>(fields: impl Iterator<Item = (&'a str, &'a [u8])>) -> Vec<u8> {
    let mut out = Vec::new();
    for (name, value) in fields {
        out.extend_from_slice(&(name.len() as u32).to_be_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(value.len() as u32).to_be_bytes());
        out.extend_from_slice(value);
    }
    out
}

/// Inverse of [`canonical_encode`]. Rejects unsorted or duplicate names and
/// trailing garbage, so every accepted input has exactly one encoding.
pub fn canonical_decode(bytes: &[u8]) -> Result<BTreeMap<String, Vec<u8>>, IdentityError> {
    fn take<'a>(bytes: &'a [u8], pos: &mut usize, len: usize) -> Result<&'a [u8], IdentityError> {
        let end = pos
            .checked_add(len)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| IdentityError::Format("truncated field".into()))?;
        let out = &bytes[*pos..end];
        *pos = end;
        Ok(out)
    }
    fn take_len(bytes: &[u8], pos: &mut usize) -> Result<usize, IdentityError> {
        let raw = take(bytes, pos, 4)?;
        Ok(u32::from_be_bytes(raw.try_into().expect("4 bytes")) as usize)
    }

    let mut out = BTreeMap::new();
    let mut pos = 0;
    let mut last: Option<String> = None;
    while pos < bytes.len() {
        let name_len = take_len(bytes, &mut pos)?;
        let name = std::str::from_utf8(take(bytes, &mut pos, name_len)?)
            .map_err(|_| IdentityError::Format("field name is not UTF-8".into()))?
            .to_string();
        let value_len = take_len(bytes, &mut pos)?;
        let value = take(bytes, &mut pos, value_len)?.to_vec();
        if let Some(prev) = &last {
            if prev.as_str() >= name.as_str() {
                return Err(IdentityError::Format(format!(
                    "field `{name}` out of canonical order"
                )));
            }
        }
        last = Some(name.clone());
        out.insert(name, value);
    }
    Ok(out)
}

/// Fetch a required field from a decoded canonical map.
pub(crate) fn field<'a>(
    map: &'a BTreeMap<String, Vec<u8>>,
    name: &str,
) -> Result<&'a [u8], IdentityError> {
    map.get(name)
        .map(Vec::as_slice)
        .ok_or_else(|| IdentityError::Format(format!("missing field `{name}`")))
}

pub(crate) fn u64_field(map: &BTreeMap<String, Vec<u8>>, name: &str) -> Result<u64, IdentityError> {
    let raw = field(map, name)?;
    let arr: [u8; 8] = raw
        .try_into()
        .map_err(|_| IdentityError::Format(format!("field `{name}` is not a u64")))?;
    Ok(u64::from_be_bytes(arr))
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Did {
    method: String,
    method_specific_id: String,
}

impl Did {
    /// The DID for a signing public key: `did:sim:<base58(sha256(key))>`.
    pub fn from_signing_key(signing_public: &[u8]) -> Self {
        Did {
            method: DID_METHOD.to_string(),
            method_specific_id: bs58::encode(crypto::hash(&[signing_public])).into_string(),
        }
    }

    pub fn method(&self) -> &str {
        &self.method
    }

    pub fn method_specific_id(&self) -> &str {
        &self.method_specific_id
    }

    /// Whether this DID is the one derived from `signing_public`.
    pub fn matches_key(&self, signing_public: &[u8]) -> bool {
        *self == Did::from_signing_key(signing_public)
    }
}

impl fmt::Display for Did {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "did:{}:{}", self.method, self.method_specific_id)
    }
}

impl FromStr for Did {
    type Err = IdentityError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.splitn(3, ':');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("did"), Some(method), Some(id))
                if !method.is_empty()
                    && method.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit())
                    && !id.is_empty()
                    && id.bytes().all(|b| b.is_ascii_alphanumeric()) =>
            {
                Ok(Did {
                    method: method.to_string(),
                    method_specific_id: id.to_string(),
                })
            }
            _ => Err(IdentityError::InvalidDid(s.to_string())),
        }
    }
}

impl Serialize for Did {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Did {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DidDocument {
    pub did: Did,
    #[serde(with = "crate::codec::bytes")]
    pub signing_public_key: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub encryption_public_key: Vec<u8>,
    pub created_at: Tick,
}

impl DidDocument {
    pub fn to_canonical(&self) -> Vec<u8> {
        let did = self.did.to_string();
        let created = self.created_at.0.to_be_bytes();
        canonical_encode([
            ("did", did.as_bytes()),
            ("signing_public", self.signing_public_key.as_slice()),
            ("encryption_public", self.encryption_public_key.as_slice()),
            ("created_at", created.as_slice()),
        ])
        .expect("static field names are unique")
    }

    pub fn from_canonical(bytes: &[u8]) -> Result<Self, IdentityError> {
        let map = canonical_decode(bytes)?;
        let did_text = std::str::from_utf8(field(&map, "did")?)
            .map_err(|_| IdentityError::Format("did is not UTF-8".into()))?;
        Ok(DidDocument {
            did: did_text.parse()?,
            signing_public_key: field(&map, "signing_public")?.to_vec(),
            encryption_public_key: field(&map, "encryption_public")?.to_vec(),
            created_at: Tick(u64_field(&map, "created_at")?),
        })
    }

    /// The DID must be derived from the signing key it publishes.
    pub fn is_self_consistent(&self) -> bool {
        self.did.method() == DID_METHOD && self.did.matches_key(&self.signing_public_key)
    }
}

/// Private key material and local storage for one participant.
#[derive(Debug, Clone, PartialEq)]
pub struct Wallet {
    did: Did,
    signing: KeyPair,
    encryption: KeyPair,
    credentials: Vec<DelegationCredential>,
    secrets: BTreeMap<String, Vec<u8>>,
}

/// Create a fresh identity. The document still has to be registered on the
/// ledger before anyone can resolve it.
pub fn create_identity<R: RngCore + CryptoRng>(rng: &mut R, now: Tick) -> (Wallet, DidDocument) {
    let signing = KeyPair::generate(KeyPurpose::Signing, rng);
    let encryption = KeyPair::generate(KeyPurpose::Encryption, rng);
    let did = Did::from_signing_key(signing.public_key());
    let doc = DidDocument {
        did: did.clone(),
        signing_public_key: signing.public_key().to_vec(),
        encryption_public_key: encryption.public_key().to_vec(),
        created_at: now,
    };
    let wallet = Wallet {
        did,
        signing,
        encryption,
        credentials: Vec::new(),
        secrets: BTreeMap::new(),
    };
    (wallet, doc)
}

/// Resolve a DID to its earliest registered document.
pub fn resolve(did: &Did, ledger: &Ledger) -> Result<DidDocument, IdentityError> {
    ledger
        .resolve(did)
        .ok_or_else(|| IdentityError::NotFound(did.clone()))
}

impl Wallet {
    pub fn did(&self) -> &Did {
        &self.did
    }

    pub fn signing_keypair(&self) -> &KeyPair {
        &self.signing
    }

    pub fn encryption_keypair(&self) -> &KeyPair {
        &self.encryption
    }

    pub fn sign(&self, message: &[u8]) -> Vec<u8> {
        crypto::sign(message, &self.signing).expect("wallet signing key has signing purpose")
    }

    pub fn decrypt(&self, ciphertext: &[u8]) -> Result<Vec<u8>, CryptoError> {
        crypto::pk_decrypt(ciphertext, &self.encryption)
    }

    pub fn document(&self, created_at: Tick) -> DidDocument {
        DidDocument {
            did: self.did.clone(),
            signing_public_key: self.signing.public_key().to_vec(),
            encryption_public_key: self.encryption.public_key().to_vec(),
            created_at,
        }
    }

    pub fn credentials(&self) -> &[DelegationCredential] {
        &self.credentials
    }

    pub fn store_credential(&mut self, credential: DelegationCredential) {
        self.credentials.push(credential);
    }

    pub fn secrets(&self) -> &BTreeMap<String, Vec<u8>> {
        &self.secrets
    }

    pub fn secret(&self, label: &str) -> Option<&[u8]> {
        self.secrets.get(label).map(Vec::as_slice)
    }

    pub fn put_secret(&mut self, label: impl Into<String>, value: Vec<u8>) {
        self.secrets.insert(label.into(), value);
    }

    /// Every byte string this wallet holds, concatenated. Used by knowledge
    /// audits that scan an actor's state for specific values.
    pub fn raw_view(&self) -> Vec<u8> {
        let mut out = self.did.to_string().into_bytes();
        out.extend_from_slice(self.signing.public_key());
        out.extend_from_slice(self.signing.private_key());
        out.extend_from_slice(self.encryption.public_key());
        out.extend_from_slice(self.encryption.private_key());
        for (label, value) in &self.secrets {
            out.extend_from_slice(label.as_bytes());
            out.extend_from_slice(value);
        }
        for credential in &self.credentials {
            out.extend(credential.raw_view());
        }
        out
    }

    pub fn export(&self) -> WalletFile {
        WalletFile {
            did: self.did.clone(),
            signing_public: self.signing.public_key().to_vec(),
            signing_private: self.signing.private_key().to_vec(),
            encryption_public: self.encryption.public_key().to_vec(),
            encryption_private: self.encryption.private_key().to_vec(),
            credentials: self.credentials.clone(),
            secrets: self.secrets.clone(),
        }
    }

    pub fn import(file: WalletFile) -> Result<Self, IdentityError> {
        let signing = KeyPair::from_parts(file.signing_public, file.signing_private)?;
        let encryption = KeyPair::from_parts(file.encryption_public, file.encryption_private)?;
        if signing.purpose() != KeyPurpose::Signing || encryption.purpose() != KeyPurpose::Encryption
        {
            return Err(IdentityError::Crypto(CryptoError::Key("wallet key purposes swapped")));
        }
        if !file.did.matches_key(signing.public_key()) {
            return Err(IdentityError::InvalidDid(file.did.to_string()));
        }
        Ok(Wallet {
            did: file.did,
            signing,
            encryption,
            credentials: file.credentials,
            secrets: file.secrets,
        })
    }
}

/// On-disk wallet layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalletFile {
    pub did: Did,
    #[serde(with = "crate::codec::bytes")]
    pub signing_public: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub signing_private: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub encryption_public: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub encryption_private: Vec<u8>,
    pub credentials: Vec<DelegationCredential>,
    #[serde(with = "crate::codec::byte_map")]
    pub secrets: BTreeMap<String, Vec<u8>>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn encode_examples() {
        assert_eq!(canonical_encode([]).unwrap(), Vec::<u8>::new());
        assert_eq!(
            canonical_encode([("a", &[0x01u8][..])]).unwrap(),
            vec![0, 0, 0, 1, b'a', 0, 0, 0, 1, 0x01]
        );
        let ab = canonical_encode([("b", &b"2"[..]), ("a", &b"1"[..])]).unwrap();
        let ba = canonical_encode([("a", &b"1"[..]), ("b", &b"2"[..])]).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn duplicate_names_rejected() {
        assert!(matches!(
            canonical_encode([("x", &b""[..]), ("x", &b"1"[..])]),
            Err(IdentityError::Format(_))
        ));
    }

    #[test]
    fn decode_rejects_noncanonical() {
        let mut bytes = canonical_encode([("a", &b"1"[..]), ("b", &b"2"[..])]).unwrap();
        assert!(canonical_decode(&bytes).is_ok());
        bytes.push(0);
        assert!(canonical_decode(&bytes).is_err());
        // swapped order
        let mut swapped = encode_sorted([("b", &b"2"[..]), ("a", &b"1"[..])].into_iter());
        assert!(canonical_decode(&swapped).is_err());
        swapped.truncate(3);
        assert!(canonical_decode(&swapped).is_err());
    }

    proptest! {
        #[test]
        fn encode_is_injective_via_decode(
            fields in prop::collection::btree_map("[a-z_]{1,12}", prop::collection::vec(any::<u8>(), 0..40), 0..8)
        ) {
            let encoded = canonical_encode_map(&fields);
            let decoded = canonical_decode(&encoded).unwrap();
            prop_assert_eq!(decoded, fields);
        }
    }

    #[test]
    fn identities_are_distinct_and_self_consistent() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let (w1, d1) = create_identity(&mut rng, Tick(0));
        let (w2, d2) = create_identity(&mut rng, Tick(0));
        assert_ne!(d1.did, d2.did);
        assert!(d1.is_self_consistent());
        assert_eq!(
            d1.did.method_specific_id(),
            bs58::encode(crypto::hash(&[&d1.signing_public_key])).into_string()
        );
        let sig = w1.sign(b"m");
        assert!(crypto::verify(b"m", &sig, &d1.signing_public_key));
        assert!(!crypto::verify(b"m", &sig, &d2.signing_public_key));
        assert_eq!(w2.document(Tick(0)), d2);
    }

    #[test]
    fn did_string_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let (_, doc) = create_identity(&mut rng, Tick(0));
        let text = doc.did.to_string();
        assert!(text.starts_with("did:sim:"));
        assert_eq!(text.parse::<Did>().unwrap(), doc.did);
        assert!("did:sim".parse::<Did>().is_err());
        assert!("dad:sim:abc".parse::<Did>().is_err());
        assert!("did:SIM:abc".parse::<Did>().is_err());
    }

    #[test]
    fn document_canonical_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let (_, doc) = create_identity(&mut rng, Tick(9));
        assert_eq!(DidDocument::from_canonical(&doc.to_canonical()).unwrap(), doc);
    }

    #[test]
    fn wallet_export_import() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let (mut w, _) = create_identity(&mut rng, Tick(0));
        w.put_secret("sk", vec![1, 2, 3]);
        let json = serde_json::to_string(&w.export()).unwrap();
        for name in [
            "\"did\"",
            "\"signing_public\"",
            "\"signing_private\"",
            "\"encryption_public\"",
            "\"encryption_private\"",
            "\"credentials\"",
            "\"secrets\"",
        ] {
            assert!(json.contains(name), "missing {name}");
        }
        let back = Wallet::import(serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn import_rejects_foreign_did() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let (w1, _) = create_identity(&mut rng, Tick(0));
        let (w2, _) = create_identity(&mut rng, Tick(0));
        let mut file = w1.export();
        file.did = w2.did().clone();
        assert!(Wallet::import(file).is_err());
    }
}
