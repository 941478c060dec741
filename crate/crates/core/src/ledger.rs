//! In-process append-only ledger standing in for a blockchain.
//!
//! Records are hash-chained: `record_hash = H(seq || kind || payload || prev_hash)`
//! with an all-zero `prev_hash` at genesis. Appends take a write lock, so
//! concurrent appenders observe a single total order; readers see a prefix.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::sync::RwLock;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credential::RevocationEntry;
use crate::crypto::{self, CryptoError, KeyPair, HASH_LEN};
use crate::identity::{
    canonical_decode, canonical_encode, canonical_encode_map, field, u64_field, Did, DidDocument,
    Wallet,
};
use crate::threshold::{CombineMode, PartyShares, ThresholdError};
use crate::Tick;

pub type Hash = [u8; HASH_LEN];

pub const GENESIS_PREV_HASH: Hash = [0u8; HASH_LEN];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("invalid {kind:?} payload: {reason}")]
    Validation { kind: RecordKind, reason: String },
    #[error("not found")]
    NotFound,
    #[error("hash chain broken at seq {seq}")]
    ChainBroken { seq: u64 },
    #[error("identity is not a recipient of this authorization record")]
    NotARecipient,
    #[error("malformed export: {0}")]
    Format(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordKind {
    DidRegistration,
    Authorization,
    Revocation,
    AccessEvent,
}

impl RecordKind {
    fn code(self) -> u8 {
        match self {
            RecordKind::DidRegistration => 0,
            RecordKind::Authorization => 1,
            RecordKind::Revocation => 2,
            RecordKind::AccessEvent => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerRecord {
    pub seq: u64,
    pub kind: RecordKind,
    pub payload: Vec<u8>,
    pub prev_hash: Hash,
    pub record_hash: Hash,
}

pub fn record_hash(seq: u64, kind: RecordKind, payload: &[u8], prev_hash: &Hash) -> Hash {
    crypto::hash(&[&seq.to_be_bytes(), &[kind.code()], payload, prev_hash])
}

/// True iff every record's hash and back-link verify and seqs are contiguous.
pub fn verify_chain(records: &[LedgerRecord]) -> bool {
    let mut prev = GENESIS_PREV_HASH;
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64
            || r.prev_hash != prev
            || r.record_hash != record_hash(r.seq, r.kind, &r.payload, &r.prev_hash)
        {
            return false;
        }
        prev = r.record_hash;
    }
    true
}

/// `H(did || pseudo_id)`: lets a party find its own entries without naming it.
pub fn party_tag(did: &Did, pseudo_id: &[u8]) -> Hash {
    crypto::hash(&[did.to_string().as_bytes(), pseudo_id])
}

fn invalid(kind: RecordKind, reason: impl ToString) -> LedgerError {
    LedgerError::Validation {
        kind,
        reason: reason.to_string(),
    }
}

/// Posted by the data owner under a fresh pseudonym for each delegation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorizationRecord {
    pub pseudo_id: Vec<u8>,
    pub ephemeral_public_key: Vec<u8>,
    pub ehr_id: Vec<u8>,
    /// recipient tag -> share fragment encrypted to that recipient
    pub blinded_shares: BTreeMap<Hash, Vec<u8>>,
    pub mode: CombineMode,
    /// Identifiers of the credentials issued under this pseudonym.
    pub vc_ids: Vec<Hash>,
    pub posting_signature: Vec<u8>,
}

impl AuthorizationRecord {
    /// Build and sign a record; the pseudonym is the hash of `ephemeral`'s public key.
    pub fn new_signed(
        ephemeral: &KeyPair,
        ehr_id: Vec<u8>,
        blinded_shares: BTreeMap<Hash, Vec<u8>>,
        mode: CombineMode,
        vc_ids: Vec<Hash>,
    ) -> Result<Self, CryptoError> {
        let mut record = AuthorizationRecord {
            pseudo_id: pseudo_id_for(ephemeral.public_key()).to_vec(),
            ephemeral_public_key: ephemeral.public_key().to_vec(),
            ehr_id,
            blinded_shares,
            mode,
            vc_ids,
            posting_signature: Vec::new(),
        };
        record.posting_signature = crypto::sign(&record.signed_bytes(), ephemeral)?;
        Ok(record)
    }

    fn shares_bytes(&self) -> Vec<u8> {
        let map: BTreeMap<String, Vec<u8>> = self
            .blinded_shares
            .iter()
            .map(|(tag, blob)| (hex::encode(tag), blob.clone()))
            .collect();
        canonical_encode_map(&map)
    }

    fn signed_fields(&self) -> BTreeMap<String, Vec<u8>> {
        let mut m = BTreeMap::new();
        m.insert("pseudo_id".into(), self.pseudo_id.clone());
        m.insert("ephemeral_public".into(), self.ephemeral_public_key.clone());
        m.insert("ehr_id".into(), self.ehr_id.clone());
        m.insert("blinded_shares".into(), self.shares_bytes());
        m.insert("mode".into(), vec![self.mode.code()]);
        m.insert("vc_ids".into(), self.vc_ids.concat());
        m
    }

    pub fn signed_bytes(&self) -> Vec<u8> {
        canonical_encode_map(&self.signed_fields())
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let mut m = self.signed_fields();
        m.insert("posting_signature".into(), self.posting_signature.clone());
        canonical_encode_map(&m)
    }

    pub fn from_payload(bytes: &[u8]) -> Result<Self, LedgerError> {
        let kind = RecordKind::Authorization;
        let map = canonical_decode(bytes).map_err(|e| invalid(kind, e))?;
        if map.len() != 7 {
            return Err(invalid(kind, "unexpected field set"));
        }
        let get = |n: &str| field(&map, n).map(<[u8]>::to_vec).map_err(|e| invalid(kind, e));
        let shares_map = canonical_decode(&get("blinded_shares")?).map_err(|e| invalid(kind, e))?;
        let mut blinded_shares = BTreeMap::new();
        for (tag_hex, blob) in shares_map {
            let tag: Hash = hex::decode(&tag_hex)
                .ok()
                .and_then(|t| t.try_into().ok())
                .ok_or_else(|| invalid(kind, "recipient tag"))?;
            if hex::encode(tag) != tag_hex {
                return Err(invalid(kind, "non-canonical recipient tag"));
            }
            blinded_shares.insert(tag, blob);
        }
        let mode = match get("mode")?.as_slice() {
            [c] => CombineMode::from_code(*c).ok_or_else(|| invalid(kind, "mode"))?,
            _ => return Err(invalid(kind, "mode")),
        };
        let ids = get("vc_ids")?;
        if ids.len() % HASH_LEN != 0 {
            return Err(invalid(kind, "vc_ids length"));
        }
        let vc_ids = ids
            .chunks(HASH_LEN)
            .map(|c| c.try_into().expect("chunk is hash sized"))
            .collect();
        Ok(AuthorizationRecord {
            pseudo_id: get("pseudo_id")?,
            ephemeral_public_key: get("ephemeral_public")?,
            ehr_id: get("ehr_id")?,
            blinded_shares,
            mode,
            vc_ids,
            posting_signature: get("posting_signature")?,
        })
    }

    pub fn validate(&self) -> Result<(), LedgerError> {
        let kind = RecordKind::Authorization;
        if pseudo_id_for(&self.ephemeral_public_key).as_slice() != self.pseudo_id.as_slice() {
            return Err(invalid(kind, "pseudo_id is not the hash of the ephemeral key"));
        }
        if !crypto::verify(
            &self.signed_bytes(),
            &self.posting_signature,
            &self.ephemeral_public_key,
        ) {
            return Err(invalid(kind, "posting signature does not verify"));
        }
        Ok(())
    }
}

pub fn pseudo_id_for(ephemeral_public: &[u8]) -> Hash {
    crypto::hash(&[ephemeral_public])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccessEventKind {
    NotaryVerified,
    NotaryDenied,
    DcVerified,
    DcGrantedLink,
    DownloadCompleted,
}

impl AccessEventKind {
    fn code(self) -> u8 {
        match self {
            AccessEventKind::NotaryVerified => 0,
            AccessEventKind::NotaryDenied => 1,
            AccessEventKind::DcVerified => 2,
            AccessEventKind::DcGrantedLink => 3,
            AccessEventKind::DownloadCompleted => 4,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => AccessEventKind::NotaryVerified,
            1 => AccessEventKind::NotaryDenied,
            2 => AccessEventKind::DcVerified,
            3 => AccessEventKind::DcGrantedLink,
            4 => AccessEventKind::DownloadCompleted,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AccessEvent {
    pub pseudo_id: Vec<u8>,
    pub ehr_id: Vec<u8>,
    pub actor_tag: Hash,
    pub event: AccessEventKind,
    pub at: Tick,
}

impl AccessEvent {
    pub fn new(actor: &Did, pseudo_id: &[u8], ehr_id: &[u8], event: AccessEventKind, at: Tick) -> Self {
        AccessEvent {
            pseudo_id: pseudo_id.to_vec(),
            ehr_id: ehr_id.to_vec(),
            actor_tag: party_tag(actor, pseudo_id),
            event,
            at,
        }
    }

    pub fn to_payload(&self) -> Vec<u8> {
        let at = self.at.0.to_be_bytes();
        canonical_encode([
            ("pseudo_id", self.pseudo_id.as_slice()),
            ("ehr_id", self.ehr_id.as_slice()),
            ("actor_tag", &self.actor_tag[..]),
            ("event", &[self.event.code()][..]),
            ("at", &at[..]),
        ])
        .expect("static field names are unique")
    }

    pub fn from_payload(bytes: &[u8]) -> Result<Self, LedgerError> {
        let kind = RecordKind::AccessEvent;
        let map = canonical_decode(bytes).map_err(|e| invalid(kind, e))?;
        if map.len() != 5 {
            return Err(invalid(kind, "unexpected field set"));
        }
        let get = |n: &str| field(&map, n).map_err(|e| invalid(kind, e));
        let event = match get("event")? {
            [c] => AccessEventKind::from_code(*c).ok_or_else(|| invalid(kind, "event code"))?,
            _ => return Err(invalid(kind, "event")),
        };
        Ok(AccessEvent {
            pseudo_id: get("pseudo_id")?.to_vec(),
            ehr_id: get("ehr_id")?.to_vec(),
            actor_tag: get("actor_tag")?
                .try_into()
                .map_err(|_| invalid(kind, "actor tag"))?,
            event,
            at: Tick(u64_field(&map, "at").map_err(|e| invalid(kind, e))?),
        })
    }
}

#[derive(Debug, Default)]
pub struct Ledger {
    records: RwLock<Vec<LedgerRecord>>,
}

/// One line of the newline-delimited export.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExportLine {
    seq: u64,
    kind: RecordKind,
    payload: String,
    prev_hash: String,
    record_hash: String,
}

impl Ledger {
    pub fn new() -> Self {
        Ledger::default()
    }

    /// Rebuild from records, verifying the chain first.
    pub fn from_records(records: Vec<LedgerRecord>) -> Result<Self, LedgerError> {
        if let Some(seq) = first_break(&records) {
            return Err(LedgerError::ChainBroken { seq });
        }
        Ok(Ledger {
            records: RwLock::new(records),
        })
    }

    pub fn len(&self) -> usize {
        self.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.read().is_empty()
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, Vec<LedgerRecord>> {
        self.records.read().expect("ledger lock poisoned")
    }

    pub fn records(&self) -> Vec<LedgerRecord> {
        self.read().clone()
    }

    pub fn head_hash(&self) -> Hash {
        self.read()
            .last()
            .map(|r| r.record_hash)
            .unwrap_or(GENESIS_PREV_HASH)
    }

    pub fn verify_chain(&self) -> bool {
        verify_chain(&self.read())
    }

    /// Validate `payload` for `kind` and append it. Revocations of an already
    /// revoked credential return the existing record's seq without appending.
    pub fn append(&self, kind: RecordKind, payload: Vec<u8>) -> Result<u64, LedgerError> {
        let mut records = self.records.write().expect("ledger lock poisoned");
        match kind {
            RecordKind::DidRegistration => {
                let doc = DidDocument::from_canonical(&payload).map_err(|e| invalid(kind, e))?;
                if !doc.is_self_consistent() {
                    return Err(invalid(kind, "DID is not derived from its signing key"));
                }
            }
            RecordKind::Authorization => {
                AuthorizationRecord::from_payload(&payload)?.validate()?;
            }
            RecordKind::Revocation => {
                let entry = RevocationEntry::from_payload(&payload).map_err(|e| invalid(kind, e))?;
                if let Some(existing) = records.iter().find(|r| {
                    r.kind == RecordKind::Revocation
                        && RevocationEntry::from_payload(&r.payload)
                            .map(|e| e.vc_id == entry.vc_id)
                            .unwrap_or(false)
                }) {
                    return Ok(existing.seq);
                }
                let auth = records
                    .iter()
                    .rev()
                    .filter(|r| r.kind == RecordKind::Authorization)
                    .filter_map(|r| AuthorizationRecord::from_payload(&r.payload).ok())
                    .find(|a| a.pseudo_id == entry.revoked_by)
                    .ok_or_else(|| invalid(kind, "no authorization under this pseudonym"))?;
                if !auth.vc_ids.contains(&entry.vc_id) {
                    return Err(invalid(kind, "credential not issued under this pseudonym"));
                }
                if !entry.verify(&auth.ephemeral_public_key) {
                    return Err(invalid(kind, "revocation signature does not verify"));
                }
            }
            RecordKind::AccessEvent => {
                AccessEvent::from_payload(&payload)?;
            }
        }
        let seq = records.len() as u64;
        let prev_hash = records.last().map(|r| r.record_hash).unwrap_or(GENESIS_PREV_HASH);
        let hash = record_hash(seq, kind, &payload, &prev_hash);
        records.push(LedgerRecord {
            seq,
            kind,
            payload,
            prev_hash,
            record_hash: hash,
        });
        Ok(seq)
    }

    pub fn register_did(&self, doc: &DidDocument) -> Result<u64, LedgerError> {
        self.append(RecordKind::DidRegistration, doc.to_canonical())
    }

    pub fn post_authorization(&self, record: &AuthorizationRecord) -> Result<u64, LedgerError> {
        self.append(RecordKind::Authorization, record.to_payload())
    }

    pub fn post_revocation(&self, entry: &RevocationEntry) -> Result<u64, LedgerError> {
        self.append(RecordKind::Revocation, entry.to_payload())
    }

    pub fn log_access(&self, event: &AccessEvent) -> Result<u64, LedgerError> {
        self.append(RecordKind::AccessEvent, event.to_payload())
    }

    /// Earliest registration of `did`.
    pub fn resolve(&self, did: &Did) -> Option<DidDocument> {
        self.read()
            .iter()
            .filter(|r| r.kind == RecordKind::DidRegistration)
            .filter_map(|r| DidDocument::from_canonical(&r.payload).ok())
            .find(|d| &d.did == did)
    }

    pub fn authorizations(&self) -> Vec<AuthorizationRecord> {
        self.read()
            .iter()
            .filter(|r| r.kind == RecordKind::Authorization)
            .filter_map(|r| AuthorizationRecord::from_payload(&r.payload).ok())
            .collect()
    }

    /// Latest authorization record for `(pseudo_id, ehr_id)`.
    pub fn find_authorization(
        &self,
        pseudo_id: &[u8],
        ehr_id: &[u8],
    ) -> Result<AuthorizationRecord, LedgerError> {
        self.authorizations()
            .into_iter()
            .rev()
            .find(|a| a.pseudo_id == pseudo_id && a.ehr_id == ehr_id)
            .ok_or(LedgerError::NotFound)
    }

    pub fn is_revoked(&self, vc_id: &[u8]) -> bool {
        self.read()
            .iter()
            .filter(|r| r.kind == RecordKind::Revocation)
            .filter_map(|r| RevocationEntry::from_payload(&r.payload).ok())
            .any(|e| e.vc_id.as_slice() == vc_id)
    }

    pub fn access_events(&self) -> Vec<(u64, AccessEvent)> {
        self.read()
            .iter()
            .filter(|r| r.kind == RecordKind::AccessEvent)
            .filter_map(|r| AccessEvent::from_payload(&r.payload).ok().map(|e| (r.seq, e)))
            .collect()
    }

    /// Concatenated raw payloads: everything an outsider can read.
    pub fn raw_view(&self) -> Vec<u8> {
        self.read().iter().flat_map(|r| r.payload.clone()).collect()
    }

    pub fn export<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in self.read().iter() {
            let line = ExportLine {
                seq: r.seq,
                kind: r.kind,
                payload: crate::codec::b64(&r.payload),
                prev_hash: hex::encode(r.prev_hash),
                record_hash: hex::encode(r.record_hash),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn export_string(&self) -> String {
        let mut buf = Vec::new();
        self.export(&mut buf).expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("export is UTF-8")
    }

    /// Parse an export and verify its chain.
    pub fn import<R: BufRead>(input: R) -> Result<Self, LedgerError> {
        let mut records = Vec::new();
        for (i, line) in input.lines().enumerate() {
            let line = line.map_err(|e| LedgerError::Format(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ExportLine = serde_json::from_str(&line)
                .map_err(|e| LedgerError::Format(format!("line {}: {e}", i + 1)))?;
            let hash = |text: &str| -> Result<Hash, LedgerError> {
                hex::decode(text)
                    .ok()
                    .and_then(|b| b.try_into().ok())
                    .ok_or_else(|| LedgerError::Format(format!("line {}: bad hash", i + 1)))
            };
            records.push(LedgerRecord {
                seq: parsed.seq,
                kind: parsed.kind,
                payload: crate::codec::unb64(&parsed.payload)
                    .map_err(|e| LedgerError::Format(format!("line {}: {e}", i + 1)))?,
                prev_hash: hash(&parsed.prev_hash)?,
                record_hash: hash(&parsed.record_hash)?,
            });
        }
        Ledger::from_records(records)
    }
}

fn first_break(records: &[LedgerRecord]) -> Option<u64> {
    let mut prev = GENESIS_PREV_HASH;
    for (i, r) in records.iter().enumerate() {
        if r.seq != i as u64
            || r.prev_hash != prev
            || r.record_hash != record_hash(r.seq, r.kind, &r.payload, &r.prev_hash)
        {
            return Some(i as u64);
        }
        prev = r.record_hash;
    }
    None
}

/// Encrypt each recipient's share fragment to its DID document and index it
/// by the recipient's blinded tag.
pub fn blind_shares<R: RngCore + CryptoRng>(
    recipients: &[(DidDocument, PartyShares)],
    pseudo_id: &[u8],
    rng: &mut R,
) -> Result<BTreeMap<Hash, Vec<u8>>, CryptoError> {
    let mut out = BTreeMap::new();
    for (doc, shares) in recipients {
        let blob = crypto::pk_encrypt(&shares.to_bytes(), &doc.encryption_public_key, rng)?;
        out.insert(party_tag(&doc.did, pseudo_id), blob);
    }
    Ok(out)
}

/// Locate and decrypt the share fragment addressed to `recipient`.
pub fn fetch_shares_for(
    recipient: &Wallet,
    record: &AuthorizationRecord,
) -> Result<PartyShares, LedgerError> {
    let tag = party_tag(recipient.did(), &record.pseudo_id);
    let blob = record
        .blinded_shares
        .get(&tag)
        .ok_or(LedgerError::NotARecipient)?;
    let plain = recipient.decrypt(blob)?;
    PartyShares::from_bytes(&plain).map_err(|e| match e {
        ThresholdError::Crypto(c) => LedgerError::Crypto(c),
        other => LedgerError::Format(other.to_string()),
    })
}
