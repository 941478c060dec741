//! The data custodian's blob store and its time-limited download links.

use std::collections::BTreeMap;
use std::sync::RwLock;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto;
use crate::identity::Did;
use crate::ledger::{party_tag, AccessEvent, AccessEventKind, Hash, Ledger, LedgerError};
use crate::Tick;

pub const EHR_ID_LEN: usize = 16;
pub const TOKEN_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("invalid parameter: {0}")]
    Parameter(&'static str),
    #[error("not found")]
    NotFound,
    #[error("link expired at {0}")]
    Expired(Tick),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncryptedEhr {
    #[serde(with = "crate::codec::bytes")]
    pub ehr_id: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub ciphertext: Vec<u8>,
    pub uploader_did: Did,
    /// Internal placement of the blob; never leaves the custodian.
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AccessLink {
    #[serde(with = "crate::codec::bytes")]
    pub token: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub ehr_id: Vec<u8>,
    pub expires_at: Tick,
    #[serde(with = "crate::codec::hash32")]
    pub issued_to_tag: Hash,
    /// Pseudonym of the delegation the link was granted under, for the access log.
    #[serde(with = "crate::codec::bytes")]
    pub pseudo_id: Vec<u8>,
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreFile {
    pub blobs: Vec<EncryptedEhr>,
    pub links: Vec<AccessLink>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub debug_notes: Vec<String>,
}

#[derive(Debug, Default)]
struct State {
    blobs: BTreeMap<Vec<u8>, EncryptedEhr>,
    links: BTreeMap<Vec<u8>, AccessLink>,
    debug_notes: Vec<Vec<u8>>,
}

#[derive(Debug)]
pub struct EhrStore {
    custodian: Did,
    state: RwLock<State>,
}

impl EhrStore {
    pub fn new(custodian: Did) -> Self {
        EhrStore {
            custodian,
            state: RwLock::new(State::default()),
        }
    }

    pub fn custodian(&self) -> &Did {
        &self.custodian
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().expect("store lock poisoned")
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().expect("store lock poisoned")
    }

    pub fn upload<R: RngCore + CryptoRng>(
        &self,
        ciphertext: Vec<u8>,
        uploader: &Did,
        rng: &mut R,
    ) -> Result<Vec<u8>, StoreError> {
        if ciphertext.is_empty() {
            return Err(StoreError::Parameter("empty ciphertext"));
        }
        let mut state = self.write();
        let ehr_id = loop {
            let id = crypto::random_bytes(EHR_ID_LEN, rng);
            if !state.blobs.contains_key(&id) {
                break id;
            }
        };
        let location = format!("vault/{}", hex::encode(crypto::random_bytes(8, rng)));
        state.blobs.insert(
            ehr_id.clone(),
            EncryptedEhr {
                ehr_id: ehr_id.clone(),
                ciphertext,
                uploader_did: uploader.clone(),
                location,
            },
        );
        Ok(ehr_id)
    }

    pub fn contains(&self, ehr_id: &[u8]) -> bool {
        self.read().blobs.contains_key(ehr_id)
    }

    pub fn location_of(&self, ehr_id: &[u8]) -> Option<String> {
        self.read().blobs.get(ehr_id).map(|b| b.location.clone())
    }

    pub fn grant_link<R: RngCore + CryptoRng>(
        &self,
        ehr_id: &[u8],
        dr: &Did,
        pseudo_id: &[u8],
        ttl: u64,
        now: Tick,
        rng: &mut R,
    ) -> Result<AccessLink, StoreError> {
        let mut state = self.write();
        if !state.blobs.contains_key(ehr_id) {
            return Err(StoreError::NotFound);
        }
        let token = crypto::random_bytes(TOKEN_LEN, rng);
        let link = AccessLink {
            issued_to_tag: party_tag(dr, &token),
            token: token.clone(),
            ehr_id: ehr_id.to_vec(),
            expires_at: now.plus(ttl),
            pseudo_id: pseudo_id.to_vec(),
        };
        state.links.insert(token, link.clone());
        Ok(link)
    }

    /// Fetch the blob behind a link and record the download on `ledger`.
    /// Only the token is trusted; the rest of `link` is re-read from the store.
    pub fn download(&self, link: &AccessLink, now: Tick, ledger: &Ledger) -> Result<Vec<u8>, StoreError> {
        let (stored, ciphertext) = {
            let state = self.read();
            let stored = state.links.get(&link.token).cloned().ok_or(StoreError::NotFound)?;
            if now >= stored.expires_at {
                return Err(StoreError::Expired(stored.expires_at));
            }
            let blob = state.blobs.get(&stored.ehr_id).ok_or(StoreError::NotFound)?;
            (stored, blob.ciphertext.clone())
        };
        ledger.log_access(&AccessEvent::new(
            &self.custodian,
            &stored.pseudo_id,
            &stored.ehr_id,
            AccessEventKind::DownloadCompleted,
            now,
        ))?;
        Ok(ciphertext)
    }

    pub fn export(&self) -> StoreFile {
        let state = self.read();
        StoreFile {
            blobs: state.blobs.values().cloned().collect(),
            links: state.links.values().cloned().collect(),
            debug_notes: state.debug_notes.iter().map(|n| crate::codec::b64(n)).collect(),
        }
    }

    pub fn import(custodian: Did, file: StoreFile) -> Result<Self, StoreError> {
        let mut state = State::default();
        for blob in file.blobs {
            if blob.ehr_id.len() != EHR_ID_LEN {
                return Err(StoreError::Parameter("ehr_id length"));
            }
            state.blobs.insert(blob.ehr_id.clone(), blob);
        }
        for link in file.links {
            state.links.insert(link.token.clone(), link);
        }
        for note in file.debug_notes {
            state
                .debug_notes
                .push(crate::codec::unb64(&note).map_err(|_| StoreError::Parameter("debug note"))?);
        }
        Ok(EhrStore {
            custodian,
            state: RwLock::new(state),
        })
    }

    /// Everything the custodian holds, concatenated, for knowledge scans.
    pub fn raw_view(&self) -> Vec<u8> {
        let state = self.read();
        let mut out = Vec::new();
        for blob in state.blobs.values() {
            out.extend_from_slice(&blob.ehr_id);
            out.extend_from_slice(&blob.ciphertext);
            out.extend_from_slice(blob.uploader_did.to_string().as_bytes());
            out.extend_from_slice(blob.location.as_bytes());
        }
        for link in state.links.values() {
            out.extend_from_slice(&link.token);
            out.extend_from_slice(&link.ehr_id);
            out.extend_from_slice(&link.issued_to_tag);
            out.extend_from_slice(&link.pseudo_id);
        }
        for note in &state.debug_notes {
            out.extend_from_slice(note);
        }
        out
    }

    /// Test hook: plant arbitrary bytes in custodian state.
    #[doc(hidden)]
    pub fn inject_leak(&self, bytes: &[u8]) {
        self.write().debug_notes.push(bytes.to_vec());
    }

    /// Test hook: flip one byte of a stored ciphertext.
    #[doc(hidden)]
    pub fn corrupt_blob(&self, ehr_id: &[u8], index: usize) -> Result<(), StoreError> {
        let mut state = self.write();
        let blob = state.blobs.get_mut(ehr_id).ok_or(StoreError::NotFound)?;
        let i = index % blob.ciphertext.len();
        blob.ciphertext[i] ^= 0x01;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identity::create_identity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn setup(seed: u64) -> (ChaCha20Rng, EhrStore, Did, Did, Ledger) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (dc, _) = create_identity(&mut rng, Tick(0));
        let (hsp, _) = create_identity(&mut rng, Tick(0));
        let (dr, _) = create_identity(&mut rng, Tick(0));
        (rng, EhrStore::new(dc.did().clone()), hsp.did().clone(), dr.did().clone(), Ledger::new())
    }

    #[test]
    fn upload_and_download_round_trip() {
        let (mut rng, store, hsp, dr, ledger) = setup(1);
        let blob = crypto::random_bytes(1024, &mut rng);
        let id = store.upload(blob.clone(), &hsp, &mut rng).unwrap();
        assert_eq!(id.len(), EHR_ID_LEN);
        let link = store.grant_link(&id, &dr, b"p", 5, Tick(0), &mut rng).unwrap();
        assert_eq!(link.expires_at, Tick(5));
        assert_eq!(store.download(&link, Tick(4), &ledger).unwrap(), blob);
        let events = ledger.access_events();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0].1.event, AccessEventKind::DownloadCompleted);
    }

    #[test]
    fn distinct_ids_and_empty_rejected() {
        let (mut rng, store, hsp, _, _) = setup(2);
        let a = store.upload(vec![1, 2, 3], &hsp, &mut rng).unwrap();
        let b = store.upload(vec![1, 2, 3], &hsp, &mut rng).unwrap();
        assert_ne!(a, b);
        assert_eq!(store.upload(vec![], &hsp, &mut rng), Err(StoreError::Parameter("empty ciphertext")));
    }

    #[test]
    fn expiry_is_permanent() {
        let (mut rng, store, hsp, dr, ledger) = setup(3);
        let id = store.upload(vec![7; 10], &hsp, &mut rng).unwrap();
        let link = store.grant_link(&id, &dr, b"p", 3, Tick(2), &mut rng).unwrap();
        assert!(store.download(&link, Tick(4), &ledger).is_ok());
        for t in 5..20 {
            assert_eq!(store.download(&link, Tick(t), &ledger), Err(StoreError::Expired(Tick(5))));
        }
    }

    #[test]
    fn unknown_ids_and_forged_tokens() {
        let (mut rng, store, hsp, dr, ledger) = setup(4);
        assert_eq!(
            store.grant_link(&[0; 16], &dr, b"p", 3, Tick(0), &mut rng),
            Err(StoreError::NotFound)
        );
        let id = store.upload(vec![7; 10], &hsp, &mut rng).unwrap();
        let mut link = store.grant_link(&id, &dr, b"p", 3, Tick(0), &mut rng).unwrap();
        link.token[0] ^= 1;
        assert_eq!(store.download(&link, Tick(1), &ledger), Err(StoreError::NotFound));
    }

    #[test]
    fn link_confinement() {
        let (mut rng, store, hsp, dr, ledger) = setup(5);
        let x = store.upload(vec![1; 8], &hsp, &mut rng).unwrap();
        let y = store.upload(vec![2; 8], &hsp, &mut rng).unwrap();
        let mut link = store.grant_link(&x, &dr, b"p", 3, Tick(0), &mut rng).unwrap();
        link.ehr_id = y;
        assert_eq!(store.download(&link, Tick(1), &ledger).unwrap(), vec![1; 8]);
    }

    #[test]
    fn export_import() {
        let (mut rng, store, hsp, dr, _) = setup(6);
        let id = store.upload(vec![5; 40], &hsp, &mut rng).unwrap();
        store.grant_link(&id, &dr, b"p", 3, Tick(0), &mut rng).unwrap();
        let json = serde_json::to_string(&store.export()).unwrap();
        let back = EhrStore::import(store.custodian().clone(), serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.export(), store.export());
        assert_eq!(back.raw_view(), store.raw_view());
    }

    #[test]
    fn concurrent_readers() {
        let (mut rng, store, hsp, dr, ledger) = setup(7);
        let id = store.upload(vec![9; 64], &hsp, &mut rng).unwrap();
        let link = store.grant_link(&id, &dr, b"p", 100, Tick(0), &mut rng).unwrap();
        std::thread::scope(|s| {
            for _ in 0..4 {
                s.spawn(|| {
                    for _ in 0..10 {
                        assert_eq!(store.download(&link, Tick(1), &ledger).unwrap(), vec![9; 64]);
                    }
                });
            }
        });
        assert_eq!(ledger.access_events().len(), 40);
    }
}
