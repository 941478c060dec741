//! Participant roles and the protocol flows between them.
//!
//! A [`Simulation`] owns the shared ledger, the custodian's store, a logical
//! clock, one seeded random source and every actor's local state. Actors talk
//! only through [`SecureMessage`]s: encrypted to the recipient and signed by
//! the sender. Each flow records what happened in a [`Transcript`].

mod collusion;
mod flows;
mod messages;
mod tamper;

pub use collusion::{CollusionReport, CollusionVerdict};
pub use flows::{
    delegation_secret, ehr_secret, shares_secret, AccessOptions, Delegation, CUSTODIAN_DISCLOSURE,
    NOTARY_DISCLOSURE,
};
pub use messages::{Message, Notification, SecureMessage};
pub use tamper::{fixture, run_case, tamper_scenarios, TamperCase, TamperOutcome, FIXTURE_EHR, FIXTURE_EXPIRY};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::credential::{CredentialError, RejectReason};
use crate::crypto::{CipherProfile, CryptoError};
use crate::identity::{create_identity, Did, IdentityError, Wallet, WalletFile};
use crate::ledger::{Ledger, LedgerError, RecordKind};
use crate::store::{EhrStore, StoreError};
use crate::threshold::{PartyShares, ThresholdError};
use crate::Tick;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "DO")]
    DataOwner,
    #[serde(rename = "HSP")]
    Hsp,
    #[serde(rename = "DR")]
    Requester,
    #[serde(rename = "Notary")]
    Notary,
    #[serde(rename = "DC")]
    Custodian,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::DataOwner => "DO",
            Role::Hsp => "HSP",
            Role::Requester => "DR",
            Role::Notary => "Notary",
            Role::Custodian => "DC",
        })
    }
}

/// What a notary learns when it checks on the data owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Availability {
    DoUnavailable,
    DoAvailableApproves,
    DoAvailableDenies,
}

/// Scripted answers, one per query, then a fixed fallback.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AvailabilityOracle {
    script: Vec<Availability>,
    next: usize,
    fallback: Availability,
}

impl AvailabilityOracle {
    pub fn fixed(answer: Availability) -> Self {
        Self::scripted(Vec::new(), answer)
    }

    pub fn scripted(script: Vec<Availability>, fallback: Availability) -> Self {
        AvailabilityOracle {
            script,
            next: 0,
            fallback,
        }
    }

    pub fn query(&mut self, _pseudo_id: &[u8]) -> Availability {
        let answer = self.script.get(self.next).copied().unwrap_or(self.fallback);
        self.next += 1;
        answer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DenyReason {
    Rejected(RejectReason),
    OwnerDenied,
    NotaryNotVerified,
    UnknownAuthorization,
    NoChallenge,
    NotARecipient,
    MissingDisclosure,
    NoSession,
}

impl fmt::Display for DenyReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenyReason::Rejected(r) => write!(f, "{r}"),
            DenyReason::OwnerDenied => f.write_str("owner-denied"),
            DenyReason::NotaryNotVerified => f.write_str("notary-not-verified"),
            DenyReason::UnknownAuthorization => f.write_str("unknown-authorization"),
            DenyReason::NoChallenge => f.write_str("no-challenge"),
            DenyReason::NotARecipient => f.write_str("not-a-recipient"),
            DenyReason::MissingDisclosure => f.write_str("missing-disclosure"),
            DenyReason::NoSession => f.write_str("no-session"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ActorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unknown actor `{0}`")]
    UnknownActor(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("access denied: {0}")]
    AccessDenied(DenyReason),
    #[error("missing local state: {0}")]
    MissingState(String),
    #[error("unexpected message: {0}")]
    Protocol(String),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Credential(#[from] CredentialError),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

/// One participant's private state.
#[derive(Debug, Clone)]
pub struct ActorContext {
    pub name: String,
    pub role: Role,
    pub wallet: Wallet,
    /// Notaries only.
    pub availability_oracle: Option<AvailabilityOracle>,
    /// Notaries only: notices for the data owner about accesses.
    pub notification_outbox: Vec<Notification>,
    /// Plaintext of every message this actor has received.
    pub received: Vec<Vec<u8>>,
    pending_challenges: BTreeMap<Did, Vec<u8>>,
    /// Cascade sessions: requester -> share fragment unlocked for it.
    sessions: BTreeMap<Did, PartyShares>,
}

impl ActorContext {
    fn new(name: String, role: Role, wallet: Wallet) -> Self {
        ActorContext {
            name,
            role,
            wallet,
            availability_oracle: None,
            notification_outbox: Vec::new(),
            received: Vec::new(),
            pending_challenges: BTreeMap::new(),
            sessions: BTreeMap::new(),
        }
    }

    pub fn did(&self) -> &Did {
        self.wallet.did()
    }

    /// Everything this actor holds, concatenated, for knowledge scans.
    pub fn raw_view(&self) -> Vec<u8> {
        let mut out = self.wallet.raw_view();
        for m in &self.received {
            out.extend_from_slice(m);
        }
        for n in &self.notification_outbox {
            out.extend(n.raw_view());
        }
        out
    }
}

/// Exported form of an [`ActorContext`]: everything needed to audit what
/// the actor knows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActorState {
    pub name: String,
    pub role: Role,
    pub wallet: WalletFile,
    /// Base64 plaintexts of received messages.
    pub received: Vec<String>,
    pub notifications: Vec<Notification>,
}

impl ActorState {
    /// Same bytes as [`ActorContext::raw_view`] on the live actor.
    pub fn raw_view(&self) -> Result<Vec<u8>, IdentityError> {
        let mut out = Wallet::import(self.wallet.clone())?.raw_view();
        for m in &self.received {
            out.extend(crate::codec::unb64(m).map_err(|e| IdentityError::Format(e.to_string()))?);
        }
        for n in &self.notifications {
            out.extend(n.raw_view());
        }
        Ok(out)
    }
}

impl ActorContext {
    pub fn export(&self) -> ActorState {
        ActorState {
            name: self.name.clone(),
            role: self.role,
            wallet: self.wallet.export(),
            received: self.received.iter().map(|m| crate::codec::b64(m)).collect(),
            notifications: self.notification_outbox.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TranscriptEntry {
    Message {
        from: String,
        to: String,
        kind: String,
        digest: String,
    },
    LedgerAppend {
        seq: u64,
        kind: RecordKind,
        record_hash: String,
    },
    OracleDecision {
        notary: String,
        decision: Availability,
    },
    Verification {
        verifier: String,
        attempt: u64,
        verdict: String,
    },
    Release {
        party: String,
        attempt: u64,
        what: String,
    },
    AccessStart {
        attempt: u64,
        requester: String,
    },
    AccessEnd {
        attempt: u64,
        outcome: String,
    },
    Tick {
        now: Tick,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn push(&mut self, entry: TranscriptEntry) {
        self.entries.push(entry);
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("transcript serializes");
        hex::encode(crate::crypto::hash(&[&json]))
    }

    /// Entries belonging to one access attempt, from its start to its end.
    pub fn attempt(&self, attempt: u64) -> &[TranscriptEntry] {
        let start = self.entries.iter().position(
            |e| matches!(e, TranscriptEntry::AccessStart { attempt: a, .. } if *a == attempt),
        );
        let end = self.entries.iter().position(
            |e| matches!(e, TranscriptEntry::AccessEnd { attempt: a, .. } if *a == attempt),
        );
        match (start, end) {
            (Some(s), Some(e)) if s <= e => &self.entries[s..=e],
            (Some(s), None) => &self.entries[s..],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimConfig {
    pub seed: u64,
    pub profile: CipherProfile,
    pub notaries: usize,
    pub drs: usize,
    pub link_ttl: u64,
    pub dc_checks_notary: bool,
    pub availability: Vec<Availability>,
    pub availability_fallback: Availability,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            profile: CipherProfile::Production,
            notaries: 2,
            drs: 2,
            link_ttl: 3600,
            dc_checks_notary: true,
            availability: Vec::new(),
            availability_fallback: Availability::DoUnavailable,
        }
    }
}

pub const DATA_OWNER: &str = "do";
pub const HSP: &str = "hsp";
pub const CUSTODIAN: &str = "dc";

pub fn notary_name(i: usize) -> String {
    format!("notary{i}")
}

pub fn requester_name(i: usize) -> String {
    format!("dr{i}")
}

pub struct Simulation {
    pub config: SimConfig,
    pub ledger: Arc<Ledger>,
    pub store: EhrStore,
    pub transcript: Transcript,
    /// Every sealed message as it crossed the wire.
    pub wire: Vec<SecureMessage>,
    actors: BTreeMap<String, ActorContext>,
    now: Tick,
    rng: ChaCha20Rng,
    ledger_seen: usize,
    next_attempt: u64,
}

impl fmt::Debug for Simulation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Simulation")
            .field("actors", &self.actors.keys().collect::<Vec<_>>())
            .field("now", &self.now)
            .field("ledger_len", &self.ledger.len())
            .finish_non_exhaustive()
    }
}

impl Simulation {
    /// Create and register every identity: the data owner, one HSP, the
    /// custodian, `notaries` notaries and `drs` requesters.
    pub fn new(config: SimConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
        let ledger = Arc::new(Ledger::new());
        let mut roster = vec![
            (DATA_OWNER.to_string(), Role::DataOwner),
            (HSP.to_string(), Role::Hsp),
            (CUSTODIAN.to_string(), Role::Custodian),
        ];
        roster.extend((1..=config.notaries).map(|i| (notary_name(i), Role::Notary)));
        roster.extend((1..=config.drs).map(|i| (requester_name(i), Role::Requester)));

        let mut actors = BTreeMap::new();
        for (name, role) in roster {
            let (wallet, doc) = create_identity(&mut rng, Tick(0));
            ledger.register_did(&doc).expect("fresh document is self-consistent");
            let mut ctx = ActorContext::new(name.clone(), role, wallet);
            if role == Role::Notary {
                ctx.availability_oracle = Some(AvailabilityOracle::scripted(
                    config.availability.clone(),
                    config.availability_fallback,
                ));
            }
            actors.insert(name, ctx);
        }
        let store = EhrStore::new(actors[CUSTODIAN].did().clone());
        let mut sim = Simulation {
            config,
            ledger,
            store,
            transcript: Transcript::default(),
            wire: Vec::new(),
            actors,
            now: Tick(0),
            rng,
            ledger_seen: 0,
            next_attempt: 0,
        };
        sim.sync_ledger();
        sim
    }

    pub fn now(&self) -> Tick {
        self.now
    }

    pub fn advance(&mut self, ticks: u64) {
        self.now = self.now.plus(ticks);
        self.transcript.push(TranscriptEntry::Tick { now: self.now });
    }

    pub fn profile(&self) -> CipherProfile {
        self.config.profile
    }

    pub fn rng(&mut self) -> &mut ChaCha20Rng {
        &mut self.rng
    }

    pub fn actor_names(&self) -> impl Iterator<Item = &str> {
        self.actors.keys().map(String::as_str)
    }

    pub fn actors(&self) -> impl Iterator<Item = &ActorContext> {
        self.actors.values()
    }

    pub fn actor(&self, name: &str) -> Result<&ActorContext, ActorError> {
        self.actors
            .get(name)
            .ok_or_else(|| ActorError::UnknownActor(name.to_string()))
    }

    pub(crate) fn actor_mut(&mut self, name: &str) -> Result<&mut ActorContext, ActorError> {
        self.actors
            .get_mut(name)
            .ok_or_else(|| ActorError::UnknownActor(name.to_string()))
    }

    pub fn did_of(&self, name: &str) -> Result<Did, ActorError> {
        Ok(self.actor(name)?.did().clone())
    }

    pub fn name_of(&self, did: &Did) -> Option<&str> {
        self.actors
            .values()
            .find(|a| a.did() == did)
            .map(|a| a.name.as_str())
    }

    pub fn names_with_role(&self, role: Role) -> Vec<String> {
        self.actors
            .values()
            .filter(|a| a.role == role)
            .map(|a| a.name.clone())
            .collect()
    }

    /// The actor's private state, plus the custodian's store for the custodian.
    pub fn actor_view(&self, name: &str) -> Result<Vec<u8>, ActorError> {
        let actor = self.actor(name)?;
        let mut out = actor.raw_view();
        if actor.role == Role::Custodian {
            out.extend(self.store.raw_view());
        }
        Ok(out)
    }

    /// Mirror ledger records appended since the last call into the transcript.
    pub(crate) fn sync_ledger(&mut self) {
        let records = self.ledger.records();
        for r in &records[self.ledger_seen.min(records.len())..] {
            self.transcript.push(TranscriptEntry::LedgerAppend {
                seq: r.seq,
                kind: r.kind,
                record_hash: hex::encode(r.record_hash),
            });
        }
        self.ledger_seen = records.len();
    }

    /// Seal `message` from `from` to `to`, record it, and hand the recipient
    /// the opened plaintext.
    pub fn send(&mut self, from: &str, to: &str, message: &Message) -> Result<Message, ActorError> {
        let sender = self.actor(from)?.wallet.clone();
        let recipient_did = self.did_of(to)?;
        let sealed = SecureMessage::seal(&sender, &recipient_did, message, &self.ledger, &mut self.rng)?;
        self.deliver(from, to, message.kind(), sealed)
    }

    /// Deliver an already sealed message, which may have been forged.
    pub fn deliver(
        &mut self,
        from: &str,
        to: &str,
        kind: &str,
        sealed: SecureMessage,
    ) -> Result<Message, ActorError> {
        self.transcript.push(TranscriptEntry::Message {
            from: from.to_string(),
            to: to.to_string(),
            kind: kind.to_string(),
            digest: hex::encode(crate::crypto::hash(&[&sealed.payload])),
        });
        self.wire.push(sealed.clone());
        let recipient = self.actor(to)?.wallet.clone();
        let (message, plaintext) = sealed.open(&recipient, &self.ledger)?;
        self.actor_mut(to)?.received.push(plaintext);
        Ok(message)
    }

    pub(crate) fn next_attempt(&mut self) -> u64 {
        let a = self.next_attempt;
        self.next_attempt += 1;
        a
    }
}
