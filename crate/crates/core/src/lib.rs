//! Pre-delegated, multi-party authorization for encrypted health records.
//!
//! A patient (the data owner) pre-authorizes data requesters by issuing them
//! signed delegation credentials. The record's symmetric key is masked with a
//! pad that only a threshold of share holders (notaries plus the data
//! custodian) can jointly recompute, and identities, authorization records,
//! revocations and access events live on a simulated hash-chained ledger.
//!
//! Modules, bottom up:
//!
//! - [`crypto`]: signatures, public-key and symmetric encryption, block ciphers
//! - [`threshold`]: covering key distribution, XOR and cascade combiners, secrecy enumeration
//! - [`identity`]: DIDs, DID documents, wallets, canonical encoding
//! - [`credential`]: delegation credentials, selective-disclosure presentations, revocation
//! - [`ledger`]: append-only hash chain of registrations, authorizations, revocations, access events
//! - [`store`]: the custodian's encrypted record store and time-limited download links
//! - [`actors`]: participant roles and the storage, delegation and access flows
//! - [`scenario`]: declarative scenario runner, knowledge audit and replay
//!
//! Runnable walkthroughs for each capability live in this crate's `examples/`.

pub mod actors;
pub mod codec;
pub mod credential;
pub mod crypto;
pub mod identity;
pub mod ledger;
pub mod scenario;
pub mod store;
pub mod threshold;

use serde::{Deserialize, Serialize};

/// Logical time. Only scenario ticks advance it.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Tick(pub u64);

impl Tick {
    pub fn plus(self, ticks: u64) -> Tick {
        Tick(self.0.saturating_add(ticks))
    }
}

impl std::fmt::Display for Tick {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "t{}", self.0)
    }
}
