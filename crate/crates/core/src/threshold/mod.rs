//! Threshold sharing of a block-cipher pad.
//!
//! For a `(t, n)` threshold the dealer draws one key `k_B` for every subset
//! `B` of the parties with `|B| = n - t + 1`, and gives `k_B` to every member
//! of `B`. Any `t` parties together hold every key (a missing key would need a
//! subset of size `n - t + 1` disjoint from all of them, which does not fit in
//! the remaining `n - t` parties); any `t - 1` parties miss every key indexed
//! by a subset of their complement.
//!
//! The record key `sk` is masked with a pad built from a nonce `r` and all
//! keys, either by XOR of `E_{k_B}(r)` (the default) or by a cascade
//! `E_{k_Bm}(... E_{k_B1}(r))`. Cooperating parties contribute the pieces of
//! the pad they can compute; the requester unmasks `sk`.

mod combine;
mod secrecy;
mod shares;

pub use combine::{
    combine_cascade, combine_xor, compute_partial, derive_cipher_key, derive_cipher_key_with_nonce,
    CascadeStep, CipherKey, LocalHolders, PartialContribution,
};
pub use secrecy::{candidate_distribution, secrecy_oracle, secrecy_oracle_with, verdict, SecrecyVerdict};
pub use shares::{generate_key_shares, KeyShareSet, PartyShares};

use std::collections::BTreeSet;
use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{CipherProfile, CryptoError};

/// Upper bound on `n`; the number of keys is `C(n, n - t + 1)`.
pub const MAX_PARTIES: u8 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ThresholdError {
    #[error("invalid parameters: {0}")]
    Parameter(String),
    #[error("insufficient parties: missing keys {}", format_labels(.missing))]
    InsufficientParties { missing: Vec<KeyLabel> },
    #[error("conflicting contributions for key {label}")]
    Inconsistent { label: KeyLabel },
    #[error("cipher key was derived in {derived:?} mode, combiner is {requested:?}")]
    ModeMismatch {
        derived: CombineMode,
        requested: CombineMode,
    },
    #[error("operation requires the {0} profile")]
    Profile(&'static str),
    #[error("malformed share data: {0}")]
    Format(String),
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

fn format_labels(labels: &[KeyLabel]) -> String {
    labels.iter().map(ToString::to_string).join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombineMode {
    Xor,
    Cascade,
}

impl CombineMode {
    pub fn code(self) -> u8 {
        match self {
            CombineMode::Xor => 0,
            CombineMode::Cascade => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CombineMode::Xor),
            1 => Some(CombineMode::Cascade),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ThresholdParams {
    n: u8,
    t: u8,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    n: u8,
    t: u8,
}

impl TryFrom<RawParams> for ThresholdParams {
    type Error = ThresholdError;
    fn try_from(raw: RawParams) -> Result<Self, Self::Error> {
        ThresholdParams::new(raw.n, raw.t)
    }
}

impl From<ThresholdParams> for RawParams {
    fn from(p: ThresholdParams) -> Self {
        RawParams { n: p.n, t: p.t }
    }
}

impl ThresholdParams {
    pub fn new(n: u8, t: u8) -> Result<Self, ThresholdError> {
        if n == 0 || n > MAX_PARTIES {
            return Err(ThresholdError::Parameter(format!(
                "n = {n} outside 1..={MAX_PARTIES}"
            )));
        }
        if t == 0 || t > n {
            return Err(ThresholdError::Parameter(format!("t = {t} outside 1..={n}")));
        }
        Ok(ThresholdParams { n, t })
    }

    pub fn n(&self) -> u8 {
        self.n
    }

    pub fn t(&self) -> u8 {
        self.t
    }

    /// Size of every key-index set.
    pub fn label_size(&self) -> u8 {
        self.n - self.t + 1
    }

    /// All key-index sets in lexicographic order.
    pub fn labels(&self) -> Vec<KeyLabel> {
        (1..=self.n)
            .combinations(self.label_size() as usize)
            .map(|members| KeyLabel::from_members(&members))
            .collect()
    }

    pub fn key_count(&self) -> usize {
        binomial(self.n as u64, self.label_size() as u64) as usize
    }

    pub fn parties(&self) -> impl Iterator<Item = u8> {
        1..=self.n
    }

    pub fn access_structure(&self) -> AccessStructure {
        AccessStructure { params: *self }
    }
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// A key-index set `B`: the parties (1-based) that all hold key `k_B`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KeyLabel(u16);

impl KeyLabel {
    pub fn from_members(members: &[u8]) -> Self {
        let mut bits = 0u16;
        for &m in members {
            assert!((1..=MAX_PARTIES).contains(&m), "party index {m} out of range");
            bits |= 1 << (m - 1);
        }
        KeyLabel(bits)
    }

    pub fn from_bits(bits: u16) -> Self {
        KeyLabel(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn contains(self, party: u8) -> bool {
        (1..=MAX_PARTIES).contains(&party) && self.0 & (1 << (party - 1)) != 0
    }

    pub fn members(self) -> Vec<u8> {
        (1..=MAX_PARTIES).filter(|&p| self.contains(p)).collect()
    }
}

impl Ord for KeyLabel {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.members().cmp(&other.members())
    }
}

impl PartialOrd for KeyLabel {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for KeyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.members().iter().join(","))
    }
}

impl fmt::Debug for KeyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// The monotone family of all party subsets of size at least `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessStructure {
    params: ThresholdParams,
}

impl AccessStructure {
    pub fn participants(&self) -> Vec<u8> {
        self.params.parties().collect()
    }

    pub fn is_authorized(&self, coalition: &BTreeSet<u8>) -> bool {
        coalition.iter().all(|p| (1..=self.params.n).contains(p))
            && coalition.len() >= self.params.t as usize
    }

    /// Every subset of the participants, in increasing size then lexicographic order.
    pub fn all_subsets(&self) -> impl Iterator<Item = BTreeSet<u8>> {
        let n = self.params.n;
        (0..=n as usize).flat_map(move |k| (1..=n).combinations(k).map(BTreeSet::from_iter))
    }

    pub fn authorized_sets(&self) -> impl Iterator<Item = BTreeSet<u8>> + '_ {
        self.all_subsets().filter(|s| self.is_authorized(s))
    }

    /// Authorized sets with no authorized proper subset.
    pub fn minimal_authorized_sets(&self) -> Vec<BTreeSet<u8>> {
        self.authorized_sets()
            .filter(|s| {
                s.iter().all(|a| {
                    let mut smaller = s.clone();
                    smaller.remove(a);
                    !self.is_authorized(&smaller)
                })
            })
            .collect()
    }

    /// Unauthorized sets that become authorized by adding any outside party.
    pub fn maximal_unauthorized_sets(&self) -> Vec<BTreeSet<u8>> {
        let all = self.participants();
        self.all_subsets()
            .filter(|s| !self.is_authorized(s))
            .filter(|s| {
                all.iter().filter(|p| !s.contains(p)).all(|p| {
                    let mut bigger = s.clone();
                    bigger.insert(*p);
                    self.is_authorized(&bigger)
                })
            })
            .collect()
    }
}

pub(crate) fn require_profile(
    actual: CipherProfile,
    wanted: CipherProfile,
) -> Result<(), ThresholdError> {
    if actual != wanted {
        return Err(ThresholdError::Profile(wanted.name()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        assert!(ThresholdParams::new(3, 2).is_ok());
        assert!(ThresholdParams::new(1, 1).is_ok());
        assert!(ThresholdParams::new(16, 16).is_ok());
        assert!(ThresholdParams::new(0, 0).is_err());
        assert!(ThresholdParams::new(2, 3).is_err());
        assert!(ThresholdParams::new(3, 0).is_err());
        assert!(ThresholdParams::new(17, 2).is_err());
    }

    #[test]
    fn labels_for_three_two_are_lexicographic() {
        let p = ThresholdParams::new(3, 2).unwrap();
        let labels = p.labels();
        let shown: Vec<String> = labels.iter().map(ToString::to_string).collect();
        assert_eq!(shown, ["{1,2}", "{1,3}", "{2,3}"]);
        let mut sorted = labels.clone();
        sorted.sort();
        assert_eq!(sorted, labels);
    }

    #[test]
    fn key_count_matches_binomial() {
        for n in 1..=8u8 {
            for t in 1..=n {
                let p = ThresholdParams::new(n, t).unwrap();
                assert_eq!(p.labels().len(), p.key_count());
            }
        }
        assert_eq!(ThresholdParams::new(5, 3).unwrap().key_count(), 10);
    }

    #[test]
    fn access_structure_shape() {
        for n in 1..=6u8 {
            for t in 1..=n {
                let a = ThresholdParams::new(n, t).unwrap().access_structure();
                for s in a.minimal_authorized_sets() {
                    assert_eq!(s.len(), t as usize);
                }
                for s in a.maximal_unauthorized_sets() {
                    assert_eq!(s.len(), t as usize - 1);
                }
                // monotone: every superset of an authorized set is authorized
                for s in a.authorized_sets() {
                    for p in 1..=n {
                        let mut sup = s.clone();
                        sup.insert(p);
                        assert!(a.is_authorized(&sup));
                    }
                }
            }
        }
    }

    #[test]
    fn params_serde_validates() {
        let ok: ThresholdParams = serde_json::from_str(r#"{"n":3,"t":2}"#).unwrap();
        assert_eq!(ok.n(), 3);
        assert!(serde_json::from_str::<ThresholdParams>(r#"{"n":2,"t":3}"#).is_err());
    }
}
