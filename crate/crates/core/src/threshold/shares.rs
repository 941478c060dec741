use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};

use super::{KeyLabel, ThresholdError, ThresholdParams};
use crate::crypto::{BlockCipherKey, CipherProfile};
use crate::identity::{canonical_decode, canonical_encode_map, field};

/// The dealer's full key set for one delegation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyShareSet {
    params: ThresholdParams,
    profile: CipherProfile,
    keys: Vec<(KeyLabel, BlockCipherKey)>,
}

/// Draw one independent uniform key per `(n - t + 1)`-subset of the parties.
pub fn generate_key_shares<R: RngCore + CryptoRng>(
    params: ThresholdParams,
    profile: CipherProfile,
    rng: &mut R,
) -> KeyShareSet {
    let keys = params
        .labels()
        .into_iter()
        .map(|label| (label, BlockCipherKey::random(profile, rng)))
        .collect();
    KeyShareSet {
        params,
        profile,
        keys,
    }
}

impl KeyShareSet {
    /// Build from explicit keys, in the lexicographic label order of `params`.
    pub fn from_keys(
        params: ThresholdParams,
        profile: CipherProfile,
        keys: Vec<BlockCipherKey>,
    ) -> Result<Self, ThresholdError> {
        let labels = params.labels();
        if keys.len() != labels.len() {
            return Err(ThresholdError::Parameter(format!(
                "expected {} keys, got {}",
                labels.len(),
                keys.len()
            )));
        }
        for key in &keys {
            if key.as_bytes().len() != profile.key_width() {
                return Err(ThresholdError::Parameter("key width does not match profile".into()));
            }
        }
        Ok(KeyShareSet {
            params,
            profile,
            keys: labels.into_iter().zip(keys).collect(),
        })
    }

    pub fn params(&self) -> ThresholdParams {
        self.params
    }

    pub fn profile(&self) -> CipherProfile {
        self.profile
    }

    pub fn labels(&self) -> Vec<KeyLabel> {
        self.keys.iter().map(|(l, _)| *l).collect()
    }

    pub fn keys(&self) -> &[(KeyLabel, BlockCipherKey)] {
        &self.keys
    }

    pub fn key(&self, label: KeyLabel) -> Option<&BlockCipherKey> {
        self.keys.iter().find(|(l, _)| *l == label).map(|(_, k)| k)
    }

    /// Labels of the keys party `party` holds.
    pub fn holdings(&self, party: u8) -> Vec<KeyLabel> {
        self.keys
            .iter()
            .filter(|(l, _)| l.contains(party))
            .map(|(l, _)| *l)
            .collect()
    }

    /// Union of the holdings of a coalition.
    pub fn coverage(&self, coalition: &BTreeSet<u8>) -> BTreeSet<KeyLabel> {
        coalition.iter().flat_map(|p| self.holdings(*p)).collect()
    }

    pub fn party_shares(&self, party: u8) -> Result<PartyShares, ThresholdError> {
        if !(1..=self.params.n()).contains(&party) {
            return Err(ThresholdError::Parameter(format!(
                "party {party} not in 1..={}",
                self.params.n()
            )));
        }
        Ok(PartyShares {
            party,
            profile: self.profile,
            keys: self
                .keys
                .iter()
                .filter(|(l, _)| l.contains(party))
                .cloned()
                .collect(),
        })
    }
}

/// One party's fragment of a [`KeyShareSet`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartyShares {
    pub party: u8,
    pub profile: CipherProfile,
    pub keys: Vec<(KeyLabel, BlockCipherKey)>,
}

impl PartyShares {
    pub fn labels(&self) -> Vec<KeyLabel> {
        self.keys.iter().map(|(l, _)| *l).collect()
    }

    pub fn key(&self, label: KeyLabel) -> Option<&BlockCipherKey> {
        self.keys.iter().find(|(l, _)| *l == label).map(|(_, k)| k)
    }

    /// Canonical bytes; key fields are named `key:<label bits, hex>`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut map = BTreeMap::new();
        map.insert("party".to_string(), vec![self.party]);
        map.insert("profile".to_string(), vec![self.profile.code()]);
        for (label, key) in &self.keys {
            map.insert(
                format!("key:{:04x}", label.bits()),
                key.as_bytes().to_vec(),
            );
        }
        canonical_encode_map(&map)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ThresholdError> {
        let bad = |m: &str| ThresholdError::Format(m.to_string());
        let map = canonical_decode(bytes).map_err(|e| ThresholdError::Format(e.to_string()))?;
        let party = match field(&map, "party").map_err(|e| bad(&e.to_string()))? {
            [p] => *p,
            _ => return Err(bad("party field")),
        };
        let profile = match field(&map, "profile").map_err(|e| bad(&e.to_string()))? {
            [c] => CipherProfile::from_code(*c).ok_or_else(|| bad("profile code"))?,
            _ => return Err(bad("profile field")),
        };
        let mut keys = Vec::new();
        for (name, value) in &map {
            let Some(hex_bits) = name.strip_prefix("key:") else {
                continue;
            };
            let bits = u16::from_str_radix(hex_bits, 16).map_err(|_| bad("key label"))?;
            let key = BlockCipherKey::new(value.clone(), profile)?;
            keys.push((KeyLabel::from_bits(bits), key));
        }
        keys.sort_by_key(|a| a.0);
        Ok(PartyShares {
            party,
            profile,
            keys,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn set(members: &[u8]) -> BTreeSet<u8> {
        members.iter().copied().collect()
    }

    #[test]
    fn three_two_distribution() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let p = ThresholdParams::new(3, 2).unwrap();
        let s = generate_key_shares(p, CipherProfile::Production, &mut rng);
        let l = |m: &[u8]| KeyLabel::from_members(m);
        assert_eq!(s.labels(), vec![l(&[1, 2]), l(&[1, 3]), l(&[2, 3])]);
        assert_eq!(s.holdings(1), vec![l(&[1, 2]), l(&[1, 3])]);
        assert_eq!(s.holdings(2), vec![l(&[1, 2]), l(&[2, 3])]);
        assert_eq!(s.holdings(3), vec![l(&[1, 3]), l(&[2, 3])]);
    }

    #[test]
    fn degenerate_one_one() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let s = generate_key_shares(ThresholdParams::new(1, 1).unwrap(), CipherProfile::Toy, &mut rng);
        assert_eq!(s.labels().len(), 1);
        assert_eq!(s.holdings(1).len(), 1);
    }

    /// Exhaustive covering check for every (n, t) with n <= 6.
    #[test]
    fn covering_completeness_and_secrecy() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for n in 1..=6u8 {
            for t in 1..=n {
                let p = ThresholdParams::new(n, t).unwrap();
                let s = generate_key_shares(p, CipherProfile::Toy, &mut rng);
                let all: BTreeSet<KeyLabel> = s.labels().into_iter().collect();
                for coalition in p.access_structure().all_subsets() {
                    let covered = s.coverage(&coalition);
                    if coalition.len() >= t as usize {
                        assert_eq!(covered, all, "n={n} t={t} {coalition:?}");
                    } else {
                        let missing: BTreeSet<KeyLabel> =
                            all.difference(&covered).copied().collect();
                        assert!(!missing.is_empty());
                        // exactly the labels inside the complement are missing
                        let expected: BTreeSet<KeyLabel> = all
                            .iter()
                            .filter(|l| l.members().iter().all(|m| !coalition.contains(m)))
                            .copied()
                            .collect();
                        assert_eq!(missing, expected);
                    }
                }
            }
        }
    }

    #[test]
    fn five_three_counts() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let p = ThresholdParams::new(5, 3).unwrap();
        let s = generate_key_shares(p, CipherProfile::Production, &mut rng);
        assert_eq!(s.labels().len(), 10);
        assert_eq!(s.coverage(&set(&[1, 3, 5])).len(), 10);
        assert!(s.coverage(&set(&[2, 4])).len() < 10);
        // each key is held by exactly its label members
        for (label, _) in s.keys() {
            for party in 1..=5 {
                assert_eq!(s.holdings(party).contains(label), label.contains(party));
            }
        }
    }

    #[test]
    fn party_shares_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let s = generate_key_shares(ThresholdParams::new(4, 2).unwrap(), CipherProfile::Production, &mut rng);
        let ps = s.party_shares(2).unwrap();
        assert_eq!(PartyShares::from_bytes(&ps.to_bytes()).unwrap(), ps);
        assert!(s.party_shares(0).is_err());
        assert!(s.party_shares(5).is_err());
    }
}
