//! Exhaustive secrecy checks under the toy profile.
//!
//! With 1-byte keys, nonce and record key, the posterior on `sk` given what a
//! coalition holds (the cipher key plus its own keys) is proportional to the
//! number of assignments of the missing keys that explain it. The assignments
//! are enumerated one key at a time, keeping a count per reachable pad value,
//! so no more than `256 * 256` cipher calls are made per missing key.

use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};

use super::{
    derive_cipher_key, generate_key_shares, require_profile, CipherKey, CombineMode, KeyLabel,
    KeyShareSet, ThresholdError, ThresholdParams,
};
use crate::crypto::{self, block_encrypt, BlockCipherKey, CipherProfile};

/// Counts overflow `u128` past this many unknown keys.
const MAX_ENUMERATED_KEYS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecrecyVerdict {
    /// Exactly one record key is consistent with the coalition's view.
    Reconstructs { sk: u8 },
    /// Every one of the 256 record keys is equally likely.
    Hidden,
    /// Neither: some but not all values remain, or the distribution is skewed.
    Partial { candidates: usize },
}

/// For each candidate record key, the number of assignments of the keys
/// absent from `known` that are consistent with `cipher_key`.
pub fn candidate_distribution(
    cipher_key: &CipherKey,
    known: &BTreeMap<KeyLabel, BlockCipherKey>,
) -> Result<[u128; 256], ThresholdError> {
    require_profile(cipher_key.profile, CipherProfile::Toy)?;
    let profile = CipherProfile::Toy;
    if cipher_key.masked_key.len() != 1 || cipher_key.nonce.len() != 1 {
        return Err(ThresholdError::Parameter(
            "secrecy enumeration needs a one-byte record key".into(),
        ));
    }
    let labels = cipher_key.params.labels();
    let unknown = labels.iter().filter(|l| !known.contains_key(l)).count();
    if unknown > MAX_ENUMERATED_KEYS {
        return Err(ThresholdError::Parameter(format!(
            "{unknown} unknown keys exceed the enumeration bound of {MAX_ENUMERATED_KEYS}"
        )));
    }
    let all_keys: Vec<BlockCipherKey> = (0..=255u8)
        .map(|k| BlockCipherKey::new(vec![k], profile).expect("toy key width"))
        .collect();
    let nonce = cipher_key.nonce[0];

    // counts[v]: number of missing-key assignments yielding pad (xor) or chain (cascade) value v
    let mut counts = [0u128; 256];
    match cipher_key.mode {
        CombineMode::Xor => {
            counts[0] = 1;
            for label in &labels {
                let mut next = [0u128; 256];
                let candidates: &[BlockCipherKey] = match known.get(label) {
                    Some(k) => std::slice::from_ref(k),
                    None => &all_keys,
                };
                for key in candidates {
                    let out = block_encrypt(&[nonce], key, profile)?[0];
                    for (v, c) in counts.iter().enumerate() {
                        if *c != 0 {
                            next[v ^ out as usize] += c;
                        }
                    }
                }
                counts = next;
            }
        }
        CombineMode::Cascade => {
            counts[nonce as usize] = 1;
            for label in &labels {
                let mut next = [0u128; 256];
                let candidates: &[BlockCipherKey] = match known.get(label) {
                    Some(k) => std::slice::from_ref(k),
                    None => &all_keys,
                };
                for key in candidates {
                    for (v, c) in counts.iter().enumerate() {
                        if *c != 0 {
                            let out = block_encrypt(&[v as u8], key, profile)?[0];
                            next[out as usize] += c;
                        }
                    }
                }
                counts = next;
            }
        }
    }

    let masked = cipher_key.masked_key[0];
    let mut by_sk = [0u128; 256];
    for (pad, c) in counts.iter().enumerate() {
        by_sk[(masked ^ pad as u8) as usize] += c;
    }
    Ok(by_sk)
}

/// Classify a candidate distribution.
pub fn verdict(distribution: &[u128; 256]) -> SecrecyVerdict {
    let support: Vec<usize> = (0..256).filter(|v| distribution[*v] != 0).collect();
    match support.as_slice() {
        [only] => SecrecyVerdict::Reconstructs { sk: *only as u8 },
        _ if support.len() == 256 && distribution.iter().all(|c| *c == distribution[0]) => {
            SecrecyVerdict::Hidden
        }
        _ => SecrecyVerdict::Partial {
            candidates: support.len(),
        },
    }
}

/// Verdict for a coalition given a concrete dealing. The coalition is assumed
/// to hold the cipher key as well as its own keys.
pub fn secrecy_oracle_with(
    shares: &KeyShareSet,
    cipher_key: &CipherKey,
    coalition: &BTreeSet<u8>,
) -> Result<SecrecyVerdict, ThresholdError> {
    require_profile(shares.profile(), CipherProfile::Toy)?;
    let known: BTreeMap<KeyLabel, BlockCipherKey> = shares
        .coverage(coalition)
        .into_iter()
        .map(|l| (l, shares.key(l).expect("covered label exists").clone()))
        .collect();
    Ok(verdict(&candidate_distribution(cipher_key, &known)?))
}

/// Deal fresh toy shares for `params`, mask a random record key, and decide
/// whether `coalition` can recover it.
pub fn secrecy_oracle<R: RngCore + CryptoRng>(
    params: ThresholdParams,
    coalition: &BTreeSet<u8>,
    mode: CombineMode,
    profile: CipherProfile,
    rng: &mut R,
) -> Result<SecrecyVerdict, ThresholdError> {
    require_profile(profile, CipherProfile::Toy)?;
    if let Some(p) = coalition.iter().find(|p| !(1..=params.n()).contains(*p)) {
        return Err(ThresholdError::Parameter(format!("party {p} not in 1..={}", params.n())));
    }
    let shares = generate_key_shares(params, profile, rng);
    let sk = crypto::random_bytes(1, rng);
    let cipher_key = derive_cipher_key(&sk, &shares, mode, rng)?;
    let verdict = secrecy_oracle_with(&shares, &cipher_key, coalition)?;
    if let SecrecyVerdict::Reconstructs { sk: found } = verdict {
        debug_assert_eq!(found, sk[0]);
    }
    Ok(verdict)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::threshold::derive_cipher_key_with_nonce;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn set(m: &[u8]) -> BTreeSet<u8> {
        m.iter().copied().collect()
    }

    #[test]
    fn three_two_examples() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let p = ThresholdParams::new(3, 2).unwrap();
        for mode in [CombineMode::Xor, CombineMode::Cascade] {
            assert!(matches!(
                secrecy_oracle(p, &set(&[1, 2]), mode, CipherProfile::Toy, &mut rng).unwrap(),
                SecrecyVerdict::Reconstructs { .. }
            ));
            assert_eq!(
                secrecy_oracle(p, &set(&[3]), mode, CipherProfile::Toy, &mut rng).unwrap(),
                SecrecyVerdict::Hidden
            );
            assert_eq!(
                secrecy_oracle(p, &set(&[]), mode, CipherProfile::Toy, &mut rng).unwrap(),
                SecrecyVerdict::Hidden
            );
        }
    }

    #[test]
    fn production_profile_rejected() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let p = ThresholdParams::new(3, 2).unwrap();
        assert_eq!(
            secrecy_oracle(p, &set(&[1]), CombineMode::Xor, CipherProfile::Production, &mut rng),
            Err(ThresholdError::Profile("toy"))
        );
    }

    /// Independent check by direct nested loops over the missing keys.
    fn brute_force(shares: &KeyShareSet, ck: &CipherKey, coalition: &BTreeSet<u8>) -> [u128; 256] {
        let covered = shares.coverage(coalition);
        let labels = shares.labels();
        let missing: Vec<usize> = (0..labels.len()).filter(|i| !covered.contains(&labels[*i])).collect();
        let mut counts = [0u128; 256];
        let total = 256usize.pow(missing.len() as u32);
        for assignment in 0..total {
            let mut keys: Vec<u8> = shares.keys().iter().map(|(_, k)| k.as_bytes()[0]).collect();
            let mut a = assignment;
            for &i in &missing {
                keys[i] = (a % 256) as u8;
                a /= 256;
            }
            let pad = match ck.mode {
                CombineMode::Xor => keys.iter().fold(0u8, |acc, k| acc ^ ck.nonce[0] ^ k),
                CombineMode::Cascade => keys.iter().fold(ck.nonce[0], |acc, k| acc ^ k),
            };
            counts[(ck.masked_key[0] ^ pad) as usize] += 1;
        }
        counts
    }

    #[test]
    fn enumeration_matches_brute_force() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for (n, t) in [(2u8, 2u8), (3, 2), (3, 3), (4, 4), (4, 3)] {
            let p = ThresholdParams::new(n, t).unwrap();
            for mode in [CombineMode::Xor, CombineMode::Cascade] {
                let shares = generate_key_shares(p, CipherProfile::Toy, &mut rng);
                let ck = derive_cipher_key(&[0x5E], &shares, mode, &mut rng).unwrap();
                for coalition in p.access_structure().all_subsets() {
                    let missing = p.key_count() - shares.coverage(&coalition).len();
                    if missing > 2 {
                        continue;
                    }
                    let known = shares
                        .coverage(&coalition)
                        .into_iter()
                        .map(|l| (l, shares.key(l).unwrap().clone()))
                        .collect();
                    assert_eq!(
                        candidate_distribution(&ck, &known).unwrap(),
                        brute_force(&shares, &ck, &coalition),
                        "n={n} t={t} {mode:?} {coalition:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn reconstructed_value_is_the_secret() {
        let p = ThresholdParams::new(3, 2).unwrap();
        let shares = KeyShareSet::from_keys(
            p,
            CipherProfile::Toy,
            [0x01, 0x02, 0x04]
                .iter()
                .map(|k| BlockCipherKey::new(vec![*k], CipherProfile::Toy).unwrap())
                .collect(),
        )
        .unwrap();
        let ck = derive_cipher_key_with_nonce(&[0x0A], &shares, CombineMode::Xor, vec![0]).unwrap();
        assert_eq!(
            secrecy_oracle_with(&shares, &ck, &set(&[1, 2])).unwrap(),
            SecrecyVerdict::Reconstructs { sk: 0x0A }
        );
    }

    #[test]
    fn monotone_reconstruction() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let p = ThresholdParams::new(4, 2).unwrap();
        let shares = generate_key_shares(p, CipherProfile::Toy, &mut rng);
        let ck = derive_cipher_key(&[0x77], &shares, CombineMode::Xor, &mut rng).unwrap();
        let structure = p.access_structure();
        for s in structure.all_subsets() {
            if matches!(secrecy_oracle_with(&shares, &ck, &s).unwrap(), SecrecyVerdict::Reconstructs { .. }) {
                for extra in 1..=4 {
                    let mut sup = s.clone();
                    sup.insert(extra);
                    assert!(matches!(
                        secrecy_oracle_with(&shares, &ck, &sup).unwrap(),
                        SecrecyVerdict::Reconstructs { sk: 0x77 }
                    ));
                }
            }
        }
    }
}
