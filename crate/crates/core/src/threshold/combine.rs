use std::collections::{BTreeMap, BTreeSet};

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{CombineMode, KeyLabel, PartyShares, ThresholdError, ThresholdParams};
use crate::crypto::{self, block_encrypt, xor_in_place, BlockCipherKey, CipherProfile};
use crate::identity::{canonical_decode, canonical_encode, field};

/// Blocks are distinguished by a one-byte counter folded into the nonce.
const MAX_BLOCKS: usize = 256;

/// The masked record key together with everything needed to unmask it,
/// except the distributed keys.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CipherKey {
    #[serde(with = "crate::codec::bytes")]
    pub nonce: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub masked_key: Vec<u8>,
    pub params: ThresholdParams,
    pub mode: CombineMode,
    pub profile: CipherProfile,
}

impl CipherKey {
    pub fn blocks(&self) -> usize {
        self.masked_key.len() / self.profile.block_width()
    }

    /// Canonical bytes of `(n, t, mode, profile)`.
    pub fn params_bytes(&self) -> Vec<u8> {
        canonical_encode([
            ("n", &[self.params.n()][..]),
            ("t", &[self.params.t()][..]),
            ("mode", &[self.mode.code()][..]),
            ("profile", &[self.profile.code()][..]),
        ])
        .expect("static field names are unique")
    }

    pub fn from_parts(
        nonce: Vec<u8>,
        masked_key: Vec<u8>,
        params_bytes: &[u8],
    ) -> Result<Self, ThresholdError> {
        let bad = |m: &str| ThresholdError::Format(m.to_string());
        let map = canonical_decode(params_bytes).map_err(|e| bad(&e.to_string()))?;
        let byte = |name: &str| -> Result<u8, ThresholdError> {
            match field(&map, name).map_err(|e| bad(&e.to_string()))? {
                [b] => Ok(*b),
                _ => Err(bad(name)),
            }
        };
        if map.len() != 4 {
            return Err(bad("unexpected parameter fields"));
        }
        let params = ThresholdParams::new(byte("n")?, byte("t")?)?;
        let mode = CombineMode::from_code(byte("mode")?).ok_or_else(|| bad("mode"))?;
        let profile = CipherProfile::from_code(byte("profile")?).ok_or_else(|| bad("profile"))?;
        let ck = CipherKey {
            nonce,
            masked_key,
            params,
            mode,
            profile,
        };
        check_widths(&ck.masked_key, &ck.nonce, profile)?;
        Ok(ck)
    }
}

fn check_widths(sk: &[u8], nonce: &[u8], profile: CipherProfile) -> Result<usize, ThresholdError> {
    let width = profile.block_width();
    if nonce.len() != width {
        return Err(ThresholdError::Parameter(format!(
            "nonce is {} bytes, block width is {width}",
            nonce.len()
        )));
    }
    if sk.is_empty() || !sk.len().is_multiple_of(width) {
        return Err(ThresholdError::Parameter(format!(
            "key width {} is not a positive multiple of block width {width}",
            sk.len()
        )));
    }
    let blocks = sk.len() / width;
    if blocks > MAX_BLOCKS {
        return Err(ThresholdError::Parameter(format!(
            "key spans {blocks} blocks, at most {MAX_BLOCKS} supported"
        )));
    }
    Ok(blocks)
}

/// Cipher input for block `index`: the nonce with its last byte XORed by the index.
fn block_input(nonce: &[u8], index: usize) -> Vec<u8> {
    let mut input = nonce.to_vec();
    *input.last_mut().expect("nonce is non-empty") ^= index as u8;
    input
}

fn xor_pad(
    keys: &[(KeyLabel, BlockCipherKey)],
    nonce: &[u8],
    blocks: usize,
    profile: CipherProfile,
) -> Result<Vec<u8>, ThresholdError> {
    let width = profile.block_width();
    let mut pad = vec![0u8; blocks * width];
    for (_, key) in keys {
        for j in 0..blocks {
            let out = block_encrypt(&block_input(nonce, j), key, profile)?;
            xor_in_place(&mut pad[j * width..(j + 1) * width], &out);
        }
    }
    Ok(pad)
}

fn cascade_pad(
    keys: &[(KeyLabel, BlockCipherKey)],
    nonce: &[u8],
    blocks: usize,
    profile: CipherProfile,
) -> Result<Vec<u8>, ThresholdError> {
    let mut pad = Vec::with_capacity(blocks * profile.block_width());
    for j in 0..blocks {
        let mut chain = block_input(nonce, j);
        for (_, key) in keys {
            chain = block_encrypt(&chain, key, profile)?;
        }
        pad.extend(chain);
    }
    Ok(pad)
}

/// Mask `sk` under a fresh nonce.
pub fn derive_cipher_key<R: RngCore + CryptoRng>(
    sk: &[u8],
    shares: &super::KeyShareSet,
    mode: CombineMode,
    rng: &mut R,
) -> Result<CipherKey, ThresholdError> {
    let nonce = crypto::random_bytes(shares.profile().block_width(), rng);
    derive_cipher_key_with_nonce(sk, shares, mode, nonce)
}

pub fn derive_cipher_key_with_nonce(
    sk: &[u8],
    shares: &super::KeyShareSet,
    mode: CombineMode,
    nonce: Vec<u8>,
) -> Result<CipherKey, ThresholdError> {
    if shares.keys().is_empty() {
        return Err(ThresholdError::Parameter("empty key share set".into()));
    }
    let profile = shares.profile();
    let blocks = check_widths(sk, &nonce, profile)?;
    let pad = match mode {
        CombineMode::Xor => xor_pad(shares.keys(), &nonce, blocks, profile)?,
        CombineMode::Cascade => cascade_pad(shares.keys(), &nonce, blocks, profile)?,
    };
    let mut masked_key = sk.to_vec();
    xor_in_place(&mut masked_key, &pad);
    Ok(CipherKey {
        nonce,
        masked_key,
        params: shares.params(),
        mode,
        profile,
    })
}

/// A party's labeled encryptions of the nonce, one entry per held key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartialContribution {
    pub party: u8,
    pub entries: Vec<(KeyLabel, Vec<u8>)>,
}

/// Encrypt the nonce (per block) under every key the party holds.
pub fn compute_partial(
    shares: &PartyShares,
    nonce: &[u8],
    blocks: usize,
) -> Result<PartialContribution, ThresholdError> {
    if shares.keys.is_empty() {
        return Err(ThresholdError::Parameter(format!(
            "party {} holds no keys",
            shares.party
        )));
    }
    if blocks == 0 || blocks > MAX_BLOCKS {
        return Err(ThresholdError::Parameter(format!("invalid block count {blocks}")));
    }
    if nonce.len() != shares.profile.block_width() {
        return Err(ThresholdError::Parameter("nonce width does not match profile".into()));
    }
    let mut entries = Vec::with_capacity(shares.keys.len());
    for (label, key) in &shares.keys {
        let mut bytes = Vec::with_capacity(blocks * nonce.len());
        for j in 0..blocks {
            bytes.extend(block_encrypt(&block_input(nonce, j), key, shares.profile)?);
        }
        entries.push((*label, bytes));
    }
    Ok(PartialContribution {
        party: shares.party,
        entries,
    })
}

fn expect_mode(ck: &CipherKey, requested: CombineMode) -> Result<(), ThresholdError> {
    if ck.mode != requested {
        return Err(ThresholdError::ModeMismatch {
            derived: ck.mode,
            requested,
        });
    }
    Ok(())
}

/// Unmask `sk` from contributions in any order. Entries are deduplicated by
/// label, so parties with overlapping holdings are counted once.
pub fn combine_xor(
    cipher_key: &CipherKey,
    contributions: &[PartialContribution],
) -> Result<Vec<u8>, ThresholdError> {
    expect_mode(cipher_key, CombineMode::Xor)?;
    let expected: BTreeSet<KeyLabel> = cipher_key.params.labels().into_iter().collect();
    let mut by_label: BTreeMap<KeyLabel, &[u8]> = BTreeMap::new();
    for contribution in contributions {
        for (label, bytes) in &contribution.entries {
            if !expected.contains(label) {
                return Err(ThresholdError::Format(format!(
                    "label {label} is not a key index for these parameters"
                )));
            }
            if bytes.len() != cipher_key.masked_key.len() {
                return Err(ThresholdError::Format(format!(
                    "contribution for {label} is {} bytes, expected {}",
                    bytes.len(),
                    cipher_key.masked_key.len()
                )));
            }
            match by_label.get(label) {
                Some(existing) if *existing != bytes.as_slice() => {
                    return Err(ThresholdError::Inconsistent { label: *label });
                }
                Some(_) => {}
                None => {
                    by_label.insert(*label, bytes);
                }
            }
        }
    }
    let missing: Vec<KeyLabel> = expected
        .iter()
        .filter(|l| !by_label.contains_key(l))
        .copied()
        .collect();
    if !missing.is_empty() {
        return Err(ThresholdError::InsufficientParties { missing });
    }
    let mut sk = cipher_key.masked_key.clone();
    for bytes in by_label.values() {
        xor_in_place(&mut sk, bytes);
    }
    Ok(sk)
}

/// Applies one cascade link for a named key on behalf of whichever
/// cooperating party holds it.
pub trait CascadeStep {
    fn holds(&self, label: KeyLabel) -> bool;
    fn step(&mut self, label: KeyLabel, input: &[u8]) -> Result<Vec<u8>, ThresholdError>;
}

/// Cascade steps computed from share fragments held locally.
pub struct LocalHolders<'a> {
    shares: &'a [PartyShares],
}

impl<'a> LocalHolders<'a> {
    pub fn new(shares: &'a [PartyShares]) -> Self {
        LocalHolders { shares }
    }
}

impl CascadeStep for LocalHolders<'_> {
    fn holds(&self, label: KeyLabel) -> bool {
        self.shares.iter().any(|s| s.key(label).is_some())
    }

    fn step(&mut self, label: KeyLabel, input: &[u8]) -> Result<Vec<u8>, ThresholdError> {
        let holder = self
            .shares
            .iter()
            .find(|s| s.key(label).is_some())
            .ok_or_else(|| ThresholdError::InsufficientParties {
                missing: vec![label],
            })?;
        let key = holder.key(label).expect("checked above");
        Ok(block_encrypt(input, key, holder.profile)?)
    }
}

/// Unmask `sk` by replaying the cascade chain over all keys in label order,
/// each link applied once by some holder.
pub fn combine_cascade<S: CascadeStep + ?Sized>(
    cipher_key: &CipherKey,
    holders: &mut S,
) -> Result<Vec<u8>, ThresholdError> {
    expect_mode(cipher_key, CombineMode::Cascade)?;
    let labels = cipher_key.params.labels();
    let missing: Vec<KeyLabel> = labels.iter().filter(|l| !holders.holds(**l)).copied().collect();
    if !missing.is_empty() {
        return Err(ThresholdError::InsufficientParties { missing });
    }
    let width = cipher_key.profile.block_width();
    let mut sk = cipher_key.masked_key.clone();
    for j in 0..cipher_key.blocks() {
        let mut chain = block_input(&cipher_key.nonce, j);
        for label in &labels {
            chain = holders.step(*label, &chain)?;
            if chain.len() != width {
                return Err(ThresholdError::Format(format!(
                    "cascade step for {label} returned {} bytes",
                    chain.len()
                )));
            }
        }
        xor_in_place(&mut sk[j * width..(j + 1) * width], &chain);
    }
    Ok(sk)
}
