//! Delegation credentials with salted per-claim commitments, selectively
//! disclosed presentations bound to their holder, and revocation entries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{self, KeyPair};
use crate::identity::{
    canonical_decode, canonical_encode, canonical_encode_map, field, resolve, Did, IdentityError,
    Wallet,
};
use crate::ledger::{pseudo_id_for, Hash, Ledger, LedgerError};
use crate::threshold::CipherKey;
use crate::Tick;

pub const SALT_LEN: usize = 16;

/// Claim names, in the order they appear in the canonical claim map.
pub mod claim {
    pub const AUTHORIZED_DR_DIDS: &str = "authorized_dr_dids";
    pub const CIPHER_PARAMS: &str = "cipher_params";
    pub const DC_DID: &str = "dc_did";
    pub const EHR_ID: &str = "ehr_id";
    pub const EXPIRY: &str = "expiry";
    pub const MASKED_KEY: &str = "masked_key";
    pub const NONCE_R: &str = "nonce_r";
    pub const NOTARY_DIDS: &str = "notary_dids";
    pub const PSEUDO_ID: &str = "pseudo_id";
    pub const SUBJECT_DR_DID: &str = "subject_dr_did";

    pub const ALL: [&str; 10] = [
        AUTHORIZED_DR_DIDS,
        CIPHER_PARAMS,
        DC_DID,
        EHR_ID,
        EXPIRY,
        MASKED_KEY,
        NONCE_R,
        NOTARY_DIDS,
        PSEUDO_ID,
        SUBJECT_DR_DID,
    ];
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CredentialError {
    #[error("unresolvable DID {0}")]
    Reference(Did),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("holder {holder} is not the credential subject")]
    Binding { holder: Did },
    #[error("revocation not authorized: {0}")]
    Authorization(String),
    #[error("malformed credential: {0}")]
    Format(String),
}

impl From<IdentityError> for CredentialError {
    fn from(e: IdentityError) -> Self {
        CredentialError::Format(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RejectReason {
    BadSignature,
    CommitmentMismatch,
    BadBinding,
    Expired,
    Revoked,
    ExpiryNotDisclosed,
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RejectReason::BadSignature => "bad-signature",
            RejectReason::CommitmentMismatch => "commitment-mismatch",
            RejectReason::BadBinding => "bad-binding",
            RejectReason::Expired => "expired",
            RejectReason::Revoked => "revoked",
            RejectReason::ExpiryNotDisclosed => "expiry-not-disclosed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject(RejectReason),
}

impl Verdict {
    pub fn is_accept(self) -> bool {
        self == Verdict::Accept
    }
}

/// Typed view of a credential's claims.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelegationClaims {
    pub subject_dr_did: Did,
    pub notary_dids: Vec<Did>,
    pub dc_did: Did,
    pub pseudo_id: Vec<u8>,
    pub ehr_id: Vec<u8>,
    pub cipher_key: CipherKey,
    pub expiry: Tick,
    pub authorized_dr_dids: Vec<Did>,
}

fn encode_did_list(dids: &[Did]) -> Vec<u8> {
    dids.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}

pub fn decode_did_list(bytes: &[u8]) -> Result<Vec<Did>, CredentialError> {
    if bytes.is_empty() {
        return Ok(Vec::new());
    }
    std::str::from_utf8(bytes)
        .map_err(|_| CredentialError::Format("DID list is not UTF-8".into()))?
        .split('\n')
        .map(|s| s.parse().map_err(CredentialError::from))
        .collect()
}

pub fn decode_did(bytes: &[u8]) -> Result<Did, CredentialError> {
    std::str::from_utf8(bytes)
        .map_err(|_| CredentialError::Format("DID is not UTF-8".into()))?
        .parse()
        .map_err(CredentialError::from)
}

pub fn decode_expiry(bytes: &[u8]) -> Option<Tick> {
    Some(Tick(u64::from_be_bytes(bytes.try_into().ok()?)))
}

impl DelegationClaims {
    pub fn to_claim_map(&self) -> BTreeMap<String, Vec<u8>> {
        let ck = &self.cipher_key;
        [
            (claim::SUBJECT_DR_DID, self.subject_dr_did.to_string().into_bytes()),
            (claim::NOTARY_DIDS, encode_did_list(&self.notary_dids)),
            (claim::DC_DID, self.dc_did.to_string().into_bytes()),
            (claim::PSEUDO_ID, self.pseudo_id.clone()),
            (claim::EHR_ID, self.ehr_id.clone()),
            (claim::NONCE_R, ck.nonce.clone()),
            (claim::MASKED_KEY, ck.masked_key.clone()),
            (claim::CIPHER_PARAMS, ck.params_bytes()),
            (claim::EXPIRY, self.expiry.0.to_be_bytes().to_vec()),
            (claim::AUTHORIZED_DR_DIDS, encode_did_list(&self.authorized_dr_dids)),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_claim_map(map: &BTreeMap<String, Vec<u8>>) -> Result<Self, CredentialError> {
        if map.len() != claim::ALL.len() {
            return Err(CredentialError::Format("unexpected claim set".into()));
        }
        let get = |name: &str| field(map, name).map_err(CredentialError::from);
        let cipher_key = CipherKey::from_parts(
            get(claim::NONCE_R)?.to_vec(),
            get(claim::MASKED_KEY)?.to_vec(),
            get(claim::CIPHER_PARAMS)?,
        )
        .map_err(|e| CredentialError::Format(e.to_string()))?;
        Ok(DelegationClaims {
            subject_dr_did: decode_did(get(claim::SUBJECT_DR_DID)?)?,
            notary_dids: decode_did_list(get(claim::NOTARY_DIDS)?)?,
            dc_did: decode_did(get(claim::DC_DID)?)?,
            pseudo_id: get(claim::PSEUDO_ID)?.to_vec(),
            ehr_id: get(claim::EHR_ID)?.to_vec(),
            cipher_key,
            expiry: decode_expiry(get(claim::EXPIRY)?)
                .ok_or_else(|| CredentialError::Format("expiry".into()))?,
            authorized_dr_dids: decode_did_list(get(claim::AUTHORIZED_DR_DIDS)?)?,
        })
    }
}

pub fn commitment(salt: &[u8], value: &[u8]) -> Hash {
    crypto::hash(&[salt, value])
}

fn compute_vc_id(claims: &BTreeMap<String, Vec<u8>>, salts: &BTreeMap<String, Vec<u8>>) -> Hash {
    let mut all = claims.clone();
    for (name, salt) in salts {
        all.insert(format!("salt:{name}"), salt.clone());
    }
    crypto::hash(&[&canonical_encode_map(&all)])
}

/// Bytes covered by the issuer signature.
fn signed_metadata(
    issuer: &Did,
    issued_at: Tick,
    vc_id: &Hash,
    commitments: &BTreeMap<String, Vec<u8>>,
) -> Vec<u8> {
    let mut m = BTreeMap::new();
    m.insert("issuer_did".to_string(), issuer.to_string().into_bytes());
    m.insert("issued_at".to_string(), issued_at.0.to_be_bytes().to_vec());
    m.insert("vc_id".to_string(), vc_id.to_vec());
    for (name, c) in commitments {
        m.insert(format!("commitment:{name}"), c.clone());
    }
    canonical_encode_map(&m)
}

/// What the holder signs to bind a presentation to a verifier challenge.
pub fn binding_message(challenge: &[u8], vc_id: &Hash) -> Vec<u8> {
    canonical_encode([("challenge", challenge), ("vc_id", &vc_id[..])])
        .expect("static field names are unique")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelegationCredential {
    pub issuer_did: Did,
    pub issued_at: Tick,
    #[serde(with = "crate::codec::hash32")]
    pub vc_id: Hash,
    #[serde(with = "crate::codec::byte_map")]
    pub claims: BTreeMap<String, Vec<u8>>,
    #[serde(with = "crate::codec::byte_map")]
    pub salts: BTreeMap<String, Vec<u8>>,
    #[serde(with = "crate::codec::byte_map")]
    pub commitments: BTreeMap<String, Vec<u8>>,
    #[serde(with = "crate::codec::bytes")]
    pub issuer_signature: Vec<u8>,
}

/// Issue a credential signed by `owner`. Every DID named in the claims must
/// resolve on `ledger`.
pub fn issue<R: RngCore + CryptoRng>(
    owner: &Wallet,
    claims: &DelegationClaims,
    ledger: &Ledger,
    now: Tick,
    rng: &mut R,
) -> Result<DelegationCredential, CredentialError> {
    if claims.ehr_id.is_empty() {
        return Err(CredentialError::Parameter("ehr_id is required".into()));
    }
    if claims.pseudo_id.is_empty() {
        return Err(CredentialError::Parameter("pseudo_id is required".into()));
    }
    if claims.expiry <= now {
        return Err(CredentialError::Parameter(format!(
            "expiry {} is not after issuance {now}",
            claims.expiry
        )));
    }
    let referenced = std::iter::once(owner.did())
        .chain([&claims.subject_dr_did, &claims.dc_did])
        .chain(&claims.notary_dids)
        .chain(&claims.authorized_dr_dids);
    for did in referenced {
        resolve(did, ledger).map_err(|_| CredentialError::Reference(did.clone()))?;
    }

    let map = claims.to_claim_map();
    let mut salts = BTreeMap::new();
    let mut commitments = BTreeMap::new();
    for (name, value) in &map {
        let salt = crypto::random_bytes(SALT_LEN, rng);
        commitments.insert(name.clone(), commitment(&salt, value).to_vec());
        salts.insert(name.clone(), salt);
    }
    let vc_id = compute_vc_id(&map, &salts);
    let issuer_signature = owner.sign(&signed_metadata(owner.did(), now, &vc_id, &commitments));
    Ok(DelegationCredential {
        issuer_did: owner.did().clone(),
        issued_at: now,
        vc_id,
        claims: map,
        salts,
        commitments,
        issuer_signature,
    })
}

impl DelegationCredential {
    pub fn claim(&self, name: &str) -> Option<&[u8]> {
        self.claims.get(name).map(Vec::as_slice)
    }

    pub fn decode_claims(&self) -> Result<DelegationClaims, CredentialError> {
        DelegationClaims::from_claim_map(&self.claims)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("credential serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CredentialError> {
        serde_json::from_str(text).map_err(|e| CredentialError::Format(e.to_string()))
    }

    pub fn raw_view(&self) -> Vec<u8> {
        let mut out = self.issuer_did.to_string().into_bytes();
        out.extend_from_slice(&self.vc_id);
        for (name, value) in &self.claims {
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(value);
        }
        for salt in self.salts.values() {
            out.extend_from_slice(salt);
        }
        for c in self.commitments.values() {
            out.extend_from_slice(c);
        }
        out.extend_from_slice(&self.issuer_signature);
        out
    }
}

fn issuer_signature_ok(
    issuer: &Did,
    issued_at: Tick,
    vc_id: &Hash,
    commitments: &BTreeMap<String, Vec<u8>>,
    signature: &[u8],
    ledger: &Ledger,
) -> bool {
    match resolve(issuer, ledger) {
        Ok(doc) => crypto::verify(
            &signed_metadata(issuer, issued_at, vc_id, commitments),
            signature,
            &doc.signing_public_key,
        ),
        Err(_) => false,
    }
}

/// Full-disclosure check of a credential as held: signature, every
/// commitment, the credential identifier, expiry and revocation.
pub fn verify_credential(cred: &DelegationCredential, ledger: &Ledger, now: Tick) -> Verdict {
    if !issuer_signature_ok(
        &cred.issuer_did,
        cred.issued_at,
        &cred.vc_id,
        &cred.commitments,
        &cred.issuer_signature,
        ledger,
    ) {
        return Verdict::Reject(RejectReason::BadSignature);
    }
    let names: BTreeSet<&String> = cred.claims.keys().collect();
    if names != cred.salts.keys().collect() || names != cred.commitments.keys().collect() {
        return Verdict::Reject(RejectReason::CommitmentMismatch);
    }
    for (name, value) in &cred.claims {
        if cred.commitments[name] != commitment(&cred.salts[name], value) {
            return Verdict::Reject(RejectReason::CommitmentMismatch);
        }
    }
    if compute_vc_id(&cred.claims, &cred.salts) != cred.vc_id || cred.decode_claims().is_err() {
        return Verdict::Reject(RejectReason::CommitmentMismatch);
    }
    let Some(expiry) = cred.claim(claim::EXPIRY).and_then(decode_expiry) else {
        return Verdict::Reject(RejectReason::ExpiryNotDisclosed);
    };
    if expiry <= now {
        return Verdict::Reject(RejectReason::Expired);
    }
    if ledger.is_revoked(&cred.vc_id) {
        return Verdict::Reject(RejectReason::Revoked);
    }
    Verdict::Accept
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisclosedClaim {
    #[serde(with = "crate::codec::bytes")]
    pub salt: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Presentation {
    pub issuer_did: Did,
    pub issued_at: Tick,
    #[serde(with = "crate::codec::hash32")]
    pub vc_id: Hash,
    pub disclosed: BTreeMap<String, DisclosedClaim>,
    #[serde(with = "crate::codec::byte_map")]
    pub commitments: BTreeMap<String, Vec<u8>>,
    #[serde(with = "crate::codec::bytes")]
    pub issuer_signature: Vec<u8>,
    pub holder_did: Did,
    /// Holder's signature over the verifier challenge and `vc_id`.
    #[serde(with = "crate::codec::bytes")]
    pub holder_binding: Vec<u8>,
}

impl Presentation {
    pub fn disclosed_value(&self, name: &str) -> Option<&[u8]> {
        self.disclosed.get(name).map(|d| d.value.as_slice())
    }

    pub fn raw_view(&self) -> Vec<u8> {
        let mut out = self.issuer_did.to_string().into_bytes();
        out.extend_from_slice(&self.vc_id);
        for (name, d) in &self.disclosed {
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&d.salt);
            out.extend_from_slice(&d.value);
        }
        for c in self.commitments.values() {
            out.extend_from_slice(c);
        }
        out.extend_from_slice(&self.issuer_signature);
        out.extend(self.holder_did.to_string().into_bytes());
        out.extend_from_slice(&self.holder_binding);
        out
    }
}

/// Present `credential`, revealing only the claims in `disclose`.
pub fn present(
    credential: &DelegationCredential,
    holder: &Wallet,
    disclose: &[&str],
    challenge: &[u8],
) -> Result<Presentation, CredentialError> {
    let subject = credential
        .claim(claim::SUBJECT_DR_DID)
        .map(decode_did)
        .transpose()?;
    if subject.as_ref() != Some(holder.did()) {
        return Err(CredentialError::Binding {
            holder: holder.did().clone(),
        });
    }
    let mut disclosed = BTreeMap::new();
    for name in disclose {
        let (Some(value), Some(salt)) = (credential.claims.get(*name), credential.salts.get(*name))
        else {
            return Err(CredentialError::Parameter(format!("no claim named `{name}`")));
        };
        disclosed.insert(
            name.to_string(),
            DisclosedClaim {
                salt: salt.clone(),
                value: value.clone(),
            },
        );
    }
    Ok(Presentation {
        issuer_did: credential.issuer_did.clone(),
        issued_at: credential.issued_at,
        vc_id: credential.vc_id,
        disclosed,
        commitments: credential.commitments.clone(),
        issuer_signature: credential.issuer_signature.clone(),
        holder_did: holder.did().clone(),
        holder_binding: holder.sign(&binding_message(challenge, &credential.vc_id)),
    })
}

/// Checks run in a fixed order; the first failure is reported.
pub fn verify_presentation(
    p: &Presentation,
    challenge: &[u8],
    ledger: &Ledger,
    now: Tick,
) -> Verdict {
    if !issuer_signature_ok(
        &p.issuer_did,
        p.issued_at,
        &p.vc_id,
        &p.commitments,
        &p.issuer_signature,
        ledger,
    ) {
        return Verdict::Reject(RejectReason::BadSignature);
    }
    for (name, d) in &p.disclosed {
        match p.commitments.get(name) {
            Some(c) if *c == commitment(&d.salt, &d.value) => {}
            _ => return Verdict::Reject(RejectReason::CommitmentMismatch),
        }
    }
    let Some(expiry) = p.disclosed_value(claim::EXPIRY).and_then(decode_expiry) else {
        return Verdict::Reject(RejectReason::ExpiryNotDisclosed);
    };
    let subject_matches = p
        .disclosed_value(claim::SUBJECT_DR_DID)
        .and_then(|b| decode_did(b).ok())
        .is_some_and(|s| s == p.holder_did);
    let binding_ok = subject_matches
        && resolve(&p.holder_did, ledger).is_ok_and(|doc| {
            crypto::verify(
                &binding_message(challenge, &p.vc_id),
                &p.holder_binding,
                &doc.signing_public_key,
            )
        });
    if !binding_ok {
        return Verdict::Reject(RejectReason::BadBinding);
    }
    if expiry <= now {
        return Verdict::Reject(RejectReason::Expired);
    }
    if ledger.is_revoked(&p.vc_id) {
        return Verdict::Reject(RejectReason::Revoked);
    }
    Verdict::Accept
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevocationEntry {
    #[serde(with = "crate::codec::hash32")]
    pub vc_id: Hash,
    /// Pseudonym of the authorization record the credential was issued under.
    #[serde(with = "crate::codec::bytes")]
    pub revoked_by: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub revocation_signature: Vec<u8>,
}

impl RevocationEntry {
    fn signed_bytes(vc_id: &Hash, revoked_by: &[u8]) -> Vec<u8> {
        canonical_encode([("vc_id", &vc_id[..]), ("revoked_by", revoked_by)])
            .expect("static field names are unique")
    }

    pub fn to_payload(&self) -> Vec<u8> {
        canonical_encode([
            ("vc_id", &self.vc_id[..]),
            ("revoked_by", self.revoked_by.as_slice()),
            ("revocation_signature", self.revocation_signature.as_slice()),
        ])
        .expect("static field names are unique")
    }

    pub fn from_payload(bytes: &[u8]) -> Result<Self, IdentityError> {
        let map = canonical_decode(bytes)?;
        if map.len() != 3 {
            return Err(IdentityError::Format("unexpected revocation fields".into()));
        }
        Ok(RevocationEntry {
            vc_id: field(&map, "vc_id")?
                .try_into()
                .map_err(|_| IdentityError::Format("vc_id length".into()))?,
            revoked_by: field(&map, "revoked_by")?.to_vec(),
            revocation_signature: field(&map, "revocation_signature")?.to_vec(),
        })
    }

    /// Signature valid under `ephemeral_public`, whose hash is the pseudonym.
    pub fn verify(&self, ephemeral_public: &[u8]) -> bool {
        pseudo_id_for(ephemeral_public).as_slice() == self.revoked_by.as_slice()
            && crypto::verify(
                &Self::signed_bytes(&self.vc_id, &self.revoked_by),
                &self.revocation_signature,
                ephemeral_public,
            )
    }
}

/// Revoke `vc_id` using the ephemeral key behind the authorization record's
/// pseudonym. Revoking twice returns the seq of the original entry.
pub fn revoke(
    ephemeral: &KeyPair,
    vc_id: &Hash,
    ledger: &Ledger,
) -> Result<(u64, RevocationEntry), CredentialError> {
    let revoked_by = pseudo_id_for(ephemeral.public_key()).to_vec();
    let revocation_signature = crypto::sign(&RevocationEntry::signed_bytes(vc_id, &revoked_by), ephemeral)
        .map_err(|e| CredentialError::Authorization(e.to_string()))?;
    let entry = RevocationEntry {
        vc_id: *vc_id,
        revoked_by,
        revocation_signature,
    };
    let seq = ledger.post_revocation(&entry).map_err(|e| match e {
        LedgerError::Validation { reason, .. } => CredentialError::Authorization(reason),
        other => CredentialError::Authorization(other.to_string()),
    })?;
    Ok((seq, entry))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{CipherProfile, KeyPurpose};
    use crate::identity::create_identity;
    use crate::ledger::AuthorizationRecord;
    use crate::threshold::{
        derive_cipher_key_with_nonce, generate_key_shares, CombineMode, ThresholdParams,
    };
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    struct Fixture {
        rng: ChaCha20Rng,
        ledger: Ledger,
        owner: Wallet,
        dr: Wallet,
        other_dr: Wallet,
        eph: KeyPair,
        claims: DelegationClaims,
    }

    fn fixture(seed: u64) -> Fixture {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let ledger = Ledger::new();
        let make = |rng: &mut ChaCha20Rng| {
            let (w, d) = create_identity(rng, Tick(0));
            ledger.register_did(&d).unwrap();
            w
        };
        let owner = make(&mut rng);
        let dr = make(&mut rng);
        let other_dr = make(&mut rng);
        let n1 = make(&mut rng);
        let n2 = make(&mut rng);
        let dc = make(&mut rng);
        let eph = KeyPair::generate(KeyPurpose::Signing, &mut rng);
        let shares = generate_key_shares(ThresholdParams::new(3, 2).unwrap(), CipherProfile::Toy, &mut rng);
        let ck = derive_cipher_key_with_nonce(&[0x42], &shares, CombineMode::Xor, vec![0x17]).unwrap();
        let claims = DelegationClaims {
            subject_dr_did: dr.did().clone(),
            notary_dids: vec![n1.did().clone(), n2.did().clone()],
            dc_did: dc.did().clone(),
            pseudo_id: pseudo_id_for(eph.public_key()).to_vec(),
            ehr_id: vec![9; 16],
            cipher_key: ck,
            expiry: Tick(10),
            authorized_dr_dids: vec![dr.did().clone(), other_dr.did().clone()],
        };
        Fixture {
            rng,
            ledger,
            owner,
            dr,
            other_dr,
            eph,
            claims,
        }
    }

    const NOTARY_SET: [&str; 7] = [
        claim::PSEUDO_ID,
        claim::EHR_ID,
        claim::EXPIRY,
        claim::NONCE_R,
        claim::NOTARY_DIDS,
        claim::SUBJECT_DR_DID,
        claim::AUTHORIZED_DR_DIDS,
    ];

    #[test]
    fn issue_and_verify_full() {
        let mut f = fixture(1);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        assert_eq!(verify_credential(&vc, &f.ledger, Tick(1)), Verdict::Accept);
        assert_eq!(vc.decode_claims().unwrap(), f.claims);
        assert_eq!(vc.claims.len(), 10);
        assert!(vc.salts.values().all(|s| s.len() == SALT_LEN));
        let back = DelegationCredential::from_json(&vc.to_json()).unwrap();
        assert_eq!(back, vc);
        assert_eq!(back.vc_id, vc.vc_id);
    }

    #[test]
    fn fresh_salts_fresh_ids() {
        let mut f = fixture(2);
        let a = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        let b = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        assert_ne!(a.vc_id, b.vc_id);
    }

    #[test]
    fn issue_parameter_and_reference_errors() {
        let mut f = fixture(3);
        let mut no_ehr = f.claims.clone();
        no_ehr.ehr_id.clear();
        assert!(matches!(
            issue(&f.owner, &no_ehr, &f.ledger, Tick(1), &mut f.rng),
            Err(CredentialError::Parameter(_))
        ));
        assert!(matches!(
            issue(&f.owner, &f.claims, &f.ledger, Tick(10), &mut f.rng),
            Err(CredentialError::Parameter(_))
        ));
        let (stranger, _) = create_identity(&mut f.rng, Tick(0));
        let mut unknown = f.claims.clone();
        unknown.dc_did = stranger.did().clone();
        assert_eq!(
            issue(&f.owner, &unknown, &f.ledger, Tick(1), &mut f.rng),
            Err(CredentialError::Reference(stranger.did().clone()))
        );
    }

    #[test]
    fn presentation_accept_and_disclosure() {
        let mut f = fixture(4);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        let p = present(&vc, &f.dr, &NOTARY_SET, b"c1").unwrap();
        assert_eq!(verify_presentation(&p, b"c1", &f.ledger, Tick(2)), Verdict::Accept);
        assert_eq!(p.disclosed.len(), 7);

        // undisclosed claim bytes and salts are absent from the serialized form
        let bytes = bincode::serialize(&p).unwrap();
        let json = serde_json::to_string(&p).unwrap();
        for name in [claim::MASKED_KEY, claim::DC_DID, claim::CIPHER_PARAMS] {
            let value = vc.claim(name).unwrap();
            let salt = &vc.salts[name];
            assert!(!contains(&bytes, salt), "{name} salt leaked");
            assert!(!json.contains(&crate::codec::b64(salt)));
            if value.len() >= 8 {
                assert!(!contains(&bytes, value), "{name} leaked");
            }
        }
    }

    fn contains(hay: &[u8], needle: &[u8]) -> bool {
        hay.windows(needle.len()).any(|w| w == needle)
    }

    #[test]
    fn empty_disclosure_builds_but_lacks_expiry() {
        let mut f = fixture(5);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        let p = present(&vc, &f.dr, &[], b"c").unwrap();
        assert!(p.disclosed.is_empty());
        assert_eq!(
            verify_presentation(&p, b"c", &f.ledger, Tick(2)),
            Verdict::Reject(RejectReason::ExpiryNotDisclosed)
        );
    }

    #[test]
    fn non_subject_cannot_present() {
        let mut f = fixture(6);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        assert!(matches!(
            present(&vc, &f.other_dr, &NOTARY_SET, b"c"),
            Err(CredentialError::Binding { .. })
        ));
        // hand-built presentation from a stolen credential
        let mut stolen = present(&vc, &f.dr, &NOTARY_SET, b"c").unwrap();
        stolen.holder_did = f.other_dr.did().clone();
        stolen.holder_binding = f.other_dr.sign(&binding_message(b"c", &vc.vc_id));
        assert_eq!(
            verify_presentation(&stolen, b"c", &f.ledger, Tick(2)),
            Verdict::Reject(RejectReason::BadBinding)
        );
        let mut spoofed = present(&vc, &f.dr, &NOTARY_SET, b"c").unwrap();
        spoofed.holder_binding = f.other_dr.sign(&binding_message(b"c", &vc.vc_id));
        assert_eq!(
            verify_presentation(&spoofed, b"c", &f.ledger, Tick(2)),
            Verdict::Reject(RejectReason::BadBinding)
        );
    }

    #[test]
    fn replay_under_new_challenge() {
        let mut f = fixture(7);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        let p = present(&vc, &f.dr, &NOTARY_SET, b"first").unwrap();
        assert_eq!(
            verify_presentation(&p, b"second", &f.ledger, Tick(2)),
            Verdict::Reject(RejectReason::BadBinding)
        );
    }

    #[test]
    fn altered_disclosed_claim() {
        let mut f = fixture(8);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        let p = present(&vc, &f.dr, &NOTARY_SET, b"c").unwrap();
        for name in NOTARY_SET {
            for i in 0..p.disclosed[name].value.len() {
                let mut q = p.clone();
                q.disclosed.get_mut(name).unwrap().value[i] ^= 0x01;
                assert_eq!(
                    verify_presentation(&q, b"c", &f.ledger, Tick(2)),
                    Verdict::Reject(RejectReason::CommitmentMismatch)
                );
            }
        }
        let mut q = p.clone();
        q.commitments.get_mut(claim::DC_DID).unwrap()[0] ^= 1;
        assert_eq!(
            verify_presentation(&q, b"c", &f.ledger, Tick(2)),
            Verdict::Reject(RejectReason::BadSignature)
        );
    }

    #[test]
    fn expiry_boundary() {
        let mut f = fixture(9);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        let p = present(&vc, &f.dr, &NOTARY_SET, b"c").unwrap();
        assert!(verify_presentation(&p, b"c", &f.ledger, Tick(9)).is_accept());
        assert_eq!(
            verify_presentation(&p, b"c", &f.ledger, Tick(10)),
            Verdict::Reject(RejectReason::Expired)
        );
    }

    #[test]
    fn revocation_lifecycle() {
        let mut f = fixture(10);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        let rec = AuthorizationRecord::new_signed(
            &f.eph,
            f.claims.ehr_id.clone(),
            BTreeMap::new(),
            CombineMode::Xor,
            vec![vc.vc_id],
        )
        .unwrap();
        f.ledger.post_authorization(&rec).unwrap();

        let unrelated = KeyPair::generate(KeyPurpose::Signing, &mut f.rng);
        assert!(matches!(
            revoke(&unrelated, &vc.vc_id, &f.ledger),
            Err(CredentialError::Authorization(_))
        ));
        let before = f.ledger.len();
        let (seq, _) = revoke(&f.eph, &vc.vc_id, &f.ledger).unwrap();
        assert_eq!(f.ledger.len(), before + 1);
        let (again, _) = revoke(&f.eph, &vc.vc_id, &f.ledger).unwrap();
        assert_eq!(seq, again);
        assert_eq!(f.ledger.len(), before + 1);

        let p = present(&vc, &f.dr, &NOTARY_SET, b"c").unwrap();
        assert_eq!(
            verify_presentation(&p, b"c", &f.ledger, Tick(2)),
            Verdict::Reject(RejectReason::Revoked)
        );
        assert_eq!(
            verify_credential(&vc, &f.ledger, Tick(2)),
            Verdict::Reject(RejectReason::Revoked)
        );

        // a credential not listed in the record cannot be revoked under it
        let other = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        assert!(revoke(&f.eph, &other.vc_id, &f.ledger).is_err());
    }

    #[test]
    fn json_single_byte_mutations_rejected() {
        let mut f = fixture(11);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        let json = vc.to_json().into_bytes();
        for i in 0..json.len() {
            for delta in [0x01u8, 0x20] {
                let mut m = json.clone();
                m[i] ^= delta;
                if let Ok(text) = std::str::from_utf8(&m) {
                    if let Ok(parsed) = DelegationCredential::from_json(text) {
                        assert_ne!(
                            verify_credential(&parsed, &f.ledger, Tick(2)),
                            Verdict::Accept,
                            "byte {i} delta {delta:#x} accepted"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn concurrent_verification() {
        let mut f = fixture(12);
        let vc = issue(&f.owner, &f.claims, &f.ledger, Tick(1), &mut f.rng).unwrap();
        let p = present(&vc, &f.dr, &NOTARY_SET, b"c").unwrap();
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    for _ in 0..20 {
                        assert!(verify_presentation(&p, b"c", &f.ledger, Tick(2)).is_accept());
                    }
                });
            }
        });
    }
}
