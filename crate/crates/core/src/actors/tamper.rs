//! Adversarial cases, each run against a freshly delegated record.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::flows::{AccessOptions, Delegation, NOTARY_DISCLOSURE};
use super::{
    notary_name, requester_name, ActorError, DenyReason, Message, SecureMessage, SimConfig,
    Simulation, CUSTODIAN, DATA_OWNER, HSP,
};
use crate::credential::{binding_message, claim, DisclosedClaim, Presentation, RejectReason};
use crate::crypto::{CipherProfile, CryptoError};
use crate::threshold::{CombineMode, ThresholdParams};

/// Record contents used by fixtures.
pub const FIXTURE_EHR: &[u8] = b"blood type O+; allergies: penicillin";

/// Credential lifetime used by fixtures, in ticks.
pub const FIXTURE_EXPIRY: u64 = 100;

/// Two notaries, two requesters, one record stored and delegated to both
/// requesters under a (3, 2) threshold.
pub fn fixture(seed: u64, profile: CipherProfile, mode: CombineMode) -> Result<(Simulation, Delegation), ActorError> {
    let mut sim = Simulation::new(SimConfig {
        seed,
        profile,
        ..SimConfig::default()
    });
    let ehr_id = sim.flow1_store_ehr(HSP, DATA_OWNER, CUSTODIAN, FIXTURE_EHR)?;
    let (n1, n2) = (notary_name(1), notary_name(2));
    let (d1, d2) = (requester_name(1), requester_name(2));
    let delegation = sim.flow2_delegate(
        DATA_OWNER,
        &[&d1, &d2],
        &[&n1, &n2],
        CUSTODIAN,
        &ehr_id,
        ThresholdParams::new(3, 2)?,
        FIXTURE_EXPIRY,
        mode,
    )?;
    Ok((sim, delegation))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TamperCase {
    SpoofedSender,
    TamperedCredential,
    TamperedCiphertext,
    ReplayedPresentation,
    ExpiredCredential,
    StolenCredential,
}

impl TamperCase {
    pub const ALL: [TamperCase; 6] = [
        TamperCase::SpoofedSender,
        TamperCase::TamperedCredential,
        TamperCase::TamperedCiphertext,
        TamperCase::ReplayedPresentation,
        TamperCase::ExpiredCredential,
        TamperCase::StolenCredential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TamperCase::SpoofedSender => "spoofed_sender",
            TamperCase::TamperedCredential => "tampered_credential",
            TamperCase::TamperedCiphertext => "tampered_ciphertext",
            TamperCase::ReplayedPresentation => "replayed_presentation",
            TamperCase::ExpiredCredential => "expired_credential",
            TamperCase::StolenCredential => "stolen_credential",
        }
    }

    fn expected(self) -> &'static str {
        match self {
            TamperCase::SpoofedSender => "transport: sender signature",
            TamperCase::TamperedCredential => "commitment-mismatch",
            TamperCase::TamperedCiphertext => "authentication failed",
            TamperCase::ReplayedPresentation | TamperCase::StolenCredential => "bad-binding",
            TamperCase::ExpiredCredential => "expired",
        }
    }
}

impl fmt::Display for TamperCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TamperOutcome {
    pub case: TamperCase,
    pub expected: String,
    pub observed: String,
    /// The attack failed, and for the expected reason.
    pub rejected: bool,
}

/// Run every case on its own fixture.
pub fn tamper_scenarios(seed: u64, profile: CipherProfile) -> Result<Vec<TamperOutcome>, ActorError> {
    TamperCase::ALL
        .iter()
        .map(|case| run_case(*case, seed, profile))
        .collect()
}

fn denied(reason: RejectReason) -> impl Fn(&ActorError) -> bool {
    move |e| *e == ActorError::AccessDenied(DenyReason::Rejected(reason))
}

type Matcher = Box<dyn Fn(&ActorError) -> bool>;

/// Run one case; `Err` only when the fixture itself cannot be built.
pub fn run_case(case: TamperCase, seed: u64, profile: CipherProfile) -> Result<TamperOutcome, ActorError> {
    let (mut sim, delegation) = fixture(seed, profile, CombineMode::Xor)?;
    let (d1, d2) = (requester_name(1), requester_name(2));
    let vc1 = delegation.credentials[&d1];
    let opts = AccessOptions::via(&[&notary_name(1)]);

    let (result, matches): (Result<Vec<u8>, ActorError>, Matcher) = match case {
        TamperCase::SpoofedSender => {
            let attacker = sim.actor(&d2)?.wallet.clone();
            let target = sim.did_of(&notary_name(1))?;
            let ledger = sim.ledger.clone();
            let mut sealed = SecureMessage::seal(&attacker, &target, &Message::ChallengeRequest, &ledger, sim.rng())?;
            sealed.sender_did = sim.did_of(&d1)?;
            let r = sim.deliver(&d2, &notary_name(1), "challenge_request", sealed).map(|_| Vec::new());
            (r, Box::new(|e| matches!(e, ActorError::Transport(m) if m.contains("sender signature"))))
        }
        TamperCase::TamperedCredential => {
            let mut cred = sim
                .actor(&d1)?
                .wallet
                .credentials()
                .iter()
                .find(|c| c.vc_id == vc1)
                .cloned()
                .ok_or_else(|| ActorError::MissingState("fixture credential".into()))?;
            if let Some(v) = cred.claims.get_mut(claim::EHR_ID) {
                v[0] ^= 0x01;
            }
            (sim.flow3_access_with(&d1, &cred, &opts), Box::new(denied(RejectReason::CommitmentMismatch)))
        }
        TamperCase::TamperedCiphertext => {
            sim.store.corrupt_blob(&delegation.ehr_id, 7)?;
            let r = sim.flow3_access(&d1, &vc1, &opts);
            (r, Box::new(|e| *e == ActorError::Crypto(CryptoError::Authenticity)))
        }
        TamperCase::ReplayedPresentation => {
            sim.flow3_access(&d1, &vc1, &opts)?;
            let captured = sim
                .actor(&notary_name(1))?
                .received
                .iter()
                .filter_map(|m| Message::from_bytes(m).ok())
                .filter_map(|m| match m {
                    Message::NotaryRequest { presentation, blocks } => Some((presentation, blocks)),
                    _ => None,
                })
                .next_back()
                .ok_or_else(|| ActorError::MissingState("no captured presentation".into()))?;
            let notary = notary_name(1);
            let r = sim.with_attempt(&d1, |sim, attempt| {
                sim.request_challenge(&d1, &notary)?;
                match sim.present_to_notary(&d1, &notary, captured.0, captured.1, attempt)? {
                    Message::Denied { reason } => Err(ActorError::AccessDenied(reason)),
                    _ => Ok(Vec::new()),
                }
            });
            (r, Box::new(denied(RejectReason::BadBinding)))
        }
        TamperCase::ExpiredCredential => {
            sim.advance(FIXTURE_EXPIRY);
            (sim.flow3_access(&d1, &vc1, &opts), Box::new(denied(RejectReason::Expired)))
        }
        TamperCase::StolenCredential => {
            let stolen = sim
                .actor(&d1)?
                .wallet
                .credentials()
                .iter()
                .find(|c| c.vc_id == vc1)
                .cloned()
                .ok_or_else(|| ActorError::MissingState("fixture credential".into()))?;
            let thief = sim.actor(&d2)?.wallet.clone();
            let notary = notary_name(1);
            let r = sim.with_attempt(&d2, |sim, attempt| {
                let challenge = sim.request_challenge(&d2, &notary)?;
                let disclosed = NOTARY_DISCLOSURE
                    .iter()
                    .map(|name| {
                        let d = DisclosedClaim {
                            salt: stolen.salts[*name].clone(),
                            value: stolen.claims[*name].clone(),
                        };
                        (name.to_string(), d)
                    })
                    .collect();
                let presentation = Presentation {
                    issuer_did: stolen.issuer_did.clone(),
                    issued_at: stolen.issued_at,
                    vc_id: stolen.vc_id,
                    disclosed,
                    commitments: stolen.commitments.clone(),
                    issuer_signature: stolen.issuer_signature.clone(),
                    holder_did: thief.did().clone(),
                    holder_binding: thief.sign(&binding_message(&challenge, &stolen.vc_id)),
                };
                let blocks = stolen.decode_claims()?.cipher_key.blocks() as u16;
                match sim.present_to_notary(&d2, &notary, presentation, blocks, attempt)? {
                    Message::Denied { reason } => Err(ActorError::AccessDenied(reason)),
                    _ => Ok(Vec::new()),
                }
            });
            (r, Box::new(denied(RejectReason::BadBinding)))
        }
    };

    let (observed, rejected) = match &result {
        Ok(_) => ("accepted".to_string(), false),
        Err(e) => (e.to_string(), matches(e)),
    };
    Ok(TamperOutcome {
        case,
        expected: case.expected().to_string(),
        observed,
        rejected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_is_rejected_for_its_reason() {
        for outcome in tamper_scenarios(11, CipherProfile::Production).unwrap() {
            assert!(outcome.rejected, "{outcome:?}");
        }
    }

    #[test]
    fn toy_profile_cases_are_rejected_too() {
        for outcome in tamper_scenarios(12, CipherProfile::Toy).unwrap() {
            assert!(outcome.rejected, "{outcome:?}");
        }
    }
}
