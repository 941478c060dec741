//! The three protocol flows: storing a record, delegating access to it, and
//! a requester's access through notaries and the custodian.

use std::collections::BTreeMap;

use super::{ActorError, Availability, DenyReason, Message, Notification, Role, Simulation, TranscriptEntry};
use crate::credential::{
    self, claim, decode_did_list, verify_presentation, DelegationClaims, DelegationCredential,
    Presentation, Verdict,
};
use crate::crypto::{self, BlockCipherKey, KeyPair, KeyPurpose};
use crate::identity::{resolve, Did};
use crate::ledger::{
    blind_shares, fetch_shares_for, party_tag, pseudo_id_for, AccessEvent, AccessEventKind,
    AuthorizationRecord, Hash, LedgerError,
};
use crate::threshold::{
    combine_cascade, combine_xor, compute_partial, derive_cipher_key, generate_key_shares,
    CascadeStep, CombineMode, KeyLabel, PartialContribution, ThresholdError, ThresholdParams,
};

/// Claims shown to a notary.
pub const NOTARY_DISCLOSURE: [&str; 7] = [
    claim::PSEUDO_ID,
    claim::EHR_ID,
    claim::EXPIRY,
    claim::NONCE_R,
    claim::NOTARY_DIDS,
    claim::SUBJECT_DR_DID,
    claim::AUTHORIZED_DR_DIDS,
];

/// Claims shown to the custodian.
pub const CUSTODIAN_DISCLOSURE: [&str; 6] = [
    claim::PSEUDO_ID,
    claim::EHR_ID,
    claim::EXPIRY,
    claim::NONCE_R,
    claim::NOTARY_DIDS,
    claim::SUBJECT_DR_DID,
];

pub fn ehr_secret(ehr_id: &[u8], field: &str) -> String {
    format!("ehr:{}:{field}", hex::encode(ehr_id))
}

pub fn delegation_secret(pseudo_id: &[u8], field: &str) -> String {
    format!("delegation:{}:{field}", hex::encode(pseudo_id))
}

pub fn shares_secret(pseudo_id: &[u8]) -> String {
    format!("shares:{}", hex::encode(pseudo_id))
}

/// Outcome of one delegation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delegation {
    pub pseudo_id: Vec<u8>,
    pub ehr_id: Vec<u8>,
    pub params: ThresholdParams,
    pub mode: CombineMode,
    pub record_seq: u64,
    /// Requester name to the identifier of the credential issued to it.
    pub credentials: BTreeMap<String, Hash>,
    pub notaries: Vec<String>,
    pub custodian: String,
}

/// How a requester runs one access.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AccessOptions {
    /// Notaries to contact; the custodian is always contacted.
    pub notaries: Vec<String>,
    pub notary_disclosure: Option<Vec<String>>,
    pub custodian_disclosure: Option<Vec<String>>,
}

impl AccessOptions {
    pub fn via(notaries: &[&str]) -> Self {
        AccessOptions {
            notaries: notaries.iter().map(|n| n.to_string()).collect(),
            ..Default::default()
        }
    }
}

fn expect_role(sim: &Simulation, name: &str, role: Role) -> Result<(), ActorError> {
    let actual = sim.actor(name)?.role;
    if actual != role {
        return Err(ActorError::Config(format!("`{name}` is a {actual}, expected {role}")));
    }
    Ok(())
}

fn unexpected(m: &Message) -> ActorError {
    ActorError::Protocol(m.kind().to_string())
}

impl Simulation {
    fn log_event(
        &mut self,
        actor: &str,
        pseudo_id: &[u8],
        ehr_id: &[u8],
        kind: AccessEventKind,
    ) -> Result<(), ActorError> {
        let did = self.did_of(actor)?;
        self.ledger
            .log_access(&AccessEvent::new(&did, pseudo_id, ehr_id, kind, self.now()))?;
        self.sync_ledger();
        Ok(())
    }

    /// HSP encrypts `ehr` under a fresh key, uploads it to the custodian and
    /// hands the key and record id to the owner. Returns the record id.
    pub fn flow1_store_ehr(
        &mut self,
        hsp: &str,
        owner: &str,
        custodian: &str,
        ehr: &[u8],
    ) -> Result<Vec<u8>, ActorError> {
        expect_role(self, hsp, Role::Hsp)?;
        expect_role(self, owner, Role::DataOwner)?;
        expect_role(self, custodian, Role::Custodian)?;
        let profile = self.profile();
        let sk = BlockCipherKey::random(profile, self.rng());
        let ciphertext = crypto::sym_encrypt(ehr, &sk, self.rng());

        let Message::Upload { ciphertext } = self.send(hsp, custodian, &Message::Upload { ciphertext })? else {
            return Err(ActorError::Protocol("upload".into()));
        };
        let hsp_did = self.did_of(hsp)?;
        let ehr_id = {
            let Simulation { store, rng, .. } = self;
            store.upload(ciphertext, &hsp_did, rng)?
        };
        let receipt = self.send(custodian, hsp, &Message::UploadReceipt { ehr_id })?;
        let Message::UploadReceipt { ehr_id } = receipt else {
            return Err(unexpected(&receipt));
        };

        let owner_did = self.did_of(owner)?;
        let dc_did = self.did_of(custodian)?;
        let wallet = &mut self.actor_mut(hsp)?.wallet;
        wallet.put_secret(ehr_secret(&ehr_id, "sk"), sk.as_bytes().to_vec());
        wallet.put_secret(ehr_secret(&ehr_id, "owner"), owner_did.to_string().into_bytes());
        wallet.put_secret(ehr_secret(&ehr_id, "dc"), dc_did.to_string().into_bytes());

        let delivered = self.send(
            hsp,
            owner,
            &Message::StoreDelivery {
                sk: sk.as_bytes().to_vec(),
                ehr_id: ehr_id.clone(),
                dc_did,
            },
        )?;
        let Message::StoreDelivery { sk, ehr_id, dc_did } = delivered else {
            return Err(unexpected(&delivered));
        };
        let wallet = &mut self.actor_mut(owner)?.wallet;
        wallet.put_secret(ehr_secret(&ehr_id, "sk"), sk);
        wallet.put_secret(ehr_secret(&ehr_id, "dc"), dc_did.to_string().into_bytes());
        Ok(ehr_id)
    }

    /// The owner shares the record key among `notaries` (parties `1..`) and
    /// the custodian (party `n`), posts the authorization record under a
    /// fresh pseudonym, and delivers one credential to each requester.
    #[allow(clippy::too_many_arguments)]
    pub fn flow2_delegate(
        &mut self,
        owner: &str,
        requesters: &[&str],
        notaries: &[&str],
        custodian: &str,
        ehr_id: &[u8],
        params: ThresholdParams,
        expiry_ticks: u64,
        mode: CombineMode,
    ) -> Result<Delegation, ActorError> {
        if params.n() as usize != notaries.len() + 1 {
            return Err(ActorError::Config(format!(
                "n = {} but there are {} notaries plus the custodian",
                params.n(),
                notaries.len()
            )));
        }
        expect_role(self, owner, Role::DataOwner)?;
        expect_role(self, custodian, Role::Custodian)?;
        for n in notaries {
            expect_role(self, n, Role::Notary)?;
        }
        for r in requesters {
            expect_role(self, r, Role::Requester)?;
        }
        if requesters.is_empty() {
            return Err(ActorError::Config("no requesters".into()));
        }

        let owner_wallet = self.actor(owner)?.wallet.clone();
        let sk = owner_wallet
            .secret(&ehr_secret(ehr_id, "sk"))
            .ok_or_else(|| ActorError::MissingState(format!("owner holds no key for record {}", hex::encode(ehr_id))))?
            .to_vec();
        let dc_did = self.did_of(custodian)?;
        if owner_wallet.secret(&ehr_secret(ehr_id, "dc")) != Some(dc_did.to_string().as_bytes()) {
            return Err(ActorError::Config(format!("record is not held by `{custodian}`")));
        }

        let profile = self.profile();
        let now = self.now();
        let shares = generate_key_shares(params, profile, self.rng());
        let ephemeral = KeyPair::generate(KeyPurpose::Signing, self.rng());
        let pseudo_id = pseudo_id_for(ephemeral.public_key()).to_vec();
        let cipher_key = derive_cipher_key(&sk, &shares, mode, self.rng())?;

        let notary_dids = notaries.iter().map(|n| self.did_of(n)).collect::<Result<Vec<_>, _>>()?;
        let requester_dids = requesters.iter().map(|r| self.did_of(r)).collect::<Result<Vec<_>, _>>()?;
        let mut issued = Vec::new();
        for (name, did) in requesters.iter().zip(&requester_dids) {
            let claims = DelegationClaims {
                subject_dr_did: did.clone(),
                notary_dids: notary_dids.clone(),
                dc_did: dc_did.clone(),
                pseudo_id: pseudo_id.clone(),
                ehr_id: ehr_id.to_vec(),
                cipher_key: cipher_key.clone(),
                expiry: now.plus(expiry_ticks),
                authorized_dr_dids: requester_dids.clone(),
            };
            let vc = {
                let Simulation { ledger, rng, .. } = self;
                credential::issue(&owner_wallet, &claims, ledger, now, rng)?
            };
            issued.push((name.to_string(), vc));
        }

        let mut recipients = Vec::new();
        for (i, did) in notary_dids.iter().chain(std::iter::once(&dc_did)).enumerate() {
            let doc = resolve(did, &self.ledger).map_err(|e| ActorError::Config(e.to_string()))?;
            recipients.push((doc, shares.party_shares(i as u8 + 1)?));
        }
        let blinded = blind_shares(&recipients, &pseudo_id, self.rng())?;
        let record = AuthorizationRecord::new_signed(
            &ephemeral,
            ehr_id.to_vec(),
            blinded,
            mode,
            issued.iter().map(|(_, vc)| vc.vc_id).collect(),
        )?;
        let record_seq = self.ledger.post_authorization(&record)?;
        self.sync_ledger();

        let all_keys: Vec<u8> = shares.keys().iter().flat_map(|(_, k)| k.as_bytes().to_vec()).collect();
        let owner_ctx = self.actor_mut(owner)?;
        let w = &mut owner_ctx.wallet;
        w.put_secret(delegation_secret(&pseudo_id, "ephemeral_public"), ephemeral.public_key().to_vec());
        w.put_secret(delegation_secret(&pseudo_id, "ephemeral_private"), ephemeral.private_key().to_vec());
        w.put_secret(delegation_secret(&pseudo_id, "keys"), all_keys);
        w.put_secret(delegation_secret(&pseudo_id, "ehr"), ehr_id.to_vec());
        for (_, vc) in &issued {
            w.store_credential(vc.clone());
        }

        let mut credentials = BTreeMap::new();
        for (name, vc) in issued {
            credentials.insert(name.clone(), vc.vc_id);
            let got = self.send(owner, &name, &Message::CredentialDelivery { credential: vc })?;
            let Message::CredentialDelivery { credential } = got else {
                return Err(unexpected(&got));
            };
            self.actor_mut(&name)?.wallet.store_credential(credential);
        }
        Ok(Delegation {
            pseudo_id,
            ehr_id: ehr_id.to_vec(),
            params,
            mode,
            record_seq,
            credentials,
            notaries: notaries.iter().map(|n| n.to_string()).collect(),
            custodian: custodian.to_string(),
        })
    }

    /// Revoke a credential the owner issued. Returns the revocation's seq.
    pub fn revoke_credential(&mut self, owner: &str, vc_id: &Hash) -> Result<u64, ActorError> {
        let wallet = &self.actor(owner)?.wallet;
        let vc = wallet
            .credentials()
            .iter()
            .find(|c| &c.vc_id == vc_id)
            .ok_or_else(|| ActorError::MissingState("owner did not issue this credential".into()))?;
        let pseudo_id = vc
            .claim(claim::PSEUDO_ID)
            .ok_or_else(|| ActorError::MissingState("credential has no pseudonym".into()))?;
        let secret = |f: &str| {
            wallet
                .secret(&delegation_secret(pseudo_id, f))
                .map(<[u8]>::to_vec)
                .ok_or_else(|| ActorError::MissingState(format!("ephemeral key {f}")))
        };
        let ephemeral = KeyPair::from_parts(secret("ephemeral_public")?, secret("ephemeral_private")?)?;
        let (seq, _) = credential::revoke(&ephemeral, vc_id, &self.ledger)?;
        self.sync_ledger();
        Ok(seq)
    }

    /// Access a record with the credential `vc_id` held by `requester`.
    pub fn flow3_access(
        &mut self,
        requester: &str,
        vc_id: &Hash,
        options: &AccessOptions,
    ) -> Result<Vec<u8>, ActorError> {
        let credential = self
            .actor(requester)?
            .wallet
            .credentials()
            .iter()
            .find(|c| &c.vc_id == vc_id)
            .cloned()
            .ok_or_else(|| ActorError::MissingState("requester does not hold this credential".into()))?;
        self.flow3_access_with(requester, &credential, options)
    }

    /// As [`Simulation::flow3_access`], with an explicit (possibly altered) credential.
    pub fn flow3_access_with(
        &mut self,
        requester: &str,
        credential: &DelegationCredential,
        options: &AccessOptions,
    ) -> Result<Vec<u8>, ActorError> {
        expect_role(self, requester, Role::Requester)?;
        self.with_attempt(requester, |sim, attempt| sim.access_inner(requester, credential, options, attempt))
    }

    /// Run `body` bracketed by access start/end transcript entries; any
    /// cascade sessions opened for the requester are closed afterwards.
    pub(crate) fn with_attempt<T>(
        &mut self,
        requester: &str,
        body: impl FnOnce(&mut Simulation, u64) -> Result<T, ActorError>,
    ) -> Result<T, ActorError> {
        let attempt = self.next_attempt();
        self.transcript.push(TranscriptEntry::AccessStart {
            attempt,
            requester: requester.to_string(),
        });
        let result = body(self, attempt);
        if let Ok(did) = self.did_of(requester) {
            for name in self.actor_names().map(str::to_string).collect::<Vec<_>>() {
                if let Ok(ctx) = self.actor_mut(&name) {
                    ctx.sessions.remove(&did);
                }
            }
        }
        self.sync_ledger();
        self.transcript.push(TranscriptEntry::AccessEnd {
            attempt,
            outcome: match &result {
                Ok(_) => "granted".to_string(),
                Err(e) => e.to_string(),
            },
        });
        result
    }

    fn access_inner(
        &mut self,
        requester: &str,
        credential: &DelegationCredential,
        options: &AccessOptions,
        attempt: u64,
    ) -> Result<Vec<u8>, ActorError> {
        let claims = credential.decode_claims()?;
        let cipher_key = claims.cipher_key.clone();
        let blocks = u16::try_from(cipher_key.blocks())
            .map_err(|_| ActorError::Protocol("record key too long".into()))?;
        let holder = self.actor(requester)?.wallet.clone();
        let notary_set: Vec<&str> = match &options.notary_disclosure {
            Some(set) => set.iter().map(String::as_str).collect(),
            None => NOTARY_DISCLOSURE.to_vec(),
        };
        let dc_set: Vec<&str> = match &options.custodian_disclosure {
            Some(set) => set.iter().map(String::as_str).collect(),
            None => CUSTODIAN_DISCLOSURE.to_vec(),
        };

        let mut partials: Vec<PartialContribution> = Vec::new();
        let mut holders: Vec<(String, Vec<KeyLabel>)> = Vec::new();
        let mut contacted = Vec::new();
        for notary in &options.notaries {
            expect_role(self, notary, Role::Notary)?;
            let challenge = self.request_challenge(requester, notary)?;
            let presentation = credential::present(credential, &holder, &notary_set, &challenge)?;
            let reply = self.present_to_notary(requester, notary, presentation, blocks, attempt)?;
            let Message::Grant { partial, session_labels, .. } = reply else {
                return Err(denial(reply));
            };
            partials.extend(partial);
            holders.push((notary.clone(), session_labels));
            contacted.push(self.did_of(notary)?);
        }

        let custodian = self
            .names_with_role(Role::Custodian)
            .into_iter()
            .find(|n| self.did_of(n).ok() == Some(claims.dc_did.clone()))
            .ok_or_else(|| ActorError::Config("credential names an unknown custodian".into()))?;
        let challenge = self.request_challenge(requester, &custodian)?;
        let presentation = credential::present(credential, &holder, &dc_set, &challenge)?;
        let request = self.send(
            requester,
            &custodian,
            &Message::CustodianRequest {
                presentation,
                blocks,
                contacted_notaries: contacted,
            },
        )?;
        let response = self.custodian_handle(&custodian, holder.did(), request, attempt)?;
        let reply = self.send(&custodian, requester, &response)?;
        let Message::Grant { partial, session_labels, link } = reply else {
            return Err(denial(reply));
        };
        partials.extend(partial);
        holders.push((custodian.clone(), session_labels));
        let link = link.ok_or_else(|| ActorError::Protocol("grant without link".into()))?;

        let sk = match cipher_key.mode {
            CombineMode::Xor => combine_xor(&cipher_key, &partials)?,
            CombineMode::Cascade => {
                let mut remote = RemoteHolders {
                    sim: self,
                    requester: requester.to_string(),
                    holders,
                    failure: None,
                };
                let out = combine_cascade(&cipher_key, &mut remote);
                if let Some(e) = remote.failure {
                    return Err(e);
                }
                out?
            }
        };
        let ciphertext = self.store.download(&link, self.now(), &self.ledger)?;
        self.sync_ledger();
        let key = BlockCipherKey::new(sk.clone(), cipher_key.profile)?;
        let plaintext = crypto::sym_decrypt(&ciphertext, &key)?;
        self.actor_mut(requester)?
            .wallet
            .put_secret(ehr_secret(&claims.ehr_id, "sk"), sk);
        Ok(plaintext)
    }

    /// The requester asks `verifier` for a fresh challenge.
    pub fn request_challenge(&mut self, requester: &str, verifier: &str) -> Result<Vec<u8>, ActorError> {
        let req = self.send(requester, verifier, &Message::ChallengeRequest)?;
        if req != Message::ChallengeRequest {
            return Err(unexpected(&req));
        }
        let challenge = crypto::random_bytes(32, self.rng());
        let requester_did = self.did_of(requester)?;
        self.actor_mut(verifier)?
            .pending_challenges
            .insert(requester_did, challenge.clone());
        let reply = self.send(verifier, requester, &Message::Challenge { challenge })?;
        match reply {
            Message::Challenge { challenge } => Ok(challenge),
            other => Err(unexpected(&other)),
        }
    }

    /// Send a presentation to a notary and return the notary's reply as
    /// received by the requester.
    pub fn present_to_notary(
        &mut self,
        requester: &str,
        notary: &str,
        presentation: Presentation,
        blocks: u16,
        attempt: u64,
    ) -> Result<Message, ActorError> {
        let request = self.send(requester, notary, &Message::NotaryRequest { presentation, blocks })?;
        let requester_did = self.did_of(requester)?;
        let response = self.notary_handle(notary, &requester_did, request, attempt)?;
        self.send(notary, requester, &response)
    }

    fn take_challenge(&mut self, verifier: &str, requester: &Did) -> Result<Option<Vec<u8>>, ActorError> {
        Ok(self.actor_mut(verifier)?.pending_challenges.remove(requester))
    }

    fn check_presentation(
        &mut self,
        verifier: &str,
        requester: &Did,
        presentation: &Presentation,
        attempt: u64,
    ) -> Result<Verdict, ActorError> {
        let verdict = match self.take_challenge(verifier, requester)? {
            None => None,
            Some(challenge) if &presentation.holder_did == requester => {
                Some(verify_presentation(presentation, &challenge, &self.ledger, self.now()))
            }
            Some(_) => Some(Verdict::Reject(credential::RejectReason::BadBinding)),
        };
        self.transcript.push(TranscriptEntry::Verification {
            verifier: verifier.to_string(),
            attempt,
            verdict: match verdict {
                Some(Verdict::Accept) => "accept".to_string(),
                Some(Verdict::Reject(r)) => format!("reject: {r}"),
                None => "reject: no-challenge".to_string(),
            },
        });
        Ok(verdict.unwrap_or(Verdict::Reject(credential::RejectReason::BadBinding)))
    }

    fn notary_handle(
        &mut self,
        notary: &str,
        requester: &Did,
        request: Message,
        attempt: u64,
    ) -> Result<Message, ActorError> {
        let Message::NotaryRequest { presentation, blocks } = request else {
            return Err(unexpected(&request));
        };
        let had_challenge = self.actor(notary)?.pending_challenges.contains_key(requester);
        let verdict = self.check_presentation(notary, requester, &presentation, attempt)?;
        let pseudo_id = presentation.disclosed_value(claim::PSEUDO_ID).map(<[u8]>::to_vec);
        let ehr_id = presentation.disclosed_value(claim::EHR_ID).map(<[u8]>::to_vec);
        let deny = |sim: &mut Simulation, reason: DenyReason| -> Result<Message, ActorError> {
            if let (Some(p), Some(e)) = (&pseudo_id, &ehr_id) {
                sim.log_event(notary, p, e, AccessEventKind::NotaryDenied)?;
            }
            Ok(Message::Denied { reason })
        };
        if !had_challenge {
            return deny(self, DenyReason::NoChallenge);
        }
        if let Verdict::Reject(r) = verdict {
            return deny(self, DenyReason::Rejected(r));
        }
        let (Some(pseudo_id), Some(ehr_id)) = (pseudo_id.clone(), ehr_id.clone()) else {
            return deny(self, DenyReason::MissingDisclosure);
        };

        let decision = self
            .actor_mut(notary)?
            .availability_oracle
            .as_mut()
            .map(|o| o.query(&pseudo_id))
            .unwrap_or(Availability::DoUnavailable);
        self.transcript.push(TranscriptEntry::OracleDecision {
            notary: notary.to_string(),
            decision,
        });
        if decision == Availability::DoAvailableDenies {
            return deny(self, DenyReason::OwnerDenied);
        }

        let grant = match self.release_share(notary, requester, &presentation, &pseudo_id, &ehr_id, blocks, attempt)? {
            Ok(grant) => grant,
            Err(reason) => return deny(self, reason),
        };
        self.log_event(notary, &pseudo_id, &ehr_id, AccessEventKind::NotaryVerified)?;
        if decision == Availability::DoUnavailable {
            let note = Notification {
                owner_did: presentation.issuer_did.clone(),
                pseudo_id,
                ehr_id,
                requester_did: requester.clone(),
                at: self.now(),
            };
            self.actor_mut(notary)?.notification_outbox.push(note);
        }
        Ok(grant)
    }

    /// Fetch this party's shares for the delegation and either compute its
    /// partial (XOR) or open a cascade session for the requester.
    #[allow(clippy::too_many_arguments)]
    fn release_share(
        &mut self,
        party: &str,
        requester: &Did,
        presentation: &Presentation,
        pseudo_id: &[u8],
        ehr_id: &[u8],
        blocks: u16,
        attempt: u64,
    ) -> Result<Result<Message, DenyReason>, ActorError> {
        let Ok(record) = self.ledger.find_authorization(pseudo_id, ehr_id) else {
            return Ok(Err(DenyReason::UnknownAuthorization));
        };
        let wallet = self.actor(party)?.wallet.clone();
        let shares = match fetch_shares_for(&wallet, &record) {
            Ok(s) => s,
            Err(LedgerError::NotARecipient) => return Ok(Err(DenyReason::NotARecipient)),
            Err(e) => return Err(e.into()),
        };
        self.actor_mut(party)?
            .wallet
            .put_secret(shares_secret(pseudo_id), shares.to_bytes());
        let grant = match record.mode {
            CombineMode::Xor => {
                let Some(nonce) = presentation.disclosed_value(claim::NONCE_R) else {
                    return Ok(Err(DenyReason::MissingDisclosure));
                };
                let partial = compute_partial(&shares, nonce, blocks as usize)?;
                self.transcript.push(TranscriptEntry::Release {
                    party: party.to_string(),
                    attempt,
                    what: "partial".into(),
                });
                Message::Grant {
                    partial: Some(partial),
                    session_labels: Vec::new(),
                    link: None,
                }
            }
            CombineMode::Cascade => {
                let labels = shares.labels();
                self.actor_mut(party)?.sessions.insert(requester.clone(), shares);
                self.transcript.push(TranscriptEntry::Release {
                    party: party.to_string(),
                    attempt,
                    what: "cascade_session".into(),
                });
                Message::Grant {
                    partial: None,
                    session_labels: labels,
                    link: None,
                }
            }
        };
        Ok(Ok(grant))
    }

    fn custodian_handle(
        &mut self,
        custodian: &str,
        requester: &Did,
        request: Message,
        attempt: u64,
    ) -> Result<Message, ActorError> {
        let Message::CustodianRequest {
            presentation,
            blocks,
            contacted_notaries,
        } = request
        else {
            return Err(unexpected(&request));
        };
        let had_challenge = self.actor(custodian)?.pending_challenges.contains_key(requester);
        let verdict = self.check_presentation(custodian, requester, &presentation, attempt)?;
        if !had_challenge {
            return Ok(Message::Denied { reason: DenyReason::NoChallenge });
        }
        if let Verdict::Reject(r) = verdict {
            return Ok(Message::Denied { reason: DenyReason::Rejected(r) });
        }
        let (Some(pseudo_id), Some(ehr_id)) = (
            presentation.disclosed_value(claim::PSEUDO_ID).map(<[u8]>::to_vec),
            presentation.disclosed_value(claim::EHR_ID).map(<[u8]>::to_vec),
        ) else {
            return Ok(Message::Denied { reason: DenyReason::MissingDisclosure });
        };

        if self.config.dc_checks_notary && !self.notaries_verified(&presentation, &contacted_notaries, &pseudo_id, &ehr_id) {
            return Ok(Message::Denied { reason: DenyReason::NotaryNotVerified });
        }
        self.log_event(custodian, &pseudo_id, &ehr_id, AccessEventKind::DcVerified)?;
        let grant = match self.release_share(custodian, requester, &presentation, &pseudo_id, &ehr_id, blocks, attempt)? {
            Ok(g) => g,
            Err(reason) => return Ok(Message::Denied { reason }),
        };
        let Message::Grant { partial, session_labels, .. } = grant else {
            return Err(unexpected(&grant));
        };
        let link = {
            let ttl = self.config.link_ttl;
            let now = self.now();
            let Simulation { store, rng, .. } = self;
            store.grant_link(&ehr_id, requester, &pseudo_id, ttl, now, rng)?
        };
        self.log_event(custodian, &pseudo_id, &ehr_id, AccessEventKind::DcGrantedLink)?;
        self.transcript.push(TranscriptEntry::Release {
            party: custodian.to_string(),
            attempt,
            what: "link".into(),
        });
        Ok(Message::Grant {
            partial,
            session_labels,
            link: Some(link),
        })
    }

    /// Every contacted notary is named in the credential and has a
    /// `notary_verified` event for this delegation on the ledger.
    fn notaries_verified(&self, presentation: &Presentation, contacted: &[Did], pseudo_id: &[u8], ehr_id: &[u8]) -> bool {
        let Some(named) = presentation
            .disclosed_value(claim::NOTARY_DIDS)
            .and_then(|b| decode_did_list(b).ok())
        else {
            return false;
        };
        if contacted.is_empty() {
            return false;
        }
        let events = self.ledger.access_events();
        contacted.iter().all(|notary| {
            named.contains(notary)
                && events.iter().any(|(_, e)| {
                    e.event == AccessEventKind::NotaryVerified
                        && e.pseudo_id == pseudo_id
                        && e.ehr_id == ehr_id
                        && e.actor_tag == party_tag(notary, pseudo_id)
                })
        })
    }

    fn step_handle(&mut self, party: &str, requester: &Did, request: Message) -> Result<Message, ActorError> {
        let Message::StepRequest { label, input } = request else {
            return Err(unexpected(&request));
        };
        let ctx = self.actor(party)?;
        let Some(shares) = ctx.sessions.get(requester) else {
            return Ok(Message::Denied { reason: DenyReason::NoSession });
        };
        let Some(key) = shares.key(label) else {
            return Ok(Message::Denied { reason: DenyReason::NoSession });
        };
        let output = crypto::block_encrypt(&input, key, shares.profile)?;
        Ok(Message::StepResponse { output })
    }
}

fn denial(reply: Message) -> ActorError {
    match reply {
        Message::Denied { reason } => ActorError::AccessDenied(reason),
        other => unexpected(&other),
    }
}

/// Cascade links applied by the parties that opened sessions, one message
/// round trip per link.
struct RemoteHolders<'a> {
    sim: &'a mut Simulation,
    requester: String,
    holders: Vec<(String, Vec<KeyLabel>)>,
    failure: Option<ActorError>,
}

impl RemoteHolders<'_> {
    fn round_trip(&mut self, party: &str, label: KeyLabel, input: &[u8]) -> Result<Vec<u8>, ActorError> {
        let requester = self.requester.clone();
        let request = self.sim.send(
            &requester,
            party,
            &Message::StepRequest {
                label,
                input: input.to_vec(),
            },
        )?;
        let requester_did = self.sim.did_of(&requester)?;
        let response = self.sim.step_handle(party, &requester_did, request)?;
        match self.sim.send(party, &requester, &response)? {
            Message::StepResponse { output } => Ok(output),
            other => Err(denial(other)),
        }
    }
}

impl CascadeStep for RemoteHolders<'_> {
    fn holds(&self, label: KeyLabel) -> bool {
        self.holders.iter().any(|(_, labels)| labels.contains(&label))
    }

    fn step(&mut self, label: KeyLabel, input: &[u8]) -> Result<Vec<u8>, ThresholdError> {
        let party = self
            .holders
            .iter()
            .find(|(_, labels)| labels.contains(&label))
            .map(|(p, _)| p.clone())
            .ok_or(ThresholdError::InsufficientParties { missing: vec![label] })?;
        self.round_trip(&party, label, input).map_err(|e| {
            let msg = e.to_string();
            self.failure = Some(e);
            ThresholdError::Parameter(msg)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::{
        fixture, Availability, CollusionVerdict, SimConfig, CUSTODIAN, DATA_OWNER, FIXTURE_EHR, HSP,
    };
    use crate::crypto::CipherProfile;

    #[test]
    fn xor_and_cascade_access_return_the_record() {
        for mode in [CombineMode::Xor, CombineMode::Cascade] {
            for profile in [CipherProfile::Production, CipherProfile::Toy] {
                let (mut sim, d) = fixture(1, profile, mode).unwrap();
                let vc = d.credentials["dr1"];
                let got = sim.flow3_access("dr1", &vc, &AccessOptions::via(&["notary1"])).unwrap();
                assert_eq!(got, FIXTURE_EHR, "{mode:?} {profile:?}");
                let got = sim
                    .flow3_access("dr2", &d.credentials["dr2"], &AccessOptions::via(&["notary1", "notary2"]))
                    .unwrap();
                assert_eq!(got, FIXTURE_EHR);
            }
        }
    }

    #[test]
    fn custodian_alone_is_not_enough() {
        let (mut sim, d) = fixture(2, CipherProfile::Production, CombineMode::Xor).unwrap();
        let err = sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::default()).unwrap_err();
        assert_eq!(err, ActorError::AccessDenied(DenyReason::NotaryNotVerified));

        sim.config.dc_checks_notary = false;
        let err = sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::default()).unwrap_err();
        assert!(matches!(err, ActorError::Threshold(ThresholdError::InsufficientParties { .. })), "{err}");
    }

    #[test]
    fn owner_denial_stops_the_notary() {
        let mut sim = Simulation::new(SimConfig {
            seed: 3,
            availability: vec![Availability::DoAvailableDenies],
            availability_fallback: Availability::DoAvailableApproves,
            ..SimConfig::default()
        });
        let ehr = sim.flow1_store_ehr(HSP, DATA_OWNER, CUSTODIAN, b"x").unwrap();
        let d = sim
            .flow2_delegate(
                DATA_OWNER,
                &["dr1"],
                &["notary1", "notary2"],
                CUSTODIAN,
                &ehr,
                ThresholdParams::new(3, 2).unwrap(),
                50,
                CombineMode::Xor,
            )
            .unwrap();
        let vc = d.credentials["dr1"];
        let err = sim.flow3_access("dr1", &vc, &AccessOptions::via(&["notary1"])).unwrap_err();
        assert_eq!(err, ActorError::AccessDenied(DenyReason::OwnerDenied));
        // notary2's oracle has its own script
        let err = sim.flow3_access("dr1", &vc, &AccessOptions::via(&["notary2"])).unwrap_err();
        assert_eq!(err, ActorError::AccessDenied(DenyReason::OwnerDenied));
        assert_eq!(sim.flow3_access("dr1", &vc, &AccessOptions::via(&["notary1"])).unwrap(), b"x");
        assert!(sim.actor("notary1").unwrap().notification_outbox.is_empty());
    }

    #[test]
    fn unavailable_owner_is_notified() {
        let (mut sim, d) = fixture(4, CipherProfile::Production, CombineMode::Xor).unwrap();
        sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::via(&["notary2"])).unwrap();
        let outbox = &sim.actor("notary2").unwrap().notification_outbox;
        assert_eq!(outbox.len(), 1);
        assert_eq!(outbox[0].owner_did, sim.did_of(DATA_OWNER).unwrap());
        assert_eq!(outbox[0].pseudo_id, d.pseudo_id);
    }

    #[test]
    fn revoked_credential_is_refused_but_others_still_work() {
        let (mut sim, d) = fixture(5, CipherProfile::Production, CombineMode::Xor).unwrap();
        sim.revoke_credential(DATA_OWNER, &d.credentials["dr1"]).unwrap();
        let err = sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::via(&["notary1"])).unwrap_err();
        assert_eq!(
            err,
            ActorError::AccessDenied(DenyReason::Rejected(credential::RejectReason::Revoked))
        );
        assert!(sim.flow3_access("dr2", &d.credentials["dr2"], &AccessOptions::via(&["notary1"])).is_ok());
    }

    #[test]
    fn delegation_checks_party_count() {
        let mut sim = Simulation::new(SimConfig::default());
        let ehr = sim.flow1_store_ehr(HSP, DATA_OWNER, CUSTODIAN, b"x").unwrap();
        let err = sim
            .flow2_delegate(
                DATA_OWNER,
                &["dr1"],
                &["notary1"],
                CUSTODIAN,
                &ehr,
                ThresholdParams::new(3, 2).unwrap(),
                50,
                CombineMode::Xor,
            )
            .unwrap_err();
        assert!(matches!(err, ActorError::Config(_)));
    }

    #[test]
    fn transcripts_are_deterministic() {
        let run = |seed| {
            let (mut sim, d) = fixture(seed, CipherProfile::Production, CombineMode::Cascade).unwrap();
            sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::via(&["notary1"])).unwrap();
            (sim.transcript.digest(), sim.ledger.head_hash())
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn collusion_needs_a_threshold_of_shares_and_the_masked_key() {
        for profile in [CipherProfile::Production, CipherProfile::Toy] {
            for mode in [CombineMode::Xor, CombineMode::Cascade] {
                let (sim, d) = fixture(6, profile, mode).unwrap();
                let p = &d.pseudo_id;
                let v = |m: &[&str]| sim.adversary_collude(m, p).unwrap().verdict;
                assert_eq!(v(&["dr1", "notary1", "notary2"]), CollusionVerdict::SkRecovered);
                assert_eq!(v(&["dr1", "notary1", "dc"]), CollusionVerdict::SkRecovered);
                assert_eq!(v(&["dr1", "notary1"]), CollusionVerdict::NotRecovered);
                assert_eq!(v(&["dr1", "dc"]), CollusionVerdict::NotRecovered);
                assert_eq!(v(&["notary1", "notary2", "dc"]), CollusionVerdict::NotRecovered);
                assert_eq!(v(&["do"]), CollusionVerdict::SkRecovered);
                let r = sim.adversary_collude(&["dr1", "notary1"], p).unwrap();
                assert_eq!((r.covered, r.total), (2, Some(3)));
                if profile == CipherProfile::Toy {
                    assert_eq!(r.secrecy, Some(crate::threshold::SecrecyVerdict::Hidden));
                }
            }
        }
    }
}
