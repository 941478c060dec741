use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::{ActorError, DenyReason};
use crate::credential::{DelegationCredential, Presentation};
use crate::crypto;
use crate::identity::{canonical_encode, resolve, Did, Wallet};
use crate::ledger::Ledger;
use crate::store::AccessLink;
use crate::threshold::{KeyLabel, PartialContribution};
use crate::Tick;

/// Protocol messages, encoded with bincode before sealing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Message {
    Upload {
        #[serde(with = "crate::codec::bytes")]
        ciphertext: Vec<u8>,
    },
    UploadReceipt {
        #[serde(with = "crate::codec::bytes")]
        ehr_id: Vec<u8>,
    },
    StoreDelivery {
        #[serde(with = "crate::codec::bytes")]
        sk: Vec<u8>,
        #[serde(with = "crate::codec::bytes")]
        ehr_id: Vec<u8>,
        dc_did: Did,
    },
    CredentialDelivery {
        credential: DelegationCredential,
    },
    ChallengeRequest,
    Challenge {
        #[serde(with = "crate::codec::bytes")]
        challenge: Vec<u8>,
    },
    NotaryRequest {
        presentation: Presentation,
        blocks: u16,
    },
    CustodianRequest {
        presentation: Presentation,
        blocks: u16,
        /// Notaries the requester went through for this access.
        contacted_notaries: Vec<Did>,
    },
    Grant {
        /// XOR mode: labeled encryptions of the nonce.
        partial: Option<PartialContribution>,
        /// Cascade mode: labels the party will apply on request.
        session_labels: Vec<KeyLabel>,
        link: Option<AccessLink>,
    },
    Denied {
        reason: DenyReason,
    },
    StepRequest {
        label: KeyLabel,
        #[serde(with = "crate::codec::bytes")]
        input: Vec<u8>,
    },
    StepResponse {
        #[serde(with = "crate::codec::bytes")]
        output: Vec<u8>,
    },
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Upload { .. } => "upload",
            Message::UploadReceipt { .. } => "upload_receipt",
            Message::StoreDelivery { .. } => "store_delivery",
            Message::CredentialDelivery { .. } => "credential_delivery",
            Message::ChallengeRequest => "challenge_request",
            Message::Challenge { .. } => "challenge",
            Message::NotaryRequest { .. } => "notary_request",
            Message::CustodianRequest { .. } => "custodian_request",
            Message::Grant { .. } => "grant",
            Message::Denied { .. } => "denied",
            Message::StepRequest { .. } => "step_request",
            Message::StepResponse { .. } => "step_response",
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        bincode::serialize(self).expect("messages serialize")
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ActorError> {
        bincode::deserialize(bytes).map_err(|e| ActorError::Transport(format!("undecodable message: {e}")))
    }
}

/// A message encrypted to its recipient and signed by its sender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecureMessage {
    pub sender_did: Did,
    pub recipient_did: Did,
    #[serde(with = "crate::codec::bytes")]
    pub payload: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub sender_signature: Vec<u8>,
}

fn signed_bytes(sender: &Did, recipient: &Did, payload: &[u8]) -> Vec<u8> {
    let (s, r) = (sender.to_string(), recipient.to_string());
    canonical_encode([
        ("sender", s.as_bytes()),
        ("recipient", r.as_bytes()),
        ("payload", payload),
    ])
    .expect("static field names are unique")
}

impl SecureMessage {
    pub fn seal<R: RngCore + CryptoRng>(
        sender: &Wallet,
        recipient: &Did,
        message: &Message,
        ledger: &Ledger,
        rng: &mut R,
    ) -> Result<Self, ActorError> {
        let doc = resolve(recipient, ledger)
            .map_err(|e| ActorError::Transport(format!("recipient: {e}")))?;
        let payload = crypto::pk_encrypt(&message.to_bytes(), &doc.encryption_public_key, rng)?;
        let sender_signature = sender.sign(&signed_bytes(sender.did(), recipient, &payload));
        Ok(SecureMessage {
            sender_did: sender.did().clone(),
            recipient_did: recipient.clone(),
            payload,
            sender_signature,
        })
    }

    /// Check the sender's signature, then decrypt. Returns the message and
    /// its encoded plaintext.
    pub fn open(&self, recipient: &Wallet, ledger: &Ledger) -> Result<(Message, Vec<u8>), ActorError> {
        if &self.recipient_did != recipient.did() {
            return Err(ActorError::Transport("message addressed to someone else".into()));
        }
        let sender = resolve(&self.sender_did, ledger)
            .map_err(|e| ActorError::Transport(format!("sender: {e}")))?;
        if !crypto::verify(
            &signed_bytes(&self.sender_did, &self.recipient_did, &self.payload),
            &self.sender_signature,
            &sender.signing_public_key,
        ) {
            return Err(ActorError::Transport("sender signature does not verify".into()));
        }
        let plaintext = recipient
            .decrypt(&self.payload)
            .map_err(|e| ActorError::Transport(format!("payload: {e}")))?;
        Ok((Message::from_bytes(&plaintext)?, plaintext))
    }
}

/// A notary's notice to the data owner that a delegation was used.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub owner_did: Did,
    #[serde(with = "crate::codec::bytes")]
    pub pseudo_id: Vec<u8>,
    #[serde(with = "crate::codec::bytes")]
    pub ehr_id: Vec<u8>,
    pub requester_did: Did,
    pub at: Tick,
}

impl Notification {
    pub fn raw_view(&self) -> Vec<u8> {
        let mut out = self.owner_did.to_string().into_bytes();
        out.extend_from_slice(&self.pseudo_id);
        out.extend_from_slice(&self.ehr_id);
        out.extend(self.requester_did.to_string().into_bytes());
        out
    }
}
