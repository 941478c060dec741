//! Who knows what: scan each participant's observable bytes for each
//! sensitive item and compare against the expected table.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::actors::{delegation_secret, ehr_secret};
use crate::actors::{ActorState, Role, Simulation, Transcript, TranscriptEntry};
use crate::credential::{claim, decode_did_list, DelegationCredential};
use crate::crypto::CipherProfile;
use crate::identity::{Did, Wallet};
use crate::ledger::{Ledger, RecordKind};
use crate::store::{EhrStore, StoreFile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Knowledge {
    #[serde(rename = "K")]
    Known,
    #[serde(rename = "P")]
    Partial,
    #[serde(rename = "-")]
    Unknown,
    /// The item is too short to scan for meaningfully (toy profile).
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl fmt::Display for Knowledge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Knowledge::Known => "K",
            Knowledge::Partial => "P",
            Knowledge::Unknown => "-",
            Knowledge::NotApplicable => "n/a",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Item {
    SecretKey,
    OwnerDid,
    PseudoId,
    DidPseudoLink,
    CipherSk,
    EhrIdAndKeys,
    WhoIsNotary,
    WhoIsCustodian,
    AuthorizationList,
    StorageLocation,
    ShareKeys,
}

impl Item {
    pub const ALL: [Item; 11] = [
        Item::SecretKey,
        Item::OwnerDid,
        Item::PseudoId,
        Item::DidPseudoLink,
        Item::CipherSk,
        Item::EhrIdAndKeys,
        Item::WhoIsNotary,
        Item::WhoIsCustodian,
        Item::AuthorizationList,
        Item::StorageLocation,
        Item::ShareKeys,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Item::SecretKey => "secret key to encrypt EHR",
            Item::OwnerDid => "DO DID",
            Item::PseudoId => "DO pseudoID",
            Item::DidPseudoLink => "DO's DID-pseudoID link",
            Item::CipherSk => "cipherSK",
            Item::EhrIdAndKeys => "ehr-id, encrypted keys",
            Item::WhoIsNotary => "who is Notary",
            Item::WhoIsCustodian => "who is DC",
            Item::AuthorizationList => "who is on DO's authorization list",
            Item::StorageLocation => "EHR storage location/link",
            Item::ShareKeys => "DO's keys to generate cipherSK",
        }
    }

    /// Public items are also visible on the ledger.
    fn on_ledger(self) -> bool {
        matches!(self, Item::OwnerDid | Item::PseudoId | Item::EhrIdAndKeys)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Column {
    #[serde(rename = "DO")]
    Owner,
    #[serde(rename = "HSP")]
    Hsp,
    #[serde(rename = "DR")]
    Requester,
    #[serde(rename = "Notary")]
    Notary,
    #[serde(rename = "DC")]
    Custodian,
    Outsider,
}

impl Column {
    pub const ALL: [Column; 6] = [
        Column::Owner,
        Column::Hsp,
        Column::Requester,
        Column::Notary,
        Column::Custodian,
        Column::Outsider,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Column::Owner => "DO",
            Column::Hsp => "HSP",
            Column::Requester => "DR",
            Column::Notary => "Notary",
            Column::Custodian => "DC",
            Column::Outsider => "Outsider",
        }
    }
}

/// The expected table. The requester learns the record key only by
/// completing an access.
pub fn expected_cell(item: Item, column: Column, post_access: bool) -> Knowledge {
    use Column::*;
    use Knowledge::*;
    let known_by: &[Column] = match item {
        Item::SecretKey if post_access => &[Owner, Hsp, Requester],
        Item::SecretKey => &[Owner, Hsp],
        Item::OwnerDid | Item::PseudoId | Item::EhrIdAndKeys => &Column::ALL,
        Item::DidPseudoLink => &[Owner, Requester, Notary, Custodian],
        Item::CipherSk => &[Owner, Requester],
        Item::WhoIsNotary => &[Owner, Requester, Notary, Custodian],
        Item::WhoIsCustodian => &[Owner, Hsp, Requester, Custodian],
        Item::AuthorizationList => &[Owner, Requester, Notary],
        Item::StorageLocation => &[Custodian],
        Item::ShareKeys => {
            return match column {
                Owner => Known,
                Notary | Custodian => Partial,
                _ => Unknown,
            }
        }
    };
    if known_by.contains(&column) {
        Known
    } else {
        Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditCell {
    pub item: Item,
    pub column: Column,
    pub observed: Knowledge,
    /// Absent when the run is not comparable to the table.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expected: Option<Knowledge>,
    pub pass: bool,
}

/// Whose view fills each column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSubject {
    pub requester: String,
    pub notary: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pseudo_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ehr_id: Option<String>,
    /// The requester completed an access.
    pub post_access: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub subject: AuditSubject,
    /// Cells were compared against the expected table.
    pub compared: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    pub cells: Vec<AuditCell>,
    pub all_pass: bool,
    pub transcript_digest: String,
    pub ledger_head: String,
}

impl AuditReport {
    pub fn cell(&self, item: Item, column: Column) -> Option<&AuditCell> {
        self.cells.iter().find(|c| c.item == item && c.column == column)
    }

    /// Plain-text matrix, one row per item.
    pub fn table(&self) -> String {
        let mut out = format!("{:<36}", "");
        for c in Column::ALL {
            out.push_str(&format!("{:>10}", c.label()));
        }
        out.push('\n');
        for item in Item::ALL {
            out.push_str(&format!("{:<36}", item.label()));
            for column in Column::ALL {
                let text = match self.cell(item, column) {
                    Some(c) if c.pass => c.observed.to_string(),
                    Some(c) => format!("{}!{}", c.observed, c.expected.map(|e| e.to_string()).unwrap_or_default()),
                    None => "?".into(),
                };
                out.push_str(&format!("{text:>10}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Everything an audit reads, as exported by a run.
#[derive(Debug, Clone, Copy)]
pub struct AuditInput<'a> {
    pub profile: CipherProfile,
    pub ledger: &'a Ledger,
    pub actors: &'a [ActorState],
    pub store: &'a StoreFile,
    pub transcript: &'a Transcript,
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Known if every needle occurs, Partial if some do.
fn scan_all(view: &[u8], needles: &[Vec<u8>], partial_allowed: bool) -> Knowledge {
    if needles.is_empty() {
        return Knowledge::Unknown;
    }
    let found = needles.iter().filter(|n| contains(view, n)).count();
    if found == needles.len() {
        Knowledge::Known
    } else if found > 0 && partial_allowed {
        Knowledge::Partial
    } else {
        Knowledge::Unknown
    }
}

/// Values the audit looks for, all taken from the run's own state.
#[derive(Default)]
struct Needles {
    sk: Vec<u8>,
    owner_did: Vec<u8>,
    pseudo_id: Vec<u8>,
    masked_key: Vec<u8>,
    ehr_id: Vec<u8>,
    blinded_shares: Vec<Vec<u8>>,
    notary_dids: Vec<Vec<u8>>,
    custodian_did: Vec<u8>,
    authorized: Vec<Vec<u8>>,
    location: Vec<u8>,
    share_keys: Vec<Vec<u8>>,
}

fn did_bytes(did: &Did) -> Vec<u8> {
    did.to_string().into_bytes()
}

fn wallet_of(state: &ActorState) -> Result<Wallet, ScenarioError> {
    Wallet::import(state.wallet.clone()).map_err(|e| ScenarioError::format("wallet", e))
}

/// Pick the requester and notary whose views fill the DR and Notary
/// columns: those of the first granted access, if any.
fn choose_subject(input: &AuditInput) -> (String, String, bool) {
    let by_role = |role: Role| {
        input
            .actors
            .iter()
            .filter(|a| a.role == role)
            .map(|a| a.name.clone())
            .next()
            .unwrap_or_default()
    };
    let role_of = |name: &str| input.actors.iter().find(|a| a.name == name).map(|a| a.role);
    let entries = &input.transcript.entries;
    for e in entries {
        let TranscriptEntry::AccessEnd { attempt, outcome } = e else { continue };
        if outcome != "granted" {
            continue;
        }
        let slice = input.transcript.attempt(*attempt);
        let requester = slice.iter().find_map(|e| match e {
            TranscriptEntry::AccessStart { requester, .. } => Some(requester.clone()),
            _ => None,
        });
        let notary = slice.iter().find_map(|e| match e {
            TranscriptEntry::Release { party, .. } if role_of(party) == Some(Role::Notary) => Some(party.clone()),
            _ => None,
        });
        if let (Some(r), Some(n)) = (requester, notary) {
            return (r, n, true);
        }
    }
    (by_role(Role::Requester), by_role(Role::Notary), false)
}

/// Audit a completed (or partial) run.
pub fn audit(input: AuditInput) -> Result<AuditReport, ScenarioError> {
    let (requester, notary, post_access) = choose_subject(&input);
    let find = |name: &str| input.actors.iter().find(|a| a.name == name);
    let first_role = |role: Role| input.actors.iter().find(|a| a.role == role);

    let owner = first_role(Role::DataOwner).map(wallet_of).transpose()?;
    let hsp = first_role(Role::Hsp).map(wallet_of).transpose()?;
    let dr = find(&requester).map(wallet_of).transpose()?;

    // The delegation under audit: the requester's credential, preferring one
    // whose record it has already decrypted.
    let credential: Option<DelegationCredential> = dr.as_ref().and_then(|w| {
        let decrypted = |c: &&DelegationCredential| {
            c.claim(claim::EHR_ID)
                .is_some_and(|e| w.secret(&ehr_secret(e, "sk")).is_some())
        };
        w.credentials()
            .iter()
            .find(decrypted)
            .or_else(|| w.credentials().first())
            .cloned()
    });

    let mut n = Needles::default();
    if let Some(o) = &owner {
        n.owner_did = did_bytes(o.did());
    }
    let record = match &credential {
        Some(c) => {
            let pseudo = c.claim(claim::PSEUDO_ID).unwrap_or_default().to_vec();
            let ehr = c.claim(claim::EHR_ID).unwrap_or_default().to_vec();
            input.ledger.find_authorization(&pseudo, &ehr).ok()
        }
        None => input.ledger.authorizations().into_iter().next(),
    };
    if let Some(r) = &record {
        n.pseudo_id = r.pseudo_id.clone();
        n.ehr_id = r.ehr_id.clone();
        n.blinded_shares = r.blinded_shares.values().cloned().collect();
    } else if let Some(blob) = input.store.blobs.first() {
        n.ehr_id = blob.ehr_id.clone();
    }
    if let Some(c) = &credential {
        n.masked_key = c.claim(claim::MASKED_KEY).unwrap_or_default().to_vec();
        n.notary_dids = c
            .claim(claim::NOTARY_DIDS)
            .and_then(|b| decode_did_list(b).ok())
            .unwrap_or_default()
            .iter()
            .map(did_bytes)
            .collect();
        n.authorized = c
            .claim(claim::AUTHORIZED_DR_DIDS)
            .and_then(|b| decode_did_list(b).ok())
            .unwrap_or_default()
            .iter()
            .map(did_bytes)
            .collect();
        n.custodian_did = c.claim(claim::DC_DID).unwrap_or_default().to_vec();
    }
    if let Some(h) = &hsp {
        n.sk = h.secret(&ehr_secret(&n.ehr_id, "sk")).unwrap_or_default().to_vec();
    }
    if let Some(blob) = input.store.blobs.iter().find(|b| b.ehr_id == n.ehr_id) {
        n.location = blob.location.clone().into_bytes();
    }
    if let Some(o) = &owner {
        let width = input.profile.key_width();
        if let Some(all) = o.secret(&delegation_secret(&n.pseudo_id, "keys")) {
            n.share_keys = all.chunks(width).map(<[u8]>::to_vec).collect();
        }
    }

    let ledger_view = input.ledger.raw_view();
    let custodian_store = match first_role(Role::Custodian) {
        Some(dc) => EhrStore::import(dc.wallet.did.clone(), input.store.clone())
            .map_err(|e| ScenarioError::format("store", e))?
            .raw_view(),
        None => Vec::new(),
    };
    let view_of = |state: Option<&ActorState>| -> Result<Vec<u8>, ScenarioError> {
        let Some(s) = state else { return Ok(Vec::new()) };
        let mut v = s.raw_view().map_err(|e| ScenarioError::format("actor state", e))?;
        if s.role == Role::Custodian {
            v.extend_from_slice(&custodian_store);
        }
        Ok(v)
    };
    let private = [
        (Column::Owner, view_of(first_role(Role::DataOwner))?),
        (Column::Hsp, view_of(first_role(Role::Hsp))?),
        (Column::Requester, view_of(find(&requester))?),
        (Column::Notary, view_of(find(&notary))?),
        (Column::Custodian, view_of(first_role(Role::Custodian))?),
        (Column::Outsider, Vec::new()),
    ];

    // Single bytes cannot be meaningfully searched for.
    let toy = input.profile == CipherProfile::Toy;
    let compared = !toy && post_access && credential.is_some();
    let note = if toy {
        Some("toy profile: key-valued rows are not scannable, table not compared".to_string())
    } else if !compared {
        Some("no completed access: table not compared".to_string())
    } else {
        None
    };

    let mut cells = Vec::new();
    for item in Item::ALL {
        for (column, view) in &private {
            let scoped;
            let view: &[u8] = if item.on_ledger() {
                scoped = [view.as_slice(), ledger_view.as_slice()].concat();
                &scoped
            } else {
                view
            };
            let observed = match item {
                Item::SecretKey | Item::CipherSk | Item::ShareKeys if toy => Knowledge::NotApplicable,
                Item::SecretKey => scan_all(view, &[n.sk.clone()], false),
                Item::OwnerDid => scan_all(view, &[n.owner_did.clone()], false),
                Item::PseudoId => scan_all(view, &[n.pseudo_id.clone()], false),
                Item::DidPseudoLink => scan_all(view, &[n.owner_did.clone(), n.pseudo_id.clone()], false),
                Item::CipherSk => scan_all(view, &[n.masked_key.clone()], false),
                Item::EhrIdAndKeys => {
                    let mut all = vec![n.ehr_id.clone()];
                    all.extend(n.blinded_shares.iter().cloned());
                    scan_all(view, &all, false)
                }
                Item::WhoIsNotary => scan_all(view, &n.notary_dids, false),
                Item::WhoIsCustodian => scan_all(view, &[n.custodian_did.clone()], false),
                Item::AuthorizationList => scan_all(view, &n.authorized, false),
                Item::StorageLocation => scan_all(view, &[n.location.clone()], false),
                Item::ShareKeys => scan_all(view, &n.share_keys, true),
            };
            let expected = compared.then(|| expected_cell(item, *column, post_access));
            cells.push(AuditCell {
                item,
                column: *column,
                observed,
                expected,
                pass: expected.is_none_or(|e| e == observed),
            });
        }
    }
    let all_pass = cells.iter().all(|c| c.pass);
    Ok(AuditReport {
        subject: AuditSubject {
            requester,
            notary,
            pseudo_id: (!n.pseudo_id.is_empty()).then(|| hex::encode(&n.pseudo_id)),
            ehr_id: (!n.ehr_id.is_empty()).then(|| hex::encode(&n.ehr_id)),
            post_access,
        },
        compared,
        note,
        cells,
        all_pass,
        transcript_digest: input.transcript.digest(),
        ledger_head: hex::encode(input.ledger.head_hash()),
    })
}

/// Audit a live simulation.
pub fn audit_simulation(sim: &Simulation) -> Result<AuditReport, ScenarioError> {
    let actors: Vec<ActorState> = sim.actors().map(|a| a.export()).collect();
    let store = sim.store.export();
    audit(AuditInput {
        profile: sim.profile(),
        ledger: &sim.ledger,
        actors: &actors,
        store: &store,
        transcript: &sim.transcript,
    })
}

/// Payloads other than identity registrations, which by design carry DIDs.
pub(crate) fn non_registration_payloads(ledger: &Ledger) -> Vec<Vec<u8>> {
    ledger
        .records()
        .into_iter()
        .filter(|r| r.kind != RecordKind::DidRegistration)
        .map(|r| r.payload)
        .collect()
}

pub(crate) fn payload_mentions(ledger: &Ledger, did: &Did) -> bool {
    let needle = did_bytes(did);
    non_registration_payloads(ledger)
        .iter()
        .any(|p| contains(p, &needle) || contains(p, &crate::crypto::hash(&[&needle])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::actors::{fixture, AccessOptions};
    use crate::threshold::CombineMode;

    #[test]
    fn expected_table_spot_checks() {
        assert_eq!(expected_cell(Item::SecretKey, Column::Requester, false), Knowledge::Unknown);
        assert_eq!(expected_cell(Item::SecretKey, Column::Requester, true), Knowledge::Known);
        assert_eq!(expected_cell(Item::StorageLocation, Column::Custodian, true), Knowledge::Known);
        assert_eq!(expected_cell(Item::StorageLocation, Column::Owner, true), Knowledge::Unknown);
        assert_eq!(expected_cell(Item::ShareKeys, Column::Notary, true), Knowledge::Partial);
        assert_eq!(expected_cell(Item::OwnerDid, Column::Outsider, true), Knowledge::Known);
    }

    #[test]
    fn happy_path_matches_and_a_leak_flips_a_cell() {
        for mode in [CombineMode::Xor, CombineMode::Cascade] {
            let (mut sim, d) = fixture(21, CipherProfile::Production, mode).unwrap();
            let pre = audit_simulation(&sim).unwrap();
            assert!(!pre.compared);
            for column in Column::ALL {
                let want = expected_cell(Item::SecretKey, column, false);
                assert_eq!(pre.cell(Item::SecretKey, column).unwrap().observed, want, "{column:?}");
            }
            sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::via(&["notary1"])).unwrap();
            let report = audit_simulation(&sim).unwrap();
            assert!(report.compared && report.all_pass, "\n{}", report.table());

            let sk = sim.actor("hsp").unwrap().wallet.secret(&ehr_secret(&d.ehr_id, "sk")).unwrap().to_vec();
            sim.store.inject_leak(&sk);
            let leaked = audit_simulation(&sim).unwrap();
            let cell = leaked.cell(Item::SecretKey, Column::Custodian).unwrap();
            assert!(!cell.pass && cell.observed == Knowledge::Known);
            assert_eq!(leaked.cells.iter().filter(|c| !c.pass).count(), 1);
        }
    }

    #[test]
    fn empty_run_knows_only_identities() {
        let sim = Simulation::new(crate::actors::SimConfig::default());
        let report = audit_simulation(&sim).unwrap();
        for cell in &report.cells {
            let want = match cell.item {
                Item::OwnerDid => Knowledge::Known,
                _ => Knowledge::Unknown,
            };
            assert_eq!(cell.observed, want, "{cell:?}");
        }
    }
}
