//! What a set of colluding actors can do with everything they hold together.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::flows::ehr_secret;
use super::{ActorError, Simulation};
use crate::credential::claim;
use crate::crypto::{BlockCipherKey, CipherProfile};
use crate::ledger::fetch_shares_for;
use crate::threshold::{
    candidate_distribution, combine_cascade, combine_xor, compute_partial, verdict, CipherKey,
    CombineMode, KeyLabel, LocalHolders, PartyShares, SecrecyVerdict,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollusionVerdict {
    SkRecovered,
    NotRecovered,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollusionReport {
    pub members: Vec<String>,
    pub verdict: CollusionVerdict,
    /// Some member holds a credential carrying the masked key.
    pub has_cipher_key: bool,
    /// Distinct share keys held by the coalition.
    pub covered: usize,
    /// Share keys in the delegation, when the coalition knows the parameters.
    pub total: Option<usize>,
    /// Toy profile only: the exhaustive secrecy verdict.
    pub secrecy: Option<SecrecyVerdict>,
}

impl Simulation {
    /// Pool the local state of `members` and try to recover the record key
    /// behind the delegation `pseudo_id`. Keys already held by a member
    /// count, so run this before any member completes an access.
    pub fn adversary_collude(&self, members: &[&str], pseudo_id: &[u8]) -> Result<CollusionReport, ActorError> {
        let wallets = members
            .iter()
            .map(|m| self.actor(m).map(|a| &a.wallet))
            .collect::<Result<Vec<_>, _>>()?;
        let records: Vec<_> = self
            .ledger
            .authorizations()
            .into_iter()
            .filter(|a| a.pseudo_id == pseudo_id)
            .collect();
        let cipher_key: Option<CipherKey> = wallets
            .iter()
            .flat_map(|w| w.credentials())
            .filter(|c| c.claim(claim::PSEUDO_ID) == Some(pseudo_id))
            .find_map(|c| c.decode_claims().ok())
            .map(|claims| claims.cipher_key);

        let mut fragments: Vec<PartyShares> = Vec::new();
        for wallet in &wallets {
            for record in &records {
                if let Ok(shares) = fetch_shares_for(wallet, record) {
                    fragments.push(shares);
                }
            }
        }
        let known: BTreeMap<KeyLabel, BlockCipherKey> = fragments
            .iter()
            .flat_map(|s| s.keys.iter().cloned())
            .collect();

        let mut report = CollusionReport {
            members: members.iter().map(|m| m.to_string()).collect(),
            verdict: CollusionVerdict::NotRecovered,
            has_cipher_key: cipher_key.is_some(),
            covered: known.len(),
            total: cipher_key.as_ref().map(|ck| ck.params.key_count()),
            secrecy: None,
        };

        let already_held = records.iter().any(|r| {
            let label = ehr_secret(&r.ehr_id, "sk");
            wallets.iter().any(|w| w.secret(&label).is_some())
        });
        if already_held {
            report.verdict = CollusionVerdict::SkRecovered;
            return Ok(report);
        }
        let Some(ck) = cipher_key else {
            return Ok(report);
        };

        if ck.profile == CipherProfile::Toy {
            let secrecy = verdict(&candidate_distribution(&ck, &known)?);
            if matches!(secrecy, SecrecyVerdict::Reconstructs { .. }) {
                report.verdict = CollusionVerdict::SkRecovered;
            }
            report.secrecy = Some(secrecy);
            return Ok(report);
        }

        let all: BTreeSet<KeyLabel> = ck.params.labels().into_iter().collect();
        if !all.iter().all(|l| known.contains_key(l)) {
            return Ok(report);
        }
        let recovered = match ck.mode {
            CombineMode::Xor => {
                let partials = fragments
                    .iter()
                    .map(|s| compute_partial(s, &ck.nonce, ck.blocks()))
                    .collect::<Result<Vec<_>, _>>()?;
                combine_xor(&ck, &partials)
            }
            CombineMode::Cascade => combine_cascade(&ck, &mut LocalHolders::new(&fragments)),
        };
        if recovered.is_ok() {
            report.verdict = CollusionVerdict::SkRecovered;
        }
        Ok(report)
    }
}
