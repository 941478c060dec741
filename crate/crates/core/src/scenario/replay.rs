use std::fmt;
use std::fs;
use std::io::BufReader;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{files, run_scenario, ScenarioConfig, ScenarioError};
use crate::actors::ActorState;
use crate::ledger::Ledger;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ReplayVerdict {
    Identical,
    Diverged {
        /// First ledger record that differs; absent when only wallets differ.
        at_seq: Option<u64>,
        detail: String,
    },
}

impl fmt::Display for ReplayVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ReplayVerdict::Identical => f.write_str("identical"),
            ReplayVerdict::Diverged { at_seq: Some(seq), detail } => write!(f, "diverged(at seq {seq}): {detail}"),
            ReplayVerdict::Diverged { at_seq: None, detail } => write!(f, "diverged: {detail}"),
        }
    }
}

/// Re-run the scenario saved in `dir` and compare its ledger and actor
/// states with the exports. A broken export chain is an error.
pub fn replay(dir: &Path) -> Result<ReplayVerdict, ScenarioError> {
    let config = ScenarioConfig::load(&dir.join(files::CONFIG))?;
    let ledger_path = dir.join(files::LEDGER);
    let file = fs::File::open(&ledger_path).map_err(|e| ScenarioError::io(&ledger_path, e))?;
    let exported = Ledger::import(BufReader::new(file))?;
    let wallets_path = dir.join(files::WALLETS);
    let text = fs::read_to_string(&wallets_path).map_err(|e| ScenarioError::io(&wallets_path, e))?;
    let wallets: Vec<ActorState> = serde_json::from_str(&text).map_err(|e| ScenarioError::format("wallets", e))?;

    let outcome = run_scenario(&config)?;
    let fresh = outcome.sim.ledger.records();
    let old = exported.records();
    for i in 0..fresh.len().max(old.len()) {
        match (old.get(i), fresh.get(i)) {
            (Some(a), Some(b)) if a.record_hash == b.record_hash => {}
            (Some(_), Some(_)) => {
                return Ok(ReplayVerdict::Diverged {
                    at_seq: Some(i as u64),
                    detail: "record hashes differ".into(),
                })
            }
            (None, _) => {
                return Ok(ReplayVerdict::Diverged {
                    at_seq: Some(i as u64),
                    detail: format!("export ends after {} records, replay has {}", old.len(), fresh.len()),
                })
            }
            (_, None) => {
                return Ok(ReplayVerdict::Diverged {
                    at_seq: Some(i as u64),
                    detail: format!("replay ends after {} records, export has {}", fresh.len(), old.len()),
                })
            }
        }
    }
    if outcome.actor_states() != wallets {
        return Ok(ReplayVerdict::Diverged {
            at_seq: None,
            detail: "actor states differ".into(),
        });
    }
    Ok(ReplayVerdict::Identical)
}
