//! Declarative scenarios: a TOML file names the parties, the threshold and
//! an ordered list of steps. The runner executes them against a
//! [`Simulation`](crate::actors::Simulation), checks each step's
//! expectation, audits who knows what, and exports everything needed to
//! replay the run.

mod audit;
mod replay;
mod runner;

pub use audit::{
    audit, audit_simulation, expected_cell, AuditCell, AuditInput, AuditReport, AuditSubject, Column,
    Item, Knowledge,
};
pub use replay::{replay, ReplayVerdict};
pub use runner::{run_scenario, run_to_dir, write_outputs, RunOutcome, RunReport, StepReport};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actors::{
    notary_name, requester_name, ActorError, Availability, CollusionVerdict, TamperCase, CUSTODIAN,
    DATA_OWNER,
};
use crate::crypto::CipherProfile;
use crate::ledger::LedgerError;
use crate::threshold::{CombineMode, ThresholdParams};

/// Output file names inside a run directory.
pub mod files {
    pub const CONFIG: &str = "scenario.toml";
    pub const TRANSCRIPT: &str = "transcript.json";
    pub const LEDGER: &str = "ledger.ndjson";
    pub const STORE: &str = "store.json";
    pub const WALLETS: &str = "wallets.json";
    pub const AUDIT: &str = "audit.json";
    pub const REPORT: &str = "report.json";
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {reason}")]
    Format { what: String, reason: String },
    #[error("ledger export: {0}")]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Actor(#[from] ActorError),
}

impl ScenarioError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        ScenarioError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn format(what: &str, reason: impl ToString) -> Self {
        ScenarioError::Format {
            what: what.to_string(),
            reason: reason.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parties {
    pub notaries: usize,
    pub drs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub n: u8,
    pub t: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvailabilityScript {
    /// One answer per notary query, in order; each notary replays it independently.
    #[serde(default)]
    pub script: Vec<Availability>,
    #[serde(default = "default_fallback")]
    pub fallback: Availability,
}

impl Default for AvailabilityScript {
    fn default() -> Self {
        AvailabilityScript {
            script: Vec::new(),
            fallback: default_fallback(),
        }
    }
}

fn default_fallback() -> Availability {
    Availability::DoUnavailable
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditExpectation {
    /// Fail the run unless the audit matrix matches the expected table.
    #[serde(default)]
    pub expect_table: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Step {
    /// HSP encrypts and uploads a record for the data owner.
    Store {
        id: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ehr: Option<String>,
    },
    Delegate {
        id: String,
        record: String,
        /// Defaults to every requester.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        requesters: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        mode: Option<CombineMode>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        expiry_ticks: Option<u64>,
    },
    Access {
        delegation: String,
        requester: String,
        /// Defaults to the first t - 1 notaries.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        notaries: Option<Vec<String>>,
        /// `granted`, or the expected denial reason or error text.
        #[serde(default = "granted")]
        expect: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        notary_disclosure: Option<Vec<String>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        custodian_disclosure: Option<Vec<String>>,
    },
    Revoke {
        delegation: String,
        requester: String,
    },
    Tick {
        ticks: u64,
    },
    /// Run adversarial cases on fresh fixtures; every one must be rejected.
    Tamper {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cases: Option<Vec<TamperCase>>,
    },
    Collude {
        delegation: String,
        members: Vec<String>,
        expect: CollusionVerdict,
    },
    /// Check the ledger for identifying DIDs and repeated pseudonyms.
    PrivacyScan,
}

fn granted() -> String {
    "granted".to_string()
}

impl Step {
    pub fn action(&self) -> &'static str {
        match self {
            Step::Store { .. } => "store",
            Step::Delegate { .. } => "delegate",
            Step::Access { .. } => "access",
            Step::Revoke { .. } => "revoke",
            Step::Tick { .. } => "tick",
            Step::Tamper { .. } => "tamper",
            Step::Collude { .. } => "collude",
            Step::PrivacyScan => "privacy_scan",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_profile")]
    pub profile: CipherProfile,
    #[serde(default = "default_mode")]
    pub mode: CombineMode,
    #[serde(default = "default_expiry")]
    pub expiry_ticks: u64,
    #[serde(default = "default_ttl")]
    pub link_ttl_ticks: u64,
    #[serde(default = "default_true")]
    pub dc_checks_notary: bool,
    pub parties: Parties,
    pub threshold: Threshold,
    #[serde(default)]
    pub availability: AvailabilityScript,
    #[serde(default)]
    pub audit: AuditExpectation,
    #[serde(default)]
    pub steps: Vec<Step>,
}

fn default_profile() -> CipherProfile {
    CipherProfile::Production
}
fn default_mode() -> CombineMode {
    CombineMode::Xor
}
fn default_expiry() -> u64 {
    100
}
fn default_ttl() -> u64 {
    3600
}
fn default_true() -> bool {
    true
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig = toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario config serializes")
    }

    pub fn params(&self) -> Result<ThresholdParams, ScenarioError> {
        ThresholdParams::new(self.threshold.n, self.threshold.t).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    /// Check parameters and that every step refers to actors and ids that
    /// exist by the time it runs.
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Config(m));
        self.params()?;
        if self.threshold.n as usize != self.parties.notaries + 1 {
            return bad(format!(
                "n = {} must equal notaries + 1 = {}",
                self.threshold.n,
                self.parties.notaries + 1
            ));
        }
        if self.parties.drs == 0 {
            return bad("at least one requester is needed".into());
        }
        let notaries: BTreeSet<String> = (1..=self.parties.notaries).map(notary_name).collect();
        let drs: BTreeSet<String> = (1..=self.parties.drs).map(requester_name).collect();
        let mut records = BTreeSet::new();
        let mut delegations = BTreeSet::new();
        for (i, step) in self.steps.iter().enumerate() {
            let at = |m: String| ScenarioError::Config(format!("step {} ({}): {m}", i + 1, step.action()));
            let known_dr = |d: &String| {
                if drs.contains(d) {
                    Ok(())
                } else {
                    Err(at(format!("unknown requester `{d}`")))
                }
            };
            match step {
                Step::Store { id, .. } => {
                    if !records.insert(id.clone()) {
                        return Err(at(format!("record `{id}` defined twice")));
                    }
                }
                Step::Delegate { id, record, requesters, .. } => {
                    if !records.contains(record) {
                        return Err(at(format!("unknown record `{record}`")));
                    }
                    if !delegations.insert(id.clone()) {
                        return Err(at(format!("delegation `{id}` defined twice")));
                    }
                    if let Some(list) = requesters {
                        if list.is_empty() {
                            return Err(at("empty requester list".into()));
                        }
                        list.iter().try_for_each(known_dr)?;
                    }
                }
                Step::Access { delegation, requester, notaries: chosen, .. } => {
                    if !delegations.contains(delegation) {
                        return Err(at(format!("unknown delegation `{delegation}`")));
                    }
                    known_dr(requester)?;
                    for n in chosen.iter().flatten() {
                        if !notaries.contains(n) {
                            return Err(at(format!("unknown notary `{n}`")));
                        }
                    }
                }
                Step::Revoke { delegation, requester } => {
                    if !delegations.contains(delegation) {
                        return Err(at(format!("unknown delegation `{delegation}`")));
                    }
                    known_dr(requester)?;
                }
                Step::Collude { delegation, members, .. } => {
                    if !delegations.contains(delegation) {
                        return Err(at(format!("unknown delegation `{delegation}`")));
                    }
                    for m in members {
                        let known = notaries.contains(m)
                            || drs.contains(m)
                            || [DATA_OWNER, CUSTODIAN, crate::actors::HSP].contains(&m.as_str());
                        if !known {
                            return Err(at(format!("unknown actor `{m}`")));
                        }
                    }
                }
                Step::Tick { .. } | Step::Tamper { .. } | Step::PrivacyScan => {}
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
name = "m"
seed = 3
parties = { notaries = 2, drs = 1 }
threshold = { n = 3, t = 2 }

[[steps]]
action = "store"
id = "r"

[[steps]]
action = "delegate"
id = "d"
record = "r"

[[steps]]
action = "access"
delegation = "d"
requester = "dr1"
"#;

    #[test]
    fn parses_with_defaults() {
        let c = ScenarioConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.profile, CipherProfile::Production);
        assert_eq!(c.mode, CombineMode::Xor);
        assert_eq!(c.steps.len(), 3);
        assert!(matches!(&c.steps[2], Step::Access { expect, .. } if expect == "granted"));
        assert_eq!(ScenarioConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_thresholds_and_references() {
        let t_over_n = MINIMAL.replace("t = 2", "t = 4");
        assert!(matches!(ScenarioConfig::from_toml(&t_over_n), Err(ScenarioError::Config(_))));
        let wrong_n = MINIMAL.replace("n = 3", "n = 4").replace("t = 2", "t = 3");
        assert!(ScenarioConfig::from_toml(&wrong_n).is_err());
        let unknown = MINIMAL.replace("requester = \"dr1\"", "requester = \"dr9\"");
        let err = ScenarioConfig::from_toml(&unknown).unwrap_err().to_string();
        assert!(err.contains("step 3") && err.contains("dr9"), "{err}");
        let typo = MINIMAL.replace("seed = 3", "sede = 3");
        assert!(ScenarioConfig::from_toml(&typo).is_err());
    }
}
