use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::audit::{audit_simulation, payload_mentions, AuditReport};
use super::{files, ScenarioConfig, ScenarioError, Step};
use crate::actors::{
    run_case, AccessOptions, ActorError, ActorState, Delegation, DenyReason, Role, SimConfig, Simulation,
    TamperCase, TranscriptEntry, CUSTODIAN, DATA_OWNER, HSP,
};
use crate::crypto::{self, CipherProfile};
use crate::threshold::CombineMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepReport {
    /// 1-based position in the scenario.
    pub index: usize,
    pub action: String,
    pub ok: bool,
    pub expected: String,
    pub observed: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub name: String,
    pub seed: u64,
    pub profile: CipherProfile,
    pub mode: CombineMode,
    pub steps: Vec<StepReport>,
    /// Whether the audit table had to match, and whether it did.
    pub audit_required: bool,
    pub audit_pass: bool,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_failure: Option<String>,
    pub transcript_digest: String,
    pub ledger_head: String,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}

pub struct RunOutcome {
    pub config: ScenarioConfig,
    pub sim: Simulation,
    pub report: RunReport,
    pub audit: AuditReport,
    /// Delegations by scenario id.
    pub delegations: BTreeMap<String, Delegation>,
}

impl RunOutcome {
    pub fn actor_states(&self) -> Vec<ActorState> {
        self.sim.actors().map(|a| a.export()).collect()
    }
}

struct Runner {
    sim: Simulation,
    config: ScenarioConfig,
    records: BTreeMap<String, (Vec<u8>, Vec<u8>)>,
    delegations: BTreeMap<String, Delegation>,
}

struct Outcome {
    ok: bool,
    expected: String,
    observed: String,
    details: Vec<String>,
}

impl Outcome {
    fn plain(result: Result<String, ActorError>) -> Self {
        match result {
            Ok(observed) => Outcome {
                ok: true,
                expected: "ok".into(),
                observed,
                details: Vec::new(),
            },
            Err(e) => Outcome {
                ok: false,
                expected: "ok".into(),
                observed: e.to_string(),
                details: Vec::new(),
            },
        }
    }
}

fn describe(e: &ActorError) -> String {
    match e {
        ActorError::AccessDenied(reason) => reason.to_string(),
        other => other.to_string(),
    }
}

impl Runner {
    fn delegation(&self, id: &str) -> Result<&Delegation, ActorError> {
        self.delegations
            .get(id)
            .ok_or_else(|| ActorError::MissingState(format!("delegation `{id}` was not created")))
    }

    fn step(&mut self, step: &Step) -> Outcome {
        match step {
            Step::Store { id, ehr } => {
                let plaintext = ehr.clone().unwrap_or_else(|| format!("record {id}")).into_bytes();
                let r = self.sim.flow1_store_ehr(HSP, DATA_OWNER, CUSTODIAN, &plaintext).map(|ehr_id| {
                    let shown = hex::encode(&ehr_id);
                    self.records.insert(id.clone(), (ehr_id, plaintext));
                    format!("ehr_id {shown}")
                });
                Outcome::plain(r)
            }
            Step::Delegate {
                id,
                record,
                requesters,
                mode,
                expiry_ticks,
            } => {
                let r = (|| {
                    let (ehr_id, _) = self
                        .records
                        .get(record)
                        .ok_or_else(|| ActorError::MissingState(format!("record `{record}` was not stored")))?
                        .clone();
                    let drs = match requesters {
                        Some(list) => list.clone(),
                        None => self.sim.names_with_role(Role::Requester),
                    };
                    let notaries = self.sim.names_with_role(Role::Notary);
                    let params = self.config.params().map_err(|e| ActorError::Config(e.to_string()))?;
                    let d = self.sim.flow2_delegate(
                        DATA_OWNER,
                        &drs.iter().map(String::as_str).collect::<Vec<_>>(),
                        &notaries.iter().map(String::as_str).collect::<Vec<_>>(),
                        CUSTODIAN,
                        &ehr_id,
                        params,
                        expiry_ticks.unwrap_or(self.config.expiry_ticks),
                        mode.unwrap_or(self.config.mode),
                    )?;
                    let shown = format!("pseudo_id {} seq {}", hex::encode(&d.pseudo_id), d.record_seq);
                    self.delegations.insert(id.clone(), d);
                    Ok(shown)
                })();
                Outcome::plain(r)
            }
            Step::Access {
                delegation,
                requester,
                notaries,
                expect,
                notary_disclosure,
                custodian_disclosure,
            } => self.access(
                delegation,
                requester,
                notaries.as_deref(),
                expect,
                notary_disclosure,
                custodian_disclosure,
            ),
            Step::Revoke { delegation, requester } => {
                let r = (|| {
                    let vc = *self
                        .delegation(delegation)?
                        .credentials
                        .get(requester)
                        .ok_or_else(|| ActorError::MissingState(format!("`{requester}` holds no credential here")))?;
                    let seq = self.sim.revoke_credential(DATA_OWNER, &vc)?;
                    Ok(format!("revoked {} at seq {seq}", hex::encode(vc)))
                })();
                Outcome::plain(r)
            }
            Step::Tick { ticks } => {
                self.sim.advance(*ticks);
                Outcome::plain(Ok(format!("now {}", self.sim.now())))
            }
            Step::Tamper { cases } => {
                let cases = cases.clone().unwrap_or_else(|| TamperCase::ALL.to_vec());
                let mut details = Vec::new();
                let mut ok = true;
                for case in cases {
                    match run_case(case, self.config.seed, self.config.profile) {
                        Ok(o) => {
                            ok &= o.rejected;
                            details.push(format!(
                                "{}: {} (expected {})",
                                o.case,
                                o.observed,
                                o.expected
                            ));
                        }
                        Err(e) => {
                            ok = false;
                            details.push(format!("{case}: fixture failed: {e}"));
                        }
                    }
                }
                Outcome {
                    ok,
                    expected: "all rejected".into(),
                    observed: if ok { "all rejected".into() } else { "some accepted".into() },
                    details,
                }
            }
            Step::Collude {
                delegation,
                members,
                expect,
            } => {
                let r = self.delegation(delegation).cloned().and_then(|d| {
                    let names: Vec<&str> = members.iter().map(String::as_str).collect();
                    self.sim.adversary_collude(&names, &d.pseudo_id)
                });
                match r {
                    Ok(report) => {
                        let mut details = vec![format!(
                            "holds masked key: {}, covers {} of {} keys",
                            report.has_cipher_key,
                            report.covered,
                            report.total.map(|t| t.to_string()).unwrap_or_else(|| "?".into())
                        )];
                        if let Some(s) = report.secrecy {
                            details.push(format!("secrecy: {s:?}"));
                        }
                        Outcome {
                            ok: report.verdict == *expect,
                            expected: verdict_name(*expect),
                            observed: verdict_name(report.verdict),
                            details,
                        }
                    }
                    Err(e) => Outcome {
                        ok: false,
                        expected: verdict_name(*expect),
                        observed: e.to_string(),
                        details: Vec::new(),
                    },
                }
            }
            Step::PrivacyScan => self.privacy_scan(),
        }
    }

    fn access(
        &mut self,
        delegation: &str,
        requester: &str,
        notaries: Option<&[String]>,
        expect: &str,
        notary_disclosure: &Option<Vec<String>>,
        custodian_disclosure: &Option<Vec<String>>,
    ) -> Outcome {
        let d = match self.delegation(delegation) {
            Ok(d) => d.clone(),
            Err(e) => {
                return Outcome {
                    ok: false,
                    expected: expect.to_string(),
                    observed: e.to_string(),
                    details: Vec::new(),
                }
            }
        };
        let notaries = match notaries {
            Some(list) => list.to_vec(),
            None => d.notaries.iter().take(d.params.t() as usize - 1).cloned().collect(),
        };
        let options = AccessOptions {
            notaries,
            notary_disclosure: notary_disclosure.clone(),
            custodian_disclosure: custodian_disclosure.clone(),
        };
        let plaintext = self.records.values().find(|(id, _)| *id == d.ehr_id).map(|(_, p)| p.clone());
        let result = match d.credentials.get(requester) {
            Some(vc) => self.sim.flow3_access(requester, vc, &options),
            None => Err(ActorError::MissingState(format!("`{requester}` holds no credential here"))),
        };

        let releases: Vec<String> = self
            .last_attempt()
            .iter()
            .filter_map(|e| match e {
                TranscriptEntry::Release { party, what, .. } => Some(format!("{party} released {what}")),
                _ => None,
            })
            .collect();
        let (observed, mut ok) = match &result {
            Ok(p) if Some(p) == plaintext.as_ref() => ("granted".to_string(), expect == "granted"),
            Ok(_) => ("granted with wrong plaintext".to_string(), false),
            Err(e) => {
                let text = describe(e);
                let matches = expect != "granted" && !expect.is_empty() && (text == expect || text.contains(expect));
                (text, matches)
            }
        };
        // A credential rejection must stop the access before anything is released.
        if matches!(result, Err(ActorError::AccessDenied(DenyReason::Rejected(_)))) && !releases.is_empty() {
            ok = false;
        }
        Outcome {
            ok,
            expected: expect.to_string(),
            observed,
            details: releases,
        }
    }

    fn last_attempt(&self) -> &[TranscriptEntry] {
        let entries = &self.sim.transcript.entries;
        let start = entries
            .iter()
            .rposition(|e| matches!(e, TranscriptEntry::AccessStart { .. }))
            .unwrap_or(entries.len());
        &entries[start..]
    }

    fn privacy_scan(&self) -> Outcome {
        let mut problems = Vec::new();
        let ledger = &self.sim.ledger;
        for actor in self.sim.actors() {
            if payload_mentions(ledger, actor.did()) {
                problems.push(format!("{} DID appears in a ledger payload", actor.name));
            }
        }
        let owner = self.sim.did_of(DATA_OWNER).map(|d| d.to_string()).unwrap_or_default();
        let owner_hash = crypto::hash(&[owner.as_bytes()]);
        let mut seen = BTreeSet::new();
        for (id, d) in &self.delegations {
            if !seen.insert(d.pseudo_id.clone()) {
                problems.push(format!("delegation `{id}` reuses a pseudonym"));
            }
            if d.pseudo_id == owner_hash {
                problems.push(format!("delegation `{id}` pseudonym is the owner DID hash"));
            }
        }
        Outcome {
            ok: problems.is_empty(),
            expected: "no identifying data on ledger".into(),
            observed: if problems.is_empty() {
                format!("clean ({} delegations, {} records)", self.delegations.len(), ledger.len())
            } else {
                format!("{} problems", problems.len())
            },
            details: problems,
        }
    }
}

fn verdict_name(v: crate::actors::CollusionVerdict) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

/// Execute every step in order. Steps keep running after a failed
/// expectation so that the exports describe the whole scenario.
pub fn run_scenario(config: &ScenarioConfig) -> Result<RunOutcome, ScenarioError> {
    config.validate()?;
    let sim = Simulation::new(SimConfig {
        seed: config.seed,
        profile: config.profile,
        notaries: config.parties.notaries,
        drs: config.parties.drs,
        link_ttl: config.link_ttl_ticks,
        dc_checks_notary: config.dc_checks_notary,
        availability: config.availability.script.clone(),
        availability_fallback: config.availability.fallback,
    });
    let mut runner = Runner {
        sim,
        config: config.clone(),
        records: BTreeMap::new(),
        delegations: BTreeMap::new(),
    };
    let mut steps = Vec::new();
    for (i, step) in config.steps.iter().enumerate() {
        let o = runner.step(step);
        steps.push(StepReport {
            index: i + 1,
            action: step.action().to_string(),
            ok: o.ok,
            expected: o.expected,
            observed: o.observed,
            details: o.details,
        });
    }
    let audit = audit_simulation(&runner.sim)?;
    let audit_pass = audit.compared && audit.all_pass;
    let mut first_failure = steps
        .iter()
        .find(|s| !s.ok)
        .map(|s| format!("step {} ({}): expected {}, observed {}", s.index, s.action, s.expected, s.observed));
    if first_failure.is_none() && config.audit.expect_table && !audit_pass {
        first_failure = Some(match &audit.note {
            Some(note) => format!("audit: {note}"),
            None => "audit: matrix differs from the expected table".into(),
        });
    }
    let report = RunReport {
        name: config.name.clone(),
        seed: config.seed,
        profile: config.profile,
        mode: config.mode,
        steps,
        audit_required: config.audit.expect_table,
        audit_pass,
        passed: first_failure.is_none(),
        first_failure,
        transcript_digest: runner.sim.transcript.digest(),
        ledger_head: hex::encode(runner.sim.ledger.head_hash()),
    };
    Ok(RunOutcome {
        config: config.clone(),
        sim: runner.sim,
        report,
        audit,
        delegations: runner.delegations,
    })
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), ScenarioError> {
    let path = dir.join(name);
    let mut text = serde_json::to_string_pretty(value).map_err(|e| ScenarioError::format(name, e))?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| ScenarioError::io(&path, e))
}

/// Write the effective config, transcript, ledger, store, actor states,
/// audit and run report into `dir`.
pub fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<(), ScenarioError> {
    fs::create_dir_all(dir).map_err(|e| ScenarioError::io(dir, e))?;
    let config_path = dir.join(files::CONFIG);
    fs::write(&config_path, outcome.config.to_toml()).map_err(|e| ScenarioError::io(&config_path, e))?;
    let ledger_path = dir.join(files::LEDGER);
    fs::write(&ledger_path, outcome.sim.ledger.export_string()).map_err(|e| ScenarioError::io(&ledger_path, e))?;
    write_json(dir, files::TRANSCRIPT, &outcome.sim.transcript)?;
    write_json(dir, files::STORE, &outcome.sim.store.export())?;
    write_json(dir, files::WALLETS, &outcome.actor_states())?;
    write_json(dir, files::AUDIT, &outcome.audit)?;
    write_json(dir, files::REPORT, &outcome.report)
}

/// Load a config, apply command-line overrides, run it and write the outputs.
pub fn run_to_dir(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    profile: Option<CipherProfile>,
) -> Result<RunOutcome, ScenarioError> {
    let mut config = ScenarioConfig::load(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(profile) = profile {
        config.profile = profile;
    }
    let outcome = run_scenario(&config)?;
    write_outputs(&outcome, out_dir)?;
    Ok(outcome)
}
