use std::thread;

use ehrgate::actors::{
    AccessOptions, ActorError, DenyReason, SimConfig, Simulation, TranscriptEntry, CUSTODIAN, DATA_OWNER, HSP,
};
use ehrgate::crypto::CipherProfile;
use ehrgate::ledger::RecordKind;
use ehrgate::threshold::{CombineMode, ThresholdError, ThresholdParams};
use itertools::Itertools;

const RECORD: &[u8] = b"discharge summary, ward 4";

fn last_attempt(sim: &Simulation) -> &[TranscriptEntry] {
    let id = sim
        .transcript
        .entries
        .iter()
        .rev()
        .find_map(|e| match e {
            TranscriptEntry::AccessStart { attempt, .. } => Some(*attempt),
            _ => None,
        })
        .expect("an attempt was recorded");
    sim.transcript.attempt(id)
}

fn access_events(entries: &[TranscriptEntry]) -> usize {
    entries
        .iter()
        .filter(|e| matches!(e, TranscriptEntry::LedgerAppend { kind: RecordKind::AccessEvent, .. }))
        .count()
}

fn setup(n: u8, t: u8, mode: CombineMode, seed: u64) -> (Simulation, ehrgate::actors::Delegation, Vec<String>) {
    let notaries: Vec<String> = (1..n as usize).map(|i| format!("notary{i}")).collect();
    let mut sim = Simulation::new(SimConfig {
        seed,
        notaries: notaries.len(),
        drs: 1,
        ..SimConfig::default()
    });
    let ehr = sim.flow1_store_ehr(HSP, DATA_OWNER, CUSTODIAN, RECORD).unwrap();
    let refs: Vec<&str> = notaries.iter().map(String::as_str).collect();
    let d = sim
        .flow2_delegate(
            DATA_OWNER,
            &["dr1"],
            &refs,
            CUSTODIAN,
            &ehr,
            ThresholdParams::new(n, t).unwrap(),
            1_000,
            mode,
        )
        .unwrap();
    (sim, d, notaries)
}

#[test]
fn every_notary_subset_behaves_as_the_threshold_says() {
    for (n, t) in [(2, 2), (3, 2), (4, 3)] {
        for mode in [CombineMode::Xor, CombineMode::Cascade] {
            let (mut sim, d, notaries) = setup(n, t, mode, u64::from(n * 10 + t));
            let vc = d.credentials["dr1"];
            for k in 0..=notaries.len() {
                for subset in notaries.iter().map(String::as_str).combinations(k) {
                    let r = sim.flow3_access("dr1", &vc, &AccessOptions::via(&subset));
                    let ctx = format!("({n},{t}) {mode:?} via {subset:?}");
                    if k == 0 {
                        assert_eq!(r, Err(ActorError::AccessDenied(DenyReason::NotaryNotVerified)), "{ctx}");
                    } else if k + 1 < t as usize {
                        assert!(
                            matches!(r, Err(ActorError::Threshold(ThresholdError::InsufficientParties { .. }))),
                            "{ctx}: {r:?}"
                        );
                    } else {
                        assert_eq!(r.as_deref(), Ok(RECORD), "{ctx}");
                        assert!(access_events(last_attempt(&sim)) >= 3, "{ctx}");
                    }
                }
            }
        }
    }
}

#[test]
fn granted_access_logs_start_verification_and_download() {
    let (mut sim, d, _) = setup(3, 2, CombineMode::Xor, 1);
    let before = sim.ledger.len();
    sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::via(&["notary1"])).unwrap();
    let new: Vec<_> = sim.ledger.records().into_iter().skip(before).collect();
    assert!(new.len() >= 3);
    assert!(new.iter().all(|r| r.kind == RecordKind::AccessEvent));
    assert!(sim.ledger.verify_chain());
}

#[test]
fn unreleased_secret_is_never_decrypted_by_a_stranger() {
    let (mut sim, _, _) = setup(3, 2, CombineMode::Cascade, 2);
    let mut other = Simulation::new(SimConfig {
        seed: 99,
        drs: 1,
        ..SimConfig::default()
    });
    // A credential issued in another deployment means nothing here.
    let foreign = other.flow1_store_ehr(HSP, DATA_OWNER, CUSTODIAN, b"x").unwrap();
    let fd = other
        .flow2_delegate(DATA_OWNER, &["dr1"], &["notary1"], CUSTODIAN, &foreign, ThresholdParams::new(2, 2).unwrap(), 10, CombineMode::Xor)
        .unwrap();
    let cred = other
        .actor("dr1")
        .unwrap()
        .wallet
        .credentials()
        .iter()
        .find(|c| c.vc_id == fd.credentials["dr1"])
        .unwrap()
        .clone();
    let releases = |sim: &Simulation| {
        sim.transcript.entries.iter().filter(|e| matches!(e, TranscriptEntry::Release { .. })).count()
    };
    let before = releases(&sim);
    let r = sim.flow3_access_with("dr1", &cred, &AccessOptions::via(&["notary1"]));
    assert!(matches!(r, Err(ActorError::Credential(_) | ActorError::AccessDenied(_))), "{r:?}");
    assert_eq!(releases(&sim), before);
}

#[test]
fn independent_simulations_agree_across_threads() {
    let run = |seed: u64| {
        let (mut sim, d, _) = setup(3, 2, CombineMode::Xor, seed);
        let got = sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::via(&["notary2"])).unwrap();
        (got, sim.ledger.export_string(), sim.transcript.digest())
    };
    let handles: Vec<_> = (0..8u64).map(|s| thread::spawn(move || run(s % 4))).collect();
    let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r.0, RECORD);
        assert_eq!(r, &run(i as u64 % 4), "thread {i}");
    }
    assert_ne!(results[0].1, results[1].1);
}

#[test]
fn toy_profile_round_trips_too() {
    let mut sim = Simulation::new(SimConfig {
        seed: 4,
        profile: CipherProfile::Toy,
        notaries: 3,
        drs: 2,
        ..SimConfig::default()
    });
    let ehr = sim.flow1_store_ehr(HSP, DATA_OWNER, CUSTODIAN, RECORD).unwrap();
    let d = sim
        .flow2_delegate(
            DATA_OWNER,
            &["dr1", "dr2"],
            &["notary1", "notary2", "notary3"],
            CUSTODIAN,
            &ehr,
            ThresholdParams::new(4, 2).unwrap(),
            50,
            CombineMode::Cascade,
        )
        .unwrap();
    for dr in ["dr1", "dr2"] {
        let got = sim.flow3_access(dr, &d.credentials[dr], &AccessOptions::via(&["notary3"])).unwrap();
        assert_eq!(got, RECORD);
    }
}
