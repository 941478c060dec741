//! Store a record, delegate it to two requesters under a (3, 2) threshold,
//! and let one of them open it through a notary and the custodian.

use ehrgate::actors::{AccessOptions, SimConfig, Simulation, TranscriptEntry, CUSTODIAN, DATA_OWNER, HSP};
use ehrgate::threshold::{CombineMode, ThresholdParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut sim = Simulation::new(SimConfig {
        seed: 6,
        ..SimConfig::default()
    });
    let ehr = b"2026-05-14 ECG: sinus rhythm, QTc 410 ms";
    let ehr_id = sim.flow1_store_ehr(HSP, DATA_OWNER, CUSTODIAN, ehr)?;
    let d = sim.flow2_delegate(
        DATA_OWNER,
        &["dr1", "dr2"],
        &["notary1", "notary2"],
        CUSTODIAN,
        &ehr_id,
        ThresholdParams::new(3, 2)?,
        100,
        CombineMode::Xor,
    )?;
    println!("pseudonym {}", hex::encode(&d.pseudo_id));

    sim.advance(3);
    let before = sim.transcript.entries.len();
    let plaintext = sim.flow3_access("dr2", &d.credentials["dr2"], &AccessOptions::via(&["notary2"]))?;
    assert_eq!(plaintext, ehr);
    println!("dr2 read: {}", String::from_utf8_lossy(&plaintext));

    for entry in &sim.transcript.entries[before..] {
        match entry {
            TranscriptEntry::Message { from, to, kind, .. } => println!("  {from:>8} -> {to:<8} {kind}"),
            TranscriptEntry::LedgerAppend { seq, kind, .. } => println!("  ledger #{seq} {kind:?}"),
            TranscriptEntry::OracleDecision { notary, decision } => println!("  {notary} oracle: {decision:?}"),
            TranscriptEntry::Verification { verifier, verdict, .. } => println!("  {verifier} verdict: {verdict}"),
            TranscriptEntry::Release { party, what, .. } => println!("  {party} released {what}"),
            _ => {}
        }
    }
    let notes = &sim.actor("notary2")?.notification_outbox;
    println!("owner notifications queued: {}", notes.len());
    Ok(())
}
