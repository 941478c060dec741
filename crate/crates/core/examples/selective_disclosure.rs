//! Issue a delegation credential, present a subset of its claims bound to a
//! verifier's challenge, and watch the checks fail on a tampered copy.

use ehrgate::actors::{fixture, NOTARY_DISCLOSURE};
use ehrgate::credential::{claim, present, verify_presentation};
use ehrgate::crypto::{random_bytes, CipherProfile};
use ehrgate::threshold::CombineMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (mut sim, delegation) = fixture(4, CipherProfile::Production, CombineMode::Xor)?;
    let holder = sim.actor("dr1")?.wallet.clone();
    let vc = holder
        .credentials()
        .iter()
        .find(|c| c.vc_id == delegation.credentials["dr1"])
        .expect("dr1 holds its credential")
        .clone();
    println!("credential {} carries {} claims", hex::encode(&vc.vc_id[..8]), vc.claims.len());

    let challenge = random_bytes(32, sim.rng());
    let vp = present(&vc, &holder, &NOTARY_DISCLOSURE, &challenge)?;
    let hidden: Vec<&String> = vc.claims.keys().filter(|k| !vp.disclosed.contains_key(*k)).collect();
    println!("disclosed to a notary: {:?}", vp.disclosed.keys().collect::<Vec<_>>());
    println!("withheld: {hidden:?}");
    println!("verdict: {:?}", verify_presentation(&vp, &challenge, &sim.ledger, sim.now()));

    let other = random_bytes(32, sim.rng());
    println!("under another challenge: {:?}", verify_presentation(&vp, &other, &sim.ledger, sim.now()));

    let mut forged = vp.clone();
    if let Some(d) = forged.disclosed.get_mut(claim::EHR_ID) {
        d.value[0] ^= 1;
    }
    println!("with an edited ehr_id: {:?}", verify_presentation(&forged, &challenge, &sim.ledger, sim.now()));

    let mut silent = vc.clone();
    silent.claims.clear();
    let vp = present(&silent, &holder, &[], &challenge);
    println!("presenting without the subject claim: {}", vp.unwrap_err());
    Ok(())
}
