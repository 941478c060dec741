use std::collections::BTreeSet;

use ehrgate::actors::{ehr_secret, AccessOptions, SimConfig, Simulation, CUSTODIAN, DATA_OWNER, HSP};
use ehrgate::crypto::{self, BlockCipherKey, CipherProfile, KeyPair, KeyPurpose};
use ehrgate::ledger::Ledger;
use ehrgate::scenario::{audit_simulation, run_scenario, ScenarioConfig};
use ehrgate::threshold::{
    combine_cascade, combine_xor, compute_partial, derive_cipher_key, generate_key_shares, CombineMode,
    LocalHolders, ThresholdError, ThresholdParams,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn params() -> impl Strategy<Value = (u8, u8)> {
    (1u8..=6).prop_flat_map(|n| (Just(n), 1..=n))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn any_coalition_reconstructs_iff_it_meets_the_threshold(
        (n, t) in params(),
        mask in any::<u8>(),
        seed in any::<u64>(),
        production in any::<bool>(),
        cascade in any::<bool>(),
    ) {
        let profile = if production { CipherProfile::Production } else { CipherProfile::Toy };
        let mode = if cascade { CombineMode::Cascade } else { CombineMode::Xor };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let shares = generate_key_shares(ThresholdParams::new(n, t).unwrap(), profile, &mut rng);
        let sk = crypto::random_bytes(profile.key_width(), &mut rng);
        let ck = derive_cipher_key(&sk, &shares, mode, &mut rng).unwrap();
        let coalition: Vec<u8> = (1..=n).filter(|p| mask & (1 << (p - 1)) != 0).collect();
        let fragments: Vec<_> = coalition.iter().map(|p| shares.party_shares(*p).unwrap()).collect();

        let got = match mode {
            CombineMode::Xor => {
                // order and duplicates do not matter
                let mut partials: Vec<_> = fragments
                    .iter()
                    .map(|f| compute_partial(f, &ck.nonce, ck.blocks()).unwrap())
                    .collect();
                partials.reverse();
                if let Some(first) = partials.first().cloned() {
                    partials.push(first);
                }
                combine_xor(&ck, &partials)
            }
            CombineMode::Cascade => combine_cascade(&ck, &mut LocalHolders::new(&fragments)),
        };
        if coalition.len() >= t as usize {
            prop_assert_eq!(got, Ok(sk));
        } else {
            let insufficient = matches!(got, Err(ThresholdError::InsufficientParties { .. }));
            prop_assert!(insufficient);
        }
    }

    #[test]
    fn share_fragments_survive_serialization((n, t) in params(), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let shares = generate_key_shares(ThresholdParams::new(n, t).unwrap(), CipherProfile::Production, &mut rng);
        for p in 1..=n {
            let frag = shares.party_shares(p).unwrap();
            let back = ehrgate::threshold::PartyShares::from_bytes(&frag.to_bytes()).unwrap();
            prop_assert_eq!(back.labels(), frag.labels());
        }
        let covered: BTreeSet<_> = shares.coverage(&(1..=n).collect());
        prop_assert_eq!(covered.len(), shares.labels().len());
    }

    #[test]
    fn record_cipher_round_trips(plaintext in proptest::collection::vec(any::<u8>(), 0..512), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        for profile in [CipherProfile::Toy, CipherProfile::Production] {
            let key = BlockCipherKey::random(profile, &mut rng);
            let ct = crypto::sym_encrypt(&plaintext, &key, &mut rng);
            prop_assert_eq!(crypto::sym_decrypt(&ct, &key), Ok(plaintext.clone()));
        }
    }

    #[test]
    fn sealed_messages_open_only_for_the_recipient(plaintext in proptest::collection::vec(any::<u8>(), 0..256), seed in any::<u64>()) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let alice = KeyPair::generate(KeyPurpose::Encryption, &mut rng);
        let eve = KeyPair::generate(KeyPurpose::Encryption, &mut rng);
        let ct = crypto::pk_encrypt(&plaintext, alice.public_key(), &mut rng).unwrap();
        prop_assert_eq!(crypto::pk_decrypt(&ct, &alice), Ok(plaintext));
        prop_assert!(crypto::pk_decrypt(&ct, &eve).is_err());
    }

    #[test]
    fn ledger_export_round_trips(seed in 0u64..1000, accesses in 0usize..3) {
        let mut sim = Simulation::new(SimConfig { seed, drs: 1, ..SimConfig::default() });
        let ehr = sim.flow1_store_ehr(HSP, DATA_OWNER, CUSTODIAN, b"x").unwrap();
        let d = sim
            .flow2_delegate(DATA_OWNER, &["dr1"], &["notary1", "notary2"], CUSTODIAN, &ehr,
                ThresholdParams::new(3, 2).unwrap(), 100, CombineMode::Xor)
            .unwrap();
        for _ in 0..accesses {
            sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::via(&["notary2"])).unwrap();
        }
        let text = sim.ledger.export_string();
        let back = Ledger::import(text.as_bytes()).unwrap();
        prop_assert_eq!(back.export_string(), text);
        prop_assert!(back.verify_chain());
    }
}

/// No private key, secret or record key from any wallet shows up in what
/// is published or reported.
#[test]
fn private_material_stays_out_of_exports() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios/happy_path_3_2.toml");
    let outcome = run_scenario(&ScenarioConfig::load(path.as_ref()).unwrap()).unwrap();
    let ledger = outcome.sim.ledger.export_string().into_bytes();
    let ledger_raw: Vec<u8> = outcome.sim.ledger.records().into_iter().flat_map(|r| r.payload).collect();
    let audit = serde_json::to_vec(&audit_simulation(&outcome.sim).unwrap()).unwrap();
    let report = serde_json::to_vec(&outcome.report).unwrap();

    let mut needles: Vec<(String, Vec<u8>)> = Vec::new();
    for actor in outcome.sim.actors() {
        let w = &actor.wallet;
        needles.push((format!("{} signing key", actor.name), w.signing_keypair().private_key().to_vec()));
        needles.push((format!("{} encryption key", actor.name), w.encryption_keypair().private_key().to_vec()));
        // Ids, DIDs and public halves kept in wallets are public anyway.
        for (label, secret) in w.secrets() {
            let private = [":sk", ":ephemeral_private", ":keys"].iter().any(|s| label.ends_with(s))
                || label.starts_with("shares:");
            if private {
                needles.push((format!("{} {label}", actor.name), secret.clone()));
            }
        }
    }
    assert!(needles.len() > 20);
    let ehr = outcome.sim.store.export().blobs[0].ehr_id.clone();
    assert!(outcome.sim.actor(HSP).unwrap().wallet.secret(&ehr_secret(&ehr, "sk")).is_some());

    for (what, needle) in &needles {
        let hex = hex::encode(needle).into_bytes();
        for (name, hay) in [("ledger", &ledger), ("ledger payloads", &ledger_raw), ("audit", &audit), ("report", &report)] {
            for n in [needle, &hex] {
                assert!(!hay.windows(n.len()).any(|w| w == n.as_slice()), "{what} found in {name}");
            }
        }
    }
}
