//! Deal covering keys for a (3, 2) threshold, mask a record key, and
//! unmask it from the contributions of two parties.

use std::collections::BTreeSet;

use ehrgate::crypto::{random_bytes, CipherProfile};
use ehrgate::threshold::{
    combine_cascade, combine_xor, compute_partial, derive_cipher_key, generate_key_shares, CombineMode,
    LocalHolders, ThresholdParams,
};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let params = ThresholdParams::new(3, 2)?;
    let shares = generate_key_shares(params, CipherProfile::Production, &mut rng);

    println!("{} keys, one per {}-subset of parties:", params.key_count(), params.label_size());
    for party in params.parties() {
        let held: Vec<String> = shares.holdings(party).iter().map(|l| l.to_string()).collect();
        println!("  party {party} holds {}", held.join(" "));
    }

    let sk = random_bytes(32, &mut rng);
    let ck = derive_cipher_key(&sk, &shares, CombineMode::Xor, &mut rng)?;
    let p1 = shares.party_shares(1)?;
    let p3 = shares.party_shares(3)?;
    let partials = vec![
        compute_partial(&p1, &ck.nonce, ck.blocks())?,
        compute_partial(&p3, &ck.nonce, ck.blocks())?,
    ];
    assert_eq!(combine_xor(&ck, &partials)?, sk);
    println!("parties 1 and 3 recover sk");

    match combine_xor(&ck, &partials[..1]) {
        Err(e) => println!("party 1 alone: {e}"),
        Ok(_) => unreachable!("one party is below the threshold"),
    }

    let ck = derive_cipher_key(&sk, &shares, CombineMode::Cascade, &mut rng)?;
    let fragments = [shares.party_shares(2)?, shares.party_shares(3)?];
    assert_eq!(combine_cascade(&ck, &mut LocalHolders::new(&fragments))?, sk);
    println!("cascade mode: parties 2 and 3 recover sk");

    let everyone: BTreeSet<u8> = params.parties().collect();
    println!("coverage of all parties: {} keys", shares.coverage(&everyone).len());
    Ok(())
}
