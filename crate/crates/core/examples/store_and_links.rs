//! The custodian stores an encrypted record and hands out short-lived
//! download links; every completed download is logged.

use ehrgate::crypto::{sym_decrypt, sym_encrypt, BlockCipherKey, CipherProfile};
use ehrgate::identity::create_identity;
use ehrgate::ledger::Ledger;
use ehrgate::store::EhrStore;
use ehrgate::Tick;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let ledger = Ledger::new();
    let (custodian, doc) = create_identity(&mut rng, Tick(0));
    ledger.register_did(&doc)?;
    let (hsp, _) = create_identity(&mut rng, Tick(0));
    let (requester, _) = create_identity(&mut rng, Tick(0));

    let sk = BlockCipherKey::random(CipherProfile::Production, &mut rng);
    let ct = sym_encrypt(b"discharge summary", &sk, &mut rng);
    let store = EhrStore::new(custodian.did().clone());
    let ehr_id = store.upload(ct, hsp.did(), &mut rng)?;
    println!("stored {} at {}", hex::encode(&ehr_id), store.location_of(&ehr_id).unwrap_or_default());

    let pseudo = [7u8; 32];
    let link = store.grant_link(&ehr_id, requester.did(), &pseudo, 10, Tick(100), &mut rng)?;
    println!("link expires at {}", link.expires_at);
    let blob = store.download(&link, Tick(105), &ledger)?;
    println!("downloaded: {}", String::from_utf8(sym_decrypt(&blob, &sk)?)?);
    println!("at t110: {}", store.download(&link, Tick(110), &ledger).unwrap_err());
    println!("access events logged: {}", ledger.access_events().len());
    Ok(())
}
