//! Create identities, register them, resolve a DID, and round-trip the
//! ledger through its export format.

use ehrgate::identity::{create_identity, resolve};
use ehrgate::ledger::Ledger;
use ehrgate::Tick;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let ledger = Ledger::new();
    let mut wallets = Vec::new();
    for _ in 0..3 {
        let (wallet, doc) = create_identity(&mut rng, Tick(0));
        let seq = ledger.register_did(&doc)?;
        println!("seq {seq}: {}", wallet.did());
        wallets.push(wallet);
    }

    let doc = resolve(wallets[1].did(), &ledger)?;
    assert!(doc.is_self_consistent());
    println!("resolved {} to a {}-byte signing key", doc.did, doc.signing_public_key.len());

    let export = ledger.export_string();
    print!("{}", export.lines().next().unwrap_or_default().chars().take(120).collect::<String>());
    println!("...");
    let imported = Ledger::import(export.as_bytes())?;
    assert_eq!(imported.head_hash(), ledger.head_hash());
    println!("import verified {} records, head {}", imported.len(), hex::encode(imported.head_hash()));

    let tampered = export.replacen("\"seq\":1", "\"seq\":7", 1);
    println!("edited export: {}", Ledger::import(tampered.as_bytes()).unwrap_err());
    Ok(())
}
