//! Which coalitions can recover the record key? Toy profile, so every
//! verdict comes from exhaustive enumeration.

use ehrgate::actors::fixture;
use ehrgate::crypto::CipherProfile;
use ehrgate::threshold::CombineMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let coalitions: [&[&str]; 7] = [
        &["dr1", "notary1"],
        &["dr1", "dc"],
        &["dr1", "notary1", "dc"],
        &["dr1", "notary1", "notary2"],
        &["notary1", "dc"],
        &["notary1", "notary2", "dc"],
        &["dr1", "dr2"],
    ];
    for mode in [CombineMode::Xor, CombineMode::Cascade] {
        let (sim, d) = fixture(7, CipherProfile::Toy, mode)?;
        println!("{mode:?}");
        for members in coalitions {
            let r = sim.adversary_collude(members, &d.pseudo_id)?;
            println!(
                "  {:<24} {:<14} keys {}/{} masked key {}",
                members.join("+"),
                format!("{:?}", r.verdict),
                r.covered,
                r.total.map(|t| t.to_string()).unwrap_or_else(|| "?".into()),
                if r.has_cipher_key { "yes" } else { "no" },
            );
        }
    }
    Ok(())
}
