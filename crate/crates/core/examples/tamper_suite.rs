//! Each attack runs on its own freshly delegated record and must be
//! rejected for its specific reason.

use ehrgate::actors::tamper_scenarios;
use ehrgate::crypto::CipherProfile;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let outcomes = tamper_scenarios(8, CipherProfile::Production)?;
    for o in &outcomes {
        let mark = if o.rejected { "rejected" } else { "ACCEPTED" };
        println!("{:<24} {mark:<9} {}", o.case.to_string(), o.observed);
    }
    assert!(outcomes.iter().all(|o| o.rejected));
    Ok(())
}
