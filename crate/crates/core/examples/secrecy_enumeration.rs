//! Exhaustive secrecy check on the one-byte toy cipher: every coalition of
//! at least t parties pins the record key down, smaller ones learn nothing.

use ehrgate::crypto::CipherProfile;
use ehrgate::threshold::{secrecy_oracle, CombineMode, SecrecyVerdict, ThresholdParams};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    for (n, t) in [(2, 2), (3, 2), (4, 2), (4, 3)] {
        let params = ThresholdParams::new(n, t)?;
        for mode in [CombineMode::Xor, CombineMode::Cascade] {
            let mut summary = Vec::new();
            for coalition in params.access_structure().all_subsets() {
                let v = secrecy_oracle(params, &coalition, mode, CipherProfile::Toy, &mut rng)?;
                let mark = match v {
                    SecrecyVerdict::Reconstructs { .. } => "R",
                    SecrecyVerdict::Hidden => "h",
                    SecrecyVerdict::Partial { .. } => "?",
                };
                summary.push(format!("{coalition:?}{mark}"));
            }
            println!("({n},{t}) {mode:?}: {}", summary.join(" "));
        }
    }
    println!("R = reconstructs, h = all 256 keys equally likely");
    Ok(())
}
