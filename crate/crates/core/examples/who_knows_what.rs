//! Scan every participant's state for each sensitive item, before and after
//! a requester opens the record.

use ehrgate::actors::{fixture, AccessOptions};
use ehrgate::crypto::CipherProfile;
use ehrgate::scenario::{audit_simulation, Column, Item, Knowledge};
use ehrgate::threshold::CombineMode;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (mut sim, d) = fixture(9, CipherProfile::Production, CombineMode::Xor)?;
    let before = audit_simulation(&sim)?;
    let holders: Vec<&str> = Column::ALL
        .iter()
        .filter(|c| before.cell(Item::SecretKey, **c).is_some_and(|x| x.observed == Knowledge::Known))
        .map(|c| c.label())
        .collect();
    println!("record key holders before access: {holders:?}");

    sim.flow3_access("dr1", &d.credentials["dr1"], &AccessOptions::via(&["notary1"]))?;
    let after = audit_simulation(&sim)?;
    print!("{}", after.table());
    println!("matches the expected table: {}", after.all_pass);
    Ok(())
}
