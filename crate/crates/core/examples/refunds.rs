//! Who gets what back when a session is punished or times out.
//!
//! cargo run --example refunds

use cloak::chain::{punish_refunds, timeout_refunds};
use cloak::crypto::Address;

fn main() {
    let parties: Vec<Address> = (1u8..=4).map(|i| Address([i; 20])).collect();
    let exec = Address([0xee; 20]);
    let q = 90;

    for m in 1..parties.len() {
        let malicious = &parties[parties.len() - m..];
        let refunds = punish_refunds(q, &parties, malicious, exec);
        let paid: u64 = refunds.iter().map(|r| r.1).sum();
        println!("punish n={} m={m} q={q}: {} recipients, {paid} coins", parties.len(), refunds.len());
        for (a, c) in &refunds {
            let who = if *a == exec { "executor".into() } else { format!("party {}", a.0[0]) };
            println!("  {who:<9} {c}");
        }
    }

    let q = 100;
    for n in 2..=4 {
        let refunds = timeout_refunds(q, &parties[..n]);
        let each: Vec<_> = refunds.iter().map(|r| r.1).collect();
        println!("timeout n={n} q={q}: {each:?}");
    }
}
