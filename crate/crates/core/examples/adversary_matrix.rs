//! Every party behavior against every executor behavior, with the coin
//! movements and whether any honest actor lost out.
//!
//! cargo run --release --example adversary_matrix

use std::path::Path;

use cloak::protocol::{run_scenario, ExecutorBehavior, PartyBehavior, ScenarioConfig};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/honest.json");
    let (base, source) = ScenarioConfig::load(&path).unwrap();
    println!("{:<20} {:<18} {:<9} {:>6} {:>6}  fair", "party 3", "executor", "outcome", "exec", "p3");
    for pb in PartyBehavior::ALL {
        for eb in ExecutorBehavior::ALL {
            let mut cfg = base.clone();
            cfg.parties[3].behavior = pb;
            cfg.executor = eb;
            let rep = run_scenario(&cfg, &source).unwrap().report;
            let delta = |before: u64, after: u64| after as i64 - before as i64;
            let fair = rep.fairness_violations();
            println!(
                "{:<20} {:<18} {:<9} {:>+6} {:>+6}  {}",
                format!("{pb:?}"),
                format!("{eb:?}"),
                rep.outcome.to_string(),
                delta(rep.executor.coins_before, rep.executor.coins_after),
                delta(rep.parties[3].coins_before, rep.parties[3].coins_after),
                if fair.is_empty() { "yes".to_string() } else { fair.join("; ") }
            );
        }
    }
}
