//! Two ways a challenge can go: the withholding party answers on chain and
//! the MPT still completes, or it stays silent and is punished.
//!
//! cargo run --example challenge_run

use std::path::Path;

use cloak::protocol::{run_scenario, ScenarioConfig};

fn main() {
    for name in ["respond_to_challenge.json", "never_respond.json"] {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
        let (cfg, source) = ScenarioConfig::load(&path).unwrap();
        let run = run_scenario(&cfg, &source).unwrap();
        let rep = &run.report;
        let round = &rep.rounds[0];
        println!("== {name}: {}", rep.outcome);
        for t in run.trace().iter().filter(|t| !t.kind.is_setup()) {
            println!("  block {:>3} {:<6} {}", t.height, t.kind.as_str(), t.status);
        }
        let punished: Vec<String> = round.punished.iter().map(|a| a.to_string()).collect();
        println!("  punished [{}]", punished.join(", "));
        for a in rep.actors() {
            let who = a.index.map_or("executor".to_string(), |i| format!("party {i}"));
            println!("  {who:<9} {:<18} {} -> {}", a.behavior, a.coins_before, a.coins_after);
        }
    }
}
