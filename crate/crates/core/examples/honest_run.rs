//! The shipped honest scenario end to end: setup, one MPT in two
//! transactions, and what each party can decrypt afterwards.
//!
//! cargo run --example honest_run

use std::path::Path;

use cloak::protocol::{run_scenario, ScenarioConfig};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/honest.json");
    let (cfg, source) = ScenarioConfig::load(&path).expect("scenario loads");
    let run = run_scenario(&cfg, &source).expect("scenario runs");
    let rep = &run.report;

    println!("outcome {}", rep.outcome);
    println!("setup txs {}, MPT txs {}", rep.tx_count.setup, rep.tx_count.mpt);
    for t in run.trace() {
        println!("  block {:>3} {:<6} {}", t.height, t.kind.as_str(), t.status);
    }
    for p in &rep.parties {
        let o = p.outputs.as_ref().expect("every party decrypts its slice");
        let returns: Vec<String> = o.returns.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let state: Vec<String> = o.state.iter().map(|(c, v)| format!("{c}={v}")).collect();
        println!("party {} sees {} {}", p.index.unwrap(), returns.join(" "), state.join(" "));
    }
}
