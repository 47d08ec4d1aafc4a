//! Bid recognisable numbers and search everything an outsider sees for
//! them: chain transactions and relayed messages.
//!
//! cargo run --example sentinel_scan

use std::path::Path;

use cloak::protocol::{run_scenario, scan, ParamSpec, ScenarioConfig};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/respond_to_challenge.json");
    let (mut cfg, source) = ScenarioConfig::load(&path).unwrap();
    let sentinels = [3_141_592_653u64, 2_718_281_828, 1_618_033_988];
    for (p, s) in cfg.parties[1..].iter_mut().zip(sentinels) {
        p.params.insert("bids".into(), ParamSpec::Uint(s));
    }
    cfg.parties[0].state.insert("balances".into(), ParamSpec::Uint(10_000_000_000));
    let run = run_scenario(&cfg, &source).unwrap();
    println!("outcome {}", run.report.outcome);

    let public = run.public_bytes();
    let total: usize = public.iter().map(|(_, b)| b.len()).sum();
    println!("scanned {} items, {total} bytes", public.len());
    let found = scan(&public, &sentinels);
    println!("sentinels found in public data: {}", found.len());

    // The winner's own view does contain the price it pays.
    let w = run.report.parties.iter().find(|p| p.outputs.as_ref().is_some_and(|o| o.returns.contains_key("sPrice"))).unwrap();
    let mine = vec![("winner view".to_string(), serde_json::to_vec(w.outputs.as_ref().unwrap()).unwrap())];
    for f in scan(&mine, &sentinels) {
        println!("{} contains {}", f.source, f.sentinel);
    }
}
