//! Run the auction in the plaintext interpreter and split the outputs into
//! what is public and what each party gets sealed.
//!
//! cargo run --example interpret_auction -- 5 3 7

use std::collections::BTreeMap;

use cloak::codegen::{compile_source, erase_ownership};
use cloak::crypto::keygen_labeled;
use cloak::interpreter::{exec_function, partition_outputs, CellId, ExecConfig, StateStore, Value};

const SUPPLY_CHAIN: &str = include_str!("../fixtures/supply_chain.cloak");

fn main() {
    let mut bids: Vec<u64> = std::env::args().skip(1).map(|a| a.parse().expect("bids are integers")).collect();
    if bids.is_empty() {
        bids = vec![5, 3, 7];
    }
    let art = compile_source(SUPPLY_CHAIN).unwrap();
    let tenderer = keygen_labeled("example/tenderer", 0).addr;
    let bidders: Vec<_> = (0..bids.len() as u64).map(|i| keygen_labeled("example/bidder", i).addr).collect();

    let state = StateStore::new().with(CellId::entry("balances", Value::Address(tenderer)), Value::uint(100));
    let params = BTreeMap::from([
        ("parties".to_string(), Value::Array(bidders.iter().map(|a| Value::Address(*a)).collect())),
        ("bids".to_string(), Value::Array(bids.iter().map(|b| Value::uint(*b)).collect())),
        ("tenderer".to_string(), Value::Address(tenderer)),
    ]);
    let out = exec_function(
        &erase_ownership(&art.checked.ast),
        "biddingProcure",
        &state,
        &params,
        tenderer,
        &ExecConfig::default(),
    )
    .expect("executes");

    let name = |v: &Value| match v {
        Value::Address(a) if *a == tenderer => "tenderer".to_string(),
        Value::Address(a) => bidders.iter().position(|b| b == a).map_or(a.to_string(), |i| format!("bidder {i}")),
        other => format!("{other:?}"),
    };
    println!("bids {bids:?}");
    println!("winner {}", name(out.ret("winner").unwrap()));
    println!("sPrice {:?}", out.ret("sPrice").unwrap());

    let fp = art.policy.function("biddingProcure").unwrap();
    let part = partition_outputs(fp, &art.policy.states, &out, &params, tenderer).unwrap();
    println!("\npublic returns {:?}", part.public.returns.keys().collect::<Vec<_>>());
    for (who, slice) in &part.private {
        println!(
            "sealed for {}: returns {:?}, {} state cell(s)",
            name(&Value::Address(*who)),
            slice.returns.keys().collect::<Vec<_>>(),
            slice.state.len()
        );
    }
}
