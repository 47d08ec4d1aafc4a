//! Type-check the auction contract, then a copy with one `reveal` removed.
//!
//! cargo run --example check_contract

use cloak::frontend::parse_source;
use cloak::typecheck::check_contract;

const SUPPLY_CHAIN: &str = include_str!("../fixtures/supply_chain.cloak");

fn report(label: &str, src: &str) {
    let ast = parse_source(src).expect("parses");
    let checked = check_contract(&ast);
    println!("== {label}");
    for d in &checked.diagnostics {
        println!("  {}:{} {}[{}] {}", d.position.line, d.position.col, d.severity, d.code, d.message);
    }
    for f in &checked.functions {
        println!("  function {} is {}", f.name, f.kind);
    }
    println!("  errors: {}", checked.errors().count());
}

fn main() {
    report("as written", SUPPLY_CHAIN);
    // Without the reveal, the winner's price would be assigned straight
    // from a bid owned by someone else.
    let leaky = SUPPLY_CHAIN.replace("sPrice = reveal(bids[0], winner);", "sPrice = bids[0];");
    report("reveal stripped", &leaky);
}
