//! Compile a contract and look at what comes out: the privacy policy, the
//! private contract that runs in the enclave, and the verifier descriptor.
//!
//! cargo run --example compile_policy

use cloak::codegen::compile_source;
use cloak::crypto::Address;

const SUPPLY_CHAIN: &str = include_str!("../fixtures/supply_chain.cloak");

fn main() {
    let art = compile_source(SUPPLY_CHAIN).expect("compiles");
    println!("H_F 0x{}", art.h_f);
    println!("H_P 0x{}", art.h_p);

    let f = art.policy.function("biddingProcure").unwrap();
    println!("\nbiddingProcure is {}", f.kind);
    for p in &f.params {
        println!("  param  {:<8} {:?} owned by {}", p.id, p.ty.data, p.ty.owner);
    }
    for r in &f.returns {
        println!("  return {:<8} {:?} owned by {}", r.id, r.ty.data, r.ty.owner);
    }
    let ids = |v: &[cloak::codegen::DataPolicy]| v.iter().map(|d| d.id.clone()).collect::<Vec<_>>().join(", ");
    println!("  reads   [{}]", ids(&f.reads));
    println!("  mutates [{}]", ids(&f.mutates));

    println!("\n-- private contract\n{}", art.private_source());

    let v = art.verifier(Address::ZERO);
    println!("-- verifier layout");
    println!("{}", serde_json::to_string_pretty(&v.state_layout).unwrap());
}
