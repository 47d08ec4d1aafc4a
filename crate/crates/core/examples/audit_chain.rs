//! Re-check every completion from public chain data, then show that the
//! verifier refuses a proof with one field changed.
//!
//! cargo run --example audit_chain

use std::path::Path;

use cloak::chain::{verifier_address, Payload, VerifierState};
use cloak::protocol::{audit, run_scenario, ScenarioConfig};

fn main() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios/two_rounds.json");
    let (cfg, source) = ScenarioConfig::load(&path).unwrap();
    let run = run_scenario(&cfg, &source).unwrap();

    let report = audit(&run.chain);
    for e in &report.entries {
        println!("block {:>3} TX_com for 0x{}: auditor {}, chain {}", e.height, e.id_p, e.accepted, e.chain_ok);
    }
    println!("consistent with the chain: {}", report.consistent());

    // Rebuild the verifier as it stood before the first completion.
    let txs: Vec<_> = run.chain.blocks().iter().flat_map(|b| &b.txs).collect();
    let deploy = txs.iter().find(|t| matches!(t.payload, Payload::DeployVerifier { .. })).unwrap();
    let Payload::DeployVerifier { descriptor, initial } = &deploy.payload else { unreachable!() };
    let v = VerifierState::new(descriptor.clone(), initial.clone());
    let Some(Payload::Propose { proposal, .. }) = txs.iter().map(|t| &t.payload).find(|p| matches!(p, Payload::Propose { .. })) else {
        unreachable!()
    };
    assert_eq!(proposal.adr_v, verifier_address(&deploy.id()));
    let Some(Payload::Complete { proof, c_s, c_s_new, c_r, .. }) =
        txs.iter().map(|t| &t.payload).find(|p| matches!(p, Payload::Complete { .. }))
    else {
        unreachable!()
    };
    println!("\noriginal proof verifies: {}", v.verify(proof, &proposal.h_cx, c_s, c_s_new, c_r));
    let names = ["H_F", "H_P", "H_Cx", "H_Cs", "H_Cs'", "H_Cr"];
    for (i, name) in names.iter().enumerate() {
        let mut p = *proof;
        p.field_mut(i).0[0] ^= 1;
        println!("{name:<5} flipped: verifies {}", v.verify(&p, &proposal.h_cx, c_s, c_s_new, c_r));
    }
}
