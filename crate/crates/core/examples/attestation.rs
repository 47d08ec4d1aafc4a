//! Start an enclave, check its attestation the way a party would, and show
//! that a report for a different key does not pass.
//!
//! cargo run --example attestation

use cloak::chain::{authority_key, Chain};
use cloak::crypto::keygen_labeled;
use cloak::enclave::{issuer_key, measurement, Enclave, EnclaveConfig};

fn main() {
    let chain = Chain::new();
    let (enclave, report) = Enclave::setup(&[3; 32], chain.genesis_hash(), authority_key(), EnclaveConfig::default());
    println!("enclave address   {}", enclave.address());
    println!("measurement       0x{}", measurement());
    println!("response window   {} blocks", enclave.tau_res());
    println!("completion window {} blocks", enclave.tau_com());
    println!("report verifies   {}", report.verify(&issuer_key()));
    println!("key matches       {}", report.pk_e == enclave.public_key());

    let mut forged = report.clone();
    forged.pk_e = keygen_labeled("example/impostor", 0).pk;
    println!("forged verifies   {}", forged.verify(&issuer_key()));
}
