//! Compiler and protocol simulator for privacy-annotated multi-party
//! smart contract transactions.

pub mod crypto;
pub mod frontend;
pub mod typecheck;
pub mod codegen;
pub mod interpreter;
pub mod chain;
pub mod enclave;
pub mod protocol;
pub mod cli;
