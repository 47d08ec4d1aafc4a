//! Checks anyone can run from public data alone: replaying every `TX_com`
//! against verifier state rebuilt from the chain, and scanning published
//! bytes for plaintext that should never be there.

use std::collections::{BTreeMap, BTreeSet};

use primitive_types::U256;
use serde::{Deserialize, Serialize};

use crate::chain::{verifier_address, Chain, Payload, Transaction, VerifierState};
use crate::crypto::{Address, Digest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub height: u64,
    pub tx: Digest,
    pub id_p: Digest,
    /// The auditor's own verdict.
    pub accepted: bool,
    /// What the chain recorded.
    pub chain_ok: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn consistent(&self) -> bool {
        self.entries.iter().all(|e| e.accepted == e.chain_ok)
    }

    pub fn accepted(&self) -> usize {
        self.entries.iter().filter(|e| e.accepted).count()
    }
}

/// Rebuild every verifier from its deployment and judge each `TX_com` by
/// recomputing the proof. Only proposal settlement and session endings are
/// taken from the recorded statuses; completions are judged independently.
pub fn audit(chain: &Chain) -> AuditReport {
    let mut verifiers: BTreeMap<Address, VerifierState> = BTreeMap::new();
    let mut enclave: Option<Address> = None;
    // id_p -> (verifier, H_Cx)
    let mut open: BTreeMap<Digest, (Address, Vec<Digest>)> = BTreeMap::new();
    let mut closed: BTreeSet<Digest> = BTreeSet::new();
    let mut report = AuditReport::default();
    for block in chain.blocks() {
        for (tx, status) in block.txs.iter().zip(&block.statuses) {
            match &tx.payload {
                Payload::DeployService { adr_e, .. } if status.is_ok() => enclave = Some(*adr_e),
                Payload::DeployVerifier { descriptor, initial } if status.is_ok() => {
                    verifiers.insert(
                        verifier_address(&tx.id()),
                        VerifierState::new(descriptor.clone(), initial.clone()),
                    );
                }
                Payload::Propose { id_p, proposal, .. } if status.is_ok() => {
                    open.insert(*id_p, (proposal.adr_v, proposal.h_cx.clone()));
                }
                Payload::Punish { id_p, .. } | Payload::Timeout { id_p } if status.is_ok() => {
                    closed.insert(*id_p);
                }
                Payload::Complete { id_p, .. } => {
                    let accepted = judge(tx, enclave, &open, &closed, &mut verifiers);
                    if accepted {
                        closed.insert(*id_p);
                    }
                    report.entries.push(AuditEntry {
                        height: block.height(),
                        tx: tx.id(),
                        id_p: *id_p,
                        accepted,
                        chain_ok: status.is_ok(),
                    });
                }
                _ => {}
            }
        }
    }
    report
}

fn judge(
    tx: &Transaction,
    enclave: Option<Address>,
    open: &BTreeMap<Digest, (Address, Vec<Digest>)>,
    closed: &BTreeSet<Digest>,
    verifiers: &mut BTreeMap<Address, VerifierState>,
) -> bool {
    let Payload::Complete { id_p, proof, c_s, c_s_new, c_r } = &tx.payload else {
        return false;
    };
    if !tx.verify_signature() || Some(tx.sender) != enclave || closed.contains(id_p) {
        return false;
    }
    let Some((adr_v, h_cx)) = open.get(id_p) else {
        return false;
    };
    let Some(v) = verifiers.get_mut(adr_v) else {
        return false;
    };
    if !v.verify(proof, h_cx, c_s, c_s_new, c_r) {
        return false;
    }
    v.set_new_states(tx.sender, c_s_new)
}

/// Textual forms in which a leaked integer could show up: decimal, and
/// big-endian hex at 64-bit and 256-bit widths.
pub fn sentinel_patterns(v: u64) -> Vec<Vec<u8>> {
    let mut be = [0u8; 32];
    U256::from(v).to_big_endian(&mut be);
    vec![
        v.to_string().into_bytes(),
        hex::encode(v.to_be_bytes()).into_bytes(),
        hex::encode(be).into_bytes(),
        v.to_be_bytes().to_vec(),
    ]
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub source: String,
    pub sentinel: u64,
}

/// Every `(source, sentinel)` pair where a pattern of the sentinel occurs
/// in the source bytes.
pub fn scan(haystacks: &[(String, Vec<u8>)], sentinels: &[u64]) -> Vec<Finding> {
    let mut out = Vec::new();
    for (source, bytes) in haystacks {
        for &s in sentinels {
            if sentinel_patterns(s).iter().any(|p| contains(bytes, p)) {
                out.push(Finding {
                    source: source.clone(),
                    sentinel: s,
                });
            }
        }
    }
    out
}

fn contains(hay: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}
