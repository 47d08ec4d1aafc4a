//! A single-node blockchain hosting the service contract and verifiers.

mod pop;
mod service;
mod tx;
mod verifier;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pop::{block_hash, tx_root, verify_pop, Inclusion, PopHeader, ProofOfPublication};
pub use service::{
    punish_refunds, split_exact, timeout_refunds, PartyRecord, ProposalRecord, ProposalStatus,
    Revert, ServiceState,
};
pub use tx::{Payload, SettledProposal, Transaction, TxKind};
pub use verifier::{
    hash_cx, hash_returns, hash_states, state_root, Proof, ReturnEntry, StateEntry, StateWitness,
    StoredCell, VerifierState,
};

use crate::crypto::{hash_parts, keygen_labeled, sign, Address, Digest, KeyPair, PublicKey, Signature};

/// The single block producer of the simulated chain. Its public key is the
/// trust anchor for proofs of publication.
pub fn authority_keys() -> KeyPair {
    keygen_labeled("cloak/chain-authority", 0)
}

pub fn authority_key() -> PublicKey {
    authority_keys().pk
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub height: u64,
    pub parent: Digest,
    pub tx_root: Digest,
    /// Verifier state after applying the block.
    pub state_root: Digest,
    pub hash: Digest,
    pub signature: Signature,
}

impl Header {
    fn sealed(authority: &KeyPair, height: u64, parent: Digest, tx_root: Digest, state_root: Digest) -> Self {
        let hash = block_hash(&parent, height, &tx_root, &state_root);
        Self {
            height,
            parent,
            tx_root,
            state_root,
            hash,
            signature: sign(authority, &hash.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxStatus {
    Ok,
    Reverted(Revert),
}

impl TxStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, TxStatus::Ok)
    }

    pub fn label(&self) -> String {
        match self {
            TxStatus::Ok => "ok".into(),
            TxStatus::Reverted(r) => format!("revert:{r:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub header: Header,
    pub txs: Vec<Transaction>,
    pub statuses: Vec<TxStatus>,
}

impl Block {
    pub fn height(&self) -> u64 {
        self.header.height
    }

    pub fn hash(&self) -> Digest {
        self.header.hash
    }

    fn pop_header(&self) -> PopHeader {
        PopHeader {
            height: self.header.height,
            parent: self.header.parent,
            tx_ids: self.txs.iter().map(Transaction::id).collect(),
            state_root: self.header.state_root,
            hash: self.header.hash,
            signature: self.header.signature,
        }
    }
}

/// One line of the chain trace. Field order is part of the format.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub height: u64,
    pub kind: TxKind,
    pub sender: Address,
    pub status: String,
    pub payload: Digest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SubmitError {
    #[error("invalid transaction signature")]
    InvalidSignature,
    #[error("transaction already submitted")]
    Duplicate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxLocation {
    pub height: u64,
    pub index: usize,
}

pub fn verifier_address(deploy_tx: &Digest) -> Address {
    let h = hash_parts(&[b"cloak/verifier", &deploy_tx.0]);
    Address(h.0[12..].try_into().expect("20-byte tail"))
}

#[derive(Debug, Clone)]
pub struct Chain {
    authority: KeyPair,
    blocks: Vec<Block>,
    pending: Vec<Transaction>,
    seen: BTreeSet<Digest>,
    index: BTreeMap<Digest, TxLocation>,
    service: Option<ServiceState>,
    verifiers: BTreeMap<Address, VerifierState>,
    trace: Vec<TraceRecord>,
}

impl Default for Chain {
    fn default() -> Self {
        Self::new()
    }
}

impl Chain {
    pub fn new() -> Self {
        let authority = authority_keys();
        let genesis = Block {
            header: Header::sealed(
                &authority,
                0,
                Digest([0; 32]),
                tx_root(&[]),
                state_root(&BTreeMap::new()),
            ),
            txs: Vec::new(),
            statuses: Vec::new(),
        };
        Self {
            authority,
            blocks: vec![genesis],
            pending: Vec::new(),
            seen: BTreeSet::new(),
            index: BTreeMap::new(),
            service: None,
            verifiers: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    pub fn height(&self) -> u64 {
        self.blocks.len() as u64 - 1
    }

    pub fn tip(&self) -> &Block {
        self.blocks.last().expect("genesis exists")
    }

    pub fn genesis_hash(&self) -> Digest {
        self.blocks[0].hash()
    }

    pub fn block(&self, height: u64) -> Option<&Block> {
        self.blocks.get(height as usize)
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn service(&self) -> Option<&ServiceState> {
        self.service.as_ref()
    }

    pub fn verifier(&self, adr_v: &Address) -> Option<&VerifierState> {
        self.verifiers.get(adr_v)
    }

    pub fn proposal(&self, id_p: &Digest) -> Option<&ProposalRecord> {
        self.service.as_ref()?.prpls.get(id_p)
    }

    pub fn coins(&self, a: &Address) -> u64 {
        self.service.as_ref().map_or(0, |s| s.coins_of(a))
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn pending(&self) -> &[Transaction] {
        &self.pending
    }

    pub fn submit(&mut self, tx: Transaction) -> Result<Digest, SubmitError> {
        if !tx.verify_signature() {
            return Err(SubmitError::InvalidSignature);
        }
        let id = tx.id();
        if !self.seen.insert(id) {
            return Err(SubmitError::Duplicate);
        }
        self.pending.push(tx);
        Ok(id)
    }

    pub fn locate(&self, id: &Digest) -> Option<TxLocation> {
        self.index.get(id).copied()
    }

    pub fn tx(&self, id: &Digest) -> Option<(&Transaction, TxStatus, u64)> {
        let loc = self.locate(id)?;
        let b = &self.blocks[loc.height as usize];
        Some((&b.txs[loc.index], b.statuses[loc.index], loc.height))
    }

    /// Include every pending transaction, in submission order.
    pub fn mine_block(&mut self) -> &Block {
        let height = self.height() + 1;
        let txs = std::mem::take(&mut self.pending);
        let mut statuses = Vec::with_capacity(txs.len());
        for (i, tx) in txs.iter().enumerate() {
            let status = match self.apply(tx, height) {
                Ok(()) => TxStatus::Ok,
                Err(r) => TxStatus::Reverted(r),
            };
            tracing::debug!(height, kind = %tx.kind(), status = %status.label(), "applied");
            self.index.insert(tx.id(), TxLocation { height, index: i });
            self.trace.push(TraceRecord {
                height,
                kind: tx.kind(),
                sender: tx.sender,
                status: status.label(),
                payload: tx.payload_digest(),
            });
            statuses.push(status);
        }
        let ids: Vec<_> = txs.iter().map(Transaction::id).collect();
        let header = Header::sealed(
            &self.authority,
            height,
            self.tip().hash(),
            tx_root(&ids),
            state_root(&self.verifiers),
        );
        self.blocks.push(Block {
            header,
            txs,
            statuses,
        });
        self.tip()
    }

    fn svc(&mut self) -> Result<&mut ServiceState, Revert> {
        self.service.as_mut().ok_or(Revert::NoService)
    }

    fn apply(&mut self, tx: &Transaction, height: u64) -> Result<(), Revert> {
        let sender = tx.sender;
        match &tx.payload {
            Payload::DeployService { pk_e, adr_e, adr_exec } => {
                if self.service.is_some() {
                    return Err(Revert::ServiceExists);
                }
                self.service = Some(ServiceState::new(*pk_e, *adr_e, *adr_exec));
                Ok(())
            }
            Payload::DeployVerifier { descriptor, initial } => {
                let adr = verifier_address(&tx.id());
                self.verifiers
                    .insert(adr, VerifierState::new(descriptor.clone(), initial.clone()));
                Ok(())
            }
            Payload::Register { pk } => {
                if self.svc()?.register(sender, *pk) {
                    tracing::warn!(%sender, "registered key replaced");
                }
                Ok(())
            }
            Payload::Deposit { amount } => {
                self.svc()?.deposit(sender, *amount);
                Ok(())
            }
            Payload::Propose {
                id_p,
                proposal,
                tau_res,
                tau_com,
            } => {
                if sender != self.svc()?.adr_e {
                    return Err(Revert::NotEnclave);
                }
                if !self.verifiers.contains_key(&proposal.adr_v) {
                    return Err(Revert::UnknownVerifier);
                }
                self.svc()?
                    .propose(sender, *id_p, proposal, *tau_res, *tau_com, height)
            }
            Payload::Challenge { id_p, parties } => self.svc()?.challenge(sender, id_p, parties),
            Payload::Response { id_p, inputs } => self.svc()?.response(sender, id_p, inputs),
            Payload::Punish { id_p, malicious } => self.svc()?.punish(sender, id_p, malicious, height),
            Payload::Complete {
                id_p,
                proof,
                c_s,
                c_s_new,
                c_r,
            } => {
                let svc = self.svc()?;
                if sender != svc.adr_e {
                    return Err(Revert::NotEnclave);
                }
                let rec = svc.prpls.get(id_p).ok_or(Revert::UnknownProposal)?;
                if rec.status != ProposalStatus::Settle {
                    return Err(Revert::BadStatus);
                }
                let (adr_v, h_cx) = (rec.v, rec.h_cx.clone());
                let v = self.verifiers.get_mut(&adr_v).ok_or(Revert::UnknownVerifier)?;
                if !v.verify(proof, &h_cx, c_s, c_s_new, c_r) {
                    return Err(Revert::ProofRejected);
                }
                if !v.set_new_states(sender, c_s_new) {
                    return Err(Revert::NotEnclave);
                }
                self.svc()?.complete(sender, id_p, c_r)
            }
            Payload::Timeout { id_p } => self.svc()?.timeout(sender, id_p, height),
        }
    }

    /// Headers of every block after `since` up to the tip.
    pub fn headers_since(&self, since: &Digest) -> Option<ProofOfPublication> {
        let start = self.blocks.iter().position(|b| b.hash() == *since)?;
        Some(ProofOfPublication {
            checkpoint: *since,
            headers: self.blocks[start + 1..].iter().map(Block::pop_header).collect(),
            inclusion: None,
        })
    }

    pub fn build_pop(&self, tx_id: &Digest, since: &Digest) -> Option<ProofOfPublication> {
        let mut pop = self.headers_since(since)?;
        let loc = self.locate(tx_id)?;
        let first = pop.headers.first()?.height;
        if loc.height < first {
            return None;
        }
        pop.inclusion = Some(Inclusion {
            tx_id: *tx_id,
            block_index: (loc.height - first) as usize,
            tx_index: loc.index,
        });
        Some(pop)
    }

    /// State of `adr_v` at the tip, with the other verifiers' digests.
    pub fn state_witness(&self, adr_v: &Address) -> Option<StateWitness> {
        let v = self.verifiers.get(adr_v)?;
        Some(StateWitness {
            verifier: *adr_v,
            cells: v.all_states(),
            others: self
                .verifiers
                .iter()
                .filter(|(a, _)| *a != adr_v)
                .map(|(a, v)| (*a, v.digest()))
                .collect(),
        })
    }

    /// Transaction bodies of every block after `since`.
    pub fn bodies_since(&self, since: &Digest) -> Vec<Transaction> {
        let Some(start) = self.blocks.iter().position(|b| b.hash() == *since) else {
            return Vec::new();
        };
        self.blocks[start + 1..]
            .iter()
            .flat_map(|b| b.txs.iter().cloned())
            .collect()
    }

    /// Committed transactions whose payload names `id_p`.
    pub fn session_txs(&self, id_p: &Digest) -> Vec<(u64, &Transaction, TxStatus)> {
        self.blocks
            .iter()
            .flat_map(|b| {
                b.txs
                    .iter()
                    .zip(&b.statuses)
                    .map(move |(t, s)| (b.height(), t, *s))
            })
            .filter(|(_, t, _)| t.payload.id_p() == Some(*id_p))
            .collect()
    }
}
