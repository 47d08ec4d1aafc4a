//! Proof of publication: a header chain from a trusted checkpoint.

use serde::{Deserialize, Serialize};

use crate::crypto::{hash_parts, verify_sig, Digest, PublicKey, Signature};

use super::tx::Transaction;

pub fn tx_root(ids: &[Digest]) -> Digest {
    let parts: Vec<&[u8]> = ids.iter().map(|d| d.0.as_slice()).collect();
    hash_parts(&parts)
}

pub fn block_hash(parent: &Digest, height: u64, tx_root: &Digest, state_root: &Digest) -> Digest {
    hash_parts(&[&parent.0, &height.to_be_bytes(), &tx_root.0, &state_root.0])
}

/// A block header together with the ids of the block's transactions, so a
/// verifier can check both inclusion and absence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopHeader {
    pub height: u64,
    pub parent: Digest,
    pub tx_ids: Vec<Digest>,
    pub state_root: Digest,
    pub hash: Digest,
    /// The chain authority's signature over `hash`.
    pub signature: Signature,
}

impl PopHeader {
    pub fn is_consistent(&self, authority: &PublicKey) -> bool {
        block_hash(&self.parent, self.height, &tx_root(&self.tx_ids), &self.state_root) == self.hash
            && verify_sig(authority, &self.hash.0, &self.signature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Inclusion {
    pub tx_id: Digest,
    pub block_index: usize,
    pub tx_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofOfPublication {
    pub checkpoint: Digest,
    pub headers: Vec<PopHeader>,
    pub inclusion: Option<Inclusion>,
}

impl ProofOfPublication {
    /// The headers extend `b_cp` one block at a time, each hash is
    /// recomputable and each header is signed by `authority`.
    pub fn verify_chain(&self, b_cp: &Digest, authority: &PublicKey) -> bool {
        if self.checkpoint != *b_cp {
            return false;
        }
        let mut parent = *b_cp;
        let mut height = None;
        for h in &self.headers {
            if h.parent != parent || !h.is_consistent(authority) {
                return false;
            }
            if let Some(prev) = height {
                if h.height != prev + 1 {
                    return false;
                }
            }
            height = Some(h.height);
            parent = h.hash;
        }
        true
    }

    pub fn last_block(&self) -> Digest {
        self.headers.last().map_or(self.checkpoint, |h| h.hash)
    }

    pub fn last_height(&self) -> Option<u64> {
        self.headers.last().map(|h| h.height)
    }

    /// Height of the block holding `id`, if it is covered.
    pub fn height_of(&self, id: &Digest) -> Option<u64> {
        self.headers
            .iter()
            .find(|h| h.tx_ids.contains(id))
            .map(|h| h.height)
    }

    pub fn all_tx_ids(&self) -> impl Iterator<Item = &Digest> {
        self.headers.iter().flat_map(|h| h.tx_ids.iter())
    }

    pub fn last_state_root(&self) -> Option<Digest> {
        self.headers.last().map(|h| h.state_root)
    }
}

pub fn verify_pop(b_cp: &Digest, authority: &PublicKey, tx: &Transaction, pop: &ProofOfPublication) -> bool {
    if !pop.verify_chain(b_cp, authority) {
        return false;
    }
    let Some(inc) = pop.inclusion else {
        return false;
    };
    let id = tx.id();
    inc.tx_id == id
        && pop
            .headers
            .get(inc.block_index)
            .and_then(|h| h.tx_ids.get(inc.tx_index))
            == Some(&id)
}
