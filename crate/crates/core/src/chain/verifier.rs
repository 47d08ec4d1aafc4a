//! The per-contract verifier: state commitments plus the proof check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codegen::{digest_of, VerifierDescriptor};
use crate::crypto::{hash, Address, Ciphertext, Digest};
use crate::interpreter::{CellId, Value};

/// What the chain holds for one state cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoredCell {
    Public(Value),
    Sealed(Ciphertext),
}

/// A state cell and its on-chain content; `None` for a cell never written.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEntry {
    pub cell: CellId,
    pub value: Option<StoredCell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReturnEntry {
    pub name: String,
    pub value: StoredCell,
}

/// `⟨H_F, H_P, Ĥ_Cx, Ĥ_Cs, Ĥ_Cs′, Ĥ_Cr⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proof {
    pub h_f: Digest,
    pub h_p: Digest,
    pub h_cx: Digest,
    pub h_cs: Digest,
    pub h_cs_new: Digest,
    pub h_cr: Digest,
}

impl Proof {
    pub fn fields(&self) -> [Digest; 6] {
        [self.h_f, self.h_p, self.h_cx, self.h_cs, self.h_cs_new, self.h_cr]
    }

    pub fn field_mut(&mut self, i: usize) -> &mut Digest {
        match i {
            0 => &mut self.h_f,
            1 => &mut self.h_p,
            2 => &mut self.h_cx,
            3 => &mut self.h_cs,
            4 => &mut self.h_cs_new,
            _ => &mut self.h_cr,
        }
    }
}

/// `hash(H_Cx)`: the parameter commitments are referenced by their digests.
pub fn hash_cx(h_cx: &[Digest]) -> Digest {
    let mut bytes = Vec::with_capacity(32 * h_cx.len());
    for d in h_cx {
        bytes.extend_from_slice(&d.0);
    }
    hash(&bytes)
}

pub fn hash_states(entries: &[StateEntry]) -> Digest {
    digest_of(&entries)
}

pub fn hash_returns(entries: &[ReturnEntry]) -> Digest {
    digest_of(&entries)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierState {
    pub descriptor: VerifierDescriptor,
    #[serde(with = "crate::interpreter::cell_map")]
    pub current: BTreeMap<CellId, StoredCell>,
}

impl VerifierState {
    pub fn new(descriptor: VerifierDescriptor, initial: Vec<StateEntry>) -> Self {
        let current = initial
            .into_iter()
            .filter_map(|e| e.value.map(|v| (e.cell, v)))
            .collect();
        Self { descriptor, current }
    }

    fn layout_rank(&self, cell: &CellId) -> usize {
        self.descriptor
            .state_layout
            .iter()
            .position(|l| l.var == cell.var)
            .unwrap_or(usize::MAX)
    }

    /// Current commitments of `cells`, in layout order.
    pub fn get_old_states(&self, cells: &[CellId]) -> Vec<StateEntry> {
        let mut cells = cells.to_vec();
        cells.sort_by(|a, b| (self.layout_rank(a), a).cmp(&(self.layout_rank(b), b)));
        cells.dedup();
        cells
            .into_iter()
            .map(|cell| StateEntry {
                value: self.current.get(&cell).cloned(),
                cell,
            })
            .collect()
    }

    /// Every stored cell, in layout order.
    pub fn all_states(&self) -> Vec<StateEntry> {
        let cells: Vec<_> = self.current.keys().cloned().collect();
        self.get_old_states(&cells)
    }

    pub fn digest(&self) -> Digest {
        hash_states(&self.all_states())
    }

    /// Recompute the expected proof from on-chain data and compare. The
    /// content of `c_s` must equal what this verifier currently stores.
    pub fn verify(
        &self,
        proof: &Proof,
        h_cx: &[Digest],
        c_s: &[StateEntry],
        c_s_new: &[StateEntry],
        c_r: &[ReturnEntry],
    ) -> bool {
        let cells: Vec<_> = c_s.iter().map(|e| e.cell.clone()).collect();
        let old = self.get_old_states(&cells);
        if old != c_s {
            return false;
        }
        let expected = Proof {
            h_f: self.descriptor.h_f,
            h_p: self.descriptor.h_p,
            h_cx: hash_cx(h_cx),
            h_cs: hash_states(&old),
            h_cs_new: hash_states(c_s_new),
            h_cr: hash_returns(c_r),
        };
        *proof == expected
    }

    /// Overwrite the listed cells. Only the enclave may do this.
    pub fn set_new_states(&mut self, origin: Address, c_s_new: &[StateEntry]) -> bool {
        if origin != self.descriptor.adr_e {
            return false;
        }
        for e in c_s_new {
            match &e.value {
                Some(v) => self.current.insert(e.cell.clone(), v.clone()),
                None => self.current.remove(&e.cell),
            };
        }
        true
    }
}

/// Commits to every verifier's cells; stored in each block header.
pub fn state_root(verifiers: &BTreeMap<Address, VerifierState>) -> Digest {
    let leaves: Vec<(Address, Digest)> = verifiers.iter().map(|(a, v)| (*a, v.digest())).collect();
    digest_of(&leaves)
}

/// One verifier's full cell list plus the digests of all other verifiers:
/// enough to recompute a header's state root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateWitness {
    pub verifier: Address,
    pub cells: Vec<StateEntry>,
    pub others: Vec<(Address, Digest)>,
}

impl StateWitness {
    pub fn root(&self) -> Digest {
        let mut leaves = self.others.clone();
        leaves.push((self.verifier, hash_states(&self.cells)));
        leaves.sort();
        digest_of(&leaves)
    }

    pub fn current(&self) -> BTreeMap<CellId, StoredCell> {
        self.cells
            .iter()
            .filter_map(|e| e.value.clone().map(|v| (e.cell.clone(), v)))
            .collect()
    }
}
