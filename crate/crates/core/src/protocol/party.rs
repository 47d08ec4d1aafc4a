//! A participant: its keys, its private state openings and the choices its
//! behavior profile makes at each step.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chain::{Payload, ReturnEntry, StateEntry, StoredCell, Transaction};
use crate::codegen::{canonical_json, FunctionPolicy};
use crate::crypto::{encrypt, CommitmentOpening, CryptoError, Digest, KeyPair, PublicKey};
use crate::enclave::{param_roles, Ack, Envelope, InputBundle, ParamRole, PartyParams, SignedProposal};
use crate::interpreter::{cell_map, CellId, Value};

use super::config::{Delays, PartyBehavior};

/// What a party learned from a `TX_com`: every public value plus the
/// slices sealed to its own key.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyOutputs {
    pub returns: BTreeMap<String, Value>,
    #[serde(with = "cell_map")]
    pub state: BTreeMap<CellId, Value>,
}

/// Read one stored value. Sealed values open only for their owner.
pub fn open_stored(keys: &KeyPair, stored: &StoredCell) -> Result<Value, CryptoError> {
    match stored {
        StoredCell::Public(v) => Ok(v.clone()),
        StoredCell::Sealed(ct) => {
            let o = CommitmentOpening::open(keys, ct)?;
            Value::from_bytes(&o.plaintext).ok_or(CryptoError::Decrypt)
        }
    }
}

/// Decrypt the outputs of a `TX_com` that this party may read. Slices
/// sealed to other parties are skipped.
pub fn decrypt_outputs(keys: &KeyPair, c_s_new: &[StateEntry], c_r: &[ReturnEntry]) -> PartyOutputs {
    let readable = |s: &StoredCell| match s {
        StoredCell::Public(_) => true,
        StoredCell::Sealed(ct) => ct.is_for(&keys.pk),
    };
    let mut out = PartyOutputs::default();
    for r in c_r.iter().filter(|r| readable(&r.value)) {
        if let Ok(v) = open_stored(keys, &r.value) {
            out.returns.insert(r.name.clone(), v);
        }
    }
    for e in c_s_new {
        if let Some(s) = e.value.as_ref().filter(|s| readable(s)) {
            if let Ok(v) = open_stored(keys, s) {
                out.state.insert(e.cell.clone(), v);
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
struct Session {
    id_p: Digest,
    x: CommitmentOpening,
    params: PartyParams,
}

#[derive(Debug, Clone)]
pub struct PartyClient {
    pub index: usize,
    pub keys: KeyPair,
    pub behavior: PartyBehavior,
    pub delays: Delays,
    pub deposit: u64,
    params: PartyParams,
    /// Openings of the sealed cells this party owns on chain.
    wallet: BTreeMap<CellId, CommitmentOpening>,
    session: Option<Session>,
    nonce: u64,
    pub outputs: Option<PartyOutputs>,
    pub responded: bool,
    pub claimed: bool,
}

impl PartyClient {
    pub fn new(index: usize, keys: KeyPair, behavior: PartyBehavior, delays: Delays, deposit: u64, params: PartyParams) -> Self {
        Self {
            index,
            keys,
            behavior,
            delays,
            deposit,
            params,
            wallet: BTreeMap::new(),
            session: None,
            nonce: 0,
            outputs: None,
            responded: false,
            claimed: false,
        }
    }

    pub fn tx(&mut self, payload: Payload) -> Transaction {
        self.nonce += 1;
        Transaction::new(&self.keys, self.nonce, payload)
    }

    /// Seal an initial private cell for publication and keep its opening.
    pub fn seal_initial(&mut self, cell: CellId, v: &Value, r: [u8; 32]) -> StateEntry {
        let o = CommitmentOpening::new(v.to_bytes(), r);
        let entry = StateEntry {
            cell: cell.clone(),
            value: Some(StoredCell::Sealed(o.commit(&self.keys.pk))),
        };
        self.wallet.insert(cell, o);
        entry
    }

    pub fn wallet_value(&self, cell: &CellId) -> Option<Value> {
        self.wallet.get(cell).and_then(|o| Value::from_bytes(&o.plaintext))
    }

    /// Acknowledge a proposal signed by the attested enclave. Every
    /// profile acknowledges; they differ later.
    pub fn acknowledge(&mut self, sp: &SignedProposal, pk_e: &PublicKey, fp: &FunctionPolicy, r: [u8; 32]) -> Option<Ack> {
        if !sp.verify(pk_e) {
            return None;
        }
        let (ack, x) = Ack::create(&self.keys, sp.id_p, fp, &self.params, r);
        self.session = Some(Session {
            id_p: sp.id_p,
            x,
            params: self.params.clone(),
        });
        self.responded = false;
        self.claimed = false;
        self.outputs = None;
        Some(ack)
    }

    pub fn session_id(&self) -> Option<Digest> {
        self.session.as_ref().map(|s| s.id_p)
    }

    fn bundle(&self, fp: &FunctionPolicy) -> Option<InputBundle> {
        let s = self.session.as_ref()?;
        let mut x = s.x.clone();
        if self.behavior == PartyBehavior::MismatchedInputs {
            x = mismatch(fp, &s.params, x);
        }
        Some(InputBundle {
            id_p: s.id_p,
            params: x,
            states: self.wallet.iter().map(|(c, o)| (c.clone(), o.clone())).collect(),
        })
    }

    /// Inputs for the enclave over the secure channel, if this profile
    /// sends them.
    pub fn input_envelope(&self, fp: &FunctionPolicy, pk_e: &PublicKey, r: [u8; 32]) -> Option<Envelope> {
        if !self.behavior.sends_inputs() {
            return None;
        }
        let b = self.bundle(fp)?;
        Some(Envelope::seal(&self.keys, pk_e, b.id_p, "inputs", &b.to_bytes(), r))
    }

    /// `TX_res`: the inputs encrypted to the enclave, if this profile
    /// answers challenges.
    pub fn response(&mut self, fp: &FunctionPolicy, pk_e: &PublicKey, r: [u8; 32]) -> Option<Transaction> {
        if self.responded || !self.behavior.responds() {
            return None;
        }
        let b = self.bundle(fp)?;
        self.responded = true;
        let inputs = encrypt(pk_e, &b.to_bytes(), &r);
        Some(self.tx(Payload::Response { id_p: b.id_p, inputs }))
    }

    pub fn timeout_claim(&mut self) -> Option<Transaction> {
        if self.claimed || !self.behavior.claims_timeout() {
            return None;
        }
        let id_p = self.session_id()?;
        self.claimed = true;
        Some(self.tx(Payload::Timeout { id_p }))
    }

    /// Take in a confirmed `TX_com`: decrypt what is ours and replace the
    /// openings of cells that changed.
    pub fn absorb_completion(&mut self, c_s_new: &[StateEntry], c_r: &[ReturnEntry]) {
        for e in c_s_new {
            match &e.value {
                Some(StoredCell::Sealed(ct)) if ct.is_for(&self.keys.pk) => {
                    if let Ok(o) = CommitmentOpening::open(&self.keys, ct) {
                        self.wallet.insert(e.cell.clone(), o);
                    }
                }
                _ => {
                    self.wallet.remove(&e.cell);
                }
            }
        }
        self.outputs = Some(decrypt_outputs(&self.keys, c_s_new, c_r));
    }
}

/// Inputs that do not match the commitment: bump the first private value
/// this party supplies, or corrupt the randomness if it supplies none.
fn mismatch(fp: &FunctionPolicy, params: &PartyParams, mut x: CommitmentOpening) -> CommitmentOpening {
    let private = param_roles(fp)
        .into_iter()
        .find(|(n, r)| matches!(r, ParamRole::Element { .. } | ParamRole::Private) && params.contains_key(n));
    match private.and_then(|(n, _)| params.get(&n).map(|v| (n, v.clone()))) {
        Some((n, Value::Uint(u))) => {
            let mut p = params.clone();
            p.insert(n, Value::Uint(u.overflowing_add(1.into()).0));
            x.plaintext = canonical_json(&p);
        }
        _ => x.randomness[0] ^= 1,
    }
    x
}
