//! The simulated enclave program.
//!
//! The enclave holds the only copy of its secret key, binds deployed
//! contracts to their on-chain verifiers, settles proposals, checks party
//! inputs against their commitments, runs the private contract and emits the
//! transactions that move collateral. Every session is keyed by `id_p` and
//! isolated from the others.
//!
//! Chain data reaches the enclave only through the untrusted host, so every
//! view comes with a proof of publication from a checkpoint the enclave has
//! already verified, and state is checked against the header state root.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{
    hash_cx, hash_returns, hash_states, verifier_address, verify_pop, Payload, Proof,
    ProofOfPublication, ReturnEntry, SettledProposal, StateEntry, StateWitness, StoredCell,
    Transaction, VerifierState,
};
use crate::codegen::{
    canonical_json, digest_of, state_layout, ContractPolicy, FunctionPolicy, VerifierDescriptor,
};
use crate::crypto::{
    decrypt, encrypt, hash, hash_parts, keygen, keygen_labeled, sign, verify_sig, Address,
    Ciphertext, CommitmentOpening, Digest, KeyPair, PublicKey, Signature,
};
use crate::frontend::{ContractAst, DataType, OwnerAtom};
use crate::interpreter::{
    exec_function, partition_outputs, CellId, ExecConfig, Partition, StateStore, Value,
};
use crate::typecheck::FunctionKind;

/// Identifies the enclave program; parties compare it against the report.
pub fn measurement() -> Digest {
    hash(b"cloak/enclave-program/1")
}

fn issuer_keys() -> KeyPair {
    keygen_labeled("cloak/attestation-issuer", 0)
}

/// Public key of the simulated attestation service.
pub fn issuer_key() -> PublicKey {
    issuer_keys().pk
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttestationReport {
    pub pk_e: PublicKey,
    pub measurement: Digest,
    pub signature: Signature,
}

impl AttestationReport {
    fn message(pk_e: &PublicKey, measurement: &Digest) -> Digest {
        hash_parts(&[b"cloak/attestation", &pk_e.0, &measurement.0])
    }

    pub fn verify(&self, issuer: &PublicKey) -> bool {
        self.measurement == measurement()
            && verify_sig(issuer, &Self::message(&self.pk_e, &self.measurement).0, &self.signature)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclaveConfig {
    /// Inclusive bounds for the response window, in blocks.
    pub tau_res: (u64, u64),
    /// Inclusive bounds for the completion window, in blocks.
    pub tau_com: (u64, u64),
    /// Minimum distance between the two windows.
    pub min_gap: u64,
    pub step_budget: u64,
}

impl Default for EnclaveConfig {
    fn default() -> Self {
        Self {
            tau_res: (5, 20),
            tau_com: (20, 60),
            min_gap: 5,
            step_budget: 1_000_000,
        }
    }
}

/// Settlement predicates. These two are the only ones supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettlementPolicy {
    pub require_all_inputs: bool,
    pub min_parties: usize,
}

impl Default for SettlementPolicy {
    fn default() -> Self {
        Self {
            require_all_inputs: true,
            min_parties: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub adr_v: Address,
    pub f: String,
    pub q: u64,
    /// Last block height at which acknowledgements are accepted.
    pub t_n: u64,
    #[serde(default)]
    pub settlement: SettlementPolicy,
}

/// `⟨id_p, p⟩` signed by the enclave, broadcast to prospective parties.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedProposal {
    pub id_p: Digest,
    pub proposer: Address,
    pub proposal: Proposal,
    pub signature: Signature,
}

impl SignedProposal {
    fn message(id_p: &Digest, proposer: &Address, p: &Proposal) -> Digest {
        digest_of(&(id_p, proposer, p))
    }

    pub fn verify(&self, pk_e: &PublicKey) -> bool {
        verify_sig(
            pk_e,
            &Self::message(&self.id_p, &self.proposer, &self.proposal).0,
            &self.signature,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SessionStatus {
    #[serde(rename = "GENERATEIDP")]
    GenerateIdp,
    #[serde(rename = "SETTLE")]
    Settle,
    #[serde(rename = "EXECUTE")]
    Execute,
    #[serde(rename = "COMPLETE")]
    Complete,
    #[serde(rename = "ABORT")]
    Abort,
}

impl SessionStatus {
    pub fn can_move_to(self, next: SessionStatus) -> bool {
        use SessionStatus::*;
        matches!(
            (self, next),
            (GenerateIdp, Settle) | (Settle, Execute) | (Execute, Complete) | (Settle, Abort)
        )
    }
}

/// A party's own parameter values, by parameter name. Element parameters
/// (`bids` for `uint[@p] bids`) carry the party's single element.
pub type PartyParams = BTreeMap<String, Value>;

/// How one function parameter is assembled from the parties' inputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamRole {
    /// `address[!tag]`: the addresses of the parties contributing `tag`
    /// elements, in settlement order.
    PartyList { tag: String },
    /// An array whose elements are owned by `tag`: one element per
    /// contributor.
    Element { tag: String },
    /// A public value every party supplies identically.
    Shared,
    /// A private value supplied by exactly one party.
    Private,
}

pub fn param_roles(fp: &FunctionPolicy) -> Vec<(String, ParamRole)> {
    let list_tags: BTreeSet<&str> = fp
        .params
        .iter()
        .filter_map(|p| match &p.ty.data {
            DataType::NamedAddressArray { tag } => Some(tag.as_str()),
            _ => None,
        })
        .collect();
    fp.params
        .iter()
        .map(|p| {
            let role = match &p.ty.data {
                DataType::NamedAddressArray { tag } => ParamRole::PartyList { tag: tag.clone() },
                DataType::Array { elem } => match &elem.owner {
                    OwnerAtom::Named(t) if list_tags.contains(t.as_str()) => {
                        ParamRole::Element { tag: t.clone() }
                    }
                    OwnerAtom::All if p.ty.owner.is_all() => ParamRole::Shared,
                    _ => ParamRole::Private,
                },
                _ if p.ty.owner.is_all() => ParamRole::Shared,
                _ => ParamRole::Private,
            };
            (p.id.clone(), role)
        })
        .collect()
}

/// The type of what one party supplies for `name`: a single element for
/// element parameters, the whole value otherwise.
pub fn supplied_type(fp: &FunctionPolicy, name: &str) -> Option<DataType> {
    let role = param_roles(fp).into_iter().find(|(n, _)| n == name)?.1;
    match (&fp.param(name)?.ty.data, role) {
        (DataType::Array { elem }, ParamRole::Element { .. }) => Some(elem.data.clone()),
        (d, _) => Some(d.clone()),
    }
}

/// `ACK_i = ⟨id_p, C_xi⟩` plus the public part of the party's parameters
/// and the names of the private ones it supplies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub id_p: Digest,
    pub party_pk: PublicKey,
    pub c_x: Ciphertext,
    pub public: BTreeMap<String, Value>,
    pub supplies: BTreeSet<String>,
    pub signature: Signature,
}

impl Ack {
    fn message(
        id_p: &Digest,
        party_pk: &PublicKey,
        c_x: &Ciphertext,
        public: &BTreeMap<String, Value>,
        supplies: &BTreeSet<String>,
    ) -> Digest {
        digest_of(&(id_p, party_pk, c_x, public, supplies))
    }

    /// Commit to `params` under the party's own key and sign the ack.
    /// Returns the ack and the opening the party must keep.
    pub fn create(
        keys: &KeyPair,
        id_p: Digest,
        fp: &FunctionPolicy,
        params: &PartyParams,
        randomness: [u8; 32],
    ) -> (Ack, CommitmentOpening) {
        let roles: BTreeMap<_, _> = param_roles(fp).into_iter().collect();
        let mut public = BTreeMap::new();
        let mut supplies = BTreeSet::new();
        for (k, v) in params {
            if roles.get(k) == Some(&ParamRole::Shared) {
                public.insert(k.clone(), v.clone());
            } else {
                supplies.insert(k.clone());
            }
        }
        let opening = CommitmentOpening::new(canonical_json(params), randomness);
        let c_x = opening.commit(&keys.pk);
        let m = Self::message(&id_p, &keys.pk, &c_x, &public, &supplies);
        let ack = Ack {
            id_p,
            party_pk: keys.pk,
            c_x,
            public,
            supplies,
            signature: sign(keys, &m.0),
        };
        (ack, opening)
    }

    pub fn party(&self) -> Address {
        self.party_pk.address()
    }

    pub fn verify(&self) -> bool {
        let m = Self::message(&self.id_p, &self.party_pk, &self.c_x, &self.public, &self.supplies);
        verify_sig(&self.party_pk, &m.0, &self.signature)
    }
}

/// What a party hands the enclave at execution: openings of its parameter
/// commitment and of every state cell it owns.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputBundle {
    pub id_p: Digest,
    pub params: CommitmentOpening,
    pub states: Vec<(CellId, CommitmentOpening)>,
}

impl InputBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        canonical_json(self)
    }

    pub fn from_bytes(b: &[u8]) -> Option<Self> {
        serde_json::from_slice(b).ok()
    }
}

/// A message on the simulated secure channel: the body is encrypted to the
/// recipient and the envelope is signed by the sender.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Envelope {
    pub to: Address,
    pub from: Address,
    pub from_pk: PublicKey,
    pub session: Digest,
    pub kind: String,
    pub body: Ciphertext,
    pub signature: Signature,
}

impl Envelope {
    fn message(&self) -> Digest {
        digest_of(&(&self.to, &self.from_pk, &self.session, &self.kind, &self.body))
    }

    pub fn seal(
        from: &KeyPair,
        to: &PublicKey,
        session: Digest,
        kind: &str,
        plaintext: &[u8],
        randomness: [u8; 32],
    ) -> Self {
        let mut env = Envelope {
            to: to.address(),
            from: from.addr,
            from_pk: from.pk,
            session,
            kind: kind.to_string(),
            body: encrypt(to, plaintext, &randomness),
            signature: Signature([0; 64]),
        };
        env.signature = sign(from, &env.message().0);
        env
    }

    pub fn verify(&self) -> bool {
        self.from_pk.address() == self.from
            && verify_sig(&self.from_pk, &self.message().0, &self.signature)
    }

    pub fn open(&self, keys: &KeyPair) -> Result<Vec<u8>, EnclaveError> {
        if self.to != keys.addr || !self.verify() {
            return Err(EnclaveError::Channel("envelope not addressed to us or badly signed".into()));
        }
        decrypt(keys, &self.body).map_err(|e| EnclaveError::Channel(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnclaveError {
    #[error("binding mismatch: {0}")]
    BindingMismatch(String),
    #[error("no contract bound at that verifier")]
    UnknownDeployment,
    #[error("unknown session")]
    UnknownSession,
    #[error("session is {found:?}, expected {expected:?}")]
    BadStatus {
        expected: SessionStatus,
        found: SessionStatus,
    },
    #[error("negotiation deadline {t_n} passed (now {now})")]
    Timeout { now: u64, t_n: u64 },
    #[error("settlement policy not met: {0}")]
    PolicyUnmet(String),
    #[error("no acknowledgement carried a valid signature")]
    BadAckSignature,
    #[error("proof of publication rejected: {0}")]
    BadPoP(String),
    #[error("secure channel: {0}")]
    Channel(String),
}

/// Host-supplied chain view for execution: the settled `TX_p`, a proof of
/// its publication and the verifier state at the last covered block.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecView {
    pub tx_p: Transaction,
    pub pop: ProofOfPublication,
    pub state: StateWitness,
}

/// Host-supplied chain view for adjudication: every block from the
/// settlement block through the end of the response window, with bodies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowView {
    pub pop: ProofOfPublication,
    pub bodies: Vec<Transaction>,
    pub state: StateWitness,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecOutcome {
    /// Outputs are sealed inside the enclave; `emit_complete` publishes them.
    Executed,
    /// Parties whose inputs were missing or inconsistent.
    Misbehaving(BTreeSet<Address>),
    /// Consistent inputs, but the contract itself failed. The session is
    /// aborted with a punishment that names nobody, so all collateral
    /// returns.
    Aborted { reason: String, tx_pns: Transaction },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Adjudication {
    /// Every challenged party answered correctly; execute again.
    Resume,
    Punish(Transaction),
}

#[derive(Debug, Clone)]
struct Binding {
    f: ContractAst,
    policy: ContractPolicy,
    descriptor: VerifierDescriptor,
    adr_f: Address,
}

#[derive(Debug, Clone)]
struct PartyEntry {
    addr: Address,
    pk: PublicKey,
    h_cx: Digest,
    ack: Ack,
}

#[derive(Debug, Clone)]
struct Outputs {
    c_s: Vec<StateEntry>,
    c_s_new: Vec<StateEntry>,
    c_r: Vec<ReturnEntry>,
    proof: Proof,
}

#[derive(Debug, Clone)]
struct Session {
    proposal: Proposal,
    proposer: Address,
    status: SessionStatus,
    parties: Vec<PartyEntry>,
    tx_p: Option<Digest>,
    h_cp: Option<u64>,
    /// Verified inputs, by party.
    collected: BTreeMap<Address, InputBundle>,
    p_m: BTreeSet<Address>,
    challenged: BTreeSet<Address>,
    outputs: Option<Outputs>,
    transitions: Vec<(SessionStatus, SessionStatus)>,
}

impl Session {
    fn expect(&self, expected: SessionStatus) -> Result<(), EnclaveError> {
        if self.status != expected {
            return Err(EnclaveError::BadStatus {
                expected,
                found: self.status,
            });
        }
        Ok(())
    }

    fn move_to(&mut self, next: SessionStatus) {
        assert!(
            self.status.can_move_to(next),
            "illegal transition {:?} -> {next:?}",
            self.status
        );
        self.transitions.push((self.status, next));
        self.status = next;
    }

    fn party(&self, a: &Address) -> Option<&PartyEntry> {
        self.parties.iter().find(|p| p.addr == *a)
    }

    fn ordered(&self, set: &BTreeSet<Address>) -> Vec<Address> {
        self.parties
            .iter()
            .map(|p| p.addr)
            .filter(|a| set.contains(a))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Owner {
    Public,
    Enclave,
    Party(Address),
    Unknown,
}

fn cell_owner(policy: &ContractPolicy, cell: &CellId, state: &BTreeMap<CellId, StoredCell>, caller: Address) -> Owner {
    let Some(dp) = policy.state(&cell.var) else {
        return Owner::Unknown;
    };
    let (atom, tag) = match &dp.ty.data {
        DataType::NamedMapping { tag, value } => (&value.owner, Some(tag.as_str())),
        DataType::Mapping { value, .. } => (&value.owner, None),
        _ => (&dp.ty.owner, None),
    };
    let addr = match atom {
        OwnerAtom::All => return Owner::Public,
        OwnerAtom::Tee => return Owner::Enclave,
        OwnerAtom::Me => Some(caller),
        OwnerAtom::Named(n) if Some(n.as_str()) == tag => cell.keys.first().and_then(Value::as_address),
        OwnerAtom::Named(n) => match state.get(&CellId::scalar(n)) {
            Some(StoredCell::Public(v)) => v.as_address(),
            _ => None,
        },
    };
    match addr {
        Some(a) if !a.is_zero() => Owner::Party(a),
        _ => Owner::Unknown,
    }
}

#[derive(Clone)]
pub struct Enclave {
    keys: KeyPair,
    rng: ChaCha20Rng,
    cfg: EnclaveConfig,
    tau_res: u64,
    tau_com: u64,
    authority: PublicKey,
    /// Every header hash verified so far, with its height.
    known: BTreeMap<Digest, u64>,
    b_cp: Digest,
    deployments: BTreeMap<Address, Binding>,
    sessions: BTreeMap<Digest, Session>,
    nonce: u64,
}

impl std::fmt::Debug for Enclave {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Enclave")
            .field("addr", &self.keys.addr)
            .field("tau_res", &self.tau_res)
            .field("tau_com", &self.tau_com)
            .field("b_cp", &self.b_cp)
            .field("sessions", &self.sessions.len())
            .finish_non_exhaustive()
    }
}

impl Enclave {
    /// Create the enclave's keys and window parameters from `seed`. The
    /// genesis hash of the chain and its block authority are the trust
    /// anchors for every later proof of publication.
    pub fn setup(seed: &[u8; 32], genesis: Digest, authority: PublicKey, cfg: EnclaveConfig) -> (Self, AttestationReport) {
        let keys = keygen(&hash_parts(&[b"cloak/enclave-keys", seed]).0);
        let mut rng = ChaCha20Rng::from_seed(hash_parts(&[b"cloak/enclave-rng", seed]).0);
        let tau_res = rng.gen_range(cfg.tau_res.0..=cfg.tau_res.1);
        let com_lo = cfg.tau_com.0.max(tau_res + cfg.min_gap);
        let tau_com = rng.gen_range(com_lo..=cfg.tau_com.1.max(com_lo));
        let m = measurement();
        let report = AttestationReport {
            pk_e: keys.pk,
            measurement: m,
            signature: sign(&issuer_keys(), &AttestationReport::message(&keys.pk, &m).0),
        };
        let enclave = Enclave {
            keys,
            rng,
            cfg,
            tau_res,
            tau_com,
            authority,
            known: BTreeMap::from([(genesis, 0)]),
            b_cp: genesis,
            deployments: BTreeMap::new(),
            sessions: BTreeMap::new(),
            nonce: 0,
        };
        (enclave, report)
    }

    /// Fold extra entropy into the runtime generator. Keys and windows are
    /// already fixed by `setup`; only later randomness (id_p, sealing) moves.
    pub fn mix_entropy(&mut self, entropy: &[u8]) {
        let seed = hash_parts(&[b"cloak/enclave-rng", &self.rng.get_seed(), entropy]);
        self.rng = ChaCha20Rng::from_seed(seed.0);
    }

    pub fn public_key(&self) -> PublicKey {
        self.keys.pk
    }

    pub fn address(&self) -> Address {
        self.keys.addr
    }

    pub fn tau_res(&self) -> u64 {
        self.tau_res
    }

    pub fn tau_com(&self) -> u64 {
        self.tau_com
    }

    pub fn config(&self) -> &EnclaveConfig {
        &self.cfg
    }

    /// Latest verified block.
    pub fn checkpoint(&self) -> Digest {
        self.b_cp
    }

    pub fn checkpoint_height(&self) -> u64 {
        self.known[&self.b_cp]
    }

    /// The highest verified block strictly below `height`, for building a
    /// proof that must cover that height.
    pub fn checkpoint_below(&self, height: u64) -> Option<Digest> {
        self.known
            .iter()
            .filter(|(_, h)| **h < height)
            .max_by_key(|(_, h)| **h)
            .map(|(d, _)| *d)
    }

    pub fn status(&self, id_p: &Digest) -> Option<SessionStatus> {
        self.sessions.get(id_p).map(|s| s.status)
    }

    pub fn transitions(&self, id_p: &Digest) -> &[(SessionStatus, SessionStatus)] {
        self.sessions.get(id_p).map_or(&[], |s| &s.transitions)
    }

    pub fn session_parties(&self, id_p: &Digest) -> Option<Vec<Address>> {
        self.sessions
            .get(id_p)
            .map(|s| s.parties.iter().map(|p| p.addr).collect())
    }

    /// `adr_F` of the contract bound to `adr_v`.
    pub fn deployment(&self, adr_v: &Address) -> Option<Address> {
        self.deployments.get(adr_v).map(|b| b.adr_f)
    }

    pub fn misbehaving(&self, id_p: &Digest) -> Option<&BTreeSet<Address>> {
        self.sessions.get(id_p).map(|s| &s.p_m)
    }

    fn random32(&mut self) -> [u8; 32] {
        let mut r = [0u8; 32];
        self.rng.fill_bytes(&mut r);
        r
    }

    fn sign_tx(&mut self, payload: Payload) -> Transaction {
        self.nonce += 1;
        Transaction::new(&self.keys, self.nonce, payload)
    }

    fn session(&self, id_p: &Digest) -> Result<&Session, EnclaveError> {
        self.sessions.get(id_p).ok_or(EnclaveError::UnknownSession)
    }

    fn session_mut(&mut self, id_p: &Digest) -> Result<&mut Session, EnclaveError> {
        self.sessions.get_mut(id_p).ok_or(EnclaveError::UnknownSession)
    }

    /// Check the header chain of `pop` from a known checkpoint and remember
    /// its headers. The latest checkpoint only ever moves forward.
    fn absorb(&mut self, pop: &ProofOfPublication) -> Result<(), EnclaveError> {
        if !self.known.contains_key(&pop.checkpoint) {
            return Err(EnclaveError::BadPoP("checkpoint is not a verified block".into()));
        }
        if !pop.verify_chain(&pop.checkpoint, &self.authority) {
            return Err(EnclaveError::BadPoP("header chain does not verify".into()));
        }
        for h in &pop.headers {
            self.known.insert(h.hash, h.height);
        }
        if let Some(last) = pop.headers.last() {
            if last.height > self.known[&self.b_cp] {
                self.b_cp = last.hash;
            }
        }
        Ok(())
    }

    fn check_witness(pop: &ProofOfPublication, w: &StateWitness, adr_v: Address) -> Result<(), EnclaveError> {
        if w.verifier != adr_v || Some(w.root()) != pop.last_state_root() {
            return Err(EnclaveError::BadPoP("state witness does not match the state root".into()));
        }
        Ok(())
    }

    /// Bind `f` and `policy` to the verifier created by `deploy_tx`.
    pub fn deploy(
        &mut self,
        f: &ContractAst,
        policy: &ContractPolicy,
        adr_v: Address,
        deploy_tx: &Transaction,
        pop: &ProofOfPublication,
    ) -> Result<Address, EnclaveError> {
        if !self.known.contains_key(&pop.checkpoint) || !verify_pop(&pop.checkpoint, &self.authority, deploy_tx, pop) {
            return Err(EnclaveError::BadPoP("deployment is not published".into()));
        }
        let Payload::DeployVerifier { descriptor, .. } = &deploy_tx.payload else {
            return Err(EnclaveError::BindingMismatch("not a verifier deployment".into()));
        };
        if verifier_address(&deploy_tx.id()) != adr_v {
            return Err(EnclaveError::BindingMismatch("verifier address".into()));
        }
        if digest_of(f) != descriptor.h_f {
            return Err(EnclaveError::BindingMismatch("H_F".into()));
        }
        if digest_of(policy) != descriptor.h_p {
            return Err(EnclaveError::BindingMismatch("H_P".into()));
        }
        if descriptor.adr_e != self.keys.addr {
            return Err(EnclaveError::BindingMismatch("verifier trusts another enclave".into()));
        }
        if state_layout(f) != descriptor.state_layout {
            return Err(EnclaveError::BindingMismatch("state layout".into()));
        }
        self.absorb(pop)?;
        let adr_f_digest = hash_parts(&[b"cloak/adr_f", &adr_v.0, &descriptor.h_f.0, &descriptor.h_p.0]);
        let adr_f = Address(adr_f_digest.0[12..].try_into().expect("20 bytes"));
        self.deployments.insert(
            adr_v,
            Binding {
                f: f.clone(),
                policy: policy.clone(),
                descriptor: descriptor.clone(),
                adr_f,
            },
        );
        Ok(adr_f)
    }

    pub fn generate_idp(&mut self, proposer: Address, p: Proposal) -> Result<SignedProposal, EnclaveError> {
        let binding = self.deployments.get(&p.adr_v).ok_or(EnclaveError::UnknownDeployment)?;
        match binding.policy.function(&p.f) {
            Some(fp) if fp.kind == FunctionKind::Mpt => {}
            Some(_) => return Err(EnclaveError::PolicyUnmet(format!("'{}' is not an MPT", p.f))),
            None => return Err(EnclaveError::PolicyUnmet(format!("no function '{}'", p.f))),
        }
        let id_p = Digest(self.random32());
        let signature = sign(&self.keys, &SignedProposal::message(&id_p, &proposer, &p).0);
        self.sessions.insert(
            id_p,
            Session {
                proposal: p.clone(),
                proposer,
                status: SessionStatus::GenerateIdp,
                parties: Vec::new(),
                tx_p: None,
                h_cp: None,
                collected: BTreeMap::new(),
                p_m: BTreeSet::new(),
                challenged: BTreeSet::new(),
                outputs: None,
                transitions: Vec::new(),
            },
        );
        Ok(SignedProposal {
            id_p,
            proposer,
            proposal: p,
            signature,
        })
    }

    /// Fix the party set from the acknowledgements, in arrival order, and
    /// emit `TX_p`. Acks with a bad signature, for another session, from an
    /// unregistered key or repeated are dropped before the policy check.
    pub fn settle(
        &mut self,
        id_p: &Digest,
        acks: &[Ack],
        registered: &BTreeMap<Address, PublicKey>,
        now: u64,
    ) -> Result<Transaction, EnclaveError> {
        let s = self.session(id_p)?;
        s.expect(SessionStatus::GenerateIdp)?;
        if now > s.proposal.t_n {
            return Err(EnclaveError::Timeout {
                now,
                t_n: s.proposal.t_n,
            });
        }
        let binding = self
            .deployments
            .get(&s.proposal.adr_v)
            .ok_or(EnclaveError::UnknownDeployment)?;
        let fp = binding.policy.function(&s.proposal.f).expect("checked at generateIDp");

        let mut accepted: Vec<&Ack> = Vec::new();
        let mut bad_sig = false;
        for ack in acks {
            if !ack.verify() {
                tracing::debug!(party = %ack.party(), "ack dropped: bad signature");
                bad_sig = true;
                continue;
            }
            let a = ack.party();
            if ack.id_p != *id_p || registered.get(&a) != Some(&ack.party_pk) || accepted.iter().any(|x| x.party() == a) {
                tracing::debug!(party = %a, "ack dropped");
                continue;
            }
            accepted.push(ack);
        }
        if accepted.is_empty() && bad_sig {
            return Err(EnclaveError::BadAckSignature);
        }
        meet_policy(fp, &accepted, &s.proposal.settlement).map_err(EnclaveError::PolicyUnmet)?;

        let parties: Vec<PartyEntry> = accepted
            .iter()
            .map(|a| PartyEntry {
                addr: a.party(),
                pk: a.party_pk,
                h_cx: a.c_x.digest(),
                ack: (*a).clone(),
            })
            .collect();
        let proposal = SettledProposal {
            adr_v: s.proposal.adr_v,
            f: s.proposal.f.clone(),
            parties: parties.iter().map(|p| p.addr).collect(),
            h_cx: parties.iter().map(|p| p.h_cx).collect(),
            q: s.proposal.q,
        };
        let (tau_res, tau_com) = (self.tau_res, self.tau_com);
        let tx = self.sign_tx(Payload::Propose {
            id_p: *id_p,
            proposal,
            tau_res,
            tau_com,
        });
        let s = self.session_mut(id_p)?;
        s.parties = parties;
        s.tx_p = Some(tx.id());
        s.move_to(SessionStatus::Settle);
        Ok(tx)
    }

    /// Check each party's inputs against its commitments and, if all are
    /// consistent, run the contract. `inputs` are added to whatever the
    /// session already holds.
    pub fn execute_mpt(&mut self, id_p: &Digest, inputs: &[Envelope], view: &ExecView) -> Result<ExecOutcome, EnclaveError> {
        let s = self.session(id_p)?;
        s.expect(SessionStatus::Settle)?;
        let tx_p_id = s.tx_p.expect("settled sessions have TX_p");
        let adr_v = s.proposal.adr_v;
        if view.tx_p.id() != tx_p_id {
            return Err(EnclaveError::BadPoP("not this session's TX_p".into()));
        }
        if !self.known.contains_key(&view.pop.checkpoint)
            || !verify_pop(&view.pop.checkpoint, &self.authority, &view.tx_p, &view.pop)
        {
            return Err(EnclaveError::BadPoP("TX_p is not published".into()));
        }
        Self::check_witness(&view.pop, &view.state, adr_v)?;
        self.absorb(&view.pop)?;
        let h_cp = view.pop.height_of(&tx_p_id).expect("inclusion verified");
        let chain_state = view.state.current();

        // Open the envelopes; anything unreadable counts as not sent.
        let mut fresh = Vec::new();
        for env in inputs {
            if env.session != *id_p {
                continue;
            }
            match env.open(&self.keys).ok().and_then(|b| InputBundle::from_bytes(&b)) {
                Some(bundle) if bundle.id_p == *id_p => fresh.push((env.from, bundle)),
                _ => tracing::debug!(from = %env.from, "unreadable input envelope"),
            }
        }

        let binding = &self.deployments[&adr_v];
        let s = self.sessions.get_mut(id_p).expect("checked");
        s.h_cp = Some(h_cp);
        for (from, bundle) in fresh {
            if s.party(&from).is_some() {
                s.collected.insert(from, bundle);
            }
        }
        let fp = binding.policy.function(&s.proposal.f).expect("bound function");
        let mut p_m = BTreeSet::new();
        let mut params_by_party = BTreeMap::new();
        for p in &s.parties {
            let checked = s
                .collected
                .get(&p.addr)
                .and_then(|b| check_bundle(&binding.policy, fp, p, b, &chain_state, s.proposer));
            match checked {
                Some(params) => {
                    params_by_party.insert(p.addr, params);
                }
                None => {
                    p_m.insert(p.addr);
                }
            }
        }
        if !p_m.is_empty() {
            s.collected.retain(|a, _| !p_m.contains(a));
            s.p_m = p_m.clone();
            return Ok(ExecOutcome::Misbehaving(p_m));
        }
        s.p_m.clear();

        let budget = self.cfg.step_budget;
        let result = run_contract(&self.keys, binding, s, fp, &params_by_party, &chain_state, &view.state, budget);
        match result {
            Ok(plan) => {
                let outputs = self.seal_outputs(id_p, plan);
                let s = self.sessions.get_mut(id_p).expect("checked");
                s.outputs = Some(outputs);
                s.move_to(SessionStatus::Execute);
                Ok(ExecOutcome::Executed)
            }
            Err(reason) => {
                tracing::info!(%reason, "contract execution failed; aborting without blame");
                let tx_pns = self.sign_tx(Payload::Punish {
                    id_p: *id_p,
                    malicious: Vec::new(),
                });
                let s = self.sessions.get_mut(id_p).expect("checked");
                s.move_to(SessionStatus::Abort);
                Ok(ExecOutcome::Aborted { reason, tx_pns })
            }
        }
    }

    /// Encrypt every private output to its owner with fresh randomness and
    /// bind the result into the proof.
    fn seal_outputs(&mut self, id_p: &Digest, plan: OutputPlan) -> Outputs {
        let mut c_s_new = BTreeMap::new();
        for (cell, (rcpt, v)) in plan.writes {
            let stored = self.store(rcpt, &v);
            c_s_new.insert(cell, stored);
        }
        let c_r: Vec<ReturnEntry> = plan
            .returns
            .into_iter()
            .map(|(name, rcpt, v)| ReturnEntry {
                value: self.store(rcpt, &v),
                name,
            })
            .collect();
        let s = &self.sessions[id_p];
        let binding = &self.deployments[&s.proposal.adr_v];
        let c_s_new = VerifierState {
            descriptor: binding.descriptor.clone(),
            current: c_s_new,
        }
        .all_states();
        let h_cx: Vec<Digest> = s.parties.iter().map(|p| p.h_cx).collect();
        let proof = Proof {
            h_f: binding.descriptor.h_f,
            h_p: binding.descriptor.h_p,
            h_cx: hash_cx(&h_cx),
            h_cs: hash_states(&plan.c_s),
            h_cs_new: hash_states(&c_s_new),
            h_cr: hash_returns(&c_r),
        };
        Outputs {
            c_s: plan.c_s,
            c_s_new,
            c_r,
            proof,
        }
    }

    fn store(&mut self, rcpt: Rcpt, v: &Value) -> StoredCell {
        match rcpt {
            Rcpt::Public => StoredCell::Public(v.clone()),
            Rcpt::Sealed(pk) => {
                let r = self.random32();
                StoredCell::Sealed(CommitmentOpening::new(v.to_bytes(), r).commit(&pk))
            }
        }
    }

    pub fn challenge_parties(&mut self, id_p: &Digest) -> Result<Option<Transaction>, EnclaveError> {
        let s = self.session(id_p)?;
        s.expect(SessionStatus::Settle)?;
        if s.p_m.is_empty() {
            return Ok(None);
        }
        let parties = s.ordered(&s.p_m);
        let tx = self.sign_tx(Payload::Challenge { id_p: *id_p, parties });
        let s = self.session_mut(id_p)?;
        s.challenged = s.p_m.clone();
        Ok(Some(tx))
    }

    /// Look at the on-chain responses of the challenged parties within the
    /// response window. The host must supply every block body the proof
    /// covers, so a response cannot be hidden from the enclave.
    pub fn adjudicate(&mut self, id_p: &Digest, view: &WindowView) -> Result<Adjudication, EnclaveError> {
        let s = self.session(id_p)?;
        s.expect(SessionStatus::Settle)?;
        let (Some(h_cp), false) = (s.h_cp, s.challenged.is_empty()) else {
            return Err(EnclaveError::BadStatus {
                expected: SessionStatus::Settle,
                found: s.status,
            });
        };
        let deadline = h_cp + self.tau_res;
        match self.known.get(&view.pop.checkpoint) {
            Some(h) if *h <= h_cp => {}
            _ => return Err(EnclaveError::BadPoP("window must start at or before the settlement block".into())),
        }
        if view.pop.last_height().unwrap_or(0) < deadline {
            return Err(EnclaveError::BadPoP("response window not yet closed".into()));
        }
        let mut ids: Vec<Digest> = view.pop.all_tx_ids().copied().collect();
        let mut body_ids: Vec<Digest> = view.bodies.iter().map(Transaction::id).collect();
        ids.sort();
        body_ids.sort();
        if ids != body_ids {
            return Err(EnclaveError::BadPoP("block bodies do not match the headers".into()));
        }
        Self::check_witness(&view.pop, &view.state, s.proposal.adr_v)?;
        self.absorb(&view.pop)?;

        let bodies: BTreeMap<Digest, &Transaction> = view.bodies.iter().map(|t| (t.id(), t)).collect();
        let s = &self.sessions[id_p];
        let mut latest: BTreeMap<Address, &Ciphertext> = BTreeMap::new();
        for h in view.pop.headers.iter().filter(|h| h.height > h_cp && h.height <= deadline) {
            for id in &h.tx_ids {
                let tx = bodies[id];
                if let Payload::Response { id_p: rid, inputs } = &tx.payload {
                    if rid == id_p && s.challenged.contains(&tx.sender) {
                        latest.insert(tx.sender, inputs);
                    }
                }
            }
        }
        let chain_state = view.state.current();
        let binding = &self.deployments[&s.proposal.adr_v];
        let fp = binding.policy.function(&s.proposal.f).expect("bound function");
        let mut cleared = Vec::new();
        for a in &s.p_m {
            let p = s.party(a).expect("p_m holds parties");
            let bundle = latest
                .get(a)
                .and_then(|ct| decrypt(&self.keys, ct).ok())
                .and_then(|b| InputBundle::from_bytes(&b))
                .filter(|b| b.id_p == *id_p);
            if let Some(b) = bundle {
                if check_bundle(&binding.policy, fp, p, &b, &chain_state, s.proposer).is_some() {
                    cleared.push((*a, b));
                }
            }
        }
        let s = self.sessions.get_mut(id_p).expect("checked");
        for (a, b) in cleared {
            s.p_m.remove(&a);
            s.collected.insert(a, b);
        }
        if s.p_m.is_empty() {
            return Ok(Adjudication::Resume);
        }
        let malicious = s.ordered(&s.p_m);
        s.move_to(SessionStatus::Abort);
        Ok(Adjudication::Punish(self.sign_tx(Payload::Punish {
            id_p: *id_p,
            malicious,
        })))
    }

    pub fn emit_complete(&mut self, id_p: &Digest) -> Result<Transaction, EnclaveError> {
        let s = self.session_mut(id_p)?;
        s.expect(SessionStatus::Execute)?;
        let o = s.outputs.take().expect("executed sessions hold outputs");
        s.move_to(SessionStatus::Complete);
        Ok(self.sign_tx(Payload::Complete {
            id_p: *id_p,
            proof: o.proof,
            c_s: o.c_s,
            c_s_new: o.c_s_new,
            c_r: o.c_r,
        }))
    }
}

fn meet_policy(fp: &FunctionPolicy, acks: &[&Ack], sp: &SettlementPolicy) -> Result<(), String> {
    if acks.len() < sp.min_parties {
        return Err(format!("{} parties, at least {} required", acks.len(), sp.min_parties));
    }
    let roles = param_roles(fp);
    let role_of: BTreeMap<&str, &ParamRole> = roles.iter().map(|(n, r)| (n.as_str(), r)).collect();
    for a in acks {
        for k in a.public.keys() {
            if role_of.get(k.as_str()) != Some(&&ParamRole::Shared) {
                return Err(format!("'{k}' is not a shared public parameter"));
            }
        }
        for k in &a.supplies {
            if !matches!(role_of.get(k.as_str()), Some(ParamRole::Element { .. } | ParamRole::Private)) {
                return Err(format!("'{k}' cannot be supplied privately"));
            }
        }
    }
    for (name, role) in &roles {
        match role {
            ParamRole::Shared => {
                let ty = &fp.param(name).expect("listed").ty.data;
                let first = acks.first().and_then(|a| a.public.get(name));
                for a in acks {
                    match a.public.get(name) {
                        Some(v) if Some(v) == first && v.matches(ty) => {}
                        Some(_) => return Err(format!("parties disagree on '{name}'")),
                        None => return Err(format!("a party did not supply '{name}'")),
                    }
                }
            }
            ParamRole::Private => {
                let n = acks.iter().filter(|a| a.supplies.contains(name)).count();
                if n > 1 || (sp.require_all_inputs && n == 0) {
                    return Err(format!("'{name}' needs exactly one supplier, got {n}"));
                }
            }
            ParamRole::Element { tag } => {
                let group: Vec<&str> = roles
                    .iter()
                    .filter(|(_, r)| matches!(r, ParamRole::Element { tag: t } if t == tag))
                    .map(|(n, _)| n.as_str())
                    .collect();
                let mut contributors = 0;
                for a in acks {
                    let have = group.iter().filter(|g| a.supplies.contains(**g)).count();
                    if have != 0 && have != group.len() {
                        return Err(format!("a party supplied only part of the '{tag}' elements"));
                    }
                    contributors += usize::from(have != 0);
                }
                if sp.require_all_inputs && contributors == 0 {
                    return Err(format!("nobody supplied '{name}'"));
                }
            }
            ParamRole::PartyList { .. } => {}
        }
    }
    Ok(())
}

/// Validate one party's inputs; on success return its parameters.
fn check_bundle(
    policy: &ContractPolicy,
    fp: &FunctionPolicy,
    p: &PartyEntry,
    b: &InputBundle,
    chain: &BTreeMap<CellId, StoredCell>,
    caller: Address,
) -> Option<PartyParams> {
    if b.params.commit(&p.pk).digest() != p.h_cx {
        return None;
    }
    let params: PartyParams = serde_json::from_slice(&b.params.plaintext).ok()?;
    let declared: BTreeSet<&String> = p.ack.public.keys().chain(&p.ack.supplies).collect();
    if params.keys().collect::<BTreeSet<_>>() != declared {
        return None;
    }
    for (k, v) in &params {
        if let Some(pv) = p.ack.public.get(k) {
            if pv != v {
                return None;
            }
        } else if !v.matches(&supplied_type(fp, k)?) {
            return None;
        }
    }
    let openings: BTreeMap<&CellId, &CommitmentOpening> = b.states.iter().map(|(c, o)| (c, o)).collect();
    for (cell, stored) in chain {
        if !fp.reads.iter().any(|d| d.id == cell.var) {
            continue;
        }
        let StoredCell::Sealed(ct) = stored else {
            continue;
        };
        if cell_owner(policy, cell, chain, caller) != Owner::Party(p.addr) {
            continue;
        }
        let o = openings.get(cell)?;
        if o.commit(&p.pk) != *ct || Value::from_bytes(&o.plaintext).is_none() {
            return None;
        }
    }
    Some(params)
}

#[derive(Debug, Clone, Copy)]
enum Rcpt {
    Public,
    Sealed(PublicKey),
}

struct OutputPlan {
    c_s: Vec<StateEntry>,
    writes: BTreeMap<CellId, (Rcpt, Value)>,
    returns: Vec<(String, Rcpt, Value)>,
}

fn merge_params(fp: &FunctionPolicy, parties: &[PartyEntry], by_party: &BTreeMap<Address, PartyParams>) -> BTreeMap<String, Value> {
    let roles = param_roles(fp);
    let contributors = |tag: &str| -> Vec<Address> {
        let group: Vec<&str> = roles
            .iter()
            .filter(|(_, r)| matches!(r, ParamRole::Element { tag: t } if t == tag))
            .map(|(n, _)| n.as_str())
            .collect();
        parties
            .iter()
            .map(|p| p.addr)
            .filter(|a| group.is_empty() || group.iter().all(|g| by_party[a].contains_key(*g)))
            .collect()
    };
    let mut out = BTreeMap::new();
    for (name, role) in &roles {
        let v = match role {
            ParamRole::PartyList { tag } => Some(Value::Array(contributors(tag).into_iter().map(Value::Address).collect())),
            ParamRole::Element { tag } => Some(Value::Array(
                contributors(tag).iter().map(|a| by_party[a][name].clone()).collect(),
            )),
            ParamRole::Shared | ParamRole::Private => parties.iter().find_map(|p| by_party[&p.addr].get(name).cloned()),
        };
        if let Some(v) = v {
            out.insert(name.clone(), v);
        }
    }
    out
}

#[allow(clippy::too_many_arguments)]
/// Assemble plaintext state, run the function and decide where every output
/// goes. Errors are contract-level failures that abort the session.
fn run_contract(
    keys: &KeyPair,
    binding: &Binding,
    s: &Session,
    fp: &FunctionPolicy,
    by_party: &BTreeMap<Address, PartyParams>,
    chain: &BTreeMap<CellId, StoredCell>,
    witness: &StateWitness,
    step_budget: u64,
) -> Result<OutputPlan, String> {
    let mut store = StateStore::new();
    for (cell, stored) in chain {
        if !fp.reads.iter().any(|d| d.id == cell.var) {
            continue;
        }
        let value = match stored {
            StoredCell::Public(v) => Some(v.clone()),
            StoredCell::Sealed(ct) => match cell_owner(&binding.policy, cell, chain, s.proposer) {
                Owner::Enclave => CommitmentOpening::open(keys, ct)
                    .ok()
                    .and_then(|o| Value::from_bytes(&o.plaintext)),
                Owner::Party(a) => s.collected.get(&a).and_then(|b| {
                    b.states
                        .iter()
                        .find(|(c, _)| c == cell)
                        .and_then(|(_, o)| Value::from_bytes(&o.plaintext))
                }),
                Owner::Public | Owner::Unknown => None,
            },
        };
        match value {
            Some(v) => store.set(cell.clone(), v),
            None => {
                store.unavailable.insert(cell.clone());
            }
        }
    }
    let params = merge_params(fp, &s.parties, by_party);
    let cfg = ExecConfig {
        step_budget,
        equal_length: fp.paired.clone(),
    };
    let out = exec_function(&binding.f, &fp.id, &store, &params, s.proposer, &cfg).map_err(|e| e.to_string())?;
    let part: Partition =
        partition_outputs(fp, &binding.policy.states, &out, &params, s.proposer).map_err(|e| e.to_string())?;

    let pk_of = |a: &Address| -> Result<PublicKey, String> {
        s.party(a)
            .map(|p| p.pk)
            .ok_or_else(|| format!("output owner {a} is not a party"))
    };
    let mut writes = BTreeMap::new();
    let mut returns = BTreeMap::new();
    for (cell, v) in &part.public.state {
        writes.insert(cell.clone(), (Rcpt::Public, v.clone()));
    }
    for (cell, v) in &part.enclave.state {
        writes.insert(cell.clone(), (Rcpt::Sealed(keys.pk), v.clone()));
    }
    for (n, v) in &part.public.returns {
        returns.insert(n.clone(), (Rcpt::Public, v.clone()));
    }
    for (n, v) in &part.enclave.returns {
        returns.insert(n.clone(), (Rcpt::Sealed(keys.pk), v.clone()));
    }
    for (a, slice) in &part.private {
        let pk = pk_of(a)?;
        for (cell, v) in &slice.state {
            writes.insert(cell.clone(), (Rcpt::Sealed(pk), v.clone()));
        }
        for (n, v) in &slice.returns {
            returns.insert(n.clone(), (Rcpt::Sealed(pk), v.clone()));
        }
    }
    let touched: Vec<CellId> = out.reads.union(&out.writes).cloned().collect();
    let c_s = VerifierState {
        descriptor: binding.descriptor.clone(),
        current: witness.current(),
    }
    .get_old_states(&touched);
    let returns = fp
        .returns
        .iter()
        .map(|r| {
            let (rcpt, v) = returns.remove(&r.id).expect("every return is partitioned");
            (r.id.clone(), rcpt, v)
        })
        .collect();
    Ok(OutputPlan { c_s, writes, returns })
}
