use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codegen::{digest_of, VerifierDescriptor};
use crate::crypto::{sign, verify_sig, Address, Ciphertext, Digest, KeyPair, PublicKey, Signature};

use super::verifier::{Proof, ReturnEntry, StateEntry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TxKind {
    Deploy,
    #[serde(rename = "TX_pk")]
    Pk,
    #[serde(rename = "TX_col")]
    Col,
    #[serde(rename = "TX_p")]
    P,
    #[serde(rename = "TX_cha")]
    Cha,
    #[serde(rename = "TX_res")]
    Res,
    #[serde(rename = "TX_pns")]
    Pns,
    #[serde(rename = "TX_com")]
    Com,
    #[serde(rename = "TX_out")]
    Out,
}

impl TxKind {
    pub const ALL: [TxKind; 9] = [
        TxKind::Deploy,
        TxKind::Pk,
        TxKind::Col,
        TxKind::P,
        TxKind::Cha,
        TxKind::Res,
        TxKind::Pns,
        TxKind::Com,
        TxKind::Out,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TxKind::Deploy => "Deploy",
            TxKind::Pk => "TX_pk",
            TxKind::Col => "TX_col",
            TxKind::P => "TX_p",
            TxKind::Cha => "TX_cha",
            TxKind::Res => "TX_res",
            TxKind::Pns => "TX_pns",
            TxKind::Com => "TX_com",
            TxKind::Out => "TX_out",
        }
    }

    /// Registration, deposits and deployments happen once, not per MPT.
    pub fn is_setup(self) -> bool {
        matches!(self, TxKind::Deploy | TxKind::Pk | TxKind::Col)
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `p′ = ⟨adr_V, f, P̄, H_Cx, q⟩`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SettledProposal {
    pub adr_v: Address,
    pub f: String,
    pub parties: Vec<Address>,
    pub h_cx: Vec<Digest>,
    pub q: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    DeployService {
        pk_e: PublicKey,
        adr_e: Address,
        adr_exec: Address,
    },
    DeployVerifier {
        descriptor: VerifierDescriptor,
        initial: Vec<StateEntry>,
    },
    Register {
        pk: PublicKey,
    },
    Deposit {
        amount: u64,
    },
    Propose {
        id_p: Digest,
        proposal: SettledProposal,
        tau_res: u64,
        tau_com: u64,
    },
    Challenge {
        id_p: Digest,
        parties: Vec<Address>,
    },
    Response {
        id_p: Digest,
        inputs: Ciphertext,
    },
    Punish {
        id_p: Digest,
        malicious: Vec<Address>,
    },
    Complete {
        id_p: Digest,
        proof: Proof,
        c_s: Vec<StateEntry>,
        c_s_new: Vec<StateEntry>,
        c_r: Vec<ReturnEntry>,
    },
    Timeout {
        id_p: Digest,
    },
}

impl Payload {
    pub fn kind(&self) -> TxKind {
        match self {
            Payload::DeployService { .. } | Payload::DeployVerifier { .. } => TxKind::Deploy,
            Payload::Register { .. } => TxKind::Pk,
            Payload::Deposit { .. } => TxKind::Col,
            Payload::Propose { .. } => TxKind::P,
            Payload::Challenge { .. } => TxKind::Cha,
            Payload::Response { .. } => TxKind::Res,
            Payload::Punish { .. } => TxKind::Pns,
            Payload::Complete { .. } => TxKind::Com,
            Payload::Timeout { .. } => TxKind::Out,
        }
    }

    pub fn id_p(&self) -> Option<Digest> {
        match self {
            Payload::Propose { id_p, .. }
            | Payload::Challenge { id_p, .. }
            | Payload::Response { id_p, .. }
            | Payload::Punish { id_p, .. }
            | Payload::Complete { id_p, .. }
            | Payload::Timeout { id_p } => Some(*id_p),
            _ => None,
        }
    }
}

#[derive(Serialize)]
struct Unsigned<'a> {
    sender_pk: &'a PublicKey,
    nonce: u64,
    payload: &'a Payload,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub sender: Address,
    pub sender_pk: PublicKey,
    /// Distinguishes otherwise identical transactions from one sender.
    pub nonce: u64,
    pub payload: Payload,
    pub signature: Signature,
}

impl Transaction {
    pub fn new(keys: &KeyPair, nonce: u64, payload: Payload) -> Self {
        let id = Self::id_of(&keys.pk, nonce, &payload);
        Self {
            sender: keys.addr,
            sender_pk: keys.pk,
            nonce,
            signature: sign(keys, &id.0),
            payload,
        }
    }

    fn id_of(pk: &PublicKey, nonce: u64, payload: &Payload) -> Digest {
        digest_of(&Unsigned {
            sender_pk: pk,
            nonce,
            payload,
        })
    }

    pub fn id(&self) -> Digest {
        Self::id_of(&self.sender_pk, self.nonce, &self.payload)
    }

    pub fn kind(&self) -> TxKind {
        self.payload.kind()
    }

    pub fn verify_signature(&self) -> bool {
        self.sender_pk.address() == self.sender
            && verify_sig(&self.sender_pk, &self.id().0, &self.signature)
    }

    pub fn payload_digest(&self) -> Digest {
        digest_of(&self.payload)
    }
}
