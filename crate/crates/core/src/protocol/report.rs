use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::{Chain, TxKind};
use crate::crypto::{Address, Digest};

use super::party::PartyOutputs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Outcome {
    Complete,
    Abort,
    Timeout,
    /// The enclave refused to settle, so nothing reached the chain.
    NegotiationFailed,
    /// Still pending when the simulation stopped; only possible when no
    /// participant is willing to close the session.
    Unresolved,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Complete => "COMPLETE",
            Outcome::Abort => "ABORT",
            Outcome::Timeout => "TIMEOUT",
            Outcome::NegotiationFailed => "NEGOTIATION_FAILED",
            Outcome::Unresolved => "UNRESOLVED",
        })
    }
}

impl Outcome {
    pub fn exit_code(self) -> i32 {
        match self {
            Outcome::Complete => 0,
            Outcome::Abort => 3,
            Outcome::Timeout => 4,
            Outcome::NegotiationFailed => 5,
            Outcome::Unresolved => 6,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxCount {
    /// Registrations, deposits and deployments.
    pub setup: u64,
    /// Successful transactions tied to an MPT.
    pub mpt: u64,
    pub by_kind: BTreeMap<TxKind, u64>,
    pub reverted: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: u32,
    pub outcome: Outcome,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub id_p: Digest,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h_cp: Option<u64>,
    pub first_block: u64,
    pub last_block: u64,
    pub parties: Vec<Address>,
    /// Successful per-MPT transactions by kind.
    pub txs: BTreeMap<TxKind, u64>,
    pub mpt_txs: u64,
    /// Setup transactions confirmed while this round ran.
    pub setup_txs: u64,
    pub reverted: u64,
    pub punished: Vec<Address>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub index: Option<usize>,
    pub address: Address,
    pub behavior: String,
    pub honest: bool,
    /// Balance after global setup, before the first proposal.
    pub coins_before: u64,
    pub coins_after: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<PartyOutputs>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoinTotals {
    pub before: u64,
    pub after: u64,
    pub conserved: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnclaveInfo {
    pub address: Address,
    pub tau_res: u64,
    pub tau_com: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub completions: usize,
    pub accepted: usize,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub outcome: Outcome,
    pub seed: u64,
    pub contract: String,
    pub function: String,
    pub h_f: Digest,
    pub h_p: Digest,
    pub enclave: EnclaveInfo,
    pub rounds: Vec<RoundReport>,
    pub tx_count: TxCount,
    pub executor: ActorReport,
    pub parties: Vec<ActorReport>,
    pub coins: CoinTotals,
    pub messages: BTreeMap<String, u64>,
    pub audit: AuditSummary,
}

impl RunReport {
    pub fn actors(&self) -> impl Iterator<Item = &ActorReport> {
        std::iter::once(&self.executor).chain(&self.parties)
    }

    /// Honest actors must not lose coins, and an aborted or timed-out run
    /// with dishonest actors must leave one of them worse off.
    pub fn fairness_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        for a in self.actors().filter(|a| a.honest && a.coins_after < a.coins_before) {
            out.push(format!(
                "honest {} ({}) lost coins: {} -> {}",
                a.behavior, a.address, a.coins_before, a.coins_after
            ));
        }
        let dishonest: Vec<_> = self.actors().filter(|a| !a.honest).collect();
        if matches!(self.outcome, Outcome::Abort | Outcome::Timeout)
            && !dishonest.is_empty()
            && !dishonest.iter().any(|a| a.coins_after < a.coins_before)
        {
            out.push(format!("{} without any dishonest actor losing coins", self.outcome));
        }
        out
    }
}

/// Count confirmed transactions, split into setup and per-MPT.
pub fn collect_metrics(chain: &Chain) -> TxCount {
    let mut c = TxCount::default();
    for b in chain.blocks() {
        for (tx, st) in b.txs.iter().zip(&b.statuses) {
            if !st.is_ok() {
                c.reverted += 1;
                continue;
            }
            let k = tx.kind();
            *c.by_kind.entry(k).or_default() += 1;
            if k.is_setup() {
                c.setup += 1;
            } else {
                c.mpt += 1;
            }
        }
    }
    c
}
