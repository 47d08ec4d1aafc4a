//! The on-chain service contract: keys, collateral and MPT life cycles.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{Address, Ciphertext, Digest, PublicKey};

use super::tx::SettledProposal;
use super::verifier::ReturnEntry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum Revert {
    #[error("proposal id already used")]
    DuplicateProposal,
    #[error("insufficient coins for collateral")]
    InsufficientCoins,
    #[error("sender is not the enclave")]
    NotEnclave,
    #[error("proposal is not in the required status")]
    BadStatus,
    #[error("sender is not a party of the proposal")]
    NotParty,
    #[error("deadline has not passed yet")]
    TooEarly,
    #[error("proof rejected by the verifier")]
    ProofRejected,
    #[error("unknown proposal")]
    UnknownProposal,
    #[error("unknown verifier")]
    UnknownVerifier,
    #[error("service is not deployed")]
    NoService,
    #[error("service is already deployed")]
    ServiceExists,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProposalStatus {
    Settle,
    Abort,
    Complete,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyRecord {
    pub addr: Address,
    pub cha: bool,
    pub res: Option<Ciphertext>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProposalRecord {
    pub v: Address,
    pub f: String,
    pub parties: Vec<PartyRecord>,
    pub h_cx: Vec<Digest>,
    pub q: u64,
    pub tau_res: u64,
    pub tau_com: u64,
    pub h_cp: u64,
    pub c_r: Option<Vec<ReturnEntry>>,
    pub status: ProposalStatus,
}

impl ProposalRecord {
    pub fn party_addrs(&self) -> Vec<Address> {
        self.parties.iter().map(|p| p.addr).collect()
    }

    pub fn is_party(&self, a: &Address) -> bool {
        self.parties.iter().any(|p| p.addr == *a)
    }
}

/// Split `total` over `recipients`: equal floor shares, remainder to the
/// first recipient.
pub fn split_exact(total: u64, recipients: &[Address]) -> Vec<(Address, u64)> {
    if recipients.is_empty() {
        return Vec::new();
    }
    let k = recipients.len() as u64;
    let share = total / k;
    let rem = total % k;
    recipients
        .iter()
        .enumerate()
        .map(|(i, a)| (*a, if i == 0 { share + rem } else { share }))
        .collect()
}

/// `q·(1 + m/(n − m + 1))` per recipient, as the exact integer split of
/// `(n + 1)·q` over the `n − m` honest parties and the executor.
pub fn punish_refunds(q: u64, parties: &[Address], malicious: &[Address], exec: Address) -> Vec<(Address, u64)> {
    let n = parties.len() as u64;
    let mut recipients: Vec<Address> = parties.iter().filter(|p| !malicious.contains(p)).copied().collect();
    recipients.push(exec);
    split_exact((n + 1) * q, &recipients)
}

/// `q·(1 + 1/n)` per party, as the exact split of `(n + 1)·q`.
pub fn timeout_refunds(q: u64, parties: &[Address]) -> Vec<(Address, u64)> {
    split_exact((parties.len() as u64 + 1) * q, parties)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceState {
    pub pk_e: PublicKey,
    pub adr_e: Address,
    pub adr_exec: Address,
    pub par_pks: BTreeMap<Address, PublicKey>,
    pub coins: BTreeMap<Address, u64>,
    pub prpls: BTreeMap<Digest, ProposalRecord>,
}

impl ServiceState {
    pub fn new(pk_e: PublicKey, adr_e: Address, adr_exec: Address) -> Self {
        Self {
            pk_e,
            adr_e,
            adr_exec,
            par_pks: BTreeMap::new(),
            coins: BTreeMap::new(),
            prpls: BTreeMap::new(),
        }
    }

    pub fn coins_of(&self, a: &Address) -> u64 {
        self.coins.get(a).copied().unwrap_or(0)
    }

    pub fn total_coins(&self) -> u64 {
        self.coins.values().sum()
    }

    /// Returns true when an existing key was replaced.
    pub fn register(&mut self, sender: Address, pk: PublicKey) -> bool {
        self.par_pks.insert(sender, pk).is_some_and(|old| old != pk)
    }

    pub fn deposit(&mut self, sender: Address, amount: u64) {
        *self.coins.entry(sender).or_default() += amount;
    }

    fn credit(&mut self, refunds: &[(Address, u64)]) {
        for (a, v) in refunds {
            *self.coins.entry(*a).or_default() += v;
        }
    }

    fn record(&mut self, id_p: &Digest) -> Result<&mut ProposalRecord, Revert> {
        self.prpls.get_mut(id_p).ok_or(Revert::UnknownProposal)
    }

    fn settled(&mut self, id_p: &Digest) -> Result<&mut ProposalRecord, Revert> {
        let r = self.record(id_p)?;
        if r.status != ProposalStatus::Settle {
            return Err(Revert::BadStatus);
        }
        Ok(r)
    }

    pub fn propose(
        &mut self,
        sender: Address,
        id_p: Digest,
        p: &SettledProposal,
        tau_res: u64,
        tau_com: u64,
        height: u64,
    ) -> Result<(), Revert> {
        if sender != self.adr_e {
            return Err(Revert::NotEnclave);
        }
        if self.prpls.contains_key(&id_p) {
            return Err(Revert::DuplicateProposal);
        }
        // Check every deduction before applying any, so a failure leaves
        // no partial state behind.
        let mut need: BTreeMap<Address, u64> = BTreeMap::new();
        for a in p.parties.iter().chain([&self.adr_exec]) {
            *need.entry(*a).or_default() += p.q;
        }
        if need.iter().any(|(a, q)| self.coins_of(a) < *q) {
            return Err(Revert::InsufficientCoins);
        }
        for (a, q) in need {
            *self.coins.get_mut(&a).expect("checked above") -= q;
        }
        self.prpls.insert(
            id_p,
            ProposalRecord {
                v: p.adr_v,
                f: p.f.clone(),
                parties: p
                    .parties
                    .iter()
                    .map(|a| PartyRecord {
                        addr: *a,
                        cha: false,
                        res: None,
                    })
                    .collect(),
                h_cx: p.h_cx.clone(),
                q: p.q,
                tau_res,
                tau_com,
                h_cp: height,
                c_r: None,
                status: ProposalStatus::Settle,
            },
        );
        Ok(())
    }

    pub fn challenge(&mut self, sender: Address, id_p: &Digest, parties: &[Address]) -> Result<(), Revert> {
        if sender != self.adr_e {
            return Err(Revert::NotEnclave);
        }
        let r = self.settled(id_p)?;
        if parties.iter().any(|a| !r.is_party(a)) {
            return Err(Revert::NotParty);
        }
        for p in r.parties.iter_mut().filter(|p| parties.contains(&p.addr)) {
            p.cha = true;
        }
        Ok(())
    }

    pub fn response(&mut self, sender: Address, id_p: &Digest, inputs: &Ciphertext) -> Result<(), Revert> {
        let r = self.settled(id_p)?;
        let p = r
            .parties
            .iter_mut()
            .find(|p| p.addr == sender)
            .ok_or(Revert::NotParty)?;
        p.res = Some(inputs.clone());
        Ok(())
    }

    pub fn punish(&mut self, sender: Address, id_p: &Digest, malicious: &[Address], height: u64) -> Result<(), Revert> {
        if sender != self.adr_e {
            return Err(Revert::NotEnclave);
        }
        let exec = self.adr_exec;
        let r = self.settled(id_p)?;
        if height <= r.h_cp + r.tau_res {
            return Err(Revert::TooEarly);
        }
        let parties = r.party_addrs();
        let malicious: Vec<_> = parties.iter().filter(|p| malicious.contains(p)).copied().collect();
        let refunds = punish_refunds(r.q, &parties, &malicious, exec);
        r.status = ProposalStatus::Abort;
        self.credit(&refunds);
        Ok(())
    }

    /// The verifier check is done by the caller, which owns the verifiers.
    pub fn complete(&mut self, sender: Address, id_p: &Digest, c_r: &[ReturnEntry]) -> Result<(), Revert> {
        if sender != self.adr_e {
            return Err(Revert::NotEnclave);
        }
        let exec = self.adr_exec;
        let r = self.settled(id_p)?;
        let mut refunds: Vec<_> = r.party_addrs().into_iter().map(|a| (a, r.q)).collect();
        refunds.push((exec, r.q));
        r.c_r = Some(c_r.to_vec());
        r.status = ProposalStatus::Complete;
        self.credit(&refunds);
        Ok(())
    }

    pub fn timeout(&mut self, sender: Address, id_p: &Digest, height: u64) -> Result<(), Revert> {
        let r = self.record(id_p)?;
        if !r.is_party(&sender) {
            return Err(Revert::NotParty);
        }
        if r.status != ProposalStatus::Settle {
            return Err(Revert::BadStatus);
        }
        if height <= r.h_cp + r.tau_com {
            return Err(Revert::TooEarly);
        }
        let refunds = timeout_refunds(r.q, &r.party_addrs());
        r.status = ProposalStatus::Timeout;
        self.credit(&refunds);
        Ok(())
    }
}
