//! End-to-end runs: global setup, then negotiation, execution and
//! distribution for each round, driven by a single-threaded loop where one
//! tick mines one block.

pub mod audit;
pub mod config;
pub mod party;
pub mod report;

use std::collections::BTreeMap;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::chain::{authority_key, Chain, Payload, ProposalStatus, StateEntry, StoredCell, TraceRecord, Transaction, TxKind};
use crate::codegen::{compile_source, Artifacts, FunctionPolicy};
use crate::crypto::{hash_parts, keygen_labeled, Address, Digest, KeyPair};
use crate::enclave::{
    issuer_key, Adjudication, Enclave, EnclaveConfig, EnclaveError, Envelope, ExecOutcome, ExecView, Proposal, WindowView,
};

pub use audit::{audit, scan, sentinel_patterns, AuditReport, Finding};
pub use config::{Delays, ExecutorBehavior, ParamSpec, PartyBehavior, PartyConfig, ScenarioConfig, ScenarioError};
pub use party::{decrypt_outputs, open_stored, PartyClient, PartyOutputs};
pub use report::{collect_metrics, ActorReport, Outcome, RoundReport, RunReport, TxCount};

use report::{AuditSummary, CoinTotals, EnclaveInfo};

/// One off-chain message between actors, as it crossed the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub height: u64,
    pub from: Address,
    /// `None` for a broadcast.
    pub to: Option<Address>,
    pub kind: String,
    #[serde(with = "crate::crypto::hex_vec")]
    pub body: Vec<u8>,
}

/// Everything a finished run leaves behind.
#[derive(Debug, Clone)]
pub struct Run {
    pub report: RunReport,
    pub chain: Chain,
    pub messages: Vec<Message>,
}

impl Run {
    pub fn trace(&self) -> &[TraceRecord] {
        self.chain.trace()
    }

    pub fn trace_jsonl(&self) -> String {
        let mut s = String::new();
        for r in self.chain.trace() {
            s.push_str(&serde_json::to_string(r).expect("trace records serialize"));
            s.push('\n');
        }
        s
    }

    /// Every byte string an outside observer sees: each on-chain
    /// transaction and each message body.
    pub fn public_bytes(&self) -> Vec<(String, Vec<u8>)> {
        let mut out = Vec::new();
        for b in self.chain.blocks() {
            for (i, tx) in b.txs.iter().enumerate() {
                let label = format!("block {} tx {i} {}", b.height(), tx.kind());
                out.push((label, serde_json::to_vec(tx).expect("transactions serialize")));
            }
        }
        for (i, m) in self.messages.iter().enumerate() {
            out.push((format!("message {i} {}", m.kind), m.body.clone()));
        }
        out
    }
}

/// The executor's relay. It is the only path between parties and the
/// enclave, and the only actor that publishes enclave transactions.
#[derive(Debug, Clone)]
struct Host {
    keys: KeyPair,
    behavior: ExecutorBehavior,
    nonce: u64,
    /// Transactions waiting for their release height.
    held: Vec<(u64, Transaction)>,
    crashed: bool,
}

impl Host {
    fn tx(&mut self, payload: Payload) -> Transaction {
        self.nonce += 1;
        Transaction::new(&self.keys, self.nonce, payload)
    }
}

struct Active {
    id_p: Digest,
    members: Vec<usize>,
}

struct Sim<'a> {
    cfg: &'a ScenarioConfig,
    art: Artifacts,
    fp: FunctionPolicy,
    chain: Chain,
    enclave: Enclave,
    host: Host,
    parties: Vec<PartyClient>,
    rng: ChaCha20Rng,
    messages: Vec<Message>,
    adr_v: Address,
    active: Option<Active>,
}

/// Run a scenario to its end. Protocol failures are outcomes in the
/// report; only unusable configurations are errors.
pub fn run_scenario(cfg: &ScenarioConfig, source: &str) -> Result<Run, ScenarioError> {
    let art = compile_source(source).map_err(|e| ScenarioError::Compile(e.to_string()))?;
    let keys: Vec<KeyPair> = cfg.parties.iter().map(|p| keygen_labeled("cloak/party", p.seed)).collect();
    let addrs: Vec<Address> = keys.iter().map(|k| k.addr).collect();
    let resolved = cfg.resolve(&art.policy, &addrs)?;
    let public = cfg.public_cells(&art.policy, &addrs)?;
    let fp = art.policy.function(&cfg.function).expect("resolve checked the function").clone();

    let chain = Chain::new();
    let enclave_seed = hash_parts(&[b"cloak/scenario-enclave", &cfg.enclave_seed.to_be_bytes()]);
    let (mut enclave, attestation) =
        Enclave::setup(&enclave_seed.0, chain.genesis_hash(), authority_key(), EnclaveConfig::default());
    enclave.mix_entropy(&cfg.seed.to_be_bytes());
    let rng = ChaCha20Rng::from_seed(hash_parts(&[b"cloak/scenario", &cfg.seed.to_be_bytes()]).0);
    let parties = cfg
        .parties
        .iter()
        .zip(keys)
        .zip(&resolved)
        .enumerate()
        .map(|(i, ((p, k), r))| PartyClient::new(i, k, p.behavior, p.delays, p.deposit, r.params.clone()))
        .collect();
    let mut sim = Sim {
        cfg,
        art,
        fp,
        chain,
        enclave,
        host: Host {
            keys: keygen_labeled("cloak/executor", 0),
            behavior: cfg.executor,
            nonce: 0,
            held: Vec::new(),
            crashed: false,
        },
        parties,
        rng,
        messages: Vec::new(),
        adr_v: Address::ZERO,
        active: None,
    };

    sim.broadcast(sim.enclave.address(), "attestation", serde_json::to_vec(&attestation).expect("serializes"));
    if !attestation.verify(&issuer_key()) || attestation.pk_e != sim.enclave.public_key() {
        return Err(ScenarioError::Invalid("enclave attestation does not verify".into()));
    }
    sim.setup(&resolved, public)?;
    let before = sim.balances();

    let mut rounds = Vec::new();
    for r in 1..=cfg.rounds {
        let rep = sim.round(r);
        let done = rep.outcome != Outcome::Complete;
        rounds.push(rep);
        if done {
            break;
        }
    }
    Ok(sim.finish(rounds, before))
}

impl Sim<'_> {
    fn random32(&mut self) -> [u8; 32] {
        let mut r = [0u8; 32];
        self.rng.fill_bytes(&mut r);
        r
    }

    fn broadcast(&mut self, from: Address, kind: &str, body: Vec<u8>) {
        self.messages.push(Message {
            height: self.chain.height(),
            from,
            to: None,
            kind: kind.into(),
            body,
        });
    }

    fn send_msg(&mut self, from: Address, to: Address, kind: &str, body: Vec<u8>) {
        self.messages.push(Message {
            height: self.chain.height(),
            from,
            to: Some(to),
            kind: kind.into(),
            body,
        });
    }

    fn submit(&mut self, tx: Transaction) {
        if let Err(e) = self.chain.submit(tx) {
            tracing::warn!(error = %e, "submission refused");
        }
    }

    /// Service deployment, registration and deposits for everyone, and the
    /// verifier with every party's sealed initial state, all in one block.
    fn setup(&mut self, resolved: &[config::ResolvedParty], public: Vec<(crate::interpreter::CellId, crate::interpreter::Value)>) -> Result<(), ScenarioError> {
        let (pk_e, adr_e) = (self.enclave.public_key(), self.enclave.address());
        let exec_addr = self.host.keys.addr;
        let t = self.host.tx(Payload::DeployService { pk_e, adr_e, adr_exec: exec_addr });
        self.submit(t);
        let t = self.host.tx(Payload::Deposit { amount: self.cfg.executor_deposit });
        self.submit(t);
        let mut initial: Vec<StateEntry> = public
            .into_iter()
            .map(|(cell, v)| StateEntry {
                cell,
                value: Some(StoredCell::Public(v)),
            })
            .collect();
        for i in 0..self.parties.len() {
            let pk = self.parties[i].keys.pk;
            let amount = self.parties[i].deposit;
            let t = self.parties[i].tx(Payload::Register { pk });
            self.submit(t);
            let t = self.parties[i].tx(Payload::Deposit { amount });
            self.submit(t);
            for (cell, v) in &resolved[i].cells {
                let r = self.random32();
                initial.push(self.parties[i].seal_initial(cell.clone(), v, r));
            }
        }
        let descriptor = self.art.verifier(adr_e);
        let deploy = self.host.tx(Payload::DeployVerifier { descriptor, initial });
        let deploy_id = deploy.id();
        self.submit(deploy.clone());
        self.chain.mine_block();
        self.adr_v = crate::chain::verifier_address(&deploy_id);
        let pop = self
            .chain
            .build_pop(&deploy_id, &self.enclave.checkpoint())
            .expect("deployment was just mined");
        self.enclave
            .deploy(&self.art.private, &self.art.policy, self.adr_v, &deploy, &pop)
            .map_err(|e| ScenarioError::Invalid(format!("enclave refused the deployment: {e}")))?;
        Ok(())
    }

    fn balances(&self) -> BTreeMap<Address, u64> {
        std::iter::once(self.host.keys.addr)
            .chain(self.parties.iter().map(|p| p.keys.addr))
            .map(|a| (a, self.chain.coins(&a)))
            .collect()
    }

    /// Queue an enclave transaction for publication no earlier than
    /// `earliest`, subject to the host's behavior.
    fn release(&mut self, tx: Transaction, earliest: u64, h_cp: u64) {
        let final_tx = matches!(tx.kind(), TxKind::Com | TxKind::Pns);
        let at = match self.host.behavior {
            _ if self.host.crashed => return,
            ExecutorBehavior::DropTxCom if final_tx => {
                tracing::info!(kind = %tx.kind(), "host drops the enclave's transaction");
                return;
            }
            ExecutorBehavior::DelayBeyondTauCom if final_tx => earliest.max(h_cp + self.enclave.tau_com() + 2),
            _ => earliest,
        };
        self.host.held.push((at, tx));
    }

    /// Let every actor act on the current chain, then mine one block.
    fn tick(&mut self) {
        let next = self.chain.height() + 1;
        let held = std::mem::take(&mut self.host.held);
        let (ready, wait): (Vec<_>, Vec<_>) = held.into_iter().partition(|(h, _)| *h <= next);
        self.host.held = wait;
        for (_, tx) in ready {
            self.submit(tx);
        }
        if let Some(a) = &self.active {
            if let Some(rec) = self.chain.proposal(&a.id_p).filter(|r| r.status == ProposalStatus::Settle).cloned() {
                let pk_e = self.enclave.public_key();
                for &i in &a.members.clone() {
                    let addr = self.parties[i].keys.addr;
                    let challenged = rec.parties.iter().any(|p| p.addr == addr && p.cha && p.res.is_none());
                    if challenged && next <= rec.h_cp + rec.tau_res {
                        let r = self.random32();
                        if let Some(tx) = self.parties[i].response(&self.fp, &pk_e, r) {
                            self.submit(tx);
                        }
                    }
                    if next > rec.h_cp + rec.tau_com {
                        if let Some(tx) = self.parties[i].timeout_claim() {
                            self.submit(tx);
                        }
                    }
                }
            }
        }
        self.chain.mine_block();
    }

    fn round(&mut self, round: u32) -> RoundReport {
        let first_block = self.chain.height() + 1;
        let h0 = self.chain.height();
        let proposer = self.parties[self.cfg.proposer].keys.addr;
        let proposal = Proposal {
            adr_v: self.adr_v,
            f: self.cfg.function.clone(),
            q: self.cfg.q,
            t_n: h0 + self.cfg.t_n,
            settlement: self.cfg.settlement,
        };
        let sp = self.enclave.generate_idp(proposer, proposal).expect("function checked at load");
        let id_p = sp.id_p;
        self.broadcast(self.enclave.address(), "proposal", serde_json::to_vec(&sp).expect("serializes"));

        let pk_e = self.enclave.public_key();
        let mut pending = Vec::new();
        for i in 0..self.parties.len() {
            let r = self.random32();
            if let Some(ack) = self.parties[i].acknowledge(&sp, &pk_e, &self.fp, r) {
                pending.push((h0 + self.parties[i].delays.ack, i, ack));
            }
        }
        while self.chain.height() < h0 + self.cfg.t_n && pending.iter().any(|(at, _, _)| *at > self.chain.height()) {
            self.tick();
        }
        let now = self.chain.height();
        let mut acks = Vec::new();
        for (at, i, ack) in pending {
            if at <= now {
                let from = self.parties[i].keys.addr;
                self.send_msg(from, self.enclave.address(), "ack", serde_json::to_vec(&ack).expect("serializes"));
                acks.push(ack);
            }
        }
        let registered = self.chain.service().expect("service deployed").par_pks.clone();
        let tx_p = match self.enclave.settle(&id_p, &acks, &registered, now) {
            Ok(tx) => tx,
            Err(e) => return self.round_report(round, id_p, first_block, Some(e.to_string())),
        };
        let tx_p_id = tx_p.id();
        self.release(tx_p.clone(), now + 1, now);
        self.tick();
        let Some((_, status, h_cp)) = self.chain.tx(&tx_p_id) else {
            return self.round_report(round, id_p, first_block, Some("TX_p was not published".into()));
        };
        if !status.is_ok() {
            return self.round_report(round, id_p, first_block, Some(format!("TX_p reverted: {}", status.label())));
        }
        let members: Vec<usize> = {
            let rec = self.chain.proposal(&id_p).expect("TX_p confirmed");
            (0..self.parties.len()).filter(|i| rec.is_party(&self.parties[*i].keys.addr)).collect()
        };
        self.active = Some(Active { id_p, members: members.clone() });

        if self.host.behavior == ExecutorBehavior::CrashAfterSettle {
            tracing::info!("host crashed after settlement");
            self.host.crashed = true;
        } else if let Err(e) = self.execute(id_p, &tx_p, h_cp, &members) {
            tracing::warn!(error = %e, "host gave up on the session");
        }

        let limit = h_cp + self.enclave.tau_com() + 3;
        while self.chain.height() < limit
            && (self.chain.proposal(&id_p).map(|r| r.status) == Some(ProposalStatus::Settle) || !self.host.held.is_empty())
        {
            self.tick();
        }
        self.distribute(id_p, &members);
        self.active = None;
        self.round_report(round, id_p, first_block, None)
    }

    /// Collect inputs until the deadline, run the enclave and handle any
    /// challenge round.
    fn execute(&mut self, id_p: Digest, tx_p: &Transaction, h_cp: u64, members: &[usize]) -> Result<(), EnclaveError> {
        let pk_e = self.enclave.public_key();
        let deadline = h_cp + self.cfg.t_e.min(self.enclave.tau_res().saturating_sub(2));
        let mut pending = Vec::new();
        for &i in members {
            let r = self.random32();
            if let Some(env) = self.parties[i].input_envelope(&self.fp, &pk_e, r) {
                pending.push((h_cp + self.parties[i].delays.inputs, i, env));
            }
        }
        while self.chain.height() < deadline && pending.iter().any(|(at, _, _)| *at > self.chain.height()) {
            self.tick();
        }
        let mut inputs: Vec<Envelope> = Vec::new();
        for (at, i, env) in pending {
            if at <= self.chain.height() {
                let from = self.parties[i].keys.addr;
                self.send_msg(from, self.enclave.address(), "inputs", serde_json::to_vec(&env).expect("serializes"));
                inputs.push(env);
            }
        }

        let mut resumed = false;
        loop {
            let view = self.exec_view(tx_p, h_cp)?;
            match self.enclave.execute_mpt(&id_p, &inputs, &view)? {
                ExecOutcome::Executed => {
                    let tx = self.enclave.emit_complete(&id_p)?;
                    let next = self.chain.height() + 1;
                    self.release(tx, next, h_cp);
                    return Ok(());
                }
                ExecOutcome::Aborted { reason, tx_pns } => {
                    tracing::info!(%reason, "contract failed");
                    self.release(tx_pns, h_cp + self.enclave.tau_res() + 1, h_cp);
                    return Ok(());
                }
                ExecOutcome::Misbehaving(_) if resumed => {
                    return Err(EnclaveError::PolicyUnmet("inputs still inconsistent after responses".into()));
                }
                ExecOutcome::Misbehaving(set) => {
                    tracing::info!(parties = set.len(), "challenging");
                    let cha = self.enclave.challenge_parties(&id_p)?.expect("non-empty set");
                    let next = self.chain.height() + 1;
                    self.release(cha, next, h_cp);
                    self.tick();
                    while self.chain.height() < h_cp + self.enclave.tau_res() {
                        self.tick();
                    }
                    let cp = self.chain.block(h_cp).expect("settlement block").hash();
                    let window = WindowView {
                        pop: self.chain.headers_since(&cp).expect("known block"),
                        bodies: self.chain.bodies_since(&cp),
                        state: self.chain.state_witness(&self.adr_v).expect("verifier deployed"),
                    };
                    match self.enclave.adjudicate(&id_p, &window)? {
                        Adjudication::Resume => {
                            resumed = true;
                            inputs.clear();
                        }
                        Adjudication::Punish(tx) => {
                            let next = self.chain.height() + 1;
                            self.release(tx, next, h_cp);
                            return Ok(());
                        }
                    }
                }
            }
        }
    }

    fn exec_view(&self, tx_p: &Transaction, h_cp: u64) -> Result<ExecView, EnclaveError> {
        let cp = self
            .enclave
            .checkpoint_below(h_cp)
            .ok_or_else(|| EnclaveError::BadPoP("no checkpoint below TX_p".into()))?;
        Ok(ExecView {
            tx_p: tx_p.clone(),
            pop: self.chain.build_pop(&tx_p.id(), &cp).expect("TX_p is on chain"),
            state: self.chain.state_witness(&self.adr_v).expect("verifier deployed"),
        })
    }

    /// Parties read a confirmed `TX_com` and decrypt what is theirs.
    fn distribute(&mut self, id_p: Digest, members: &[usize]) {
        let com = self
            .chain
            .session_txs(&id_p)
            .into_iter()
            .find(|(_, t, s)| s.is_ok() && t.kind() == TxKind::Com)
            .map(|(_, t, _)| t.payload.clone());
        if let Some(Payload::Complete { c_s_new, c_r, .. }) = com {
            for &i in members {
                self.parties[i].absorb_completion(&c_s_new, &c_r);
            }
        }
    }

    fn round_report(&self, round: u32, id_p: Digest, first_block: u64, failed: Option<String>) -> RoundReport {
        let rec = self.chain.proposal(&id_p);
        let outcome = match (&failed, rec.map(|r| r.status)) {
            (Some(_), _) | (None, None) => Outcome::NegotiationFailed,
            (None, Some(ProposalStatus::Complete)) => Outcome::Complete,
            (None, Some(ProposalStatus::Abort)) => Outcome::Abort,
            (None, Some(ProposalStatus::Timeout)) => Outcome::Timeout,
            (None, Some(ProposalStatus::Settle)) => Outcome::Unresolved,
        };
        let last_block = self.chain.height();
        let mut txs = BTreeMap::new();
        let mut reverted = 0;
        let mut punished = Vec::new();
        for (_, t, s) in self.chain.session_txs(&id_p) {
            if !s.is_ok() {
                reverted += 1;
                continue;
            }
            *txs.entry(t.kind()).or_default() += 1;
            if let Payload::Punish { malicious, .. } = &t.payload {
                punished = malicious.clone();
            }
        }
        let setup_txs = self.chain.blocks()[first_block.min(last_block + 1) as usize..]
            .iter()
            .flat_map(|b| b.txs.iter().zip(&b.statuses))
            .filter(|(t, s)| s.is_ok() && t.kind().is_setup())
            .count() as u64;
        RoundReport {
            round,
            outcome,
            reason: failed,
            id_p,
            h_cp: rec.map(|r| r.h_cp),
            first_block,
            last_block,
            parties: rec.map(|r| r.party_addrs()).unwrap_or_default(),
            mpt_txs: txs.values().sum(),
            txs,
            setup_txs,
            reverted,
            punished,
        }
    }

    fn finish(self, rounds: Vec<RoundReport>, before: BTreeMap<Address, u64>) -> Run {
        let after = self.balances();
        let exec = self.host.keys.addr;
        let executor = ActorReport {
            index: None,
            address: exec,
            behavior: format!("{:?}", self.host.behavior),
            honest: self.host.behavior == ExecutorBehavior::Honest,
            coins_before: before[&exec],
            coins_after: after[&exec],
            outputs: None,
        };
        let parties = self
            .parties
            .iter()
            .map(|p| ActorReport {
                index: Some(p.index),
                address: p.keys.addr,
                behavior: format!("{:?}", p.behavior),
                honest: p.behavior == PartyBehavior::Honest,
                coins_before: before[&p.keys.addr],
                coins_after: after[&p.keys.addr],
                outputs: p.outputs.clone(),
            })
            .collect();
        let total_before: u64 = before.values().sum();
        let total_after: u64 = after.values().sum();
        let mut messages = BTreeMap::new();
        for m in &self.messages {
            *messages.entry(m.kind.clone()).or_default() += 1;
        }
        let a = audit(&self.chain);
        let report = RunReport {
            outcome: rounds.last().map_or(Outcome::NegotiationFailed, |r| r.outcome),
            seed: self.cfg.seed,
            contract: self.art.policy.contract.clone(),
            function: self.cfg.function.clone(),
            h_f: self.art.h_f,
            h_p: self.art.h_p,
            enclave: EnclaveInfo {
                address: self.enclave.address(),
                tau_res: self.enclave.tau_res(),
                tau_com: self.enclave.tau_com(),
            },
            rounds,
            tx_count: collect_metrics(&self.chain),
            executor,
            parties,
            coins: CoinTotals {
                before: total_before,
                after: total_after,
                conserved: total_before == total_after,
            },
            messages,
            audit: AuditSummary {
                completions: a.entries.len(),
                accepted: a.accepted(),
                consistent: a.consistent(),
            },
        };
        Run {
            report,
            chain: self.chain,
            messages: self.messages,
        }
    }
}
