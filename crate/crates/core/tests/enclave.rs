//! The enclave program driven directly against a chain.

use std::collections::{BTreeMap, BTreeSet};

use cloak::chain::*;
use cloak::codegen::{compile_source, Artifacts};
use cloak::crypto::{encrypt, hash, keygen_labeled, CommitmentOpening, Digest, KeyPair};
use cloak::enclave::*;
use cloak::interpreter::{CellId, Value};

const SUPPLY_CHAIN: &str = include_str!("../fixtures/supply_chain.cloak");

struct Fx {
    chain: Chain,
    enclave: Enclave,
    art: Artifacts,
    exec: KeyPair,
    /// Party 0 is the tenderer, the rest are bidders.
    parties: Vec<KeyPair>,
    bids: Vec<u64>,
    cells: BTreeMap<usize, (CellId, CommitmentOpening)>,
    adr_v: cloak::crypto::Address,
    nonce: u64,
    salt: u64,
}

fn r32(tag: &str, n: u64) -> [u8; 32] {
    cloak::crypto::hash_parts(&[tag.as_bytes(), &n.to_be_bytes()]).0
}

impl Fx {
    fn new(bids: &[u64], tenderer_balance: u64) -> Self {
        let chain = Chain::new();
        let (enclave, _) = Enclave::setup(&[7; 32], chain.genesis_hash(), authority_key(), EnclaveConfig::default());
        let art = compile_source(SUPPLY_CHAIN).unwrap();
        let exec = keygen_labeled("exec", 0);
        let parties: Vec<_> = (0..=bids.len() as u64).map(|i| keygen_labeled("party", i)).collect();
        let mut fx = Fx {
            chain,
            enclave,
            art,
            exec,
            parties,
            bids: bids.to_vec(),
            cells: BTreeMap::new(),
            adr_v: cloak::crypto::Address::ZERO,
            nonce: 0,
            salt: 0,
        };
        let e = fx.exec.clone();
        let (pk_e, adr_e) = (fx.enclave.public_key(), fx.enclave.address());
        fx.send(&e, Payload::DeployService { pk_e, adr_e, adr_exec: e.addr });
        fx.send(&e, Payload::Deposit { amount: 1000 });
        let mut initial = Vec::new();
        for (i, k) in fx.parties.clone().iter().enumerate() {
            fx.send(k, Payload::Register { pk: k.pk });
            fx.send(k, Payload::Deposit { amount: 1000 });
            let bal = if i == 0 { tenderer_balance } else { 10 };
            let cell = CellId::entry("balances", Value::Address(k.addr));
            let o = CommitmentOpening::new(Value::uint(bal).to_bytes(), r32("init", i as u64));
            initial.push(StateEntry {
                cell: cell.clone(),
                value: Some(StoredCell::Sealed(o.commit(&k.pk))),
            });
            fx.cells.insert(i, (cell, o));
        }
        let descriptor = fx.art.verifier(adr_e);
        let deploy = fx.send(&e, Payload::DeployVerifier { descriptor, initial });
        fx.chain.mine_block();
        fx.adr_v = verifier_address(&deploy);
        let (tx, pop) = fx.deploy_proof(&deploy);
        fx.enclave
            .deploy(&fx.art.private, &fx.art.policy, fx.adr_v, &tx, &pop)
            .unwrap();
        fx
    }

    fn deploy_proof(&self, id: &Digest) -> (Transaction, ProofOfPublication) {
        let tx = self.chain.tx(id).unwrap().0.clone();
        let pop = self.chain.build_pop(id, &self.enclave.checkpoint()).unwrap();
        (tx, pop)
    }

    fn send(&mut self, k: &KeyPair, p: Payload) -> Digest {
        self.nonce += 1;
        self.chain.submit(Transaction::new(k, self.nonce, p)).unwrap()
    }

    fn publish(&mut self, tx: Transaction) -> TxStatus {
        let id = self.chain.submit(tx).unwrap();
        self.chain.mine_block();
        self.chain.tx(&id).unwrap().1
    }

    fn proposal(&self) -> Proposal {
        Proposal {
            adr_v: self.adr_v,
            f: "biddingProcure".into(),
            q: 10,
            t_n: self.chain.height() + 5,
            settlement: SettlementPolicy::default(),
        }
    }

    fn params(&self, i: usize) -> PartyParams {
        let mut p = PartyParams::new();
        p.insert("tenderer".into(), Value::Address(self.parties[0].addr));
        if i > 0 {
            p.insert("bids".into(), Value::uint(self.bids[i - 1]));
        }
        p
    }

    fn ack(&self, id_p: Digest, i: usize) -> (Ack, CommitmentOpening) {
        let fp = self.art.policy.function("biddingProcure").unwrap();
        Ack::create(&self.parties[i], id_p, fp, &self.params(i), r32("x", i as u64))
    }

    fn registered(&self) -> BTreeMap<cloak::crypto::Address, cloak::crypto::PublicKey> {
        self.chain.service().unwrap().par_pks.clone()
    }

    /// Proposal, acks from everyone, settlement and publication of TX_p.
    fn settled(&mut self) -> (Digest, Transaction, Vec<CommitmentOpening>) {
        let sp = self.enclave.generate_idp(self.parties[0].addr, self.proposal()).unwrap();
        let (acks, openings): (Vec<_>, Vec<_>) = (0..self.parties.len()).map(|i| self.ack(sp.id_p, i)).unzip();
        let now = self.chain.height();
        let tx_p = self.enclave.settle(&sp.id_p, &acks, &self.registered(), now).unwrap();
        assert!(self.publish(tx_p.clone()).is_ok());
        (sp.id_p, tx_p, openings)
    }

    fn bundle(&self, id_p: Digest, i: usize, x: &CommitmentOpening) -> InputBundle {
        InputBundle {
            id_p,
            params: x.clone(),
            states: vec![self.cells[&i].clone()],
        }
    }

    fn envelope(&mut self, i: usize, b: &InputBundle) -> Envelope {
        self.salt += 1;
        Envelope::seal(&self.parties[i], &self.enclave.public_key(), b.id_p, "inputs", &b.to_bytes(), r32("env", self.salt))
    }

    fn envelopes(&mut self, id_p: Digest, xs: &[CommitmentOpening], skip: &[usize]) -> Vec<Envelope> {
        (0..self.parties.len())
            .filter(|i| !skip.contains(i))
            .map(|i| {
                let b = self.bundle(id_p, i, &xs[i]);
                self.envelope(i, &b)
            })
            .collect()
    }

    fn view(&self, tx_p: &Transaction) -> ExecView {
        let h = self.chain.tx(&tx_p.id()).unwrap().2;
        let cp = self.enclave.checkpoint_below(h).unwrap();
        ExecView {
            tx_p: tx_p.clone(),
            pop: self.chain.build_pop(&tx_p.id(), &cp).unwrap(),
            state: self.chain.state_witness(&self.adr_v).unwrap(),
        }
    }

    fn window(&mut self, tx_p: &Transaction) -> WindowView {
        let h_cp = self.chain.tx(&tx_p.id()).unwrap().2;
        while self.chain.height() < h_cp + self.enclave.tau_res() {
            self.chain.mine_block();
        }
        let cp = self.chain.block(h_cp).unwrap().hash();
        WindowView {
            pop: self.chain.headers_since(&cp).unwrap(),
            bodies: self.chain.bodies_since(&cp),
            state: self.chain.state_witness(&self.adr_v).unwrap(),
        }
    }

    fn respond(&mut self, id_p: Digest, i: usize, b: &InputBundle) {
        self.salt += 1;
        let inputs = encrypt(&self.enclave.public_key(), &b.to_bytes(), &r32("res", self.salt));
        let k = self.parties[i].clone();
        self.send(&k, Payload::Response { id_p, inputs });
        self.chain.mine_block();
    }

    fn open_cell(&self, i: usize, c: &[StateEntry]) -> Option<u64> {
        let cell = CellId::entry("balances", Value::Address(self.parties[i].addr));
        let e = c.iter().find(|e| e.cell == cell)?;
        let StoredCell::Sealed(ct) = e.value.as_ref()? else { return None };
        let o = CommitmentOpening::open(&self.parties[i], ct).ok()?;
        Value::from_bytes(&o.plaintext)?.as_uint().map(|u| u.as_u64())
    }
}

#[test]
fn setup_is_deterministic_and_attested() {
    let g = Chain::new().genesis_hash();
    let (a, rep) = Enclave::setup(&[1; 32], g, authority_key(), EnclaveConfig::default());
    let (b, _) = Enclave::setup(&[1; 32], g, authority_key(), EnclaveConfig::default());
    let (c, _) = Enclave::setup(&[2; 32], g, authority_key(), EnclaveConfig::default());
    assert_eq!(a.public_key(), b.public_key());
    assert_ne!(a.public_key(), c.public_key());
    assert!(rep.verify(&issuer_key()));
    assert_eq!(rep.pk_e, a.public_key());
    assert!(!rep.verify(&keygen_labeled("fake-issuer", 0).pk));
    let mut wrong = rep.clone();
    wrong.pk_e = c.public_key();
    assert!(!wrong.verify(&issuer_key()));
}

#[test]
fn windows_stay_in_bounds() {
    let g = Chain::new().genesis_hash();
    let cfg = EnclaveConfig::default();
    for s in 0..200u8 {
        let (e, _) = Enclave::setup(&[s; 32], g, authority_key(), cfg);
        assert!((5..=20).contains(&e.tau_res()), "{}", e.tau_res());
        assert!((20..=60).contains(&e.tau_com()), "{}", e.tau_com());
        assert!(e.tau_com() >= e.tau_res() + cfg.min_gap);
    }
}

#[test]
fn deploy_binds_only_matching_artifacts() {
    let mut fx = Fx::new(&[5, 3, 7], 100);
    let adr_f = fx.enclave.deployment(&fx.adr_v).unwrap();
    let deploy_id = fx.chain.blocks()[1].txs.iter().find(|t| matches!(t.payload, Payload::DeployVerifier { .. })).unwrap().id();
    let tx = fx.chain.tx(&deploy_id).unwrap().0.clone();
    let genesis = fx.chain.genesis_hash();
    let pop = fx.chain.build_pop(&deploy_id, &genesis).unwrap();

    // Idempotent.
    assert_eq!(fx.enclave.deploy(&fx.art.private, &fx.art.policy, fx.adr_v, &tx, &pop), Ok(adr_f));

    let mut policy = fx.art.policy.clone();
    policy.functions[0].params[2].id = "tenderer2".into();
    assert!(matches!(
        fx.enclave.deploy(&fx.art.private, &policy, fx.adr_v, &tx, &pop),
        Err(EnclaveError::BindingMismatch(m)) if m == "H_P"
    ));
    let mut f = fx.art.private.clone();
    f.name.push('X');
    assert!(matches!(
        fx.enclave.deploy(&f, &fx.art.policy, fx.adr_v, &tx, &pop),
        Err(EnclaveError::BindingMismatch(m)) if m == "H_F"
    ));
    assert!(matches!(
        fx.enclave.deploy(&fx.art.private, &fx.art.policy, cloak::crypto::Address([9; 20]), &tx, &pop),
        Err(EnclaveError::BindingMismatch(_))
    ));
    let mut forged = pop.clone();
    forged.headers[0].tx_ids.reverse();
    forged.headers[0].tx_ids.push(hash(b"x"));
    assert!(matches!(
        fx.enclave.deploy(&fx.art.private, &fx.art.policy, fx.adr_v, &tx, &forged),
        Err(EnclaveError::BadPoP(_))
    ));
    // An enclave that the verifier does not trust refuses the binding.
    let (mut other, _) = Enclave::setup(&[8; 32], genesis, authority_key(), EnclaveConfig::default());
    assert!(matches!(
        other.deploy(&fx.art.private, &fx.art.policy, fx.adr_v, &tx, &pop),
        Err(EnclaveError::BindingMismatch(_))
    ));
    fx.chain.mine_block();
}

#[test]
fn generate_idp_sessions() {
    let mut fx = Fx::new(&[5, 3], 100);
    let a = fx.enclave.generate_idp(fx.parties[0].addr, fx.proposal()).unwrap();
    let b = fx.enclave.generate_idp(fx.parties[0].addr, fx.proposal()).unwrap();
    assert_ne!(a.id_p, b.id_p);
    assert!(a.verify(&fx.enclave.public_key()));
    let mut tampered = a.clone();
    tampered.proposal.q += 1;
    assert!(!tampered.verify(&fx.enclave.public_key()));
    assert_eq!(fx.enclave.status(&a.id_p), Some(SessionStatus::GenerateIdp));
    let mut p = fx.proposal();
    p.f = "nope".into();
    assert!(matches!(fx.enclave.generate_idp(fx.parties[0].addr, p), Err(EnclaveError::PolicyUnmet(_))));
    let mut p = fx.proposal();
    p.adr_v = cloak::crypto::Address([1; 20]);
    assert_eq!(fx.enclave.generate_idp(fx.parties[0].addr, p), Err(EnclaveError::UnknownDeployment));
}

#[test]
fn settlement_rules() {
    let mut fx = Fx::new(&[5, 3, 7], 100);
    let sp = fx.enclave.generate_idp(fx.parties[0].addr, fx.proposal()).unwrap();
    let acks: Vec<Ack> = (0..4).map(|i| fx.ack(sp.id_p, i).0).collect();
    let reg = fx.registered();

    // Past the deadline.
    let late = sp.proposal.t_n + 1;
    assert!(matches!(fx.enclave.settle(&sp.id_p, &acks, &reg, late), Err(EnclaveError::Timeout { .. })));

    // A disagreeing tenderer.
    let fp = fx.art.policy.function("biddingProcure").unwrap().clone();
    let mut odd = fx.params(2);
    odd.insert("tenderer".into(), Value::Address(fx.parties[1].addr));
    let (bad, _) = Ack::create(&fx.parties[2], sp.id_p, &fp, &odd, [1; 32]);
    let mixed = vec![acks[0].clone(), acks[1].clone(), bad];
    assert!(matches!(fx.enclave.settle(&sp.id_p, &mixed, &reg, 0), Err(EnclaveError::PolicyUnmet(_))));

    // A forged ack is dropped; with only one party left the policy fails.
    let mut forged = acks[1].clone();
    forged.public.insert("tenderer".into(), Value::Address(fx.parties[3].addr));
    assert!(!forged.verify());
    let two = vec![acks[0].clone(), forged.clone()];
    assert!(matches!(fx.enclave.settle(&sp.id_p, &two, &reg, 0), Err(EnclaveError::PolicyUnmet(_))));
    assert_eq!(fx.enclave.settle(&sp.id_p, &[forged], &reg, 0), Err(EnclaveError::BadAckSignature));

    // Nobody bids.
    assert!(matches!(fx.enclave.settle(&sp.id_p, &acks[..1], &reg, 0), Err(EnclaveError::PolicyUnmet(_))));
    assert_eq!(fx.enclave.status(&sp.id_p), Some(SessionStatus::GenerateIdp));

    // All valid: parties in ack order, H_Cx the ack commitment digests.
    let order = vec![acks[2].clone(), acks[0].clone(), acks[1].clone(), acks[3].clone(), acks[2].clone()];
    let tx = fx.enclave.settle(&sp.id_p, &order, &reg, sp.proposal.t_n).unwrap();
    let Payload::Propose { proposal, tau_res, tau_com, .. } = &tx.payload else { panic!() };
    let want: Vec<_> = [2, 0, 1, 3].iter().map(|i| fx.parties[*i].addr).collect();
    assert_eq!(proposal.parties, want);
    assert_eq!(proposal.h_cx, [2, 0, 1, 3].iter().map(|i| acks[*i].c_x.digest()).collect::<Vec<_>>());
    assert_eq!((*tau_res, *tau_com), (fx.enclave.tau_res(), fx.enclave.tau_com()));
    assert_eq!(tx.sender, fx.enclave.address());
    assert_eq!(fx.enclave.status(&sp.id_p), Some(SessionStatus::Settle));
    assert!(matches!(fx.enclave.settle(&sp.id_p, &acks, &reg, 0), Err(EnclaveError::BadStatus { .. })));
}

#[test]
fn honest_execution_completes_on_chain() {
    let mut fx = Fx::new(&[5, 3, 7], 100);
    let (id_p, tx_p, xs) = fx.settled();
    let envs = fx.envelopes(id_p, &xs, &[]);
    let view = fx.view(&tx_p);
    assert_eq!(fx.enclave.execute_mpt(&id_p, &envs, &view), Ok(ExecOutcome::Executed));
    assert_eq!(fx.enclave.status(&id_p), Some(SessionStatus::Execute));
    assert_eq!(fx.enclave.challenge_parties(&id_p), Err(EnclaveError::BadStatus {
        expected: SessionStatus::Settle,
        found: SessionStatus::Execute
    }));
    let tx_com = fx.enclave.emit_complete(&id_p).unwrap();
    assert!(matches!(fx.enclave.emit_complete(&id_p), Err(EnclaveError::BadStatus { .. })));
    assert_eq!(fx.publish(tx_com.clone()), TxStatus::Ok);
    assert_eq!(fx.chain.proposal(&id_p).unwrap().status, ProposalStatus::Complete);

    let Payload::Complete { c_r, c_s_new, .. } = &tx_com.payload else { panic!() };
    // winner = B (bid 3) is public; sPrice = 5 goes to B only.
    assert_eq!(c_r[0].value, StoredCell::Public(Value::Address(fx.parties[2].addr)));
    let StoredCell::Sealed(sp_ct) = &c_r[1].value else { panic!("sPrice must be sealed") };
    let o = CommitmentOpening::open(&fx.parties[2], sp_ct).unwrap();
    assert_eq!(Value::from_bytes(&o.plaintext), Some(Value::uint(5)));
    assert!(CommitmentOpening::open(&fx.parties[1], sp_ct).is_err());
    assert!(CommitmentOpening::open(&fx.parties[0], sp_ct).is_err());
    // New balances: tenderer 100 - 5, winner 10 + 5, each sealed to its owner.
    assert_eq!(fx.open_cell(0, c_s_new), Some(95));
    assert_eq!(fx.open_cell(2, c_s_new), Some(15));
    assert_eq!(c_s_new.len(), 2);
    assert!(CommitmentOpening::open(&fx.parties[1], match &c_s_new[0].value {
        Some(StoredCell::Sealed(c)) => c,
        _ => panic!(),
    })
    .is_err());
}

#[test]
fn inconsistent_inputs_are_flagged() {
    let mut fx = Fx::new(&[5, 3, 7], 100);
    let (id_p, tx_p, xs) = fx.settled();
    let mut envs = fx.envelopes(id_p, &xs, &[2]);
    // Party 2 sends a bid of 4 instead of the committed 3.
    let mut lie = fx.params(2);
    lie.insert("bids".into(), Value::uint(4));
    let wrong = CommitmentOpening::new(cloak::codegen::canonical_json(&lie), xs[2].randomness);
    let b = fx.bundle(id_p, 2, &wrong);
    envs.push(fx.envelope(2, &b));
    // Party 3 sends a stale state opening.
    let mut b3 = fx.bundle(id_p, 3, &xs[3]);
    b3.states[0].1 = CommitmentOpening::new(Value::uint(999).to_bytes(), [0; 32]);
    envs.retain(|e| e.from != fx.parties[3].addr);
    envs.push(fx.envelope(3, &b3));
    let view = fx.view(&tx_p);
    let want: BTreeSet<_> = [fx.parties[2].addr, fx.parties[3].addr].into();
    assert_eq!(fx.enclave.execute_mpt(&id_p, &envs, &view), Ok(ExecOutcome::Misbehaving(want)));
    assert_eq!(fx.enclave.status(&id_p), Some(SessionStatus::Settle));

    // An envelope from a non-party or sealed to another key is ignored.
    let stranger = keygen_labeled("stranger", 0);
    let b1 = fx.bundle(id_p, 1, &xs[1]);
    let env = Envelope::seal(&stranger, &fx.enclave.public_key(), id_p, "inputs", &b1.to_bytes(), [3; 32]);
    let out = fx.enclave.execute_mpt(&id_p, &[env], &view).unwrap();
    assert!(matches!(out, ExecOutcome::Misbehaving(m) if m.len() == 2));
}

#[test]
fn bad_proofs_of_publication_abort() {
    let mut fx = Fx::new(&[5, 3], 100);
    let (id_p, tx_p, xs) = fx.settled();
    let envs = fx.envelopes(id_p, &xs, &[]);
    let good = fx.view(&tx_p);

    let mut v = good.clone();
    v.pop.checkpoint = hash(b"unknown block");
    assert!(matches!(fx.enclave.execute_mpt(&id_p, &envs, &v), Err(EnclaveError::BadPoP(_))));
    let mut v = good.clone();
    v.pop.headers.last_mut().unwrap().state_root = hash(b"lie");
    assert!(matches!(fx.enclave.execute_mpt(&id_p, &envs, &v), Err(EnclaveError::BadPoP(_))));
    let mut v = good.clone();
    v.state.cells[0].value = None;
    assert!(matches!(fx.enclave.execute_mpt(&id_p, &envs, &v), Err(EnclaveError::BadPoP(_))));
    let mut v = good.clone();
    v.tx_p.nonce += 1;
    assert!(matches!(fx.enclave.execute_mpt(&id_p, &envs, &v), Err(EnclaveError::BadPoP(_))));
    assert_eq!(fx.enclave.status(&id_p), Some(SessionStatus::Settle));
    assert_eq!(fx.enclave.execute_mpt(&id_p, &envs, &good), Ok(ExecOutcome::Executed));
}

#[test]
fn checkpoint_never_regresses() {
    let mut fx = Fx::new(&[5, 3], 100);
    let (id_p, tx_p, xs) = fx.settled();
    let old_view = fx.view(&tx_p);
    for _ in 0..3 {
        fx.chain.mine_block();
    }
    let envs = fx.envelopes(id_p, &xs, &[0]);
    let new_view = fx.view(&tx_p);
    fx.enclave.execute_mpt(&id_p, &envs, &new_view).unwrap();
    let h = fx.enclave.checkpoint_height();
    assert_eq!(h, fx.chain.height());
    // The older proof still verifies but does not move the checkpoint back.
    let mut stale = old_view.clone();
    stale.state = fx.chain.state_witness(&fx.adr_v).unwrap();
    let _ = fx.enclave.execute_mpt(&id_p, &envs, &old_view);
    assert_eq!(fx.enclave.checkpoint_height(), h);
}

#[test]
fn challenged_party_that_responds_is_cleared() {
    let mut fx = Fx::new(&[5, 3, 7], 100);
    let (id_p, tx_p, xs) = fx.settled();
    let envs = fx.envelopes(id_p, &xs, &[2]);
    let view = fx.view(&tx_p);
    let silent = fx.parties[2].addr;
    assert_eq!(fx.enclave.execute_mpt(&id_p, &envs, &view), Ok(ExecOutcome::Misbehaving([silent].into())));
    let cha = fx.enclave.challenge_parties(&id_p).unwrap().unwrap();
    assert_eq!(cha.payload, Payload::Challenge { id_p, parties: vec![silent] });
    assert!(fx.publish(cha).is_ok());
    let b = fx.bundle(id_p, 2, &xs[2]);
    fx.respond(id_p, 2, &b);
    let w = fx.window(&tx_p);
    assert_eq!(fx.enclave.adjudicate(&id_p, &w), Ok(Adjudication::Resume));
    let view = fx.view(&tx_p);
    assert_eq!(fx.enclave.execute_mpt(&id_p, &[], &view), Ok(ExecOutcome::Executed));
    let tx_com = fx.enclave.emit_complete(&id_p).unwrap();
    assert!(fx.publish(tx_com).is_ok());
    assert_eq!(fx.chain.proposal(&id_p).unwrap().status, ProposalStatus::Complete);
}

#[test]
fn unanswered_or_wrong_responses_are_punished() {
    for wrong in [false, true] {
        let mut fx = Fx::new(&[5, 3, 7], 100);
        let (id_p, tx_p, xs) = fx.settled();
        let envs = fx.envelopes(id_p, &xs, &[1]);
        let view = fx.view(&tx_p);
        fx.enclave.execute_mpt(&id_p, &envs, &view).unwrap();
        let cha = fx.enclave.challenge_parties(&id_p).unwrap().unwrap();
        fx.publish(cha);
        if wrong {
            let mut b = fx.bundle(id_p, 1, &xs[1]);
            b.params.randomness[0] ^= 1;
            fx.respond(id_p, 1, &b);
        }
        // Before the window closes the enclave refuses to judge.
        let h_cp = fx.chain.tx(&tx_p.id()).unwrap().2;
        let cp = fx.chain.block(h_cp).unwrap().hash();
        let early = WindowView {
            pop: fx.chain.headers_since(&cp).unwrap(),
            bodies: fx.chain.bodies_since(&cp),
            state: fx.chain.state_witness(&fx.adr_v).unwrap(),
        };
        assert!(matches!(fx.enclave.adjudicate(&id_p, &early), Err(EnclaveError::BadPoP(_))));

        let mut w = fx.window(&tx_p);
        let mut hidden = w.clone();
        hidden.bodies.pop();
        assert!(matches!(fx.enclave.adjudicate(&id_p, &hidden), Err(EnclaveError::BadPoP(_))));
        let Adjudication::Punish(pns) = fx.enclave.adjudicate(&id_p, &w).unwrap() else { panic!("expected punish") };
        assert_eq!(pns.payload, Payload::Punish { id_p, malicious: vec![fx.parties[1].addr] });
        assert_eq!(fx.enclave.status(&id_p), Some(SessionStatus::Abort));
        assert!(fx.publish(pns).is_ok());
        let coins: Vec<u64> = fx.parties.iter().map(|p| fx.chain.coins(&p.addr)).collect();
        // n = 4, m = 1: (n + 1)q = 50 over 3 honest parties and the executor.
        assert_eq!(coins, vec![990 + 14, 990, 990 + 12, 990 + 12]);
        assert_eq!(fx.chain.coins(&fx.exec.addr), 990 + 12);
        w.bodies.clear();
        assert!(matches!(fx.enclave.adjudicate(&id_p, &w), Err(EnclaveError::BadStatus { .. })));
    }
}

#[test]
fn contract_failure_aborts_without_blame() {
    // The tenderer cannot pay the second price: balances[tenderer] underflows.
    let mut fx = Fx::new(&[5, 3, 7], 2);
    let (id_p, tx_p, xs) = fx.settled();
    let envs = fx.envelopes(id_p, &xs, &[]);
    let view = fx.view(&tx_p);
    let ExecOutcome::Aborted { reason, tx_pns } = fx.enclave.execute_mpt(&id_p, &envs, &view).unwrap() else {
        panic!("expected abort")
    };
    assert!(reason.contains("Overflow"), "{reason}");
    assert_eq!(tx_pns.payload, Payload::Punish { id_p, malicious: vec![] });
    assert_eq!(fx.enclave.status(&id_p), Some(SessionStatus::Abort));
    assert!(fx.enclave.emit_complete(&id_p).is_err());
    let h_cp = fx.chain.tx(&tx_p.id()).unwrap().2;
    while fx.chain.height() < h_cp + fx.enclave.tau_res() {
        fx.chain.mine_block();
    }
    assert!(fx.publish(tx_pns).is_ok());
    assert!(fx.parties.iter().all(|p| fx.chain.coins(&p.addr) == 1000));
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Execute,
    ExecuteMissing,
    Challenge,
    Respond,
    Adjudicate,
    Complete,
}

const OPS: [Op; 6] = [Op::Execute, Op::ExecuteMissing, Op::Challenge, Op::Respond, Op::Adjudicate, Op::Complete];

struct Node {
    fx: Fx,
    emitted: Vec<TxKind>,
}

fn step(n: &mut Node, id_p: Digest, tx_p: &Transaction, xs: &[CommitmentOpening], op: Op) {
    let fx = &mut n.fx;
    let out = match op {
        Op::Execute | Op::ExecuteMissing => {
            let skip: &[usize] = if matches!(op, Op::Execute) { &[] } else { &[1] };
            let envs = fx.envelopes(id_p, xs, skip);
            let view = fx.view(tx_p);
            match fx.enclave.execute_mpt(&id_p, &envs, &view) {
                Ok(ExecOutcome::Aborted { tx_pns, .. }) => Some(tx_pns),
                _ => None,
            }
        }
        Op::Challenge => fx.enclave.challenge_parties(&id_p).ok().flatten(),
        Op::Respond => {
            let b = fx.bundle(id_p, 1, &xs[1]);
            fx.respond(id_p, 1, &b);
            None
        }
        Op::Adjudicate => {
            let w = fx.window(tx_p);
            match fx.enclave.adjudicate(&id_p, &w) {
                Ok(Adjudication::Punish(t)) => Some(t),
                _ => None,
            }
        }
        Op::Complete => fx.enclave.emit_complete(&id_p).ok(),
    };
    if let Some(t) = out {
        n.emitted.push(t.kind());
    }
}

fn explore(n: &Node, id_p: Digest, tx_p: &Transaction, xs: &[CommitmentOpening], depth: usize, visited: &mut usize) {
    *visited += 1;
    for (from, to) in n.fx.enclave.transitions(&id_p) {
        assert!(from.can_move_to(*to), "{from:?} -> {to:?}");
    }
    let com = n.emitted.iter().filter(|k| **k == TxKind::Com).count();
    let pns = n.emitted.iter().filter(|k| **k == TxKind::Pns).count();
    assert!(com + pns <= 1, "{:?}", n.emitted);
    if depth == 0 {
        return;
    }
    for op in OPS {
        let mut child = Node {
            fx: Fx {
                chain: n.fx.chain.clone(),
                enclave: n.fx.enclave.clone(),
                art: n.fx.art.clone(),
                exec: n.fx.exec.clone(),
                parties: n.fx.parties.clone(),
                bids: n.fx.bids.clone(),
                cells: n.fx.cells.clone(),
                adr_v: n.fx.adr_v,
                nonce: n.fx.nonce,
                salt: n.fx.salt,
            },
            emitted: n.emitted.clone(),
        };
        step(&mut child, id_p, tx_p, xs, op);
        explore(&child, id_p, tx_p, xs, depth - 1, visited);
    }
}

/// Every sequence of up to four host actions keeps the session inside the
/// declared status graph and never yields both a completion and a
/// punishment.
#[test]
fn status_machine_is_closed() {
    let mut fx = Fx::new(&[5, 3], 100);
    let (id_p, tx_p, xs) = fx.settled();
    let root = Node { fx, emitted: Vec::new() };
    let mut visited = 0;
    explore(&root, id_p, &tx_p, &xs, 4, &mut visited);
    assert_eq!(visited, (0..=4).map(|k| 6usize.pow(k)).sum::<usize>());
}
