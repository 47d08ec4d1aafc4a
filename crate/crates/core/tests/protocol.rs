//! Whole runs of the protocol over the shipped scenarios and generated
//! variations of them.

use std::path::PathBuf;

use cloak::chain::{punish_refunds, timeout_refunds, Payload, StoredCell, TxKind};
use cloak::crypto::{CryptoError, keygen_labeled};
use cloak::interpreter::{CellId, Value};
use cloak::protocol::*;

fn scenario(name: &str) -> (ScenarioConfig, String) {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name);
    ScenarioConfig::load(&p).unwrap()
}

fn run(name: &str) -> Run {
    let (cfg, src) = scenario(name);
    run_scenario(&cfg, &src).unwrap()
}

fn kinds(r: &RoundReport) -> Vec<(TxKind, u64)> {
    r.txs.iter().map(|(k, n)| (*k, *n)).collect()
}

fn balance(p: &ActorReport) -> Option<u64> {
    let o = p.outputs.as_ref()?;
    o.state
        .get(&CellId::entry("balances", Value::Address(p.address)))
        .and_then(Value::as_uint)
        .map(|u| u.as_u64())
}

#[test]
fn honest_run_takes_two_transactions() {
    let r = run("honest.json");
    let rep = &r.report;
    assert_eq!(rep.outcome, Outcome::Complete);
    assert_eq!(rep.rounds.len(), 1);
    assert_eq!(kinds(&rep.rounds[0]), vec![(TxKind::P, 1), (TxKind::Com, 1)]);
    assert_eq!(rep.tx_count.mpt, 2);
    // Service, executor deposit, 4 × (register + deposit), verifier.
    assert_eq!(rep.tx_count.setup, 11);
    assert!(rep.coins.conserved);
    assert_eq!(rep.audit.completions, 1);
    assert!(rep.audit.consistent && rep.audit.accepted == 1);
    for a in rep.actors() {
        assert_eq!(a.coins_before, a.coins_after, "{}", a.behavior);
    }
}

#[test]
fn parties_decrypt_only_their_slices() {
    let r = run("honest.json");
    let winner = r.report.parties[2].address;
    for p in &r.report.parties {
        let o = p.outputs.as_ref().unwrap();
        assert_eq!(o.returns.get("winner"), Some(&Value::Address(winner)));
        if p.index == Some(2) {
            assert_eq!(o.returns.get("sPrice"), Some(&Value::uint(5)));
        } else {
            assert!(!o.returns.contains_key("sPrice"));
        }
    }
    let b: Vec<_> = r.report.parties.iter().map(balance).collect();
    assert_eq!(b, vec![Some(95), None, Some(15), None]);

    // A non-winner holding the TX_com cannot open the winner's price.
    let tx = r.chain.blocks().iter().flat_map(|b| &b.txs).find(|t| t.kind() == TxKind::Com).unwrap();
    let Payload::Complete { c_r, .. } = &tx.payload else { unreachable!() };
    let price = c_r.iter().find(|e| e.name == "sPrice").unwrap();
    assert!(matches!(price.value, StoredCell::Sealed(_)));
    let loser = keygen_labeled("cloak/party", 2);
    assert_eq!(open_stored(&loser, &price.value), Err(CryptoError::Decrypt));
    let winner_keys = keygen_labeled("cloak/party", 3);
    assert_eq!(open_stored(&winner_keys, &price.value), Ok(Value::uint(5)));
}

#[test]
fn responsive_challenge_completes_in_four() {
    let r = run("respond_to_challenge.json");
    assert_eq!(r.report.outcome, Outcome::Complete);
    assert_eq!(
        kinds(&r.report.rounds[0]),
        vec![(TxKind::P, 1), (TxKind::Cha, 1), (TxKind::Res, 1), (TxKind::Com, 1)]
    );
    assert!(r.report.rounds[0].punished.is_empty());
    for a in r.report.actors() {
        assert_eq!(a.coins_before, a.coins_after);
    }
}

#[test]
fn never_respond_is_punished() {
    let r = run("never_respond.json");
    let rep = &r.report;
    assert_eq!(rep.outcome, Outcome::Abort);
    assert_eq!(
        kinds(&rep.rounds[0]),
        vec![(TxKind::P, 1), (TxKind::Cha, 1), (TxKind::Pns, 1)]
    );
    assert_eq!(rep.rounds[0].punished, vec![rep.parties[2].address]);
    // q = 10, n = 3, m = 1: 10 · (1 + 1/3), split exactly over 40 coins.
    let q = 10;
    let refunds = punish_refunds(
        q,
        &rep.rounds[0].parties,
        &rep.rounds[0].punished,
        rep.executor.address,
    );
    assert_eq!(refunds.iter().map(|r| r.1).sum::<u64>(), 40);
    assert_eq!(rep.executor.coins_after, rep.executor.coins_before - q + 13);
    assert_eq!(rep.parties[2].coins_after, rep.parties[2].coins_before - q);
    assert!(rep.fairness_violations().is_empty());
    assert!(rep.coins.conserved);
}

#[test]
fn mismatched_inputs_are_punished() {
    let r = run("mismatched_inputs.json");
    assert_eq!(r.report.outcome, Outcome::Abort);
    assert_eq!(r.report.rounds[0].punished, vec![r.report.parties[2].address]);
    // The wrong response is on chain but does not clear the party.
    assert_eq!(r.report.rounds[0].txs.get(&TxKind::Res), Some(&1));
}

#[test]
fn dropped_completion_times_out() {
    let r = run("drop_txcom.json");
    let rep = &r.report;
    assert_eq!(rep.outcome, Outcome::Timeout);
    let round = &rep.rounds[0];
    assert_eq!(round.txs.get(&TxKind::Out), Some(&1));
    // Every active party claims; the later claims revert.
    assert_eq!(round.reverted, 2);
    let refunds = timeout_refunds(10, &round.parties);
    assert_eq!(refunds.iter().map(|r| r.1).sum::<u64>(), 40);
    assert_eq!(rep.executor.coins_after, rep.executor.coins_before - 10);
    for p in &rep.parties {
        assert!(p.coins_after > p.coins_before);
    }
    assert!(rep.fairness_violations().is_empty());
    // The timeout claim is valid only after τ_com.
    let h_cp = round.h_cp.unwrap();
    let out = r.trace().iter().find(|t| t.kind == TxKind::Out && t.status == "ok").unwrap();
    assert!(out.height > h_cp + rep.enclave.tau_com);
}

#[test]
fn crashed_host_times_out() {
    let r = run("crash_after_settle.json");
    assert_eq!(r.report.outcome, Outcome::Timeout);
    assert_eq!(r.report.rounds[0].mpt_txs, 2);
}

#[test]
fn late_inputs_are_challenged_and_answered() {
    let r = run("late_inputs.json");
    assert_eq!(r.report.outcome, Outcome::Complete);
    assert_eq!(r.report.rounds[0].mpt_txs, 4);
}

#[test]
fn second_round_needs_no_setup() {
    let r = run("two_rounds.json");
    let rep = &r.report;
    assert_eq!(rep.outcome, Outcome::Complete);
    assert_eq!(rep.rounds.len(), 2);
    for round in &rep.rounds {
        assert_eq!(round.mpt_txs, 2);
        assert_eq!(round.setup_txs, 0);
    }
    // Round two starts from round one's sealed balances.
    assert_eq!(balance(&rep.parties[0]), Some(990));
    assert_eq!(balance(&rep.parties[2]), Some(20));
    assert_eq!(rep.audit.accepted, 2);
}

#[test]
fn failed_negotiation_touches_nothing() {
    let r = run("negotiation_failed.json");
    assert_eq!(r.report.outcome, Outcome::NegotiationFailed);
    assert_eq!(r.report.outcome.exit_code(), 5);
    assert!(r.report.rounds[0].reason.as_deref().unwrap().contains("at least 3"));
    assert_eq!(r.report.tx_count.mpt, 0);
}

#[test]
fn runs_are_deterministic() {
    for name in ["honest.json", "never_respond.json", "drop_txcom.json"] {
        let (cfg, src) = scenario(name);
        let a = run_scenario(&cfg, &src).unwrap();
        let b = run_scenario(&cfg, &src).unwrap();
        assert_eq!(a.trace_jsonl(), b.trace_jsonl(), "{name}");
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
    }
}

#[test]
fn seed_changes_only_randomized_fields() {
    let (mut cfg, src) = scenario("respond_to_challenge.json");
    let a = run_scenario(&cfg, &src).unwrap();
    cfg.seed += 1;
    let b = run_scenario(&cfg, &src).unwrap();
    assert_eq!(a.trace().len(), b.trace().len());
    for (x, y) in a.trace().iter().zip(b.trace()) {
        assert_eq!((x.height, x.kind, x.sender, &x.status), (y.height, y.kind, y.sender, &y.status));
    }
    assert_ne!(a.report.rounds[0].id_p, b.report.rounds[0].id_p);
    assert_ne!(a.trace_jsonl(), b.trace_jsonl());
}

#[test]
fn bad_configs_are_errors() {
    let (cfg, src) = scenario("honest.json");
    let mut c = cfg.clone();
    c.proposer = 9;
    assert!(matches!(run_scenario(&c, &src), Err(ScenarioError::Invalid(_))));
    let mut c = cfg.clone();
    c.function = "nope".into();
    assert!(matches!(run_scenario(&c, &src), Err(ScenarioError::Invalid(_))));
    let mut c = cfg.clone();
    c.parties[1].params.insert("bids".into(), ParamSpec::Bool(true));
    assert!(matches!(run_scenario(&c, &src), Err(ScenarioError::Invalid(_))));
    let mut c = cfg.clone();
    c.parties[1].deposit = 1;
    assert!(matches!(run_scenario(&c, &src), Err(ScenarioError::Invalid(_))));
    assert!(matches!(run_scenario(&cfg, "contract {"), Err(ScenarioError::Compile(_))));
    assert!(matches!(
        ScenarioConfig::from_json(r#"{"contract": "x", "function": "f", "parties": [], "q": 1, "extra": 0}"#),
        Err(ScenarioError::Json(_))
    ));
}

#[test]
fn late_completion_loses_to_timeout_claims() {
    let (mut cfg, src) = scenario("honest.json");
    cfg.executor = ExecutorBehavior::DelayBeyondTauCom;
    let r = run_scenario(&cfg, &src).unwrap();
    assert_eq!(r.report.outcome, Outcome::Timeout);
    let com = r.trace().iter().find(|t| t.kind == TxKind::Com).unwrap();
    assert_eq!(com.status, "revert:BadStatus");
    assert_eq!(r.report.audit.completions, 1);
    assert_eq!(r.report.audit.accepted, 0);
    assert!(r.report.audit.consistent);
    let out_revert = r.trace().iter().filter(|t| t.kind == TxKind::Out && t.status == "revert:BadStatus").count();
    assert_eq!(out_revert, 3);
}
