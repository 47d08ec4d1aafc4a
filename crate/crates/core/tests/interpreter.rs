//! Plaintext execution and output partitioning.

use std::collections::{BTreeMap, BTreeSet};

use cloak::codegen::{compile_source, erase_ownership, Artifacts};
use cloak::crypto::{keygen_labeled, Address};
use cloak::interpreter::*;
use primitive_types::U256;
use proptest::prelude::*;

const SUPPLY_CHAIN: &str = include_str!("../fixtures/supply_chain.cloak");
const SECOND_PRICE: &str = include_str!("../fixtures/second_price.cloak");

fn addr(n: u64) -> Address {
    keygen_labeled("party", n).addr
}

fn compile(src: &str) -> Artifacts {
    compile_source(src).unwrap_or_else(|e| panic!("{e}"))
}

fn auction_params(parties: &[Address], bids: &[u64], tenderer: Address) -> BTreeMap<String, Value> {
    BTreeMap::from([
        (
            "parties".into(),
            Value::Array(parties.iter().map(|a| Value::Address(*a)).collect()),
        ),
        (
            "bids".into(),
            Value::Array(bids.iter().map(|b| Value::uint(*b)).collect()),
        ),
        ("tenderer".into(), Value::Address(tenderer)),
    ])
}

fn balance(s: &StateStore, a: Address) -> Option<&Value> {
    s.get(&CellId::entry("balances", Value::Address(a)))
}

fn run(a: &Artifacts, f: &str, state: &StateStore, params: &BTreeMap<String, Value>) -> Result<ExecOutput, ExecAbort> {
    // PUT functions are not in the private contract, so run the erased
    // source contract instead.
    exec_function(&erase_ownership(&a.checked.ast), f, state, params, addr(99), &ExecConfig::default())
}

#[test]
fn supply_chain_worked_example() {
    let a = compile(SUPPLY_CHAIN);
    let (pa, pb, pc, t) = (addr(0), addr(1), addr(2), addr(10));
    let state = StateStore::new().with(CellId::entry("balances", Value::Address(t)), Value::uint(10));
    let params = auction_params(&[pa, pb, pc], &[5, 3, 7], t);
    let out = run(&a, "biddingProcure", &state, &params).unwrap();
    assert_eq!(out.ret("winner"), Some(&Value::Address(pb)));
    assert_eq!(out.ret("sPrice"), Some(&Value::uint(5)));
    assert_eq!(balance(&out.state, t), Some(&Value::uint(5)));
    assert_eq!(balance(&out.state, pb), Some(&Value::uint(5)));
    // The input store is untouched.
    assert_eq!(balance(&state, pb), None);

    let fp = a.policy.function("biddingProcure").unwrap();
    let part = partition_outputs(fp, &a.policy.states, &out, &params, addr(99)).unwrap();
    assert_eq!(part.public.returns, BTreeMap::from([("winner".to_string(), Value::Address(pb))]));
    assert!(part.public.state.is_empty());
    let b = &part.private[&pb];
    assert_eq!(b.returns, BTreeMap::from([("sPrice".to_string(), Value::uint(5))]));
    assert_eq!(
        b.state,
        BTreeMap::from([(CellId::entry("balances", Value::Address(pb)), Value::uint(5))])
    );
    let tt = &part.private[&t];
    assert!(tt.returns.is_empty());
    assert_eq!(
        tt.state,
        BTreeMap::from([(CellId::entry("balances", Value::Address(t)), Value::uint(5))])
    );
    assert_eq!(part.private.len(), 2);
    assert!(part.enclave.is_empty());
}

#[test]
fn require_false_aborts() {
    let a = compile("contract R { uint n; function f() public { n = 4; require(false); } }");
    let err = run(&a, "f", &StateStore::new(), &BTreeMap::new()).unwrap_err();
    assert_eq!(err.reason, AbortReason::RequireFailed);
}

#[test]
fn underflow_aborts() {
    let a = compile(SUPPLY_CHAIN);
    let t = addr(10);
    let state = StateStore::new().with(CellId::entry("balances", Value::Address(t)), Value::uint(3));
    let err = run(&a, "biddingProcure", &state, &auction_params(&[addr(0), addr(1), addr(2)], &[5, 3, 7], t))
        .unwrap_err();
    assert_eq!(err.reason, AbortReason::Overflow);
}

#[test]
fn arithmetic_edges() {
    let src = "contract A { function f(uint a, uint b) public returns (uint s, uint d, uint m) { s = a + b; d = a / b; m = a % b; } }";
    let a = compile(src);
    let p = |x: U256, y: U256| BTreeMap::from([("a".to_string(), Value::Uint(x)), ("b".to_string(), Value::Uint(y))]);
    let out = run(&a, "f", &StateStore::new(), &p(U256::from(17), U256::from(5))).unwrap();
    assert_eq!(out.ret("d"), Some(&Value::uint(3)));
    assert_eq!(out.ret("m"), Some(&Value::uint(2)));
    let err = run(&a, "f", &StateStore::new(), &p(U256::MAX, U256::one())).unwrap_err();
    assert_eq!(err.reason, AbortReason::Overflow);
    let err = run(&a, "f", &StateStore::new(), &p(U256::one(), U256::zero())).unwrap_err();
    assert_eq!(err.reason, AbortReason::Overflow);
}

#[test]
fn step_budget_guards_loops() {
    let a = compile("contract L { function f() public { while (true) { } } }");
    let cfg = ExecConfig {
        step_budget: 500,
        ..ExecConfig::default()
    };
    let err = exec_function(&erase_ownership(&a.checked.ast), "f", &StateStore::new(), &BTreeMap::new(), addr(0), &cfg).unwrap_err();
    assert_eq!(err.reason, AbortReason::StepBudgetExceeded);
}

#[test]
fn bad_inputs_are_type_mismatches() {
    let a = compile(SUPPLY_CHAIN);
    let t = addr(10);
    // bids shorter than parties: index out of bounds inside the loop.
    let err = run(&a, "biddingProcure", &StateStore::new(), &auction_params(&[addr(0), addr(1)], &[5], t)).unwrap_err();
    assert_eq!(err.reason, AbortReason::TypeMismatch);
    // The paired-length check rejects it at entry.
    let cfg = ExecConfig {
        equal_length: a.policy.function("biddingProcure").unwrap().paired.clone(),
        ..ExecConfig::default()
    };
    let err = exec_function(
        &a.private,
        "biddingProcure",
        &StateStore::new(),
        &auction_params(&[addr(0), addr(1)], &[5], t),
        addr(0),
        &cfg,
    )
    .unwrap_err();
    assert!(err.message.contains("same length"));
    let mut params = auction_params(&[addr(0)], &[5], t);
    params.remove("tenderer");
    assert_eq!(
        run(&a, "biddingProcure", &StateStore::new(), &params).unwrap_err().reason,
        AbortReason::TypeMismatch
    );
}

#[test]
fn unavailable_state_aborts() {
    let a = compile(SUPPLY_CHAIN);
    let t = addr(10);
    let mut state = StateStore::new();
    state.unavailable.insert(CellId::entry("balances", Value::Address(t)));
    let err = run(&a, "biddingProcure", &state, &auction_params(&[addr(0)], &[5], t)).unwrap_err();
    assert_eq!(err.reason, AbortReason::MissingState);
}

#[test]
fn defaults_for_fresh_cells() {
    let a = compile(
        "contract D { bool flag; address who; uint n; function f() public returns (bool b, address w, uint k) { b = flag; w = who; k = n; } }",
    );
    let out = run(&a, "f", &StateStore::new(), &BTreeMap::new()).unwrap();
    assert_eq!(out.ret("b"), Some(&Value::Bool(false)));
    assert_eq!(out.ret("w"), Some(&Value::Address(Address::ZERO)));
    assert_eq!(out.ret("k"), Some(&Value::uint(0)));
}

#[test]
fn public_outputs_go_to_public_slice() {
    let a = compile("contract P { uint total; function add(uint v) public returns (uint r) { total = total + v; r = total; } }");
    let params = BTreeMap::from([("v".to_string(), Value::uint(4))]);
    let out = run(&a, "add", &StateStore::new(), &params).unwrap();
    let part = partition_outputs(&a.policy.functions[0], &a.policy.states, &out, &params, addr(0)).unwrap();
    assert!(part.private.is_empty() && part.enclave.is_empty());
    assert_eq!(part.public.state[&CellId::scalar("total")], Value::uint(4));
    assert_eq!(part.public.returns["r"], Value::uint(4));
}

#[test]
fn tee_state_stays_in_enclave() {
    let a = compile("contract T { uint @tee counter; function tick() public { counter = counter + 1; } }");
    let out = run(&a, "tick", &StateStore::new(), &BTreeMap::new()).unwrap();
    let part = partition_outputs(&a.policy.functions[0], &a.policy.states, &out, &BTreeMap::new(), addr(0)).unwrap();
    assert_eq!(part.enclave.state[&CellId::scalar("counter")], Value::uint(1));
    assert!(part.public.is_empty() && part.private.is_empty());
}

#[test]
fn zero_winner_cannot_be_resolved() {
    let a = compile(
        "contract Z { function f(address[!p] parties, uint[@p] bids) public returns (address winner, uint @winner price) { uint i = 0; while (i < parties.length) { winner = parties[i]; price = bids[i]; i = i + 1; } } }",
    );
    let params = BTreeMap::from([
        ("parties".to_string(), Value::Array(vec![])),
        ("bids".to_string(), Value::Array(vec![])),
    ]);
    let out = run(&a, "f", &StateStore::new(), &params).unwrap();
    assert_eq!(out.ret("winner"), Some(&Value::Address(Address::ZERO)));
    let err = partition_outputs(&a.policy.functions[0], &a.policy.states, &out, &params, addr(0)).unwrap_err();
    assert_eq!(err.owner, "winner");
}

#[test]
fn value_serde_round_trip() {
    let v = Value::Map(BTreeMap::from([
        (Value::Address(addr(1)), Value::Array(vec![Value::Uint(U256::MAX), Value::Bool(true)])),
        (Value::uint(3), Value::Bin(vec![1, 2, 3])),
    ]));
    let json = serde_json::to_string(&v).unwrap();
    assert!(json.contains(&U256::MAX.to_string()));
    assert_eq!(serde_json::from_str::<Value>(&json).unwrap(), v);
    assert_eq!(Value::from_bytes(&v.to_bytes()), Some(v));
}

/// Independent oracle: first index of the minimum, and the second element
/// of the sorted bids.
fn oracle(bids: &[u64]) -> (usize, u64) {
    let min = *bids.iter().min().unwrap();
    let winner = bids.iter().position(|b| *b == min).unwrap();
    let mut sorted = bids.to_vec();
    sorted.sort_unstable();
    (winner, sorted[1])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn second_price_matches_oracle(bids in proptest::collection::vec(0u64..(1 << 32), 2..=8)) {
        let a = compile(SECOND_PRICE);
        let parties: Vec<_> = (0..bids.len() as u64).map(addr).collect();
        let t = addr(100);
        let start = 1u64 << 40;
        let state = StateStore::new().with(CellId::entry("balances", Value::Address(t)), Value::uint(start));
        let out = run(&a, "biddingProcure", &state, &auction_params(&parties, &bids, t)).unwrap();
        let (w, price) = oracle(&bids);
        prop_assert_eq!(out.ret("winner"), Some(&Value::Address(parties[w])));
        prop_assert_eq!(out.ret("sPrice"), Some(&Value::uint(price)));
        let total: U256 = out.state.cells.values().map(|v| v.as_uint().unwrap()).fold(U256::zero(), |x, y| x + y);
        prop_assert_eq!(total, U256::from(start));
    }

    #[test]
    fn execution_is_deterministic_and_framed(bids in proptest::collection::vec(0u64..1000, 1..=6), seed in 0u64..1000) {
        let a = compile(SUPPLY_CHAIN);
        let parties: Vec<_> = (0..bids.len() as u64).map(|i| addr(seed + i)).collect();
        let t = addr(5000);
        let state = StateStore::new().with(CellId::entry("balances", Value::Address(t)), Value::uint(1 << 20));
        let params = auction_params(&parties, &bids, t);
        let one = run(&a, "biddingProcure", &state, &params).unwrap();
        let two = run(&a, "biddingProcure", &state, &params).unwrap();
        prop_assert_eq!(&one, &two);

        let fp = a.policy.function("biddingProcure").unwrap();
        let reads: BTreeSet<_> = fp.reads.iter().map(|d| d.id.as_str()).collect();
        let writes: BTreeSet<_> = fp.mutates.iter().map(|d| d.id.as_str()).collect();
        prop_assert!(one.reads.iter().all(|c| reads.contains(c.var.as_str())));
        prop_assert!(one.writes.iter().all(|c| writes.contains(c.var.as_str())));

        // Exact partition: every written cell and every return lands in
        // exactly one slice.
        let part = partition_outputs(fp, &a.policy.states, &one, &params, addr(0)).unwrap();
        let mut cells = part.public.state.keys().cloned().collect::<Vec<_>>();
        let mut rets = part.public.returns.keys().cloned().collect::<Vec<_>>();
        for s in part.private.values().chain([&part.enclave]) {
            cells.extend(s.state.keys().cloned());
            rets.extend(s.returns.keys().cloned());
        }
        cells.sort();
        rets.sort();
        prop_assert_eq!(cells, one.writes.iter().cloned().collect::<Vec<_>>());
        let mut want: Vec<_> = one.returns.iter().map(|(n, _)| n.clone()).collect();
        want.sort();
        prop_assert_eq!(rets, want);
    }
}
