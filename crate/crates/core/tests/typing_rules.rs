//! Accept/reject fixtures for the owner rules and the function classifier.

use cloak::frontend::lexer::Tok;
use cloak::frontend::{parse_source, tokenize, DataType};
use cloak::typecheck::*;
use proptest::prelude::*;

const SUPPLY_CHAIN: &str = include_str!("../fixtures/supply_chain.cloak");

fn check(src: &str) -> CheckedContract {
    check_contract(&parse_source(src).unwrap_or_else(|e| panic!("{e}\n{src}")))
}

fn codes(c: &CheckedContract, sev: Severity) -> Vec<String> {
    c.diagnostics
        .iter()
        .filter(|d| d.severity == sev)
        .map(|d| d.code.clone())
        .collect()
}

fn accepted(src: &str) -> CheckedContract {
    let c = check(src);
    assert!(!c.has_errors(), "unexpected errors: {:#?}", c.diagnostics);
    c
}

fn rejected_with(src: &str, code: &str) -> CheckedContract {
    let c = check(src);
    assert!(
        c.errors().any(|d| d.code == code),
        "expected {code}, got {:#?}",
        c.diagnostics
    );
    c
}

fn var(n: &str) -> OwnerTerm {
    OwnerTerm::Var(n.into())
}

#[test]
fn supply_chain_is_mpt() {
    let c = accepted(SUPPLY_CHAIN);
    assert_eq!(c.kind_of("biddingProcure"), Some(FunctionKind::Mpt));
    assert_eq!(c.paired_arrays, vec![("parties".to_string(), "bids".to_string())]);
    let f = c.function("biddingProcure").unwrap();
    assert_eq!(f.reveals.len(), 2);
    // Line 20 is accepted because the owner of bids[i] is picked at runtime.
    let line20 = f.assignments.iter().find(|a| a.position.line == 20).unwrap();
    assert_eq!(line20.accepted, Some(FlowKind::RuntimeOwner));
    assert_eq!(line20.sink, var("winner"));
}

#[test]
fn reduce_key_tag_substitution() {
    let ast = parse_source(SUPPLY_CHAIN).unwrap();
    let (d, o) = type_of_expr(&ast, "biddingProcure", "balances[tenderer]").unwrap();
    assert_eq!(d, DataType::Uint256);
    assert_eq!(o, OwnerSet::from([var("tenderer")]));
    let (_, o) = type_of_expr(&ast, "biddingProcure", "balances[me]").unwrap();
    assert_eq!(o, OwnerSet::from([OwnerTerm::Me]));
}

#[test]
fn reveal_to_all_is_public() {
    let ast = parse_source(SUPPLY_CHAIN).unwrap();
    let (d, o) = type_of_expr(&ast, "biddingProcure", "reveal(bids[0], all)").unwrap();
    assert_eq!(d, DataType::Uint256);
    assert!(o.is_empty());
    let (_, o) = type_of_expr(&ast, "biddingProcure", "42").unwrap();
    assert!(o.is_empty());
    let (_, o) = type_of_expr(&ast, "biddingProcure", "bids[0]").unwrap();
    assert_eq!(
        o,
        OwnerSet::from([OwnerTerm::Elem {
            array: "parties".into(),
            index: IndexKey::Const("0".into())
        }])
    );
}

#[test]
fn unbound_identifier_is_type_error() {
    let ast = parse_source(SUPPLY_CHAIN).unwrap();
    let err = type_of_expr(&ast, "biddingProcure", "nope + 1").unwrap_err();
    assert_eq!(err.code, TYPE_ERROR);
}

#[test]
fn stripped_reveal_is_violation() {
    let src = SUPPLY_CHAIN.replace("sPrice = reveal(bids[0], winner);", "sPrice = bids[0];");
    let c = rejected_with(&src, PRIVACY_VIOLATION);
    let d = c.errors().next().unwrap();
    assert_eq!(d.position.line, 13);
}

#[test]
fn reveal_to_target_owner_accepted() {
    let c = accepted(
        "contract X { function f(address a, address b, uint @a x, uint @b y) public { x = reveal(y, a); } }",
    );
    assert_eq!(c.kind_of("f"), Some(FunctionKind::Mpt));
}

#[test]
fn cross_owner_assign_rejected() {
    rejected_with(
        "contract X { function f(address a, address b, uint @a x, uint @b y) public { x = y; } }",
        PRIVACY_VIOLATION,
    );
}

#[test]
fn public_flows_anywhere() {
    let c = accepted("contract X { function f(address a, uint @a x) public { x = 7; } }");
    assert_eq!(c.kind_of("f"), Some(FunctionKind::Prt));
}

#[test]
fn private_to_public_rejected() {
    rejected_with(
        "contract X { uint total; function f(uint @me v) public { total = v; } }",
        PRIVACY_VIOLATION,
    );
}

#[test]
fn require_equality_merges_owners() {
    let c = accepted(
        "contract X { function f(address a, address b, uint @a x, uint @b y) public { require(a == b); x = y; } }",
    );
    // a and b are provably the same account, so only one private owner.
    assert_eq!(c.kind_of("f"), Some(FunctionKind::Prt));
}

#[test]
fn branch_local_merge_does_not_escape() {
    rejected_with(
        "contract X { function f(bool c, address a, address b, uint @a x, uint @b y) public { if (c) { require(a == b); } x = y; } }",
        PRIVACY_VIOLATION,
    );
}

#[test]
fn caller_guard_merges_with_me() {
    let c = accepted(
        "contract X { function f(address a, uint @a x) public { require(a == me); uint @me y = x; } }",
    );
    assert_eq!(c.kind_of("f"), Some(FunctionKind::Prt));
}

#[test]
fn final_state_address_alias() {
    let c = accepted(
        "contract X { final address admin; uint @admin secret; function f() public { address a = admin; uint @a z = secret; } }",
    );
    assert_eq!(c.kind_of("f"), Some(FunctionKind::Prt));
}

#[test]
fn non_final_state_address_does_not_alias() {
    rejected_with(
        "contract X { address admin; uint @admin secret; function f() public { address a = admin; uint @a z = secret; } }",
        PRIVACY_VIOLATION,
    );
}

#[test]
fn put_branch() {
    let c = accepted(
        "contract X { uint total; function add(uint v) public returns (uint r) { total = total + v; r = total; } }",
    );
    assert_eq!(c.kind_of("add"), Some(FunctionKind::Put));
}

#[test]
fn prt_branch_single_owner() {
    let c = accepted(
        "contract X { mapping(address !k => uint @k) bal; function dep(uint @me v) public { bal[me] = bal[me] + v; } }",
    );
    assert_eq!(c.kind_of("dep"), Some(FunctionKind::Prt));
    let f = c.function("dep").unwrap();
    assert_eq!(f.owners, OwnerSet::from([OwnerTerm::Me]));
}

#[test]
fn tee_owned_is_mpt() {
    let c = accepted("contract X { uint @tee counter; function tick() public { counter = counter + 1; } }");
    assert_eq!(c.kind_of("tick"), Some(FunctionKind::Mpt));
}

#[test]
fn joint_value_to_non_contributor_needs_reveal() {
    let c = rejected_with(
        "contract X { function f(address a, address b, address c, uint @a x, uint @b y, uint @c z) public { z = x + y; } }",
        PRIVACY_VIOLATION,
    );
    assert!(c.errors().next().unwrap().message.contains("reveal required"));
}

#[test]
fn joint_value_to_contributor_accepted() {
    let c = accepted(
        "contract X { function f(address a, address b, uint @a x, uint @b y) public { x = x + y; } }",
    );
    assert!(codes(&c, Severity::Info).contains(&JOINT_DELIVERY.to_string()));
    assert_eq!(c.kind_of("f"), Some(FunctionKind::Mpt));
}

#[test]
fn constant_index_owner_is_static() {
    rejected_with(
        "contract X { function f(address[!p] ps, uint[@p] bs) public returns (uint @me m) { m = bs[0]; } }",
        PRIVACY_VIOLATION,
    );
    let c = accepted(
        "contract X { function f(address[!p] ps, uint[@p] bs, uint i) public returns (uint @me m) { m = bs[i]; } }",
    );
    assert!(codes(&c, Severity::Info).contains(&RUNTIME_OWNER_FLOW.to_string()));
}

#[test]
fn private_branch_is_noted_not_rejected() {
    let c = accepted(
        "contract X { function f(uint @me v) public returns (uint @me r) { if (v > 3) { r = 1; } } }",
    );
    assert!(codes(&c, Severity::Info).contains(&PRIVATE_CONDITION.to_string()));
}

#[test]
fn type_errors() {
    rejected_with("contract X { function f(uint v) public { if (v) { } } }", TYPE_ERROR);
    rejected_with("contract X { function f() public { uint x = true; } }", TYPE_ERROR);
    rejected_with(
        "contract X { function f() public { uint x = 115792089237316195423570985008687907853269984665640564039457584007913129639936; } }",
        TYPE_ERROR,
    );
    rejected_with("contract X { final uint k; function f() public { k = 1; } }", TYPE_ERROR);
    rejected_with("contract X { function f(uint @nobody v) public { } }", TYPE_ERROR);
    rejected_with("contract X { function f(uint v) public { v[0] = 1; } }", TYPE_ERROR);
}

#[test]
fn accepted_same_owner_assignments_match_representatives() {
    let c = accepted(SUPPLY_CHAIN);
    for f in &c.functions {
        for a in &f.assignments {
            match a.accepted {
                Some(FlowKind::Public) => assert!(a.source.is_empty()),
                Some(FlowKind::SameOwner) => assert_eq!(a.source, OwnerSet::from([a.sink.clone()])),
                Some(FlowKind::Contributor) => assert!(a.source.contains(&a.sink)),
                Some(FlowKind::RuntimeOwner) => assert!(
                    a.sink.is_runtime() || a.source.iter().any(OwnerTerm::is_runtime)
                ),
                None => panic!("rejected assignment in accepted contract"),
            }
        }
    }
}

#[test]
fn zero_functions() {
    let c = accepted("contract X { uint a; }");
    assert!(c.functions.is_empty());
}

#[test]
fn merging_never_turns_put_into_mpt() {
    let a = accepted("contract X { function f(address a, address b) public { require(a == b); } }");
    assert_eq!(a.kind_of("f"), Some(FunctionKind::Put));
}

// Alpha-renaming: rebuild the source token by token with every identifier
// prefixed, then compare classifications and diagnostic codes.

fn rebuild(src: &str, prefix: &str) -> String {
    let toks = tokenize(src).unwrap();
    let mut out = Vec::new();
    let mut after_dot = false;
    for t in toks {
        let s = match &t.tok {
            Tok::Ident(n) if !after_dot => format!("{prefix}{n}"),
            Tok::Ident(n) | Tok::Int(n) => n.clone(),
            Tok::Kw(k) => k.as_str().to_string(),
            other => other.to_string().trim_matches('\'').to_string(),
        };
        after_dot = t.tok == Tok::Dot;
        out.push(s);
    }
    out.join(" ")
}

const RENAME_FIXTURES: &[&str] = &[
    SUPPLY_CHAIN,
    "contract X { function f(address a, address b, uint @a x, uint @b y) public { require(a == b); x = y; } }",
    "contract X { function f(address a, address b, uint @a x, uint @b y) public { x = y; } }",
    "contract X { final address admin; uint @admin secret; function f() public { address a = admin; uint @a z = secret; } }",
    "contract X { uint @tee counter; function tick() public { counter = counter + 1; } }",
    "contract X { function f(address[!p] ps, uint[@p] bs) public returns (uint @me m) { m = bs[0]; } }",
];

fn summary(c: &CheckedContract) -> (Vec<Option<FunctionKind>>, Vec<(Severity, String)>) {
    (
        c.ast.functions.iter().map(|f| c.kind_of(&f.name)).collect(),
        c.diagnostics
            .iter()
            .map(|d| (d.severity, d.code.clone()))
            .collect(),
    )
}

proptest! {
    #[test]
    fn alpha_renaming_invariance(prefix in "[a-z]{1,5}_", which in 0..RENAME_FIXTURES.len()) {
        let src = RENAME_FIXTURES[which];
        let base = check(&rebuild(src, ""));
        let renamed = check(&rebuild(src, &prefix));
        prop_assert_eq!(summary(&base), summary(&renamed));
    }
}
