//! Policy, private contract and verifier descriptor generation.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::{hash, Address, Digest};
use crate::frontend::{
    parse_source, print_contract, print_expr, AnnotatedType, ContractAst, DataType, Expr,
    ExprKind, FrontendError, FunctionDecl, OwnerAtom, Stmt, StmtKind,
};
use crate::typecheck::{check_contract, CheckedContract, Diagnostic, FunctionKind};

/// `⟨id, τ@α⟩` for one state variable, parameter or return value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataPolicy {
    pub id: String,
    #[serde(rename = "type")]
    pub ty: AnnotatedType,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealPolicy {
    pub expr: String,
    pub to: OwnerAtom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionPolicy {
    pub id: String,
    #[serde(rename = "type")]
    pub kind: FunctionKind,
    pub params: Vec<DataPolicy>,
    pub reads: Vec<DataPolicy>,
    pub mutates: Vec<DataPolicy>,
    pub returns: Vec<DataPolicy>,
    pub reveals: Vec<RevealPolicy>,
    /// Address array / data array pairs that must have equal length.
    pub paired: Vec<(String, String)>,
}

impl FunctionPolicy {
    pub fn param(&self, name: &str) -> Option<&DataPolicy> {
        self.params.iter().find(|p| p.id == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractPolicy {
    pub contract: String,
    pub states: Vec<DataPolicy>,
    pub functions: Vec<FunctionPolicy>,
}

impl ContractPolicy {
    pub fn function(&self, name: &str) -> Option<&FunctionPolicy> {
        self.functions.iter().find(|f| f.id == name)
    }

    pub fn state(&self, name: &str) -> Option<&DataPolicy> {
        self.states.iter().find(|s| s.id == name)
    }
}

/// One entry of the verifier's state layout: a scalar cell, or a family of
/// cells indexed by mapping key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct LayoutEntry {
    pub var: String,
    pub keyed: bool,
}

impl Serialize for LayoutEntry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LayoutEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.strip_suffix("{key}") {
            Some(var) => LayoutEntry {
                var: var.to_string(),
                keyed: true,
            },
            None => LayoutEntry {
                var: s,
                keyed: false,
            },
        })
    }
}

impl std::fmt::Display for LayoutEntry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.keyed {
            write!(f, "{}{{key}}", self.var)
        } else {
            f.write_str(&self.var)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierDescriptor {
    pub h_f: Digest,
    pub h_p: Digest,
    pub adr_e: Address,
    pub state_layout: Vec<LayoutEntry>,
}

/// Compact JSON with lexicographically sorted object keys.
pub fn canonical_json<T: Serialize>(v: &T) -> Vec<u8> {
    // `serde_json::Value` objects are BTreeMaps, so a round trip through
    // `Value` sorts every key.
    let value = serde_json::to_value(v).expect("policy types serialize");
    serde_json::to_vec(&value).expect("values serialize")
}

pub fn digest_of<T: Serialize>(v: &T) -> Digest {
    hash(&canonical_json(v))
}

/// State variables referenced by a statement tree, skipping names that are
/// shadowed by a parameter, return or earlier local declaration.
struct StateAccess<'a> {
    ast: &'a ContractAst,
    shadow: BTreeSet<String>,
    reads: BTreeSet<String>,
    writes: BTreeSet<String>,
}

impl StateAccess<'_> {
    fn is_state(&self, name: &str) -> bool {
        !self.shadow.contains(name) && self.ast.state_var(name).is_some()
    }

    fn expr(&mut self, e: &Expr) {
        e.walk(&mut |x| {
            if let ExprKind::Location { base, .. } = &x.kind {
                if self.is_state(base) {
                    self.reads.insert(base.clone());
                }
            }
        });
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Decl { name, init, .. } => {
                if let Some(e) = init {
                    self.expr(e);
                }
                self.shadow.insert(name.clone());
            }
            StmtKind::Assign { target, value } => {
                if let ExprKind::Location { base, .. } = &target.kind {
                    if self.is_state(base) {
                        self.writes.insert(base.clone());
                    }
                }
                self.expr(target);
                self.expr(value);
            }
            StmtKind::Seq(v) => v.iter().for_each(|s| self.stmt(s)),
            StmtKind::If { cond, then, els } => {
                self.expr(cond);
                self.stmt(then);
                self.stmt(els);
            }
            StmtKind::While { cond, body } => {
                self.expr(cond);
                self.stmt(body);
            }
            StmtKind::Require(e) => self.expr(e),
            StmtKind::Return(v) => v.iter().for_each(|e| self.expr(e)),
            StmtKind::Skip => {}
        }
    }
}

fn state_policies(ast: &ContractAst, names: &BTreeSet<String>) -> Vec<DataPolicy> {
    ast.state_vars
        .iter()
        .filter(|v| names.contains(&v.name))
        .map(|v| DataPolicy {
            id: v.name.clone(),
            ty: v.ty.clone(),
        })
        .collect()
}

fn function_policy(c: &CheckedContract, f: &FunctionDecl) -> FunctionPolicy {
    let info = c.function(&f.name).expect("every function is classified");
    let mut acc = StateAccess {
        ast: &c.ast,
        shadow: f.params.iter().chain(&f.returns).map(|p| p.name.clone()).collect(),
        reads: BTreeSet::new(),
        writes: BTreeSet::new(),
    };
    acc.stmt(&f.body);
    let dp = |p: &crate::frontend::Param| DataPolicy {
        id: p.name.clone(),
        ty: p.ty.clone(),
    };
    let mut reveals = Vec::new();
    f.body.walk(&mut |s| {
        for e in s.exprs() {
            e.walk(&mut |x| {
                if let ExprKind::Reveal { inner, target } = &x.kind {
                    reveals.push(RevealPolicy {
                        expr: print_expr(inner),
                        to: target.clone(),
                    });
                }
            });
        }
    });
    FunctionPolicy {
        id: f.name.clone(),
        kind: info.kind,
        params: f.params.iter().map(dp).collect(),
        reads: state_policies(&c.ast, &acc.reads),
        mutates: state_policies(&c.ast, &acc.writes),
        returns: f.returns.iter().map(dp).collect(),
        reveals,
        paired: info.paired_arrays.clone(),
    }
}

pub fn generate_policy(c: &CheckedContract) -> ContractPolicy {
    ContractPolicy {
        contract: c.ast.name.clone(),
        states: c
            .ast
            .state_vars
            .iter()
            .map(|v| DataPolicy {
                id: v.name.clone(),
                ty: v.ty.clone(),
            })
            .collect(),
        functions: c.ast.functions.iter().map(|f| function_policy(c, f)).collect(),
    }
}

fn erase_type(t: &AnnotatedType) -> AnnotatedType {
    t.erased()
}

fn erase_expr(e: &Expr) -> Expr {
    let kind = match &e.kind {
        ExprKind::Location { base, indexes } => ExprKind::Location {
            base: base.clone(),
            indexes: indexes.iter().map(erase_expr).collect(),
        },
        ExprKind::Reveal { inner, .. } => ExprKind::Reveal {
            inner: Box::new(erase_expr(inner)),
            target: OwnerAtom::All,
        },
        ExprKind::Apply { op, args } => ExprKind::Apply {
            op: *op,
            args: args.iter().map(erase_expr).collect(),
        },
        ExprKind::Ternary { cond, then, els } => ExprKind::Ternary {
            cond: Box::new(erase_expr(cond)),
            then: Box::new(erase_expr(then)),
            els: Box::new(erase_expr(els)),
        },
        k => k.clone(),
    };
    Expr { kind, span: e.span }
}

fn erase_stmt(s: &Stmt) -> Stmt {
    let kind = match &s.kind {
        StmtKind::Skip => StmtKind::Skip,
        StmtKind::Decl { name, ty, init } => StmtKind::Decl {
            name: name.clone(),
            ty: erase_type(ty),
            init: init.as_ref().map(erase_expr),
        },
        StmtKind::Assign { target, value } => StmtKind::Assign {
            target: erase_expr(target),
            value: erase_expr(value),
        },
        StmtKind::Seq(v) => StmtKind::Seq(v.iter().map(erase_stmt).collect()),
        StmtKind::Require(e) => StmtKind::Require(erase_expr(e)),
        StmtKind::If { cond, then, els } => StmtKind::If {
            cond: erase_expr(cond),
            then: Box::new(erase_stmt(then)),
            els: Box::new(erase_stmt(els)),
        },
        StmtKind::While { cond, body } => StmtKind::While {
            cond: erase_expr(cond),
            body: Box::new(erase_stmt(body)),
        },
        StmtKind::Return(v) => StmtKind::Return(v.iter().map(erase_expr).collect()),
    };
    Stmt { kind, span: s.span }
}

/// Strip every owner annotation. Idempotent.
pub fn erase_ownership(ast: &ContractAst) -> ContractAst {
    ContractAst {
        name: ast.name.clone(),
        state_vars: ast
            .state_vars
            .iter()
            .map(|v| crate::frontend::StateVar {
                ty: erase_type(&v.ty),
                ..v.clone()
            })
            .collect(),
        functions: ast
            .functions
            .iter()
            .map(|f| FunctionDecl {
                params: f
                    .params
                    .iter()
                    .map(|p| crate::frontend::Param {
                        ty: erase_type(&p.ty),
                        ..p.clone()
                    })
                    .collect(),
                returns: f
                    .returns
                    .iter()
                    .map(|p| crate::frontend::Param {
                        ty: erase_type(&p.ty),
                        ..p.clone()
                    })
                    .collect(),
                body: erase_stmt(&f.body),
                ..f.clone()
            })
            .collect(),
    }
}

/// The contract the enclave runs: annotations erased, public functions
/// removed.
pub fn generate_private_contract(c: &CheckedContract) -> ContractAst {
    let mut out = erase_ownership(&c.ast);
    out.functions
        .retain(|f| c.kind_of(&f.name).is_some_and(|k| k != FunctionKind::Put));
    out
}

pub fn state_layout(ast: &ContractAst) -> Vec<LayoutEntry> {
    ast.state_vars
        .iter()
        .map(|v| LayoutEntry {
            var: v.name.clone(),
            keyed: matches!(
                v.ty.data,
                DataType::Mapping { .. } | DataType::NamedMapping { .. }
            ),
        })
        .collect()
}

pub fn generate_verifier(
    policy: &ContractPolicy,
    private: &ContractAst,
    adr_e: Address,
) -> VerifierDescriptor {
    VerifierDescriptor {
        h_f: digest_of(private),
        h_p: digest_of(policy),
        adr_e,
        state_layout: state_layout(private),
    }
}

#[derive(Debug, Error)]
pub enum CompileError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error("{} type error(s)", .0.iter().filter(|d| d.severity == crate::typecheck::Severity::Error).count())]
    Type(Vec<Diagnostic>),
}

/// Everything produced from one source file.
#[derive(Debug, Clone)]
pub struct Artifacts {
    pub checked: CheckedContract,
    pub policy: ContractPolicy,
    pub private: ContractAst,
    pub h_f: Digest,
    pub h_p: Digest,
}

impl Artifacts {
    pub fn verifier(&self, adr_e: Address) -> VerifierDescriptor {
        generate_verifier(&self.policy, &self.private, adr_e)
    }

    pub fn policy_json(&self) -> Vec<u8> {
        canonical_json(&self.policy)
    }

    pub fn private_source(&self) -> String {
        print_contract(&self.private)
    }
}

pub fn compile_source(source: &str) -> Result<Artifacts, CompileError> {
    let ast = parse_source(source)?;
    compile_ast(&ast)
}

pub fn compile_ast(ast: &ContractAst) -> Result<Artifacts, CompileError> {
    let checked = check_contract(ast);
    if checked.has_errors() {
        return Err(CompileError::Type(checked.diagnostics));
    }
    let policy = generate_policy(&checked);
    let private = generate_private_contract(&checked);
    Ok(Artifacts {
        h_f: digest_of(&private),
        h_p: digest_of(&policy),
        checked,
        policy,
        private,
    })
}
