//! Owner inference, flow checking and function classification.
//!
//! Every expression is given a data type and a set of owner terms. An empty
//! set means the value is public. Owner terms are reduced through a
//! union-find that only merges atoms proven equal by the program itself:
//! `require(a == b)` on addresses (including `require(x == me)`) and copying
//! a `final` address state variable into an address local.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use primitive_types::U256;
use serde::{Deserialize, Serialize};

use crate::frontend::{
    parse_expr_source, print_expr, AnnotatedType, ContractAst, DataType, Expr, ExprKind,
    FunctionDecl, Literal, NativeOp, OwnerAtom, Pos, Stmt, StmtKind,
};

/// Index of an element-wise owner: a literal index, or a runtime expression
/// printed in source form.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexKey {
    Const(String),
    Dyn(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OwnerTerm {
    All,
    Tee,
    Me,
    /// The account held in the named address variable.
    Var(String),
    /// The account at `array[index]` of a tag-binding address array.
    Elem { array: String, index: IndexKey },
    /// Every account of a tag-binding address array, e.g. a whole `uint[@p]`.
    Group(String),
    /// An address computed by an arbitrary expression.
    Dyn(String),
}

impl OwnerTerm {
    /// Owners only known at runtime.
    pub fn is_runtime(&self) -> bool {
        matches!(
            self,
            OwnerTerm::Elem {
                index: IndexKey::Dyn(_),
                ..
            } | OwnerTerm::Dyn(_)
        )
    }
}

impl fmt::Display for OwnerTerm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OwnerTerm::All => f.write_str("all"),
            OwnerTerm::Tee => f.write_str("tee"),
            OwnerTerm::Me => f.write_str("me"),
            OwnerTerm::Var(v) => f.write_str(v),
            OwnerTerm::Elem { array, index } => match index {
                IndexKey::Const(i) | IndexKey::Dyn(i) => write!(f, "{array}[{i}]"),
            },
            OwnerTerm::Group(a) => write!(f, "{a}[*]"),
            OwnerTerm::Dyn(e) => write!(f, "<{e}>"),
        }
    }
}

/// Owners of a value; empty means public.
pub type OwnerSet = BTreeSet<OwnerTerm>;

fn show_owners(s: &OwnerSet) -> String {
    if s.is_empty() {
        return "all".into();
    }
    let v: Vec<_> = s.iter().map(|t| t.to_string()).collect();
    if v.len() == 1 {
        v[0].clone()
    } else {
        format!("{{{}}}", v.join(", "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FunctionKind {
    #[serde(rename = "PUT")]
    Put,
    #[serde(rename = "PRT")]
    Prt,
    #[serde(rename = "MPT")]
    Mpt,
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FunctionKind::Put => "PUT",
            FunctionKind::Prt => "PRT",
            FunctionKind::Mpt => "MPT",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

impl fmt::Display for Severity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Severity::Info => "info",
            Severity::Warning => "warning",
            Severity::Error => "error",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub code: String,
    pub position: Pos,
    pub message: String,
}

pub const TYPE_ERROR: &str = "TypeError";
pub const PRIVACY_VIOLATION: &str = "PrivacyViolation";
pub const PRIVATE_CONDITION: &str = "PrivateCondition";
pub const RUNTIME_OWNER_FLOW: &str = "RuntimeOwnerFlow";
pub const JOINT_DELIVERY: &str = "JointDelivery";

/// Why an assignment was accepted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// Public value, flows anywhere.
    Public,
    /// Source and sink have the same (reduced) owner.
    SameOwner,
    /// A value computed from several owners is delivered to one of them.
    Contributor,
    /// Source or sink owner is an element picked at runtime.
    RuntimeOwner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignRecord {
    pub position: Pos,
    pub target: String,
    pub sink: OwnerTerm,
    pub source: OwnerSet,
    /// `None` if the assignment was rejected.
    pub accepted: Option<FlowKind>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealSite {
    pub position: Pos,
    pub expr: String,
    pub from: OwnerSet,
    pub to: OwnerAtom,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionInfo {
    pub name: String,
    pub kind: FunctionKind,
    /// Reduced private owners collected over parameters, returns and every
    /// subexpression (`All` omitted).
    pub owners: OwnerSet,
    pub assignments: Vec<AssignRecord>,
    pub reveals: Vec<RevealSite>,
    /// `(address array, data array)` pairs that must have equal runtime
    /// length because the data array's elements are owned by the address
    /// array's elements.
    pub paired_arrays: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct CheckedContract {
    pub ast: ContractAst,
    pub functions: Vec<FunctionInfo>,
    pub paired_arrays: Vec<(String, String)>,
    pub diagnostics: Vec<Diagnostic>,
}

impl CheckedContract {
    pub fn has_errors(&self) -> bool {
        self.diagnostics.iter().any(|d| d.severity == Severity::Error)
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics
            .iter()
            .filter(|d| d.severity == Severity::Error)
    }

    pub fn function(&self, name: &str) -> Option<&FunctionInfo> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn kind_of(&self, name: &str) -> Option<FunctionKind> {
        self.function(name).map(|f| f.kind)
    }
}

/// Classification from a reduced owner set.
pub fn classify(owners: &OwnerSet) -> FunctionKind {
    let private: Vec<_> = owners.iter().filter(|t| **t != OwnerTerm::All).collect();
    // A whole tag group stands for an unknown number of accounts.
    let weight: usize = private
        .iter()
        .map(|t| if matches!(t, OwnerTerm::Group(_)) { 2 } else { 1 })
        .sum();
    if weight == 0 {
        FunctionKind::Put
    } else if private.contains(&&OwnerTerm::Tee) || weight >= 2 {
        FunctionKind::Mpt
    } else {
        FunctionKind::Prt
    }
}

/// Union-find over owner terms. `All` and `Tee` are never merged.
#[derive(Debug, Clone, Default)]
struct Equiv {
    parent: BTreeMap<OwnerTerm, OwnerTerm>,
}

impl Equiv {
    fn find(&self, t: &OwnerTerm) -> OwnerTerm {
        let mut cur = t.clone();
        while let Some(p) = self.parent.get(&cur) {
            cur = p.clone();
        }
        cur
    }

    fn union(&mut self, a: &OwnerTerm, b: &OwnerTerm) {
        let fixed = |t: &OwnerTerm| matches!(t, OwnerTerm::All | OwnerTerm::Tee);
        if fixed(a) || fixed(b) {
            return;
        }
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent.insert(hi, lo);
    }
}

#[derive(Debug, Clone)]
struct Typed {
    data: DataType,
    owners: OwnerSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Binding {
    Local,
    Param,
    Return,
    State { is_final: bool },
}

struct Checker<'a> {
    ast: &'a ContractAst,
    diags: Vec<Diagnostic>,
    /// tag -> address array binding it
    tags: HashMap<String, String>,
    func: Option<&'a FunctionDecl>,
    locals: HashMap<String, AnnotatedType>,
    equiv: Equiv,
    collected: OwnerSet,
    assignments: Vec<AssignRecord>,
    reveals: Vec<RevealSite>,
}

impl<'a> Checker<'a> {
    fn new(ast: &'a ContractAst) -> Self {
        let mut tags = HashMap::new();
        for v in &ast.state_vars {
            if let DataType::NamedAddressArray { tag } = &v.ty.data {
                tags.insert(tag.clone(), v.name.clone());
            }
        }
        Self {
            ast,
            diags: Vec::new(),
            tags,
            func: None,
            locals: HashMap::new(),
            equiv: Equiv::default(),
            collected: OwnerSet::new(),
            assignments: Vec::new(),
            reveals: Vec::new(),
        }
    }

    fn diag(&mut self, severity: Severity, code: &str, position: Pos, message: String) {
        self.diags.push(Diagnostic {
            severity,
            code: code.into(),
            position,
            message,
        });
    }

    fn type_error(&mut self, pos: Pos, message: String) {
        self.diag(Severity::Error, TYPE_ERROR, pos, message);
    }

    fn enter_function(&mut self, f: &'a FunctionDecl) {
        self.func = Some(f);
        self.locals.clear();
        self.equiv = Equiv::default();
        self.collected.clear();
        self.assignments.clear();
        self.reveals.clear();
        self.tags.retain(|_, arr| self.ast.state_var(arr).is_some());
        for p in &f.params {
            if let DataType::NamedAddressArray { tag } = &p.ty.data {
                self.tags.insert(tag.clone(), p.name.clone());
            }
        }
    }

    fn lookup(&self, name: &str) -> Option<(AnnotatedType, Binding)> {
        if let Some(t) = self.locals.get(name) {
            return Some((t.clone(), Binding::Local));
        }
        if let Some(f) = self.func {
            if let Some(p) = f.params.iter().find(|p| p.name == name) {
                return Some((p.ty.clone(), Binding::Param));
            }
            if let Some(p) = f.returns.iter().find(|p| p.name == name) {
                return Some((p.ty.clone(), Binding::Return));
            }
        }
        self.ast.state_var(name).map(|v| {
            (
                v.ty.clone(),
                Binding::State {
                    is_final: v.is_final,
                },
            )
        })
    }

    fn reduce(&self, t: &OwnerTerm) -> OwnerTerm {
        self.equiv.find(t)
    }

    fn reduce_set(&self, s: &OwnerSet) -> OwnerSet {
        s.iter()
            .map(|t| self.reduce(t))
            .filter(|t| *t != OwnerTerm::All)
            .collect()
    }

    fn collect(&mut self, s: &OwnerSet) {
        let r = self.reduce_set(s);
        self.collected.extend(r);
    }

    /// Resolve an annotation atom in the current scope.
    fn resolve_atom(&mut self, atom: &OwnerAtom, pos: Pos) -> OwnerTerm {
        match atom {
            OwnerAtom::All => OwnerTerm::All,
            OwnerAtom::Tee => OwnerTerm::Tee,
            OwnerAtom::Me => OwnerTerm::Me,
            OwnerAtom::Named(n) => {
                if let Some(arr) = self.tags.get(n) {
                    return OwnerTerm::Group(arr.clone());
                }
                match self.lookup(n) {
                    Some((t, _)) if t.data.is_address() => OwnerTerm::Var(n.clone()),
                    _ => {
                        self.type_error(pos, format!("unknown owner '{n}'"));
                        OwnerTerm::All
                    }
                }
            }
        }
    }

    /// Owner named by an address-valued expression, as used for mapping key
    /// tags.
    fn address_owner(&self, e: &Expr) -> OwnerTerm {
        match &e.kind {
            ExprKind::MeAddr => OwnerTerm::Me,
            ExprKind::Location { base, indexes } if indexes.is_empty() => {
                OwnerTerm::Var(base.clone())
            }
            ExprKind::Location { base, indexes } if indexes.len() == 1 => {
                match self.lookup(base).map(|(t, _)| t.data) {
                    Some(DataType::NamedAddressArray { .. }) => OwnerTerm::Elem {
                        array: base.clone(),
                        index: index_key(&indexes[0]),
                    },
                    _ => OwnerTerm::Dyn(print_expr(e)),
                }
            }
            _ => OwnerTerm::Dyn(print_expr(e)),
        }
    }

    fn single(&self, t: OwnerTerm) -> OwnerSet {
        let r = self.reduce(&t);
        if r == OwnerTerm::All {
            OwnerSet::new()
        } else {
            OwnerSet::from([r])
        }
    }

    fn expr(&mut self, e: &Expr) -> Typed {
        let t = self.expr_inner(e);
        self.collect(&t.owners);
        t
    }

    fn expr_inner(&mut self, e: &Expr) -> Typed {
        let pos = e.pos();
        match &e.kind {
            ExprKind::Const(Literal::Uint(n)) => {
                if U256::from_dec_str(n).is_err() {
                    self.type_error(pos, format!("integer literal {n} does not fit in uint256"));
                }
                Typed {
                    data: DataType::Uint256,
                    owners: OwnerSet::new(),
                }
            }
            ExprKind::Const(Literal::Bool(_)) => Typed {
                data: DataType::Bool,
                owners: OwnerSet::new(),
            },
            ExprKind::MeAddr => Typed {
                data: DataType::Address,
                owners: OwnerSet::new(),
            },
            ExprKind::Location { .. } => self.location(e).0,
            ExprKind::Reveal { inner, target } => {
                let t = self.expr(inner);
                let to = self.resolve_atom(target, pos);
                self.reveals.push(RevealSite {
                    position: pos,
                    expr: print_expr(inner),
                    from: self.reduce_set(&t.owners),
                    to: target.clone(),
                });
                Typed {
                    data: t.data,
                    owners: self.single(to),
                }
            }
            ExprKind::Apply { op, args } => self.apply(*op, args, pos),
            ExprKind::Ternary { cond, then, els } => {
                let c = self.expr(cond);
                if c.data != DataType::Bool {
                    self.type_error(cond.pos(), "condition must be bool".into());
                }
                let a = self.expr(then);
                let b = self.expr(els);
                if a.data.erased() != b.data.erased() {
                    self.type_error(pos, "ternary branches have different types".into());
                }
                let mut owners = c.owners;
                owners.extend(a.owners);
                owners.extend(b.owners);
                Typed {
                    data: a.data,
                    owners: self.reduce_set(&owners),
                }
            }
        }
    }

    fn apply(&mut self, op: NativeOp, args: &[Expr], pos: Pos) -> Typed {
        if op == NativeOp::Length {
            // Array lengths are public: the party list is published anyway.
            let t = self.location_shape(&args[0]);
            if !matches!(
                t,
                Some(DataType::Array { .. } | DataType::NamedAddressArray { .. })
            ) {
                self.type_error(pos, ".length needs an array".into());
            }
            return Typed {
                data: DataType::Uint256,
                owners: OwnerSet::new(),
            };
        }
        let typed: Vec<Typed> = args.iter().map(|a| self.expr(a)).collect();
        let want = |d: &DataType| -> bool {
            match op {
                NativeOp::And | NativeOp::Or | NativeOp::Not => *d == DataType::Bool,
                NativeOp::Eq | NativeOp::Ne => d.is_primitive(),
                _ => *d == DataType::Uint256,
            }
        };
        for (a, t) in args.iter().zip(&typed) {
            if !want(&t.data) {
                self.type_error(
                    a.pos(),
                    format!("operand of '{}' has unsupported type", op.symbol()),
                );
            }
        }
        if matches!(op, NativeOp::Eq | NativeOp::Ne) && typed.len() == 2 {
            let (a, b) = (&typed[0].data, &typed[1].data);
            if a != b {
                self.type_error(pos, format!("cannot compare different types with '{}'", op.symbol()));
            }
        }
        let data = if op.is_arithmetic() {
            DataType::Uint256
        } else {
            DataType::Bool
        };
        let mut owners = OwnerSet::new();
        for t in typed {
            owners.extend(t.owners);
        }
        Typed {
            data,
            owners: self.reduce_set(&owners),
        }
    }

    /// Data type of a location without recording owners.
    fn location_shape(&mut self, e: &Expr) -> Option<DataType> {
        let saved = self.collected.clone();
        let n = self.diags.len();
        let r = match &e.kind {
            ExprKind::Location { .. } => Some(self.location(e).0.data),
            _ => None,
        };
        self.collected = saved;
        self.diags.truncate(n);
        r
    }

    /// Type a location. Also returns the owner of the cell itself (the sink
    /// owner when the location is assigned to), which excludes the owners
    /// of index expressions.
    fn location(&mut self, e: &Expr) -> (Typed, OwnerTerm) {
        let pos = e.pos();
        let ExprKind::Location { base, indexes } = &e.kind else {
            unreachable!("location() called on non-location")
        };
        let Some((decl, _)) = self.lookup(base) else {
            self.type_error(pos, format!("unbound identifier '{base}'"));
            return (
                Typed {
                    data: DataType::Uint256,
                    owners: OwnerSet::new(),
                },
                OwnerTerm::All,
            );
        };
        let mut data = decl.data.clone();
        let mut cell = self.resolve_atom(&decl.owner, pos);
        let mut index_owners = OwnerSet::new();
        for idx in indexes {
            let it = self.expr(idx);
            index_owners.extend(it.owners.clone());
            match data {
                DataType::Mapping { key, value } => {
                    if it.data != *key {
                        self.type_error(idx.pos(), "mapping key has the wrong type".into());
                    }
                    cell = self.resolve_atom(&value.owner, pos);
                    data = value.data;
                }
                DataType::NamedMapping { tag, value } => {
                    if it.data != DataType::Address {
                        self.type_error(idx.pos(), "mapping key must be an address".into());
                    }
                    cell = match &value.owner {
                        OwnerAtom::Named(n) if *n == tag => self.address_owner(idx),
                        other => self.resolve_atom(other, pos),
                    };
                    data = value.data;
                }
                DataType::Array { elem } => {
                    if it.data != DataType::Uint256 {
                        self.type_error(idx.pos(), "array index must be uint".into());
                    }
                    cell = match &elem.owner {
                        OwnerAtom::Named(n) if self.tags.contains_key(n) => OwnerTerm::Elem {
                            array: self.tags[n].clone(),
                            index: index_key(idx),
                        },
                        other => self.resolve_atom(other, pos),
                    };
                    data = elem.data;
                }
                DataType::NamedAddressArray { .. } => {
                    if it.data != DataType::Uint256 {
                        self.type_error(idx.pos(), "array index must be uint".into());
                    }
                    cell = OwnerTerm::All;
                    data = DataType::Address;
                }
                _ => {
                    self.type_error(idx.pos(), format!("'{base}' is not indexable here"));
                    break;
                }
            }
        }
        let cell = self.reduce(&cell);
        let mut owners = index_owners;
        if cell != OwnerTerm::All {
            owners.insert(cell.clone());
        }
        (
            Typed {
                data,
                owners: self.reduce_set(&owners),
            },
            cell,
        )
    }

    /// Decide whether a value with owners `src` may be stored in a cell owned
    /// by `sink`.
    fn flow(&self, sink: &OwnerTerm, src: &OwnerSet) -> Option<FlowKind> {
        let sink = self.reduce(sink);
        let src = self.reduce_set(src);
        if src.is_empty() {
            return Some(FlowKind::Public);
        }
        if src.len() == 1 && src.contains(&sink) {
            return Some(FlowKind::SameOwner);
        }
        if sink != OwnerTerm::All && src.contains(&sink) {
            return Some(FlowKind::Contributor);
        }
        if sink.is_runtime() || src.iter().any(OwnerTerm::is_runtime) {
            return Some(FlowKind::RuntimeOwner);
        }
        None
    }

    fn check_flow(&mut self, pos: Pos, target: String, sink: OwnerTerm, src: &OwnerSet) {
        let sink = self.reduce(&sink);
        let source = self.reduce_set(src);
        let accepted = self.flow(&sink, &source);
        match accepted {
            None if source.len() > 1 => self.diag(
                Severity::Error,
                PRIVACY_VIOLATION,
                pos,
                format!(
                    "value owned jointly by {} flows to '{target}' owned by {sink}; reveal required",
                    show_owners(&source)
                ),
            ),
            None => self.diag(
                Severity::Error,
                PRIVACY_VIOLATION,
                pos,
                format!(
                    "value owned by {} flows to '{target}' owned by {sink} without reveal",
                    show_owners(&source)
                ),
            ),
            Some(FlowKind::RuntimeOwner) => self.diag(
                Severity::Info,
                RUNTIME_OWNER_FLOW,
                pos,
                format!(
                    "flow from {} to {sink} depends on runtime owners; checked inside the enclave",
                    show_owners(&source)
                ),
            ),
            Some(FlowKind::Contributor) => self.diag(
                Severity::Info,
                JOINT_DELIVERY,
                pos,
                format!(
                    "value computed from {} is delivered to contributor {sink}",
                    show_owners(&source)
                ),
            ),
            _ => {}
        }
        self.assignments.push(AssignRecord {
            position: pos,
            target,
            sink,
            source,
            accepted,
        });
    }

    fn cond(&mut self, e: &Expr, what: &str) {
        let t = self.expr(e);
        if t.data != DataType::Bool {
            self.type_error(e.pos(), format!("{what} condition must be bool"));
        }
        if !t.owners.is_empty() {
            self.diag(
                Severity::Info,
                PRIVATE_CONDITION,
                e.pos(),
                format!("{what} condition depends on data owned by {}", show_owners(&t.owners)),
            );
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        let pos = s.pos();
        match &s.kind {
            StmtKind::Skip => {}
            StmtKind::Seq(v) => v.iter().for_each(|s| self.stmt(s)),
            StmtKind::Decl { name, ty, init } => {
                if let Some((prev, Binding::Local)) = self.lookup(name) {
                    if prev != *ty {
                        self.type_error(pos, format!("'{name}' redeclared with a different type"));
                    }
                }
                let value = init.as_ref().map(|e| (e, self.expr(e)));
                self.locals.insert(name.clone(), ty.clone());
                let owners = self.declared_owners(ty, pos);
                self.collect(&owners);
                if let Some((init, v)) = value {
                    if v.data.erased() != ty.data.erased() {
                        self.type_error(init.pos(), format!("initializer type does not match '{name}'"));
                    }
                    self.address_alias(name, &ty.data, init);
                    let sink = self.resolve_atom(&ty.owner, pos);
                    self.check_flow(pos, name.clone(), sink, &v.owners);
                }
            }
            StmtKind::Assign { target, value } => {
                let (t, sink) = self.location(target);
                self.collect(&t.owners);
                let ExprKind::Location { base, indexes } = &target.kind else {
                    unreachable!()
                };
                if let Some((_, Binding::State { is_final: true })) = self.lookup(base) {
                    self.type_error(pos, format!("cannot assign to final state variable '{base}'"));
                }
                let v = self.expr(value);
                if v.data.erased() != t.data.erased() {
                    self.type_error(value.pos(), format!("assigned value does not match type of '{}'", print_expr(target)));
                }
                if indexes.is_empty() {
                    if let Some((_, Binding::Local)) = self.lookup(base) {
                        self.address_alias(base, &t.data, value);
                    }
                }
                self.check_flow(pos, print_expr(target), sink, &v.owners);
            }
            StmtKind::Require(e) => {
                self.cond(e, "require");
                if let ExprKind::Apply {
                    op: NativeOp::Eq,
                    args,
                } = &e.kind
                {
                    let both_addr = args.iter().all(|a| self.location_shape(a) == Some(DataType::Address) || matches!(a.kind, ExprKind::MeAddr));
                    if args.len() == 2 && both_addr {
                        let a = self.address_owner(&args[0]);
                        let b = self.address_owner(&args[1]);
                        if !a.is_runtime() && !b.is_runtime() {
                            self.equiv.union(&a, &b);
                        }
                    }
                }
            }
            StmtKind::If { cond, then, els } => {
                self.cond(cond, "branch");
                let saved = self.equiv.clone();
                self.stmt(then);
                self.equiv = saved.clone();
                self.stmt(els);
                self.equiv = saved;
            }
            StmtKind::While { cond, body } => {
                self.cond(cond, "loop");
                let saved = self.equiv.clone();
                self.stmt(body);
                self.equiv = saved;
            }
            StmtKind::Return(vals) => {
                let f = self.func.expect("statements are checked inside functions");
                if vals.len() != f.returns.len() {
                    self.type_error(
                        pos,
                        format!("function returns {} values, {} given", f.returns.len(), vals.len()),
                    );
                }
                for (v, r) in vals.iter().zip(&f.returns) {
                    let t = self.expr(v);
                    if t.data.erased() != r.ty.data.erased() {
                        self.type_error(v.pos(), format!("return value does not match type of '{}'", r.name));
                    }
                    let sink = self.resolve_atom(&r.ty.owner, v.pos());
                    self.check_flow(v.pos(), r.name.clone(), sink, &t.owners);
                }
            }
        }
    }

    /// Copying a final address state variable into an address local makes
    /// the two owner atoms provably equal.
    fn address_alias(&mut self, local: &str, data: &DataType, value: &Expr) {
        if !data.is_address() {
            return;
        }
        if let ExprKind::Location { base, indexes } = &value.kind {
            if indexes.is_empty() {
                if let Some(v) = self.ast.state_var(base) {
                    if v.is_final && v.ty.data.is_address() && !self.locals_shadow(base) {
                        self.equiv
                            .union(&OwnerTerm::Var(local.to_string()), &OwnerTerm::Var(base.clone()));
                    }
                }
            }
        }
    }

    fn locals_shadow(&self, name: &str) -> bool {
        self.locals.contains_key(name)
            || self
                .func
                .is_some_and(|f| f.params.iter().chain(&f.returns).any(|p| p.name == name))
    }

    fn declared_owners(&mut self, ty: &AnnotatedType, pos: Pos) -> OwnerSet {
        let mut out = OwnerSet::new();
        let t = self.resolve_atom(&ty.owner, pos);
        out.insert(t);
        match &ty.data {
            DataType::Array { elem } => {
                let t = match &elem.owner {
                    OwnerAtom::Named(n) if self.tags.contains_key(n) => {
                        OwnerTerm::Group(self.tags[n].clone())
                    }
                    o => self.resolve_atom(o, pos),
                };
                out.insert(t);
            }
            DataType::Mapping { value, .. } => {
                out.extend(self.declared_owners(value, pos));
            }
            _ => {}
        }
        out.remove(&OwnerTerm::All);
        out
    }

    fn check_state(&mut self) {
        for v in &self.ast.state_vars {
            let pos = v.span.pos();
            if let DataType::NamedMapping { tag, value } = &v.ty.data {
                if let OwnerAtom::Named(n) = &value.owner {
                    if n != tag && !self.tags.contains_key(n) && !self.state_address(n) {
                        self.type_error(pos, format!("unknown owner '{n}'"));
                    }
                }
                continue;
            }
            self.check_state_owner(&v.ty, pos);
        }
    }

    fn state_address(&self, n: &str) -> bool {
        self.ast
            .state_var(n)
            .is_some_and(|v| v.ty.data.is_address())
    }

    fn check_state_owner(&mut self, ty: &AnnotatedType, pos: Pos) {
        if let OwnerAtom::Named(n) = &ty.owner {
            if !self.tags.contains_key(n) && !self.state_address(n) {
                self.type_error(pos, format!("unknown owner '{n}'"));
            }
        }
        match &ty.data {
            DataType::Mapping { value, .. } => self.check_state_owner(value, pos),
            DataType::Array { elem } => self.check_state_owner(elem, pos),
            _ => {}
        }
    }

    fn function(&mut self, f: &'a FunctionDecl) -> FunctionInfo {
        self.enter_function(f);
        let mut paired = Vec::new();
        for p in f.params.iter().chain(&f.returns) {
            let owners = self.declared_owners(&p.ty, p.span.pos());
            self.collect(&owners);
            if let DataType::Array { elem } = &p.ty.data {
                if let OwnerAtom::Named(n) = &elem.owner {
                    if let Some(arr) = self.tags.get(n) {
                        paired.push((arr.clone(), p.name.clone()));
                    }
                }
            }
        }
        self.stmt(&f.body);
        // Top-level guards hold for the whole transaction (if one fails,
        // nothing happens), so owners are reduced with the final merges.
        let owners = self.reduce_set(&self.collected);
        FunctionInfo {
            name: f.name.clone(),
            kind: classify(&owners),
            owners,
            assignments: std::mem::take(&mut self.assignments),
            reveals: std::mem::take(&mut self.reveals),
            paired_arrays: paired,
        }
    }
}

fn index_key(e: &Expr) -> IndexKey {
    match &e.kind {
        ExprKind::Const(Literal::Uint(n)) => IndexKey::Const(n.clone()),
        _ => IndexKey::Dyn(print_expr(e)),
    }
}

pub fn check_contract(ast: &ContractAst) -> CheckedContract {
    let mut ck = Checker::new(ast);
    ck.check_state();
    let mut paired = Vec::new();
    for v in &ast.state_vars {
        if let DataType::Array { elem } = &v.ty.data {
            if let OwnerAtom::Named(n) = &elem.owner {
                if let Some(arr) = ck.tags.get(n) {
                    paired.push((arr.clone(), v.name.clone()));
                }
            }
        }
    }
    let functions: Vec<FunctionInfo> = ast.functions.iter().map(|f| ck.function(f)).collect();
    for f in &functions {
        paired.extend(f.paired_arrays.iter().cloned());
    }
    CheckedContract {
        ast: ast.clone(),
        functions,
        paired_arrays: paired,
        diagnostics: ck.diags,
    }
}

/// Type an expression in the scope of `function` (its parameters, returns
/// and the contract state). Returns the data type and reduced owners, or the
/// first error diagnostic.
pub fn type_of_expr(
    ast: &ContractAst,
    function: &str,
    source: &str,
) -> Result<(DataType, OwnerSet), Diagnostic> {
    let e = parse_expr_source(source).map_err(|err| Diagnostic {
        severity: Severity::Error,
        code: "ParseError".into(),
        position: err.pos(),
        message: err.to_string(),
    })?;
    let f = ast.function(function).ok_or_else(|| Diagnostic {
        severity: Severity::Error,
        code: TYPE_ERROR.into(),
        position: Pos::default(),
        message: format!("no function '{function}'"),
    })?;
    let mut ck = Checker::new(ast);
    ck.enter_function(f);
    let t = ck.expr(&e);
    match ck.diags.into_iter().find(|d| d.severity == Severity::Error) {
        Some(d) => Err(d),
        None => Ok((t.data, t.owners)),
    }
}
