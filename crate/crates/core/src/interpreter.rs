//! Big-step evaluation of private-contract functions on plaintext values.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use primitive_types::U256;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codegen::{DataPolicy, FunctionPolicy};
use crate::crypto::Address;
use crate::frontend::{
    ContractAst, DataType, Expr, ExprKind, FunctionDecl, Literal, NativeOp, OwnerAtom, Stmt,
    StmtKind,
};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Value {
    Uint(U256),
    Bool(bool),
    Address(Address),
    Bin(Vec<u8>),
    Array(Vec<Value>),
    Map(BTreeMap<Value, Value>),
}

impl Value {
    pub fn uint(n: u64) -> Value {
        Value::Uint(U256::from(n))
    }

    pub fn default_for(d: &DataType) -> Value {
        match d {
            DataType::Bool => Value::Bool(false),
            DataType::Uint256 => Value::Uint(U256::zero()),
            DataType::Address => Value::Address(Address::ZERO),
            DataType::Bin => Value::Bin(Vec::new()),
            DataType::Mapping { .. } | DataType::NamedMapping { .. } => Value::Map(BTreeMap::new()),
            DataType::Array { .. } | DataType::NamedAddressArray { .. } => Value::Array(Vec::new()),
        }
    }

    pub fn as_uint(&self) -> Option<U256> {
        match self {
            Value::Uint(u) => Some(*u),
            _ => None,
        }
    }

    pub fn as_address(&self) -> Option<Address> {
        match self {
            Value::Address(a) => Some(*a),
            _ => None,
        }
    }

    pub fn matches(&self, d: &DataType) -> bool {
        match (self, d) {
            (Value::Uint(_), DataType::Uint256)
            | (Value::Bool(_), DataType::Bool)
            | (Value::Address(_), DataType::Address)
            | (Value::Bin(_), DataType::Bin) => true,
            (Value::Array(v), DataType::Array { elem }) => v.iter().all(|x| x.matches(&elem.data)),
            (Value::Array(v), DataType::NamedAddressArray { .. }) => {
                v.iter().all(|x| matches!(x, Value::Address(_)))
            }
            (Value::Map(m), DataType::Mapping { key, value }) => {
                m.iter().all(|(k, v)| k.matches(key) && v.matches(&value.data))
            }
            (Value::Map(m), DataType::NamedMapping { value, .. }) => m
                .iter()
                .all(|(k, v)| matches!(k, Value::Address(_)) && v.matches(&value.data)),
            _ => false,
        }
    }

    /// Canonical byte encoding, used as commitment plaintext.
    pub fn to_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("values serialize")
    }

    pub fn from_bytes(b: &[u8]) -> Option<Value> {
        serde_json::from_slice(b).ok()
    }
}

impl fmt::Debug for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Uint(u) => write!(f, "{u}"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Address(a) => write!(f, "0x{a}"),
            Value::Bin(b) => write!(f, "bin:{}", hex::encode(b)),
            Value::Array(v) => {
                f.write_str("[")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str("]")
            }
            Value::Map(m) => {
                f.write_str("{")?;
                for (i, (k, v)) in m.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{k}: {v}")?;
                }
                f.write_str("}")
            }
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum ValueRepr {
    Uint(String),
    Bool(bool),
    Address(Address),
    Bin(String),
    Array(Vec<Value>),
    Map(Vec<(Value, Value)>),
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let r = match self {
            Value::Uint(u) => ValueRepr::Uint(u.to_string()),
            Value::Bool(b) => ValueRepr::Bool(*b),
            Value::Address(a) => ValueRepr::Address(*a),
            Value::Bin(b) => ValueRepr::Bin(hex::encode(b)),
            Value::Array(v) => ValueRepr::Array(v.clone()),
            Value::Map(m) => ValueRepr::Map(m.iter().map(|(k, v)| (k.clone(), v.clone())).collect()),
        };
        r.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        Ok(match ValueRepr::deserialize(d)? {
            ValueRepr::Uint(s) => Value::Uint(U256::from_dec_str(&s).map_err(D::Error::custom)?),
            ValueRepr::Bool(b) => Value::Bool(b),
            ValueRepr::Address(a) => Value::Address(a),
            ValueRepr::Bin(h) => Value::Bin(hex::decode(h).map_err(D::Error::custom)?),
            ValueRepr::Array(v) => Value::Array(v),
            ValueRepr::Map(m) => Value::Map(m.into_iter().collect()),
        })
    }
}

/// A state cell: a scalar variable (no keys) or one mapping entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellId {
    pub var: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keys: Vec<Value>,
}

impl CellId {
    pub fn scalar(var: &str) -> Self {
        Self {
            var: var.to_string(),
            keys: Vec::new(),
        }
    }

    pub fn entry(var: &str, key: Value) -> Self {
        Self {
            var: var.to_string(),
            keys: vec![key],
        }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.var)?;
        for k in &self.keys {
            write!(f, "[{k}]")?;
        }
        Ok(())
    }
}

/// Serde adapter for maps keyed by [`CellId`]: JSON object keys must be
/// strings, so these maps travel as `[[cell, value], ...]`.
pub mod cell_map {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::CellId;

    pub fn serialize<V: Serialize, S: Serializer>(m: &BTreeMap<CellId, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, V: Deserialize<'de>, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<CellId, V>, D::Error> {
        Ok(Vec::<(CellId, V)>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateStore {
    #[serde(with = "cell_map")]
    pub cells: BTreeMap<CellId, Value>,
    /// Cells known to exist whose plaintext is not available to the
    /// executor; reading one aborts execution.
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub unavailable: BTreeSet<CellId>,
}

impl StateStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, cell: CellId, v: Value) {
        self.unavailable.remove(&cell);
        self.cells.insert(cell, v);
    }

    pub fn get(&self, cell: &CellId) -> Option<&Value> {
        self.cells.get(cell)
    }

    pub fn with(mut self, cell: CellId, v: Value) -> Self {
        self.set(cell, v);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AbortReason {
    RequireFailed,
    Overflow,
    StepBudgetExceeded,
    TypeMismatch,
    MissingState,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("execution aborted ({reason:?}): {message}")]
pub struct ExecAbort {
    pub reason: AbortReason,
    pub message: String,
}

fn abort<T>(reason: AbortReason, message: impl Into<String>) -> Result<T, ExecAbort> {
    Err(ExecAbort {
        reason,
        message: message.into(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecConfig {
    pub step_budget: u64,
    /// Parameter pairs that must have equal length at entry.
    pub equal_length: Vec<(String, String)>,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            step_budget: 1_000_000,
            equal_length: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecOutput {
    pub state: StateStore,
    /// Return values in declaration order.
    pub returns: Vec<(String, Value)>,
    pub reads: BTreeSet<CellId>,
    pub writes: BTreeSet<CellId>,
}

impl ExecOutput {
    pub fn ret(&self, name: &str) -> Option<&Value> {
        self.returns.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

struct Frame<'a> {
    contract: &'a ContractAst,
    func: &'a FunctionDecl,
    caller: Address,
    params: BTreeMap<String, Value>,
    returns: BTreeMap<String, Value>,
    locals: BTreeMap<String, Value>,
    state: StateStore,
    reads: BTreeSet<CellId>,
    writes: BTreeSet<CellId>,
    steps: u64,
    budget: u64,
}

enum Slot {
    Local,
    Param,
    Return,
    State,
}

impl Frame<'_> {
    fn tick(&mut self) -> Result<(), ExecAbort> {
        self.steps += 1;
        if self.steps > self.budget {
            return abort(
                AbortReason::StepBudgetExceeded,
                format!("more than {} steps", self.budget),
            );
        }
        Ok(())
    }

    fn slot(&self, name: &str) -> Result<Slot, ExecAbort> {
        if self.locals.contains_key(name) {
            Ok(Slot::Local)
        } else if self.params.contains_key(name) {
            Ok(Slot::Param)
        } else if self.returns.contains_key(name) {
            Ok(Slot::Return)
        } else if self.contract.state_var(name).is_some() {
            Ok(Slot::State)
        } else {
            abort(AbortReason::TypeMismatch, format!("unbound '{name}'"))
        }
    }

    fn read_cell(&mut self, cell: CellId, ty: &DataType) -> Result<Value, ExecAbort> {
        if self.state.unavailable.contains(&cell) {
            return abort(AbortReason::MissingState, format!("state cell {cell} is not available"));
        }
        self.reads.insert(cell.clone());
        Ok(self
            .state
            .get(&cell)
            .cloned()
            .unwrap_or_else(|| Value::default_for(ty)))
    }

    /// Number of leading indexes consumed by state mapping keys, and the
    /// value type after them.
    fn state_keys(&self, var: &str, n_indexes: usize) -> (usize, DataType) {
        let mut ty = self.contract.state_var(var).expect("checked").ty.data.clone();
        let mut used = 0;
        while used < n_indexes {
            match ty {
                DataType::Mapping { value, .. } | DataType::NamedMapping { value, .. } => {
                    ty = value.data;
                    used += 1;
                }
                _ => break,
            }
        }
        (used, ty)
    }

    fn index_into(v: &Value, idx: &Value) -> Result<Value, ExecAbort> {
        match (v, idx) {
            (Value::Array(a), Value::Uint(i)) => {
                if *i >= U256::from(a.len()) {
                    return abort(
                        AbortReason::TypeMismatch,
                        format!("index {i} out of bounds for length {}", a.len()),
                    );
                }
                Ok(a[i.as_usize()].clone())
            }
            (Value::Map(m), k) => m
                .get(k)
                .cloned()
                .map(Ok)
                .unwrap_or_else(|| abort(AbortReason::TypeMismatch, "missing mapping entry in local value")),
            _ => abort(AbortReason::TypeMismatch, "value is not indexable"),
        }
    }

    fn write_into(v: &mut Value, idx: &[Value], new: Value) -> Result<(), ExecAbort> {
        let Some((first, rest)) = idx.split_first() else {
            *v = new;
            return Ok(());
        };
        match (v, first) {
            (Value::Array(a), Value::Uint(i)) => {
                if *i >= U256::from(a.len()) {
                    return abort(
                        AbortReason::TypeMismatch,
                        format!("index {i} out of bounds for length {}", a.len()),
                    );
                }
                Self::write_into(&mut a[i.as_usize()], rest, new)
            }
            (Value::Map(m), k) => {
                let slot = m.entry(k.clone()).or_insert_with(|| new.clone());
                Self::write_into(slot, rest, new)
            }
            _ => abort(AbortReason::TypeMismatch, "value is not indexable"),
        }
    }

    fn load(&mut self, base: &str, indexes: &[Expr]) -> Result<Value, ExecAbort> {
        let idx = indexes
            .iter()
            .map(|e| self.eval(e))
            .collect::<Result<Vec<_>, _>>()?;
        let mut v = match self.slot(base)? {
            Slot::Local => self.locals[base].clone(),
            Slot::Param => self.params[base].clone(),
            Slot::Return => self.returns[base].clone(),
            Slot::State => {
                let (used, ty) = self.state_keys(base, idx.len());
                let cell = CellId {
                    var: base.to_string(),
                    keys: idx[..used].to_vec(),
                };
                let v = self.read_cell(cell, &ty)?;
                return idx[used..].iter().try_fold(v, |v, i| Self::index_into(&v, i));
            }
        };
        for i in &idx {
            v = Self::index_into(&v, i)?;
        }
        Ok(v)
    }

    fn store(&mut self, target: &Expr, new: Value) -> Result<(), ExecAbort> {
        let ExprKind::Location { base, indexes } = &target.kind else {
            return abort(AbortReason::TypeMismatch, "assignment target is not a location");
        };
        let idx = indexes
            .iter()
            .map(|e| self.eval(e))
            .collect::<Result<Vec<_>, _>>()?;
        match self.slot(base)? {
            Slot::Local => Self::write_into(self.locals.get_mut(base).expect("slot"), &idx, new),
            Slot::Param => Self::write_into(self.params.get_mut(base).expect("slot"), &idx, new),
            Slot::Return => Self::write_into(self.returns.get_mut(base).expect("slot"), &idx, new),
            Slot::State => {
                let (used, ty) = self.state_keys(base, idx.len());
                let cell = CellId {
                    var: base.to_string(),
                    keys: idx[..used].to_vec(),
                };
                let mut v = if used == idx.len() {
                    Value::default_for(&ty)
                } else {
                    self.read_cell(cell.clone(), &ty)?
                };
                Self::write_into(&mut v, &idx[used..], new)?;
                self.writes.insert(cell.clone());
                self.state.set(cell, v);
                Ok(())
            }
        }
    }

    fn eval(&mut self, e: &Expr) -> Result<Value, ExecAbort> {
        match &e.kind {
            ExprKind::Const(Literal::Uint(n)) => U256::from_dec_str(n)
                .map(Value::Uint)
                .or_else(|_| abort(AbortReason::Overflow, format!("literal {n} exceeds uint256"))),
            ExprKind::Const(Literal::Bool(b)) => Ok(Value::Bool(*b)),
            ExprKind::MeAddr => Ok(Value::Address(self.caller)),
            ExprKind::Location { base, indexes } => self.load(base, indexes),
            ExprKind::Reveal { inner, .. } => self.eval(inner),
            ExprKind::Ternary { cond, then, els } => match self.eval(cond)? {
                Value::Bool(true) => self.eval(then),
                Value::Bool(false) => self.eval(els),
                _ => abort(AbortReason::TypeMismatch, "condition is not bool"),
            },
            ExprKind::Apply { op, args } => self.apply(*op, args),
        }
    }

    fn apply(&mut self, op: NativeOp, args: &[Expr]) -> Result<Value, ExecAbort> {
        // Short-circuit boolean operators.
        if matches!(op, NativeOp::And | NativeOp::Or) {
            let a = self.eval_bool(&args[0])?;
            if (op == NativeOp::And && !a) || (op == NativeOp::Or && a) {
                return Ok(Value::Bool(a));
            }
            return Ok(Value::Bool(self.eval_bool(&args[1])?));
        }
        if op == NativeOp::Not {
            return Ok(Value::Bool(!self.eval_bool(&args[0])?));
        }
        if op == NativeOp::Length {
            return match self.eval(&args[0])? {
                Value::Array(v) => Ok(Value::uint(v.len() as u64)),
                _ => abort(AbortReason::TypeMismatch, ".length of a non-array"),
            };
        }
        let a = self.eval(&args[0])?;
        let b = self.eval(&args[1])?;
        match op {
            NativeOp::Eq => return Ok(Value::Bool(a == b)),
            NativeOp::Ne => return Ok(Value::Bool(a != b)),
            _ => {}
        }
        let (Value::Uint(x), Value::Uint(y)) = (&a, &b) else {
            return abort(AbortReason::TypeMismatch, format!("'{}' needs uint operands", op.symbol()));
        };
        let (x, y) = (*x, *y);
        let over = |what: &str| ExecAbort {
            reason: AbortReason::Overflow,
            message: format!("{what}: {x} {} {y}", op.symbol()),
        };
        Ok(match op {
            NativeOp::Add => Value::Uint(x.checked_add(y).ok_or_else(|| over("overflow"))?),
            NativeOp::Sub => Value::Uint(x.checked_sub(y).ok_or_else(|| over("underflow"))?),
            NativeOp::Mul => Value::Uint(x.checked_mul(y).ok_or_else(|| over("overflow"))?),
            NativeOp::Div => Value::Uint(x.checked_div(y).ok_or_else(|| over("division by zero"))?),
            NativeOp::Mod => Value::Uint(x.checked_rem(y).ok_or_else(|| over("division by zero"))?),
            NativeOp::Lt => Value::Bool(x < y),
            NativeOp::Le => Value::Bool(x <= y),
            NativeOp::Gt => Value::Bool(x > y),
            NativeOp::Ge => Value::Bool(x >= y),
            _ => unreachable!("handled above"),
        })
    }

    fn eval_bool(&mut self, e: &Expr) -> Result<bool, ExecAbort> {
        match self.eval(e)? {
            Value::Bool(b) => Ok(b),
            _ => abort(AbortReason::TypeMismatch, "expected bool"),
        }
    }

    fn exec(&mut self, s: &Stmt) -> Result<(), ExecAbort> {
        self.tick()?;
        match &s.kind {
            StmtKind::Skip => Ok(()),
            StmtKind::Seq(v) => v.iter().try_for_each(|s| self.exec(s)),
            StmtKind::Decl { name, ty, init } => {
                let v = match init {
                    Some(e) => self.eval(e)?,
                    None => Value::default_for(&ty.data),
                };
                self.locals.insert(name.clone(), v);
                Ok(())
            }
            StmtKind::Assign { target, value } => {
                let v = self.eval(value)?;
                self.store(target, v)
            }
            StmtKind::Require(e) => {
                if self.eval_bool(e)? {
                    Ok(())
                } else {
                    abort(AbortReason::RequireFailed, format!("require failed at {}", e.pos()))
                }
            }
            StmtKind::If { cond, then, els } => {
                if self.eval_bool(cond)? {
                    self.exec(then)
                } else {
                    self.exec(els)
                }
            }
            StmtKind::While { cond, body } => {
                while self.eval_bool(cond)? {
                    self.exec(body)?;
                    self.tick()?;
                }
                Ok(())
            }
            StmtKind::Return(vals) => {
                for (e, r) in vals.iter().zip(&self.func.returns) {
                    let v = self.eval(e)?;
                    self.returns.insert(r.name.clone(), v);
                }
                Ok(())
            }
        }
    }
}

/// Run `function` of `contract` over `state`. The input state is never
/// modified; on abort the caller simply keeps it.
pub fn exec_function(
    contract: &ContractAst,
    function: &str,
    state: &StateStore,
    params: &BTreeMap<String, Value>,
    caller: Address,
    cfg: &ExecConfig,
) -> Result<ExecOutput, ExecAbort> {
    let Some(func) = contract.function(function) else {
        return abort(AbortReason::TypeMismatch, format!("no function '{function}'"));
    };
    for p in &func.params {
        match params.get(&p.name) {
            Some(v) if v.matches(&p.ty.data) => {}
            Some(_) => {
                return abort(
                    AbortReason::TypeMismatch,
                    format!("parameter '{}' has the wrong type", p.name),
                )
            }
            None => return abort(AbortReason::TypeMismatch, format!("missing parameter '{}'", p.name)),
        }
    }
    for (a, b) in &cfg.equal_length {
        let len = |n: &str| match params.get(n) {
            Some(Value::Array(v)) => Some(v.len()),
            _ => None,
        };
        if len(a) != len(b) {
            return abort(
                AbortReason::TypeMismatch,
                format!("'{a}' and '{b}' must have the same length"),
            );
        }
    }
    let mut frame = Frame {
        contract,
        func,
        caller,
        params: func
            .params
            .iter()
            .map(|p| (p.name.clone(), params[&p.name].clone()))
            .collect(),
        returns: func
            .returns
            .iter()
            .map(|r| (r.name.clone(), Value::default_for(&r.ty.data)))
            .collect(),
        locals: BTreeMap::new(),
        state: state.clone(),
        reads: BTreeSet::new(),
        writes: BTreeSet::new(),
        steps: 0,
        budget: cfg.step_budget,
    };
    frame.exec(&func.body)?;
    let returns = func
        .returns
        .iter()
        .map(|r| (r.name.clone(), frame.returns[&r.name].clone()))
        .collect();
    Ok(ExecOutput {
        state: frame.state,
        returns,
        reads: frame.reads,
        writes: frame.writes,
    })
}

/// Values destined for one recipient.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Slice {
    #[serde(with = "cell_map")]
    pub state: BTreeMap<CellId, Value>,
    pub returns: BTreeMap<String, Value>,
}

impl Slice {
    pub fn is_empty(&self) -> bool {
        self.state.is_empty() && self.returns.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub public: Slice,
    pub private: BTreeMap<Address, Slice>,
    /// Tee-owned values; they stay inside the enclave.
    pub enclave: Slice,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot resolve owner '{owner}' of {item}")]
pub struct PolicyError {
    pub owner: String,
    pub item: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Recipient {
    Public,
    Party(Address),
    Enclave,
}

struct Resolver<'a> {
    caller: Address,
    params: &'a BTreeMap<String, Value>,
    out: &'a ExecOutput,
    states: &'a [DataPolicy],
}

impl Resolver<'_> {
    fn named(&self, n: &str) -> Option<Address> {
        if let Some(v) = self.out.ret(n) {
            return v.as_address();
        }
        if let Some(v) = self.params.get(n) {
            return v.as_address();
        }
        if self.states.iter().any(|s| s.id == n) {
            return Some(
                self.out
                    .state
                    .get(&CellId::scalar(n))
                    .and_then(Value::as_address)
                    .unwrap_or(Address::ZERO),
            );
        }
        None
    }

    fn atom(&self, atom: &OwnerAtom, key: Option<&Value>, tag: Option<&str>, item: &str) -> Result<Recipient, PolicyError> {
        let fail = || PolicyError {
            owner: atom.to_string(),
            item: item.to_string(),
        };
        let addr = match atom {
            OwnerAtom::All => return Ok(Recipient::Public),
            OwnerAtom::Tee => return Ok(Recipient::Enclave),
            OwnerAtom::Me => self.caller,
            OwnerAtom::Named(n) if Some(n.as_str()) == tag => {
                key.and_then(Value::as_address).ok_or_else(fail)?
            }
            OwnerAtom::Named(n) => self.named(n).ok_or_else(fail)?,
        };
        if addr.is_zero() {
            return Err(fail());
        }
        Ok(Recipient::Party(addr))
    }
}

/// Split mutated cells and return values by owner.
pub fn partition_outputs(
    policy: &FunctionPolicy,
    states: &[DataPolicy],
    out: &ExecOutput,
    params: &BTreeMap<String, Value>,
    caller: Address,
) -> Result<Partition, PolicyError> {
    let r = Resolver {
        caller,
        params,
        out,
        states,
    };
    let mut part = Partition::default();
    let mut put = |rcpt: Recipient, f: &mut dyn FnMut(&mut Slice)| match rcpt {
        Recipient::Public => f(&mut part.public),
        Recipient::Enclave => f(&mut part.enclave),
        Recipient::Party(a) => f(part.private.entry(a).or_default()),
    };
    for cell in &out.writes {
        let Some(dp) = states.iter().find(|s| s.id == cell.var) else {
            return Err(PolicyError {
                owner: "?".into(),
                item: cell.to_string(),
            });
        };
        let (atom, tag) = match &dp.ty.data {
            DataType::NamedMapping { tag, value } => (&value.owner, Some(tag.as_str())),
            DataType::Mapping { value, .. } => (&value.owner, None),
            _ => (&dp.ty.owner, None),
        };
        let rcpt = r.atom(atom, cell.keys.first(), tag, &cell.to_string())?;
        let v = out.state.get(cell).cloned().expect("written cells exist");
        put(rcpt, &mut |s| {
            s.state.insert(cell.clone(), v.clone());
        });
    }
    for dp in &policy.returns {
        let rcpt = r.atom(&dp.ty.owner, None, None, &dp.id)?;
        let v = out.ret(&dp.id).cloned().expect("every return is bound");
        put(rcpt, &mut |s| {
            s.returns.insert(dp.id.clone(), v.clone());
        });
    }
    Ok(part)
}
