use std::fmt;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

/// Line/column of a token, both 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Pos {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

/// Source position attached to AST nodes.
///
/// Spans never take part in structural equality or hashing, and they are not
/// serialized, so two ASTs parsed from differently formatted sources compare
/// equal and hash to the same canonical bytes.
#[derive(Debug, Clone, Copy, Default)]
pub struct Span(pub Pos);

impl PartialEq for Span {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

impl Eq for Span {}

impl Hash for Span {
    fn hash<H: Hasher>(&self, _: &mut H) {}
}

impl Span {
    pub fn pos(&self) -> Pos {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OwnerAtom {
    All,
    Tee,
    Me,
    Named(String),
}

impl OwnerAtom {
    pub fn is_all(&self) -> bool {
        matches!(self, OwnerAtom::All)
    }
}

impl fmt::Display for OwnerAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OwnerAtom::All => f.write_str("all"),
            OwnerAtom::Tee => f.write_str("tee"),
            OwnerAtom::Me => f.write_str("me"),
            OwnerAtom::Named(n) => f.write_str(n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataType {
    Bool,
    Uint256,
    Address,
    Bin,
    Mapping {
        key: Box<DataType>,
        value: Box<AnnotatedType>,
    },
    /// `mapping(address !tag => τ@α)`; `tag` is in scope inside `value`.
    NamedMapping {
        tag: String,
        value: Box<AnnotatedType>,
    },
    Array {
        elem: Box<AnnotatedType>,
    },
    /// `address[!tag]`; element `i` names the owner `tag` at index `i`.
    NamedAddressArray {
        tag: String,
    },
}

impl DataType {
    pub fn is_primitive(&self) -> bool {
        matches!(
            self,
            DataType::Bool | DataType::Uint256 | DataType::Address | DataType::Bin
        )
    }

    pub fn is_address(&self) -> bool {
        matches!(self, DataType::Address)
    }

    /// The same shape with every nested owner annotation set to `all`.
    pub fn erased(&self) -> DataType {
        match self {
            DataType::Mapping { key, value } => DataType::Mapping {
                key: key.clone(),
                value: Box::new(value.erased()),
            },
            DataType::NamedMapping { value, .. } => DataType::Mapping {
                key: Box::new(DataType::Address),
                value: Box::new(value.erased()),
            },
            DataType::Array { elem } => DataType::Array {
                elem: Box::new(elem.erased()),
            },
            DataType::NamedAddressArray { .. } => DataType::Array {
                elem: Box::new(AnnotatedType::public(DataType::Address)),
            },
            d => d.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotatedType {
    pub data: DataType,
    pub owner: OwnerAtom,
}

impl AnnotatedType {
    pub fn public(data: DataType) -> Self {
        Self {
            data,
            owner: OwnerAtom::All,
        }
    }

    pub fn owned(data: DataType, owner: OwnerAtom) -> Self {
        Self { data, owner }
    }

    pub fn erased(&self) -> AnnotatedType {
        AnnotatedType::public(self.data.erased())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Literal {
    /// Decimal digits, unbounded at parse time.
    Uint(String),
    Bool(bool),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NativeOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
    Not,
    Length,
}

impl NativeOp {
    pub fn symbol(self) -> &'static str {
        match self {
            NativeOp::Add => "+",
            NativeOp::Sub => "-",
            NativeOp::Mul => "*",
            NativeOp::Div => "/",
            NativeOp::Mod => "%",
            NativeOp::Lt => "<",
            NativeOp::Le => "<=",
            NativeOp::Gt => ">",
            NativeOp::Ge => ">=",
            NativeOp::Eq => "==",
            NativeOp::Ne => "!=",
            NativeOp::And => "&&",
            NativeOp::Or => "||",
            NativeOp::Not => "!",
            NativeOp::Length => ".length",
        }
    }

    pub fn is_arithmetic(self) -> bool {
        matches!(
            self,
            NativeOp::Add | NativeOp::Sub | NativeOp::Mul | NativeOp::Div | NativeOp::Mod
        )
    }

    pub fn is_ordering(self) -> bool {
        matches!(self, NativeOp::Lt | NativeOp::Le | NativeOp::Gt | NativeOp::Ge)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Expr {
    pub kind: ExprKind,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExprKind {
    Const(Literal),
    MeAddr,
    Location {
        base: String,
        indexes: Vec<Expr>,
    },
    Reveal {
        inner: Box<Expr>,
        target: OwnerAtom,
    },
    Apply {
        op: NativeOp,
        args: Vec<Expr>,
    },
    Ternary {
        cond: Box<Expr>,
        then: Box<Expr>,
        els: Box<Expr>,
    },
}

impl Expr {
    pub fn new(kind: ExprKind, pos: Pos) -> Self {
        Self {
            kind,
            span: Span(pos),
        }
    }

    pub fn pos(&self) -> Pos {
        self.span.0
    }

    pub fn location(base: &str, indexes: Vec<Expr>) -> Self {
        Self::new(
            ExprKind::Location {
                base: base.to_string(),
                indexes,
            },
            Pos::default(),
        )
    }

    pub fn uint(n: u64) -> Self {
        Self::new(ExprKind::Const(Literal::Uint(n.to_string())), Pos::default())
    }

    /// Pre-order walk over this expression and all subexpressions.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match &self.kind {
            ExprKind::Const(_) | ExprKind::MeAddr => {}
            ExprKind::Location { indexes, .. } => indexes.iter().for_each(|e| e.walk(f)),
            ExprKind::Reveal { inner, .. } => inner.walk(f),
            ExprKind::Apply { args, .. } => args.iter().for_each(|e| e.walk(f)),
            ExprKind::Ternary { cond, then, els } => {
                cond.walk(f);
                then.walk(f);
                els.walk(f);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Stmt {
    pub kind: StmtKind,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StmtKind {
    Skip,
    Decl {
        name: String,
        ty: AnnotatedType,
        init: Option<Expr>,
    },
    /// `target` is always an [`ExprKind::Location`].
    Assign {
        target: Expr,
        value: Expr,
    },
    Seq(Vec<Stmt>),
    Require(Expr),
    If {
        cond: Expr,
        then: Box<Stmt>,
        els: Box<Stmt>,
    },
    While {
        cond: Expr,
        body: Box<Stmt>,
    },
    Return(Vec<Expr>),
}

impl Stmt {
    pub fn new(kind: StmtKind, pos: Pos) -> Self {
        Self {
            kind,
            span: Span(pos),
        }
    }

    pub fn pos(&self) -> Pos {
        self.span.0
    }

    pub fn seq(stmts: Vec<Stmt>, pos: Pos) -> Self {
        Self::new(StmtKind::Seq(stmts), pos)
    }

    /// Pre-order walk over nested statements.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Stmt)) {
        f(self);
        match &self.kind {
            StmtKind::Seq(v) => v.iter().for_each(|s| s.walk(f)),
            StmtKind::If { then, els, .. } => {
                then.walk(f);
                els.walk(f);
            }
            StmtKind::While { body, .. } => body.walk(f),
            _ => {}
        }
    }

    /// Every expression appearing directly in this statement (not nested
    /// statements), including assignment targets.
    pub fn exprs(&self) -> Vec<&Expr> {
        match &self.kind {
            StmtKind::Skip | StmtKind::Seq(_) => vec![],
            StmtKind::Decl { init, .. } => init.iter().collect(),
            StmtKind::Assign { target, value } => vec![target, value],
            StmtKind::Require(e) => vec![e],
            StmtKind::If { cond, .. } | StmtKind::While { cond, .. } => vec![cond],
            StmtKind::Return(v) => v.iter().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: AnnotatedType,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FunctionDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub returns: Vec<Param>,
    pub body: Stmt,
    #[serde(skip)]
    pub span: Span,
}

impl FunctionDecl {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StateVar {
    pub name: String,
    pub ty: AnnotatedType,
    pub is_final: bool,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContractAst {
    pub name: String,
    pub state_vars: Vec<StateVar>,
    pub functions: Vec<FunctionDecl>,
}

impl ContractAst {
    pub fn function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn state_var(&self, name: &str) -> Option<&StateVar> {
        self.state_vars.iter().find(|v| v.name == name)
    }

    /// Visit every annotated type in the contract, including nested mapping
    /// values and array elements.
    pub fn annotated_types(&self) -> Vec<&AnnotatedType> {
        fn push<'a>(t: &'a AnnotatedType, out: &mut Vec<&'a AnnotatedType>) {
            out.push(t);
            match &t.data {
                DataType::Mapping { value, .. } | DataType::NamedMapping { value, .. } => {
                    push(value, out)
                }
                DataType::Array { elem } => push(elem, out),
                _ => {}
            }
        }
        let mut out = Vec::new();
        for v in &self.state_vars {
            push(&v.ty, &mut out);
        }
        for f in &self.functions {
            for p in f.params.iter().chain(&f.returns) {
                push(&p.ty, &mut out);
            }
            f.body.walk(&mut |s| {
                if let StmtKind::Decl { ty, .. } = &s.kind {
                    push(ty, &mut out);
                }
            });
        }
        out
    }
}
