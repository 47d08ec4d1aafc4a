use std::collections::HashSet;

use thiserror::Error;

use super::ast::*;
use super::lexer::{Keyword, Tok, Token};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pos}: {message}")]
pub struct ParseError {
    pub pos: Pos,
    pub message: String,
    /// Tokens that would have been accepted at `pos`; empty for semantic
    /// errors such as duplicate names.
    pub expected: Vec<String>,
}

type PResult<T> = Result<T, ParseError>;

pub fn parse(tokens: &[Token]) -> PResult<ContractAst> {
    let mut p = Parser { toks: tokens, i: 0 };
    let c = p.contract()?;
    if let Some(t) = p.peek_tok() {
        return Err(p.err_here(format!("unexpected {t} after contract"), vec!["end of input"]));
    }
    Ok(c)
}

/// Parse a single expression, e.g. for queries against a checked contract.
pub fn parse_expr(tokens: &[Token]) -> PResult<Expr> {
    let mut p = Parser { toks: tokens, i: 0 };
    let e = p.expr()?;
    if p.peek_tok().is_some() {
        return Err(p.unexpected(vec!["end of input"]));
    }
    Ok(e)
}

struct Parser<'a> {
    toks: &'a [Token],
    i: usize,
}

impl<'a> Parser<'a> {
    fn peek_tok(&self) -> Option<&'a Tok> {
        self.toks.get(self.i).map(|t| &t.tok)
    }

    fn peek_at(&self, k: usize) -> Option<&'a Tok> {
        self.toks.get(self.i + k).map(|t| &t.tok)
    }

    fn pos(&self) -> Pos {
        match self.toks.get(self.i) {
            Some(t) => t.pos,
            None => self
                .toks
                .last()
                .map(|t| Pos {
                    line: t.pos.line,
                    col: t.pos.col + 1,
                })
                .unwrap_or(Pos { line: 1, col: 1 }),
        }
    }

    fn err_here(&self, message: String, expected: Vec<&str>) -> ParseError {
        ParseError {
            pos: self.pos(),
            message,
            expected: expected.into_iter().map(String::from).collect(),
        }
    }

    fn unexpected(&self, expected: Vec<&str>) -> ParseError {
        let found = match self.peek_tok() {
            Some(t) => t.to_string(),
            None => "end of input".to_string(),
        };
        let msg = format!("expected {}, found {found}", expected.join(" or "));
        self.err_here(msg, expected)
    }

    fn is(&self, t: &Tok) -> bool {
        self.peek_tok() == Some(t)
    }

    fn is_kw(&self, k: Keyword) -> bool {
        self.peek_tok() == Some(&Tok::Kw(k))
    }

    fn eat(&mut self, t: &Tok) -> bool {
        if self.is(t) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn eat_kw(&mut self, k: Keyword) -> bool {
        self.eat(&Tok::Kw(k))
    }

    fn expect(&mut self, t: Tok) -> PResult<Pos> {
        let pos = self.pos();
        if self.eat(&t) {
            Ok(pos)
        } else {
            let s = t.to_string();
            Err(self.unexpected(vec![&s]))
        }
    }

    fn ident(&mut self) -> PResult<(String, Pos)> {
        let pos = self.pos();
        match self.peek_tok() {
            Some(Tok::Ident(s)) => {
                self.i += 1;
                Ok((s.clone(), pos))
            }
            _ => Err(self.unexpected(vec!["identifier"])),
        }
    }

    fn contract(&mut self) -> PResult<ContractAst> {
        self.expect(Tok::Kw(Keyword::Contract))?;
        let (name, _) = self.ident()?;
        self.expect(Tok::LBrace)?;
        let mut state_vars: Vec<StateVar> = Vec::new();
        let mut functions: Vec<FunctionDecl> = Vec::new();
        let mut names = HashSet::new();
        while !self.eat(&Tok::RBrace) {
            let pos = self.pos();
            let name = if self.is_kw(Keyword::Function) {
                let f = self.function()?;
                let n = f.name.clone();
                functions.push(f);
                n
            } else if self.starts_type() || self.is_kw(Keyword::Final) {
                let v = self.state_var()?;
                let n = v.name.clone();
                state_vars.push(v);
                n
            } else {
                return Err(self.unexpected(vec!["'function'", "'final'", "type", "'}'"]));
            };
            if !names.insert(name.clone()) {
                return Err(ParseError {
                    pos,
                    message: format!("duplicate member name '{name}'"),
                    expected: vec![],
                });
            }
        }
        Ok(ContractAst {
            name,
            state_vars,
            functions,
        })
    }

    fn state_var(&mut self) -> PResult<StateVar> {
        let pos = self.pos();
        let is_final = self.eat_kw(Keyword::Final);
        let ty = self.annotated_type()?;
        let (name, _) = self.ident()?;
        self.expect(Tok::Semi)?;
        Ok(StateVar {
            name,
            ty,
            is_final,
            span: Span(pos),
        })
    }

    fn starts_type(&self) -> bool {
        matches!(
            self.peek_tok(),
            Some(Tok::Kw(
                Keyword::Bool
                    | Keyword::Uint
                    | Keyword::Uint256
                    | Keyword::Address
                    | Keyword::Bin
                    | Keyword::Mapping
            ))
        )
    }

    fn owner(&mut self) -> PResult<OwnerAtom> {
        let o = match self.peek_tok() {
            Some(Tok::Kw(Keyword::All)) => OwnerAtom::All,
            Some(Tok::Kw(Keyword::Tee)) => OwnerAtom::Tee,
            Some(Tok::Kw(Keyword::Me)) => OwnerAtom::Me,
            Some(Tok::Ident(s)) => OwnerAtom::Named(s.clone()),
            _ => return Err(self.unexpected(vec!["'all'", "'tee'", "'me'", "identifier"])),
        };
        self.i += 1;
        Ok(o)
    }

    fn primitive(&mut self) -> PResult<DataType> {
        let t = match self.peek_tok() {
            Some(Tok::Kw(Keyword::Bool)) => DataType::Bool,
            Some(Tok::Kw(Keyword::Uint | Keyword::Uint256)) => DataType::Uint256,
            Some(Tok::Kw(Keyword::Address)) => DataType::Address,
            Some(Tok::Kw(Keyword::Bin)) => DataType::Bin,
            _ => return Err(self.unexpected(vec!["'bool'", "'uint'", "'address'", "'bin'"])),
        };
        self.i += 1;
        Ok(t)
    }

    /// Data type including any `[..]` suffixes, without the trailing owner.
    fn data_type(&mut self) -> PResult<DataType> {
        let mut data = if self.eat_kw(Keyword::Mapping) {
            self.expect(Tok::LParen)?;
            let keyed = if self.is_kw(Keyword::Address) && self.peek_at(1) == Some(&Tok::Bang) {
                self.i += 2;
                Some(self.ident()?.0)
            } else {
                None
            };
            let key = match keyed {
                Some(_) => None,
                None => Some(self.primitive()?),
            };
            self.expect(Tok::Arrow)?;
            let value = Box::new(self.annotated_type()?);
            self.expect(Tok::RParen)?;
            match (keyed, key) {
                (Some(tag), _) => DataType::NamedMapping { tag, value },
                (None, Some(key)) => DataType::Mapping {
                    key: Box::new(key),
                    value,
                },
                (None, None) => unreachable!(),
            }
        } else {
            self.primitive()?
        };
        while self.eat(&Tok::LBracket) {
            if self.eat(&Tok::Bang) {
                let (tag, pos) = self.ident()?;
                if data != DataType::Address {
                    return Err(ParseError {
                        pos,
                        message: "only address arrays can bind an owner tag".into(),
                        expected: vec![],
                    });
                }
                data = DataType::NamedAddressArray { tag };
            } else {
                let owner = if self.eat(&Tok::At) {
                    self.owner()?
                } else {
                    OwnerAtom::All
                };
                data = DataType::Array {
                    elem: Box::new(AnnotatedType { data, owner }),
                };
            }
            self.expect(Tok::RBracket)?;
        }
        Ok(data)
    }

    fn annotated_type(&mut self) -> PResult<AnnotatedType> {
        let data = self.data_type()?;
        let owner = if self.eat(&Tok::At) {
            self.owner()?
        } else {
            OwnerAtom::All
        };
        Ok(AnnotatedType { data, owner })
    }

    fn params(&mut self) -> PResult<Vec<Param>> {
        self.expect(Tok::LParen)?;
        let mut out = Vec::new();
        if self.eat(&Tok::RParen) {
            return Ok(out);
        }
        loop {
            let pos = self.pos();
            let ty = self.annotated_type()?;
            let (name, _) = self.ident()?;
            out.push(Param {
                name,
                ty,
                span: Span(pos),
            });
            if self.eat(&Tok::RParen) {
                return Ok(out);
            }
            if !self.eat(&Tok::Comma) {
                return Err(self.unexpected(vec!["','", "')'"]));
            }
        }
    }

    fn function(&mut self) -> PResult<FunctionDecl> {
        let pos = self.expect(Tok::Kw(Keyword::Function))?;
        let (name, _) = self.ident()?;
        let params = self.params()?;
        self.eat_kw(Keyword::Public);
        let returns = if self.eat_kw(Keyword::Returns) {
            self.params()?
        } else {
            Vec::new()
        };
        let mut seen = HashSet::new();
        for p in params.iter().chain(&returns) {
            if !seen.insert(p.name.as_str()) {
                return Err(ParseError {
                    pos: p.span.pos(),
                    message: format!("duplicate parameter name '{}'", p.name),
                    expected: vec![],
                });
            }
        }
        let body_pos = self.pos();
        let stmts = self.block_stmts()?;
        // A return is only legal as the very last statement of the body.
        for (i, s) in stmts.iter().enumerate() {
            let mut bad = None;
            s.walk(&mut |n| {
                if matches!(n.kind, StmtKind::Return(_)) && bad.is_none() {
                    bad = Some(n.pos());
                }
            });
            if let Some(p) = bad {
                let last_top = i + 1 == stmts.len() && matches!(s.kind, StmtKind::Return(_));
                if !last_top {
                    return Err(ParseError {
                        pos: p,
                        message: "return is only allowed as the final statement of a function".into(),
                        expected: vec![],
                    });
                }
            }
        }
        Ok(FunctionDecl {
            name,
            params,
            returns,
            body: Stmt::seq(stmts, body_pos),
            span: Span(pos),
        })
    }

    fn block_stmts(&mut self) -> PResult<Vec<Stmt>> {
        self.expect(Tok::LBrace)?;
        let mut out = Vec::new();
        while !self.eat(&Tok::RBrace) {
            if self.peek_tok().is_none() {
                return Err(self.unexpected(vec!["'}'"]));
            }
            self.stmt_into(&mut out)?;
        }
        Ok(out)
    }

    /// Body of an `if`/`while`: a block, or a single statement wrapped in
    /// a block.
    fn branch(&mut self) -> PResult<Stmt> {
        let pos = self.pos();
        if self.is(&Tok::LBrace) {
            return Ok(Stmt::seq(self.block_stmts()?, pos));
        }
        let mut out = Vec::new();
        self.stmt_into(&mut out)?;
        Ok(Stmt::seq(out, pos))
    }

    /// Parse one source statement and push its desugared form. A `for` loop
    /// expands to two statements.
    fn stmt_into(&mut self, out: &mut Vec<Stmt>) -> PResult<()> {
        let pos = self.pos();
        match self.peek_tok() {
            Some(Tok::LBrace) => {
                let inner = self.block_stmts()?;
                out.push(Stmt::seq(inner, pos));
            }
            Some(Tok::Semi) => {
                self.i += 1;
                out.push(Stmt::new(StmtKind::Skip, pos));
            }
            Some(Tok::Kw(Keyword::Require)) => {
                self.i += 1;
                self.expect(Tok::LParen)?;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                self.expect(Tok::Semi)?;
                out.push(Stmt::new(StmtKind::Require(e), pos));
            }
            Some(Tok::Kw(Keyword::If)) => out.push(self.if_stmt()?),
            Some(Tok::Kw(Keyword::While)) => {
                self.i += 1;
                self.expect(Tok::LParen)?;
                let cond = self.expr()?;
                self.expect(Tok::RParen)?;
                let body = self.branch()?;
                out.push(Stmt::new(
                    StmtKind::While {
                        cond,
                        body: Box::new(body),
                    },
                    pos,
                ));
            }
            Some(Tok::Kw(Keyword::For)) => {
                self.i += 1;
                self.expect(Tok::LParen)?;
                if !self.is(&Tok::Semi) {
                    out.push(self.simple_stmt()?);
                }
                self.expect(Tok::Semi)?;
                let cond = if self.is(&Tok::Semi) {
                    Expr::new(ExprKind::Const(Literal::Bool(true)), self.pos())
                } else {
                    self.expr()?
                };
                self.expect(Tok::Semi)?;
                let step = if self.is(&Tok::RParen) {
                    None
                } else {
                    Some(self.simple_stmt()?)
                };
                self.expect(Tok::RParen)?;
                let body_pos = self.pos();
                let mut body = match self.branch()?.kind {
                    StmtKind::Seq(v) => v,
                    _ => unreachable!("branch always yields a block"),
                };
                body.extend(step);
                out.push(Stmt::new(
                    StmtKind::While {
                        cond,
                        body: Box::new(Stmt::seq(body, body_pos)),
                    },
                    pos,
                ));
            }
            Some(Tok::Kw(Keyword::Return)) => {
                self.i += 1;
                let mut vals = Vec::new();
                if !self.is(&Tok::Semi) {
                    vals.push(self.expr()?);
                    while self.eat(&Tok::Comma) {
                        vals.push(self.expr()?);
                    }
                }
                self.expect(Tok::Semi)?;
                out.push(Stmt::new(StmtKind::Return(vals), pos));
            }
            _ => {
                let s = self.simple_stmt()?;
                self.expect(Tok::Semi)?;
                out.push(s);
            }
        }
        Ok(())
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        let pos = self.expect(Tok::Kw(Keyword::If))?;
        self.expect(Tok::LParen)?;
        let cond = self.expr()?;
        self.expect(Tok::RParen)?;
        let then = self.branch()?;
        let els = if self.eat_kw(Keyword::Else) {
            self.branch()?
        } else {
            Stmt::seq(vec![], self.pos())
        };
        Ok(Stmt::new(
            StmtKind::If {
                cond,
                then: Box::new(then),
                els: Box::new(els),
            },
            pos,
        ))
    }

    /// Declaration or assignment, without the terminating `;`.
    fn simple_stmt(&mut self) -> PResult<Stmt> {
        let pos = self.pos();
        if self.starts_type() {
            let ty = self.annotated_type()?;
            let (name, _) = self.ident()?;
            let init = if self.eat(&Tok::Assign) {
                Some(self.expr()?)
            } else {
                None
            };
            return Ok(Stmt::new(StmtKind::Decl { name, ty, init }, pos));
        }
        if !matches!(self.peek_tok(), Some(Tok::Ident(_))) {
            return Err(self.unexpected(vec!["statement"]));
        }
        let target = self.location()?;
        let op_pos = self.pos();
        let compound = |op: NativeOp, rhs: Expr, target: &Expr| {
            Expr::new(
                ExprKind::Apply {
                    op,
                    args: vec![target.clone(), rhs],
                },
                op_pos,
            )
        };
        let one = || Expr::new(ExprKind::Const(Literal::Uint("1".into())), op_pos);
        let value = match self.peek_tok() {
            Some(Tok::Assign) => {
                self.i += 1;
                self.expr()?
            }
            Some(Tok::PlusAssign) => {
                self.i += 1;
                let rhs = self.expr()?;
                compound(NativeOp::Add, rhs, &target)
            }
            Some(Tok::MinusAssign) => {
                self.i += 1;
                let rhs = self.expr()?;
                compound(NativeOp::Sub, rhs, &target)
            }
            Some(Tok::StarAssign) => {
                self.i += 1;
                let rhs = self.expr()?;
                compound(NativeOp::Mul, rhs, &target)
            }
            Some(Tok::PlusPlus) => {
                self.i += 1;
                compound(NativeOp::Add, one(), &target)
            }
            Some(Tok::MinusMinus) => {
                self.i += 1;
                compound(NativeOp::Sub, one(), &target)
            }
            _ => return Err(self.unexpected(vec!["'='", "'+='", "'-='", "'*='", "'++'", "'--'"])),
        };
        Ok(Stmt::new(StmtKind::Assign { target, value }, pos))
    }

    fn location(&mut self) -> PResult<Expr> {
        let (base, pos) = self.ident()?;
        let mut indexes = Vec::new();
        while self.eat(&Tok::LBracket) {
            indexes.push(self.expr()?);
            self.expect(Tok::RBracket)?;
        }
        Ok(Expr::new(ExprKind::Location { base, indexes }, pos))
    }

    fn expr(&mut self) -> PResult<Expr> {
        let cond = self.binary(0)?;
        if self.is(&Tok::Question) {
            let pos = self.pos();
            self.i += 1;
            let then = self.expr()?;
            self.expect(Tok::Colon)?;
            let els = self.expr()?;
            return Ok(Expr::new(
                ExprKind::Ternary {
                    cond: Box::new(cond),
                    then: Box::new(then),
                    els: Box::new(els),
                },
                pos,
            ));
        }
        Ok(cond)
    }

    fn binop(&self) -> Option<NativeOp> {
        Some(match self.peek_tok()? {
            Tok::OrOr => NativeOp::Or,
            Tok::AndAnd => NativeOp::And,
            Tok::EqEq => NativeOp::Eq,
            Tok::NotEq => NativeOp::Ne,
            Tok::Lt => NativeOp::Lt,
            Tok::Le => NativeOp::Le,
            Tok::Gt => NativeOp::Gt,
            Tok::Ge => NativeOp::Ge,
            Tok::Plus => NativeOp::Add,
            Tok::Minus => NativeOp::Sub,
            Tok::Star => NativeOp::Mul,
            Tok::Slash => NativeOp::Div,
            Tok::Percent => NativeOp::Mod,
            _ => return None,
        })
    }

    /// Precedence climbing over left-associative binary operators.
    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.binop() {
            let prec = precedence(op);
            if prec < min_prec {
                break;
            }
            let pos = self.pos();
            self.i += 1;
            let rhs = self.binary(prec + 1)?;
            lhs = Expr::new(
                ExprKind::Apply {
                    op,
                    args: vec![lhs, rhs],
                },
                pos,
            );
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.is(&Tok::Bang) {
            let pos = self.pos();
            self.i += 1;
            let inner = self.unary()?;
            return Ok(Expr::new(
                ExprKind::Apply {
                    op: NativeOp::Not,
                    args: vec![inner],
                },
                pos,
            ));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let e = self.primary()?;
        if self.is(&Tok::Dot) {
            let pos = self.pos();
            self.i += 1;
            match self.peek_tok() {
                Some(Tok::Ident(s)) if s == "length" => self.i += 1,
                _ => return Err(self.unexpected(vec!["'length'"])),
            }
            return Ok(Expr::new(
                ExprKind::Apply {
                    op: NativeOp::Length,
                    args: vec![e],
                },
                pos,
            ));
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let pos = self.pos();
        match self.peek_tok() {
            Some(Tok::Int(n)) => {
                self.i += 1;
                Ok(Expr::new(ExprKind::Const(Literal::Uint(n.clone())), pos))
            }
            Some(Tok::Kw(Keyword::True)) => {
                self.i += 1;
                Ok(Expr::new(ExprKind::Const(Literal::Bool(true)), pos))
            }
            Some(Tok::Kw(Keyword::False)) => {
                self.i += 1;
                Ok(Expr::new(ExprKind::Const(Literal::Bool(false)), pos))
            }
            Some(Tok::Kw(Keyword::Me)) => {
                self.i += 1;
                Ok(Expr::new(ExprKind::MeAddr, pos))
            }
            Some(Tok::Kw(Keyword::Reveal)) => {
                self.i += 1;
                self.expect(Tok::LParen)?;
                let inner = self.expr()?;
                self.expect(Tok::Comma)?;
                let target = self.owner()?;
                self.expect(Tok::RParen)?;
                Ok(Expr::new(
                    ExprKind::Reveal {
                        inner: Box::new(inner),
                        target,
                    },
                    pos,
                ))
            }
            Some(Tok::Ident(_)) => self.location(),
            Some(Tok::LParen) => {
                self.i += 1;
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            _ => Err(self.unexpected(vec!["expression"])),
        }
    }
}

pub(crate) fn precedence(op: NativeOp) -> u8 {
    match op {
        NativeOp::Or => 1,
        NativeOp::And => 2,
        NativeOp::Eq | NativeOp::Ne => 3,
        NativeOp::Lt | NativeOp::Le | NativeOp::Gt | NativeOp::Ge => 4,
        NativeOp::Add | NativeOp::Sub => 5,
        NativeOp::Mul | NativeOp::Div | NativeOp::Mod => 6,
        NativeOp::Not => 7,
        NativeOp::Length => 8,
    }
}
