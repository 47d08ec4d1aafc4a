//! Lexer, parser and printer for `.cloak` sources.

pub mod ast;
pub mod lexer;
pub mod parser;
pub mod printer;

use thiserror::Error;

pub use ast::*;
pub use lexer::{tokenize, LexError, Token};
pub use parser::{parse, parse_expr, ParseError};
pub use printer::{print_contract, print_expr, print_type};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error(transparent)]
    Lex(#[from] LexError),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

impl FrontendError {
    pub fn pos(&self) -> Pos {
        match self {
            FrontendError::Lex(e) => e.pos,
            FrontendError::Parse(e) => e.pos,
        }
    }
}

pub fn parse_source(source: &str) -> Result<ContractAst, FrontendError> {
    let toks = tokenize(source)?;
    Ok(parse(&toks)?)
}

pub fn parse_expr_source(source: &str) -> Result<Expr, FrontendError> {
    let toks = tokenize(source)?;
    Ok(parse_expr(&toks)?)
}
