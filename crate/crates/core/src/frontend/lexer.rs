use std::fmt;

use thiserror::Error;

use super::ast::Pos;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Keyword {
    Contract,
    Function,
    Returns,
    Mapping,
    Reveal,
    Require,
    Final,
    Me,
    All,
    Tee,
    Public,
    If,
    Else,
    While,
    For,
    Return,
    Bool,
    Uint,
    Uint256,
    Address,
    Bin,
    True,
    False,
}

impl Keyword {
    const ALL: [(&'static str, Keyword); 23] = [
        ("contract", Keyword::Contract),
        ("function", Keyword::Function),
        ("returns", Keyword::Returns),
        ("mapping", Keyword::Mapping),
        ("reveal", Keyword::Reveal),
        ("require", Keyword::Require),
        ("final", Keyword::Final),
        ("me", Keyword::Me),
        ("all", Keyword::All),
        ("tee", Keyword::Tee),
        ("public", Keyword::Public),
        ("if", Keyword::If),
        ("else", Keyword::Else),
        ("while", Keyword::While),
        ("for", Keyword::For),
        ("return", Keyword::Return),
        ("bool", Keyword::Bool),
        ("uint", Keyword::Uint),
        ("uint256", Keyword::Uint256),
        ("address", Keyword::Address),
        ("bin", Keyword::Bin),
        ("true", Keyword::True),
        ("false", Keyword::False),
    ];

    fn lookup(word: &str) -> Option<Keyword> {
        Self::ALL.iter().find(|(w, _)| *w == word).map(|(_, k)| *k)
    }

    pub fn as_str(self) -> &'static str {
        Self::ALL
            .iter()
            .find(|(_, k)| *k == self)
            .map(|(w, _)| *w)
            .expect("every keyword is listed")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tok {
    Kw(Keyword),
    Ident(String),
    Int(String),
    At,
    Bang,
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Dot,
    Question,
    Colon,
    Arrow,
    Assign,
    PlusAssign,
    MinusAssign,
    StarAssign,
    PlusPlus,
    MinusMinus,
    EqEq,
    NotEq,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    AndAnd,
    OrOr,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Tok::Kw(k) => return write!(f, "'{}'", k.as_str()),
            Tok::Ident(s) => return write!(f, "identifier '{s}'"),
            Tok::Int(s) => return write!(f, "integer {s}"),
            Tok::At => "@",
            Tok::Bang => "!",
            Tok::LParen => "(",
            Tok::RParen => ")",
            Tok::LBrace => "{",
            Tok::RBrace => "}",
            Tok::LBracket => "[",
            Tok::RBracket => "]",
            Tok::Semi => ";",
            Tok::Comma => ",",
            Tok::Dot => ".",
            Tok::Question => "?",
            Tok::Colon => ":",
            Tok::Arrow => "=>",
            Tok::Assign => "=",
            Tok::PlusAssign => "+=",
            Tok::MinusAssign => "-=",
            Tok::StarAssign => "*=",
            Tok::PlusPlus => "++",
            Tok::MinusMinus => "--",
            Tok::EqEq => "==",
            Tok::NotEq => "!=",
            Tok::Lt => "<",
            Tok::Le => "<=",
            Tok::Gt => ">",
            Tok::Ge => ">=",
            Tok::Plus => "+",
            Tok::Minus => "-",
            Tok::Star => "*",
            Tok::Slash => "/",
            Tok::Percent => "%",
            Tok::AndAnd => "&&",
            Tok::OrOr => "||",
        };
        write!(f, "'{s}'")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub tok: Tok,
    pub pos: Pos,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{pos}: unexpected character {ch:?}")]
pub struct LexError {
    pub pos: Pos,
    pub ch: char,
}

struct Cursor<'a> {
    chars: std::iter::Peekable<std::str::Chars<'a>>,
    line: u32,
    col: u32,
}

impl Cursor<'_> {
    fn peek(&mut self) -> Option<char> {
        self.chars.peek().copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.next()?;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(c) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn pos(&self) -> Pos {
        Pos {
            line: self.line,
            col: self.col,
        }
    }
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let mut cur = Cursor {
        chars: source.chars().peekable(),
        line: 1,
        col: 1,
    };
    let mut out = Vec::new();
    while let Some(c) = cur.peek() {
        let pos = cur.pos();
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if c == '/' {
            cur.bump();
            match cur.peek() {
                Some('/') => {
                    while let Some(c) = cur.peek() {
                        if c == '\n' {
                            break;
                        }
                        cur.bump();
                    }
                    continue;
                }
                Some('*') => {
                    cur.bump();
                    let mut prev = '\0';
                    loop {
                        match cur.bump() {
                            Some('/') if prev == '*' => break,
                            Some(c) => prev = c,
                            None => return Err(LexError { pos, ch: '/' }),
                        }
                    }
                    continue;
                }
                _ => {
                    out.push(Token { tok: Tok::Slash, pos });
                    continue;
                }
            }
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut word = String::new();
            while let Some(c) = cur.peek() {
                if c.is_ascii_alphanumeric() || c == '_' {
                    word.push(c);
                    cur.bump();
                } else {
                    break;
                }
            }
            let tok = match Keyword::lookup(&word) {
                Some(k) => Tok::Kw(k),
                None => Tok::Ident(word),
            };
            out.push(Token { tok, pos });
            continue;
        }
        if c.is_ascii_digit() {
            let mut digits = String::new();
            while let Some(c) = cur.peek() {
                if c.is_ascii_digit() {
                    digits.push(c);
                    cur.bump();
                } else {
                    break;
                }
            }
            let trimmed = digits.trim_start_matches('0');
            let norm = if trimmed.is_empty() { "0" } else { trimmed };
            out.push(Token {
                tok: Tok::Int(norm.to_string()),
                pos,
            });
            continue;
        }
        cur.bump();
        let tok = match c {
            '@' => Tok::At,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '{' => Tok::LBrace,
            '}' => Tok::RBrace,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ';' => Tok::Semi,
            ',' => Tok::Comma,
            '.' => Tok::Dot,
            '?' => Tok::Question,
            ':' => Tok::Colon,
            '%' => Tok::Percent,
            '!' => {
                if cur.eat('=') {
                    Tok::NotEq
                } else {
                    Tok::Bang
                }
            }
            '=' => {
                if cur.eat('=') {
                    Tok::EqEq
                } else if cur.eat('>') {
                    Tok::Arrow
                } else {
                    Tok::Assign
                }
            }
            '<' => {
                if cur.eat('=') {
                    Tok::Le
                } else {
                    Tok::Lt
                }
            }
            '>' => {
                if cur.eat('=') {
                    Tok::Ge
                } else {
                    Tok::Gt
                }
            }
            '+' => {
                if cur.eat('+') {
                    Tok::PlusPlus
                } else if cur.eat('=') {
                    Tok::PlusAssign
                } else {
                    Tok::Plus
                }
            }
            '-' => {
                if cur.eat('-') {
                    Tok::MinusMinus
                } else if cur.eat('=') {
                    Tok::MinusAssign
                } else {
                    Tok::Minus
                }
            }
            '*' => {
                if cur.eat('=') {
                    Tok::StarAssign
                } else {
                    Tok::Star
                }
            }
            '&' if cur.eat('&') => Tok::AndAnd,
            '|' if cur.eat('|') => Tok::OrOr,
            other => return Err(LexError { pos, ch: other }),
        };
        out.push(Token { tok, pos });
    }
    Ok(out)
}
