//! Recursive-descent parser for the expression language.
//!
//! Grammar, loosest binding first (`^` is right-associative and binds
//! tighter than unary minus):
//!
//! ```text
//! expr  := mulsum (('+' | '-') mulsum)*
//! mulsum:= unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | func '(' expr ')' | var | '(' expr ')'
//! ```
//!
//! Error positions are 0-based byte offsets into the source.

use super::{BinOp, Func, Node};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParseError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("variable x{index} at position {position} is out of range for dimension {dim}")]
    VariableOutOfRange {
        index: usize,
        dim: usize,
        position: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Eof,
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
        }
    }

    fn skip_ws(&mut self) {
        while matches!(self.src.get(self.pos), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    /// Next token and the byte offset where it starts (source length at eof).
    fn next(&mut self) -> Result<(Tok, usize), ParseError> {
        self.skip_ws();
        let start = self.pos;
        let Some(&c) = self.src.get(self.pos) else {
            return Ok((Tok::Eof, start));
        };
        let tok = match c {
            b'+' => Tok::Plus,
            b'-' => Tok::Minus,
            b'*' => Tok::Star,
            b'/' => Tok::Slash,
            b'^' => Tok::Caret,
            b'(' => Tok::LParen,
            b')' => Tok::RParen,
            b'0'..=b'9' | b'.' => return self.lex_number(start),
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => return self.lex_ident(start),
            other => {
                return Err(ParseError::Syntax {
                    position: start,
                    message: format!("unexpected character `{}`", other as char),
                })
            }
        };
        self.pos += 1;
        Ok((tok, start))
    }

    fn lex_number(&mut self, start: usize) -> Result<(Tok, usize), ParseError> {
        let digits = |l: &mut Self| {
            while matches!(l.src.get(l.pos), Some(b'0'..=b'9')) {
                l.pos += 1;
            }
        };
        digits(self);
        if matches!(self.src.get(self.pos), Some(b'.')) {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if matches!(self.src.get(self.pos), Some(b'0'..=b'9')) {
                digits(self);
            } else {
                // `2e` with no exponent digits: the `e` was not part of the number
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        let value: f64 = text.parse().map_err(|_| ParseError::Syntax {
            position: start,
            message: format!("malformed numeric literal `{text}`"),
        })?;
        if !value.is_finite() {
            return Err(ParseError::Syntax {
                position: start,
                message: format!("numeric literal `{text}` overflows f64"),
            });
        }
        // normalize -0.0 away so printed forms reparse to identical trees
        let value = if value == 0.0 { 0.0 } else { value };
        Ok((Tok::Num(value), start))
    }

    fn lex_ident(&mut self, start: usize) -> Result<(Tok, usize), ParseError> {
        while matches!(
            self.src.get(self.pos),
            Some(b'a'..=b'z' | b'A'..=b'Z' | b'0'..=b'9' | b'_')
        ) {
            self.pos += 1;
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii slice");
        Ok((Tok::Ident(text.to_owned()), start))
    }
}

pub(super) struct Parser<'a> {
    lexer: Lexer<'a>,
    current: Tok,
    current_pos: usize,
    dim: usize,
}

impl<'a> Parser<'a> {
    pub(super) fn parse(source: &'a str, dim: usize) -> Result<Node, ParseError> {
        let mut lexer = Lexer::new(source);
        let (current, current_pos) = lexer.next()?;
        let mut parser = Parser {
            lexer,
            current,
            current_pos,
            dim,
        };
        let node = parser.expr()?;
        if parser.current != Tok::Eof {
            return Err(parser.unexpected("end of input"));
        }
        Ok(node)
    }

    fn advance(&mut self) -> Result<(), ParseError> {
        let (tok, pos) = self.lexer.next()?;
        self.current = tok;
        self.current_pos = pos;
        Ok(())
    }

    fn unexpected(&self, wanted: &str) -> ParseError {
        let found = match &self.current {
            Tok::Eof => "end of input".to_owned(),
            Tok::Num(v) => format!("number `{v}`"),
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Plus => "`+`".to_owned(),
            Tok::Minus => "`-`".to_owned(),
            Tok::Star => "`*`".to_owned(),
            Tok::Slash => "`/`".to_owned(),
            Tok::Caret => "`^`".to_owned(),
            Tok::LParen => "`(`".to_owned(),
            Tok::RParen => "`)`".to_owned(),
        };
        ParseError::Syntax {
            position: self.current_pos,
            message: format!("expected {wanted}, found {found}"),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut node = self.term()?;
        loop {
            let op = match self.current {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(node),
            };
            self.advance()?;
            let rhs = self.term()?;
            node = Node::Binary(op, Box::new(node), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut node = self.unary()?;
        loop {
            let op = match self.current {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(node),
            };
            self.advance()?;
            let rhs = self.unary()?;
            node = Node::Binary(op, Box::new(node), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.current == Tok::Minus {
            self.advance()?;
            let inner = self.unary()?;
            return Ok(Node::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.current == Tok::Caret {
            self.advance()?;
            // exponent at unary level: `x^-2` works, `x^2^3` nests right
            let exponent = self.unary()?;
            return Ok(Node::Binary(
                BinOp::Pow,
                Box::new(base),
                Box::new(exponent),
            ));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        match self.current.clone() {
            Tok::Num(value) => {
                self.advance()?;
                Ok(Node::Constant(value))
            }
            Tok::LParen => {
                self.advance()?;
                let inner = self.expr()?;
                if self.current != Tok::RParen {
                    return Err(self.unexpected("`)`"));
                }
                self.advance()?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                let pos = self.current_pos;
                self.advance()?;
                self.ident(&name, pos)
            }
            _ => Err(self.unexpected("a number, variable, function call, or `(`")),
        }
    }

    fn ident(&mut self, name: &str, pos: usize) -> Result<Node, ParseError> {
        if let Some(index) = variable_index(name) {
            if index == 0 || index > self.dim {
                return Err(ParseError::VariableOutOfRange {
                    index,
                    dim: self.dim,
                    position: pos,
                });
            }
            return Ok(Node::Var(index - 1));
        }
        let func = match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
            _ => {
                return Err(ParseError::UnknownIdentifier {
                    name: name.to_owned(),
                    position: pos,
                })
            }
        };
        if self.current != Tok::LParen {
            return Err(self.unexpected(&format!("`(` after function `{name}`")));
        }
        self.advance()?;
        let arg = self.expr()?;
        if self.current != Tok::RParen {
            return Err(self.unexpected("`)`"));
        }
        self.advance()?;
        Ok(Node::Call(func, Box::new(arg)))
    }
}

/// `x<digits>` identifiers are state variables; anything else is not.
fn variable_index(name: &str) -> Option<usize> {
    let rest = name.strip_prefix('x')?;
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}
