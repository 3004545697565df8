//! Integer mini-language used as the code tool.
//!
//! ```text
//! program := stmt (("\n" | ";") stmt)*
//! stmt    := IDENT "=" expr | "emit" expr
//! expr    := term (("+" | "-" | "−") term)*
//! term    := factor (("*" | "/" | "%") factor)*
//! factor  := INT | IDENT | "(" expr ")" | "-" factor
//! ```
//!
//! Values are `i64`. `/` truncates toward zero and `%` takes the sign of the
//! dividend. Any overflow is reported as `error: overflow`. A program is
//! parsed in full before it runs; at run time statements execute in order and
//! bindings made before a failing statement are kept.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SandboxState {
    pub bindings: BTreeMap<String, i64>,
    /// Values emitted by the most recent execution.
    pub emitted: Vec<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SandboxError {
    Parse { line: usize, message: String },
    Undefined(String),
    DivisionByZero,
    Overflow,
}

impl fmt::Display for SandboxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SandboxError::Parse { line, message } => {
                write!(f, "error: parse error on line {line}: {message}")
            }
            SandboxError::Undefined(name) => write!(f, "error: undefined identifier: {name}"),
            SandboxError::DivisionByZero => f.write_str("error: division by zero"),
            SandboxError::Overflow => f.write_str("error: overflow"),
        }
    }
}

impl std::error::Error for SandboxError {}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Int(i64),
    Ident(String),
    Emit,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    LParen,
    RParen,
    Sep,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Int(v) => write!(f, "`{v}`"),
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Emit => f.write_str("`emit`"),
            Tok::Assign => f.write_str("`=`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Percent => f.write_str("`%`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Sep => f.write_str("end of statement"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>, SandboxError> {
    let mut out = Vec::new();
    let mut line = 1;
    let mut chars = src.char_indices().peekable();
    while let Some((start, c)) = chars.next() {
        let tok = match c {
            ' ' | '\t' | '\r' => continue,
            '\n' => {
                out.push((Tok::Sep, line));
                line += 1;
                continue;
            }
            ';' => Tok::Sep,
            '=' => Tok::Assign,
            '+' => Tok::Plus,
            '-' | '−' => Tok::Minus,
            '*' => Tok::Star,
            '/' => Tok::Slash,
            '%' => Tok::Percent,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '0'..='9' => {
                let mut end = start + 1;
                while let Some(&(i, d)) = chars.peek() {
                    if !d.is_ascii_digit() {
                        break;
                    }
                    end = i + 1;
                    chars.next();
                }
                // digits only, so the sole failure is overflow
                Tok::Int(src[start..end].parse().map_err(|_| SandboxError::Overflow)?)
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut end = start + 1;
                while let Some(&(i, d)) = chars.peek() {
                    if !(d.is_ascii_alphanumeric() || d == '_') {
                        break;
                    }
                    end = i + 1;
                    chars.next();
                }
                match &src[start..end] {
                    "emit" => Tok::Emit,
                    word => Tok::Ident(word.to_string()),
                }
            }
            other => {
                return Err(SandboxError::Parse {
                    line,
                    message: format!("unexpected character `{other}`"),
                })
            }
        };
        out.push((tok, line));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
enum Expr {
    Int(i64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
}

#[derive(Debug, Clone, PartialEq)]
enum Stmt {
    Assign(String, Expr),
    Emit(Expr),
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    last_line: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn line(&self) -> usize {
        self.toks.get(self.pos).map_or(self.last_line, |(_, l)| *l)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(t, _)| t.clone());
        self.pos += 1;
        t
    }

    fn fail<T>(&self, message: String) -> Result<T, SandboxError> {
        Err(SandboxError::Parse {
            line: self.line(),
            message,
        })
    }

    fn unexpected<T>(&self, wanted: &str) -> Result<T, SandboxError> {
        match self.peek() {
            Some(t) => self.fail(format!("expected {wanted}, found {t}")),
            None => self.fail(format!("expected {wanted}, found end of input")),
        }
    }

    fn program(&mut self) -> Result<Vec<Stmt>, SandboxError> {
        let mut stmts = vec![self.stmt()?];
        while self.peek().is_some() {
            if self.peek() != Some(&Tok::Sep) {
                return self.unexpected("end of statement");
            }
            self.bump();
            stmts.push(self.stmt()?);
        }
        Ok(stmts)
    }

    fn stmt(&mut self) -> Result<Stmt, SandboxError> {
        match self.peek() {
            Some(Tok::Emit) => {
                self.bump();
                Ok(Stmt::Emit(self.expr()?))
            }
            Some(Tok::Ident(_)) => {
                let Some(Tok::Ident(name)) = self.bump() else {
                    unreachable!()
                };
                if self.peek() != Some(&Tok::Assign) {
                    return self.unexpected("`=`");
                }
                self.bump();
                Ok(Stmt::Assign(name, self.expr()?))
            }
            _ => self.unexpected("a statement"),
        }
    }

    fn expr(&mut self) -> Result<Expr, SandboxError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr, SandboxError> {
        let mut lhs = self.factor()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                Some(Tok::Percent) => BinOp::Rem,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(self.factor()?));
        }
    }

    fn factor(&mut self) -> Result<Expr, SandboxError> {
        match self.peek() {
            Some(Tok::Int(_)) | Some(Tok::Ident(_)) => match self.bump() {
                Some(Tok::Int(v)) => Ok(Expr::Int(v)),
                Some(Tok::Ident(name)) => Ok(Expr::Var(name)),
                _ => unreachable!(),
            },
            Some(Tok::Minus) => {
                self.bump();
                Ok(Expr::Neg(Box::new(self.factor()?)))
            }
            Some(Tok::LParen) => {
                self.bump();
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.unexpected("`)`");
                }
                self.bump();
                Ok(inner)
            }
            _ => self.unexpected("an operand"),
        }
    }
}

fn parse(src: &str) -> Result<Vec<Stmt>, SandboxError> {
    let toks = lex(src)?;
    let last_line = 1 + src.matches('\n').count();
    Parser {
        toks,
        pos: 0,
        last_line,
    }
    .program()
}

fn eval(expr: &Expr, env: &BTreeMap<String, i64>) -> Result<i64, SandboxError> {
    match expr {
        Expr::Int(v) => Ok(*v),
        Expr::Var(name) => env
            .get(name)
            .copied()
            .ok_or_else(|| SandboxError::Undefined(name.clone())),
        Expr::Neg(inner) => eval(inner, env)?
            .checked_neg()
            .ok_or(SandboxError::Overflow),
        Expr::Bin(op, lhs, rhs) => {
            let a = eval(lhs, env)?;
            let b = eval(rhs, env)?;
            let r = match op {
                BinOp::Add => a.checked_add(b),
                BinOp::Sub => a.checked_sub(b),
                BinOp::Mul => a.checked_mul(b),
                BinOp::Div | BinOp::Rem if b == 0 => return Err(SandboxError::DivisionByZero),
                BinOp::Div => a.checked_div(b),
                BinOp::Rem => a.checked_rem(b),
            };
            r.ok_or(SandboxError::Overflow)
        }
    }
}

/// Runs `program` against `state`. `state.emitted` is reset first and holds
/// whatever was emitted before completion or failure.
pub fn sandbox_execute(state: &mut SandboxState, program: &str) -> Result<Vec<i64>, SandboxError> {
    state.emitted.clear();
    let stmts = parse(program)?;
    for stmt in &stmts {
        match stmt {
            Stmt::Assign(name, expr) => {
                let v = eval(expr, &state.bindings)?;
                state.bindings.insert(name.clone(), v);
            }
            Stmt::Emit(expr) => {
                let v = eval(expr, &state.bindings)?;
                state.emitted.push(v);
            }
        }
    }
    Ok(state.emitted.clone())
}

/// Evaluates a single expression with no bindings.
pub fn evaluate_expression(src: &str) -> Result<i64, SandboxError> {
    let mut state = SandboxState::default();
    let out = sandbox_execute(&mut state, &format!("emit {src}"))?;
    Ok(out[0])
}
