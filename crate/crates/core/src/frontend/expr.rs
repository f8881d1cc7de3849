//! Expression language for system definitions.
//!
//! ```text
//! expr   := term (('+'|'-') term)*
//! term   := factor (('*'|'/') factor)*
//! factor := unary ('^' factor)?
//! unary  := '-' unary | atom
//! atom   := number | 't' | ident '[' integer ']' | ident
//!         | func '(' expr (',' expr)? ')' | '(' expr ')'
//! ```

use std::collections::BTreeMap;
use std::fmt;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Abs,
    Sin,
    Cos,
    Exp,
    Tanh,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Time,
    State(Var, usize),
    Param(String),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
}

fn unary_fn(name: &str) -> Option<UnaryOp> {
    Some(match name {
        "abs" => UnaryOp::Abs,
        "sin" => UnaryOp::Sin,
        "cos" => UnaryOp::Cos,
        "exp" => UnaryOp::Exp,
        "tanh" => UnaryOp::Tanh,
        "sqrt" => UnaryOp::Sqrt,
        _ => return None,
    })
}

fn binary_fn(name: &str) -> Option<BinOp> {
    match name {
        "min" => Some(BinOp::Min),
        "max" => Some(BinOp::Max),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64, bool),
    Ident(String),
    Sym(char),
    Eof,
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    column: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let err = |line, column, message: String| Error::Parse { line, column, message };
    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let start = (i, col);
        if c.is_ascii_digit() || c == '.' {
            let mut integer = true;
            while i < chars.len() && chars[i].is_ascii_digit() {
                i += 1;
            }
            if i < chars.len() && chars[i] == '.' {
                integer = false;
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    integer = false;
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start.0..i].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| err(line, start.1, format!("malformed number '{text}'")))?;
            col += i - start.0;
            out.push(Token {
                tok: Tok::Num(v, integer),
                line,
                column: start.1,
            });
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            col += i - start.0;
            out.push(Token {
                tok: Tok::Ident(chars[start.0..i].iter().collect()),
                line,
                column: start.1,
            });
            continue;
        }
        if "+-*/^()[],".contains(c) {
            out.push(Token {
                tok: Tok::Sym(c),
                line,
                column: col,
            });
            i += 1;
            col += 1;
            continue;
        }
        return Err(err(line, col, format!("unexpected character '{c}'")));
    }
    out.push(Token {
        tok: Tok::Eof,
        line,
        column: col,
    });
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Token {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn error<T>(&self, tok: &Token, message: impl Into<String>) -> Result<T> {
        Err(Error::Parse {
            line: tok.line,
            column: tok.column,
            message: message.into(),
        })
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek().tok == Tok::Sym(c) {
            self.next();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        if self.eat(c) {
            return Ok(());
        }
        let t = self.peek().clone();
        match t.tok {
            Tok::Eof => self.error(&t, format!("expected '{c}' before end of input")),
            _ => self.error(&t, format!("expected '{c}'")),
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.eat('+') {
                BinOp::Add
            } else if self.eat('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(self.term()?));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.factor()?;
        loop {
            let op = if self.eat('*') {
                BinOp::Mul
            } else if self.eat('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(self.factor()?));
        }
    }

    fn factor(&mut self) -> Result<Expr> {
        let base = self.unary()?;
        if self.eat('^') {
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(self.factor()?)));
        }
        Ok(base)
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(Expr::Unary(UnaryOp::Neg, Box::new(self.unary()?)));
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr> {
        let t = self.next();
        match t.tok.clone() {
            Tok::Num(v, _) => Ok(Expr::Num(v)),
            Tok::Sym('(') => {
                let e = self.expr()?;
                self.expect(')')?;
                Ok(e)
            }
            Tok::Ident(name) => self.ident(&t, name),
            Tok::Eof => self.error(&t, "unexpected end of input"),
            Tok::Sym(c) => self.error(&t, format!("unexpected '{c}'")),
        }
    }

    fn ident(&mut self, t: &Token, name: String) -> Result<Expr> {
        if self.peek().tok == Tok::Sym('[') {
            let var = match name.as_str() {
                "x" => Var::X,
                "y" => Var::Y,
                _ => return self.error(t, format!("unknown identifier '{name}'")),
            };
            self.next();
            let it = self.next();
            let index = match it.tok {
                Tok::Num(v, true) => v as usize,
                _ => return self.error(&it, "expected an integer index"),
            };
            self.expect(']')?;
            return Ok(Expr::State(var, index));
        }
        if let Some(op) = unary_fn(&name) {
            let args = self.args(t, &name)?;
            return match <[Expr; 1]>::try_from(args) {
                Ok([a]) => Ok(Expr::Unary(op, Box::new(a))),
                Err(v) => self.error(t, format!("{name} takes 1 argument, got {}", v.len())),
            };
        }
        if let Some(op) = binary_fn(&name) {
            let args = self.args(t, &name)?;
            return match <[Expr; 2]>::try_from(args) {
                Ok([a, b]) => Ok(Expr::Binary(op, Box::new(a), Box::new(b))),
                Err(v) => self.error(t, format!("{name} takes 2 arguments, got {}", v.len())),
            };
        }
        match name.as_str() {
            "t" => Ok(Expr::Time),
            "x" | "y" => self.error(t, format!("'{name}' must be indexed")),
            _ => Ok(Expr::Param(name)),
        }
    }

    fn args(&mut self, t: &Token, name: &str) -> Result<Vec<Expr>> {
        if !self.eat('(') {
            return self.error(t, format!("function '{name}' needs arguments"));
        }
        let mut args = vec![self.expr()?];
        if self.eat(',') {
            args.push(self.expr()?);
        }
        self.expect(')')?;
        Ok(args)
    }
}

/// Parses one expression; errors carry 1-based line and column.
pub fn parse_expression(src: &str) -> Result<Expr> {
    if src.trim().is_empty() {
        return Err(Error::Parse {
            line: 1,
            column: 1,
            message: "empty expression".into(),
        });
    }
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let e = p.expr()?;
    let t = p.peek().clone();
    if t.tok != Tok::Eof {
        return p.error(&t, "unexpected trailing input");
    }
    Ok(e)
}

/// Variables visible to an expression.
#[derive(Debug, Clone, Copy)]
pub struct Scope {
    pub x_dim: usize,
    pub y_dim: usize,
    pub time: bool,
}

impl Expr {
    /// Substitutes parameters and checks indices and time use.
    pub fn bind(&self, params: &BTreeMap<String, f64>, scope: Scope) -> Result<Expr> {
        let fail = |m: String| Err(Error::Eval(m));
        Ok(match self {
            Expr::Num(v) => Expr::Num(*v),
            Expr::Time if !scope.time => return fail("'t' is not allowed here".into()),
            Expr::Time => Expr::Time,
            Expr::State(v, i) => {
                let (dim, name) = match v {
                    Var::X => (scope.x_dim, "x"),
                    Var::Y => (scope.y_dim, "y"),
                };
                if *i >= dim {
                    return fail(format!("{name}[{i}] out of range for dimension {dim}"));
                }
                Expr::State(*v, *i)
            }
            Expr::Param(name) => match params.get(name) {
                Some(v) => Expr::Num(*v),
                None => return fail(format!("unknown identifier '{name}'")),
            },
            Expr::Unary(op, a) => Expr::Unary(*op, Box::new(a.bind(params, scope)?)),
            Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(a.bind(params, scope)?), Box::new(b.bind(params, scope)?)),
        })
    }

    pub fn uses_time(&self) -> bool {
        match self {
            Expr::Time => true,
            Expr::Unary(_, a) => a.uses_time(),
            Expr::Binary(_, a, b) => a.uses_time() || b.uses_time(),
            _ => false,
        }
    }

    /// Evaluates at time `t` with states `x`, `y`.
    pub fn eval(&self, t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Time => t,
            Expr::State(Var::X, i) => *x.get(*i).ok_or_else(|| Error::Eval(format!("x[{i}] out of range")))?,
            Expr::State(Var::Y, i) => *y.get(*i).ok_or_else(|| Error::Eval(format!("y[{i}] out of range")))?,
            Expr::Param(name) => return Err(Error::Eval(format!("unbound parameter '{name}'"))),
            Expr::Unary(op, a) => {
                let a = a.eval(t, x, y)?;
                match op {
                    UnaryOp::Neg => -a,
                    UnaryOp::Abs => a.abs(),
                    UnaryOp::Sin => a.sin(),
                    UnaryOp::Cos => a.cos(),
                    UnaryOp::Exp => a.exp(),
                    UnaryOp::Tanh => a.tanh(),
                    UnaryOp::Sqrt if a < 0.0 => return Err(Error::Eval(format!("sqrt of negative value {a}"))),
                    UnaryOp::Sqrt => a.sqrt(),
                }
            }
            Expr::Binary(op, a, b) => {
                let (a, b) = (a.eval(t, x, y)?, b.eval(t, x, y)?);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div if b == 0.0 => return Err(Error::Eval("division by zero".into())),
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                    BinOp::Min => a.min(b),
                    BinOp::Max => a.max(b),
                }
            }
        })
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesised form that reparses to the same tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Time => write!(f, "t"),
            Expr::State(Var::X, i) => write!(f, "x[{i}]"),
            Expr::State(Var::Y, i) => write!(f, "y[{i}]"),
            Expr::Param(name) => write!(f, "{name}"),
            Expr::Unary(UnaryOp::Neg, a) => write!(f, "(-{a})"),
            Expr::Unary(op, a) => {
                let name = match op {
                    UnaryOp::Abs => "abs",
                    UnaryOp::Sin => "sin",
                    UnaryOp::Cos => "cos",
                    UnaryOp::Exp => "exp",
                    UnaryOp::Tanh => "tanh",
                    UnaryOp::Sqrt => "sqrt",
                    UnaryOp::Neg => unreachable!(),
                };
                write!(f, "{name}({a})")
            }
            Expr::Binary(BinOp::Min, a, b) => write!(f, "min({a}, {b})"),
            Expr::Binary(BinOp::Max, a, b) => write!(f, "max({a}, {b})"),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                    BinOp::Min | BinOp::Max => unreachable!(),
                };
                write!(f, "({a} {sym} {b})")
            }
        }
    }
}
