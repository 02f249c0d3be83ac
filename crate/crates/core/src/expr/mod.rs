//! A small arithmetic expression language for user-supplied vector fields
//! and candidate functions.
//!
//! Grammar (whitespace insignificant, identifiers case-sensitive):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := factor (('*' | '/') factor)*
//! factor  := unary ('^' factor)?
//! unary   := '-'? primary
//! primary := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! `^` is right-associative and binds looser than unary minus, so `-x1^2`
//! is `(-x1)^2`. Both `-` and the Unicode minus sign `−` are accepted.
//! Variables are `x1 .. xn`; functions are `min`, `max` (two or more
//! arguments), `abs`, `sqrt`, `sin`, `cos`, `exp`, `ln`; named constants
//! are `pi` and `e`.

mod parser;
mod program;

use std::fmt;

pub use parser::{parse_expression, ParseError};
pub use program::{EvalError, Program};

/// Binary operators.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Built-in functions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Min,
    Max,
    Abs,
    Sqrt,
    Sin,
    Cos,
    Exp,
    Ln,
}

impl Func {
    pub fn name(self) -> &'static str {
        match self {
            Func::Min => "min",
            Func::Max => "max",
            Func::Abs => "abs",
            Func::Sqrt => "sqrt",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
            Func::Ln => "ln",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "min" => Func::Min,
            "max" => Func::Max,
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            _ => return None,
        })
    }

    /// Variadic functions accept two or more arguments, the rest exactly one.
    pub fn is_variadic(self) -> bool {
        matches!(self, Func::Min | Func::Max)
    }
}

/// Named constants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedConst {
    Pi,
    E,
}

impl NamedConst {
    pub fn value(self) -> f64 {
        match self {
            NamedConst::Pi => std::f64::consts::PI,
            NamedConst::E => std::f64::consts::E,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            NamedConst::Pi => "pi",
            NamedConst::E => "e",
        }
    }
}

/// Expression tree. Variables are stored zero-based (`x1` is `Var(0)`).
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Named(NamedConst),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    /// Largest variable index used, one-based (0 if the expression is constant).
    pub fn max_variable(&self) -> usize {
        match self {
            Expr::Var(i) => i + 1,
            Expr::Const(_) | Expr::Named(_) => 0,
            Expr::Neg(e) => e.max_variable(),
            Expr::Binary(_, l, r) => l.max_variable().max(r.max_variable()),
            Expr::Call(_, args) => args.iter().map(Expr::max_variable).max().unwrap_or(0),
        }
    }

    /// Whether the tree contains a `min`, `max` or `abs` node.
    pub fn has_kinks(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Var(_) | Expr::Named(_) => false,
            Expr::Neg(e) => e.has_kinks(),
            Expr::Binary(_, l, r) => l.has_kinks() || r.has_kinks(),
            Expr::Call(f, args) => {
                matches!(f, Func::Min | Func::Max | Func::Abs) || args.iter().any(Expr::has_kinks)
            }
        }
    }
}

/// Fully parenthesized printing. Re-parsing the output yields the same tree
/// as long as every constant is finite and non-negative, which holds for
/// all trees produced by the parser.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(i) => write!(f, "x{}", i + 1),
            Expr::Named(n) => f.write_str(n.name()),
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Binary(op, l, r) => write!(f, "({l} {} {r})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}
