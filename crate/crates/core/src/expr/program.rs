use smallvec::SmallVec;
use thiserror::Error;

use super::{BinOp, Expr, Func};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("`{op}` is undefined at argument {value}")]
    Domain { op: &'static str, value: f64 },
    #[error("`{op}` produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("expected {expected} coordinates, got {found}")]
    Dimension { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Var(usize),
    Neg,
    Bin(BinOp),
    Call(Func, usize),
}

/// An expression compiled to postfix form for fast repeated evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    dimension: usize,
    kinks: bool,
}

fn finite(op: &'static str, v: f64) -> Result<f64, EvalError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(EvalError::NonFinite { op })
    }
}

/// Applies a binary operator with the domain rules shared by the compiled
/// evaluator and the tree walker used in tests.
pub(crate) fn apply_binary(op: BinOp, l: f64, r: f64) -> Result<f64, EvalError> {
    match op {
        BinOp::Add => finite("+", l + r),
        BinOp::Sub => finite("-", l - r),
        BinOp::Mul => finite("*", l * r),
        BinOp::Div => finite("/", l / r),
        BinOp::Pow => {
            if l < 0.0 && r.fract() != 0.0 {
                return Err(EvalError::Domain { op: "^", value: l });
            }
            finite("^", l.powf(r))
        }
    }
}

/// Applies a one-argument function.
pub(crate) fn apply_unary(func: Func, v: f64) -> Result<f64, EvalError> {
    match func {
        Func::Abs => Ok(v.abs()),
        Func::Sqrt => {
            if v < 0.0 {
                return Err(EvalError::Domain { op: "sqrt", value: v });
            }
            Ok(v.sqrt())
        }
        Func::Sin => Ok(v.sin()),
        Func::Cos => Ok(v.cos()),
        Func::Exp => finite("exp", v.exp()),
        Func::Ln => {
            if v <= 0.0 {
                return Err(EvalError::Domain { op: "ln", value: v });
            }
            Ok(v.ln())
        }
        Func::Min | Func::Max => unreachable!("variadic function applied as unary"),
    }
}

/// Folds `min`/`max` over the arguments. Ties keep the earlier argument.
/// Returns the value and the index of the selected argument.
pub(crate) fn apply_variadic(func: Func, args: &[f64]) -> (f64, usize) {
    let mut best = args[0];
    let mut idx = 0;
    for (i, &v) in args.iter().enumerate().skip(1) {
        let better = match func {
            Func::Min => v < best,
            _ => v > best,
        };
        if better {
            best = v;
            idx = i;
        }
    }
    (best, idx)
}

impl Program {
    pub fn compile(expr: &Expr, dimension: usize) -> Program {
        let mut ops = Vec::new();
        emit(expr, &mut ops);
        Program {
            ops,
            dimension,
            kinks: expr.has_kinks(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    /// Whether the expression contains `min`, `max` or `abs`.
    pub fn has_kinks(&self) -> bool {
        self.kinks
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.run(x, None)
    }

    /// Evaluates and appends one byte per `min`/`max`/`abs` node recording
    /// which branch was taken. Two points with equal signatures lie on the
    /// same smooth piece of the expression.
    pub fn eval_with_branches(&self, x: &[f64], branches: &mut Vec<u8>) -> Result<f64, EvalError> {
        self.run(x, Some(branches))
    }

    fn run(&self, x: &[f64], mut branches: Option<&mut Vec<u8>>) -> Result<f64, EvalError> {
        if x.len() < self.dimension {
            return Err(EvalError::Dimension {
                expected: self.dimension,
                found: x.len(),
            });
        }
        let mut stack: SmallVec<[f64; 32]> = SmallVec::new();
        for op in &self.ops {
            match *op {
                Op::Const(c) => stack.push(c),
                Op::Var(i) => stack.push(x[i]),
                Op::Neg => {
                    let v = stack.pop().expect("stack underflow");
                    stack.push(-v);
                }
                Op::Bin(b) => {
                    let r = stack.pop().expect("stack underflow");
                    let l = stack.pop().expect("stack underflow");
                    stack.push(apply_binary(b, l, r)?);
                }
                Op::Call(func, argc) => {
                    let base = stack.len() - argc;
                    let v = if func.is_variadic() {
                        let (v, idx) = apply_variadic(func, &stack[base..]);
                        if let Some(br) = branches.as_deref_mut() {
                            br.push(idx as u8);
                        }
                        v
                    } else {
                        let a = stack[base];
                        if func == Func::Abs {
                            if let Some(br) = branches.as_deref_mut() {
                                br.push(u8::from(a >= 0.0));
                            }
                        }
                        apply_unary(func, a)?
                    };
                    stack.truncate(base);
                    stack.push(v);
                }
            }
        }
        Ok(stack.pop().expect("empty program"))
    }
}

fn emit(expr: &Expr, ops: &mut Vec<Op>) {
    match expr {
        Expr::Const(c) => ops.push(Op::Const(*c)),
        Expr::Named(n) => ops.push(Op::Const(n.value())),
        Expr::Var(i) => ops.push(Op::Var(*i)),
        Expr::Neg(e) => {
            emit(e, ops);
            ops.push(Op::Neg);
        }
        Expr::Binary(op, l, r) => {
            emit(l, ops);
            emit(r, ops);
            ops.push(Op::Bin(*op));
        }
        Expr::Call(f, args) => {
            for a in args {
                emit(a, ops);
            }
            ops.push(Op::Call(*f, args.len()));
        }
    }
}
