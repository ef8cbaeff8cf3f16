use std::collections::BTreeMap;

use super::{BinOp, EvalError, Expr, Func};

fn domain(msg: String) -> EvalError {
    EvalError::Domain(msg)
}

pub(super) fn apply_func(func: Func, x: f64) -> Result<f64, EvalError> {
    let y = match func {
        Func::Sin => x.sin(),
        Func::Cos => x.cos(),
        Func::Tan => x.tan(),
        Func::Abs => x.abs(),
        Func::Exp => x.exp(),
        Func::Sqrt => {
            if x < 0.0 {
                return Err(domain(format!("sqrt of negative value {x}")));
            }
            x.sqrt()
        }
        Func::Ln => {
            if x <= 0.0 {
                return Err(domain(format!("ln of non-positive value {x}")));
            }
            x.ln()
        }
    };
    if y.is_finite() {
        Ok(y)
    } else {
        Err(domain(format!("{}({x}) is not finite", func.name())))
    }
}

pub(super) fn apply_binary(op: BinOp, a: f64, b: f64) -> Result<f64, EvalError> {
    let y = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err(domain(format!("division of {a} by zero")));
            }
            a / b
        }
        BinOp::Pow => a.powf(b),
    };
    if y.is_finite() {
        Ok(y)
    } else {
        Err(domain(format!("{a} {} {b} is not finite", op.symbol())))
    }
}

/// Evaluates `ast` at momentum `k` with the given parameter bindings.
pub fn evaluate_expr(
    ast: &Expr,
    k: f64,
    params: &BTreeMap<String, f64>,
) -> Result<f64, EvalError> {
    match ast {
        Expr::Num(v) => Ok(*v),
        Expr::Sym(s) if s == "k" => Ok(k),
        Expr::Sym(s) => params
            .get(s)
            .copied()
            .ok_or_else(|| EvalError::UnboundSymbol(s.clone())),
        Expr::Neg(e) => Ok(-evaluate_expr(e, k, params)?),
        Expr::Binary(op, a, b) => apply_binary(
            *op,
            evaluate_expr(a, k, params)?,
            evaluate_expr(b, k, params)?,
        ),
        Expr::Call(f, e) => apply_func(*f, evaluate_expr(e, k, params)?),
    }
}
