use std::sync::Arc;

use super::{Candidate, FieldError, System, VectorField, FD_STEP};
use crate::expr::{parse_expression, EvalError, Program};

/// A field given by one expression per component.
#[derive(Debug, Clone)]
pub struct ExprField {
    components: Vec<Program>,
}

impl VectorField for ExprField {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, p) in out.iter_mut().zip(&self.components) {
            *o = p.eval(x)?;
        }
        Ok(())
    }

    fn branch_signature(&self, x: &[f64], sig: &mut Vec<u8>) -> Result<(), EvalError> {
        sig.clear();
        for p in self.components.iter().filter(|p| p.has_kinks()) {
            p.eval_with_branches(x, sig)?;
        }
        Ok(())
    }
}

/// A candidate function given by an expression; the gradient is taken by
/// finite differences.
#[derive(Debug, Clone)]
pub struct ExprCandidate {
    program: Program,
    k0: Option<f64>,
}

impl Candidate for ExprCandidate {
    fn dim(&self) -> usize {
        self.program.dimension()
    }

    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.program.eval(x)
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let n = self.dim();
        let kinks = self.program.has_kinks();
        let mut s0 = Vec::new();
        let mut sp = Vec::new();
        let mut sm = Vec::new();
        let v0 = if kinks {
            self.program.eval_with_branches(x, &mut s0)?
        } else {
            0.0
        };
        let mut xp = x.to_vec();
        for j in 0..n {
            let h = FD_STEP * x[j].abs().max(1.0);
            xp[j] = x[j] + h;
            sp.clear();
            let vp = self.program.eval_with_branches(&xp, &mut sp)?;
            xp[j] = x[j] - h;
            sm.clear();
            let vm = self.program.eval_with_branches(&xp, &mut sm)?;
            xp[j] = x[j];
            let (plus_ok, minus_ok) = (sp == s0 || !kinks, sm == s0 || !kinks);
            out[j] = if plus_ok == minus_ok {
                (vp - vm) / (2.0 * h)
            } else if plus_ok {
                (vp - v0) / h
            } else {
                (v0 - vm) / h
            };
        }
        Ok(())
    }

    fn quadratic_lower_k0(&self) -> Option<f64> {
        self.k0
    }
}

/// Builds a system from expression strings over `x1 .. x{dimension}`.
pub fn expression_system<S: AsRef<str>>(
    dimension: usize,
    f: &[S],
    v: &str,
    k0: Option<f64>,
) -> Result<System, FieldError> {
    if dimension == 0 || f.len() != dimension {
        return Err(FieldError::Shape(format!(
            "dimension {dimension} needs {dimension} field components, got {}",
            f.len()
        )));
    }
    if let Some(k) = k0 {
        if !(k > 0.0 && k.is_finite()) {
            return Err(FieldError::InvalidParameter {
                name: "k0".into(),
                reason: format!("must be positive, got {k}"),
            });
        }
    }
    let components = f
        .iter()
        .enumerate()
        .map(|(i, s)| {
            parse_expression(s.as_ref(), dimension)
                .map(|e| Program::compile(&e, dimension))
                .map_err(|source| FieldError::Parse {
                    which: format!("f[{i}]"),
                    source,
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let v_expr = parse_expression(v, dimension).map_err(|source| FieldError::Parse {
        which: "V".into(),
        source,
    })?;
    let candidate = ExprCandidate {
        program: Program::compile(&v_expr, dimension),
        k0,
    };
    let description = format!(
        "f = [{}], V = {}",
        f.iter().map(|s| s.as_ref()).collect::<Vec<_>>().join("; "),
        v
    );
    let mut sys = System::new("expression", Arc::new(ExprField { components }), Arc::new(candidate))?;
    sys.description = description;
    Ok(sys)
}
