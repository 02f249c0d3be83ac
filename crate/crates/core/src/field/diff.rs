//! Finite-difference derivatives that respect the smooth pieces of
//! piecewise-defined functions.

use super::{Candidate, VectorField};
use crate::expr::EvalError;

/// Relative step for central differences (about the cube root of machine epsilon).
pub const FD_STEP: f64 = 6.055e-6;

fn step(xj: f64) -> f64 {
    FD_STEP * xj.abs().max(1.0)
}

/// Jacobian by finite differences. Where a probe crosses onto a different
/// smooth piece (detected through the branch signature), the difference is
/// taken one-sided from the side that matches `x`.
pub fn fd_jacobian(field: &dyn VectorField, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
    let n = field.dim();
    let mut f0 = vec![0.0; n];
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    let mut s0 = Vec::new();
    let mut sp = Vec::new();
    let mut sm = Vec::new();
    field.eval(x, &mut f0)?;
    field.branch_signature(x, &mut s0)?;
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = step(x[j]);
        xp[j] = x[j] + h;
        field.eval(&xp, &mut fp)?;
        field.branch_signature(&xp, &mut sp)?;
        xp[j] = x[j] - h;
        field.eval(&xp, &mut fm)?;
        field.branch_signature(&xp, &mut sm)?;
        xp[j] = x[j];
        let plus_ok = sp == s0;
        let minus_ok = sm == s0;
        for i in 0..n {
            out[i * n + j] = if plus_ok == minus_ok {
                (fp[i] - fm[i]) / (2.0 * h)
            } else if plus_ok {
                (fp[i] - f0[i]) / h
            } else {
                (f0[i] - fm[i]) / h
            };
        }
    }
    Ok(())
}

/// Closed-form Jacobian when the field provides one, finite differences
/// otherwise. Returns whether the closed form was used.
pub fn jacobian(field: &dyn VectorField, x: &[f64], out: &mut [f64]) -> Result<bool, EvalError> {
    if field.jacobian(x, out)? {
        return Ok(true);
    }
    fd_jacobian(field, x, out)?;
    Ok(false)
}

/// Hessian of `V`, closed form if available, else central differences of
/// the gradient (symmetrized).
pub fn hessian(v: &dyn Candidate, x: &[f64], out: &mut [f64]) -> Result<bool, EvalError> {
    if v.hessian(x, out)? {
        return Ok(true);
    }
    let n = v.dim();
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    let mut xp = x.to_vec();
    for j in 0..n {
        let h = step(x[j]).sqrt() * 1e-1;
        xp[j] = x[j] + h;
        v.gradient(&xp, &mut gp)?;
        xp[j] = x[j] - h;
        v.gradient(&xp, &mut gm)?;
        xp[j] = x[j];
        for i in 0..n {
            out[i * n + j] = (gp[i] - gm[i]) / (2.0 * h);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = m;
            out[j * n + i] = m;
        }
    }
    Ok(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{expression_system, LinearField};

    #[test]
    fn linear_field_jacobian_exact_under_differences() {
        let f = LinearField::new(2, vec![-1.0, 2.0, -2.0, -1.0]).unwrap();
        let mut j = [0.0; 4];
        fd_jacobian(&f, &[0.3, -0.4], &mut j).unwrap();
        for (a, b) in j.iter().zip([-1.0, 2.0, -2.0, -1.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn kink_uses_matching_side() {
        // f = (min(x1, 1), 0): slope 1 left of the kink, 0 right of it.
        let s = expression_system(2, &["min(x1, 1)", "0"], "x1^2 + x2^2", None).unwrap();
        let mut j = [0.0; 4];
        fd_jacobian(s.field.as_ref(), &[1.0 - 1e-7, 0.0], &mut j).unwrap();
        assert!((j[0] - 1.0).abs() < 1e-6, "{j:?}");
        fd_jacobian(s.field.as_ref(), &[1.0 + 1e-7, 0.0], &mut j).unwrap();
        assert!(j[0].abs() < 1e-6, "{j:?}");
    }

    #[test]
    fn hessian_of_expression_candidate() {
        let s = expression_system(2, &["-x1", "-x2"], "x1^2 + 4*x2^2", None).unwrap();
        let mut h = [0.0; 4];
        hessian(s.candidate.as_ref(), &[0.2, 0.3], &mut h).unwrap();
        for (a, b) in h.iter().zip([2.0, 0.0, 0.0, 8.0]) {
            assert!((a - b).abs() < 1e-4, "{h:?}");
        }
    }
}
