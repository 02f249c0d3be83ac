//! Vector fields, candidate functions and the regions they are analysed on.
//!
//! Systems come either from the built-in registry ([`builtin_system`]) or
//! from expression strings ([`expression_system`]). Everything here is
//! immutable once built and safe to evaluate from many threads.

mod builtin;
mod diff;
mod expression;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, ParseError};

pub use builtin::{builtin_system, BuiltinParams, LinearField, NormSquared, SpiralField};
pub use diff::{fd_jacobian, hessian, jacobian, FD_STEP};
pub use expression::{expression_system, ExprCandidate, ExprField};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("unknown built-in system `{0}` (expected paper_example or linear_spiral)")]
    UnknownSystem(String),
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("expression `{which}`: {source}")]
    Parse {
        which: String,
        #[source]
        source: ParseError,
    },
    #[error("{0}")]
    Shape(String),
    #[error("invalid region: {0}")]
    Region(String),
}

/// The right-hand side `f` of an autonomous system `x' = f(x)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError>;

    /// Writes the row-major Jacobian into `out` and returns `true`, or
    /// returns `false` when no closed form is available.
    fn jacobian(&self, _x: &[f64], _out: &mut [f64]) -> Result<bool, EvalError> {
        Ok(false)
    }

    /// Identifies the smooth piece containing `x` (empty for smooth fields).
    fn branch_signature(&self, _x: &[f64], sig: &mut Vec<u8>) -> Result<(), EvalError> {
        sig.clear();
        Ok(())
    }
}

/// A candidate function `V` with its gradient.
pub trait Candidate: Send + Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64, EvalError>;

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError>;

    /// Row-major Hessian if known in closed form.
    fn hessian(&self, _x: &[f64], _out: &mut [f64]) -> Result<bool, EvalError> {
        Ok(false)
    }

    /// A `k0 > 0` with `V(x) >= k0 |x|^2` everywhere, if one is known.
    fn quadratic_lower_k0(&self) -> Option<f64> {
        None
    }

    /// Radius of the smallest origin-centered ball containing `{V <= level}`,
    /// when it has a closed form.
    fn level_radius(&self, _level: f64) -> Option<f64> {
        None
    }
}

/// Time derivative of `V` along `f`, i.e. `V_x(x) . f(x)`.
pub fn vdot(field: &dyn VectorField, v: &dyn Candidate, x: &[f64]) -> Result<f64, EvalError> {
    let n = x.len();
    let mut fx = vec![0.0; n];
    let mut gx = vec![0.0; n];
    field.eval(x, &mut fx)?;
    v.gradient(x, &mut gx)?;
    Ok(crate::linalg::dot(&fx, &gx))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Annulus,
    Band,
}

/// The sublevel annulus `{c1 <= V <= c2}`; a band is the case `c2 = 2 c1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnularRegion {
    pub c1: f64,
    pub c2: f64,
    pub kind: RegionKind,
}

impl AnnularRegion {
    pub fn annulus(c1: f64, c2: f64) -> Result<AnnularRegion, FieldError> {
        if !(c1.is_finite() && c2.is_finite()) || c1 <= 0.0 || c2 <= c1 {
            return Err(FieldError::Region(format!(
                "need 0 < c1 < c2, got c1 = {c1}, c2 = {c2}"
            )));
        }
        Ok(AnnularRegion {
            c1,
            c2,
            kind: RegionKind::Annulus,
        })
    }

    pub fn band(c: f64) -> Result<AnnularRegion, FieldError> {
        let mut r = AnnularRegion::annulus(c, 2.0 * c)?;
        r.kind = RegionKind::Band;
        Ok(r)
    }

    pub fn contains_level(&self, v: f64) -> bool {
        self.c1 <= v && v <= self.c2
    }
}

/// A sphere on which a built-in field is not differentiable. Grid sweeps
/// add extra samples at its center and across its surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KinkSphere {
    pub center: Vec<f64>,
    pub radius: f64,
}

/// Closed-form values of region-wide constants, where a system knows them.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KnownConstants {
    pub l0_sup: Option<f64>,
    pub l0_inf: Option<f64>,
    pub l1: Option<f64>,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    pub b: Option<f64>,
}

pub trait AnalyticBounds: Send + Sync {
    fn constants(&self, region: &AnnularRegion) -> KnownConstants;
}

/// A vector field together with its candidate function and metadata.
#[derive(Clone)]
pub struct System {
    pub name: String,
    pub description: String,
    pub field: Arc<dyn VectorField>,
    pub candidate: Arc<dyn Candidate>,
    pub analytic: Option<Arc<dyn AnalyticBounds>>,
    pub kinks: Vec<KinkSphere>,
    /// Smallest geometric feature of the field, if known.
    pub feature_size: Option<f64>,
}

impl fmt::Debug for System {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("System")
            .field("name", &self.name)
            .field("description", &self.description)
            .field("dim", &self.dim())
            .field("kinks", &self.kinks)
            .field("feature_size", &self.feature_size)
            .finish()
    }
}

impl System {
    pub fn new(
        name: impl Into<String>,
        field: Arc<dyn VectorField>,
        candidate: Arc<dyn Candidate>,
    ) -> Result<System, FieldError> {
        if field.dim() != candidate.dim() || field.dim() == 0 {
            return Err(FieldError::Shape(format!(
                "field has dimension {} but candidate has {}",
                field.dim(),
                candidate.dim()
            )));
        }
        let name = name.into();
        Ok(System {
            description: name.clone(),
            name,
            field,
            candidate,
            analytic: None,
            kinks: Vec::new(),
            feature_size: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.field.dim()
    }

    pub fn f(&self, x: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut out = vec![0.0; self.dim()];
        self.field.eval(x, &mut out)?;
        Ok(out)
    }

    pub fn v(&self, x: &[f64]) -> Result<f64, EvalError> {
        self.candidate.value(x)
    }

    pub fn vdot(&self, x: &[f64]) -> Result<f64, EvalError> {
        vdot(self.field.as_ref(), self.candidate.as_ref(), x)
    }

    pub fn known_constants(&self, region: &AnnularRegion) -> KnownConstants {
        self.analytic
            .as_ref()
            .map(|a| a.constants(region))
            .unwrap_or_default()
    }
}

/// Positive-definiteness and `k0` spot check of `V` on random points of a box.
/// Returns a description of the first failure.
pub fn spot_check_candidate(
    v: &dyn Candidate,
    bounds: &[(f64, f64)],
    samples: usize,
    seed: u64,
) -> Result<(), String> {
    use rand::{Rng, SeedableRng};
    let n = v.dim();
    let origin = vec![0.0; n];
    let v0 = v.value(&origin).map_err(|e| e.to_string())?;
    if v0.abs() > 1e-12 {
        return Err(format!("V(0) = {v0}, expected 0"));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; n];
    for _ in 0..samples {
        for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *xi = rng.gen_range(lo..=hi);
        }
        let r2: f64 = x.iter().map(|a| a * a).sum();
        if r2 == 0.0 {
            continue;
        }
        let val = v.value(&x).map_err(|e| e.to_string())?;
        if val <= 0.0 {
            return Err(format!("V({x:?}) = {val} is not positive"));
        }
        if let Some(k0) = v.quadratic_lower_k0() {
            if val < k0 * r2 * (1.0 - 1e-12) {
                return Err(format!("V({x:?}) = {val} < k0 |x|^2 = {}", k0 * r2));
            }
        }
    }
    Ok(())
}
