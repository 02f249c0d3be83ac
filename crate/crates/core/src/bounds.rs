//! Region-wide constants of a system on an annular region: the speed
//! bounds, the Lipschitz constants of `f` and `V_x`, the gradient bound and
//! the largest value of `V'` on the region.
//!
//! Grid estimates are point estimates from refined sweeps, not verified
//! bounds. Lipschitz constants of `f` and `V_x` are taken as the largest
//! Jacobian / Hessian spectral norm over the convex sublevel set
//! `{V <= c2}`, which contains every chord between two points of the region.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::EvalError;
use crate::field::{hessian, jacobian, AnnularRegion, System};
use crate::grid::{auto_bounds, kink_samples, sweep_max, verify_bounds, Grid, GridError, GridSpec, Sample};
use crate::linalg::{dist, norm, spectral_norm};

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("no grid node falls in the region {c1} <= V <= {c2}; the grid is too coarse for this annulus")]
    EmptyRegion { c1: f64, c2: f64 },
    #[error("evaluation failed at {point:?}: {source}")]
    Eval {
        point: Vec<f64>,
        #[source]
        source: EvalError,
    },
    #[error("{what} failed at {failures} of {total} points (more than 0.1%)")]
    TooManyFailures {
        what: &'static str,
        failures: usize,
        total: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "analytic")]
    Analytic,
    #[serde(rename = "grid")]
    Grid,
    #[serde(rename = "grid+jacobian")]
    GridJacobian,
}

/// Whether closed-form constants supplied by a system take precedence over
/// grid estimates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantsMode {
    #[default]
    PreferAnalytic,
    GridOnly,
}

/// One constant with the method that produced it and the grid estimate,
/// which is always computed as a cross-check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub method: Method,
    pub grid_value: f64,
    pub grid_location: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: usize,
    pub refinement: usize,
    pub nodes_in_region: usize,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainConstants {
    pub l0_sup: Estimate,
    pub l0_inf: Estimate,
    pub l1: Estimate,
    pub m1: Estimate,
    pub m2: Estimate,
    pub b: Estimate,
    /// Largest difference quotient `|f(x)-f(y)|/|x-y|` over random pairs in
    /// the region; a lower bound for `l1`.
    pub l1_pair_lower: f64,
    pub grid: GridSummary,
}

/// The six constants as plain numbers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstantValues {
    pub l0_sup: f64,
    pub l0_inf: f64,
    pub l1: f64,
    pub m1: f64,
    pub m2: f64,
    pub b: f64,
}

impl DomainConstants {
    pub fn values(&self) -> ConstantValues {
        ConstantValues {
            l0_sup: self.l0_sup.value,
            l0_inf: self.l0_inf.value,
            l1: self.l1.value,
            m1: self.m1.value,
            m2: self.m2.value,
            b: self.b.value,
        }
    }
}

/// Grid and bounding box for a region, found automatically unless the `GridSpec`
/// pins the bounds (which are then checked to contain `{V <= c2}`).
pub fn region_grid(sys: &System, region: &AnnularRegion, spec: &GridSpec) -> Result<Grid, BoundsError> {
    let v = sys.candidate.as_ref();
    let bounds = match &spec.bounds {
        Some(b) => {
            verify_bounds(v, region.c2, b)?;
            b.clone()
        }
        None => auto_bounds(v, region.c2, spec.seed)?,
    };
    Ok(Grid::new(&bounds, spec.resolution_for(sys.dim()))?)
}

fn level(sys: &System, x: &[f64]) -> Option<f64> {
    sys.v(x).ok()
}

fn in_region(sys: &System, region: &AnnularRegion, x: &[f64]) -> bool {
    level(sys, x).is_some_and(|v| region.contains_level(v))
}

fn in_sublevel(sys: &System, region: &AnnularRegion, x: &[f64]) -> bool {
    level(sys, x).is_some_and(|v| v <= region.c2)
}

struct Sweeper<'a> {
    sys: &'a System,
    region: &'a AnnularRegion,
    spec: &'a GridSpec,
    grid: Grid,
    extra: Vec<Vec<f64>>,
}

impl Sweeper<'_> {
    fn run<F>(&self, what: &'static str, objective: F) -> Result<crate::grid::Extremum, BoundsError>
    where
        F: Fn(&[f64]) -> Sample + Sync,
    {
        let e = sweep_max(&self.grid, self.spec, &self.extra, objective);
        if e.inside == 0 {
            return Err(BoundsError::EmptyRegion {
                c1: self.region.c1,
                c2: self.region.c2,
            });
        }
        if e.failures * 1000 > e.inside {
            return Err(BoundsError::TooManyFailures {
                what,
                failures: e.failures,
                total: e.inside,
            });
        }
        Ok(e)
    }

    fn speed(&self, sign: f64) -> Result<crate::grid::Extremum, BoundsError> {
        self.run("field evaluation", |x| {
            if !in_region(self.sys, self.region, x) {
                return Sample::Outside;
            }
            match self.sys.f(x) {
                Ok(f) => Sample::Value(sign * norm(&f)),
                Err(_) => Sample::Failed,
            }
        })
    }
}

fn first_eval_failure(sys: &System, grid: &Grid, region: &AnnularRegion) -> Option<BoundsError> {
    let n = grid.dim();
    (0..grid.node_count())
        .into_par_iter()
        .find_first(|&i| {
            let mut p = vec![0.0; n];
            grid.node(i, &mut p);
            in_region(sys, region, &p) && sys.f(&p).is_err()
        })
        .map(|i| {
            let mut p = vec![0.0; n];
            grid.node(i, &mut p);
            let source = sys.f(&p).unwrap_err();
            BoundsError::Eval { point: p, source }
        })
}

fn sweeper<'a>(sys: &'a System, region: &'a AnnularRegion, spec: &'a GridSpec) -> Result<Sweeper<'a>, BoundsError> {
    Ok(Sweeper {
        sys,
        region,
        spec,
        grid: region_grid(sys, region, spec)?,
        extra: kink_samples(&sys.kinks),
    })
}

/// Grid estimates of the largest and smallest speed `|f|` on the region.
pub fn estimate_speed_bounds(
    sys: &System,
    region: &AnnularRegion,
    spec: &GridSpec,
) -> Result<(crate::grid::Extremum, crate::grid::Extremum), BoundsError> {
    let s = sweeper(sys, region, spec)?;
    let sup = s.speed(1.0)?;
    let mut inf = s.speed(-1.0)?;
    inf.value = -inf.value;
    inf.coarse_value = -inf.coarse_value;
    Ok((sup, inf))
}

/// Largest Jacobian spectral norm of `f` over `{V <= c2}`, plus the largest
/// difference quotient over random pairs in the region.
pub fn estimate_lipschitz_f(
    sys: &System,
    region: &AnnularRegion,
    spec: &GridSpec,
) -> Result<(crate::grid::Extremum, f64, bool), BoundsError> {
    let s = sweeper(sys, region, spec)?;
    lipschitz_f(&s)
}

fn lipschitz_f(s: &Sweeper<'_>) -> Result<(crate::grid::Extremum, f64, bool), BoundsError> {
    let n = s.sys.dim();
    let closed = {
        let mut j = vec![0.0; n * n];
        s.sys.field.jacobian(&vec![0.0; n], &mut j).unwrap_or(false)
    };
    let e = s.run("Jacobian evaluation", |x| {
        if !in_sublevel(s.sys, s.region, x) {
            return Sample::Outside;
        }
        let mut j = vec![0.0; n * n];
        match jacobian(s.sys.field.as_ref(), x, &mut j) {
            Ok(_) if j.iter().all(|v| v.is_finite()) => Sample::Value(spectral_norm(&j, n)),
            _ => Sample::Failed,
        }
    })?;
    let pairs = pair_quotient(s, &e.point);
    Ok((e, pairs, closed))
}

fn pair_quotient(s: &Sweeper<'_>, hot: &[f64]) -> f64 {
    let total = s.spec.pair_samples;
    if total == 0 {
        return 0.0;
    }
    let bounds: Vec<(f64, f64)> = s.grid.lo.iter().copied().zip(s.grid.hi.iter().copied()).collect();
    let global = crate::grid::sample_in_region(&bounds, total, s.spec.seed ^ 0xa11, |x| {
        in_region(s.sys, s.region, x)
    });
    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = global
        .chunks_exact(2)
        .map(|c| (c[0].clone(), c[1].clone()))
        .collect();
    let radius = 4.0 * s.grid.steps().iter().copied().fold(0.0, f64::max);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s.spec.seed ^ 0xb22);
    let mut attempts = 0;
    let want = total / 2;
    let mut local = 0;
    while local < want && attempts < 50 * want && !hot.is_empty() {
        attempts += 1;
        let x: Vec<f64> = hot.iter().map(|c| c + rng.gen_range(-radius..radius)).collect();
        let y: Vec<f64> = x.iter().map(|c| c + rng.gen_range(-0.25 * radius..0.25 * radius)).collect();
        if in_region(s.sys, s.region, &x) && in_region(s.sys, s.region, &y) && dist(&x, &y) > 0.0 {
            pairs.push((x, y));
            local += 1;
        }
    }
    pairs
        .par_iter()
        .map(|(x, y)| match (s.sys.f(x), s.sys.f(y)) {
            (Ok(fx), Ok(fy)) => dist(&fx, &fy) / dist(x, y),
            _ => 0.0,
        })
        .reduce(|| 0.0, f64::max)
}

/// Largest `|V_x|` on the region and largest Hessian norm of `V` on `{V <= c2}`.
pub fn estimate_gradient_bounds(
    sys: &System,
    region: &AnnularRegion,
    spec: &GridSpec,
) -> Result<(crate::grid::Extremum, crate::grid::Extremum), BoundsError> {
    let s = sweeper(sys, region, spec)?;
    gradient_bounds(&s)
}

fn gradient_bounds(s: &Sweeper<'_>) -> Result<(crate::grid::Extremum, crate::grid::Extremum), BoundsError> {
    let n = s.sys.dim();
    let m1 = s.run("gradient evaluation", |x| {
        if !in_region(s.sys, s.region, x) {
            return Sample::Outside;
        }
        let mut g = vec![0.0; n];
        match s.sys.candidate.gradient(x, &mut g) {
            Ok(()) => Sample::Value(norm(&g)),
            Err(_) => Sample::Failed,
        }
    })?;
    let m2 = s.run("Hessian evaluation", |x| {
        if !in_sublevel(s.sys, s.region, x) {
            return Sample::Outside;
        }
        let mut h = vec![0.0; n * n];
        match hessian(s.sys.candidate.as_ref(), x, &mut h) {
            Ok(_) if h.iter().all(|v| v.is_finite()) => Sample::Value(spectral_norm(&h, n)),
            _ => Sample::Failed,
        }
    })?;
    Ok((m1, m2))
}

/// Largest `V' = V_x . f` on the region.
pub fn estimate_b(sys: &System, region: &AnnularRegion, spec: &GridSpec) -> Result<crate::grid::Extremum, BoundsError> {
    let s = sweeper(sys, region, spec)?;
    max_vdot(&s)
}

fn max_vdot(s: &Sweeper<'_>) -> Result<crate::grid::Extremum, BoundsError> {
    s.run("V' evaluation", |x| {
        if !in_region(s.sys, s.region, x) {
            return Sample::Outside;
        }
        match s.sys.vdot(x) {
            Ok(v) => Sample::Value(v),
            Err(_) => Sample::Failed,
        }
    })
}

fn pick(known: Option<f64>, grid: &crate::grid::Extremum, grid_method: Method, mode: ConstantsMode) -> Estimate {
    let (value, method) = match (known, mode) {
        (Some(v), ConstantsMode::PreferAnalytic) => (v, Method::Analytic),
        _ => (grid.value, grid_method),
    };
    Estimate {
        value,
        method,
        grid_value: grid.value,
        grid_location: grid.point.clone(),
    }
}

/// Estimates all six constants on the region.
pub fn estimate_constants(
    sys: &System,
    region: &AnnularRegion,
    spec: &GridSpec,
    mode: ConstantsMode,
) -> Result<DomainConstants, BoundsError> {
    let s = sweeper(sys, region, spec)?;
    if let Some(e) = first_eval_failure(sys, &s.grid, region) {
        return Err(e);
    }
    let known = sys.known_constants(region);
    let l0_sup = s.speed(1.0)?;
    let mut l0_inf = s.speed(-1.0)?;
    l0_inf.value = -l0_inf.value;
    l0_inf.coarse_value = -l0_inf.coarse_value;
    let (l1, l1_pairs, _) = lipschitz_f(&s)?;
    let (m1, m2) = gradient_bounds(&s)?;
    let b = max_vdot(&s)?;
    let evaluations = [&l0_sup, &l0_inf, &l1, &m1, &m2, &b].iter().map(|e| e.evaluated).sum();
    Ok(DomainConstants {
        l0_sup: pick(known.l0_sup, &l0_sup, Method::Grid, mode),
        l0_inf: pick(known.l0_inf, &l0_inf, Method::Grid, mode),
        l1: pick(known.l1, &l1, Method::GridJacobian, mode),
        m1: pick(known.m1, &m1, Method::Grid, mode),
        m2: pick(known.m2, &m2, Method::GridJacobian, mode),
        b: pick(known.b, &b, Method::Grid, mode),
        l1_pair_lower: l1_pairs,
        grid: GridSummary {
            bounds: s.grid.lo.iter().copied().zip(s.grid.hi.iter().copied()).collect(),
            resolution: s.grid.res,
            refinement: spec.refinement,
            nodes_in_region: l0_sup.inside,
            evaluations,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{builtin_system, expression_system, LinearField, NormSquared};
    use std::sync::Arc;

    fn d() -> AnnularRegion {
        AnnularRegion::annulus(0.49, 1.0).unwrap()
    }

    fn small() -> GridSpec {
        GridSpec {
            resolution: Some(201),
            pair_samples: 2000,
            ..GridSpec::default()
        }
    }

    #[test]
    fn constant_field_speed() {
        let s = expression_system(2, &["3", "4"], "x1^2 + x2^2", None).unwrap();
        let (sup, inf) = estimate_speed_bounds(&s, &d(), &small()).unwrap();
        assert_eq!(sup.value, 5.0);
        assert_eq!(inf.value, 5.0);
    }

    #[test]
    fn linear_spiral_grid_values() {
        let s = builtin_system("linear_spiral", &Default::default()).unwrap();
        let c = estimate_constants(&s, &d(), &small(), ConstantsMode::GridOnly).unwrap();
        let sq5 = 5f64.sqrt();
        assert!((c.l0_sup.value - sq5).abs() < 1e-3 * sq5, "{c:?}");
        assert!((c.l0_inf.value - 0.7 * sq5).abs() < 1e-3 * sq5, "{c:?}");
        assert!((c.l1.value - sq5).abs() < 1e-9);
        assert!((c.m2.value - 2.0).abs() < 1e-12);
        assert!((c.b.value + 0.98).abs() < 2e-3, "{}", c.b.value);
        assert!(c.l1_pair_lower <= c.l1.value * (1.0 + 1e-9));
        assert!(c.l1_pair_lower > 0.95 * sq5);
    }

    #[test]
    fn rotation_lipschitz() {
        let s = System::new(
            "rotation",
            Arc::new(LinearField::new(2, vec![0.0, 1.0, -1.0, 0.0]).unwrap()),
            Arc::new(NormSquared { n: 2 }),
        )
        .unwrap();
        let (l1, pairs, closed) = estimate_lipschitz_f(&s, &d(), &small()).unwrap();
        assert!(closed);
        assert!((l1.value - 1.0).abs() < 1e-12);
        assert!(pairs <= 1.0 + 1e-9);
    }

    #[test]
    fn gradient_bounds_of_quadratics() {
        let s = builtin_system("linear_spiral", &Default::default()).unwrap();
        let r4 = AnnularRegion::annulus(1.0, 4.0).unwrap();
        let (m1, m2) = estimate_gradient_bounds(&s, &r4, &small()).unwrap();
        assert!((m1.value - 4.0).abs() < 1e-3);
        assert!((m2.value - 2.0).abs() < 1e-12);
        let e = expression_system(2, &["-x1", "-x2"], "x1^2 + 4*x2^2", None).unwrap();
        let (_, m2) = estimate_gradient_bounds(&e, &AnnularRegion::annulus(0.5, 1.0).unwrap(), &small()).unwrap();
        assert!((m2.value - 8.0).abs() < 1e-3, "{}", m2.value);
    }

    #[test]
    fn zero_field_has_zero_b() {
        let s = expression_system(2, &["0", "0"], "x1^2 + x2^2", None).unwrap();
        let b = estimate_b(&s, &d(), &small()).unwrap();
        assert_eq!(b.value, 0.0);
    }

    #[test]
    fn empty_region_is_reported() {
        let s = builtin_system("linear_spiral", &Default::default()).unwrap();
        let thin = AnnularRegion::annulus(0.999_999, 1.0).unwrap();
        let spec = GridSpec {
            resolution: Some(5),
            ..small()
        };
        assert!(matches!(
            estimate_b(&s, &thin, &spec),
            Err(BoundsError::EmptyRegion { .. })
        ));
    }

    #[test]
    fn failing_field_is_reported() {
        let s = expression_system(2, &["ln(x1)", "0"], "x1^2 + x2^2", None).unwrap();
        assert!(matches!(
            estimate_constants(&s, &d(), &small(), ConstantsMode::GridOnly),
            Err(BoundsError::Eval { .. })
        ));
    }
}
