//! Uniform grids over a bounding box and refined extremum sweeps.
//!
//! A sweep evaluates an objective at every grid node inside a region, then
//! repeatedly re-samples a finer local lattice around the best nodes. All
//! reductions break ties by sample order, so results do not depend on the
//! number of worker threads.

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{Candidate, KinkSphere};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid resolution must be at least 3, got {0}")]
    Resolution(usize),
    #[error("grid bounds have {found} axes but the system has dimension {expected}")]
    BoundsShape { expected: usize, found: usize },
    #[error("grid box does not contain the sublevel set V <= {level}: V = {value} at boundary point {point:?}")]
    BoxTooSmall {
        level: f64,
        value: f64,
        point: Vec<f64>,
    },
    #[error("sublevel set V <= {0} appears unbounded along a sampled ray")]
    Unbounded(f64),
    #[error("evaluation of V failed during box search: {0}")]
    Eval(String),
}

/// Grid settings. `resolution` is the number of nodes per axis; when unset,
/// 801 is used in the plane and fewer in higher dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub bounds: Option<Vec<(f64, f64)>>,
    pub resolution: Option<usize>,
    pub refinement: usize,
    pub refine_factor: usize,
    pub refine_fraction: f64,
    pub pair_samples: usize,
    pub seed: u64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            bounds: None,
            resolution: None,
            refinement: 2,
            refine_factor: 8,
            refine_fraction: 0.01,
            pair_samples: 100_000,
            seed: 0,
        }
    }
}

impl GridSpec {
    pub fn with_resolution(resolution: usize) -> GridSpec {
        GridSpec {
            resolution: Some(resolution),
            ..GridSpec::default()
        }
    }

    pub fn resolution_for(&self, n: usize) -> usize {
        self.resolution.unwrap_or(match n {
            1 => 10_001,
            2 => 801,
            3 => 101,
            _ => 21,
        })
    }
}

/// An axis-aligned lattice with `res` nodes per axis, endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: usize,
}

impl Grid {
    pub fn new(bounds: &[(f64, f64)], res: usize) -> Result<Grid, GridError> {
        if res < 3 {
            return Err(GridError::Resolution(res));
        }
        Ok(Grid {
            lo: bounds.iter().map(|b| b.0).collect(),
            hi: bounds.iter().map(|b| b.1).collect(),
            res,
        })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn step(&self, axis: usize) -> f64 {
        (self.hi[axis] - self.lo[axis]) / (self.res - 1) as f64
    }

    pub fn steps(&self) -> Vec<f64> {
        (0..self.dim()).map(|a| self.step(a)).collect()
    }

    pub fn node_count(&self) -> usize {
        self.res.pow(self.dim() as u32)
    }

    pub fn cell_volume(&self) -> f64 {
        self.steps().iter().product()
    }

    /// Coordinates of the node with flat index `idx` (axis 0 varies fastest).
    pub fn node(&self, mut idx: usize, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            let i = idx % self.res;
            idx /= self.res;
            *o = self.coord(a, i as f64);
        }
    }

    /// Coordinate along `axis` at fractional lattice position `i`.
    pub fn coord(&self, axis: usize, i: f64) -> f64 {
        let t = i / (self.res - 1) as f64;
        self.lo[axis] * (1.0 - t) + self.hi[axis] * t
    }
}

/// Finds a box containing `{V <= level}` by searching along rays from the
/// origin, padding by 5% and verifying the faces.
pub fn auto_bounds(
    v: &dyn Candidate,
    level: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>, GridError> {
    let n = v.dim();
    let dirs = ray_directions(n, seed);
    let mut lo = vec![0.0f64; n];
    let mut hi = vec![0.0f64; n];
    let mut p = vec![0.0; n];
    let eval = |p: &[f64]| v.value(p).map_err(|e| GridError::Eval(e.to_string()));
    for u in &dirs {
        let mut r_in = 0.0;
        let mut r_out = 1e-3;
        loop {
            for (pi, ui) in p.iter_mut().zip(u) {
                *pi = r_out * ui;
            }
            if eval(&p)? > level {
                break;
            }
            r_in = r_out;
            r_out *= 2.0;
            if r_out > 1e8 {
                return Err(GridError::Unbounded(level));
            }
        }
        for _ in 0..60 {
            let mid = 0.5 * (r_in + r_out);
            for (pi, ui) in p.iter_mut().zip(u) {
                *pi = mid * ui;
            }
            if eval(&p)? > level {
                r_out = mid;
            } else {
                r_in = mid;
            }
        }
        for a in 0..n {
            lo[a] = lo[a].min(r_out * u[a]);
            hi[a] = hi[a].max(r_out * u[a]);
        }
    }
    let mut bounds: Vec<(f64, f64)> = (0..n)
        .map(|a| {
            let pad = 0.05 * (hi[a] - lo[a]);
            (lo[a] - pad, hi[a] + pad)
        })
        .collect();
    for _ in 0..10 {
        match verify_bounds(v, level, &bounds) {
            Ok(()) => return Ok(bounds),
            Err(GridError::BoxTooSmall { .. }) => {
                for b in bounds.iter_mut() {
                    let (c, w) = (0.5 * (b.0 + b.1), 0.75 * (b.1 - b.0));
                    *b = (c - w, c + w);
                }
            }
            Err(e) => return Err(e),
        }
    }
    verify_bounds(v, level, &bounds).map(|_| bounds)
}

fn ray_directions(n: usize, seed: u64) -> Vec<Vec<f64>> {
    if n == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    if n == 2 {
        return (0..720)
            .map(|k| {
                let t = k as f64 * std::f64::consts::PI / 360.0;
                vec![t.cos(), t.sin()]
            })
            .collect();
    }
    let mut dirs = Vec::new();
    for a in 0..n {
        for s in [1.0, -1.0] {
            let mut u = vec![0.0; n];
            u[a] = s;
            dirs.push(u);
        }
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    while dirs.len() < 2 * n + 4000 {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = crate::linalg::norm(&u);
        if r > 1e-3 && r <= 1.0 {
            dirs.push(u.iter().map(|x| x / r).collect());
        }
    }
    dirs
}

/// Checks `V > level` on a lattice over every face of the box.
pub fn verify_bounds(v: &dyn Candidate, level: f64, bounds: &[(f64, f64)]) -> Result<(), GridError> {
    let n = bounds.len();
    if n != v.dim() {
        return Err(GridError::BoundsShape {
            expected: v.dim(),
            found: n,
        });
    }
    let per_axis: usize = match n {
        1 => 1,
        2 => 401,
        3 => 61,
        _ => 9,
    };
    let mut p = vec![0.0; n];
    for fixed in 0..n {
        for side in [bounds[fixed].0, bounds[fixed].1] {
            let free = n - 1;
            let count = per_axis.pow(free as u32);
            for mut k in 0..count {
                let mut ax = 0;
                for (a, pa) in p.iter_mut().enumerate() {
                    if a == fixed {
                        *pa = side;
                        continue;
                    }
                    let i = k % per_axis;
                    k /= per_axis;
                    let t = if per_axis > 1 {
                        i as f64 / (per_axis - 1) as f64
                    } else {
                        0.5
                    };
                    *pa = bounds[a].0 * (1.0 - t) + bounds[a].1 * t;
                    ax += 1;
                }
                debug_assert_eq!(ax, free);
                let val = v.value(&p).map_err(|e| GridError::Eval(e.to_string()))?;
                if val <= level {
                    return Err(GridError::BoxTooSmall {
                        level,
                        value: val,
                        point: p.clone(),
                    });
                }
            }
        }
    }
    Ok(())
}

/// Extra sample points around kink spheres: the center, both sides of the
/// surface along axis (and in the plane, diagonal) directions, and a few
/// interior radii.
pub fn kink_samples(kinks: &[KinkSphere]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for k in kinks {
        let n = k.center.len();
        let mut dirs: Vec<Vec<f64>> = Vec::new();
        if n == 2 {
            for j in 0..16 {
                let t = j as f64 * std::f64::consts::PI / 8.0;
                dirs.push(vec![t.cos(), t.sin()]);
            }
        } else {
            for a in 0..n {
                for s in [1.0, -1.0] {
                    let mut u = vec![0.0; n];
                    u[a] = s;
                    dirs.push(u);
                }
            }
        }
        out.push(k.center.clone());
        for u in &dirs {
            for t in [0.25, 0.5, 0.75, 1.0 - 1e-9, 1.0, 1.0 + 1e-9] {
                out.push(
                    k.center
                        .iter()
                        .zip(u)
                        .map(|(c, ui)| c + t * k.radius * ui)
                        .collect(),
                );
            }
        }
    }
    out
}

/// Outcome of evaluating an objective at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sample {
    Outside,
    Failed,
    Value(f64),
}

/// Result of a maximizing sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Extremum {
    /// Best value found, `-inf` if no point was inside the region.
    pub value: f64,
    /// Best value over grid nodes and extra points only (before refinement).
    pub coarse_value: f64,
    pub point: Vec<f64>,
    pub inside: usize,
    pub failures: usize,
    pub evaluated: usize,
}

fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Maximizes `objective` over grid nodes plus `extra` points, then refines
/// around the best `refine_fraction` of in-region nodes.
pub fn sweep_max<F>(grid: &Grid, spec: &GridSpec, extra: &[Vec<f64>], objective: F) -> Extremum
where
    F: Fn(&[f64]) -> Sample + Sync,
{
    let n = grid.dim();
    let total = grid.node_count();
    let steps = grid.steps();

    let coarse: Vec<(usize, Sample)> = (0..total + extra.len())
        .into_par_iter()
        .map_init(
            || vec![0.0; n],
            |p, i| {
                if i < total {
                    grid.node(i, p);
                    (i, objective(p))
                } else {
                    (i, objective(&extra[i - total]))
                }
            },
        )
        .collect();

    let point_of = |i: usize| -> Vec<f64> {
        if i < total {
            let mut p = vec![0.0; n];
            grid.node(i, &mut p);
            p
        } else {
            extra[i - total].clone()
        }
    };

    let mut failures = 0;
    let mut pool: Vec<(f64, usize)> = Vec::new();
    for &(i, s) in &coarse {
        match s {
            Sample::Value(v) => pool.push((v, i)),
            Sample::Failed => failures += 1,
            Sample::Outside => {}
        }
    }
    let inside = pool.len() + failures;
    let mut evaluated = coarse.len();
    if pool.is_empty() {
        return Extremum {
            value: f64::NEG_INFINITY,
            coarse_value: f64::NEG_INFINITY,
            point: Vec::new(),
            inside,
            failures,
            evaluated,
        };
    }
    let keep = ((spec.refine_fraction * pool.len() as f64).ceil() as usize).clamp(1, pool.len());
    pool.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    pool.truncate(keep);
    let mut best_value = pool[0].0;
    let mut best_point = point_of(pool[0].1);
    let coarse_value = best_value;
    let mut centers: Vec<Vec<f64>> = pool.iter().map(|&(_, i)| point_of(i)).collect();

    let factor = spec.refine_factor.max(2);
    let per_axis = factor + 1;
    let local = per_axis.pow(n as u32);
    let mut half: Vec<f64> = steps.iter().map(|s| 0.5 * s).collect();
    for _pass in 0..spec.refinement {
        let spacing: Vec<f64> = half.iter().map(|h| 2.0 * h / factor as f64).collect();
        let results: Vec<(f64, usize, Vec<f64>, usize)> = centers
            .par_iter()
            .enumerate()
            .map(|(ci, c)| {
                let mut p = vec![0.0; n];
                let mut best: Option<(f64, usize, Vec<f64>)> = None;
                let mut fails = 0;
                for k in 0..local {
                    let mut kk = k;
                    for a in 0..n {
                        let j = kk % per_axis;
                        kk /= per_axis;
                        p[a] = c[a] - half[a] + j as f64 * spacing[a];
                    }
                    match objective(&p) {
                        Sample::Value(v) => {
                            let ord = ci * local + k;
                            if best.as_ref().map_or(true, |b| better((v, ord), (b.0, b.1))) {
                                best = Some((v, ord, p.clone()));
                            }
                        }
                        Sample::Failed => fails += 1,
                        Sample::Outside => {}
                    }
                }
                match best {
                    Some((v, ord, q)) => (v, ord, q, fails),
                    None => (f64::NEG_INFINITY, usize::MAX, c.clone(), fails),
                }
            })
            .collect();
        evaluated += centers.len() * local;
        let mut next: Vec<(f64, usize, Vec<f64>)> = Vec::with_capacity(results.len());
        for (v, ord, q, fails) in results {
            failures += fails;
            if v.is_finite() || v == f64::INFINITY {
                next.push((v, ord, q));
            }
        }
        next.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        if let Some(top) = next.first() {
            if top.0 > best_value {
                best_value = top.0;
                best_point = top.2.clone();
            }
        }
        centers = next.into_iter().map(|t| t.2).collect();
        for h in half.iter_mut() {
            *h /= factor as f64;
        }
    }
    Extremum {
        value: best_value,
        coarse_value,
        point: best_point,
        inside,
        failures,
        evaluated,
    }
}

/// Draws `count` points uniformly from the box that satisfy `accept`.
/// Gives up after `50 * count` attempts and returns what it has.
pub fn sample_in_region<F>(
    bounds: &[(f64, f64)],
    count: usize,
    seed: u64,
    accept: F,
) -> Vec<Vec<f64>>
where
    F: Fn(&[f64]) -> bool,
{
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut tries = 0usize;
    while out.len() < count && tries < 50 * count.max(1) {
        tries += 1;
        let p: Vec<f64> = bounds.iter().map(|&(lo, hi)| rng.gen_range(lo..=hi)).collect();
        if accept(&p) {
            out.push(p);
        }
    }
    out
}
