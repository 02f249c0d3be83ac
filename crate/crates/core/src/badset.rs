//! The bad sets `{x in D : V'(x) >= -eta a V(x)}` on a cell grid: cell
//! marking, connected components and bracketing volume estimates.
//!
//! Cells are classified by their center. Points where `V' + eta a V` is zero
//! up to rounding (relative guard [`EQUALITY_GUARD`]) are treated as good,
//! so a system that decays at exactly the rate `a` has an empty bad set
//! instead of one that flickers with rounding noise.

use std::collections::VecDeque;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{region_grid, BoundsError};
use crate::expr::EvalError;
use crate::field::{AnnularRegion, System};
use crate::grid::{Grid, GridSpec};

/// Relative tolerance under which `V' + eta a V` counts as zero.
pub const EQUALITY_GUARD: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BadSetError {
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error("evaluation failed at {point:?}: {source}")]
    Eval {
        point: Vec<f64>,
        #[source]
        source: EvalError,
    },
    #[error("bad-set component near {center:?} is a single cell of width {cell_width:e}; increase the grid resolution")]
    UnderResolved { center: Vec<f64>, cell_width: f64 },
    #[error("rate must be positive, got {0}")]
    Rate(f64),
    #[error("csv output failed: {0}")]
    Csv(String),
}

/// Exact membership test `V'(x) >= -eta a V(x)` (no region check).
pub fn classify_point(sys: &System, x: &[f64], a: f64, eta: f64) -> Result<bool, EvalError> {
    Ok(sys.vdot(x)? >= -eta * a * sys.v(x)?)
}

/// `V' + eta a V` and its rounding scale at `x`.
pub(crate) fn margin(sys: &System, x: &[f64], a: f64, eta: f64) -> Result<(f64, f64), EvalError> {
    let v = sys.v(x)?;
    let vd = sys.vdot(x)?;
    Ok((vd + eta * a * v, vd.abs() + eta * a * v.abs()))
}

/// Guarded membership used for grids and trajectories: strictly positive
/// beyond rounding noise.
pub fn is_bad(sys: &System, x: &[f64], a: f64, eta: f64) -> Result<bool, EvalError> {
    let (m, scale) = margin(sys, x, a, eta)?;
    Ok(m > EQUALITY_GUARD * scale)
}

/// Guarded membership in `Omega_eta`: in the region and bad.
pub fn in_omega(sys: &System, region: &AnnularRegion, x: &[f64], a: f64, eta: f64) -> Result<bool, EvalError> {
    Ok(region.contains_level(sys.v(x)?) && is_bad(sys, x, a, eta)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Flat indices of the marked cells, ascending.
    pub cells: Vec<usize>,
    pub inner_volume: f64,
    pub outer_volume: f64,
    pub centroid: Vec<f64>,
    pub bbox: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BadSetAnalysis {
    pub rate_a: f64,
    pub eta: f64,
    pub region: AnnularRegion,
    /// Node grid; cells sit between neighbouring nodes.
    pub grid: Grid,
    /// Marked cells, ascending flat index.
    pub cells: Vec<usize>,
    /// Components, largest outer volume first (ties by first cell).
    pub components: Vec<Component>,
    /// Outer volume of the largest component, 0 if there is none.
    pub epsilon: f64,
    /// Fraction of region cells whose center sits on the decay rate up to
    /// rounding.
    pub near_equality_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentSummary {
    pub cells: usize,
    pub inner_volume: f64,
    pub outer_volume: f64,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BadSetSummary {
    pub rate_a: f64,
    pub eta: f64,
    pub marked_cells: usize,
    pub cell_widths: Vec<f64>,
    pub components: Vec<ComponentSummary>,
    pub epsilon: f64,
    pub near_equality_fraction: f64,
}

impl BadSetAnalysis {
    pub fn cells_per_axis(&self) -> usize {
        self.grid.res - 1
    }

    pub fn cell_center(&self, mut idx: usize) -> Vec<f64> {
        let m = self.cells_per_axis();
        (0..self.grid.dim())
            .map(|a| {
                let i = idx % m;
                idx /= m;
                self.grid.coord(a, i as f64 + 0.5)
            })
            .collect()
    }

    pub fn largest(&self) -> Option<&Component> {
        self.components.first()
    }

    pub fn summary(&self) -> BadSetSummary {
        BadSetSummary {
            rate_a: self.rate_a,
            eta: self.eta,
            marked_cells: self.cells.len(),
            cell_widths: self.grid.steps(),
            components: self
                .components
                .iter()
                .map(|c| ComponentSummary {
                    cells: c.cells.len(),
                    inner_volume: c.inner_volume,
                    outer_volume: c.outer_volume,
                    centroid: c.centroid.clone(),
                })
                .collect(),
            epsilon: self.epsilon,
            near_equality_fraction: self.near_equality_fraction,
        }
    }

    /// Writes `x1..xn,component` per marked cell.
    pub fn write_mask_csv<W: Write>(&self, w: W) -> Result<(), BadSetError> {
        let mut wr = csv::Writer::from_writer(w);
        let n = self.grid.dim();
        let mut header: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
        header.push("component".into());
        wr.write_record(&header).map_err(|e| BadSetError::Csv(e.to_string()))?;
        let mut owner = vec![usize::MAX; self.cells.len()];
        for (ci, comp) in self.components.iter().enumerate() {
            for c in &comp.cells {
                if let Ok(pos) = self.cells.binary_search(c) {
                    owner[pos] = ci;
                }
            }
        }
        for (pos, &cell) in self.cells.iter().enumerate() {
            let mut rec: Vec<String> = self.cell_center(cell).iter().map(|v| format!("{v}")).collect();
            rec.push(owner[pos].to_string());
            wr.write_record(&rec).map_err(|e| BadSetError::Csv(e.to_string()))?;
        }
        wr.flush().map_err(|e| BadSetError::Csv(e.to_string()))?;
        Ok(())
    }

    /// Index of the component that shares the most cells with the largest
    /// component of `reference` (normally the analysis at `eta = 1` on the
    /// same grid). This picks a nested family across `eta`.
    pub fn nested_in(&self, reference: &BadSetAnalysis) -> Option<usize> {
        let target = reference.largest()?;
        let mut best: Option<(usize, usize)> = None;
        for (i, c) in self.components.iter().enumerate() {
            let shared = c
                .cells
                .iter()
                .filter(|x| target.cells.binary_search(x).is_ok())
                .count();
            if shared > 0 && best.map_or(true, |b| shared > b.1) {
                best = Some((i, shared));
            }
        }
        best.map(|b| b.0)
    }
}

fn unflatten(mut idx: usize, m: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let i = idx % m;
            idx /= m;
            i
        })
        .collect()
}

fn flatten(ix: &[usize], m: usize) -> usize {
    ix.iter().rev().fold(0, |acc, &i| acc * m + i)
}

/// Marks, labels and measures the bad set on the grid implied by `spec`.
pub fn analyze_badset(
    sys: &System,
    region: &AnnularRegion,
    a: f64,
    eta: f64,
    spec: &GridSpec,
) -> Result<BadSetAnalysis, BadSetError> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(BadSetError::Rate(a));
    }
    let grid = region_grid(sys, region, spec)?;
    analyze_on_grid(sys, region, a, eta, grid, spec.refinement, spec.refine_factor)
}

pub(crate) fn analyze_on_grid(
    sys: &System,
    region: &AnnularRegion,
    a: f64,
    eta: f64,
    grid: Grid,
    depth: usize,
    factor: usize,
) -> Result<BadSetAnalysis, BadSetError> {
    let n = grid.dim();
    let m = grid.res - 1;
    let total = m.pow(n as u32);
    let center_of = |idx: usize| -> Vec<f64> {
        unflatten(idx, m, n)
            .iter()
            .enumerate()
            .map(|(ax, &i)| grid.coord(ax, i as f64 + 0.5))
            .collect()
    };

    // 0 outside region, 1 good, 2 near equality, 3 bad
    let status: Vec<Result<u8, (usize, EvalError)>> = (0..total)
        .into_par_iter()
        .map(|idx| {
            let x = center_of(idx);
            let v = sys.v(&x).map_err(|e| (idx, e))?;
            if !region.contains_level(v) {
                return Ok(0);
            }
            let (mg, scale) = margin(sys, &x, a, eta).map_err(|e| (idx, e))?;
            Ok(if mg > EQUALITY_GUARD * scale {
                3
            } else if mg >= -EQUALITY_GUARD * scale {
                2
            } else {
                1
            })
        })
        .collect();
    let mut marks = vec![false; total];
    let (mut in_region, mut near) = (0usize, 0usize);
    for (idx, s) in status.into_iter().enumerate() {
        match s {
            Ok(0) => {}
            Ok(k) => {
                in_region += 1;
                if k == 2 {
                    near += 1;
                }
                marks[idx] = k == 3;
            }
            Err((i, source)) => {
                // Failures outside the working region do not matter.
                let x = center_of(i);
                if sys.v(&x).is_ok_and(|v| !region.contains_level(v)) {
                    continue;
                }
                return Err(BadSetError::Eval { point: x, source });
            }
        }
    }
    let cells: Vec<usize> = (0..total).filter(|&i| marks[i]).collect();

    // Face-adjacent flood fill in ascending cell order.
    let mut label = vec![usize::MAX; total];
    let mut raw: Vec<Vec<usize>> = Vec::new();
    for &start in &cells {
        if label[start] != usize::MAX {
            continue;
        }
        let id = raw.len();
        let mut members = Vec::new();
        let mut queue = VecDeque::from([start]);
        label[start] = id;
        while let Some(c) = queue.pop_front() {
            members.push(c);
            let ix = unflatten(c, m, n);
            for ax in 0..n {
                for up in [false, true] {
                    let mut jx = ix.clone();
                    if up {
                        if jx[ax] + 1 >= m {
                            continue;
                        }
                        jx[ax] += 1;
                    } else {
                        if jx[ax] == 0 {
                            continue;
                        }
                        jx[ax] -= 1;
                    }
                    let j = flatten(&jx, m);
                    if marks[j] && label[j] == usize::MAX {
                        label[j] = id;
                        queue.push_back(j);
                    }
                }
            }
        }
        members.sort_unstable();
        raw.push(members);
    }

    let merged = merge_close(raw, m, n);
    let cell_width = grid.steps().iter().copied().fold(0.0, f64::max);
    for comp in &merged {
        if comp.len() == 1 {
            return Err(BadSetError::UnderResolved {
                center: center_of(comp[0]),
                cell_width,
            });
        }
    }

    let pred = |x: &[f64]| -> bool { in_omega(sys, region, x, a, eta).unwrap_or(false) };
    let mut components: Vec<Component> = merged
        .into_par_iter()
        .map(|members| {
            let (inner, outer) = measure(&grid, &members, m, depth, factor, &pred);
            let mut centroid = vec![0.0; n];
            let mut bbox = vec![(f64::INFINITY, f64::NEG_INFINITY); n];
            for &c in &members {
                let x = center_of(c);
                for ax in 0..n {
                    centroid[ax] += x[ax] / members.len() as f64;
                    let h = 0.5 * grid.step(ax);
                    bbox[ax].0 = bbox[ax].0.min(x[ax] - h);
                    bbox[ax].1 = bbox[ax].1.max(x[ax] + h);
                }
            }
            Component {
                cells: members,
                inner_volume: inner,
                outer_volume: outer,
                centroid,
                bbox,
            }
        })
        .collect();
    components.sort_by(|p, q| {
        q.outer_volume
            .total_cmp(&p.outer_volume)
            .then(p.cells[0].cmp(&q.cells[0]))
    });
    let epsilon = components.first().map_or(0.0, |c| c.outer_volume);
    Ok(BadSetAnalysis {
        rate_a: a,
        eta,
        region: *region,
        grid,
        cells,
        components,
        epsilon,
        near_equality_fraction: if in_region > 0 {
            near as f64 / in_region as f64
        } else {
            0.0
        },
    })
}

/// Merges components whose index bounding boxes leave at most one empty
/// cell between them on every axis.
fn merge_close(mut comps: Vec<Vec<usize>>, m: usize, n: usize) -> Vec<Vec<usize>> {
    loop {
        let boxes: Vec<Vec<(usize, usize)>> = comps
            .iter()
            .map(|c| {
                let mut b = vec![(usize::MAX, 0usize); n];
                for &cell in c {
                    for (ax, i) in unflatten(cell, m, n).into_iter().enumerate() {
                        b[ax].0 = b[ax].0.min(i);
                        b[ax].1 = b[ax].1.max(i);
                    }
                }
                b
            })
            .collect();
        let close = |p: &[(usize, usize)], q: &[(usize, usize)]| {
            p.iter().zip(q).all(|(a, b)| {
                let gap = if a.1 < b.0 {
                    b.0 - a.1
                } else if b.1 < a.0 {
                    a.0 - b.1
                } else {
                    0
                };
                gap <= 2
            })
        };
        let mut pair = None;
        'outer: for i in 0..comps.len() {
            for j in (i + 1)..comps.len() {
                if close(&boxes[i], &boxes[j]) {
                    pair = Some((i, j));
                    break 'outer;
                }
            }
        }
        match pair {
            None => return comps,
            Some((i, j)) => {
                let taken = comps.remove(j);
                comps[i].extend(taken);
                comps[i].sort_unstable();
            }
        }
    }
}

/// Inner/outer volume of one component: cells whose vertices and center
/// all test bad count fully, mixed cells are subdivided `depth` times by
/// `factor` per axis, and mixed cells at the finest level count toward the
/// outer volume only. The component cells and their neighbours are examined.
fn measure<P: Fn(&[f64]) -> bool + Sync>(
    grid: &Grid,
    members: &[usize],
    m: usize,
    depth: usize,
    factor: usize,
    pred: &P,
) -> (f64, f64) {
    let n = grid.dim();
    let mut candidates: Vec<usize> = Vec::new();
    let offsets = 3usize.pow(n as u32);
    for &c in members {
        let ix = unflatten(c, m, n);
        'off: for k in 0..offsets {
            let mut kk = k;
            let mut jx = ix.clone();
            for j in jx.iter_mut() {
                let d = kk % 3;
                kk /= 3;
                let v = *j as i64 + d as i64 - 1;
                if v < 0 || v >= m as i64 {
                    continue 'off;
                }
                *j = v as usize;
            }
            candidates.push(flatten(&jx, m));
        }
    }
    candidates.sort_unstable();
    candidates.dedup();
    let steps = grid.steps();
    let parts: Vec<(f64, f64)> = candidates
        .par_iter()
        .map(|&c| {
            let ix = unflatten(c, m, n);
            let lo: Vec<f64> = ix.iter().enumerate().map(|(ax, &i)| grid.coord(ax, i as f64)).collect();
            cell_volume(&lo, &steps, depth, factor.max(2), pred)
        })
        .collect();
    parts.iter().fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1))
}

fn cell_volume<P: Fn(&[f64]) -> bool>(lo: &[f64], size: &[f64], depth: usize, factor: usize, pred: &P) -> (f64, f64) {
    let n = lo.len();
    let vol: f64 = size.iter().product();
    let mut hits = 0;
    let mut p = vec![0.0; n];
    for corner in 0..(1usize << n) {
        for ax in 0..n {
            p[ax] = lo[ax] + if corner >> ax & 1 == 1 { size[ax] } else { 0.0 };
        }
        hits += usize::from(pred(&p));
    }
    for ax in 0..n {
        p[ax] = lo[ax] + 0.5 * size[ax];
    }
    hits += usize::from(pred(&p));
    let tests = (1usize << n) + 1;
    if hits == tests {
        return (vol, vol);
    }
    if hits == 0 {
        return (0.0, 0.0);
    }
    if depth == 0 {
        return (0.0, vol);
    }
    let sub: Vec<f64> = size.iter().map(|s| s / factor as f64).collect();
    let count = factor.pow(n as u32);
    let mut acc = (0.0, 0.0);
    let mut q = vec![0.0; n];
    for k in 0..count {
        let mut kk = k;
        for ax in 0..n {
            q[ax] = lo[ax] + (kk % factor) as f64 * sub[ax];
            kk /= factor;
        }
        let (i, o) = cell_volume(&q, &sub, depth - 1, factor, pred);
        acc.0 += i;
        acc.1 += o;
    }
    acc
}

/// Whether `V' > 0` somewhere on the region (refined grid maximum).
pub fn omega_zero_nonempty(sys: &System, region: &AnnularRegion, spec: &GridSpec) -> Result<bool, BadSetError> {
    Ok(crate::bounds::estimate_b(sys, region, spec)?.value > 0.0)
}
