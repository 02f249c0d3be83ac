//! Geometry of tubes swept by normal disks along a sampled curve.
//!
//! The tube of radius `gamma` around a curve is the union of the
//! `(n-1)`-disks centered on the curve and orthogonal to its velocity.
//! Besides the closed-form volume and arc-length limit, this module measures
//! tubes directly (Monte Carlo) and searches for disks that intersect.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dist, dot, norm, unit_ball_volume};

#[derive(Debug, Error, PartialEq)]
pub enum TubeError {
    #[error("need at least {needed} samples, got {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("{0}")]
    Shape(String),
    #[error("curve has zero length")]
    ZeroLength,
    #[error("tube radius {rho0} is not below the curvature radius {rho}")]
    RadiusTooLarge { rho0: f64, rho: f64 },
    #[error("exact disk intersection is implemented for n = 2 and n = 3, not n = {0}")]
    UnsupportedDimension(usize),
}

/// A curve sampled at increasing times, with its velocity at every sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledCurve {
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    /// Cumulative trapezoidal integral of the speed.
    pub arc_length: Vec<f64>,
}

impl SampledCurve {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>, velocities: Vec<Vec<f64>>) -> Result<SampledCurve, TubeError> {
        if times.len() != points.len() || times.len() != velocities.len() {
            return Err(TubeError::Shape(format!(
                "{} times, {} points, {} velocities",
                times.len(),
                points.len(),
                velocities.len()
            )));
        }
        if times.is_empty() {
            return Err(TubeError::TooFewSamples { needed: 1, found: 0 });
        }
        let n = points[0].len();
        if points.iter().chain(&velocities).any(|p| p.len() != n) {
            return Err(TubeError::Shape("mixed state dimensions".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(TubeError::Shape("times must be strictly increasing".into()));
        }
        let mut arc_length = Vec::with_capacity(times.len());
        let mut acc = 0.0;
        arc_length.push(0.0);
        for i in 1..times.len() {
            acc += 0.5 * (times[i] - times[i - 1]) * (norm(&velocities[i]) + norm(&velocities[i - 1]));
            arc_length.push(acc);
        }
        Ok(SampledCurve {
            times,
            points,
            velocities,
            arc_length,
        })
    }

    /// Arc of the circle of radius `radius` around `center` in the `x1, x2`
    /// plane, traversed at unit speed from angle `theta0` for length `length`.
    pub fn circle_arc(center: [f64; 2], radius: f64, theta0: f64, length: f64, samples: usize) -> SampledCurve {
        let mut times = Vec::with_capacity(samples);
        let mut points = Vec::with_capacity(samples);
        let mut velocities = Vec::with_capacity(samples);
        for i in 0..samples {
            let s = length * i as f64 / (samples - 1) as f64;
            let th = theta0 + s / radius;
            times.push(s);
            points.push(vec![center[0] + radius * th.cos(), center[1] + radius * th.sin()]);
            velocities.push(vec![-th.sin(), th.cos()]);
        }
        SampledCurve::new(times, points, velocities).expect("valid circle samples")
    }

    /// Straight segment through `points` with constant velocity between them.
    pub fn polyline(points: Vec<Vec<f64>>, speed: f64) -> Result<SampledCurve, TubeError> {
        if points.len() < 2 {
            return Err(TubeError::TooFewSamples {
                needed: 2,
                found: points.len(),
            });
        }
        let m = points.len();
        let mut times = vec![0.0];
        for i in 1..m {
            times.push(times[i - 1] + dist(&points[i], &points[i - 1]) / speed);
        }
        let velocities = (0..m)
            .map(|i| {
                let (a, b) = if i + 1 < m { (i, i + 1) } else { (i - 1, i) };
                let d = dist(&points[b], &points[a]);
                points[b].iter().zip(&points[a]).map(|(p, q)| speed * (p - q) / d).collect()
            })
            .collect();
        SampledCurve::new(times, points, velocities)
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn total_length(&self) -> f64 {
        *self.arc_length.last().unwrap_or(&0.0)
    }

    pub fn duration(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[0]
    }

    /// Checks `lo (t - s) <= length(s, t) <= hi (t - s)` for every pair of
    /// consecutive samples, with relative slack `tol`.
    pub fn length_bounds_hold(&self, lo: f64, hi: f64, tol: f64) -> bool {
        (1..self.len()).all(|i| {
            let dt = self.times[i] - self.times[i - 1];
            let dl = self.arc_length[i] - self.arc_length[i - 1];
            dl >= lo * dt * (1.0 - tol) && dl <= hi * dt * (1.0 + tol)
        })
    }
}

/// Upper bound `L1 / L0_inf` on the curvature of any trajectory in the
/// region; infinite when the field vanishes.
pub fn curvature_bound(l1: f64, l0_inf: f64) -> f64 {
    if l0_inf > 0.0 {
        l1 / l0_inf
    } else {
        f64::INFINITY
    }
}

/// Largest curvature over interior samples, from three-point differences in
/// time. Stencils whose two spacings differ by more than a factor of two are
/// skipped, since the second difference is dominated by rounding there.
pub fn empirical_curvature(curve: &SampledCurve) -> Result<f64, TubeError> {
    let m = curve.len();
    if m < 3 {
        return Err(TubeError::TooFewSamples { needed: 3, found: m });
    }
    let n = curve.dim();
    let mut best = 0.0f64;
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 1..m - 1 {
        let h1 = curve.times[i] - curve.times[i - 1];
        let h2 = curve.times[i + 1] - curve.times[i];
        if h1.max(h2) > 2.0 * h1.min(h2) {
            continue;
        }
        let (p0, p1, p2) = (&curve.points[i - 1], &curve.points[i], &curve.points[i + 1]);
        for k in 0..n {
            let a = (p1[k] - p0[k]) / h1;
            let b = (p2[k] - p1[k]) / h2;
            d1[k] = (h2 * a + h1 * b) / (h1 + h2);
            d2[k] = 2.0 * (b - a) / (h1 + h2);
        }
        let s2 = dot(&d1, &d1);
        if s2 == 0.0 {
            continue;
        }
        let area2 = (s2 * dot(&d2, &d2) - dot(&d1, &d2).powi(2)).max(0.0);
        best = best.max(area2.sqrt() / s2.powf(1.5));
    }
    Ok(best)
}

/// Longest arc, for curvature radius at least `rho`, along which normal
/// disks of radius `rho0` cannot meet: `2 rho (pi - asin(rho0 / rho))`.
pub fn max_safe_arclength(rho: f64, rho0: f64) -> Result<f64, TubeError> {
    if !(rho0 < rho) {
        return Err(TubeError::RadiusTooLarge { rho0, rho });
    }
    Ok(2.0 * rho * (PI - (rho0 / rho).asin()))
}

/// Volume `chi(n-1) gamma^(n-1) length` of a tube without self-overlap.
pub fn tube_volume_formula(n: usize, gamma: f64, arclength: f64) -> f64 {
    unit_ball_volume(n - 1) * gamma.powi(n as i32 - 1) * arclength
}

const MC_SHARD: usize = 1 << 16;

/// Uniform hash of polyline segments, each stored in every cell its
/// `gamma`-inflated bounding box touches.
struct SegmentIndex {
    cell: f64,
    lo: Vec<f64>,
    buckets: HashMap<Vec<i64>, Vec<usize>>,
}

impl SegmentIndex {
    fn new(points: &[Vec<f64>], gamma: f64, lo: Vec<f64>, hi: &[f64]) -> SegmentIndex {
        let n = lo.len();
        let extent = lo.iter().zip(hi).map(|(a, b)| b - a).fold(0.0, f64::max);
        // Keep the table size bounded for long curves with thin tubes.
        let cell = gamma.max(extent / 256.0);
        let mut buckets: HashMap<Vec<i64>, Vec<usize>> = HashMap::new();
        for s in 0..points.len() - 1 {
            let (a, b) = (&points[s], &points[s + 1]);
            let lo_ix: Vec<i64> = (0..n)
                .map(|k| ((a[k].min(b[k]) - gamma - lo[k]) / cell).floor() as i64)
                .collect();
            let hi_ix: Vec<i64> = (0..n)
                .map(|k| ((a[k].max(b[k]) + gamma - lo[k]) / cell).floor() as i64)
                .collect();
            let mut ix = lo_ix.clone();
            loop {
                buckets.entry(ix.clone()).or_default().push(s);
                let mut k = 0;
                while k < n {
                    ix[k] += 1;
                    if ix[k] <= hi_ix[k] {
                        break;
                    }
                    ix[k] = lo_ix[k];
                    k += 1;
                }
                if k == n {
                    break;
                }
            }
        }
        SegmentIndex { cell, lo, buckets }
    }

    fn candidates(&self, y: &[f64]) -> Option<&Vec<usize>> {
        let key: Vec<i64> = y
            .iter()
            .zip(&self.lo)
            .map(|(v, l)| ((v - l) / self.cell).floor() as i64)
            .collect();
        self.buckets.get(&key)
    }
}

/// Squared distance from `y` to segment `a b` and the segment parameter of
/// the closest point.
fn segment_distance2(y: &[f64], a: &[f64], b: &[f64]) -> (f64, f64) {
    let mut ab2 = 0.0;
    let mut ay_ab = 0.0;
    for k in 0..y.len() {
        let d = b[k] - a[k];
        ab2 += d * d;
        ay_ab += (y[k] - a[k]) * d;
    }
    let u = if ab2 > 0.0 { (ay_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    let d2 = (0..y.len())
        .map(|k| {
            let c = a[k] + u * (b[k] - a[k]);
            (y[k] - c).powi(2)
        })
        .sum();
    (d2, u)
}

/// Monte-Carlo volume of the union of normal disks along the curve. A point
/// of the inflated bounding box counts when it lies within `gamma` of the
/// polyline and its closest point is not one of the two curve endpoints, so
/// the round end caps are excluded. Returns `(volume, stderr)`.
pub fn tube_volume_montecarlo(
    curve: &SampledCurve,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> Result<(f64, f64), TubeError> {
    if curve.len() < 2 || curve.total_length() == 0.0 {
        return Err(TubeError::ZeroLength);
    }
    let n = curve.dim();
    let pts = &curve.points;
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for p in pts {
        for k in 0..n {
            lo[k] = lo[k].min(p[k] - gamma);
            hi[k] = hi[k].max(p[k] + gamma);
        }
    }
    let box_volume: f64 = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
    let index = SegmentIndex::new(pts, gamma, lo.clone(), &hi);
    let last = pts.len() - 2;
    let g2 = gamma * gamma;
    let shards = samples.div_ceil(MC_SHARD);
    let hits: u64 = (0..shards)
        .into_par_iter()
        .map(|shard| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(shard as u64 + 1);
            let count = MC_SHARD.min(samples - shard * MC_SHARD);
            let mut y = vec![0.0; n];
            let mut hits = 0u64;
            for _ in 0..count {
                for k in 0..n {
                    y[k] = rng.gen_range(lo[k]..hi[k]);
                }
                let Some(cands) = index.candidates(&y) else { continue };
                let mut best = (f64::INFINITY, 0usize, 0.0);
                for &s in cands {
                    let (d2, u) = segment_distance2(&y, &pts[s], &pts[s + 1]);
                    if d2 < best.0 {
                        best = (d2, s, u);
                    }
                }
                let (d2, s, u) = best;
                let at_start = s == 0 && u == 0.0;
                let at_end = s == last && u == 1.0;
                if d2 <= g2 && !at_start && !at_end {
                    hits += 1;
                }
            }
            hits
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok((box_volume * p, box_volume * (p * (1.0 - p) / samples as f64).sqrt()))
}

/// First pair of sample indices `(i, j)` whose normal disks intersect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub i: usize,
    pub j: usize,
    pub t1: f64,
    pub t2: f64,
}

/// Searches for intersecting normal disks at samples whose times differ by
/// more than two typical steps. Each disk is tested against the disks at
/// the two ends of every distant sample interval and against the piece of
/// tube swept in between (in the plane, the quadrilateral spanned by the two
/// normal segments; in space, the chord of the curve). Touching disks
/// (distance exactly `gamma`) do not count.
pub fn detect_overlap(curve: &SampledCurve, gamma: f64) -> Result<Option<Overlap>, TubeError> {
    let n = curve.dim();
    if n != 2 && n != 3 {
        return Err(TubeError::UnsupportedDimension(n));
    }
    let m = curve.len();
    if m < 2 {
        return Ok(None);
    }
    let mut steps: Vec<f64> = curve.times.windows(2).map(|w| w[1] - w[0]).collect();
    steps.sort_by(f64::total_cmp);
    let min_gap = 2.0 * steps[steps.len() / 2];
    let normals: Vec<Vec<f64>> = curve
        .velocities
        .iter()
        .map(|v| {
            let r = norm(v);
            v.iter().map(|c| c / r).collect()
        })
        .collect();
    let pts = &curve.points;
    let far = |i: usize, j: usize| (curve.times[j] - curve.times[i]).abs() > min_gap;
    let found = (0..m).into_par_iter().find_map_first(|i| {
        for j in 0..m {
            if !far(i, j) {
                continue;
            }
            let reach = if j + 1 < m { dist(&pts[j], &pts[j + 1]) } else { 0.0 };
            if dist(&pts[i], &pts[j]) >= 2.0 * gamma + reach {
                continue;
            }
            let mut hit = if n == 2 {
                segments_meet(&pts[i], &normals[i], &pts[j], &normals[j], gamma)
            } else {
                disks_meet(&pts[i], &normals[i], &pts[j], &normals[j], gamma)
            };
            if !hit && j + 1 < m && far(i, j + 1) {
                hit = if n == 2 {
                    segment_meets_quad(&pts[i], &normals[i], &pts[j], &normals[j], &pts[j + 1], &normals[j + 1], gamma)
                } else {
                    chord_crosses_disk(&pts[i], &normals[i], &pts[j], &pts[j + 1], gamma)
                };
            }
            if hit {
                let (a, b) = (i.min(j), i.max(j));
                return Some(Overlap {
                    i: a,
                    j: b,
                    t1: curve.times[a],
                    t2: curve.times[b],
                });
            }
        }
        None
    });
    Ok(found)
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Whether the open normal segments of half-length `r` at `p` and `q`
/// (with unit tangents `u` and `v`) share a point.
fn segments_meet(p: &[f64], u: &[f64], q: &[f64], v: &[f64], r: f64) -> bool {
    // segment directions are the tangents rotated by 90 degrees
    let du = [-u[1], u[0]];
    let dv = [-v[1], v[0]];
    let w = [q[0] - p[0], q[1] - p[1]];
    let den = cross2(du, dv);
    let scale = r.max(norm(&w));
    if den.abs() > 1e-12 {
        let s = cross2(w, dv) / den;
        let t = cross2(w, du) / den;
        s.abs() < r && t.abs() < r
    } else {
        // parallel: overlap only when collinear and the intervals meet
        if cross2(w, du).abs() > 1e-12 * scale {
            return false;
        }
        let shift = w[0] * du[0] + w[1] * du[1];
        shift.abs() < 2.0 * r
    }
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    cross2([b[0] - a[0], b[1] - a[1]], [c[0] - a[0], c[1] - a[1]])
}

fn normal_segment(c: &[f64], u: &[f64], r: f64) -> ([f64; 2], [f64; 2]) {
    ([c[0] + r * u[1], c[1] - r * u[0]], [c[0] - r * u[1], c[1] + r * u[0]])
}

/// Whether the open normal segment at `p` enters the interior of the
/// quadrilateral swept by the normal segments at `q0` and `q1`.
fn segment_meets_quad(p: &[f64], u: &[f64], q0: &[f64], v0: &[f64], q1: &[f64], v1: &[f64], r: f64) -> bool {
    let (s0, s1) = normal_segment(p, u, r);
    let (a, b) = normal_segment(q0, v0, r);
    let (d, c) = normal_segment(q1, v1, r);
    let quad = [a, b, c, d];
    for k in 0..4 {
        let (e0, e1) = (quad[k], quad[(k + 1) % 4]);
        let o1 = orient(s0, s1, e0);
        let o2 = orient(s0, s1, e1);
        let o3 = orient(e0, e1, s0);
        let o4 = orient(e0, e1, s1);
        if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
            return true;
        }
    }
    // no proper crossing: the segment is either inside or outside entirely
    let mid = [p[0], p[1]];
    let mut inside = false;
    for k in 0..4 {
        let (e0, e1) = (quad[k], quad[(k + 1) % 4]);
        if (e0[1] > mid[1]) != (e1[1] > mid[1]) {
            let x = e0[0] + (mid[1] - e0[1]) * (e1[0] - e0[0]) / (e1[1] - e0[1]);
            if x > mid[0] {
                inside = !inside;
            }
        }
    }
    inside && (0..4).all(|k| orient(quad[k], quad[(k + 1) % 4], mid).abs() > 0.0)
}

/// Whether the chord `q0 q1` of the curve passes through the open disk at
/// `p`; the disk centered at the crossing point then meets it.
fn chord_crosses_disk(p: &[f64], u: &[f64], q0: &[f64], q1: &[f64], r: f64) -> bool {
    let h0: f64 = q0.iter().zip(p).zip(u).map(|((a, b), c)| (a - b) * c).sum();
    let h1: f64 = q1.iter().zip(p).zip(u).map(|((a, b), c)| (a - b) * c).sum();
    if h0 * h1 > 0.0 || h0 == h1 {
        return false;
    }
    let mu = h0 / (h0 - h1);
    let x: Vec<f64> = q0.iter().zip(q1).map(|(a, b)| a + mu * (b - a)).collect();
    dist(&x, p) < r
}

/// Whether the open disks of radius `r` centered at `p`, `q` with unit
/// normals `u`, `v` intersect in three dimensions.
fn disks_meet(p: &[f64], u: &[f64], q: &[f64], v: &[f64], r: f64) -> bool {
    let dir = [
        u[1] * v[2] - u[2] * v[1],
        u[2] * v[0] - u[0] * v[2],
        u[0] * v[1] - u[1] * v[0],
    ];
    let d2 = dot(&dir, &dir);
    let w: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    if d2 < 1e-24 {
        // parallel planes: coplanar disks meet when centers are closer than 2r
        return dot(&w, u).abs() <= 1e-12 * r.max(norm(&w)) && norm(&w) < 2.0 * r;
    }
    // point on both planes: x = p + alpha u + beta v with x.u = p.u, x.v = q.v
    let hu = 0.0;
    let hv = dot(&w, v);
    let uv = dot(u, v);
    let det = 1.0 - uv * uv;
    let alpha = (hu - hv * uv) / det;
    let beta = (hv - hu * uv) / det;
    let x0: Vec<f64> = (0..3).map(|k| p[k] + alpha * u[k] + beta * v[k]).collect();
    let dn = d2.sqrt();
    let e: Vec<f64> = dir.iter().map(|c| c / dn).collect();
    let chord = |c: &[f64]| -> Option<(f64, f64)> {
        let rel: Vec<f64> = x0.iter().zip(c).map(|(a, b)| a - b).collect();
        let t0 = -dot(&rel, &e);
        let off2 = dot(&rel, &rel) - t0 * t0;
        let h2 = r * r - off2;
        (h2 > 0.0).then(|| (t0 - h2.sqrt(), t0 + h2.sqrt()))
    };
    match (chord(p), chord(q)) {
        (Some(a), Some(b)) => a.0.max(b.0) < a.1.min(b.1),
        _ => false,
    }
}

/// Geometry summary of one tube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    pub radius: f64,
    pub arclength: f64,
    #[serde(with = "crate::num")]
    pub curvature_bound: f64,
    pub curvature_max_est: f64,
    #[serde(with = "crate::num")]
    pub safe_arclength: f64,
    pub nonoverlap_criterion_pass: bool,
    pub overlap_found_empirical: bool,
    pub first_overlap: Option<Overlap>,
    pub volume_formula: f64,
    pub volume_montecarlo: f64,
    pub mc_stderr: f64,
}

/// Builds a [`TubeReport`] for the whole curve.
pub fn tube_report(
    curve: &SampledCurve,
    gamma: f64,
    curvature_limit: f64,
    samples: usize,
    seed: u64,
) -> Result<TubeReport, TubeError> {
    let arclength = curve.total_length();
    let safe = if curvature_limit > 0.0 {
        max_safe_arclength(1.0 / curvature_limit, gamma).unwrap_or(0.0)
    } else {
        f64::INFINITY
    };
    let overlap = match detect_overlap(curve, gamma) {
        Ok(o) => o,
        Err(TubeError::UnsupportedDimension(_)) => None,
        Err(e) => return Err(e),
    };
    let (vol, err) = tube_volume_montecarlo(curve, gamma, samples, seed)?;
    Ok(TubeReport {
        radius: gamma,
        arclength,
        curvature_bound: curvature_limit,
        curvature_max_est: empirical_curvature(curve).unwrap_or(0.0),
        safe_arclength: safe,
        nonoverlap_criterion_pass: arclength < safe,
        overlap_found_empirical: overlap.is_some(),
        first_overlap: overlap,
        volume_formula: tube_volume_formula(curve.dim(), gamma, arclength),
        volume_montecarlo: vol,
        mc_stderr: err,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        assert_eq!(curvature_bound(90.78, 1.4), 90.78 / 1.4);
        assert_eq!(curvature_bound(1.0, 0.0), f64::INFINITY);
        assert!((max_safe_arclength(1.0, 1e-12).unwrap() - 2.0 * PI).abs() < 1e-10);
        assert!((max_safe_arclength(2.0, 1.0).unwrap() - 5.0 * PI * 2.0 / 3.0).abs() < 1e-12);
        assert!(max_safe_arclength(1.0, 1.0).is_err());
        assert!((tube_volume_formula(2, 0.1, 1.0) - 0.2).abs() < 1e-15);
        assert!((tube_volume_formula(3, 1.0, 2.0) - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn curvature_of_simple_curves() {
        for r in [0.5, 1.0, 3.0] {
            let c = SampledCurve::circle_arc([0.0, 0.0], r, 0.0, 2.0 * PI * r, 1000);
            let k = empirical_curvature(&c).unwrap();
            assert!((k * r - 1.0).abs() < 1e-3, "{k}");
        }
        let line = SampledCurve::polyline((0..50).map(|i| vec![i as f64 * 0.1, 0.3 * i as f64 * 0.1]).collect(), 1.0).unwrap();
        assert!(empirical_curvature(&line).unwrap() < 1e-6);
        assert!(empirical_curvature(&SampledCurve::polyline(vec![vec![0.0, 0.0], vec![1.0, 0.0]], 1.0).unwrap()).is_err());
    }

    #[test]
    fn overlap_detection() {
        let line = SampledCurve::polyline((0..200).map(|i| vec![i as f64 * 0.01, 0.0]).collect(), 1.0).unwrap();
        assert_eq!(detect_overlap(&line, 5.0).unwrap(), None);
        let wrap = SampledCurve::circle_arc([0.0, 0.0], 1.0, 0.0, 1.1 * 2.0 * PI, 2000);
        let o = detect_overlap(&wrap, 0.01).unwrap().expect("revisit");
        assert!(o.t2 - o.t1 > PI);
        let arc = SampledCurve::circle_arc([0.0, 0.0], 1.0, 0.0, 0.9 * 2.0 * PI, 2000);
        assert_eq!(detect_overlap(&arc, 0.01).unwrap(), None);
    }

    #[test]
    fn three_dimensional_disks() {
        // helix with small pitch: consecutive turns are 0.05 apart
        let m = 3000;
        let mut t = Vec::new();
        let mut p = Vec::new();
        let mut v = Vec::new();
        for i in 0..m {
            let s = 3.0 * 2.0 * PI * i as f64 / (m - 1) as f64;
            let pitch = 0.05 / (2.0 * PI);
            t.push(s);
            p.push(vec![s.cos(), s.sin(), pitch * s]);
            v.push(vec![-s.sin(), s.cos(), pitch]);
        }
        let helix = SampledCurve::new(t, p, v).unwrap();
        assert!(detect_overlap(&helix, 0.1).unwrap().is_some());
        assert!(detect_overlap(&helix, 0.02).unwrap().is_none());
        let c4 = SampledCurve::new(vec![0.0, 1.0], vec![vec![0.0; 4]; 2], vec![vec![1.0, 0.0, 0.0, 0.0]; 2]).unwrap();
        assert_eq!(detect_overlap(&c4, 0.1), Err(TubeError::UnsupportedDimension(4)));
    }

    #[test]
    fn montecarlo_rectangle() {
        let seg = SampledCurve::polyline(vec![vec![0.0, 0.0], vec![1.0, 0.0]], 1.0).unwrap();
        let (v, e) = tube_volume_montecarlo(&seg, 0.1, 200_000, 7).unwrap();
        assert!((v - 0.2).abs() < 3.0 * e + 0.004, "{v} {e}");
        let (v2, _) = tube_volume_montecarlo(&seg, 0.1, 200_000, 7).unwrap();
        assert_eq!(v, v2);
    }

    fn hairpin() -> SampledCurve {
        let mut pts: Vec<Vec<f64>> = (0..=100).map(|i| vec![i as f64 * 0.01, 0.0]).collect();
        pts.extend((1..=5).map(|i| vec![1.0, i as f64 * 0.01]));
        pts.extend((1..=100).map(|i| vec![1.0 - i as f64 * 0.01, 0.05]));
        SampledCurve::polyline(pts, 1.0).unwrap()
    }

    #[test]
    fn hairpin_is_caught_twice() {
        let h = hairpin();
        let formula = tube_volume_formula(2, 0.1, h.total_length());
        let (mc, _) = tube_volume_montecarlo(&h, 0.1, 400_000, 3).unwrap();
        assert!(mc < 0.8 * formula, "{mc} {formula}");
        assert!(detect_overlap(&h, 0.1).unwrap().is_some());
    }

    #[test]
    fn quarter_circle_volume() {
        let q = SampledCurve::circle_arc([0.0, 0.0], 1.0, 0.0, PI / 2.0, 2000);
        let formula = tube_volume_formula(2, 0.05, q.total_length());
        assert!((formula - 0.1571).abs() < 1e-4);
        let (mc, err) = tube_volume_montecarlo(&q, 0.05, 1_000_000, 11).unwrap();
        assert!((mc - formula).abs() <= 3.0 * err + 0.02 * formula, "{mc} {err}");
        assert!(detect_overlap(&q, 0.05).unwrap().is_none());
    }

    #[test]
    fn length_bounds() {
        let c = SampledCurve::circle_arc([0.0, 0.0], 1.0, 0.0, 1.0, 100);
        assert!((c.total_length() - 1.0).abs() < 1e-12);
        assert!(c.length_bounds_hold(1.0, 1.0, 1e-9));
        assert!(!c.length_bounds_hold(1.1, 2.0, 1e-9));
    }
}
