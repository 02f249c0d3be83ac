//! Fixed-step simulation with event location, bad-set visit extraction and
//! trajectory-level checks of a certificate.
//!
//! The integrator is classic RK4 on a fixed step so that event times and
//! visit intervals are reproducible. Level crossings and entries/exits of
//! the bad set are located by bisection on the RK4 map of the enclosing step.

use std::io::Write;

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::badset::{is_bad, margin, EQUALITY_GUARD};
use crate::certificate::Certificate;
use crate::expr::EvalError;
use crate::field::System;
use crate::linalg::norm;
use crate::tube::{detect_overlap, tube_report, SampledCurve, TubeError, TubeReport};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("evaluation failed at t = {time}: {source}")]
    Eval {
        time: f64,
        #[source]
        source: EvalError,
    },
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("initial state must be finite and of dimension {0}")]
    InitialState(usize),
    #[error("step {dt} too coarse: dt * L0_sup = {reach} must stay below a fifth of the feature size {feature}")]
    StepTooLarge { dt: f64, reach: f64, feature: f64 },
    #[error("invalid integrator setting `{name}`: {reason}")]
    Config { name: &'static str, reason: String },
    #[error("certificate precondition: {0}")]
    Precondition(String),
    #[error(transparent)]
    Tube(#[from] TubeError),
    #[error("csv output failed: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv output failed: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    /// Step size; derived from the field's feature size when absent.
    pub dt: Option<f64>,
    pub t_max: f64,
    /// Time resolution of located events.
    pub event_tolerance: f64,
    /// Stop once `V` falls below this fraction of `c1`; `None` runs to `t_max`.
    pub halt_below: Option<f64>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            dt: None,
            t_max: 20.0,
            event_tolerance: 1e-10,
            halt_below: Some(0.5),
        }
    }
}

impl IntegratorConfig {
    /// Resolves the step: `min(1e-3, feature / (10 L0_sup))` by default, and
    /// rejects steps with `dt L0_sup >= feature / 5`.
    pub fn resolve_dt(&self, sys: &System, l0_sup: f64) -> Result<f64, TrajectoryError> {
        if !(self.t_max > 0.0 && self.t_max.is_finite()) {
            return Err(TrajectoryError::Config {
                name: "t_max",
                reason: format!("must be positive, got {}", self.t_max),
            });
        }
        if !(self.event_tolerance > 0.0) {
            return Err(TrajectoryError::Config {
                name: "event_tolerance",
                reason: format!("must be positive, got {}", self.event_tolerance),
            });
        }
        let dt = match self.dt {
            Some(dt) if !(dt > 0.0 && dt.is_finite()) => {
                return Err(TrajectoryError::Config {
                    name: "dt",
                    reason: format!("must be positive, got {dt}"),
                })
            }
            Some(dt) => dt,
            None => match sys.feature_size {
                Some(rho) if l0_sup > 0.0 => (1e-3f64).min(rho / (10.0 * l0_sup)),
                _ => 1e-3,
            },
        };
        if let Some(feature) = sys.feature_size {
            let reach = dt * l0_sup;
            if reach >= feature / 5.0 {
                return Err(TrajectoryError::StepTooLarge { dt, reach, feature });
            }
        }
        Ok(dt)
    }
}

/// What to watch for while integrating.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Watch {
    /// `V` levels whose crossings are located.
    pub levels: Vec<f64>,
    /// `(a, eta)` of the bad set whose visits are tracked.
    pub omega: Option<(f64, f64)>,
    /// Stop when `V` drops below this value.
    pub halt_level: Option<f64>,
    /// Locate sign changes of `V'` so that local extrema of `V` inside a
    /// step are recorded.
    pub extrema: bool,
}

impl Watch {
    /// Levels and bad set relevant to a certificate: the shrunk-domain
    /// shells, the region shells and the attractor level.
    pub fn for_certificate(cert: &Certificate, cfg: &IntegratorConfig) -> Watch {
        let r = &cert.region;
        Watch {
            levels: vec![
                r.c1 + cert.h_margin,
                r.c2 - cert.h_margin,
                r.c1,
                r.c2,
                cert.attractor_level,
            ],
            omega: Some((cert.rate_a, cert.eta)),
            halt_level: cfg.halt_below.map(|f| f * r.c1),
            extrema: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelCrossing {
    pub level: f64,
    pub time: f64,
    pub downward: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    TMax,
    Halt,
}

/// A maximal time interval spent in the bad set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub x_start: Vec<f64>,
    pub x_end: Vec<f64>,
    pub v_start: f64,
    pub v_end: f64,
    /// The interval begins at the first recorded time.
    pub at_record_start: bool,
    /// The interval runs to the last recorded time.
    pub at_record_end: bool,
}

impl Interval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }

    pub fn delta_v(&self) -> f64 {
        self.v_end - self.v_start
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub v_values: Vec<f64>,
    pub vdot_values: Vec<f64>,
    pub in_omega_eta: Vec<bool>,
    /// `true` for accepted steps, `false` for inserted event points.
    pub step_start: Vec<bool>,
    pub dt: f64,
    pub event_tolerance: f64,
    pub crossings: Vec<LevelCrossing>,
    pub omega: Option<(f64, f64)>,
    pub x_eta_intervals: Vec<Interval>,
    pub stop: StopReason,
}

impl TrajectoryRecord {
    pub fn first_crossing(&self, level: f64, downward: bool) -> Option<f64> {
        self.crossings
            .iter()
            .find(|c| c.level == level && c.downward == downward)
            .map(|c| c.time)
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("non-empty record")
    }

    /// The curve between two times, with the given end states and velocities
    /// from the field.
    pub fn sub_curve(
        &self,
        sys: &System,
        s: f64,
        t: f64,
        xs: &[f64],
        xt: &[f64],
    ) -> Result<SampledCurve, TrajectoryError> {
        let eps = 1e-12 * (1.0 + t.abs());
        let mut times = vec![s];
        let mut points = vec![xs.to_vec()];
        for (i, &ti) in self.times.iter().enumerate() {
            if ti > s + eps && ti < t - eps {
                times.push(ti);
                points.push(self.states[i].clone());
            }
        }
        times.push(t);
        points.push(xt.to_vec());
        let velocities = points
            .iter()
            .zip(&times)
            .map(|(p, &ti)| sys.f(p).map_err(|e| TrajectoryError::Eval { time: ti, source: e }))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(SampledCurve::new(times, points, velocities)?)
    }

    /// Writes `t,x1..xn,V,Vdot,in_omega_eta`, one row per record.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), TrajectoryError> {
        let n = self.states.first().map_or(0, |s| s.len());
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend(["V".into(), "Vdot".into(), "in_omega_eta".into()]);
        wr.write_record(&header)?;
        for i in 0..self.times.len() {
            let mut row = vec![format!("{}", self.times[i])];
            row.extend(self.states[i].iter().map(|v| format!("{v}")));
            row.push(format!("{}", self.v_values[i]));
            row.push(format!("{}", self.vdot_values[i]));
            row.push(if self.in_omega_eta[i] { "1".into() } else { "0".into() });
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn rk4(sys: &System, x: &[f64], h: f64, t: f64) -> Result<Vec<f64>, TrajectoryError> {
    let n = x.len();
    let f = |y: &[f64]| sys.f(y).map_err(|e| TrajectoryError::Eval { time: t, source: e });
    let k1 = f(x)?;
    let y: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k1[i]).collect();
    let k2 = f(&y)?;
    let y: Vec<f64> = (0..n).map(|i| x[i] + 0.5 * h * k2[i]).collect();
    let k3 = f(&y)?;
    let y: Vec<f64> = (0..n).map(|i| x[i] + h * k3[i]).collect();
    let k4 = f(&y)?;
    let out: Vec<f64> = (0..n)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(TrajectoryError::NonFinite(t + h));
    }
    Ok(out)
}

/// Locates a sign change of `g` along the RK4 map from `x` over `[0, h]`.
/// Returns the time offset and state just past the change.
fn bisect<G>(sys: &System, x: &[f64], t: f64, h: f64, tol: f64, g: G) -> Result<(f64, Vec<f64>), TrajectoryError>
where
    G: Fn(&[f64]) -> Result<f64, TrajectoryError>,
{
    bisect_in(sys, x, t, (0.0, h), tol, g)
}

fn bisect_in<G>(
    sys: &System,
    x: &[f64],
    t: f64,
    (mut lo, mut hi): (f64, f64),
    tol: f64,
    g: G,
) -> Result<(f64, Vec<f64>), TrajectoryError>
where
    G: Fn(&[f64]) -> Result<f64, TrajectoryError>,
{
    let x_lo = if lo == 0.0 { x.to_vec() } else { rk4(sys, x, lo, t)? };
    let before = g(&x_lo)? > 0.0;
    let mut x_hi = rk4(sys, x, hi, t)?;
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let xm = rk4(sys, x, mid, t)?;
        if (g(&xm)? > 0.0) == before {
            lo = mid;
        } else {
            hi = mid;
            x_hi = xm;
        }
    }
    Ok((hi, x_hi))
}

/// Signed membership function of the guarded bad set: positive inside.
fn omega_indicator(sys: &System, x: &[f64], a: f64, eta: f64, t: f64) -> Result<f64, TrajectoryError> {
    let (m, scale) = margin(sys, x, a, eta).map_err(|e| TrajectoryError::Eval { time: t, source: e })?;
    Ok(m - EQUALITY_GUARD * scale)
}

fn v_at(sys: &System, x: &[f64], t: f64) -> Result<f64, TrajectoryError> {
    sys.v(x).map_err(|e| TrajectoryError::Eval { time: t, source: e })
}

/// Sub-steps scanned for extrema of `V` in steps that touch the bad set.
const EXTREMUM_SUBSTEPS: usize = 32;

enum EventKind {
    Level(f64),
    Extremum,
    Omega,
}

/// Integrates from `x0` until `cfg.t_max` or the halt level.
pub fn integrate(
    sys: &System,
    x0: &[f64],
    dt: f64,
    cfg: &IntegratorConfig,
    watch: &Watch,
) -> Result<TrajectoryRecord, TrajectoryError> {
    let n = sys.dim();
    if x0.len() != n || x0.iter().any(|v| !v.is_finite()) {
        return Err(TrajectoryError::InitialState(n));
    }
    let tol = cfg.event_tolerance;
    let omega = watch.omega;
    let member = |x: &[f64], t: f64| -> Result<bool, TrajectoryError> {
        Ok(match omega {
            Some((a, eta)) => omega_indicator(sys, x, a, eta, t)? > 0.0,
            None => false,
        })
    };
    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        states: Vec::new(),
        v_values: Vec::new(),
        vdot_values: Vec::new(),
        in_omega_eta: Vec::new(),
        step_start: Vec::new(),
        dt,
        event_tolerance: tol,
        crossings: Vec::new(),
        omega,
        x_eta_intervals: Vec::new(),
        stop: StopReason::TMax,
    };
    let push = |rec: &mut TrajectoryRecord, t: f64, x: Vec<f64>, step: bool| -> Result<(), TrajectoryError> {
        let v = v_at(sys, &x, t)?;
        let vd = sys.vdot(&x).map_err(|e| TrajectoryError::Eval { time: t, source: e })?;
        rec.in_omega_eta.push(member(&x, t)?);
        rec.times.push(t);
        rec.states.push(x);
        rec.v_values.push(v);
        rec.vdot_values.push(vd);
        rec.step_start.push(step);
        Ok(())
    };

    let mut x = x0.to_vec();
    let mut t = 0.0;
    push(&mut rec, t, x.clone(), true)?;
    let mut k: u64 = 0;
    loop {
        let t_next = ((k + 1) as f64 * dt).min(cfg.t_max);
        let h = t_next - t;
        if h <= 0.0 {
            break;
        }
        let x_new = rk4(sys, &x, h, t)?;
        let v_old = *rec.v_values.last().expect("non-empty");
        let v_new = v_at(sys, &x_new, t_next)?;

        let mut events: Vec<(f64, Vec<f64>, EventKind)> = Vec::new();
        for &level in &watch.levels {
            if (v_old > level) != (v_new > level) {
                let (dtheta, xe) = bisect(sys, &x, t, h, tol, |y| Ok(v_at(sys, y, t)? - level))?;
                events.push((dtheta, xe, EventKind::Level(level)));
            }
        }
        if watch.extrema {
            let vdot = |y: &[f64]| sys.vdot(y).map_err(|e| TrajectoryError::Eval { time: t, source: e });
            let d_old = *rec.vdot_values.last().expect("non-empty");
            let d_new = vdot(&x_new)?;
            let touches_omega = match omega {
                Some(_) => *rec.in_omega_eta.last().expect("non-empty") || member(&x_new, t_next)?,
                None => false,
            };
            if touches_omega {
                // V can only grow inside the bad set, where a rise may start
                // and end within one step; scan sub-steps for extrema
                let mut prev = (0.0, d_old);
                for j in 1..=EXTREMUM_SUBSTEPS {
                    let s = h * j as f64 / EXTREMUM_SUBSTEPS as f64;
                    let d = if j == EXTREMUM_SUBSTEPS { d_new } else { vdot(&rk4(sys, &x, s, t)?)? };
                    if (prev.1 > 0.0) != (d > 0.0) {
                        let (dtheta, xe) = bisect_in(sys, &x, t, (prev.0, s), tol, vdot)?;
                        events.push((dtheta, xe, EventKind::Extremum));
                    }
                    prev = (s, d);
                }
            } else if (d_old > 0.0) != (d_new > 0.0) {
                let (dtheta, xe) = bisect(sys, &x, t, h, tol, vdot)?;
                events.push((dtheta, xe, EventKind::Extremum));
            }
        }
        if omega.is_some() {
            let was = *rec.in_omega_eta.last().expect("non-empty");
            if was != member(&x_new, t_next)? {
                let (a, eta) = omega.expect("checked");
                let (dtheta, xe) = bisect(sys, &x, t, h, tol, |y| omega_indicator(sys, y, a, eta, t))?;
                events.push((dtheta, xe, EventKind::Omega));
            }
        }
        events.sort_by(|p, q| p.0.total_cmp(&q.0));
        for (dtheta, xe, kind) in events {
            let te = t + dtheta;
            if let EventKind::Level(level) = kind {
                rec.crossings.push(LevelCrossing {
                    level,
                    time: te,
                    downward: v_old > level,
                });
            }
            if te < t_next && te > *rec.times.last().expect("non-empty") {
                push(&mut rec, te, xe, false)?;
            }
        }
        push(&mut rec, t_next, x_new.clone(), true)?;
        x = x_new;
        t = t_next;
        k += 1;
        if let Some(hl) = watch.halt_level {
            if v_new < hl {
                rec.stop = StopReason::Halt;
                break;
            }
        }
        if t >= cfg.t_max {
            break;
        }
    }
    if let Some((a, eta)) = omega {
        rec.x_eta_intervals = extract_x_eta(&rec, sys, a, eta)?;
    }
    Ok(rec)
}

/// Maximal intervals in the guarded bad set for `(a, eta)`, with endpoints
/// located by bisection between accepted steps.
pub fn extract_x_eta(rec: &TrajectoryRecord, sys: &System, a: f64, eta: f64) -> Result<Vec<Interval>, TrajectoryError> {
    let steps: Vec<usize> = (0..rec.times.len()).filter(|&i| rec.step_start[i]).collect();
    let mut out = Vec::new();
    let inside = |i: usize| -> Result<bool, TrajectoryError> {
        Ok(omega_indicator(sys, &rec.states[i], a, eta, rec.times[i])? > 0.0)
    };
    let mut open: Option<(f64, Vec<f64>, bool)> = None;
    let first = steps[0];
    if inside(first)? {
        open = Some((rec.times[first], rec.states[first].clone(), true));
    }
    let mut prev_in = open.is_some();
    for w in steps.windows(2) {
        let (i, j) = (w[0], w[1]);
        let now_in = inside(j)?;
        if now_in != prev_in {
            let (t, h) = (rec.times[i], rec.times[j] - rec.times[i]);
            let (dtheta, xe) = bisect(sys, &rec.states[i], t, h, rec.event_tolerance, |y| {
                omega_indicator(sys, y, a, eta, t)
            })?;
            let te = t + dtheta;
            if now_in {
                open = Some((te, xe, false));
            } else if let Some((s, xs, at_start)) = open.take() {
                out.push(Interval {
                    start: s,
                    end: te,
                    v_start: v_at(sys, &xs, s)?,
                    v_end: v_at(sys, &xe, te)?,
                    x_start: xs,
                    x_end: xe,
                    at_record_start: at_start,
                    at_record_end: false,
                });
            }
            prev_in = now_in;
        }
    }
    if let Some((s, xs, at_start)) = open {
        let last = *steps.last().expect("non-empty");
        let te = rec.times[last];
        out.push(Interval {
            start: s,
            end: te,
            v_start: v_at(sys, &xs, s)?,
            v_end: rec.v_values[last],
            x_start: xs,
            x_end: rec.states[last].clone(),
            at_record_start: at_start,
            at_record_end: true,
        });
    }
    Ok(out)
}

/// Random points on the level set `{V = level}`, found by bisection along
/// rays from the origin.
pub fn sample_on_level(sys: &System, level: f64, count: usize, seed: u64) -> Result<Vec<Vec<f64>>, TrajectoryError> {
    let n = sys.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let v_of = |x: &[f64]| v_at(sys, x, 0.0);
    while out.len() < count {
        let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm(&u);
        if !(r > 1e-3 && r <= 1.0) {
            continue;
        }
        let dir: Vec<f64> = u.iter().map(|c| c / r).collect();
        let at = |s: f64| dir.iter().map(|c| c * s).collect::<Vec<f64>>();
        let mut hi = 1.0;
        let mut grow = 0;
        while v_of(&at(hi))? < level {
            hi *= 2.0;
            grow += 1;
            if grow > 60 {
                return Err(TrajectoryError::Config {
                    name: "level",
                    reason: format!("V never reaches {level} along a sampled ray"),
                });
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if v_of(&at(mid))? < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(at(0.5 * (lo + hi)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub time: f64,
    /// Observed value minus bound (positive means violated).
    pub margin: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub v0: f64,
    /// First time `V` reaches the inner shell of the shrunk domain.
    pub t_exit: Option<f64>,
    pub allowance: f64,
    pub interior_intervals: usize,
    pub boundary_intervals: usize,
    pub max_v_rise: f64,
    pub checks_evaluated: usize,
    pub violations: Vec<Violation>,
    pub notes: Vec<String>,
}

impl VerificationReport {
    pub fn clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a simulated trajectory against a passing certificate: visit
/// durations, change of `V` over visits, overshoot, the exponential envelope
/// before the exit time and the attractor level after it.
pub fn verify_certificate(rec: &TrajectoryRecord, cert: &Certificate) -> Result<VerificationReport, TrajectoryError> {
    if !cert.passed() {
        return Err(TrajectoryError::Precondition("the certificate did not pass".into()));
    }
    let v0 = rec.v_values[0];
    if !(v0 < cert.admissible_start_level) {
        return Err(TrajectoryError::Precondition(format!(
            "V(x0) = {v0} is not below the admissible start level {}",
            cert.admissible_start_level
        )));
    }
    let rate = &cert.rate;
    let eps = cert.epsilon;
    let ge = cert.g * eps;
    let dt = rec.dt;
    let allowance = 1e-9 + 10.0 * dt.powi(4) * v0.abs().max(1.0);
    let time_slack = 2.0 * rec.event_tolerance + 1e-9;
    let inner = cert.region.c1 + cert.h_margin;
    let outer = cert.region.c2 - cert.h_margin;
    let t_exit = if v0 < inner {
        Some(0.0)
    } else {
        rec.first_crossing(inner, true)
    };
    let big_t = t_exit.unwrap_or(f64::INFINITY);
    let lam = rate.lambda(eps);
    let env_scale = (2.0 * lam * rate.dwell_bound(eps)).exp() * (v0 + 0.5 * ge);
    let t0 = rec.times[0];

    let mut violations = Vec::new();
    let mut checks = 0usize;
    let flag = |v: &mut Vec<Violation>, check: &str, time: f64, margin: f64, detail: String| {
        v.push(Violation {
            check: check.into(),
            time,
            margin,
            detail,
        });
    };

    let intervals: Vec<Interval> = match rec.omega {
        Some((a, eta)) if a == cert.rate_a && eta == cert.eta => rec.x_eta_intervals.clone(),
        _ => Vec::new(),
    };
    let (mut interior, mut boundary) = (0, 0);
    for iv in intervals.iter().filter(|iv| iv.start < big_t) {
        let starts_at_zero = iv.at_record_start || iv.start <= t0;
        let ends_at_t = iv.end >= big_t || (iv.at_record_end && t_exit.is_none());
        let dv = if iv.end > big_t {
            // clip to the exit time, where V equals the inner shell level
            inner - iv.v_start
        } else {
            iv.delta_v()
        };
        if !starts_at_zero && !ends_at_t {
            interior += 1;
            checks += 3;
            let dwell = rate.dwell_bound(eps);
            if iv.duration() > dwell + time_slack {
                flag(&mut violations, "dwell_time", iv.start, iv.duration() - dwell, format!("visit of length {} exceeds {dwell}", iv.duration()));
            }
            let phi = rate.phi(iv.duration());
            if !(phi < 0.0) {
                flag(&mut violations, "phi_negative", iv.start, phi, format!("phi({}) = {phi} is not negative", iv.duration()));
            }
            if dv > phi + allowance {
                flag(&mut violations, "interior_delta_v", iv.start, dv - phi, format!("change of V {dv} exceeds phi = {phi}"));
            }
        } else {
            boundary += 1;
            checks += 1;
            let bound = if starts_at_zero && ends_at_t { ge } else { 0.5 * ge };
            if dv > bound + allowance {
                flag(&mut violations, "boundary_delta_v", iv.start, dv - bound, format!("change of V {dv} over a boundary visit exceeds {bound}"));
            }
        }
    }

    let mut max_rise = f64::NEG_INFINITY;
    for (i, &t) in rec.times.iter().enumerate() {
        let v = rec.v_values[i];
        if t <= big_t {
            checks += 3;
            max_rise = max_rise.max(v - v0);
            if v > v0 + ge + allowance {
                flag(&mut violations, "overshoot", t, v - v0 - ge, format!("V = {v} exceeds V(x0) + g eps = {}", v0 + ge));
            }
            let env = env_scale * (-lam * t).exp() + 0.5 * ge;
            if v > env + allowance {
                flag(&mut violations, "envelope", t, v - env, format!("V = {v} exceeds the envelope {env}"));
            }
            if v >= outer {
                flag(&mut violations, "outer_exit", t, v - outer, format!("V = {v} reached the outer shell {outer}"));
            }
        } else {
            checks += 1;
            if v > cert.attractor_level + allowance {
                flag(&mut violations, "attractor", t, v - cert.attractor_level, format!("V = {v} above the attractor level {} after the exit time", cert.attractor_level));
            }
        }
    }
    checks += 1;
    if t_exit.is_none() {
        flag(&mut violations, "exit_time", rec.end_time(), f64::NAN, format!("V never reached the inner shell {inner} within the record"));
    }

    let mut notes = vec![format!(
        "visits ending at the exit time are bounded using the outer exit level c2 - h eps^(1/n) = {outer}"
    )];
    if rate.cap_reached(eps) {
        notes.push("the capped branch of k is active for some admissible visit length".into());
    }
    Ok(VerificationReport {
        v0,
        t_exit,
        allowance,
        interior_intervals: interior,
        boundary_intervals: boundary,
        max_v_rise: max_rise,
        checks_evaluated: checks,
        violations,
        notes,
    })
}

/// Tube checks for one interior visit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VisitTubeAudit {
    pub start: f64,
    pub end: f64,
    pub tube: TubeReport,
    pub overlap_free: bool,
    /// Swept volume from the closed form does not exceed the measured bad-set volume.
    pub volume_within_epsilon: bool,
    /// Arc-length limit `2 (L0_inf/L1) (pi - asin(L1 gamma / L0_inf))`.
    #[serde(with = "crate::num")]
    pub length_limit: f64,
    pub length_within_limit: bool,
    pub length_bounds_hold: bool,
    pub membership_samples: usize,
    pub membership_hits: usize,
    pub membership_rate: f64,
    pub first_miss: Option<Vec<f64>>,
}

/// Audits the tubes of radius `gamma` (normally the certificate's
/// `gamma_eta`) swept during interior visits.
pub fn tube_audit(
    rec: &TrajectoryRecord,
    sys: &System,
    cert: &Certificate,
    gamma: f64,
    mc_samples: usize,
    membership_samples: usize,
    seed: u64,
) -> Result<Vec<VisitTubeAudit>, TrajectoryError> {
    let c = cert.constants.values();
    let length_limit = if c.l1 > 0.0 && gamma * c.l1 < c.l0_inf {
        2.0 * c.l0_inf / c.l1 * (std::f64::consts::PI - (c.l1 * gamma / c.l0_inf).asin())
    } else {
        f64::NAN
    };
    let t0 = rec.times[0];
    let end = rec.end_time();
    let n = sys.dim();
    let mut out = Vec::new();
    for (k, iv) in rec.x_eta_intervals.iter().enumerate() {
        if iv.at_record_start || iv.at_record_end || iv.start <= t0 || iv.end >= end {
            continue;
        }
        let curve = rec.sub_curve(sys, iv.start, iv.end, &iv.x_start, &iv.x_end)?;
        if curve.len() < 2 || curve.total_length() == 0.0 {
            continue;
        }
        let seed_k = seed.wrapping_add(k as u64);
        let tube = tube_report(&curve, gamma, crate::tube::curvature_bound(c.l1, c.l0_inf), mc_samples, seed_k)?;
        let overlap_free = match detect_overlap(&curve, gamma) {
            Ok(o) => o.is_none(),
            Err(_) => !tube.overlap_found_empirical,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed_k ^ 0x7b);
        let mut hits = 0;
        let mut first_miss = None;
        for _ in 0..membership_samples {
            let i = rng.gen_range(0..curve.len());
            let p = &curve.points[i];
            let v = &curve.velocities[i];
            let vn = norm(v);
            let off = loop {
                let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let along: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (vn * vn);
                let w: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - along * b).collect();
                let r = norm(&w);
                if r > 1e-6 && norm(&u) <= 1.0 {
                    let radius = gamma * rng.gen_range(0.0f64..1.0).powf(1.0 / (n as f64 - 1.0).max(1.0));
                    break w.iter().map(|c| c * radius / r).collect::<Vec<f64>>();
                }
            };
            let y: Vec<f64> = p.iter().zip(&off).map(|(a, b)| a + b).collect();
            let inside_d = cert.region.contains_level(v_at(sys, &y, 0.0)?);
            let bad = is_bad(sys, &y, cert.rate_a, 1.0).map_err(|e| TrajectoryError::Eval { time: curve.times[i], source: e })?;
            if inside_d && bad {
                hits += 1;
            } else if first_miss.is_none() {
                first_miss = Some(y);
            }
        }
        out.push(VisitTubeAudit {
            start: iv.start,
            end: iv.end,
            volume_within_epsilon: tube.volume_formula <= cert.epsilon,
            length_within_limit: tube.arclength < length_limit,
            length_bounds_hold: curve.length_bounds_hold(c.l0_inf, c.l0_sup, 1e-6),
            overlap_free,
            length_limit,
            membership_samples,
            membership_hits: hits,
            membership_rate: if membership_samples > 0 {
                hits as f64 / membership_samples as f64
            } else {
                1.0
            },
            first_miss,
            tube,
        });
    }
    Ok(out)
}
