//! Global certificate from a ladder of bands `{c <= V <= 2c}`.
//!
//! Each band gets its own constants, bad-set measurement and thresholds;
//! the system is reported globally stable when every band passes. A finite
//! ladder can only sample "every c > 0", so the ladder is part of the report.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::badset::{analyze_badset, BadSetError};
use crate::bounds::{estimate_constants, BoundsError, ConstantsMode, DomainConstants};
use crate::certificate::{compute_alpha, compute_eps_thresholds, DISCLAIMER};
use crate::field::{spot_check_candidate, AnnularRegion, FieldError, System};
use crate::grid::GridSpec;
use crate::linalg::{ball_volume, unit_ball_volume};

/// Safety factor applied to the upper limits on `1 - eta(c)`.
pub const THETA: f64 = 0.99;
/// Bound on the per-iteration ratio of `V` in the global argument.
pub const CONTRACTION: f64 = 5.0 / 6.0;
pub const DEFAULT_BANDS: usize = 16;

#[derive(Debug, Error)]
pub enum GuasError {
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    BadSet(#[from] BadSetError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: &'static str, reason: String },
    #[error("sup b(c)/(a c) over the ladder is {0}, the global argument needs it below 1")]
    Hypothesis(f64),
    #[error("V(x) >= k0 |x|^2 fails: {0}")]
    K0(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuasParams {
    pub k0: f64,
    /// Global Lipschitz constant of `f`; the largest band estimate when absent.
    #[serde(default)]
    pub k1: Option<f64>,
    /// Global Lipschitz constant of `V_x`; the largest band estimate when absent.
    #[serde(default)]
    pub k2: Option<f64>,
    /// Explicit band levels; otherwise `bands` log-spaced values.
    #[serde(default)]
    pub ladder: Option<Vec<f64>>,
    #[serde(default = "default_bands")]
    pub bands: usize,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_bands() -> usize {
    DEFAULT_BANDS
}
fn default_kappa() -> f64 {
    1.0
}
fn default_delta() -> f64 {
    0.5
}

impl GuasParams {
    pub fn new(k0: f64) -> GuasParams {
        GuasParams {
            k0,
            k1: None,
            k2: None,
            ladder: None,
            bands: DEFAULT_BANDS,
            kappa: default_kappa(),
            delta: default_delta(),
        }
    }

    pub fn validate(&self) -> Result<(), GuasError> {
        let pos = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(GuasError::Parameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                })
            }
        };
        pos("k0", self.k0)?;
        pos("kappa", self.kappa)?;
        pos("delta", self.delta)?;
        if let Some(k1) = self.k1 {
            pos("k1", k1)?;
        }
        if let Some(k2) = self.k2 {
            pos("k2", k2)?;
        }
        if self.delta >= self.kappa {
            return Err(GuasError::Parameter {
                name: "delta",
                reason: format!("must be below kappa = {}", self.kappa),
            });
        }
        match &self.ladder {
            Some(l) if l.is_empty() || l.iter().any(|c| !(*c > 0.0 && c.is_finite())) => Err(GuasError::Parameter {
                name: "ladder",
                reason: "needs at least one positive finite level".into(),
            }),
            None if self.bands == 0 => Err(GuasError::Parameter {
                name: "bands",
                reason: "must be at least 1".into(),
            }),
            _ => Ok(()),
        }
    }
}

/// Iterations of the `5/6` contraction needed to bring `|x|` from `kappa`
/// down to `delta`.
pub fn iteration_count(kappa: f64, delta: f64) -> u64 {
    ((kappa.ln() - delta.ln()) / (6f64.ln() - 5f64.ln())).ceil() as u64
}

/// `K = a sqrt(k0) / (sqrt(2) (2 k1 + a) k2)`, so that `gamma_eta >= (1 - eta) K sqrt(c)` on every band.
pub fn k_constant(a: f64, k0: f64, k1: f64, k2: f64) -> f64 {
    a * k0.sqrt() / (2f64.sqrt() * (2.0 * k1 + a) * k2)
}

/// `eta(c)` from `1 - eta = THETA * min(L0_inf/(2 k1 K sqrt(c)), 1 - s, 1/2)`.
pub fn band_eta(l0_inf: f64, k1: f64, k: f64, c: f64, s: f64) -> f64 {
    1.0 - THETA * (l0_inf / (2.0 * k1 * k * c.sqrt())).min(1.0 - s).min(0.5)
}

/// `eps3 = L0_inf vol(B^{n-1}_gamma) c / (4 b)`, unbounded when `b <= 0`.
pub fn eps3(l0_inf: f64, gamma_star: f64, c: f64, b: f64, n: usize) -> f64 {
    if b <= 0.0 {
        f64::INFINITY
    } else {
        l0_inf * ball_volume(n - 1, gamma_star) * c / (4.0 * b)
    }
}

/// `eps4 = vol(B^n_r)` with `r = sqrt(k0 c / (32 k2^2))`.
pub fn eps4(k0: f64, k2: f64, c: f64, n: usize) -> f64 {
    ball_volume(n, (k0 * c / (32.0 * k2 * k2)).sqrt())
}

/// Constants of the closed-form threshold
/// `min(K1 L0_inf^n, K2 c^((n-1)/2) L0_inf, K3 c^(n/2))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KForm {
    pub k0_common: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub theta: f64,
}

impl KForm {
    pub fn new(a: f64, k0: f64, k1: f64, k2: f64, s: f64, n: usize) -> KForm {
        use std::f64::consts::PI;
        let kk = k_constant(a, k0, k1, k2);
        let common = ((2.0 / k1) * (PI - PI / 6.0))
            .min(a / (2.0 * k1 * k1 * k2))
            .min(1.0 / (4.0 * a));
        let chi = unit_ball_volume(n - 1);
        let m = (n - 1) as i32;
        KForm {
            k0_common: common,
            k1: common * chi * (THETA / (2.0 * k1)).powi(m),
            k2: common * chi * (THETA * (1.0 - s).min(0.5) * kk).powi(m),
            k3: unit_ball_volume(n) * (k0 / (32.0 * k2 * k2)).powf(n as f64 / 2.0),
            theta: THETA,
        }
    }

    pub fn threshold(&self, l0_inf: f64, c: f64, n: usize) -> f64 {
        let nf = n as f64;
        (self.k1 * l0_inf.powi(n as i32))
            .min(self.k2 * c.powf((nf - 1.0) / 2.0) * l0_inf)
            .min(self.k3 * c.powf(nf / 2.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    pub c: f64,
    pub constants: DomainConstants,
    pub eta: f64,
    pub gamma_star: f64,
    #[serde(with = "crate::num")]
    pub eps1: f64,
    #[serde(with = "crate::num")]
    pub eps2: f64,
    #[serde(with = "crate::num")]
    pub eps3: f64,
    pub eps4: f64,
    #[serde(with = "crate::num")]
    pub threshold: f64,
    pub k_form_threshold: f64,
    pub volume: f64,
    pub pass: bool,
    pub cause: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuasReport {
    pub system: String,
    pub rate_a: f64,
    pub k0: f64,
    pub k1: f64,
    pub k1_source: String,
    pub k2: f64,
    pub k2_source: String,
    #[serde(rename = "K")]
    pub k: f64,
    pub b_ratio_sup: f64,
    pub kappa: f64,
    pub delta: f64,
    pub ladder: Vec<f64>,
    pub level_proxy: f64,
    pub bands: Vec<BandReport>,
    pub k_form: KForm,
    pub iteration_count: u64,
    pub contraction_factor: f64,
    pub verdict: crate::certificate::Verdict,
    pub warnings: Vec<String>,
    pub note: String,
    pub disclaimer: String,
}

impl GuasReport {
    pub fn passed(&self) -> bool {
        self.verdict == crate::certificate::Verdict::Pass
    }
}

/// Largest `V(kappa u) / kappa^2` over sampled unit directions `u`, so that
/// `{|x| <= kappa}` sits inside `{V <= proxy kappa^2}` up to sampling.
pub fn level_proxy(sys: &System, kappa: f64, samples: usize, seed: u64) -> f64 {
    let n = sys.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x9a5);
    let mut best = 0.0f64;
    let mut x = vec![0.0; n];
    for i in 0..samples + 2 * n {
        if i < 2 * n {
            x.iter_mut().for_each(|v| *v = 0.0);
            x[i / 2] = if i % 2 == 0 { kappa } else { -kappa };
        } else {
            let r = loop {
                for v in x.iter_mut() {
                    *v = rng.gen_range(-1.0..1.0);
                }
                let r = crate::linalg::norm(&x);
                if r > 1e-3 && r <= 1.0 {
                    break r;
                }
            };
            x.iter_mut().for_each(|v| *v *= kappa / r);
        }
        if let Ok(v) = sys.v(&x) {
            best = best.max(v / (kappa * kappa));
        }
    }
    best
}

/// `count` log-spaced levels over `[lo, hi]`.
pub fn log_ladder(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

struct BandData {
    c: f64,
    constants: DomainConstants,
    volume: f64,
}

pub fn certify_guas(
    sys: &System,
    a: f64,
    params: &GuasParams,
    spec: &GridSpec,
    mode: ConstantsMode,
) -> Result<GuasReport, GuasError> {
    params.validate()?;
    if !(a > 0.0 && a.is_finite()) {
        return Err(GuasError::Parameter {
            name: "rate_a",
            reason: format!("must be positive, got {a}"),
        });
    }
    let n = sys.dim();
    let proxy = level_proxy(sys, params.kappa, 4096, spec.seed);
    let ladder = match &params.ladder {
        Some(l) => l.clone(),
        None => log_ladder(
            params.delta * params.delta * params.k0,
            params.kappa * params.kappa * proxy,
            params.bands,
        ),
    };
    let band_spec = GridSpec {
        bounds: None,
        ..spec.clone()
    };

    let mut data = Vec::with_capacity(ladder.len());
    for &c in &ladder {
        let region = AnnularRegion::band(c)?;
        let constants = estimate_constants(sys, &region, &band_spec, mode)?;
        let volume = analyze_badset(sys, &region, a, 1.0, &band_spec)?.epsilon;
        data.push(BandData { c, constants, volume });
    }

    let top = data
        .iter()
        .max_by(|x, y| x.c.total_cmp(&y.c))
        .expect("non-empty ladder");
    spot_check_candidate(sys.candidate.as_ref(), &top.constants.grid.bounds, 2000, spec.seed)
        .map_err(GuasError::K0)?;
    if let Some(k0) = sys.candidate.quadratic_lower_k0() {
        if params.k0 > k0 * (1.0 + 1e-12) {
            return Err(GuasError::K0(format!(
                "configured k0 = {} exceeds the candidate's own bound {k0}",
                params.k0
            )));
        }
    }
    spot_check_k0(sys, params.k0, &top.constants.grid.bounds, spec.seed)?;

    let s = data
        .iter()
        .map(|d| d.constants.b.value / (a * d.c))
        .fold(f64::NEG_INFINITY, f64::max);
    if s >= 1.0 {
        return Err(GuasError::Hypothesis(s));
    }

    let max_l1 = data.iter().map(|d| d.constants.l1.value).fold(0.0, f64::max);
    let max_m2 = data.iter().map(|d| d.constants.m2.value).fold(0.0, f64::max);
    let (k1, k1_source) = match params.k1 {
        Some(v) => (v, "configured".to_string()),
        None => (max_l1, "largest band estimate of L1".to_string()),
    };
    let (k2, k2_source) = match params.k2 {
        Some(v) => (v, "configured".to_string()),
        None => (max_m2, "largest band estimate of M2".to_string()),
    };
    let mut warnings = Vec::new();
    if max_l1 > k1 * (1.0 + 1e-9) {
        warnings.push(format!("band estimate L1 = {max_l1} exceeds k1 = {k1}"));
    }
    if max_m2 > k2 * (1.0 + 1e-9) {
        warnings.push(format!("band estimate M2 = {max_m2} exceeds k2 = {k2}"));
    }
    let kk = k_constant(a, params.k0, k1, k2);
    let k_form = KForm::new(a, params.k0, k1, k2, s, n);

    let bands: Vec<BandReport> = data
        .into_iter()
        .map(|d| evaluate_band(d, a, params.k0, k1, k2, kk, s, n, &k_form))
        .collect();
    let all = bands.iter().all(|b| b.pass);
    Ok(GuasReport {
        system: sys.description.clone(),
        rate_a: a,
        k0: params.k0,
        k1,
        k1_source,
        k2,
        k2_source,
        k: kk,
        b_ratio_sup: s,
        kappa: params.kappa,
        delta: params.delta,
        ladder,
        level_proxy: proxy,
        bands,
        k_form,
        iteration_count: iteration_count(params.kappa, params.delta),
        contraction_factor: CONTRACTION,
        verdict: if all {
            crate::certificate::Verdict::Pass
        } else {
            crate::certificate::Verdict::Fail
        },
        warnings,
        note: "the ladder is a finite sample of band levels; bands outside it are not checked".into(),
        disclaimer: DISCLAIMER.into(),
    })
}

fn spot_check_k0(sys: &System, k0: f64, bounds: &[(f64, f64)], seed: u64) -> Result<(), GuasError> {
    let n = sys.dim();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x40);
    let mut x = vec![0.0; n];
    for _ in 0..2000 {
        for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *xi = rng.gen_range(lo..=hi);
        }
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let v = sys.v(&x).map_err(|e| GuasError::K0(e.to_string()))?;
        if v < k0 * r2 * (1.0 - 1e-12) {
            return Err(GuasError::K0(format!("V({x:?}) = {v} < k0 |x|^2 = {}", k0 * r2)));
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate_band(
    d: BandData,
    a: f64,
    k0: f64,
    k1: f64,
    k2: f64,
    kk: f64,
    s: f64,
    n: usize,
    k_form: &KForm,
) -> BandReport {
    let c = d.c;
    let cv = d.constants.values();
    let eta = band_eta(cv.l0_inf, k1, kk, c, s);
    let gamma_star = (1.0 - eta) * kk * c.sqrt();
    let e4 = eps4(k0, k2, c, n);
    let e3 = eps3(cv.l0_inf, gamma_star, c, cv.b, n);
    let k_form_threshold = k_form.threshold(cv.l0_inf, c, n);
    let mut report = BandReport {
        c,
        eta,
        gamma_star,
        eps1: f64::NAN,
        eps2: f64::NAN,
        eps3: e3,
        eps4: e4,
        threshold: 0.0,
        k_form_threshold,
        volume: d.volume,
        pass: false,
        cause: None,
        constants: d.constants,
    };
    if !(cv.l0_inf > 0.0) {
        report.cause = Some("vanishing field: L0_inf = 0 on the band, the band is inconclusive".into());
        return report;
    }
    match compute_eps_thresholds(&cv, compute_alpha(&cv), gamma_star, eta, a, c, n) {
        Ok((e1, e2, _)) => {
            report.eps1 = e1;
            report.eps2 = e2;
            report.threshold = e1.min(e2).min(e3).min(e4);
            if d.volume < report.threshold {
                report.pass = true;
            } else {
                report.cause = Some(format!(
                    "bad-set volume {:e} is not below the threshold {:e}",
                    d.volume, report.threshold
                ));
            }
        }
        Err(e) => report.cause = Some(e.to_string()),
    }
    report
}
