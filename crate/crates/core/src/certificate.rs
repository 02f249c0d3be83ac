//! Certificate quantities for one annular region and the end-to-end
//! `certify` pipeline.
//!
//! The closed forms are exposed as free functions so they can be evaluated
//! on hand-picked constants as well as on estimated ones.

use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::badset::{analyze_on_grid, is_bad, BadSetAnalysis, BadSetError, BadSetSummary};
use crate::bounds::{estimate_constants, region_grid, BoundsError, ConstantValues, ConstantsMode, DomainConstants};
use crate::field::{AnnularRegion, System};
use crate::grid::GridSpec;
use crate::linalg::{ball_volume, unit_ball_volume};
use crate::rate::{RateFunctions, K_CAP};

pub const DISCLAIMER: &str = "Region constants are grid point estimates (or closed forms where \
the system provides them), not verified bounds; the verdict is only as sound as these estimates.";

/// Step of the eta scan.
pub const ETA_STEP: f64 = 0.01;

#[derive(Debug, Error)]
pub enum CertError {
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    BadSet(#[from] BadSetError),
    #[error("turning-radius check failed: gamma_eta = {gamma} is not below L0_inf/L1 = {limit}")]
    TurningRadius { gamma: f64, limit: f64 },
    #[error("no feasible eta: {reason}")]
    InfeasibleEta { reason: String },
    #[error("rate a must be positive, got {0}")]
    Rate(f64),
    #[error("the capped branch of k is reached for eps = {eps}, which should be impossible on a passing certificate")]
    CapReached { eps: f64 },
}

/// `alpha = M1 L1 + M2 L0_sup`, a Lipschitz constant of `V'` on the region.
pub fn compute_alpha(c: &ConstantValues) -> f64 {
    c.m1 * c.l1 + c.m2 * c.l0_sup
}

/// Radius of the balls around `Omega_eta` points that stay inside `Omega_1`.
pub fn compute_gamma_eta(eta: f64, a: f64, c1: f64, alpha: f64, m1: f64) -> f64 {
    (1.0 - eta) * a * c1 / (alpha + eta * a * m1)
}

/// Largest admissible tube radius, `L0_inf / L1`.
pub fn turning_radius(c: &ConstantValues) -> f64 {
    if c.l1 == 0.0 {
        f64::INFINITY
    } else {
        c.l0_inf / c.l1
    }
}

/// Volume of the (n-1)-ball of radius `gamma`, the cross-section of a tube.
pub fn cross_section(n: usize, gamma: f64) -> f64 {
    ball_volume(n - 1, gamma)
}

/// Volume thresholds `(eps1, eps2, min(eps1, eps2))`.
pub fn compute_eps_thresholds(
    c: &ConstantValues,
    alpha: f64,
    gamma: f64,
    eta: f64,
    a: f64,
    c1: f64,
    n: usize,
) -> Result<(f64, f64, f64), CertError> {
    let limit = turning_radius(c);
    if !(gamma < limit) {
        return Err(CertError::TurningRadius { gamma, limit });
    }
    let vol = cross_section(n, gamma);
    if vol == 0.0 {
        return Ok((0.0, 0.0, 0.0));
    }
    let eps1 = if c.l1 == 0.0 {
        f64::INFINITY
    } else {
        vol * (2.0 * c.l0_inf / c.l1) * (std::f64::consts::PI - (c.l1 * gamma / c.l0_inf).asin())
    };
    let eps2 = if c.b <= 0.0 {
        f64::INFINITY
    } else {
        let q = c.b + eta * a * c1;
        vol * c.l0_inf * q * q / (alpha * c.l0_sup * c.b)
    };
    Ok((eps1, eps2, eps1.min(eps2)))
}

/// `g = b / (L0_inf vol(B^{n-1}_gamma))` (0 when `b <= 0`) and `h = M1 chi(n)^{-1/n}`.
pub fn compute_g_h(c: &ConstantValues, gamma: f64, n: usize) -> (f64, f64) {
    let den = c.l0_inf * cross_section(n, gamma);
    let g = if c.b <= 0.0 {
        0.0
    } else if den == 0.0 {
        f64::INFINITY
    } else {
        c.b / den
    };
    let h = c.m1 * unit_ball_volume(n).powf(-1.0 / n as f64);
    (g, h)
}

/// Time per unit bad-set volume a trajectory can spend in one visit,
/// `1 / (L0_inf vol(B^{n-1}_gamma))`.
pub fn dwell_per_volume(c: &ConstantValues, gamma: f64, n: usize) -> f64 {
    let den = c.l0_inf * cross_section(n, gamma);
    if den == 0.0 {
        f64::INFINITY
    } else {
        1.0 / den
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaStrategy {
    #[default]
    Auto,
    Fixed(f64),
}

impl EtaStrategy {
    pub fn describe(&self) -> String {
        match self {
            EtaStrategy::Auto => "auto".into(),
            EtaStrategy::Fixed(v) => format!("fixed:{v}"),
        }
    }
}

fn eta_feasible(c: &ConstantValues, a: f64, c1: f64, eta: f64) -> bool {
    let alpha = compute_alpha(c);
    eta > 0.0
        && eta < 1.0
        && c.b < eta * a * c1
        && compute_gamma_eta(eta, a, c1, alpha, c.m1) < turning_radius(c)
}

fn eps_bar_at(c: &ConstantValues, a: f64, c1: f64, n: usize, eta: f64) -> f64 {
    let alpha = compute_alpha(c);
    let gamma = compute_gamma_eta(eta, a, c1, alpha, c.m1);
    compute_eps_thresholds(c, alpha, gamma, eta, a, c1, n).map_or(f64::NEG_INFINITY, |t| t.2)
}

/// Picks `eta`. The automatic strategy scans `eta_min + j * 0.01` below 1,
/// where `eta_min` is the larger of `b/(a c1)` and the turning-radius
/// estimate `1 - L0_inf (alpha + a M1) / (L1 a c1)`, and returns the feasible
/// value with the largest `min(eps1, eps2)` (first one on ties).
pub fn select_eta(c: &ConstantValues, a: f64, c1: f64, n: usize, strategy: EtaStrategy) -> Result<f64, CertError> {
    if !(a > 0.0) {
        return Err(CertError::Rate(a));
    }
    if c.b >= a * c1 {
        return Err(CertError::InfeasibleEta {
            reason: format!("b = {} is not below a c1 = {}", c.b, a * c1),
        });
    }
    if !(c.l0_inf > 0.0) {
        return Err(CertError::InfeasibleEta {
            reason: "the field vanishes on the region (L0_inf = 0)".into(),
        });
    }
    let alpha = compute_alpha(c);
    match strategy {
        EtaStrategy::Fixed(eta) => {
            if eta_feasible(c, a, c1, eta) {
                Ok(eta)
            } else {
                Err(CertError::InfeasibleEta {
                    reason: format!(
                        "fixed eta = {eta}: need 0 < eta < 1, b < eta a c1 ({} < {}) and gamma_eta < L0_inf/L1 ({} < {})",
                        c.b,
                        eta * a * c1,
                        compute_gamma_eta(eta, a, c1, alpha, c.m1),
                        turning_radius(c)
                    ),
                })
            }
        }
        EtaStrategy::Auto => {
            let from_b = c.b / (a * c1);
            let from_turn = if c.l1 > 0.0 {
                1.0 - c.l0_inf * (alpha + a * c.m1) / (c.l1 * a * c1)
            } else {
                0.0
            };
            let start = from_b.max(from_turn).max(0.0);
            let mut best: Option<(f64, f64)> = None;
            let mut j = 0usize;
            loop {
                let eta = start + j as f64 * ETA_STEP;
                j += 1;
                if eta >= 1.0 {
                    break;
                }
                if !eta_feasible(c, a, c1, eta) {
                    continue;
                }
                let e = eps_bar_at(c, a, c1, n, eta);
                if best.map_or(true, |b| e > b.1) {
                    best = Some((eta, e));
                }
            }
            best.map(|b| b.0).ok_or_else(|| CertError::InfeasibleEta {
                reason: format!(
                    "no eta in [{start}, 1) satisfies both b < eta a c1 (binding from b/(a c1) = {from_b}) and gamma_eta < L0_inf/L1 (binding from {from_turn})"
                ),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Checks {
    pub b_lt_a_c1: bool,
    pub b_lt_eta_a_c1: bool,
    pub gamma_lt_turning: bool,
    pub eps_lt_eps_bar: bool,
    pub nonvanishing: bool,
    #[serde(rename = "omega_inside_D")]
    pub omega_inside_d: bool,
}

impl Checks {
    pub fn all(&self) -> bool {
        self.b_lt_a_c1
            && self.b_lt_eta_a_c1
            && self.gamma_lt_turning
            && self.eps_lt_eps_bar
            && self.nonvanishing
            && self.omega_inside_d
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Values following the example-section conventions (`max` of the two
/// thresholds, `h = M1 gamma_eta` without the volume factor). Reported for
/// comparison only; the verdict never uses them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacyValues {
    #[serde(with = "crate::num")]
    pub eps_bar_max: f64,
    pub h_gamma: f64,
    #[serde(with = "crate::num")]
    pub attractor_level: f64,
    #[serde(with = "crate::num")]
    pub admissible_start_level: f64,
    #[serde(with = "crate::num")]
    pub attractor_radius: f64,
}

/// Sampling check that the `gamma_eta`-neighbourhood of `Omega_eta`,
/// intersected with the region, lies in `Omega_1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighbourhoodCheck {
    pub centers: usize,
    pub samples: usize,
    pub violations: usize,
    pub outside_region: usize,
    pub first_violation: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub system: String,
    pub dimension: usize,
    pub region: AnnularRegion,
    pub rate_a: f64,
    pub eta: f64,
    pub eta_strategy: String,
    pub constants: DomainConstants,
    pub alpha: f64,
    pub gamma_eta: f64,
    #[serde(with = "crate::num")]
    pub turning_radius: f64,
    #[serde(with = "crate::num")]
    pub eps1: f64,
    #[serde(with = "crate::num")]
    pub eps2: f64,
    #[serde(with = "crate::num")]
    pub eps_bar: f64,
    #[serde(with = "crate::num")]
    pub g: f64,
    pub h: f64,
    pub epsilon: f64,
    pub checks: Checks,
    pub verdict: Verdict,
    pub failure_reasons: Vec<String>,
    /// `h eps^(1/n)`.
    pub h_margin: f64,
    /// `g eps`, the largest rise of `V` along a certified trajectory.
    #[serde(with = "crate::num")]
    pub overshoot_margin: f64,
    #[serde(with = "crate::num")]
    pub attractor_level: f64,
    #[serde(with = "crate::num")]
    pub admissible_start_level: f64,
    #[serde(with = "crate::num")]
    pub attractor_radius: f64,
    #[serde(with = "crate::num")]
    pub dwell_time_bound: f64,
    #[serde(with = "crate::num")]
    pub lambda: f64,
    pub rate: RateFunctions,
    pub legacy: LegacyValues,
    pub omega: BadSetSummary,
    pub omega_eta: BadSetSummary,
    pub omega_zero_nonempty: bool,
    pub neighbourhood_check: NeighbourhoodCheck,
    pub warnings: Vec<String>,
    pub disclaimer: String,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    /// The envelope for `V(x(t))` from a start level `v0`.
    pub fn envelope(&self, v0: f64, t: f64) -> f64 {
        self.rate.envelope(v0, t, self.epsilon)
    }

    /// Human-readable summary. Alternative readings of the threshold and of
    /// the margin `h` are listed next to the ones the verdict uses.
    pub fn summary_lines(&self) -> Vec<String> {
        let c = self.constants.values();
        let mut out = vec![
            format!("system: {} (n = {})", self.system, self.dimension),
            format!(
                "region: c1 = {}, c2 = {}, a = {}, eta = {} ({})",
                self.region.c1, self.region.c2, self.rate_a, self.eta, self.eta_strategy
            ),
            format!(
                "constants: L0_sup = {:.6}, L0_inf = {:.6}, L1 = {:.4}, M1 = {:.6}, M2 = {:.6}, b = {:.6}",
                c.l0_sup, c.l0_inf, c.l1, c.m1, c.m2, c.b
            ),
            format!(
                "alpha = {:.4}, gamma_eta = {:.6e}, turning radius = {:.6e}",
                self.alpha, self.gamma_eta, self.turning_radius
            ),
            format!("eps1 = {:.6e}, eps2 = {:.6e}", self.eps1, self.eps2),
            format!(
                "eps_bar = min(eps1, eps2) = {:.6e} [used]; max(eps1, eps2) = {:.6e} [not used]",
                self.eps_bar, self.legacy.eps_bar_max
            ),
            format!("measured eps = {:.6e} ({} components)", self.epsilon, self.omega.components.len()),
            format!(
                "h = {:.6} (unit-ball form) [used], h = M1 gamma_eta = {:.6} [not used]",
                self.h, self.legacy.h_gamma
            ),
            format!(
                "attractor level = {:.6}, radius = {:.4} [used]; with h = M1 gamma_eta: level = {:.6}, radius = {:.4}",
                self.attractor_level, self.attractor_radius, self.legacy.attractor_level, self.legacy.attractor_radius
            ),
            format!(
                "admissible start level = {:.6}, overshoot g eps = {:.6e}, dwell bound = {:.6e}, lambda = {:.6}",
                self.admissible_start_level, self.overshoot_margin, self.dwell_time_bound, self.lambda
            ),
            format!("verdict: {:?}", self.verdict),
        ];
        out.extend(self.failure_reasons.iter().map(|r| format!("  reason: {r}")));
        out.extend(self.warnings.iter().map(|w| format!("  warning: {w}")));
        out
    }
}

/// Everything `certify` computes, including the full bad-set analyses.
#[derive(Debug, Clone)]
pub struct CertifyOutput {
    pub certificate: Certificate,
    pub omega: BadSetAnalysis,
    pub omega_eta: BadSetAnalysis,
}

const NEIGHBOUR_CENTERS: usize = 2000;
const NEIGHBOUR_DRAWS: usize = 16;

fn neighbourhood_check(
    sys: &System,
    region: &AnnularRegion,
    omega_eta: &BadSetAnalysis,
    a: f64,
    gamma: f64,
    seed: u64,
) -> NeighbourhoodCheck {
    let n = sys.dim();
    let cells = &omega_eta.cells;
    let stride = (cells.len() / NEIGHBOUR_CENTERS).max(1);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x1e44a);
    let mut check = NeighbourhoodCheck {
        centers: 0,
        samples: 0,
        violations: 0,
        outside_region: 0,
        first_violation: None,
    };
    let mut y = vec![0.0; n];
    for &cell in cells.iter().step_by(stride) {
        let x = omega_eta.cell_center(cell);
        check.centers += 1;
        let mut offsets: Vec<Vec<f64>> = Vec::new();
        for ax in 0..n {
            for s in [1.0, -1.0] {
                let mut u = vec![0.0; n];
                u[ax] = s * gamma;
                offsets.push(u);
            }
        }
        while offsets.len() < 2 * n + NEIGHBOUR_DRAWS {
            let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = crate::linalg::norm(&u);
            if r > 0.0 && r <= 1.0 {
                let scale = gamma * rng.gen_range(0.0f64..1.0).powf(1.0 / n as f64) / r;
                offsets.push(u.iter().map(|v| v * scale).collect());
            }
        }
        for off in &offsets {
            for i in 0..n {
                y[i] = x[i] + off[i];
            }
            check.samples += 1;
            let Ok(v) = sys.v(&y) else { continue };
            if !region.contains_level(v) {
                check.outside_region += 1;
                continue;
            }
            let in_omega1 = is_bad(sys, &y, a, 1.0).unwrap_or(false);
            if !in_omega1 {
                check.violations += 1;
                if check.first_violation.is_none() {
                    check.first_violation = Some(y.clone());
                }
            }
        }
    }
    check
}

/// Runs the full single-region pipeline: constants, bad sets, eta, the
/// thresholds, the guaranteed levels and the verdict.
pub fn certify(
    sys: &System,
    region: &AnnularRegion,
    a: f64,
    spec: &GridSpec,
    strategy: EtaStrategy,
    mode: ConstantsMode,
) -> Result<CertifyOutput, CertError> {
    if !(a > 0.0 && a.is_finite()) {
        return Err(CertError::Rate(a));
    }
    let constants = estimate_constants(sys, region, spec, mode)?;
    certify_with_constants(sys, region, a, spec, strategy, constants)
}

/// As [`certify`], with the region constants supplied by the caller.
pub fn certify_with_constants(
    sys: &System,
    region: &AnnularRegion,
    a: f64,
    spec: &GridSpec,
    strategy: EtaStrategy,
    constants: DomainConstants,
) -> Result<CertifyOutput, CertError> {
    let n = sys.dim();
    let c = constants.values();
    let grid = region_grid(sys, region, spec)?;
    let omega = analyze_on_grid(sys, region, a, 1.0, grid.clone(), spec.refinement, spec.refine_factor)?;
    let eta = select_eta(&c, a, region.c1, n, strategy)?;
    let alpha = compute_alpha(&c);
    let gamma = compute_gamma_eta(eta, a, region.c1, alpha, c.m1);
    let (eps1, eps2, eps_bar) = compute_eps_thresholds(&c, alpha, gamma, eta, a, region.c1, n)?;
    let (g, h) = compute_g_h(&c, gamma, n);
    let omega_eta = analyze_on_grid(sys, region, a, eta, grid, spec.refinement, spec.refine_factor)?;
    let epsilon = omega.epsilon;

    let rate = RateFunctions {
        b: c.b,
        alpha,
        l0_sup: c.l0_sup,
        eta,
        a,
        c1: region.c1,
        c2: region.c2,
        g,
        dwell_per_volume: dwell_per_volume(&c, gamma, n),
        k_cap: K_CAP,
    };
    let neighbourhood = neighbourhood_check(sys, region, &omega_eta, a, gamma, spec.seed);

    let checks = Checks {
        b_lt_a_c1: c.b < a * region.c1,
        b_lt_eta_a_c1: c.b < eta * a * region.c1,
        gamma_lt_turning: gamma < turning_radius(&c),
        eps_lt_eps_bar: epsilon < eps_bar,
        nonvanishing: c.l0_inf > 0.0,
        omega_inside_d: neighbourhood.violations == 0,
    };
    let h_margin = h * epsilon.powf(1.0 / n as f64);
    let overshoot = g * epsilon;
    let attractor_level = region.c1 + h_margin + overshoot;
    let start_level = region.c2 - h_margin - overshoot;

    let mut reasons = Vec::new();
    if !checks.eps_lt_eps_bar {
        reasons.push(format!(
            "measured bad-set volume {epsilon:e} is not below min(eps1, eps2) = {eps_bar:e}"
        ));
    }
    if !checks.nonvanishing {
        reasons.push("the field vanishes on the region".into());
    }
    if !checks.omega_inside_d {
        reasons.push(format!(
            "{} of {} sampled points within gamma_eta of the eta bad set lie in the region but outside the bad set",
            neighbourhood.violations, neighbourhood.samples
        ));
    }
    if !checks.b_lt_a_c1 || !checks.b_lt_eta_a_c1 || !checks.gamma_lt_turning {
        reasons.push("hypotheses on b or gamma_eta fail".into());
    }
    if checks.all() && !(attractor_level < start_level) {
        reasons.push(format!(
            "attractor level {attractor_level} is not below the admissible start level {start_level}"
        ));
    }
    let verdict = if checks.all() && reasons.is_empty() {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let lambda = rate.lambda(epsilon);
    if verdict == Verdict::Pass && rate.cap_reached(epsilon) {
        return Err(CertError::CapReached { eps: epsilon });
    }

    let mut warnings = Vec::new();
    if omega.near_equality_fraction >= 0.1 {
        warnings.push(format!(
            "{:.1}% of the region decays at exactly the rate a up to rounding; these points are treated as outside the bad set, consider a slightly smaller a",
            100.0 * omega.near_equality_fraction
        ));
    }
    if constants.l1_pair_lower > constants.l1.value * (1.0 + 1e-9) {
        warnings.push(format!(
            "a sampled difference quotient {} exceeds the Lipschitz estimate {}",
            constants.l1_pair_lower, constants.l1.value
        ));
    }
    if neighbourhood.outside_region > 0 {
        warnings.push(format!(
            "{} sampled points within gamma_eta of the eta bad set lie outside the region",
            neighbourhood.outside_region
        ));
    }

    let radius = |level: f64| sys.candidate.level_radius(level).unwrap_or(f64::NAN);
    let legacy_h = c.m1 * gamma;
    let legacy_attractor = region.c1 + legacy_h + overshoot;
    let legacy = LegacyValues {
        eps_bar_max: eps1.max(eps2),
        h_gamma: legacy_h,
        attractor_level: legacy_attractor,
        admissible_start_level: region.c2 - legacy_h - overshoot,
        attractor_radius: radius(legacy_attractor),
    };
    let certificate = Certificate {
        system: sys.description.clone(),
        dimension: n,
        region: *region,
        rate_a: a,
        eta,
        eta_strategy: strategy.describe(),
        alpha,
        gamma_eta: gamma,
        turning_radius: turning_radius(&c),
        eps1,
        eps2,
        eps_bar,
        g,
        h,
        epsilon,
        checks,
        verdict,
        failure_reasons: reasons,
        h_margin,
        overshoot_margin: overshoot,
        attractor_level,
        admissible_start_level: start_level,
        attractor_radius: radius(attractor_level),
        dwell_time_bound: rate.dwell_bound(epsilon),
        lambda,
        rate,
        legacy,
        omega: omega.summary(),
        omega_eta: omega_eta.summary(),
        omega_zero_nonempty: constants.b.grid_value > 0.0,
        neighbourhood_check: neighbourhood,
        warnings,
        disclaimer: DISCLAIMER.into(),
        constants,
    };
    Ok(CertifyOutput {
        certificate,
        omega,
        omega_eta,
    })
}
