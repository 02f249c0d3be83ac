//! Decay-rate bounds along certified trajectories.
//!
//! `phi(tau)` bounds the change of `V` over one visit to the bad set that
//! lasts `tau`; `k(t)` turns it into an exponential rate over a window of
//! length `t`; `lambda(eps)` is the worst such rate over all visits whose
//! duration is allowed by a bad-set volume `eps`.

use serde::{Deserialize, Serialize};

/// Value of `k` when `1 + phi/c2` is not positive. Unreachable on certified
/// runs, where `|phi| < c2`.
pub const K_CAP: f64 = 1e6;

/// Number of sample points in the `delta` grid behind `lambda`.
pub const LAMBDA_GRID: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFunctions {
    pub b: f64,
    pub alpha: f64,
    pub l0_sup: f64,
    pub eta: f64,
    pub a: f64,
    pub c1: f64,
    pub c2: f64,
    /// Overshoot coefficient `g` (`g eps` bounds the rise of `V`).
    pub g: f64,
    /// Time per unit bad-set volume: a visit to the bad set of volume `eps`
    /// lasts at most `eps * dwell_per_volume` (this equals `g / b` when `b > 0`).
    pub dwell_per_volume: f64,
    pub k_cap: f64,
}

impl RateFunctions {
    fn drift(&self) -> f64 {
        self.eta * self.a * self.c1
    }

    /// Duration at which `phi` switches from its quadratic to its linear branch.
    pub fn tau_switch(&self) -> f64 {
        2.0 * (self.b + self.drift()) / (self.alpha * self.l0_sup)
    }

    pub fn phi(&self, tau: f64) -> f64 {
        let s = self.alpha * self.l0_sup;
        let q = self.b + self.drift();
        if tau * s < 2.0 * q {
            0.25 * tau * tau * s - tau * self.drift()
        } else {
            self.b * tau - q * q / s
        }
    }

    /// Both branches of `phi` at the switch point, for continuity checks.
    pub fn phi_branches_at_switch(&self) -> (f64, f64) {
        let s = self.alpha * self.l0_sup;
        let q = self.b + self.drift();
        let t = self.tau_switch();
        (0.25 * t * t * s - t * self.drift(), self.b * t - q * q / s)
    }

    pub fn k(&self, t: f64) -> f64 {
        if t == 0.0 {
            return self.drift() / self.c2;
        }
        let p = self.phi(t);
        if p > -self.c2 {
            -(p / self.c2).ln_1p() / t
        } else {
            self.k_cap
        }
    }

    /// Whether the capped branch of `k` is hit for some visit length allowed
    /// by `eps`.
    pub fn cap_reached(&self, eps: f64) -> bool {
        self.delta_grid(eps).any(|t| t > 0.0 && self.phi(t) <= -self.c2)
    }

    /// Longest visit to the bad set allowed by volume `eps`.
    pub fn dwell_bound(&self, eps: f64) -> f64 {
        eps * self.dwell_per_volume
    }

    fn delta_grid(&self, eps: f64) -> impl Iterator<Item = f64> + '_ {
        (0..LAMBDA_GRID).map(move |i| self.dwell_bound(eps * i as f64 / (LAMBDA_GRID - 1) as f64))
    }

    pub fn lambda(&self, eps: f64) -> f64 {
        self.delta_grid(eps).map(|t| self.k(t)).fold(f64::INFINITY, f64::min)
    }

    /// Upper envelope for `V(x(t))` starting from `v0` when the largest bad
    /// component has volume `eps`.
    pub fn envelope(&self, v0: f64, t: f64, eps: f64) -> f64 {
        let l = self.lambda(eps);
        let ge = self.g * eps;
        (2.0 * l * self.dwell_bound(eps)).exp() * (v0 + 0.5 * ge) * (-l * t).exp() + 0.5 * ge
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn example() -> RateFunctions {
        let b = 0.0128;
        let l0_inf = 1.4;
        let gamma = 0.0021;
        let vol = 2.0 * gamma;
        RateFunctions {
            b,
            alpha: 186.0,
            l0_sup: 5f64.sqrt(),
            eta: 0.6,
            a: 2.0,
            c1: 0.49,
            c2: 1.0,
            g: b / (l0_inf * vol),
            dwell_per_volume: 1.0 / (l0_inf * vol),
            k_cap: K_CAP,
        }
    }

    #[test]
    fn phi_basics() {
        let r = example();
        assert_eq!(r.phi(0.0), 0.0);
        let (p, q) = r.phi_branches_at_switch();
        let want = (r.b * r.b - (0.6 * 2.0 * 0.49f64).powi(2)) / (r.alpha * r.l0_sup);
        assert!((p - want).abs() <= 1e-12 * want.abs());
        assert!((q - want).abs() <= 1e-12 * want.abs());
    }

    #[test]
    fn k_at_zero_and_lambda_bound() {
        let r = example();
        assert_eq!(r.k(0.0), 0.6 * 2.0 * 0.49 / 1.0);
        assert_eq!(r.lambda(0.0), r.k(0.0));
        assert!(r.lambda(3e-4) <= r.lambda(0.0));
        assert!(r.lambda(0.0) < r.eta * r.a);
        assert!(!r.cap_reached(3.86e-4));
    }

    #[test]
    fn envelope_at_zero_volume_is_plain_exponential() {
        let r = example();
        let e = r.envelope(0.9, 1.5, 0.0);
        assert!((e - 0.9 * (-r.k(0.0) * 1.5).exp()).abs() < 1e-15);
    }
}
