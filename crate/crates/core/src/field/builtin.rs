use std::collections::BTreeMap;
use std::sync::Arc;

use super::{
    AnalyticBounds, AnnularRegion, Candidate, FieldError, KinkSphere, KnownConstants, System,
    VectorField,
};
use crate::expr::EvalError;

pub type BuiltinParams = BTreeMap<String, f64>;

/// Rate profile `lambda(x) = gain * min(|x - center| / radius, 1) - offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile {
    pub center: [f64; 2],
    pub radius: f64,
    pub gain: f64,
    pub offset: f64,
}

impl RateProfile {
    fn distance(&self, x: &[f64]) -> f64 {
        (x[0] - self.center[0]).hypot(x[1] - self.center[1])
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r = self.distance(x) / self.radius;
        self.gain * if 1.0 < r { 1.0 } else { r } - self.offset
    }

    /// Range of the profile over the annulus `d1 <= |x| <= d2`.
    fn range_on_annulus(&self, d1: f64, d2: f64) -> (f64, f64) {
        let cn = self.center[0].hypot(self.center[1]);
        let rmin = (d1 - cn).max(cn - d2).max(0.0);
        let rmax = cn + d2;
        let at = |r: f64| self.gain * (r / self.radius).min(1.0) - self.offset;
        (at(rmin), at(rmax))
    }
}

/// Planar spiral `f(x) = [-l(x) x1 + mu x2, -mu x1 - l(x) x2]`, where `l` is
/// either identically 1 or a [`RateProfile`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpiralField {
    pub mu: f64,
    pub profile: Option<RateProfile>,
}

impl SpiralField {
    fn rate(&self, x: &[f64]) -> f64 {
        self.profile.as_ref().map_or(1.0, |p| p.value(x))
    }
}

impl VectorField for SpiralField {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        let l = self.rate(x);
        out[0] = -l * x[0] + self.mu * x[1];
        out[1] = -self.mu * x[0] - l * x[1];
        Ok(())
    }

    fn jacobian(&self, x: &[f64], out: &mut [f64]) -> Result<bool, EvalError> {
        let l = self.rate(x);
        out.copy_from_slice(&[-l, self.mu, -self.mu, -l]);
        if let Some(p) = &self.profile {
            let r = p.distance(x);
            if r <= p.radius {
                let s = p.gain / p.radius;
                let (u0, u1) = if r > 0.0 {
                    ((x[0] - p.center[0]) / r, (x[1] - p.center[1]) / r)
                } else {
                    (1.0, 0.0)
                };
                let (g0, g1) = (s * u0, s * u1);
                out[0] -= x[0] * g0;
                out[1] -= x[0] * g1;
                out[2] -= x[1] * g0;
                out[3] -= x[1] * g1;
            }
        }
        Ok(true)
    }

    fn branch_signature(&self, x: &[f64], sig: &mut Vec<u8>) -> Result<(), EvalError> {
        sig.clear();
        if let Some(p) = &self.profile {
            sig.push(u8::from(p.distance(x) > p.radius));
        }
        Ok(())
    }
}

/// Linear field `f(x) = A x` with a row-major `A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    n: usize,
    a: Vec<f64>,
}

impl LinearField {
    pub fn new(n: usize, a: Vec<f64>) -> Result<LinearField, FieldError> {
        if a.len() != n * n || n == 0 {
            return Err(FieldError::Shape(format!(
                "linear field needs {} entries, got {}",
                n * n,
                a.len()
            )));
        }
        Ok(LinearField { n, a })
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (i, o) in out.iter_mut().enumerate().take(self.n) {
            *o = crate::linalg::dot(&self.a[i * self.n..(i + 1) * self.n], x);
        }
        Ok(())
    }

    fn jacobian(&self, _x: &[f64], out: &mut [f64]) -> Result<bool, EvalError> {
        out.copy_from_slice(&self.a);
        Ok(true)
    }
}

/// `V(x) = |x|^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NormSquared {
    pub n: usize,
}

impl Candidate for NormSquared {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> Result<f64, EvalError> {
        Ok(x.iter().take(self.n).map(|a| a * a).sum())
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) -> Result<(), EvalError> {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = 2.0 * xi;
        }
        Ok(())
    }

    fn hessian(&self, _x: &[f64], out: &mut [f64]) -> Result<bool, EvalError> {
        out.fill(0.0);
        for i in 0..self.n {
            out[i * self.n + i] = 2.0;
        }
        Ok(true)
    }

    fn quadratic_lower_k0(&self) -> Option<f64> {
        Some(1.0)
    }

    fn level_radius(&self, level: f64) -> Option<f64> {
        Some(level.max(0.0).sqrt())
    }
}

/// Closed-form constants of a spiral with `V = |x|^2`, using `|f(x)| = |x|
/// sqrt(l(x)^2 + mu^2)` and `d1 = sqrt(c1) <= |x| <= d2 = sqrt(c2)` on the
/// annulus. With a rate profile the speed bounds use the range of `l` over
/// the annulus, so they bound rather than attain the extremes.
struct SpiralBounds {
    field: SpiralField,
}

impl AnalyticBounds for SpiralBounds {
    fn constants(&self, region: &AnnularRegion) -> KnownConstants {
        let (d1, d2) = (region.c1.sqrt(), region.c2.sqrt());
        let mu2 = self.field.mu * self.field.mu;
        let mut k = KnownConstants {
            m1: Some(2.0 * d2),
            m2: Some(2.0),
            ..Default::default()
        };
        match &self.field.profile {
            None => {
                k.l0_sup = Some(d2 * (1.0 + mu2).sqrt());
                k.l0_inf = Some(d1 * (1.0 + mu2).sqrt());
                k.l1 = Some((1.0 + mu2).sqrt());
                k.b = Some(-2.0 * region.c1);
            }
            Some(p) => {
                let (lo, hi) = p.range_on_annulus(d1, d2);
                let max_sq = (lo * lo).max(hi * hi);
                let min_sq = if lo <= 0.0 && hi >= 0.0 {
                    0.0
                } else {
                    (lo * lo).min(hi * hi)
                };
                k.l0_sup = Some(d2 * (max_sq + mu2).sqrt());
                k.l0_inf = Some(d1 * (min_sq + mu2).sqrt());
            }
        }
        k
    }
}

fn take(params: &mut BuiltinParams, key: &str, default: f64) -> Result<f64, FieldError> {
    let v = params.remove(key).unwrap_or(default);
    if !v.is_finite() {
        return Err(FieldError::InvalidParameter {
            name: key.into(),
            reason: format!("must be finite, got {v}"),
        });
    }
    Ok(v)
}

/// Built-in registry: `paper_example` (spiral with a localized rate dip) and
/// `linear_spiral` (the same spiral with unit rate everywhere).
///
/// Parameters: `mu` (default 2) for both; `rho` (0.01), `xc1` (0.8),
/// `xc2` (0), `profile_gain` (1.01) and `profile_offset` (0.01) for
/// `paper_example`.
pub fn builtin_system(name: &str, params: &BuiltinParams) -> Result<System, FieldError> {
    let mut params = params.clone();
    let mu = take(&mut params, "mu", 2.0)?;
    let (field, kinks, feature) = match name {
        "linear_spiral" => (SpiralField { mu, profile: None }, Vec::new(), None),
        "paper_example" => {
            let rho = take(&mut params, "rho", 0.01)?;
            if rho <= 0.0 {
                return Err(FieldError::InvalidParameter {
                    name: "rho".into(),
                    reason: format!("must be positive, got {rho}"),
                });
            }
            let profile = RateProfile {
                center: [take(&mut params, "xc1", 0.8)?, take(&mut params, "xc2", 0.0)?],
                radius: rho,
                gain: take(&mut params, "profile_gain", 1.01)?,
                offset: take(&mut params, "profile_offset", 0.01)?,
            };
            let kink = KinkSphere {
                center: profile.center.to_vec(),
                radius: rho,
            };
            (
                SpiralField {
                    mu,
                    profile: Some(profile),
                },
                vec![kink],
                Some(rho),
            )
        }
        other => return Err(FieldError::UnknownSystem(other.into())),
    };
    if let Some(key) = params.keys().next() {
        return Err(FieldError::InvalidParameter {
            name: key.clone(),
            reason: format!("not a parameter of `{name}`"),
        });
    }
    let description = match &field.profile {
        None => format!("linear spiral, mu = {mu}, V = |x|^2"),
        Some(p) => format!(
            "spiral with rate {}*min(|x - ({}, {})|/{}, 1) - {}, mu = {mu}, V = |x|^2",
            p.gain, p.center[0], p.center[1], p.radius, p.offset
        ),
    };
    let mut sys = System::new(
        name,
        Arc::new(field.clone()),
        Arc::new(NormSquared { n: 2 }),
    )?;
    sys.description = description;
    sys.analytic = Some(Arc::new(SpiralBounds { field }));
    sys.kinks = kinks;
    sys.feature_size = feature;
    Ok(sys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::fd_jacobian;
    use rand::{Rng, SeedableRng};

    fn sys(name: &str) -> System {
        builtin_system(name, &BuiltinParams::new()).unwrap()
    }

    #[test]
    fn value_at_rate_dip_center() {
        let f = sys("paper_example").f(&[0.8, 0.0]).unwrap();
        assert!((f[0] - 0.008).abs() < 1e-15);
        assert!((f[1] + 1.6).abs() < 1e-15);
    }

    #[test]
    fn linear_spiral_value() {
        assert_eq!(sys("linear_spiral").f(&[1.0, 0.0]).unwrap(), vec![-1.0, -2.0]);
    }

    #[test]
    fn vdot_closed_form() {
        let s = sys("paper_example");
        let p = RateProfile {
            center: [0.8, 0.0],
            radius: 0.01,
            gain: 1.01,
            offset: 0.01,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let x = [
                0.8 + rng.gen_range(-0.02..0.02),
                rng.gen_range(-0.02..0.02),
            ];
            let want = -2.0 * p.value(&x) * (x[0] * x[0] + x[1] * x[1]);
            assert!((s.vdot(&x).unwrap() - want).abs() < 1e-12);
            let far = [rng.gen_range(-1.0..0.5), rng.gen_range(-1.0..1.0)];
            let v = s.v(&far).unwrap();
            assert!((s.vdot(&far).unwrap() + 2.0 * v).abs() < 1e-12);
        }
    }

    #[test]
    fn analytic_jacobian_matches_differences() {
        let s = sys("paper_example");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut ja = [0.0; 4];
        let mut jf = [0.0; 4];
        let mut checked = 0;
        while checked < 100 {
            let x = if checked % 2 == 0 {
                [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]
            } else {
                [0.8 + rng.gen_range(-0.009..0.009), rng.gen_range(-0.009..0.009)]
            };
            let r = (x[0] - 0.8f64).hypot(x[1]);
            if (r - 0.01).abs() < 1e-4 || r < 1e-4 {
                continue;
            }
            s.field.jacobian(&x, &mut ja).unwrap();
            fd_jacobian(s.field.as_ref(), &x, &mut jf).unwrap();
            let scale = ja.iter().map(|v| v.abs()).fold(0.0, f64::max);
            for (a, b) in ja.iter().zip(&jf) {
                assert!((a - b).abs() <= 1e-5 * scale, "{x:?}: {ja:?} vs {jf:?}");
            }
            checked += 1;
        }
    }

    #[test]
    fn parameter_validation() {
        let mut p = BuiltinParams::new();
        p.insert("rho".into(), 0.0);
        assert!(matches!(
            builtin_system("paper_example", &p),
            Err(FieldError::InvalidParameter { .. })
        ));
        let mut p = BuiltinParams::new();
        p.insert("rho".into(), 0.02);
        assert!(builtin_system("linear_spiral", &p).is_err());
        assert!(matches!(
            builtin_system("van_der_pol", &BuiltinParams::new()),
            Err(FieldError::UnknownSystem(_))
        ));
    }

    #[test]
    fn analytic_speed_bounds() {
        let s = sys("paper_example");
        let d = AnnularRegion::annulus(0.49, 1.0).unwrap();
        let k = s.known_constants(&d);
        assert!((k.l0_sup.unwrap() - 5f64.sqrt()).abs() < 1e-12);
        assert!((k.l0_inf.unwrap() - 1.4).abs() < 1e-12);
        assert_eq!(k.m1, Some(2.0));
        assert_eq!(k.m2, Some(2.0));
        let k = sys("linear_spiral").known_constants(&d);
        assert!((k.l0_inf.unwrap() - 0.7 * 5f64.sqrt()).abs() < 1e-12);
        assert!((k.b.unwrap() + 0.98).abs() < 1e-15);
    }
}
