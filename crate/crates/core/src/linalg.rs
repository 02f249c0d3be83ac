//! Small dense helpers: Euclidean norms, spectral norms and ball volumes.

use nalgebra::DMatrix;
use statrs::function::gamma::gamma;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Largest singular value of a row-major `n x n` matrix.
pub fn spectral_norm(m: &[f64], n: usize) -> f64 {
    debug_assert_eq!(m.len(), n * n);
    match n {
        0 => 0.0,
        1 => m[0].abs(),
        2 => {
            let (a, b, c, d) = (m[0], m[1], m[2], m[3]);
            let p = (a + d).hypot(c - b);
            let q = (a - d).hypot(b + c);
            0.5 * (p + q)
        }
        _ => {
            let mat = DMatrix::from_row_slice(n, n, m);
            mat.singular_values().max()
        }
    }
}

/// Volume of the unit ball in `n` dimensions, `pi^(n/2) / Gamma(n/2 + 1)`.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        2 => std::f64::consts::PI,
        _ => {
            let h = n as f64 / 2.0;
            std::f64::consts::PI.powf(h) / gamma(h + 1.0)
        }
    }
}

/// Volume of the `n`-ball of the given radius.
pub fn ball_volume(n: usize, radius: f64) -> f64 {
    unit_ball_volume(n) * radius.powi(n as i32)
}
