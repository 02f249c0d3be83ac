//! Cross-module invariants on the constants, the bad set, the certificate
//! formulas and the tube geometry.

use std::f64::consts::PI;

use lyapcert_core::badset::{analyze_badset, in_omega};
use lyapcert_core::bounds::{estimate_constants, ConstantValues, ConstantsMode};
use lyapcert_core::certificate::{
    certify, compute_alpha, compute_eps_thresholds, compute_g_h, compute_gamma_eta, cross_section, dwell_per_volume,
    EtaStrategy,
};
use lyapcert_core::field::{builtin_system, AnnularRegion, BuiltinParams, System};
use lyapcert_core::grid::GridSpec;
use lyapcert_core::tube::{detect_overlap, max_safe_arclength, SampledCurve};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn example(params: &[(&str, f64)]) -> System {
    let p: BuiltinParams = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    builtin_system("paper_example", &p).unwrap()
}

fn region() -> AnnularRegion {
    AnnularRegion::annulus(0.49, 1.0).unwrap()
}

fn reference() -> ConstantValues {
    ConstantValues {
        l0_sup: 5f64.sqrt(),
        l0_inf: 1.4,
        l1: 90.78,
        m1: 2.0,
        m2: 2.0,
        b: 0.0128,
    }
}

/// Uniform point of the annulus `0.7 <= |x| <= 1` (where `V = |x|^2`).
fn annulus_point(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let r = (rng.gen_range(0.49..1.0f64)).sqrt();
    let t = rng.gen_range(0.0..2.0 * PI);
    vec![r * t.cos(), r * t.sin()]
}

#[test]
fn sampled_pairs_respect_the_lipschitz_estimates() {
    let sys = example(&[]);
    let c = estimate_constants(&sys, &region(), &GridSpec::default(), ConstantsMode::PreferAnalytic)
        .unwrap()
        .values();
    let alpha = compute_alpha(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for i in 0..20_000 {
        let x = annulus_point(&mut rng);
        // half the pairs are close, half straddle the rate dip
        let y = if i % 2 == 0 {
            x.iter().map(|v| v + rng.gen_range(-0.02..0.02)).collect::<Vec<f64>>()
        } else {
            vec![0.8 + rng.gen_range(-0.012..0.012), rng.gen_range(-0.012..0.012)]
        };
        if !region().contains_level(sys.v(&y).unwrap()) {
            continue;
        }
        let d = ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2)).sqrt();
        let dv = (sys.v(&x).unwrap() - sys.v(&y).unwrap()).abs();
        assert!(dv <= c.m1 * d + 1e-9 * (1.0 + c.m1));
        let ddot = (sys.vdot(&x).unwrap() - sys.vdot(&y).unwrap()).abs();
        assert!(ddot <= alpha * d + 1e-9 * (1.0 + alpha), "{x:?} {y:?}");
    }
}

#[test]
fn doubling_the_resolution_moves_constants_by_under_one_percent() {
    let sys = example(&[]);
    let base = estimate_constants(&sys, &region(), &GridSpec::default(), ConstantsMode::PreferAnalytic).unwrap();
    let res = base.grid.resolution;
    let fine = estimate_constants(
        &sys,
        &region(),
        &GridSpec {
            resolution: Some(2 * res),
            ..GridSpec::default()
        },
        ConstantsMode::PreferAnalytic,
    )
    .unwrap();
    let (a, b) = (base.values(), fine.values());
    for (x, y) in [
        (a.l0_sup, b.l0_sup),
        (a.l0_inf, b.l0_inf),
        (a.l1, b.l1),
        (a.m1, b.m1),
        (a.m2, b.m2),
        (a.b, b.b),
    ] {
        assert!(((x - y) / y).abs() < 0.01, "{x} {y}");
    }
}

#[test]
fn marked_cells_match_the_dip_disk() {
    let sys = example(&[]);
    let an = analyze_badset(&sys, &region(), 2.0, 1.0, &GridSpec::default()).unwrap();
    assert_eq!(an.components.len(), 1);
    let comp = &an.components[0];
    let s = an.summary();
    let width = s.cell_widths.iter().cloned().fold(0.0, f64::max);
    let area = PI * 1e-4;
    // boundary cells are subdivided before measuring, so the volume bracket
    // is taken at the refined width
    let spec = GridSpec::default();
    let refined = width / (spec.refine_factor.pow(spec.refinement as u32) as f64);
    assert!(0.01 / refined >= 10.0, "{refined}");
    assert!(comp.inner_volume <= area && area <= comp.outer_volume);
    // Hausdorff distance between marked cells and the disk, up to one cell
    let diag = width * 2f64.sqrt();
    for &cell in &comp.cells {
        let c = an.cell_center(cell);
        let d = ((c[0] - 0.8).powi(2) + c[1].powi(2)).sqrt();
        assert!(d <= 0.01 + diag, "cell at distance {d}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let r = 0.01 * rng.gen_range(0.0..1.0f64).sqrt();
        let t = rng.gen_range(0.0..2.0 * PI);
        let p = [0.8 + r * t.cos(), r * t.sin()];
        let near = comp.cells.iter().any(|&cell| {
            let c = an.cell_center(cell);
            ((c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2)).sqrt() <= diag
        });
        assert!(near, "{p:?} has no marked cell within one cell");
    }
}

#[test]
fn neighbourhoods_of_the_eta_set_stay_in_the_bad_set() {
    let sys = example(&[]);
    let cert = certify(
        &sys,
        &region(),
        2.0,
        &GridSpec::default(),
        EtaStrategy::Fixed(0.6),
        ConstantsMode::PreferAnalytic,
    )
    .unwrap()
    .certificate;
    let gamma = cert.gamma_eta;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut centers = 0;
    while centers < 100 {
        let x = [0.8 + rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01)];
        if !in_omega(&sys, &region(), &x, 2.0, 0.6).unwrap() {
            continue;
        }
        centers += 1;
        for _ in 0..100 {
            let r = gamma * rng.gen_range(0.0..1.0f64).sqrt();
            let t = rng.gen_range(0.0..2.0 * PI);
            let y = [x[0] + r * t.cos(), x[1] + r * t.sin()];
            if region().contains_level(sys.v(&y).unwrap()) {
                assert!(in_omega(&sys, &region(), &y, 2.0, 1.0).unwrap(), "{x:?} -> {y:?}");
            }
        }
    }
}

#[test]
fn outputs_move_continuously_with_the_constants() {
    let eval = |c: &ConstantValues| {
        let alpha = compute_alpha(c);
        let gamma = compute_gamma_eta(0.6, 2.0, 0.49, alpha, c.m1);
        let (_, _, bar) = compute_eps_thresholds(c, alpha, gamma, 0.6, 2.0, 0.49, 2).unwrap();
        let (g, h) = compute_g_h(c, gamma, 2);
        [bar, g, h, alpha, gamma]
    };
    let base = eval(&reference());
    for k in 0..6 {
        for sign in [-1.0, 1.0] {
            let mut c = reference();
            let field = match k {
                0 => &mut c.l0_sup,
                1 => &mut c.l0_inf,
                2 => &mut c.l1,
                3 => &mut c.m1,
                4 => &mut c.m2,
                _ => &mut c.b,
            };
            *field *= 1.0 + sign * 1e-3;
            for (x, y) in eval(&c).iter().zip(&base) {
                assert!(((x - y) / y).abs() < 0.01, "constant {k}: {x} vs {y}");
            }
        }
    }
}

#[test]
fn dwell_time_identity() {
    let c = reference();
    let alpha = compute_alpha(&c);
    let gamma = compute_gamma_eta(0.6, 2.0, 0.49, alpha, c.m1);
    let (g, _) = compute_g_h(&c, gamma, 2);
    let eps = PI * 1e-4;
    let lhs = g * eps / c.b;
    let rhs = eps / (c.l0_inf * cross_section(2, gamma));
    assert!(((lhs - rhs) / rhs).abs() <= 1e-12);
    assert!(((dwell_per_volume(&c, gamma, 2) * eps - rhs) / rhs).abs() <= 1e-12);
}

#[test]
fn lambda_never_exceeds_its_value_at_zero() {
    let sys = example(&[]);
    let cert = certify(
        &sys,
        &region(),
        2.0,
        &GridSpec::default(),
        EtaStrategy::Fixed(0.6),
        ConstantsMode::PreferAnalytic,
    )
    .unwrap()
    .certificate;
    let r = cert.rate;
    let l0 = r.lambda(0.0);
    assert_eq!(l0, r.eta * r.a * r.c1 / r.c2);
    assert!(l0 < r.eta * r.a);
    for j in 0..100 {
        assert!(r.lambda(cert.eps_bar * j as f64 / 100.0) <= l0);
    }
}

#[test]
fn rescaling_time_keeps_the_verdict() {
    for (params, pass) in [(vec![], true), (vec![("rho", 0.05)], false)] {
        for s in [1.0, 2.0] {
            let mut p = params.clone();
            p.extend([("mu", 2.0 * s), ("profile_gain", 1.01 * s), ("profile_offset", 0.01 * s)]);
            let sys = example(&p);
            let cert = certify(
                &sys,
                &region(),
                2.0 * s,
                &GridSpec::default(),
                EtaStrategy::Fixed(0.6),
                ConstantsMode::PreferAnalytic,
            )
            .unwrap()
            .certificate;
            assert_eq!(cert.passed(), pass, "scale {s}, params {params:?}");
        }
    }
}

#[test]
fn short_circle_arcs_never_overlap() {
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    for _ in 0..50 {
        let radius = rng.gen_range(0.1..3.0);
        let gamma = radius * rng.gen_range(0.01..0.9);
        let limit = max_safe_arclength(radius, gamma).unwrap();
        let length = limit * rng.gen_range(0.05..0.999);
        let arc = SampledCurve::circle_arc([0.0, 0.0], radius, rng.gen_range(0.0..2.0 * PI), length, 1500);
        assert!(detect_overlap(&arc, gamma).unwrap().is_none(), "R {radius} gamma {gamma} L {length}");
    }
}
