//! Runs the `lyapcert` binary on small configurations and inspects exit
//! codes, reports, traces and plots.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lyapcert_core::bounds::ConstantsMode;
use lyapcert_core::certificate::{certify, EtaStrategy};
use lyapcert_core::field::{builtin_system, AnnularRegion, BuiltinParams};
use lyapcert_core::grid::GridSpec;
use serde_json::{json, Value};

fn bundled_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper_example.config")
}

fn bundled() -> Value {
    serde_json::from_str(&fs::read_to_string(bundled_config()).unwrap()).unwrap()
}

fn run(mode: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lyapcert"))
        .arg(mode)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--quiet")
        .args(extra)
        .env("LYAPCERT_THREADS", "2")
        .output()
        .unwrap()
}

fn write_config(dir: &Path, cfg: &Value) -> PathBuf {
    let path = dir.join("run.config");
    fs::write(&path, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    path
}

fn report(out: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn bundled_example_passes_in_mode_all() {
    let out = tempfile::tempdir().unwrap();
    let o = run("all", &bundled_config(), out.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(out.path());
    assert_eq!(r["verdict"], "pass");
    assert_eq!(r["exit_code"], 0);

    // the report carries exactly what the library computes
    let mut p = BuiltinParams::new();
    p.insert("rho".into(), 0.01);
    let sys = builtin_system("paper_example", &p).unwrap();
    let lib = certify(
        &sys,
        &AnnularRegion::annulus(0.49, 1.0).unwrap(),
        2.0,
        &GridSpec::default(),
        EtaStrategy::Fixed(0.6),
        ConstantsMode::PreferAnalytic,
    )
    .unwrap()
    .certificate;
    let cert = &r["certificate"];
    for (key, want) in [
        ("eps1", lib.eps1),
        ("eps2", lib.eps2),
        ("eps_bar", lib.eps_bar),
        ("epsilon", lib.epsilon),
        ("attractor_level", lib.attractor_level),
    ] {
        assert_eq!(cert[key].as_f64().unwrap(), want, "{key}");
    }
    for k in ["l0_sup", "l0_inf", "l1", "m1", "m2", "b"] {
        let m = cert["constants"][k]["method"].as_str().unwrap();
        assert!(["analytic", "grid", "grid+jacobian"].contains(&m), "{k}: {m}");
    }

    let sim = &r["simulation"];
    assert_eq!(sim["runs"].as_array().unwrap().len(), 20);
    assert_eq!(sim["total_violations"], 0);
    let audits = r["audit"].as_array().unwrap();
    assert!(audits.iter().any(|a| !a["visits"].as_array().unwrap().is_empty()));

    let csv = fs::read_to_string(out.path().join("traces/trajectory_000.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "t,x1,x2,V,Vdot,in_omega_eta");
    for name in ["phase_portrait.svg", "v_of_t.svg", "vdot_visit.svg"] {
        let svg = fs::read_to_string(out.path().join("plots").join(name)).unwrap();
        assert!(svg.starts_with("<svg"), "{name}");
    }
    assert_eq!(r["plots"].as_array().unwrap().len(), 3);
}

#[test]
fn swapped_levels_exit_2_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled();
    cfg["domain"]["c1"] = json!(1.0);
    let o = run("certify", &write_config(dir.path(), &cfg), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("domain.c1"), "{}", stderr(&o));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn unknown_field_reports_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled();
    cfg["integrator"]["steps"] = json!(5);
    let o = run("certify", &write_config(dir.path(), &cfg), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("integrator"), "{}", stderr(&o));
}

#[test]
fn start_above_the_admissible_level_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled();
    cfg["initial_conditions"] = json!({"points": [[0.0, 0.9], [0.0, 0.995]]});
    let o = run("simulate", &write_config(dir.path(), &cfg), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("initial_conditions[1]"), "{}", stderr(&o));
}

#[test]
fn wider_dip_fails_cleanly_with_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled();
    cfg["system"]["builtin"]["params"]["rho"] = json!(0.05);
    let o = run("all", &write_config(dir.path(), &cfg), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    let r = report(dir.path());
    assert_eq!(r["verdict"], "fail");
    let cert = &r["certificate"];
    assert_eq!(cert["verdict"], "fail");
    assert!(cert["epsilon"].as_f64().unwrap() > cert["eps_bar"].as_f64().unwrap());
    // nothing was simulated, so nothing was violated
    assert!(r["simulation"].is_null());
}

fn strip_timestamp(text: &str) -> String {
    text.lines()
        .filter(|l| !l.trim_start().starts_with("\"generated_at_unix\""))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn repeated_runs_give_identical_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bundled();
    cfg["initial_conditions"] = json!({"sampler": {"count": 3, "level": 0.97, "seed": 4}});
    cfg["integrator"]["t_max"] = json!(1.0);
    let path = write_config(dir.path(), &cfg);
    let mut reports = Vec::new();
    let mut traces = Vec::new();
    for _ in 0..2 {
        let o = run("audit", &path, dir.path(), &["--seed", "11"]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        reports.push(strip_timestamp(&fs::read_to_string(dir.path().join("report.json")).unwrap()));
        traces.push(fs::read(dir.path().join("traces/trajectory_002.csv")).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(traces[0], traces[1]);
    let r: Value = serde_json::from_str(&reports[0]).unwrap();
    assert_eq!(r["config"]["initial_conditions"]["sampler"]["seed"], 11);
    assert_eq!(r["config"]["mc_seed"], 11);
}

/// Walks a JSON value and collects the paths of nulls.
fn nulls(v: &Value, path: String, out: &mut Vec<String>) {
    match v {
        Value::Null => out.push(path),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, x)| nulls(x, format!("{path}[{i}]"), out)),
        Value::Object(m) => m.iter().for_each(|(k, x)| nulls(x, format!("{path}.{k}"), out)),
        _ => {}
    }
}

#[test]
fn certificate_fields_are_finite_or_sentinels() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "system": {"builtin": {"name": "linear_spiral"}},
        "domain": {"c1": 0.49, "c2": 1.0},
        "rate_a": 1.9,
        "eta": 0.99,
        "outputs": {"plot_dir": null}
    });
    let o = run("certify", &write_config(dir.path(), &cfg), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(dir.path());
    let cert = &r["certificate"];
    for key in [
        "alpha",
        "gamma_eta",
        "turning_radius",
        "eps1",
        "eps2",
        "eps_bar",
        "g",
        "h",
        "epsilon",
        "h_margin",
        "overshoot_margin",
        "attractor_level",
        "admissible_start_level",
        "attractor_radius",
        "dwell_time_bound",
        "lambda",
    ] {
        let v = &cert[key];
        let ok = v.as_f64().is_some_and(f64::is_finite) || matches!(v.as_str(), Some("+inf" | "-inf" | "n/a"));
        assert!(ok, "{key} = {v}");
    }
    // the only nulls are optional fields that are legitimately absent
    let mut found = Vec::new();
    nulls(cert, "certificate".into(), &mut found);
    for p in &found {
        assert!(p.ends_with("first_violation"), "unexpected null at {p}");
    }
    assert!(r["plots"].as_array().unwrap().is_empty());
}

#[test]
fn run_without_bad_set_skips_the_visit_plot() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "system": {"builtin": {"name": "linear_spiral"}},
        "domain": {"c1": 0.49, "c2": 1.0},
        "rate_a": 1.9,
        "eta": 0.99,
        "integrator": {"t_max": 2.0},
        "initial_conditions": {"points": [[0.0, 0.9], [-0.8, 0.1]]}
    });
    let o = run("all", &write_config(dir.path(), &cfg), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(dir.path());
    assert!(dir.path().join("plots/phase_portrait.svg").exists());
    assert!(dir.path().join("plots/v_of_t.svg").exists());
    assert!(!dir.path().join("plots/vdot_visit.svg").exists());
    let notes: Vec<&str> = r["notes"].as_array().unwrap().iter().map(|n| n.as_str().unwrap()).collect();
    assert!(notes.iter().any(|n| n.contains("visit plot skipped")), "{notes:?}");
}

#[test]
fn expression_system_runs_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "system": {"expression": {
            "dimension": 2,
            "f": ["-x1 - x2", "x1 - x2"],
            "V": "x1^2 + x2^2",
            "k0": 1.0
        }},
        "domain": {"c1": 0.3, "c2": 0.8},
        "rate_a": 1.9,
        "eta": 0.9,
        "grid": {"resolution": 201, "pair_samples": 20000},
        "integrator": {"t_max": 2.0},
        "initial_conditions": {"sampler": {"count": 2, "level": 0.7, "seed": 3}}
    });
    let o = run("all", &write_config(dir.path(), &cfg), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(dir.path());
    assert_eq!(r["system"], "expression");
    assert_eq!(r["certificate"]["constants"]["l0_sup"]["method"], "grid");
    let svg = fs::read_to_string(dir.path().join("plots/phase_portrait.svg")).unwrap();
    assert!(svg.contains("c1 = 0.3") && svg.contains("c2 = 0.8"));
}

#[test]
fn guas_mode_reports_every_band() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "system": {"builtin": {"name": "linear_spiral"}},
        "guas": {"k0": 1.0, "ladder": [0.3, 0.6]},
        "rate_a": 1.9
    });
    let path = write_config(dir.path(), &cfg);
    let o = run("guas", &path, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = report(dir.path());
    assert_eq!(r["guas"]["bands"].as_array().unwrap().len(), 2);
    assert!(r["certificate"].is_null());

    let o = run("certify", &path, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("`domain`"), "{}", stderr(&o));
}
