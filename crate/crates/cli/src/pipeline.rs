//! Mode orchestration: certify, GUAS, simulation with verification, tube
//! audits, and the JSON report that records all of it.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use lyapcert_core::badset::BadSetError;
use lyapcert_core::bounds::BoundsError;
use lyapcert_core::certificate::{certify, CertError, Certificate, CertifyOutput, Verdict};
use lyapcert_core::field::System;
use lyapcert_core::grid::GridError;
use lyapcert_core::guas::{certify_guas, GuasError, GuasReport};
use lyapcert_core::trajectory::{
    integrate, sample_on_level, tube_audit, verify_certificate, StopReason, TrajectoryError, TrajectoryRecord,
    VerificationReport, VisitTubeAudit, Watch,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{InitialConditions, RunConfig};
use crate::error::CliError;
use crate::plots;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Certify,
    Guas,
    Simulate,
    Audit,
    All,
}

pub struct Options {
    pub mode: Mode,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub index: usize,
    pub x0: Vec<f64>,
    pub v0: f64,
    pub csv: String,
    pub steps: usize,
    pub end_time: f64,
    pub stop: StopReason,
    pub final_v: f64,
    pub max_v: f64,
    pub x_eta_visits: usize,
    pub verification: VerificationReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct Simulation {
    pub dt: f64,
    pub runs: Vec<RunSummary>,
    pub total_violations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunAudit {
    pub index: usize,
    pub visits: Vec<VisitTubeAudit>,
    pub findings: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub tool: &'static str,
    pub version: &'static str,
    /// The only field that differs between repeated runs.
    pub generated_at_unix: u64,
    pub mode: Mode,
    pub system: String,
    pub system_description: String,
    pub config: RunConfig,
    pub certificate: Option<Certificate>,
    pub guas: Option<GuasReport>,
    /// Why no certificate or GUAS report could be formed, when the run
    /// stopped at a failed hypothesis.
    pub failure: Option<String>,
    pub summary: Vec<String>,
    pub simulation: Option<Simulation>,
    pub audit: Option<Vec<RunAudit>>,
    pub plots: Vec<String>,
    pub notes: Vec<String>,
    pub verdict: Verdict,
    pub exit_code: i32,
}

/// Everything a run produced, for plotting and for the caller.
pub struct Outcome {
    pub report: Report,
    pub report_path: PathBuf,
}

fn input(field: impl Into<String>, message: impl std::fmt::Display) -> CliError {
    CliError::Input {
        field: field.into(),
        message: message.to_string(),
    }
}

fn grid_error(e: GridError, stage: &'static str) -> CliError {
    match e {
        GridError::Eval(_) => CliError::stage(stage, e),
        GridError::Resolution(_) => input("grid.resolution", e),
        GridError::BoundsShape { .. } | GridError::BoxTooSmall { .. } => input("grid.bounds", e),
        GridError::Unbounded(_) => input("system", e),
    }
}

fn bounds_error(e: BoundsError, stage: &'static str) -> CliError {
    match e {
        BoundsError::Grid(g) => grid_error(g, stage),
        BoundsError::EmptyRegion { .. } => input("grid.resolution", e),
        BoundsError::Eval { .. } | BoundsError::TooManyFailures { .. } => CliError::stage(stage, e),
    }
}

fn badset_error(e: BadSetError, stage: &'static str) -> CliError {
    match e {
        BadSetError::Bounds(b) => bounds_error(b, stage),
        BadSetError::Rate(_) => input("rate_a", e),
        _ => CliError::stage(stage, e),
    }
}

fn trajectory_error(e: TrajectoryError, stage: &'static str, index: usize) -> CliError {
    match e {
        TrajectoryError::InitialState(_) => input(format!("initial_conditions[{index}]"), e),
        TrajectoryError::StepTooLarge { .. } => input("integrator.dt", e),
        TrajectoryError::Config { name, .. } => input(format!("integrator.{name}"), e),
        TrajectoryError::Precondition(_) => input(format!("initial_conditions[{index}]"), e),
        _ => CliError::stage(stage, e),
    }
}

/// Joins `p` onto the output base unless it is absolute.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn ensure_dir(dir: &Path, field: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| input(field, format!("{}: {e}", dir.display())))
}

/// Result of the certification stage: either a certificate or a failed
/// hypothesis that still deserves a report with exit code 1.
enum Certified {
    Done(Box<CertifyOutput>),
    Rejected(String),
}

fn run_certify(sys: &System, cfg: &RunConfig) -> Result<Certified, CliError> {
    let region = cfg.region().expect("domain checked by caller")?;
    match certify(sys, &region, cfg.rate_a, &cfg.grid, cfg.eta.strategy(), cfg.constants) {
        Ok(out) => Ok(Certified::Done(Box::new(out))),
        Err(e @ (CertError::TurningRadius { .. } | CertError::InfeasibleEta { .. })) => Ok(Certified::Rejected(e.to_string())),
        Err(CertError::Rate(_)) => Err(input("rate_a", format!("must be positive, got {}", cfg.rate_a))),
        Err(CertError::Bounds(e)) => Err(bounds_error(e, "certify")),
        Err(CertError::BadSet(e)) => Err(badset_error(e, "certify")),
        Err(e @ CertError::CapReached { .. }) => Err(CliError::stage("certify", e)),
    }
}

fn run_guas(sys: &System, cfg: &RunConfig) -> Result<Result<GuasReport, String>, CliError> {
    let params = cfg.guas.as_ref().expect("guas checked by caller");
    match certify_guas(sys, cfg.rate_a, params, &cfg.grid, cfg.constants) {
        Ok(r) => Ok(Ok(r)),
        Err(e @ GuasError::Hypothesis(_)) => Ok(Err(e.to_string())),
        Err(GuasError::Bounds(e)) => Err(bounds_error(e, "guas")),
        Err(GuasError::BadSet(e)) => Err(badset_error(e, "guas")),
        Err(e @ GuasError::Field(_)) => Err(input("system", e)),
        Err(GuasError::Parameter { name, reason }) if name == "rate_a" => Err(input("rate_a", reason)),
        Err(GuasError::Parameter { name, reason }) => Err(input(format!("guas.{name}"), reason)),
        Err(e @ GuasError::K0(_)) => Err(input("guas.k0", e)),
    }
}

/// Initial conditions from the config, checked against the certificate's
/// admissible start level.
fn initial_states(sys: &System, cfg: &RunConfig, cert: &Certificate, seed: Option<u64>) -> Result<Vec<Vec<f64>>, CliError> {
    let n = sys.dim();
    let start = cert.admissible_start_level;
    match cfg.initial_conditions.as_ref() {
        None => Err(input("initial_conditions", "required by this mode")),
        Some(InitialConditions::Sampler(s)) => {
            if !(s.level < start) {
                return Err(input(
                    "initial_conditions.sampler.level",
                    format!("V = {} is not below the admissible start level {start}", s.level),
                ));
            }
            if s.level <= cert.region.c1 {
                return Err(input(
                    "initial_conditions.sampler.level",
                    format!("V = {} is not above c1 = {}", s.level, cert.region.c1),
                ));
            }
            sample_on_level(sys, s.level, s.count, seed.unwrap_or(s.seed))
                .map_err(|e| trajectory_error(e, "sample", 0))
                .map_err(|e| match e {
                    CliError::Input { message, .. } => input("initial_conditions.sampler.level", message),
                    other => other,
                })
        }
        Some(InitialConditions::Points(pts)) => {
            for (i, p) in pts.iter().enumerate() {
                let field = format!("initial_conditions[{i}]");
                if p.len() != n {
                    return Err(input(field, format!("expected {n} coordinates, got {}", p.len())));
                }
                let v = sys.v(p).map_err(|e| input(field.clone(), e))?;
                if !(v < start) {
                    return Err(input(field, format!("V(x0) = {v} is not below the admissible start level {start}")));
                }
            }
            if pts.is_empty() {
                return Err(input("initial_conditions.points", "needs at least one point"));
            }
            Ok(pts.clone())
        }
    }
}

struct Simulated {
    summary: Simulation,
    records: Vec<TrajectoryRecord>,
}

fn simulate(
    sys: &System,
    cfg: &RunConfig,
    cert: &Certificate,
    seed: Option<u64>,
    csv_dir: &Path,
) -> Result<Simulated, CliError> {
    let x0s = initial_states(sys, cfg, cert, seed)?;
    let dt = cfg
        .integrator
        .resolve_dt(sys, cert.constants.l0_sup.value)
        .map_err(|e| trajectory_error(e, "simulate", 0))?;
    let watch = Watch::for_certificate(cert, &cfg.integrator);
    ensure_dir(csv_dir, "outputs.csv_dir")?;

    let results: Vec<Result<(RunSummary, TrajectoryRecord), CliError>> = x0s
        .par_iter()
        .enumerate()
        .map(|(i, x0)| {
            let rec = integrate(sys, x0, dt, &cfg.integrator, &watch).map_err(|e| trajectory_error(e, "simulate", i))?;
            let verification = verify_certificate(&rec, cert).map_err(|e| trajectory_error(e, "verify", i))?;
            let path = csv_dir.join(format!("trajectory_{i:03}.csv"));
            let file = fs::File::create(&path).map_err(|e| input("outputs.csv_dir", format!("{}: {e}", path.display())))?;
            rec.write_csv(std::io::BufWriter::new(file))
                .map_err(|e| CliError::stage("write csv", e))?;
            let summary = RunSummary {
                index: i,
                x0: x0.clone(),
                v0: rec.v_values[0],
                csv: path.display().to_string(),
                steps: rec.times.len(),
                end_time: rec.end_time(),
                stop: rec.stop,
                final_v: *rec.v_values.last().expect("record has the initial point"),
                max_v: rec.v_values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                x_eta_visits: rec.x_eta_intervals.len(),
                verification,
            };
            Ok((summary, rec))
        })
        .collect();

    let mut runs = Vec::with_capacity(results.len());
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        let (s, rec) = r?;
        runs.push(s);
        records.push(rec);
    }
    let total_violations = runs.iter().map(|r| r.verification.violations.len()).sum();
    Ok(Simulated {
        summary: Simulation {
            dt,
            runs,
            total_violations,
        },
        records,
    })
}

fn audit(
    sys: &System,
    cfg: &RunConfig,
    cert: &Certificate,
    records: &[TrajectoryRecord],
    seed: u64,
) -> Result<Vec<RunAudit>, CliError> {
    records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let visits = tube_audit(
                rec,
                sys,
                cert,
                cert.gamma_eta,
                cfg.mc_samples,
                cfg.membership_samples,
                seed.wrapping_add(i as u64),
            )
            .map_err(|e| trajectory_error(e, "audit", i))?;
            let findings = visits
                .iter()
                .filter(|v| {
                    !(v.overlap_free && v.volume_within_epsilon && v.length_within_limit && v.length_bounds_hold)
                        || v.membership_hits < v.membership_samples
                })
                .count();
            Ok(RunAudit {
                index: i,
                visits,
                findings,
            })
        })
        .collect()
}

pub fn run(cfg: RunConfig, opts: &Options) -> Result<Outcome, CliError> {
    let mut cfg = cfg;
    if let Some(seed) = opts.seed {
        cfg.mc_seed = seed;
        cfg.grid.seed = seed;
        if let Some(InitialConditions::Sampler(s)) = cfg.initial_conditions.as_mut() {
            s.seed = seed;
        }
    }
    let base = opts.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let report_path = resolve(&base, &cfg.outputs.report_path);
    let csv_dir = resolve(&base, &cfg.outputs.csv_dir);
    let plot_dir = cfg.outputs.plot_dir.as_ref().map(|p| resolve(&base, p));

    let mode = opts.mode;
    let wants_domain = matches!(mode, Mode::Certify | Mode::Simulate | Mode::Audit);
    if wants_domain && cfg.domain.is_none() {
        return Err(input("domain", format!("mode {mode:?} needs a `domain` block").to_lowercase()));
    }
    if mode == Mode::Guas && cfg.guas.is_none() {
        return Err(input("guas", "mode guas needs a `guas` block"));
    }

    let sys = cfg.build_system()?;
    let mut report = Report {
        tool: "lyapcert",
        version: env!("CARGO_PKG_VERSION"),
        generated_at_unix: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        mode,
        system: cfg.system_label(),
        system_description: sys.description.clone(),
        config: cfg.clone(),
        certificate: None,
        guas: None,
        failure: None,
        summary: Vec::new(),
        simulation: None,
        audit: None,
        plots: Vec::new(),
        notes: Vec::new(),
        verdict: Verdict::Fail,
        exit_code: 1,
    };

    let mut pass;
    let mut records = Vec::new();
    let mut omega = None;
    if cfg.guas.is_some() {
        match run_guas(&sys, &cfg)? {
            Ok(g) => {
                pass = g.passed();
                report.summary.push(format!(
                    "GUAS: {} bands, K = {:.6e}, sup b/(a c) = {:.4}, verdict {:?}",
                    g.bands.len(),
                    g.k,
                    g.b_ratio_sup,
                    g.verdict
                ));
                report.guas = Some(g);
            }
            Err(reason) => {
                pass = false;
                report.summary.push(format!("GUAS hypothesis failed: {reason}"));
                report.failure = Some(reason);
            }
        }
    } else {
        match run_certify(&sys, &cfg)? {
            Certified::Rejected(reason) => {
                pass = false;
                report.summary.push(format!("no certificate: {reason}"));
                report.failure = Some(reason);
            }
            Certified::Done(out) => {
                let out = *out;
                let cert = out.certificate;
                pass = cert.passed();
                report.summary = cert.summary_lines();
                let wants_sim = match mode {
                    Mode::Simulate | Mode::Audit => true,
                    Mode::All => cfg.initial_conditions.is_some(),
                    _ => false,
                };
                if wants_sim && !pass {
                    report
                        .notes
                        .push("certificate failed; trajectories were not simulated or verified".into());
                } else if wants_sim {
                    let sim = simulate(&sys, &cfg, &cert, opts.seed, &csv_dir)?;
                    report.summary.push(format!(
                        "simulation: {} trajectories, dt = {:.4e}, {} violations",
                        sim.summary.runs.len(),
                        sim.summary.dt,
                        sim.summary.total_violations
                    ));
                    pass &= sim.summary.total_violations == 0;
                    if matches!(mode, Mode::Audit | Mode::All) {
                        let audits = audit(&sys, &cfg, &cert, &sim.records, cfg.mc_seed)?;
                        let visits: usize = audits.iter().map(|a| a.visits.len()).sum();
                        let findings: usize = audits.iter().map(|a| a.findings).sum();
                        report
                            .summary
                            .push(format!("tube audit: {visits} interior visits, {findings} with findings"));
                        pass &= findings == 0;
                        report.audit = Some(audits);
                    }
                    report.simulation = Some(sim.summary);
                    records = sim.records;
                }
                omega = Some(out.omega);
                report.certificate = Some(cert);
            }
        }
    }

    if let Some(dir) = plot_dir.as_ref() {
        if let Some(cert) = report.certificate.as_ref() {
            match fs::create_dir_all(dir) {
                Ok(()) => {
                    let out = plots::emit_plots(dir, &sys, cert, omega.as_ref(), &records);
                    report.plots = out.files.iter().map(|p| p.display().to_string()).collect();
                    report.notes.extend(out.notes);
                }
                Err(e) => report.notes.push(format!("plots skipped: {}: {e}", dir.display())),
            }
        }
    }

    report.verdict = if pass { Verdict::Pass } else { Verdict::Fail };
    report.exit_code = if pass { 0 } else { 1 };
    if let Some(parent) = report_path.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent, "outputs.report_path")?;
        }
    }
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::stage("write report", e))?;
    fs::write(&report_path, text + "\n")
        .map_err(|e| input("outputs.report_path", format!("{}: {e}", report_path.display())))?;
    Ok(Outcome { report, report_path })
}
