//! Static SVG figures: phase portrait, `V(t)` against the certified envelope,
//! and `V'` across a bad-set visit against the trapezoid bound.
//!
//! Plotting never decides the exit code; failures come back as notes.

use std::error::Error;
use std::path::{Path, PathBuf};

use lyapcert_core::badset::BadSetAnalysis;
use lyapcert_core::certificate::Certificate;
use lyapcert_core::field::System;
use lyapcert_core::trajectory::TrajectoryRecord;
use plotters::prelude::*;

type PlotResult = Result<(), Box<dyn Error>>;

/// Most points drawn per trajectory; longer records are thinned evenly.
const MAX_POINTS: usize = 3000;
const SIZE: (u32, u32) = (1000, 700);

pub struct PlotOutput {
    pub files: Vec<PathBuf>,
    pub notes: Vec<String>,
}

pub fn emit_plots(
    dir: &Path,
    sys: &System,
    cert: &Certificate,
    omega: Option<&BadSetAnalysis>,
    records: &[TrajectoryRecord],
) -> PlotOutput {
    let mut out = PlotOutput {
        files: Vec::new(),
        notes: Vec::new(),
    };
    let keep = |name: &str, res: Option<PlotResult>, out: &mut PlotOutput| {
        let path = dir.join(name);
        match res {
            Some(Ok(())) => out.files.push(path),
            Some(Err(e)) => out.notes.push(format!("warning: plot {name} failed: {e}")),
            None => {}
        }
    };

    let path = dir.join("phase_portrait.svg");
    if sys.dim() == 2 {
        keep("phase_portrait.svg", Some(phase_portrait(&path, sys, cert, omega, records)), &mut out);
    } else {
        out.notes
            .push(format!("phase portrait skipped: dimension {} is not 2", sys.dim()));
    }

    if records.is_empty() {
        out.notes.push("V(t) plot skipped: no trajectories".into());
    } else {
        let path = dir.join("v_of_t.svg");
        keep("v_of_t.svg", Some(v_of_t(&path, cert, records)), &mut out);
    }

    match longest_interior_visit(records) {
        Some((rec, s, t)) => {
            let path = dir.join("vdot_visit.svg");
            keep("vdot_visit.svg", Some(vdot_visit(&path, cert, rec, s, t)), &mut out);
        }
        None => out
            .notes
            .push("V' visit plot skipped: no trajectory passes fully through the bad set".into()),
    }
    out
}

fn thin<T: Copy>(xs: impl ExactSizeIterator<Item = T>) -> Vec<T> {
    let step = xs.len().div_ceil(MAX_POINTS).max(1);
    xs.step_by(step).collect()
}

/// Points of `{V = level}` along evenly spaced rays, by bisection on the
/// radius. Rays on which `V` never reaches the level are dropped.
fn level_curve(sys: &System, level: f64) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    for k in 0..=720 {
        let th = std::f64::consts::TAU * k as f64 / 720.0;
        let (c, s) = (th.cos(), th.sin());
        let v = |r: f64| sys.v(&[r * c, r * s]).unwrap_or(f64::NAN);
        let mut hi = 1.0;
        let mut grow = 0;
        while v(hi) < level && grow < 60 {
            hi *= 2.0;
            grow += 1;
        }
        if !(v(hi) >= level) {
            continue;
        }
        let mut lo = 0.0;
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if v(mid) < level {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        pts.push((hi * c, hi * s));
    }
    pts
}

struct Shell {
    level: f64,
    label: String,
    color: RGBColor,
}

fn shells(cert: &Certificate) -> Vec<Shell> {
    let r = &cert.region;
    let mut out = vec![
        Shell {
            level: r.c2,
            label: format!("c2 = {}", r.c2),
            color: BLACK,
        },
        Shell {
            level: r.c1,
            label: format!("c1 = {}", r.c1),
            color: BLACK,
        },
    ];
    if cert.passed() {
        out.push(Shell {
            level: r.c2 - cert.h_margin,
            label: "shrunk outer shell".into(),
            color: RGBColor(120, 120, 120),
        });
        out.push(Shell {
            level: r.c1 + cert.h_margin,
            label: "shrunk inner shell".into(),
            color: RGBColor(120, 120, 120),
        });
        out.push(Shell {
            level: cert.attractor_level,
            label: format!("attractor level {:.4}", cert.attractor_level),
            color: RGBColor(0, 140, 0),
        });
    }
    out
}

fn phase_portrait(
    path: &Path,
    sys: &System,
    cert: &Certificate,
    omega: Option<&BadSetAnalysis>,
    records: &[TrajectoryRecord],
) -> PlotResult {
    let curves: Vec<(Shell, Vec<(f64, f64)>)> = shells(cert)
        .into_iter()
        .map(|s| {
            let c = level_curve(sys, s.level);
            (s, c)
        })
        .collect();
    let extent = curves
        .iter()
        .flat_map(|(_, c)| c.iter().map(|(x, y)| x.abs().max(y.abs())))
        .fold(0.0, f64::max)
        * 1.1;
    if !(extent > 0.0) {
        return Err("no level curve could be traced".into());
    }

    let zoom = omega.and_then(|o| o.largest().map(|c| (o, c.bbox.clone())));
    let side = SIZE.1;
    let width = if zoom.is_some() { 2 * side } else { side };
    let root = SVGBackend::new(path, (width, side)).into_drawing_area();
    root.fill(&WHITE)?;
    let (left, right) = if zoom.is_some() {
        let (l, r) = root.split_horizontally(side);
        (l, Some(r))
    } else {
        (root.clone(), None)
    };

    let cells: Vec<((f64, f64), (f64, f64))> = match omega {
        Some(o) => {
            let w0 = o.grid.coord(0, 1.0) - o.grid.coord(0, 0.0);
            let w1 = o.grid.coord(1, 1.0) - o.grid.coord(1, 0.0);
            o.components
                .iter()
                .flat_map(|c| c.cells.iter())
                .map(|&i| {
                    let p = o.cell_center(i);
                    ((p[0] - 0.5 * w0, p[1] + 0.5 * w1), (p[0] + 0.5 * w0, p[1] - 0.5 * w1))
                })
                .collect()
        }
        None => Vec::new(),
    };
    let paths: Vec<Vec<(f64, f64)>> = records
        .iter()
        .map(|r| thin(r.states.iter().map(|x| (x[0], x[1]))))
        .collect();

    let panel = |area: &DrawingArea<SVGBackend, plotters::coord::Shift>,
                 paths: &[Vec<(f64, f64)>],
                 xr: (f64, f64),
                 yr: (f64, f64),
                 title: &str,
                 legend: bool|
     -> PlotResult {
        let mut chart = ChartBuilder::on(area)
            .caption(title, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(50)
            .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)?;
        chart.configure_mesh().x_desc("x1").y_desc("x2").draw()?;
        for (a, b) in &cells {
            chart.draw_series(std::iter::once(Rectangle::new([*a, *b], RGBColor(220, 40, 40).mix(0.6).filled())))?;
        }
        for (i, p) in paths.iter().enumerate() {
            let color = Palette99::pick(i).mix(0.8);
            chart.draw_series(LineSeries::new(p.iter().cloned(), color.stroke_width(1)))?;
        }
        for (shell, c) in &curves {
            // plotters clamps off-window points to the border
            if !c.iter().any(|p| p.0 >= xr.0 && p.0 <= xr.1 && p.1 >= yr.0 && p.1 <= yr.1) {
                continue;
            }
            let s = chart.draw_series(LineSeries::new(c.iter().cloned(), shell.color.stroke_width(2)))?;
            if legend {
                let color = shell.color;
                s.label(shell.label.clone())
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
            }
        }
        if legend {
            chart
                .configure_series_labels()
                .background_style(WHITE.mix(0.8))
                .border_style(BLACK)
                .draw()?;
        }
        Ok(())
    };

    panel(&left, &paths, (-extent, extent), (-extent, extent), "phase portrait", true)?;
    if let (Some(area), Some((_, bbox))) = (right, zoom) {
        let cx = 0.5 * (bbox[0].0 + bbox[0].1);
        let cy = 0.5 * (bbox[1].0 + bbox[1].1);
        let half = 2.0 * (bbox[0].1 - bbox[0].0).max(bbox[1].1 - bbox[1].0).max(1e-9);
        let window = ((cx - half, cx + half), (cy - half, cy + half));
        let near = clipped_paths(records, window);
        panel(&area, &near, window.0, window.1, "near the bad set", false)?;
    }
    root.present()?;
    Ok(())
}

/// Unthinned pieces of the trajectories inside a window, so the zoomed
/// panel keeps full step resolution.
fn clipped_paths(records: &[TrajectoryRecord], (xr, yr): ((f64, f64), (f64, f64))) -> Vec<Vec<(f64, f64)>> {
    let inside = |x: &[f64]| x[0] >= xr.0 && x[0] <= xr.1 && x[1] >= yr.0 && x[1] <= yr.1;
    let mut out = Vec::new();
    for r in records {
        let mut piece: Vec<(f64, f64)> = Vec::new();
        for (i, x) in r.states.iter().enumerate() {
            let keep = inside(x)
                || r.states.get(i + 1).is_some_and(|y| inside(y))
                || (i > 0 && inside(&r.states[i - 1]));
            if keep {
                piece.push((x[0], x[1]));
            } else if !piece.is_empty() {
                out.push(std::mem::take(&mut piece));
            }
        }
        if !piece.is_empty() {
            out.push(piece);
        }
    }
    out
}

fn v_of_t(path: &Path, cert: &Certificate, records: &[TrajectoryRecord]) -> PlotResult {
    let t_end = records.iter().map(|r| r.end_time()).fold(0.0, f64::max);
    let (k, v0) = records
        .iter()
        .enumerate()
        .map(|(k, r)| (k, r.v_values[0]))
        .fold((0, f64::NEG_INFINITY), |m, p| if p.1 > m.1 { p } else { m });
    let v_min = records
        .iter()
        .flat_map(|r| r.v_values.iter().cloned())
        .fold(f64::INFINITY, f64::min);
    let top = (v0 + cert.overshoot_margin).max(cert.region.c2) * 1.02;
    let bottom = v_min.min(cert.attractor_level) * 0.95;

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("V along trajectories", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..t_end, bottom..top)?;
    chart.configure_mesh().x_desc("t").y_desc("V").draw()?;

    for (i, r) in records.iter().enumerate() {
        let pts = thin(r.times.iter().cloned().zip(r.v_values.iter().cloned()));
        chart.draw_series(LineSeries::new(pts, Palette99::pick(i).mix(0.8)))?;
    }
    let env: Vec<(f64, f64)> = (0..=600)
        .map(|j| {
            let t = t_end * j as f64 / 600.0;
            (t, cert.envelope(v0, t))
        })
        .collect();
    chart
        .draw_series(DashedLineSeries::new(env, 8, 5, BLUE.stroke_width(2)))?
        .label(format!("envelope from V0 = {v0:.4} (trajectory {k})"))
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    let hline = |level: f64| vec![(0.0, level), (t_end, level)];
    let red = RGBColor(200, 0, 0);
    chart
        .draw_series(LineSeries::new(hline(v0 + cert.overshoot_margin), red.stroke_width(2)))?
        .label("V0 + overshoot")
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], red));
    let green = RGBColor(0, 140, 0);
    chart
        .draw_series(LineSeries::new(hline(cert.attractor_level), green.stroke_width(2)))?
        .label("attractor level")
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], green));
    chart
        .draw_series(LineSeries::new(hline(cert.region.c2), BLACK))?
        .label("c2")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLACK));
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}

/// Longest bad-set visit that starts and ends inside its record; ties go to
/// the earliest record.
fn longest_interior_visit(records: &[TrajectoryRecord]) -> Option<(&TrajectoryRecord, f64, f64)> {
    records
        .iter()
        .flat_map(|r| {
            r.x_eta_intervals
                .iter()
                .filter(|iv| !iv.at_record_start && !iv.at_record_end)
                .map(move |iv| (r, iv.start, iv.end))
        })
        .fold(None, |best: Option<(&TrajectoryRecord, f64, f64)>, c| match best {
            Some(b) if b.2 - b.1 >= c.2 - c.1 => Some(b),
            _ => Some(c),
        })
}

fn vdot_visit(path: &Path, cert: &Certificate, rec: &TrajectoryRecord, s: f64, t: f64) -> PlotResult {
    let c = cert.constants.values();
    let slope = cert.alpha * c.l0_sup;
    let floor = cert.eta * cert.rate_a * cert.region.c1;
    let bound = |tau: f64| c.b.min(slope * (tau - s) - floor).min(slope * (t - tau) - floor);

    let pts: Vec<(f64, f64)> = rec
        .times
        .iter()
        .zip(&rec.vdot_values)
        .filter(|(&tau, _)| tau >= s && tau <= t)
        .map(|(&tau, &d)| (tau - s, d))
        .collect();
    let curve: Vec<(f64, f64)> = (0..=400)
        .map(|j| {
            let tau = s + (t - s) * j as f64 / 400.0;
            (tau - s, bound(tau))
        })
        .collect();
    let lo = pts
        .iter()
        .chain(&curve)
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    let hi = pts
        .iter()
        .chain(&curve)
        .map(|p| p.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-12);

    let root = SVGBackend::new(path, SIZE).into_drawing_area();
    root.fill(&WHITE)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("V' across the visit [{s:.5}, {t:.5}]"), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..(t - s), (lo - pad)..(hi + pad))?;
    chart.configure_mesh().x_desc("time since entry").y_desc("V'").draw()?;
    chart
        .draw_series(LineSeries::new(curve, RED.stroke_width(2)))?
        .label("trapezoid bound")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], RED));
    chart
        .draw_series(LineSeries::new(pts.iter().cloned(), BLUE))?
        .label("V' along the trajectory")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], BLUE));
    chart.draw_series(pts.iter().map(|&p| Circle::new(p, 2, BLUE.filled())))?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    root.present()?;
    Ok(())
}
