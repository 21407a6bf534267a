//! CSV tables and SVG charts. Chart values are the CSV cell strings, so the
//! two never disagree.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::Result;
use kyfan_core::lab::{CellSummary, Method, SweepReport, TrialRecord};

pub const TRIAL_HEADER: [&str; 14] = [
    "method",
    "m",
    "n",
    "r",
    "k",
    "s",
    "seed",
    "model",
    "recovered",
    "relative_error",
    "outer_iterations",
    "inner_iterations",
    "wall_time_s",
    "termination",
];

pub const SWEEP_HEADER: [&str; 17] = [
    "method",
    "m",
    "n",
    "r",
    "k",
    "s",
    "d_r",
    "K",
    "recovered_count",
    "recovery_prob",
    "mean_rel_err",
    "mean_outer_iters_all",
    "mean_outer_iters_recovered",
    "mean_inner_iters",
    "mean_wall_time_s",
    "model",
    "seed",
];

/// Shortest round-trip decimal form.
pub fn num(x: f64) -> String {
    format!("{x}")
}

fn trial_row(t: &TrialRecord) -> Vec<String> {
    vec![
        t.method.name().to_string(),
        t.spec.m.to_string(),
        t.spec.n.to_string(),
        t.spec.r.to_string(),
        t.k.to_string(),
        t.spec.s.to_string(),
        t.spec.seed.to_string(),
        t.model.name().to_string(),
        t.recovered.to_string(),
        num(t.relative_error),
        t.outer_iterations.to_string(),
        t.inner_iterations.to_string(),
        num(t.wall_time_s),
        t.termination.clone(),
    ]
}

fn sweep_row(c: &CellSummary, seed: u64) -> Vec<String> {
    vec![
        c.method.name().to_string(),
        c.m.to_string(),
        c.n.to_string(),
        c.r.to_string(),
        c.k.to_string(),
        c.s.to_string(),
        c.d_r.to_string(),
        c.trials.to_string(),
        c.recovered_count.to_string(),
        num(c.recovery_prob),
        num(c.mean_rel_err),
        num(c.mean_outer_iters_all),
        num(c.mean_outer_iters_recovered),
        num(c.mean_inner_iters),
        num(c.mean_wall_time_s),
        c.model.name().to_string(),
        seed.to_string(),
    ]
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trials(path: &Path, trials: &[TrialRecord]) -> Result<()> {
    write_csv(path, &TRIAL_HEADER, trials.iter().map(trial_row))
}

pub fn write_sweep(path: &Path, report: &SweepReport) -> Result<()> {
    let seed = report.plan.master_seed;
    write_csv(path, &SWEEP_HEADER, report.cells.iter().map(|c| sweep_row(c, seed)))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Line chart of one summary column against `s`, one series per method.
/// `column` names the CSV column the values come from.
pub fn line_chart(
    title: &str,
    column: &str,
    report: &SweepReport,
    value: impl Fn(&CellSummary) -> f64,
    fixed_max: Option<f64>,
) -> String {
    let methods: Vec<Method> = report.plan.methods.clone();
    let s_min = report.cells.iter().map(|c| c.s).min().unwrap_or(0) as f64;
    let s_max = report.cells.iter().map(|c| c.s).max().unwrap_or(1) as f64;
    let y_max = fixed_max.unwrap_or_else(|| {
        let top = report
            .cells
            .iter()
            .map(&value)
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        if top > 0.0 {
            top * 1.1
        } else {
            1.0
        }
    });
    let x_of = |s: f64| {
        let span = (s_max - s_min).max(1.0);
        MARGIN + (s - s_min) / span * (WIDTH - 2.0 * MARGIN)
    };
    let y_of = |v: f64| HEIGHT - MARGIN - v / y_max * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" data-column="{}" data-y-max="{}">"#,
        escape(column),
        num(y_max)
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN, MARGIN);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">s</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
        x0 - 6.0,
        y1 + 4.0,
        num(y_max)
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">0</text>"#,
        x0 - 6.0,
        y0 + 4.0
    );
    let mut ticks: Vec<usize> = report.cells.iter().map(|c| c.s).collect();
    ticks.sort_unstable();
    ticks.dedup();
    for s in ticks {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{s}</text>"#,
            x_of(s as f64),
            y0 + 16.0
        );
    }

    for (i, method) in methods.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cells: Vec<&CellSummary> = report.summaries_for(*method).collect();
        let points: Vec<String> = cells
            .iter()
            .filter(|c| value(c).is_finite())
            .map(|c| format!("{:.2},{:.2}", x_of(c.s as f64), y_of(value(c))))
            .collect();
        let _ = writeln!(svg, r#"<g data-method="{}">"#, method.name());
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        for c in &cells {
            let v = value(c);
            let y = if v.is_finite() { y_of(v) } else { y0 };
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}" data-method="{}" data-s="{}" data-value="{}"/>"#,
                x_of(c.s as f64),
                y,
                method.name(),
                c.s,
                num(v)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            x1 - 110.0,
            y1 + 16.0 * i as f64,
            method.name()
        );
        let _ = writeln!(svg, "</g>");
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_charts(dir: &Path, report: &SweepReport) -> Result<()> {
    let recovery = line_chart(
        "Recovery probability",
        "recovery_prob",
        report,
        |c| c.recovery_prob,
        Some(1.0),
    );
    std::fs::write(dir.join("recovery.svg"), recovery)?;
    let time = line_chart(
        "Mean wall time (s)",
        "mean_wall_time_s",
        report,
        |c| c.mean_wall_time_s,
        None,
    );
    std::fs::write(dir.join("time.svg"), time)?;
    Ok(())
}
