//! Run outputs: per-trial CSVs, a JSON summary and SVG box plots.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::harness::metrics::Summary;
use crate::harness::scenario::RunReport;

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn wide_csv(report: &RunReport, data: &[Vec<Option<f64>>]) -> String {
    let mut out = String::from("t,trial");
    for m in report.methods() {
        out.push(',');
        out.push_str(m.name());
    }
    out.push('\n');
    let trials = report.settings.trials;
    let rows = data.first().map_or(0, Vec::len);
    for idx in 0..rows {
        write!(out, "{},{}", idx / trials, idx % trials).unwrap();
        for col in data {
            out.push(',');
            if let Some(v) = col[idx] {
                write!(out, "{v:.12e}").unwrap();
            }
        }
        out.push('\n');
    }
    out
}

pub fn summary_json(report: &RunReport) -> Value {
    let methods: serde_json::Map<String, Value> = report
        .methods()
        .iter()
        .map(|&m| {
            (
                m.name().to_string(),
                json!({
                    "nrmse": Summary::of(&report.nrmse_of(m)),
                    "timing_secs": Summary::of(&report.timing_of(m)),
                }),
            )
        })
        .collect();
    json!({
        "steps": report.settings.steps,
        "trials": report.settings.trials,
        "seed": report.settings.seed,
        "sigma_pseudo": report.settings.sigma_pseudo,
        "n_state": report.n_state,
        "n_constrained": report.n_constrained,
        "methods": methods,
        "partial": report.is_partial(),
        "failures": report.failures,
        "prior_unconverged_steps": report.prior_unconverged_steps,
        "total_secs": report.total_secs,
    })
}

/// Writes `nrmse.csv`, `timing.csv`, `summary.json`, `nrmse.svg` and
/// `timing.svg` into `dir` and returns their paths.
pub fn emit_report(report: &RunReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if report.methods().is_empty() {
        return Err(Error::Config("report has no methods".into()));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write_file(&p, &text)?;
        written.push(p);
        Ok(())
    };
    put("nrmse.csv", wide_csv(report, &report.nrmse))?;
    put("timing.csv", wide_csv(report, &report.timing))?;
    put(
        "summary.json",
        serde_json::to_string_pretty(&summary_json(report)).expect("summary serializes"),
    )?;
    let series = |f: &dyn Fn(crate::harness::scenario::Method) -> Vec<f64>| {
        report
            .methods()
            .iter()
            .map(|&m| (m.name().to_string(), f(m)))
            .collect::<Vec<_>>()
    };
    put("nrmse.svg", box_plot_svg("nRMSE", &series(&|m| report.nrmse_of(m)), false))?;
    put(
        "timing.svg",
        box_plot_svg("time per estimate [s]", &series(&|m| report.timing_of(m)), true),
    )?;
    Ok(written)
}

/// Box plot (whiskers at min/max) with one box per series in the given order.
pub fn box_plot_svg(y_label: &str, series: &[(String, Vec<f64>)], log_scale: bool) -> String {
    let (w, h) = (120.0 + 90.0 * series.len() as f64, 360.0);
    let (left, top, bottom) = (70.0, 20.0, 40.0);
    let plot_h = h - top - bottom;
    let tf = |v: f64| if log_scale { v.max(1e-300).log10() } else { v };
    let stats: Vec<Option<Summary>> = series
        .iter()
        .map(|(_, v)| (!v.is_empty()).then(|| Summary::of(v)))
        .collect();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in stats.iter().flatten() {
        lo = lo.min(tf(s.min));
        hi = hi.max(tf(s.max));
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let y = |v: f64| top + plot_h * (1.0 - (tf(v) - lo) / (hi - lo));
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(svg, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{}" stroke="black"/>"#, top + plot_h).unwrap();
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let yy = top + plot_h * (1.0 - k as f64 / 4.0);
        let label = if log_scale { format!("1e{v:.1}") } else { format!("{v:.3e}") };
        writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">{label}</text>"#, left - 4.0, yy + 4.0).unwrap();
    }
    writeln!(
        svg,
        r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle">{y_label}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    )
    .unwrap();
    for (i, ((name, _), s)) in series.iter().zip(&stats).enumerate() {
        let cx = left + 60.0 + 90.0 * i as f64;
        writeln!(svg, r#"<text x="{cx}" y="{}" text-anchor="middle">{name}</text>"#, h - 12.0).unwrap();
        let Some(s) = s else { continue };
        writeln!(
            svg,
            r#"<line x1="{cx}" y1="{:.1}" x2="{cx}" y2="{:.1}" stroke="black"/>"#,
            y(s.min),
            y(s.max)
        )
        .unwrap();
        writeln!(
            svg,
            r##"<rect x="{:.1}" y="{:.1}" width="50" height="{:.1}" fill="#9ecae1" stroke="black"/>"##,
            cx - 25.0,
            y(s.q3),
            (y(s.q1) - y(s.q3)).max(0.5)
        )
        .unwrap();
        writeln!(
            svg,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - 25.0,
            y(s.median),
            cx + 25.0,
            y(s.median)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
