//! Line charts of trajectory metrics against the step number, as SVG.
//!
//! Rows sharing an `arm` (or all rows when there is no such column) are
//! averaged per step; each arm and layer becomes one polyline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

/// Output file stem and the CSV columns drawn on it.
const CHARTS: [(&str, &str, &[&str]); 5] = [
    (
        "in_mask_fraction",
        "in-mask attention fraction",
        &["in_mask_fraction_full", "in_mask_fraction_half"],
    ),
    ("e_total", "total energy", &["e_total"]),
    ("e_attract", "attraction energy", &["e_attract"]),
    ("e_repel", "repulsion energy", &["e_repel"]),
    ("grad_norm", "correction gradient norm", &["grad_norm"]),
];

/// `series label -> step -> (sum, count)` per chart.
type Series = BTreeMap<String, BTreeMap<u64, (f64, usize)>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub stem: &'static str,
    pub title: &'static str,
    /// Series label and its `(step, mean)` points in step order.
    pub lines: Vec<(String, Vec<(f64, f64)>)>,
}

pub fn parse_trajectories(text: &str) -> CliResult<Vec<Chart>> {
    let mut rdr = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = rdr
        .headers()
        .map_err(|e| CliError::user(format!("line 1: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let step_col = col("step").ok_or_else(|| CliError::user("line 1: missing `step` column"))?;
    let arm_col = col("arm");
    let mut series: Vec<Series> = vec![Series::new(); CHARTS.len()];
    let mut rows = 0usize;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            CliError::user(format!("line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |what: String| CliError::user(format!("line {line}: {what}"));
        let step: u64 = rec
            .get(step_col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(format!("invalid step {:?}", rec.get(step_col).unwrap_or(""))))?;
        let arm = arm_col.and_then(|c| rec.get(c)).unwrap_or("all");
        for (k, (_, _, cols)) in CHARTS.iter().enumerate() {
            for &c in cols.iter() {
                let Some(idx) = col(c) else { continue };
                let field = rec.get(idx).unwrap_or("").trim();
                if field.is_empty() {
                    continue;
                }
                let v: f64 = field
                    .parse()
                    .ok()
                    .filter(|v: &f64| v.is_finite())
                    .ok_or_else(|| bad(format!("invalid {c} value {field:?}")))?;
                let label = if cols.len() > 1 {
                    format!("{arm} {}", c.rsplit('_').next().unwrap_or(c))
                } else {
                    arm.to_string()
                };
                let cell = series[k].entry(label).or_default().entry(step).or_default();
                cell.0 += v;
                cell.1 += 1;
            }
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::user("no data rows"));
    }
    Ok(CHARTS
        .iter()
        .zip(series)
        .filter(|(_, s)| !s.is_empty())
        .map(|((stem, title, _), s)| Chart {
            stem,
            title,
            lines: s
                .into_iter()
                .map(|(label, pts)| {
                    let pts = pts
                        .into_iter()
                        .map(|(step, (sum, n))| (step as f64, sum / n as f64))
                        .collect();
                    (label, pts)
                })
                .collect(),
        })
        .collect())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if lo == hi {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    } else {
        (lo, hi)
    }
}

pub fn render_svg(chart: &Chart) -> String {
    let points = || chart.lines.iter().flat_map(|(_, p)| p.iter());
    let (x0, x1) = range(points().map(|p| p.0));
    let (y0, y1) = range(points().map(|p| p.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        escape(chart.title)
    );
    let _ = writeln!(
        s,
        r#"<path d="M{LEFT:.2},{TOP:.2} V{:.2} H{:.2}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{xv:.1}</text>"#,
            sx(xv),
            TOP + ph + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{yv:.4}</text>"#,
            LEFT - 6.0,
            sy(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">step</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 10.0
    );
    for (n, (label, pts)) in chart.lines.iter().enumerate() {
        let color = PALETTE[n % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            coords.join(" ")
        );
        let ly = TOP + 16.0 * n as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            LEFT + pw + 12.0,
            LEFT + pw + 32.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
            LEFT + pw + 38.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes one SVG per charted metric and returns their paths.
pub fn cmd_plot(input: &Path, out: &Path) -> CliResult<Vec<PathBuf>> {
    let text = std::fs::read_to_string(input).map_err(|e| CliError::input(input, e))?;
    let charts = parse_trajectories(&text).map_err(|e| match e {
        CliError::User(m) => CliError::User(format!("{}: {m}", input.display())),
        other => other,
    })?;
    std::fs::create_dir_all(out).map_err(|e| CliError::output(out, e))?;
    charts
        .iter()
        .map(|c| {
            let path = out.join(format!("{}.svg", c.stem));
            std::fs::write(&path, render_svg(c)).map_err(|e| CliError::output(&path, e))?;
            Ok(path)
        })
        .collect()
}
