//! Accuracy-vs-p line chart rendered as standalone SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::niv::PALETTE;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlotError {
    #[error("curve file has no data rows")]
    Empty,
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

/// One line on the chart: `(p, accuracy)` points sorted by p.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads the `strategy seed p accuracy` table. Only the aggregate rows are
/// kept (seed `-` or `mean`); per-seed random rows are skipped.
pub fn parse_curves_tsv(text: &str) -> Result<Vec<Series>, PlotError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        None => return Err(PlotError::Empty),
        Some((i, header)) => {
            let cols: Vec<&str> = header.split('\t').collect();
            if cols != ["strategy", "seed", "p", "accuracy"] {
                return Err(PlotError::Malformed {
                    line: i + 1,
                    message: format!("unexpected header {header:?}"),
                });
            }
        }
    }
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for (i, line) in lines {
        let malformed = |message: String| PlotError::Malformed { line: i + 1, message };
        let cols: Vec<&str> = line.split('\t').collect();
        let [strategy, seed, p, acc] = cols[..] else {
            return Err(malformed(format!("expected 4 columns, found {}", cols.len())));
        };
        let p: f64 = p.parse().map_err(|_| malformed(format!("bad p {p:?}")))?;
        let acc: f64 = acc.parse().map_err(|_| malformed(format!("bad accuracy {acc:?}")))?;
        if !p.is_finite() || !acc.is_finite() {
            return Err(malformed("non-finite value".into()));
        }
        if seed == "-" || seed == "mean" {
            series.entry(strategy.to_string()).or_default().push((p, acc));
        }
    }
    if series.is_empty() {
        return Err(PlotError::Empty);
    }
    Ok(series
        .into_iter()
        .map(|(name, mut points)| {
            points.sort_by(|a, b| a.0.total_cmp(&b.0));
            Series { name, points }
        })
        .collect())
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

pub fn render_svg(series: &[Series]) -> String {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi) = (0.0f64, 0.0f64);
    for &(p, _) in all {
        x_lo = x_lo.min(p);
        x_hi = x_hi.max(p);
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |p: f64| LEFT + (p - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |a: f64| TOP + (1.0 - a.clamp(0.0, 1.0)) * plot_h;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="Helvetica, Arial, sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<g stroke="black" stroke-width="1"><line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}"/></g>"#,
        TOP + plot_h,
        LEFT + plot_w,
        TOP + plot_h,
        TOP + plot_h
    );
    for k in 0..=5 {
        let a = k as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{a:.1}</text>"#,
            LEFT - 6.0,
            sy(a) + 4.0
        );
    }
    for k in 0..=5 {
        let p = x_lo + (x_hi - x_lo) * k as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{p:.1}</text>"#,
            sx(p),
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">deletion fraction p</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">accuracy</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = s
            .points
            .iter()
            .map(|&(p, a)| format!("{:.2},{:.2}", sx(p), sy(a)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        let ly = TOP + 20.0 * i as f64 + 10.0;
        let lx = LEFT + plot_w + 15.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
