//! Render metrics curves to a standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::cli::metrics::load_metrics;
use crate::error::{Error, Result};

const W: f64 = 720.0;
const H: f64 = 440.0;
const MARGIN: f64 = 56.0;

struct Series {
    label: &'static str,
    color: &'static str,
    points: Vec<(f64, f64)>,
}

/// Plot train/valid perplexity by epoch from a metrics file.
pub fn render_metrics_svg(metrics_path: &Path, out_path: &Path) -> Result<()> {
    let records = load_metrics(metrics_path)?;
    if records.is_empty() {
        return Err(Error::Config(format!(
            "no metrics records in {}",
            metrics_path.display()
        )));
    }
    let mut series = vec![
        Series {
            label: "train ppl",
            color: "#1f77b4",
            points: Vec::new(),
        },
        Series {
            label: "valid ppl",
            color: "#d62728",
            points: Vec::new(),
        },
    ];
    for r in &records {
        let idx = match r.split.as_str() {
            "train" => 0,
            "valid" => 1,
            _ => continue,
        };
        series[idx].points.push((r.epoch as f64, r.perplexity));
    }
    series.retain(|s| !s.points.is_empty());
    if series.is_empty() {
        return Err(Error::Config("metrics contain no train/valid records".into()));
    }

    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);

    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    // Axes.
    writeln!(
        svg,
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{t}" x2="{m}" y2="{b}" stroke="black"/>"#,
        m = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN,
        t = MARGIN
    )
    .unwrap();
    // Tick labels at the extremes.
    writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{x0:.0}</text>"#,
        sx(x0),
        H - MARGIN + 16.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{x1:.0}</text>"#,
        sx(x1),
        H - MARGIN + 16.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{y0:.2}</text>"#,
        MARGIN - 6.0,
        sy(y0) + 4.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{y1:.2}</text>"#,
        MARGIN - 6.0,
        sy(y1) + 4.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">epoch</text>"#,
        W / 2.0,
        H - 12.0
    )
    .unwrap();
    writeln!(
        svg,
        r#"<text x="16" y="{}" font-size="12" transform="rotate(-90 16 {})" text-anchor="middle">perplexity</text>"#,
        H / 2.0,
        H / 2.0
    )
    .unwrap();

    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        writeln!(
            svg,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            s.color,
            pts.join(" ")
        )
        .unwrap();
        let ly = MARGIN + 16.0 * i as f64;
        writeln!(
            svg,
            r#"<line x1="{x}" y1="{ly}" x2="{x2}" y2="{ly}" stroke="{c}" stroke-width="1.5"/><text x="{tx}" y="{ty}" font-size="12">{l}</text>"#,
            x = W - MARGIN - 110.0,
            x2 = W - MARGIN - 86.0,
            c = s.color,
            tx = W - MARGIN - 80.0,
            ty = ly + 4.0,
            l = s.label
        )
        .unwrap();
    }
    writeln!(svg, "</svg>").unwrap();
    std::fs::write(out_path, svg)?;
    Ok(())
}
