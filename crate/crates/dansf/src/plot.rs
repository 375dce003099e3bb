//! Minimal self-contained SVG renderer for convergence curves: linear x,
//! log-scale y with decade ticks, one polyline per series.

use std::fmt::Write as _;

use crate::error::{DansfError, Result};

/// One named curve; `points` are `(iteration, value)` with `value > 0`
/// expected for the log axis (non-positive values are dropped).
#[derive(Debug, Clone)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Chart description handed to [`render_svg`].
#[derive(Debug, Clone)]
pub struct PlotSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<PlotSeries>,
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 520.0;
const MARGIN_L: f64 = 78.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 58.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Render the chart as a standalone SVG document.
pub fn render_svg(spec: &PlotSpec) -> String {
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;

    let mut finite: Vec<(f64, f64)> = Vec::new();
    for s in &spec.series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() && y > 0.0 {
                finite.push((x, y));
            }
        }
    }

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="26" font-size="17" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        escape(&spec.title)
    );

    // axes
    let x0 = MARGIN_L;
    let y0 = MARGIN_T + plot_h;
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{y0}" x2="{:.1}" y2="{y0}" stroke="black"/>"#,
        x0 + plot_w
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{x0}" y1="{MARGIN_T}" x2="{x0}" y2="{y0}" stroke="black"/>"#
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 14.0,
        escape(&spec.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 20 {:.1})">{}</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0,
        escape(&spec.y_label)
    );

    if finite.is_empty() {
        let _ = writeln!(svg, "</svg>");
        return svg;
    }

    let x_min = finite.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let x_max = finite.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let x_span = if x_max > x_min { x_max - x_min } else { 1.0 };
    let y_min = finite.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let y_max = finite.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let dec_lo = y_min.log10().floor() as i32;
    let mut dec_hi = y_max.log10().ceil() as i32;
    if dec_hi == dec_lo {
        dec_hi += 1;
    }

    let x_of = |x: f64| MARGIN_L + (x - x_min) / x_span * plot_w;
    let y_of = |y: f64| {
        let t = (y.log10() - dec_lo as f64) / (dec_hi - dec_lo) as f64;
        y0 - t * plot_h
    };

    // y decade gridlines and tick labels
    let step = 1 + (dec_hi - dec_lo) as usize / 12;
    let mut d = dec_lo;
    while d <= dec_hi {
        let y = y_of(10f64.powi(d));
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
            x0 + plot_w
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="end">1e{d}</text>"#,
            x0 - 6.0,
            y + 4.0
        );
        d += step as i32;
    }

    // x ticks
    for i in 0..=5 {
        let x = x_min + x_span * i as f64 / 5.0;
        let px = x_of(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.1}" y1="{y0}" x2="{px:.1}" y2="{:.1}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{px:.1}" y="{:.1}" font-size="12" text-anchor="middle">{:.0}</text>"#,
            y0 + 20.0,
            x
        );
    }

    // series polylines and legend
    for (idx, s) in spec.series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut path = String::new();
        for &(x, y) in &s.points {
            if !(x.is_finite() && y.is_finite() && y > 0.0) {
                continue;
            }
            let _ = write!(path, "{:.2},{:.2} ", x_of(x), y_of(y));
        }
        if !path.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
                path.trim_end()
            );
        }
        let ly = MARGIN_T + 16.0 + idx as f64 * 18.0;
        let lx = MARGIN_L + plot_w - 150.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2.4"/>"#,
            lx + 24.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
            lx + 30.0,
            ly + 4.0,
            escape(&s.label)
        );
    }

    let _ = writeln!(svg, "</svg>");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Parse a summary CSV into plottable median series. Accepts the single-run
/// schema `iter,median,q1,q3` and the sweep schema
/// `topology,iter,median,q1,q3` (one series per topology).
pub fn parse_summary_csv(text: &str) -> Result<Vec<PlotSeries>> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(DansfError::Parse {
        line: 1,
        message: "empty document".into(),
    })?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let labeled = match cols.as_slice() {
        ["iter", "median", "q1", "q3"] => false,
        ["topology", "iter", "median", "q1", "q3"] => true,
        _ => {
            return Err(DansfError::Parse {
                line: 1,
                message: format!("unrecognized summary header `{}`", header.trim()),
            })
        }
    };

    let mut series: Vec<PlotSeries> = Vec::new();
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let expect = if labeled { 5 } else { 4 };
        if fields.len() != expect {
            return Err(DansfError::Parse {
                line: line_no,
                message: format!("expected {expect} fields, got {}", fields.len()),
            });
        }
        let parse_f = |tok: &str| -> Result<f64> {
            tok.parse().map_err(|_| DansfError::Parse {
                line: line_no,
                message: format!("invalid number `{tok}`"),
            })
        };
        let (label, iter_tok, median_tok) = if labeled {
            (fields[0].to_string(), fields[1], fields[2])
        } else {
            ("median".to_string(), fields[0], fields[1])
        };
        let iter = parse_f(iter_tok)?;
        let median = parse_f(median_tok)?;
        match series.iter_mut().find(|s| s.label == label) {
            Some(s) => s.points.push((iter, median)),
            None => series.push(PlotSeries {
                label,
                points: vec![(iter, median)],
            }),
        }
    }
    Ok(series)
}

/// Render a summary CSV straight to SVG.
pub fn plot_summary(csv_text: &str, title: &str) -> Result<String> {
    let series = parse_summary_csv(csv_text)?;
    Ok(render_svg(&PlotSpec {
        title: title.to_string(),
        x_label: "iteration".into(),
        y_label: "relative MSE (max over nodes)".into(),
        series,
    }))
}
