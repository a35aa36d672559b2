//! Minimal self-contained SVG plots: lines, scatters and heatmaps on a fixed
//! 640x480 canvas with tick-labelled axes.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{CliError, Result};

pub const WIDTH: f64 = 640.0;
pub const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Line,
    Scatter,
    Heatmap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Cell values for heatmaps, aligned with `points` (cell centres).
    pub values: Vec<f64>,
    /// Draw as markers even on a line plot.
    pub markers: bool,
}

impl Series {
    pub fn new(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.to_string(),
            points,
            values: Vec::new(),
            markers: false,
        }
    }

    pub fn markers(label: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            markers: true,
            ..Series::new(label, points)
        }
    }

    pub fn cells(label: &str, points: Vec<(f64, f64)>, values: Vec<f64>) -> Self {
        Series {
            values,
            ..Series::new(label, points)
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Labels {
    pub title: String,
    pub x: String,
    pub y: String,
}

impl Labels {
    pub fn new(title: &str, x: &str, y: &str) -> Self {
        Labels {
            title: title.into(),
            x: x.into(),
            y: y.into(),
        }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if hi > lo {
        (lo, hi)
    } else {
        let pad = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// Roughly five round-numbered ticks covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), decimals)
}

/// Dark blue to yellow.
fn colormap(u: f64) -> String {
    let u = u.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * u).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(20.0, 250.0), lerp(30.0, 230.0), lerp(110.0, 40.0))
}

pub fn render_svg(series: &[Series], kind: PlotKind, labels: &Labels) -> Result<String> {
    let finite = |p: &&(f64, f64)| p.0.is_finite() && p.1.is_finite();
    if series.iter().all(|s| s.points.iter().filter(finite).count() == 0) {
        return Err(CliError::Usage("cannot plot an empty series".into()));
    }
    if kind == PlotKind::Heatmap && (series.len() != 1 || series[0].values.len() != series[0].points.len()) {
        return Err(CliError::Usage("a heatmap needs one series with a value per point".into()));
    }
    let pts = || series.iter().flat_map(|s| s.points.iter().filter(finite));
    let (mut x0, mut x1) = bounds(pts().map(|p| p.0));
    let (mut y0, mut y1) = bounds(pts().map(|p| p.1));
    let mut cell = (0.0, 0.0);
    if kind == PlotKind::Heatmap {
        let uniq = |f: fn(&(f64, f64)) -> f64| {
            let mut v: Vec<f64> = series[0].points.iter().map(f).collect();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v.len().max(2)
        };
        cell = ((x1 - x0) / (uniq(|p| p.0) - 1) as f64, (y1 - y0) / (uniq(|p| p.1) - 1) as f64);
        x0 -= cell.0 / 2.0;
        x1 += cell.0 / 2.0;
        y0 -= cell.1 / 2.0;
        y1 += cell.1 / 2.0;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">
<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(&labels.title)
    );

    match kind {
        PlotKind::Heatmap => {
            let ser = &series[0];
            let (v0, v1) = bounds(ser.values.iter().copied().filter(|v| v.is_finite()));
            for (p, v) in ser.points.iter().zip(&ser.values) {
                if !v.is_finite() {
                    continue;
                }
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                    sx(p.0 - cell.0 / 2.0),
                    sy(p.1 + cell.1 / 2.0),
                    cell.0 / (x1 - x0) * pw + 0.5,
                    cell.1 / (y1 - y0) * ph + 0.5,
                    colormap((v - v0) / (v1 - v0))
                );
            }
        }
        _ => {
            for (i, ser) in series.iter().enumerate() {
                let color = PALETTE[i % PALETTE.len()];
                if kind == PlotKind::Line && !ser.markers {
                    let coords: Vec<String> = ser.points.iter().filter(finite).map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
                    let _ = writeln!(
                        s,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                        coords.join(" ")
                    );
                } else {
                    for p in ser.points.iter().filter(finite) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" fill-opacity="0.7"/>"#, sx(p.0), sy(p.1));
                    }
                }
            }
            let mut ly = TOP + 14.0;
            for (i, ser) in series.iter().enumerate().filter(|(_, s)| !s.label.is_empty()) {
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{ly:.2}" font-family="sans-serif" font-size="11" text-anchor="end" fill="{}">{}</text>"#,
                    WIDTH - RIGHT - 6.0,
                    PALETTE[i % PALETTE.len()],
                    escape(&ser.label)
                );
                ly += 14.0;
            }
        }
    }

    // Axes with ticks.
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let (xt, xd) = ticks(x0, x1);
    for x in xt {
        let px = sx(x);
        let _ = writeln!(
            s,
            r#"<line x1="{px:.2}" y1="{0:.2}" x2="{px:.2}" y2="{1:.2}" stroke="black"/><text x="{px:.2}" y="{2:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{x:.xd$}</text>"#,
            TOP + ph,
            TOP + ph + 5.0,
            TOP + ph + 18.0
        );
    }
    let (yt, yd) = ticks(y0, y1);
    for y in yt {
        let py = sy(y);
        let _ = writeln!(
            s,
            r#"<line x1="{0:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{1:.2}" y="{2:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{y:.yd$}</text>"#,
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 12.0,
        escape(&labels.x)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.2}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {0:.2})">{1}</text>"#,
        TOP + ph / 2.0,
        escape(&labels.y)
    );
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg(series: &[Series], kind: PlotKind, path: &Path, labels: &Labels) -> Result<()> {
    let svg = render_svg(series, kind, labels)?;
    std::fs::write(path, svg)?;
    Ok(())
}
