//! SVG line charts of sweep results.
//!
//! Every chart carries its plotted numbers in a leading XML comment so the
//! file can be read without a viewer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::episode::ControllerKind;
use super::sweep::{summarize, SweepRow, METRICS};
use crate::error::{Error, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 200.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<Point>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Step between axis ticks: 1, 2 or 5 times a power of ten.
fn tick_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn axis_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 0.0 { lo.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.decimals$}")
}

/// Renders `series` as an SVG line chart with ±1 std error bars.
/// Non-finite points are left out.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let finite = |p: &&Point| p.x.is_finite() && p.mean.is_finite();
    let pts = || series.iter().flat_map(|s| s.points.iter().filter(finite));
    let (x0, x1) = axis_range(pts().map(|p| p.x));
    let (y0, y1) = axis_range(pts().flat_map(|p| {
        let s = if p.std.is_finite() { p.std } else { 0.0 };
        [p.mean - s, p.mean + s]
    }));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    svg.push_str("<!-- data\nseries,x,mean,std\n");
    for s in series {
        for p in &s.points {
            let _ = writeln!(
                svg,
                "{},{},{},{}",
                s.label.replace("--", "- -"),
                p.x,
                p.mean,
                p.std
            );
        }
    }
    svg.push_str("-->\n");
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + pw / 2.0,
        escape(title)
    );

    let _ = writeln!(
        svg,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (lo, hi, vertical) in [(x0, x1, true), (y0, y1, false)] {
        let step = tick_step(hi - lo);
        let mut t = (lo / step).ceil() * step;
        while t <= hi + step * 1e-9 {
            let label = fmt_tick(t, step);
            if vertical {
                let x = sx(t);
                let _ = writeln!(
                    svg,
                    r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/><text x="{x:.1}" y="{:.1}" text-anchor="middle">{label}</text>"##,
                    TOP + ph,
                    TOP + ph + 18.0
                );
            } else {
                let y = sy(t);
                let _ = writeln!(
                    svg,
                    r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"##,
                    LEFT + pw,
                    LEFT - 6.0,
                    y + 4.0
                );
            }
            t += step;
        }
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 15.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text transform="translate(20 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(y_label)
    );

    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let shown: Vec<&Point> = s.points.iter().filter(finite).collect();
        let path: Vec<String> = shown
            .iter()
            .map(|p| format!("{:.1},{:.1}", sx(p.x), sy(p.mean)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for p in shown {
            let (x, y) = (sx(p.x), sy(p.mean));
            if p.std.is_finite() && p.std > 0.0 {
                let _ = writeln!(
                    svg,
                    r#"<line x1="{x:.1}" y1="{:.1}" x2="{x:.1}" y2="{:.1}" stroke="{color}"/>"#,
                    sy(p.mean - p.std),
                    sy(p.mean + p.std)
                );
            }
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.1}" cy="{y:.1}" r="3" fill="{color}"/>"#
            );
        }
        let ly = TOP + 10.0 + 20.0 * i as f64;
        let lx = LEFT + pw + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

type Getter = fn(&super::episode::EpisodeMetrics) -> f64;

/// Groups successful rows by `(label, x)` and summarizes `get`.
fn collect_series(
    rows: &[SweepRow],
    get: Getter,
    key: impl Fn(&SweepRow) -> (String, f64),
) -> Vec<Series> {
    let mut groups: BTreeMap<String, BTreeMap<u64, Vec<(u64, f64)>>> = BTreeMap::new();
    let mut xs: BTreeMap<u64, f64> = BTreeMap::new();
    for r in rows {
        let Some(m) = &r.metrics else { continue };
        let (label, x) = key(r);
        let xk = x.to_bits();
        xs.insert(xk, x);
        groups
            .entry(label)
            .or_default()
            .entry(xk)
            .or_default()
            .push((r.seed, get(m)));
    }
    groups
        .into_iter()
        .map(|(label, by_x)| {
            let mut points: Vec<Point> = by_x
                .into_iter()
                .map(|(xk, mut vals)| {
                    vals.sort_by_key(|(seed, _)| *seed);
                    let v: Vec<f64> = vals.into_iter().map(|(_, v)| v).collect();
                    let s = summarize(&v);
                    Point {
                        x: xs[&xk],
                        mean: s.mean,
                        std: s.std,
                    }
                })
                .collect();
            points.sort_by(|a, b| a.x.total_cmp(&b.x));
            Series { label, points }
        })
        .collect()
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes one chart per metric against K and, when the rows span more than
/// one obstacle count, against obstacle count. An `index.html` lists them.
/// Returns the chart paths.
pub fn write_report(rows: &[SweepRow], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let scenarios: BTreeSet<&str> = rows.iter().map(|r| r.scenario.as_str()).collect();
    let obstacle_counts: BTreeSet<usize> = rows.iter().map(|r| r.obstacles).collect();
    let ks: BTreeSet<usize> = rows.iter().map(|r| r.num_samples).collect();
    let many_scenarios = scenarios.len() > 1;
    let controller_label = |c: ControllerKind| c.name().to_string();

    let mut written = Vec::new();
    let mut index = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Sweep report</title></head><body>\n<h1>Sweep report</h1>\n",
    );
    let _ = writeln!(
        index,
        "<p>{} episodes, {} failed.</p>",
        rows.len(),
        rows.iter().filter(|r| r.metrics.is_none()).count()
    );
    for (name, get) in METRICS {
        let _ = writeln!(index, "<h2>{name}</h2>");
        let vs_k = collect_series(rows, get, |r| {
            let label = if many_scenarios {
                format!("{} {}", controller_label(r.controller), r.scenario)
            } else {
                controller_label(r.controller)
            };
            (label, r.num_samples as f64)
        });
        let file = format!("{name}_vs_k.svg");
        write_file(
            &dir.join(&file),
            &line_chart(&format!("{name} vs K"), "samples K", name, &vs_k),
        )?;
        let _ = writeln!(index, "<img src=\"{file}\" alt=\"{name} vs K\">");
        written.push(dir.join(file));

        if obstacle_counts.len() > 1 {
            let vs_obs = collect_series(rows, get, |r| {
                let label = if ks.len() > 1 {
                    format!("{} K={}", controller_label(r.controller), r.num_samples)
                } else {
                    controller_label(r.controller)
                };
                (label, r.obstacles as f64)
            });
            let file = format!("{name}_vs_obstacles.svg");
            write_file(
                &dir.join(&file),
                &line_chart(&format!("{name} vs obstacles"), "obstacles", name, &vs_obs),
            )?;
            let _ = writeln!(index, "<img src=\"{file}\" alt=\"{name} vs obstacles\">");
            written.push(dir.join(file));
        }
    }
    index.push_str("</body></html>\n");
    write_file(&dir.join("index.html"), &index)?;
    Ok(written)
}
