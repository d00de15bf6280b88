//! SVG loss curves.

use std::fmt::Write as _;

use crate::losses::LossTerm;
use crate::trainer::CurveRow;

pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub points: Vec<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn bounds(series: &[Series]) -> (f64, f64, f64, f64) {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = (y1 - y0) * 0.05;
    (x0, x1, y0 - pad, y1 + pad)
}

/// Line chart with circle markers, labelled axes and a legend.
pub fn line_chart(title: &str, series: &[Series]) -> String {
    let (x0, x1, y0, y1) = bounds(series);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(w, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(w, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        w,
        r#"<g class="axes" stroke="black"><line x1="{LEFT}" y1="{}" x2="{}" y2="{}"/><line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}"/></g>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph,
        TOP + ph
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(w, r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="middle">{:.4}</text>"#, sx(fx), TOP + ph + 16.0, fx);
        let _ = writeln!(w, r#"<text class="tick" x="{:.1}" y="{:.1}" text-anchor="end">{:.4}</text>"#, LEFT - 6.0, sy(fy) + 4.0, fy);
    }
    let _ = writeln!(w, r#"<text class="xlabel" x="{}" y="{}" text-anchor="middle">epoch</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0);
    let _ = writeln!(
        w,
        r#"<text class="ylabel" x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">loss value</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (i, ser) in series.iter().enumerate() {
        let name = escape(&ser.name);
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(w, r#"<g class="series" data-name="{name}">"#);
        let _ = writeln!(w, r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#, ser.color, pts.join(" "));
        for &(x, y) in &ser.points {
            let _ = writeln!(w, r#"<circle class="point" cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, sx(x), sy(y), ser.color);
        }
        let _ = writeln!(w, "</g>");
        let ly = TOP + 10.0 + 16.0 * i as f64;
        let lx = LEFT + pw - 150.0;
        let _ = writeln!(w, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#, lx + 20.0, ser.color);
        let _ = writeln!(w, r#"<text x="{}" y="{}">{name}</text>"#, lx + 26.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

fn split_series(rows: &[CurveRow], value: impl Fn(&CurveRow) -> f64, prefix: &str) -> Vec<Series> {
    let mut splits: Vec<&str> = Vec::new();
    for r in rows {
        if !splits.contains(&r.split.as_str()) {
            splits.push(&r.split);
        }
    }
    splits
        .iter()
        .enumerate()
        .map(|(i, split)| Series {
            name: format!("{prefix}{split}"),
            color: PALETTE[i % PALETTE.len()],
            points: rows.iter().filter(|r| r.split == *split).map(|r| (r.epoch as f64, value(r))).collect(),
        })
        .collect()
}

/// `(file stem, svg)` for each loss term, the total and an overlay of all
/// terms.
pub fn loss_curves(rows: &[CurveRow]) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for term in LossTerm::ALL {
        let series = split_series(rows, |r| r.loss.term(term), "");
        out.push((term.name().to_string(), line_chart(&format!("{} loss", term.name()), &series)));
    }
    out.push(("total".into(), line_chart("total loss", &split_series(rows, |r| r.loss.total, ""))));
    let mut overlay = Vec::new();
    for term in LossTerm::ALL {
        overlay.extend(split_series(rows, |r| r.loss.term(term), &format!("{} ", term.name())));
    }
    for (i, s) in overlay.iter_mut().enumerate() {
        s.color = PALETTE[i % PALETTE.len()];
    }
    out.push(("overlay".into(), line_chart("loss terms", &overlay)));
    out
}
