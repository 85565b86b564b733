//! Minimal line charts written straight to SVG text.

use std::fmt::Write;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 62.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 34.0;
const MARGIN_B: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    /// Half-height of the error bar; zero draws none.
    pub err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<Point>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl Panel {
    pub fn is_empty(&self) -> bool {
        self.series.iter().all(|s| s.points.is_empty())
    }
}

/// Round step for roughly `target` ticks over `span`.
fn tick_step(span: f64, target: usize) -> f64 {
    if span <= 0.0 || !span.is_finite() {
        return 1.0;
    }
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 { 0 } else { (-step.log10().floor()) as usize };
    let s = format!("{v:.decimals$}");
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = if hi.abs() > 0.0 { hi.abs() * 0.1 } else { 1.0 };
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

fn draw_panel(out: &mut String, p: &Panel, ox: f64) {
    let pts = || p.series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = bounds(pts().map(|q| q.x));
    let (mut y0, y1) = bounds(pts().flat_map(|q| [q.y - q.err, q.y + q.err]));
    if y0 > 0.0 && y0 < (y1 - y0) {
        y0 = 0.0;
    }
    let xs = tick_step(x1 - x0, 5);
    let ys = tick_step(y1 - y0, 5);
    let (x0, x1) = ((x0 / xs).floor() * xs, (x1 / xs).ceil() * xs);
    let (y0, y1) = ((y0 / ys).floor() * ys, (y1 / ys).ceil() * ys);
    let pw = PANEL_W - MARGIN_L - MARGIN_R;
    let ph = PANEL_H - MARGIN_T - MARGIN_B;
    let px = |x: f64| ox + MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| MARGIN_T + ph - (y - y0) / (y1 - y0) * ph;

    let _ = writeln!(out, r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="14">{}</text>"#, ox + PANEL_W / 2.0, escape(&p.title));
    let _ = writeln!(
        out,
        r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#333"/>"##,
        ox + MARGIN_L,
        MARGIN_T,
        pw,
        ph
    );
    let mut t = x0;
    while t <= x1 + xs * 1e-9 {
        let x = px(t);
        let _ = writeln!(out, r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##, MARGIN_T + ph, MARGIN_T + ph + 4.0);
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#, MARGIN_T + ph + 16.0, fmt_tick(t, xs));
        t += xs;
    }
    let mut t = y0;
    while t <= y1 + ys * 1e-9 {
        let y = py(t);
        let _ = writeln!(out, r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, ox + MARGIN_L, ox + MARGIN_L + pw);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{}</text>"#, ox + MARGIN_L - 6.0, y + 4.0, fmt_tick(t, ys));
        t += ys;
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">{}</text>"#, ox + MARGIN_L + pw / 2.0, PANEL_H - 10.0, escape(&p.x_label));
    let (lx, ly) = (ox + 14.0, MARGIN_T + ph / 2.0);
    let _ = writeln!(out, r#"<text x="{lx:.2}" y="{ly:.2}" text-anchor="middle" font-size="12" transform="rotate(-90 {lx:.2} {ly:.2})">{}</text>"#, escape(&p.y_label));

    for (i, s) in p.series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = s.points.iter().map(|q| format!("{:.2},{:.2}", px(q.x), py(q.y))).collect();
        if path.len() > 1 {
            let _ = writeln!(out, r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#, path.join(" "));
        }
        for q in &s.points {
            let (x, y) = (px(q.x), py(q.y));
            if q.err > 0.0 {
                let _ = writeln!(out, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{c}"/>"#, py(q.y - q.err), py(q.y + q.err));
            }
            let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="{c}"/>"#);
        }
        let ly = MARGIN_T + 14.0 + 16.0 * i as f64;
        let lx = ox + MARGIN_L + 10.0;
        let _ = writeln!(out, r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{c}" stroke-width="2"/>"#, ly - 4.0, lx + 18.0, ly - 4.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{ly:.2}" font-size="11">{}</text>"#, lx + 24.0, escape(&s.name));
    }
}

/// Panels side by side in one document.
pub fn render_svg(panels: &[Panel]) -> String {
    let w = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{PANEL_H:.0}" viewBox="0 0 {w:.0} {PANEL_H:.0}" font-family="sans-serif">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, PANEL_W * i as f64);
    }
    out.push_str("</svg>\n");
    out
}
