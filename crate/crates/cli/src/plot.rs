//! Minimal static SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

struct Axes {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Axes {
    fn fit(points: impl Iterator<Item = (f64, f64)>) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in points {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        let widen = |a: f64, b: f64| {
            let span = if b > a { b - a } else { a.abs().max(1.0) };
            (a - 0.05 * span, b + 0.05 * span)
        };
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 1.5 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 1.5 * PAD)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, a: &Axes, title: &str, xlabel: &str, ylabel: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let (l, r, t, b) = (a.px(a.x0), a.px(a.x1), a.py(a.y1), a.py(a.y0));
    let _ = writeln!(out, r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#, r - l, b - t);
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = a.x0 + f * (a.x1 - a.x0);
        let yv = a.y0 + f * (a.y1 - a.y0);
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, a.px(xv), b + 16.0, tick(xv));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, l - 6.0, a.py(yv) + 4.0, tick(yv));
    }
    let _ = writeln!(out, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (l + r) / 2.0, H - 14.0, escape(xlabel));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(ylabel)
    );
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 0.01 || v.abs() >= 1e4) {
        format!("{v:.1e}")
    } else {
        format!("{v:.3}")
    }
}

pub fn scatter(points: &[(f64, f64)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let a = Axes::fit(points.iter().copied());
    let mut out = String::new();
    frame(&mut out, &a, title, xlabel, ylabel);
    for (x, y) in points {
        let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{}" fill-opacity="0.8"/>"#, a.px(*x), a.py(*y), COLORS[0]);
    }
    out.push_str("</svg>\n");
    out
}

/// One polyline per named series.
pub fn lines(series: &[(String, Vec<(f64, f64)>)], title: &str, xlabel: &str, ylabel: &str) -> String {
    let a = Axes::fit(series.iter().flat_map(|s| s.1.iter().copied()));
    let mut out = String::new();
    frame(&mut out, &a, title, xlabel, ylabel);
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|(x, y)| format!("{:.2},{:.2}", a.px(*x), a.py(*y))).collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        let y = PAD + 14.0 * k as f64;
        let _ = writeln!(out, r#"<text x="{:.1}" y="{y:.1}" fill="{color}" text-anchor="end">{}</text>"#, W - PAD, escape(name));
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_has_one_marker_per_point() {
        let svg = scatter(&[(0.0, 1.0), (1.0, 2.0), (2.0, 0.5)], "t", "x <a>", "y");
        assert_eq!(svg.matches("<circle").count(), 3);
        assert!(svg.contains("x &lt;a&gt;"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn degenerate_ranges_stay_finite() {
        let svg = lines(&[("a".into(), vec![(1.0, 1.0), (1.0, 1.0)])], "t", "x", "y");
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        let empty = scatter(&[], "t", "x", "y");
        assert!(!empty.contains("NaN"));
    }
}
