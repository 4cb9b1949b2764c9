//! Minimal static SVG line charts.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 160.0, 40.0, 50.0);
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// One named series; `y[k]` is plotted at round `k + 1`.
pub struct Series<'a> {
    pub name: &'a str,
    pub y: &'a [f64],
}

/// Error-versus-round chart with a logarithmic y axis.
pub fn error_chart(title: &str, series: &[Series<'_>]) -> String {
    let (left, right, top, bottom) = MARGIN;
    let pw = WIDTH - left - right;
    let ph = HEIGHT - top - bottom;
    let rounds = series.iter().map(|s| s.y.len()).max().unwrap_or(0).max(1);
    let positive = || series.iter().flat_map(|s| s.y.iter().copied()).filter(|v| *v > 0.0 && v.is_finite());
    let lo = positive().fold(f64::INFINITY, f64::min);
    let hi = positive().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo.log10().floor(), hi.log10().ceil().max(lo.log10().floor() + 1.0)) } else { (-1.0, 0.0) };
    let x = |k: usize| left + pw * k as f64 / rounds as f64;
    let y = |v: f64| top + ph * (hi - v.max(10f64.powf(lo)).log10()) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" font-size="15" text-anchor="middle">{}</text>"#, left + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for e in (lo as i32)..=(hi as i32) {
        let yy = y(10f64.powi(e));
        let _ = writeln!(s, r##"<line x1="{left}" y1="{yy:.1}" x2="{}" y2="{yy:.1}" stroke="#ddd"/>"##, left + pw);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"#, left - 6.0, yy + 4.0);
    }
    for k in 0..=4 {
        let r = rounds * k / 4;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{r}</text>"#, x(r), top + ph + 18.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">round</text>"#, left + pw / 2.0, HEIGHT - 8.0);
    let _ = writeln!(s, r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">error</text>"#, top + ph / 2.0, top + ph / 2.0);

    for (n, ser) in series.iter().enumerate() {
        let color = COLORS[n % COLORS.len()];
        let stride = (ser.y.len() / 2000).max(1);
        let mut points = String::new();
        for (k, v) in ser.y.iter().enumerate().filter(|(k, _)| k % stride == 0 || *k + 1 == ser.y.len()) {
            if v.is_finite() {
                let _ = write!(points, "{:.1},{:.1} ", x(k + 1), y(*v));
            }
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, points.trim_end());
        let ly = top + 16.0 + 18.0 * n as f64;
        let lx = left + pw + 12.0;
        let _ = writeln!(s, r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, lx + 22.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 28.0, ly + 4.0, escape(ser.name));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
