use std::fmt::Write;

use crate::evaluation::BinCurve;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Line chart of AR against bin position (0 to 100 % of annotations), one
/// polyline per curve.
pub fn bin_curves_svg(curves: &[BinCurve]) -> String {
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, y0, x1, y1) = (MARGIN, HEIGHT - MARGIN, WIDTH - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for k in 0..=4 {
        let v = k as f64 / 4.0;
        let y = y0 - v * plot_h;
        let x = x0 + v * plot_w;
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{v:.2}</text>"#, x0 - 6.0, y + 4.0);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{:.0}%</text>"#, y0 + 16.0, v * 100.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">annotations sorted by property</text>"#, WIDTH / 2.0, HEIGHT - 10.0);
    let _ = writeln!(s, r#"<text x="14" y="{}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {})">AR</text>"#, HEIGHT / 2.0, HEIGHT / 2.0);

    for (i, c) in curves.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let n = c.bins.len().max(1) as f64;
        let pts: Vec<String> = c
            .bins
            .iter()
            .enumerate()
            .map(|(k, b)| {
                let x = x0 + (k as f64 + 0.5) / n * plot_w;
                let y = y0 - b.ar.clamp(0.0, 1.0) * plot_h;
                format!("{x:.1},{y:.1}")
            })
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="12" fill="{color}">{}</text>"#,
            x1 - 100.0,
            y1 + 14.0 * (i as f64 + 1.0),
            escape(&c.property)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
