use std::fmt::Write as _;

use super::SweepPoint;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Accuracy-vs-pruning-rate chart with one polyline per metric.
pub fn sweep_svg(points: &[SweepPoint]) -> String {
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let kmax = points.iter().map(|p| p.k).fold(0.0, f64::max).max(1e-9);
    let x = |k: f64| MARGIN + pw * k / kmax;
    let y = |v: f64| MARGIN + ph * (1.0 - v / 100.0);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for v in (0..=100).step_by(20) {
        let yy = y(f64::from(v));
        let _ = writeln!(
            svg,
            r##"<line x1="{MARGIN}" y1="{yy}" x2="{}" y2="{yy}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v}</text>"##,
            WIDTH - MARGIN,
            MARGIN - 6.0,
            yy + 4.0
        );
    }
    for p in points {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            x(p.k),
            HEIGHT - MARGIN + 16.0,
            p.k
        );
    }
    let series: [(&str, &str, fn(&SweepPoint) -> f64); 3] = [
        ("TA", "#1f77b4", |p| p.ta),
        ("Rec_tr", "#d62728", |p| p.rec_tr),
        ("Rec_ts", "#2ca02c", |p| p.rec_ts),
    ];
    for (i, (name, colour, get)) in series.iter().enumerate() {
        let pts: Vec<String> = points
            .iter()
            .map(|p| format!("{:.1},{:.1}", x(p.k), y(get(p))))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{colour}">{name}</text>"#,
            WIDTH - MARGIN - 60.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">pruning rate k</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}
