//! Minimal SVG line charts and heatmaps.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );
}

/// One polyline per `(label, points)` series.
pub fn line_chart(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let (x0, x1) = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let (y0, y1) = bounds(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for (i, (label, points)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{color}">{label}</text>"#,
            WIDTH - MARGIN + 4.0,
            MARGIN + 14.0 * (i as f64 + 1.0)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label} [{x0:.3} .. {x1:.3}]</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">{y_label} [{y0:.3} .. {y1:.3}]</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    out.push_str("</svg>\n");
    out
}

/// Rows are drawn bottom-up, so row 0 sits at the bottom edge.
pub fn heatmap(title: &str, rows: &[Vec<f64>]) -> String {
    let (lo, hi) = bounds(rows.iter().flatten().copied());
    let n_rows = rows.len().max(1) as f64;
    let n_cols = rows.iter().map(Vec::len).max().unwrap_or(1).max(1) as f64;
    let cw = (WIDTH - 2.0 * MARGIN) / n_cols;
    let ch = (HEIGHT - 2.0 * MARGIN) / n_rows;
    let mut out = String::new();
    header(&mut out, title);
    for (r, row) in rows.iter().enumerate() {
        let y = HEIGHT - MARGIN - (r as f64 + 1.0) * ch;
        for (c, &v) in row.iter().enumerate() {
            let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="rgb(255,{shade},{shade})"/>"#,
                MARGIN + c as f64 * cw,
                cw + 0.05,
                ch + 0.05
            );
        }
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">range [{lo:.3e} .. {hi:.3e}]</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    );
    out.push_str("</svg>\n");
    out
}
