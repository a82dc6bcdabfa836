//! Minimal static SVG plots.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const M: f64 = 48.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{}</text>"#, W / 2.0, escape(title));
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line plot with log2 x axis and optionally log10 y axis.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, log_y: bool, series: &[Series]) -> String {
    let ty = |v: f64| if log_y { v.max(1e-300).log10() } else { v };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().map(|&(x, y)| (x.log2(), ty(y))))
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = pts.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), &(x, y)| (a.min(x), b.max(x), c.min(y), d.max(y)),
    );
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(
        out,
        r#"<path d="M{M} {} V{} H{}" fill="none" stroke="black"/>"#,
        M,
        H - M,
        W - M
    );
    for (v, y) in [(y0, sy(y0)), (y1, sy(y1))] {
        let label = if log_y { format!("1e{v:.1}") } else { format!("{v:.3e}") };
        let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#, M - 4.0, y + 4.0);
    }
    for (v, x) in [(x0, sx(x0)), (x1, sx(x1))] {
        let _ = writeln!(out, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, H - M + 16.0, 2f64.powf(v));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 10.0, escape(x_label));
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    for (n, s) in series.iter().enumerate() {
        let d: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| (x.log2(), ty(y)))
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .enumerate()
            .map(|(i, (x, y))| format!("{}{:.2} {:.2}", if i == 0 { "M" } else { "L" }, sx(x), sy(y)))
            .collect();
        let _ = writeln!(out, r#"<path d="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#, d.join(" "), s.color);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" fill="{}">{}</text>"#,
            W - M - 100.0,
            M + 14.0 * n as f64,
            s.color,
            escape(s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Grey-scale heatmap of `values` (row-major, `ny` rows of `nx`), row 0 at the bottom.
pub fn heatmap(title: &str, nx: usize, ny: usize, values: &[f64]) -> String {
    let top = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cw = (W - 2.0 * M) / nx as f64;
    let ch = (H - 2.0 * M) / ny as f64;
    let mut out = String::new();
    header(&mut out, title);
    for j in 0..ny {
        for i in 0..nx {
            let v = values[j * nx + i].abs();
            let level = if top > 0.0 { (255.0 * (1.0 - v / top)).round() as u8 } else { 255 };
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({level},{level},{level})"/>"#,
                M + i as f64 * cw,
                H - M - (j + 1) as f64 * ch,
                cw + 0.3,
                ch + 0.3
            );
        }
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">max {top:.4e}</text>"#, W / 2.0, H - 16.0);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plots_are_well_formed() {
        let s = line_plot(
            "E_p",
            "p",
            "value",
            true,
            &[Series { label: "a<b", color: "black", points: vec![(2.0, 1.0), (4.0, 0.1), (8.0, 0.0)] }],
        );
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("a&lt;b"));
        let h = heatmap("y", 3, 2, &[0.0, 1.0, -2.0, 0.5, 0.0, 0.0]);
        assert_eq!(h.matches("<rect").count(), 7);
        assert!(line_plot("t", "x", "y", false, &[]).contains("</svg>"));
    }
}
