//! Self-contained SVG renderings. Each file embeds its data as JSON in a
//! `<metadata>` element.

use std::fmt::Write as _;

use serde::Serialize;

use super::{ProjectionResult, Split};
use crate::error::Result;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn header(out: &mut String, w: usize, h: usize, title: &str, data: &impl Serialize) -> Result<()> {
    let json = serde_json::to_string(data)?;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, "<metadata>{}</metadata>", escape(&json));
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    Ok(())
}

/// Blue-white-red colour for a value in `[-1, 1]`.
fn diverging(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        let t = v;
        (255.0 * (1.0 - t) + 178.0 * t, 255.0 * (1.0 - t) + 24.0 * t, 255.0 * (1.0 - t) + 43.0 * t)
    } else {
        let t = -v;
        (255.0 * (1.0 - t) + 33.0 * t, 255.0 * (1.0 - t) + 102.0 * t, 255.0 * (1.0 - t) + 172.0 * t)
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

#[derive(Serialize)]
struct HeatmapData<'a> {
    names: &'a [String],
    values: &'a [Vec<f64>],
}

/// Annotated heatmap of a square matrix with row and column names.
pub fn heatmap(title: &str, names: &[String], values: &[Vec<f64>]) -> Result<String> {
    let cell = 56;
    let margin = 16 + 7 * names.iter().map(|n| n.chars().count()).max().unwrap_or(4);
    let k = names.len();
    let w = margin + cell * k + 20;
    let h = 30 + margin + cell * k + 20;
    let mut out = String::new();
    header(&mut out, w, h, title, &HeatmapData { names, values })?;
    let _ = writeln!(out, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    let top = 30 + margin;
    for (i, name) in names.iter().enumerate() {
        let cy = top + cell * i + cell / 2;
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{cy}" text-anchor="end" dominant-baseline="middle">{}</text>"#,
            margin - 6,
            escape(name)
        );
        let cx = margin + cell * i + cell / 2;
        let _ = writeln!(
            out,
            r#"<text x="{cx}" y="{}" text-anchor="start" transform="rotate(-45 {cx} {})">{}</text>"#,
            top - 6,
            top - 6,
            escape(name)
        );
    }
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let x = margin + cell * j;
            let y = top + cell * i;
            let _ = writeln!(
                out,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="{}" stroke="white"/>"#,
                diverging(v)
            );
            let _ = writeln!(
                out,
                r#"<text x="{}" y="{}" text-anchor="middle" dominant-baseline="middle">{v:.2}</text>"#,
                x + cell / 2,
                y + cell / 2
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

/// Scatter plot of a projection, coloured by split.
pub fn scatter(title: &str, result: &ProjectionResult) -> Result<String> {
    let (w, h, pad) = (520usize, 480usize, 40.0f64);
    let mut out = String::new();
    header(&mut out, w, h, title, result)?;
    let _ = writeln!(out, r#"<text x="10" y="20" font-size="14">{}</text>"#, escape(title));
    let xs = result.coordinates.iter().map(|c| c[0]);
    let ys = result.coordinates.iter().map(|c| c[1]);
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let sx = (w as f64 - 2.0 * pad) / (x1 - x0).max(1e-12);
    let sy = (h as f64 - 2.0 * pad - 20.0) / (y1 - y0).max(1e-12);
    for (c, s) in result.coordinates.iter().zip(&result.splits) {
        let colour = match s {
            Split::InDomain => "#1f77b4",
            Split::OutOfDomain => "#d62728",
        };
        let px = pad + (c[0] - x0) * sx;
        let py = h as f64 - pad - (c[1] - y0) * sy;
        let _ = writeln!(
            out,
            r#"<circle cx="{px:.2}" cy="{py:.2}" r="2.5" fill="{colour}" fill-opacity="0.6"/>"#
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{pad}" y="{}">PC1 {:.1}%  PC2 {:.1}%</text>"#,
        h - 10,
        100.0 * result.explained_variance[0],
        100.0 * result.explained_variance[1]
    );
    let _ = writeln!(
        out,
        r##"<circle cx="{}" cy="34" r="4" fill="#1f77b4"/><text x="{}" y="38">in-domain</text>"##,
        w - 160,
        w - 150
    );
    let _ = writeln!(
        out,
        r##"<circle cx="{}" cy="52" r="4" fill="#d62728"/><text x="{}" y="56">out-of-domain</text>"##,
        w - 160,
        w - 150
    );
    out.push_str("</svg>\n");
    Ok(out)
}
