//! Static SVG charts: PSNR against context length and per-tier bars.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, y0, x1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{}" stroke="black"/>"#, MARGIN / 2.0);
}

fn y_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((hi - lo) * 0.1).max(0.05);
    (lo - pad, hi + pad)
}

fn y_axis(out: &mut String, lo: f64, hi: f64, label: &str) {
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = (H - MARGIN) - (H - 1.5 * MARGIN) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"#, MARGIN - 4.0, y + 4.0);
    }
    let _ = writeln!(
        out,
        r#"<text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(label)
    );
}

/// Line chart of `(x, y)` points, e.g. PSNR against context length.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)]) -> Result<String> {
    if points.is_empty() {
        return Err(Error::EmptyInput("plot points"));
    }
    let mut out = String::new();
    header(&mut out, title);
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let (xl, xh) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let xspan = if xh > xl { xh - xl } else { 1.0 };
    let (yl, yh) = y_range(&ys);
    let px = |x: f64| MARGIN + (x - xl) / xspan * (W - 1.5 * MARGIN - 8.0) + 4.0;
    let py = |y: f64| (H - MARGIN) - (y - yl) / (yh - yl) * (H - 1.5 * MARGIN);
    y_axis(&mut out, yl, yh, y_label);
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
    let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, path.join(" "));
    for &(x, y) in points {
        let _ = writeln!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, px(x), py(y));
        let _ = writeln!(out, r#"<text x="{:.1}" y="{}" text-anchor="middle">{x}</text>"#, px(x), H - MARGIN + 16.0);
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 8.0, escape(x_label));
    out.push_str("</svg>\n");
    Ok(out)
}

/// Bar chart of labelled values, e.g. PSNR per motion tier.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<String> {
    if bars.is_empty() {
        return Err(Error::EmptyInput("plot bars"));
    }
    let mut out = String::new();
    header(&mut out, title);
    let ys: Vec<f64> = bars.iter().map(|b| b.1).collect();
    let (yl, yh) = y_range(&ys);
    let (yl, yh) = (yl.min(0.0), yh);
    y_axis(&mut out, yl, yh, y_label);
    let slot = (W - 1.5 * MARGIN) / bars.len() as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = MARGIN + slot * i as f64 + slot * 0.15;
        let top = (H - MARGIN) - (v - yl) / (yh - yl) * (H - 1.5 * MARGIN);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="darkorange"/>"#,
            slot * 0.7,
            (H - MARGIN - top).max(0.0)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            H - MARGIN + 16.0,
            escape(label)
        );
        let _ = writeln!(out, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#, x + slot * 0.35, top - 4.0);
    }
    out.push_str("</svg>\n");
    Ok(out)
}

pub fn write_svg(svg: &str, path: &Path) -> Result<()> {
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}
