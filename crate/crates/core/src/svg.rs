//! Minimal SVG writers for scatter plots and grayscale heatmaps. Output is
//! a pure function of the inputs (fixed number formatting).

use std::fmt::Write as _;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<[f64; 2]>,
}

/// Axis-aligned plotting window `[x0, x1] × [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bounds {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Bounds {
    /// Smallest window holding every point, padded by 5% per side.
    pub fn around(points: impl IntoIterator<Item = [f64; 2]>) -> Self {
        let mut b = Bounds {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for p in points.into_iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
            b.x0 = b.x0.min(p[0]);
            b.x1 = b.x1.max(p[0]);
            b.y0 = b.y0.min(p[1]);
            b.y1 = b.y1.max(p[1]);
        }
        if b.x0 > b.x1 {
            return Bounds { x0: -1.0, x1: 1.0, y0: -1.0, y1: 1.0 };
        }
        let px = ((b.x1 - b.x0) * 0.05).max(1e-3);
        let py = ((b.y1 - b.y0) * 0.05).max(1e-3);
        Bounds {
            x0: b.x0 - px,
            x1: b.x1 + px,
            y0: b.y0 - py,
            y1: b.y1 + py,
        }
    }
}

const SIZE: f64 = 400.0;
const MARGIN: f64 = 30.0;

fn header(s: &mut String, w: f64, h: f64) {
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{h:.0}" viewBox="0 0 {w:.0} {h:.0}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps data coordinates into a `SIZE × SIZE` panel whose top-left corner
/// is `(ox, oy)`.
fn project(b: &Bounds, p: [f64; 2], ox: f64, oy: f64) -> (f64, f64) {
    let x = ox + (p[0] - b.x0) / (b.x1 - b.x0) * SIZE;
    let y = oy + SIZE - (p[1] - b.y0) / (b.y1 - b.y0) * SIZE;
    (x, y)
}

fn points_into(s: &mut String, b: &Bounds, series: &[Series<'_>], ox: f64, oy: f64) {
    for sr in series {
        let _ = writeln!(s, r#"<g fill="{}" fill-opacity="0.6">"#, sr.color);
        for &p in &sr.points {
            if !(p[0].is_finite() && p[1].is_finite()) {
                continue;
            }
            let (x, y) = project(b, p, ox, oy);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2"/>"#);
        }
        let _ = writeln!(s, "</g>");
    }
}

/// One scatter panel with a legend line per series.
pub fn scatter(title: &str, series: &[Series<'_>], bounds: Option<Bounds>) -> String {
    let b = bounds.unwrap_or_else(|| Bounds::around(series.iter().flat_map(|s| s.points.iter().copied())));
    let legend = 16.0 * series.len() as f64;
    let (w, h) = (SIZE + 2.0 * MARGIN, SIZE + 2.0 * MARGIN + legend);
    let mut s = String::new();
    header(&mut s, w, h);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    points_into(&mut s, &b, series, MARGIN, MARGIN);
    for (i, sr) in series.iter().enumerate() {
        let y = 2.0 * MARGIN + SIZE + 16.0 * i as f64 - 8.0;
        let _ = writeln!(s, r#"<circle cx="{}" cy="{y:.0}" r="4" fill="{}"/>"#, MARGIN + 4.0, sr.color);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.0}" font-size="12">{}</text>"#,
            MARGIN + 14.0,
            y + 4.0,
            escape(sr.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Grayscale cells for `values` laid out row-major in `rows × cols`; larger
/// values are darker. Values are min-max scaled within the panel.
fn cells_into(s: &mut String, values: &[f64], rows: usize, cols: usize, ox: f64, oy: f64) {
    let lo = values.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let (cw, ch) = (SIZE / cols as f64, SIZE / rows as f64);
    for r in 0..rows {
        for c in 0..cols {
            let v = values[r * cols + c];
            let t = if hi > lo && v.is_finite() { (v - lo) / (hi - lo) } else { 0.0 };
            let g = (255.0 * (1.0 - t)).round() as u8;
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({g},{g},{g})"/>"#,
                ox + c as f64 * cw,
                oy + r as f64 * ch,
                cw + 0.01,
                ch + 0.01
            );
        }
    }
}

/// Single heatmap of a `side × side` map.
pub fn heatmap(title: &str, values: &[f64], side: usize) -> String {
    let (w, h) = (SIZE + 2.0 * MARGIN, SIZE + 2.0 * MARGIN);
    let mut s = String::new();
    header(&mut s, w, h);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-size="14">{}</text>"#, escape(title));
    cells_into(&mut s, values, side, side, MARGIN, MARGIN);
    s.push_str("</svg>\n");
    s
}

pub struct Panel<'a> {
    pub title: String,
    /// Row-major `rows × cols` values over `bounds`, first row at the top.
    pub values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub overlay: Vec<Series<'a>>,
}

/// Panels side by side sharing one coordinate window.
pub fn panels(title: &str, bounds: Bounds, panels: &[Panel<'_>]) -> String {
    let w = panels.len() as f64 * (SIZE + MARGIN) + MARGIN;
    let h = SIZE + 3.0 * MARGIN;
    let mut s = String::new();
    header(&mut s, w, h);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="18" font-size="14">{}</text>"#, escape(title));
    for (i, p) in panels.iter().enumerate() {
        let ox = MARGIN + i as f64 * (SIZE + MARGIN);
        let oy = 2.0 * MARGIN;
        let _ = writeln!(
            s,
            r#"<text x="{ox:.0}" y="{:.0}" font-size="12">{}</text>"#,
            oy - 6.0,
            escape(&p.title)
        );
        cells_into(&mut s, &p.values, p.rows, p.cols, ox, oy);
        points_into(&mut s, &bounds, &p.overlay, ox, oy);
        let _ = writeln!(
            s,
            r#"<rect x="{ox:.0}" y="{oy:.0}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
        );
    }
    s.push_str("</svg>\n");
    s
}
