//! Convergence plots: mean best-so-far across seeds with a band of
//! ±0.2 standard deviations, rendered as a standalone SVG.

use std::fmt::Write as _;

use neon_core::bo::SummaryRow;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    /// Points evaluated at each iteration (taken from the first run).
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    /// Population standard deviation across runs.
    pub std: Vec<f64>,
    /// Set when runs of different lengths were cut to the shortest.
    pub truncated_from: Option<usize>,
}

pub const BAND: f64 = 0.2;

impl Curve {
    pub fn from_runs(runs: &[Vec<SummaryRow>]) -> Result<Self> {
        let len = runs.iter().map(Vec::len).min().ok_or_else(|| Error::Config("no runs to plot".into()))?;
        if len == 0 {
            return Err(Error::Format("a summary has no rows".into()));
        }
        let longest = runs.iter().map(Vec::len).max().unwrap_or(len);
        let n = runs.len() as f64;
        let mut mean = Vec::with_capacity(len);
        let mut std = Vec::with_capacity(len);
        for i in 0..len {
            let m = runs.iter().map(|r| r[i].best_so_far).sum::<f64>() / n;
            let v = runs.iter().map(|r| (r[i].best_so_far - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            std.push(v.sqrt());
        }
        Ok(Curve {
            x: runs[0][..len].iter().map(|r| r.points_evaluated as f64).collect(),
            mean,
            std,
            truncated_from: (longest > len).then_some(longest),
        })
    }

    pub fn lower(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.std).map(|(m, s)| m - BAND * s).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.mean.iter().zip(&self.std).map(|(m, s)| m + BAND * s).collect()
    }
}

fn nice_bounds(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi > lo) {
        let pad = if lo == 0.0 { 1.0 } else { 0.05 * lo.abs() };
        return (lo - pad, hi + pad);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

/// Renders labelled curves into one chart.
pub fn render_svg(curves: &[(String, Curve)], title: &str) -> String {
    const W: f64 = 720.0;
    const H: f64 = 440.0;
    const L: f64 = 80.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 60.0;
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
    let xs = curves.iter().flat_map(|(_, c)| c.x.iter().copied());
    let (x0, x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let ys = curves.iter().flat_map(|(_, c)| c.lower().into_iter().chain(c.upper()));
    let (y0, y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (x0, x1) = nice_bounds(x0, x1);
    let (y0, y1) = nice_bounds(y0, y1);
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(s, r#"<line x1="{L}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#, H - B, W - R, H - B);
    let _ = writeln!(s, r#"<line x1="{L}" y1="{T}" x2="{L}" y2="{}" stroke="black"/>"#, H - B);
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="middle">{:.0}</text>"#, px(fx), H - B + 18.0, fx);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3e}</text>"#, L - 6.0, py(fy) + 4.0, fy);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">points evaluated</text>"#, (L + W - R) / 2.0, H - 16.0);
    let _ = writeln!(s, r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">best so far</text>"#, (T + H - B) / 2.0, (T + H - B) / 2.0);
    for (k, (label, c)) in curves.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let mut band = String::new();
        for (x, y) in c.x.iter().zip(c.upper()) {
            let _ = write!(band, "{:.2},{:.2} ", px(*x), py(y));
        }
        for (x, y) in c.x.iter().zip(c.lower()).rev() {
            let _ = write!(band, "{:.2},{:.2} ", px(*x), py(y));
        }
        let _ = writeln!(s, r#"<polygon class="band" points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, band.trim_end());
        let line: Vec<String> = c.x.iter().zip(&c.mean).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let _ = writeln!(s, r#"<polyline class="mean" points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = T + 16.0 * (k as f64 + 1.0);
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - R - 170.0, W - R - 150.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, W - R - 145.0, ly + 4.0, escape(label));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
