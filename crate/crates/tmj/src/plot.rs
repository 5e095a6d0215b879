//! Static beeswarm-style SHAP summary chart as SVG.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use tmj_core::explain::SummaryPoint;

use crate::error::{Error, Result};

const ROW_HEIGHT: f64 = 28.0;
const LABEL_WIDTH: f64 = 210.0;
const PLOT_WIDTH: f64 = 520.0;
const MARGIN: f64 = 20.0;
const AXIS_HEIGHT: f64 = 50.0;

/// Features ordered by mean |SHAP| (descending, ties by name).
pub fn rank_features(points: &[SummaryPoint]) -> Vec<(String, f64)> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for p in points {
        let e = acc.entry(p.feature.as_str()).or_default();
        e.0 += p.shap_value.abs();
        e.1 += 1;
    }
    let mut out: Vec<(String, f64)> = acc.into_iter().map(|(f, (s, n))| (f.to_string(), s / n as f64)).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Blue (low) to red (high).
fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (30.0 + 225.0 * t).round() as u8;
    let b = (255.0 - 225.0 * t).round() as u8;
    format!("#{r:02x}40{b:02x}")
}

/// Deterministic vertical offset in `[-1, 1]`.
fn jitter(row: usize, feature: usize) -> f64 {
    let mut z = (row as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (feature as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^= z >> 29;
    z = z.wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^= z >> 32;
    (z % 2001) as f64 / 1000.0 - 1.0
}

/// One row per feature (top `max_features` by mean |SHAP|), points placed
/// by SHAP value and colored by the feature's value within its range.
pub fn summary_svg(points: &[SummaryPoint], max_features: usize) -> Result<String> {
    if points.is_empty() {
        return Err(Error::validation("summary has no points to plot"));
    }
    let ranked: Vec<(String, f64)> = rank_features(points).into_iter().take(max_features.max(1)).collect();
    let limit = points
        .iter()
        .filter(|p| ranked.iter().any(|(f, _)| *f == p.feature))
        .map(|p| p.shap_value.abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    let x_of = |v: f64| LABEL_WIDTH + PLOT_WIDTH / 2.0 + v / limit * (PLOT_WIDTH / 2.0 - 8.0);
    let height = MARGIN * 2.0 + ranked.len() as f64 * ROW_HEIGHT + AXIS_HEIGHT;
    let width = LABEL_WIDTH + PLOT_WIDTH + MARGIN * 2.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let zero = x_of(0.0);
    let bottom = MARGIN + ranked.len() as f64 * ROW_HEIGHT;
    let _ = writeln!(s, r##"<line x1="{zero}" y1="{MARGIN}" x2="{zero}" y2="{bottom}" stroke="#999"/>"##);
    for (fi, (feature, mean_abs)) in ranked.iter().enumerate() {
        let cy = MARGIN + (fi as f64 + 0.5) * ROW_HEIGHT;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end"><title>mean |SHAP| {mean_abs:.6}</title>{}</text>"#,
            LABEL_WIDTH - 8.0,
            cy + 4.0,
            escape(feature)
        );
        let mine: Vec<&SummaryPoint> = points.iter().filter(|p| p.feature == *feature).collect();
        let (lo, hi) = mine.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.feature_value), hi.max(p.feature_value))
        });
        for p in mine {
            let t = if hi > lo { (p.feature_value - lo) / (hi - lo) } else { 0.5 };
            let cx = x_of(p.shap_value);
            let y = cy + jitter(p.row_index, fi) * ROW_HEIGHT * 0.3;
            let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{y:.2}" r="2.5" fill="{}" fill-opacity="0.8"/>"#, color(t));
        }
    }
    let _ = writeln!(
        s,
        r##"<line x1="{LABEL_WIDTH}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="#333"/>"##,
        LABEL_WIDTH + PLOT_WIDTH
    );
    for v in [-limit, 0.0, limit] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{v:.3}</text>"#, x_of(v), bottom + 16.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">SHAP value (impact on TMJ1 probability)</text>"#,
        LABEL_WIDTH + PLOT_WIDTH / 2.0,
        bottom + 36.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end" fill="{}">feature value: low</text><text x="{}" y="{}" text-anchor="end" fill="{}">high</text>"#,
        width - MARGIN - 40.0,
        bottom + 36.0,
        color(0.0),
        width - MARGIN,
        bottom + 36.0,
        color(1.0)
    );
    s.push_str("</svg>\n");
    Ok(s)
}
