//! Per-module scalar profiles with CSV and SVG output.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::savgol::savgol_smooth;
use super::AnalysisError;
use crate::models::Side;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    Fisher,
    Kl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEntry {
    pub path: String,
    pub side: Side,
    /// `None` marks a gap (undefined for every sample).
    pub value: Option<f64>,
    /// Present for multi-sample or multi-seed profiles.
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Smoothing {
    pub window: usize,
    pub polyorder: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisProfile {
    pub kind: ProfileKind,
    pub entries: Vec<ProfileEntry>,
    pub smoothing: Option<Smoothing>,
}

/// Mean and population standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl AnalysisProfile {
    /// Mean of the defined values on one side; `None` if there are none.
    pub fn side_mean(&self, side: Side) -> Option<f64> {
        let v: Vec<f64> = self.entries.iter().filter(|e| e.side == side).filter_map(|e| e.value).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn values(&self) -> Vec<Option<f64>> {
        self.entries.iter().map(|e| e.value).collect()
    }

    /// Savitzky-Golay smoothing of the defined values (gaps are skipped and
    /// stay gaps); the standard deviations are left as measured.
    pub fn smoothed(&self, window: usize, polyorder: usize) -> Result<AnalysisProfile, AnalysisError> {
        let idx: Vec<usize> = self.entries.iter().enumerate().filter(|(_, e)| e.value.is_some()).map(|(i, _)| i).collect();
        let series: Vec<f64> = idx.iter().map(|&i| self.entries[i].value.expect("defined")).collect();
        let smooth = savgol_smooth(&series, window, polyorder)?;
        let mut out = self.clone();
        for (&i, v) in idx.iter().zip(smooth) {
            out.entries[i].value = Some(v);
        }
        out.smoothing = Some(Smoothing { window, polyorder });
        Ok(out)
    }

    /// `path,role,value,std`; gaps and absent deviations are empty cells.
    pub fn to_csv(&self) -> String {
        let cell = |v: Option<f64>| v.map(|v| format!("{v:.9e}")).unwrap_or_default();
        let mut s = String::from("path,role,value,std\n");
        for e in &self.entries {
            let role = match e.side {
                Side::Encoder => "encoder",
                Side::Decoder => "decoder",
            };
            let _ = writeln!(s, "{},{},{},{}", e.path, role, cell(e.value), cell(e.std));
        }
        s
    }

    /// Line chart with an optional ±std band; the encoder/decoder boundary is
    /// marked by a dashed vertical line.
    pub fn to_svg(&self, title: &str) -> String {
        let (w, h, m) = (720.0, 360.0, 48.0);
        let n = self.entries.len().max(2);
        let vals: Vec<(usize, f64, f64)> =
            self.entries.iter().enumerate().filter_map(|(i, e)| e.value.map(|v| (i, v, e.std.unwrap_or(0.0)))).collect();
        let lo = vals.iter().map(|(_, v, s)| v - s).fold(f64::INFINITY, f64::min).min(0.0);
        let mut hi = vals.iter().map(|(_, v, s)| v + s).fold(f64::NEG_INFINITY, f64::max);
        if !(hi > lo) {
            hi = lo + 1.0;
        }
        let x = |i: usize| m + (w - 2.0 * m) * i as f64 / (n - 1) as f64;
        let y = |v: f64| h - m - (h - 2.0 * m) * (v - lo) / (hi - lo);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{m}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
        let _ = writeln!(
            s,
            r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="black"/>"#,
            b = h - m,
            r = w - m
        );
        let _ = writeln!(s, r#"<text x="4" y="{:.1}" font-family="sans-serif" font-size="10">{hi:.3}</text>"#, m + 4.0);
        let _ = writeln!(s, r#"<text x="4" y="{:.1}" font-family="sans-serif" font-size="10">{lo:.3}</text>"#, h - m);
        if let Some(b) = self.entries.iter().position(|e| e.side == Side::Decoder).filter(|&b| b > 0) {
            let bx = (x(b - 1) + x(b)) / 2.0;
            let _ = writeln!(s, r#"<line x1="{bx:.1}" y1="{m}" x2="{bx:.1}" y2="{:.1}" stroke="gray" stroke-dasharray="4 3"/>"#, h - m);
        }
        if vals.iter().any(|(_, _, sd)| *sd > 0.0) {
            let upper: Vec<String> = vals.iter().map(|&(i, v, sd)| format!("{:.1},{:.1}", x(i), y(v + sd))).collect();
            let lower: Vec<String> = vals.iter().rev().map(|&(i, v, sd)| format!("{:.1},{:.1}", x(i), y(v - sd))).collect();
            let _ = writeln!(s, r#"<polygon points="{} {}" fill="steelblue" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "));
        }
        let pts: Vec<String> = vals.iter().map(|&(i, v, _)| format!("{:.1},{:.1}", x(i), y(v))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, pts.join(" "));
        for &(i, v, _) in &vals {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="steelblue"><title>{}</title></circle>"#, x(i), y(v), escape(&self.entries[i].path));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
