//! Tables built from persisted run logs and CSVs only.

use std::fmt::Write as _;

use noisylab::analysis::{AnalysisProfile, SegmentationMetrics};
use noisylab::models::{FrameworkKind, Side};
use noisylab::training::EncoderMode;
use serde::{Deserialize, Serialize};

use crate::config::{mode_name, InitSource};

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.9}")).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_default()
}

/// Median of the defined values (mean of the middle pair for even counts).
pub fn median(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let mut v: Vec<f64> = values.into_iter().flatten().collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

/// Per-run test metrics, fractions in `[0, 1]`.
pub fn metrics_csv(m: &SegmentationMetrics) -> String {
    let mut s = String::from("metric,value\n");
    let _ = writeln!(s, "overall_accuracy,{:.9}", m.overall_accuracy);
    let _ = writeln!(s, "average_accuracy,{:.9}", m.average_accuracy);
    let _ = writeln!(s, "mean_iou,{:.9}", m.mean_iou);
    for c in &m.per_class {
        let _ = writeln!(s, "iou_{},{}", c.name, fmt_opt(c.iou));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneRow {
    pub init: InitSource,
    pub framework: FrameworkKind,
    pub mode: EncoderMode,
    pub class_names: Vec<String>,
    pub class_medians: Vec<Option<f64>>,
    pub miou_median: f64,
    pub miou_mean: f64,
    pub miou_std: f64,
    pub seeds: usize,
}

impl FinetuneRow {
    pub fn new(init: InitSource, framework: FrameworkKind, mode: EncoderMode, runs: &[SegmentationMetrics]) -> Self {
        let class_names: Vec<String> = runs[0].per_class.iter().map(|c| c.name.clone()).collect();
        let class_medians = (0..class_names.len()).map(|j| median(runs.iter().map(|r| r.per_class[j].iou))).collect();
        let mious: Vec<f64> = runs.iter().map(|r| r.mean_iou).collect();
        let n = mious.len() as f64;
        let mean = mious.iter().sum::<f64>() / n;
        let std = (mious.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        FinetuneRow {
            init,
            framework,
            mode,
            class_names,
            class_medians,
            miou_median: median(mious.iter().copied().map(Some)).expect("at least one run"),
            miou_mean: mean,
            miou_std: std,
            seeds: runs.len(),
        }
    }
}

/// One row per init / framework / encoder mode: per-class median IoU and the
/// median, mean and population std of mIoU over seeds, all in percent.
pub fn finetune_csv(rows: &[FinetuneRow]) -> String {
    let mut s = String::from("init,framework,encoder_mode");
    if let Some(r) = rows.first() {
        for c in &r.class_names {
            s.push(',');
            s.push_str(c);
        }
    }
    s.push_str(",miou_median,miou_mean,miou_std,seeds\n");
    for r in rows {
        let _ = write!(s, "{},{},{}", r.init.name(), r.framework.name(), mode_name(r.mode));
        for &c in &r.class_medians {
            s.push(',');
            s.push_str(&pct(c));
        }
        let _ = writeln!(s, ",{},{},{},{}", pct(Some(r.miou_median)), pct(Some(r.miou_mean)), pct(Some(r.miou_std)), r.seeds);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    pub label: String,
    pub seed: u64,
    pub encoder_mean: Option<f64>,
    pub decoder_mean: Option<f64>,
}

/// Encoder- and decoder-side means of every Fisher and KL profile.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisSummary {
    pub rows: Vec<SummaryRow>,
}

impl AnalysisSummary {
    pub fn push(&mut self, metric: &str, label: &str, seed: u64, p: &AnalysisProfile) {
        self.rows.push(SummaryRow {
            metric: metric.into(),
            label: label.into(),
            seed,
            encoder_mean: p.side_mean(Side::Encoder),
            decoder_mean: p.side_mean(Side::Decoder),
        });
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,label,seed,encoder_mean,decoder_mean\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{},{}", r.metric, r.label, r.seed, fmt_opt(r.encoder_mean), fmt_opt(r.decoder_mean));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, csv::Error> {
        let rows = csv::Reader::from_reader(text.as_bytes()).deserialize().collect::<Result<Vec<SummaryRow>, _>>()?;
        Ok(AnalysisSummary { rows })
    }

    fn select<'a>(&'a self, metric: &'a str, label: &'a str) -> impl Iterator<Item = &'a SummaryRow> + 'a {
        self.rows.iter().filter(move |r| r.metric == metric && r.label == label)
    }
}

fn md_table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
    out.push('\n');
}

pub fn summary_markdown(rows: &[FinetuneRow], quality_csv: Option<&str>, analysis: Option<&AnalysisSummary>) -> String {
    let mut s = String::from("# Experiment summary\n\n");
    if let Some(q) = quality_csv {
        s.push_str("## Noisy-label quality (percent)\n\n");
        let lines: Vec<Vec<String>> = q.lines().map(|l| l.split(',').map(str::to_string).collect()).collect();
        if let Some((head, body)) = lines.split_first() {
            md_table(&mut s, head, body);
        }
    }

    s.push_str("## Fine-tuning results (test IoU, percent)\n\n");
    let mut header: Vec<String> = ["init", "framework", "encoder"].iter().map(|h| h.to_string()).collect();
    if let Some(r) = rows.first() {
        header.extend(r.class_names.iter().cloned());
    }
    header.extend(["mIoU median".into(), "mIoU mean ± std".into(), "seeds".into()]);
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut v = vec![r.init.name().to_string(), r.framework.name().to_string(), mode_name(r.mode).to_string()];
            v.extend(r.class_medians.iter().map(|&c| pct(c)));
            v.push(pct(Some(r.miou_median)));
            v.push(format!("{} ± {}", pct(Some(r.miou_mean)), pct(Some(r.miou_std))));
            v.push(r.seeds.to_string());
            v
        })
        .collect();
    md_table(&mut s, &header, &body);

    let gains: Vec<Vec<String>> = rows
        .iter()
        .filter(|r| r.init != InitSource::Random)
        .filter_map(|r| {
            let base = rows.iter().find(|b| b.init == InitSource::Random && b.framework == r.framework && b.mode == r.mode)?;
            Some(vec![
                r.init.name().to_string(),
                r.framework.name().to_string(),
                mode_name(r.mode).to_string(),
                format!("{:+.2}", 100.0 * (r.miou_median - base.miou_median)),
            ])
        })
        .collect();
    if !gains.is_empty() {
        s.push_str("## Median mIoU gain over random initialisation (points)\n\n");
        let head = ["init", "framework", "encoder", "gain"].map(String::from);
        md_table(&mut s, &head, &gains);
    }

    if let Some(a) = analysis {
        s.push_str("## Layer analysis (median over seeds of side means)\n\n");
        let mut keys: Vec<(&str, &str)> = Vec::new();
        for r in &a.rows {
            if !keys.contains(&(r.metric.as_str(), r.label.as_str())) {
                keys.push((&r.metric, &r.label));
            }
        }
        let body: Vec<Vec<String>> = keys
            .iter()
            .map(|&(m, l)| {
                let sel: Vec<&SummaryRow> = a.select(m, l).collect();
                let dec_wins = sel.iter().filter(|r| matches!((r.encoder_mean, r.decoder_mean), (Some(e), Some(d)) if d > e)).count();
                vec![
                    m.to_string(),
                    l.to_string(),
                    fmt_sci(median(sel.iter().map(|r| r.encoder_mean))),
                    fmt_sci(median(sel.iter().map(|r| r.decoder_mean))),
                    format!("{dec_wins}/{}", sel.len()),
                ]
            })
            .collect();
        let head = ["metric", "labels", "encoder", "decoder", "decoder > encoder"].map(String::from);
        md_table(&mut s, &head, &body);
    }
    s
}

fn fmt_sci(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.4e}")).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use noisylab::data::ClassQuality;

    fn metrics(miou: f64, ious: &[f64]) -> SegmentationMetrics {
        SegmentationMetrics {
            overall_accuracy: 0.9,
            average_accuracy: 0.8,
            mean_iou: miou,
            per_class: ious
                .iter()
                .enumerate()
                .map(|(i, &v)| ClassQuality { name: format!("c{i}"), precision: Some(v), recall: Some(v), iou: Some(v) })
                .collect(),
        }
    }

    #[test]
    fn medians() {
        assert_eq!(median([Some(3.0), None, Some(1.0), Some(2.0)]), Some(2.0));
        assert_eq!(median([Some(4.0), Some(1.0)]), Some(2.5));
        assert_eq!(median([None]), None);
    }

    #[test]
    fn finetune_row_statistics() {
        let runs = [metrics(0.5, &[0.4, 0.6]), metrics(0.7, &[0.6, 0.8]), metrics(0.6, &[0.5, 0.7])];
        let r = FinetuneRow::new(InitSource::Noisy, FrameworkKind::Unet, EncoderMode::Fixed, &runs);
        assert_eq!(r.miou_median, 0.6);
        assert!((r.miou_mean - 0.6).abs() < 1e-12);
        assert!((r.miou_std - (0.02f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(r.class_medians, vec![Some(0.5), Some(0.7)]);
        let csv = finetune_csv(&[r]);
        assert_eq!(csv.lines().nth(1).unwrap(), "noisy,unet,fixed,50.00,70.00,60.00,60.00,8.16,3");
    }

    #[test]
    fn summary_csv_round_trip() {
        let a = AnalysisSummary {
            rows: vec![
                SummaryRow { metric: "fisher".into(), label: "noisy".into(), seed: 2, encoder_mean: Some(0.25), decoder_mean: None },
                SummaryRow { metric: "kl".into(), label: "exact_mapped|noisy".into(), seed: 0, encoder_mean: Some(1e-3), decoder_mean: Some(0.5) },
            ],
        };
        assert_eq!(AnalysisSummary::from_csv(&a.to_csv()).unwrap(), a);
    }
}
