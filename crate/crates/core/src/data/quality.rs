//! Pooled-confusion label-quality assessment.

use serde::{Deserialize, Serialize};

use super::raster::ClassMask;
use super::DataError;

/// Pooled confusion counts; rows are reference classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix { k, counts: vec![0; k * k] }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn count(&self, reference: usize, predicted: usize) -> u64 {
        self.counts[reference * self.k + predicted]
    }

    pub fn add_mask(&mut self, reference: &ClassMask, predicted: &ClassMask) {
        for (&r, &p) in reference.data.iter().zip(&predicted.data) {
            self.counts[r as usize * self.k + p as usize] += 1;
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn tp(&self, c: usize) -> u64 {
        self.count(c, c)
    }

    pub fn fp(&self, c: usize) -> u64 {
        (0..self.k).filter(|&r| r != c).map(|r| self.count(r, c)).sum()
    }

    pub fn fn_(&self, c: usize) -> u64 {
        (0..self.k).filter(|&p| p != c).map(|p| self.count(c, p)).sum()
    }

    pub fn reference_count(&self, c: usize) -> u64 {
        (0..self.k).map(|p| self.count(c, p)).sum()
    }

    pub fn overall_accuracy(&self) -> f64 {
        let diag: u64 = (0..self.k).map(|c| self.tp(c)).sum();
        diag as f64 / self.total() as f64
    }

    /// Precision, recall and IoU for class `c`. `None` when the class is
    /// absent from both reference and prediction; otherwise 0/0 ratios are 0.
    pub fn class_metrics(&self, c: usize) -> Option<(f64, f64, f64)> {
        let (tp, fp, fn_) = (self.tp(c) as f64, self.fp(c) as f64, self.fn_(c) as f64);
        if tp + fp + fn_ == 0.0 {
            return None;
        }
        let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
        Some((ratio(tp, tp + fp), ratio(tp, tp + fn_), tp / (tp + fp + fn_)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassQuality {
    pub name: String,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub iou: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub overall_accuracy: f64,
    pub per_class: Vec<ClassQuality>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub mean_iou: f64,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> f64 {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl QualityReport {
    pub fn from_confusion(cm: &ConfusionMatrix, class_names: &[String]) -> Self {
        let per_class: Vec<ClassQuality> = class_names
            .iter()
            .enumerate()
            .map(|(c, name)| {
                let m = cm.class_metrics(c);
                ClassQuality {
                    name: name.clone(),
                    precision: m.map(|m| m.0),
                    recall: m.map(|m| m.1),
                    iou: m.map(|m| m.2),
                }
            })
            .collect();
        QualityReport {
            overall_accuracy: cm.overall_accuracy(),
            mean_precision: mean_defined(per_class.iter().map(|c| c.precision)),
            mean_recall: mean_defined(per_class.iter().map(|c| c.recall)),
            mean_iou: mean_defined(per_class.iter().map(|c| c.iou)),
            per_class,
        }
    }

    /// Table layout: one column per class plus `MEAN`, rows `OA`, `precision`,
    /// `recall`, `IoU`; values in percent with two decimals, undefined cells
    /// empty. OA spans the table and is written in every column.
    pub fn to_table_csv(&self) -> String {
        let pct = |v: Option<f64>| v.map(|v| format!("{:.2}", 100.0 * v)).unwrap_or_default();
        let mut out = String::from("CLASS");
        for c in &self.per_class {
            out.push(',');
            out.push_str(&c.name);
        }
        out.push_str(",MEAN\n");
        out.push_str("OA");
        for _ in 0..=self.per_class.len() {
            out.push(',');
            out.push_str(&pct(Some(self.overall_accuracy)));
        }
        out.push('\n');
        type Getter = fn(&ClassQuality) -> Option<f64>;
        let rows: [(&str, Getter, f64); 3] = [
            ("precision", |c| c.precision, self.mean_precision),
            ("recall", |c| c.recall, self.mean_recall),
            ("IoU", |c| c.iou, self.mean_iou),
        ];
        for (label, get, mean) in rows {
            out.push_str(label);
            for c in &self.per_class {
                out.push(',');
                out.push_str(&pct(get(c)));
            }
            out.push(',');
            out.push_str(&pct(Some(mean).filter(|m| m.is_finite())));
            out.push('\n');
        }
        out
    }
}

pub(crate) fn pooled_confusion(
    references: &[ClassMask],
    predictions: &[ClassMask],
    num_classes: usize,
) -> Result<ConfusionMatrix, DataError> {
    if references.is_empty() {
        return Err(DataError::Empty("no masks to assess".into()));
    }
    if references.len() != predictions.len() {
        return Err(DataError::ClassMismatch(format!(
            "{} reference masks vs {} predicted masks",
            references.len(),
            predictions.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(num_classes);
    for (i, (r, p)) in references.iter().zip(predictions).enumerate() {
        for (name, m) in [("reference", r), ("predicted", p)] {
            if m.num_classes as usize != num_classes {
                return Err(DataError::ClassMismatch(format!(
                    "{name} mask {i} declares {} classes, expected {num_classes}",
                    m.num_classes
                )));
            }
            m.validate()?;
        }
        if r.height != p.height || r.width != p.width {
            return Err(DataError::InvalidPatch(format!("mask pair {i} is not aligned")));
        }
        cm.add_mask(r, p);
    }
    Ok(cm)
}

/// Compares noisy masks against exact masks (same class set) and reports
/// overall accuracy plus per-class precision, recall and IoU.
pub fn assess_label_quality(
    exact_masks: &[ClassMask],
    noisy_masks: &[ClassMask],
    class_names: &[String],
) -> Result<QualityReport, DataError> {
    let cm = pooled_confusion(exact_masks, noisy_masks, class_names.len())?;
    Ok(QualityReport::from_confusion(&cm, class_names))
}
