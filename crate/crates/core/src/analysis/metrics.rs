//! Segmentation metrics on the pooled confusion matrix shared with label
//! quality assessment.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::data::{pooled_confusion, ClassMask, ClassQuality, QualityReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMetrics {
    pub overall_accuracy: f64,
    /// Mean recall over classes present in the ground truth.
    pub average_accuracy: f64,
    /// Mean IoU over classes present in ground truth or prediction.
    pub mean_iou: f64,
    pub per_class: Vec<ClassQuality>,
}

impl SegmentationMetrics {
    pub fn iou(&self, class: &str) -> Option<f64> {
        self.per_class.iter().find(|c| c.name == class).and_then(|c| c.iou)
    }
}

pub fn evaluate_segmentation(
    pred_masks: &[ClassMask],
    gt_masks: &[ClassMask],
    class_names: &[String],
) -> Result<SegmentationMetrics, AnalysisError> {
    let cm = pooled_confusion(gt_masks, pred_masks, class_names.len())?;
    let report = QualityReport::from_confusion(&cm, class_names);
    let recalls: Vec<f64> = (0..class_names.len())
        .filter(|&c| cm.reference_count(c) > 0)
        .map(|c| cm.tp(c) as f64 / cm.reference_count(c) as f64)
        .collect();
    let average_accuracy = if recalls.is_empty() { f64::NAN } else { recalls.iter().sum::<f64>() / recalls.len() as f64 };
    Ok(SegmentationMetrics {
        overall_accuracy: report.overall_accuracy,
        average_accuracy,
        mean_iou: report.mean_iou,
        per_class: report.per_class,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::assess_label_quality;
    use proptest::prelude::*;

    fn names(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn toy_case() {
        let g: &[u8] = &[0, 0, 1, 1];
        let p: &[u8] = &[0, 1, 1, 1];
        let gt = ClassMask::from_rows(&[g, g, g, g], 2);
        let pred = ClassMask::from_rows(&[p, p, p, p], 2);
        let m = evaluate_segmentation(&[pred], &[gt], &names(2)).unwrap();
        assert_eq!(m.overall_accuracy, 0.75);
        assert!((m.mean_iou - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert_eq!(m.average_accuracy, 0.75);
    }

    #[test]
    fn perfect_prediction() {
        let gt = ClassMask::from_rows(&[&[0, 1, 2], &[2, 1, 0]], 3);
        let m = evaluate_segmentation(&[gt.clone()], &[gt], &names(3)).unwrap();
        assert_eq!((m.overall_accuracy, m.mean_iou, m.average_accuracy), (1.0, 1.0, 1.0));
    }

    #[test]
    fn average_accuracy_over_gt_classes_only() {
        let gt = ClassMask::filled(2, 2, 3, 1);
        let pred = ClassMask::from_rows(&[&[1, 1], &[0, 2]], 3);
        let m = evaluate_segmentation(&[pred], &[gt], &names(3)).unwrap();
        assert_eq!(m.average_accuracy, 0.5);
        assert_eq!(m.per_class[1].iou, Some(0.5));
    }

    #[test]
    fn class_set_mismatch() {
        let gt = ClassMask::filled(2, 2, 3, 1);
        assert!(evaluate_segmentation(&[gt.clone()], &[gt], &names(2)).is_err());
    }

    proptest! {
        #[test]
        fn agrees_with_label_quality(a in proptest::collection::vec(0u8..4, 36), b in proptest::collection::vec(0u8..4, 36)) {
            let gt = ClassMask { height: 6, width: 6, num_classes: 4, data: a };
            let pr = ClassMask { height: 6, width: 6, num_classes: 4, data: b };
            let m = evaluate_segmentation(&[pr.clone()], &[gt.clone()], &names(4)).unwrap();
            let q = assess_label_quality(&[gt], &[pr], &names(4)).unwrap();
            let mi: Vec<_> = m.per_class.iter().map(|c| c.iou).collect();
            let qi: Vec<_> = q.per_class.iter().map(|c| c.iou).collect();
            prop_assert_eq!(mi, qi);
        }
    }
}
