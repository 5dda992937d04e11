use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{iou, EvalRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// `0.50, 0.55, .., 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

/// One class at one threshold: 101-point interpolated AP, or `None` when the
/// class has no ground truth.
fn class_ap(records: &[EvalRecord], class: usize, thr: f64) -> Option<f64> {
    let npos: usize = records.iter().map(|r| r.gt.iter().filter(|g| g.class_id == class).count()).sum();
    if npos == 0 {
        return None;
    }
    // (score, image, detection); stable order breaks score ties
    let mut dets: Vec<(f64, usize, usize)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        for (d, det) in r.detections.iter().enumerate() {
            if det.class_id == class {
                dets.push((det.score, i, d));
            }
        }
    }
    dets.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut taken: Vec<Vec<bool>> = records.iter().map(|r| vec![false; r.gt.len()]).collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut recall = Vec::with_capacity(dets.len());
    let mut precision = Vec::with_capacity(dets.len());
    for &(_, i, d) in &dets {
        let det = &records[i].detections[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, gt) in records[i].gt.iter().enumerate() {
            if gt.class_id != class || taken[i][g] {
                continue;
            }
            let v = iou(&gt.bbox, &det.bbox);
            if v >= thr && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        match best {
            Some((g, _)) => {
                taken[i][g] = true;
                tp += 1;
            }
            None => fp += 1,
        }
        recall.push(tp as f64 / npos as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    // precision envelope, then sample at recall 0, 0.01, .., 1
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let mut sum = 0.0;
    for j in 0..=100 {
        let r = j as f64 / 100.0;
        let k = recall.partition_point(|&x| x < r);
        if k < precision.len() {
            sum += precision[k];
        }
    }
    Some(sum / 101.0)
}

fn ap_at(records: &[EvalRecord], thr: f64) -> f64 {
    let classes: BTreeSet<usize> = records.iter().flat_map(|r| r.gt.iter().map(|g| g.class_id)).collect();
    let aps: Vec<f64> = classes.iter().filter_map(|&c| class_ap(records, c, thr)).collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// COCO-style AP: per threshold and per class (classes with ground truth
/// only) a score-ranked greedy match at `IoU >= threshold`, 101-point
/// interpolation, class mean; `ap` is the mean over `thresholds`.
/// `ap50` and `ap75` are always evaluated at 0.50 and 0.75.
pub fn average_precision(records: &[EvalRecord], thresholds: &[f64]) -> ApSummary {
    let ap = if thresholds.is_empty() {
        0.0
    } else {
        thresholds.iter().map(|&t| ap_at(records, t)).sum::<f64>() / thresholds.len() as f64
    };
    ApSummary { ap, ap50: ap_at(records, 0.5), ap75: ap_at(records, 0.75) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icbp::BBox;
    use crate::metrics::GtInstance;
    use crate::scenes::DetectedBox;

    fn gt(class_id: usize, c: [f64; 4]) -> GtInstance {
        GtInstance { class_id, bbox: BBox::from(c) }
    }

    fn det(class_id: usize, c: [f64; 4], score: f64) -> DetectedBox {
        DetectedBox { class_id, bbox: BBox::from(c), score }
    }

    #[test]
    fn single_detection_fixture() {
        let r = EvalRecord { gt: vec![gt(0, [0.0, 0.0, 0.5, 0.5])], detections: vec![det(0, [0.0, 0.0, 0.5, 0.3], 0.9)] };
        let s = average_precision(&[r], &coco_thresholds());
        assert!((s.ap50 - 1.0).abs() < 1e-9);
        assert!(s.ap75.abs() < 1e-9);
        // thresholds 0.50 and 0.55 pass at IoU 0.6 (0.60 passes too: IoU >= threshold)
        assert!((s.ap - 0.3).abs() < 1e-9, "{}", s.ap);
    }

    #[test]
    fn perfect_and_empty() {
        let r = EvalRecord {
            gt: vec![gt(0, [0.0, 0.0, 0.5, 0.5]), gt(1, [0.5, 0.5, 1.0, 1.0])],
            detections: vec![det(0, [0.0, 0.0, 0.5, 0.5], 0.8), det(1, [0.5, 0.5, 1.0, 1.0], 0.7)],
        };
        let s = average_precision(std::slice::from_ref(&r), &coco_thresholds());
        assert_eq!((s.ap, s.ap50, s.ap75), (1.0, 1.0, 1.0));
        let none = EvalRecord { detections: vec![], ..r };
        let s = average_precision(&[none], &coco_thresholds());
        assert_eq!((s.ap, s.ap50, s.ap75), (0.0, 0.0, 0.0));
    }

    #[test]
    fn unit_scores_give_precision_at_full_recall() {
        // one class, k true positives among n equal-score detections, all GT found
        for (k, n) in [(1, 1), (2, 3), (3, 5), (4, 4)] {
            // false positives first: with tied scores input order is rank order
            let mut g = Vec::new();
            let mut d = Vec::new();
            for i in k..n {
                let x = i as f64 * 0.05;
                d.push(det(0, [x, 0.5, x + 0.01, 0.51], 1.0));
            }
            for i in 0..k {
                let x = i as f64 * 0.2;
                g.push(gt(0, [x, 0.0, x + 0.1, 0.1]));
                d.push(det(0, [x, 0.0, x + 0.1, 0.1], 1.0));
            }
            let r = EvalRecord { gt: g, detections: d };
            let s = average_precision(&[r], &[0.5]);
            assert!((s.ap - k as f64 / n as f64).abs() < 1e-9, "k={k} n={n}: {}", s.ap);
        }
    }

    #[test]
    fn ranking_matters() {
        // a false positive above the true positive halves precision at every recall
        let r = EvalRecord {
            gt: vec![gt(0, [0.0, 0.0, 0.2, 0.2])],
            detections: vec![det(0, [0.5, 0.5, 0.7, 0.7], 0.9), det(0, [0.0, 0.0, 0.2, 0.2], 0.3)],
        };
        assert!((average_precision(&[r], &[0.5]).ap - 0.5).abs() < 1e-9);
    }
}
