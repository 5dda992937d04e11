//! Layout-adherence metrics: IoU, greedy detection matching, success ratios
//! by instance count, mean IoU, COCO-style average precision, and averaging
//! of pluggable similarity scores.

mod ap;
mod report;
mod similarity;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::icbp::BBox;
use crate::scenes::DetectedBox;

pub use ap::{average_precision, coco_thresholds, ApSummary};
pub use report::{summarize, ScoreSummary, CSV_HEADER, MATCHER, POOLING};
pub use similarity::{aggregate_similarity, IouScorer, ScoreRange, Scorer, ScorerFailure, SimilarityReport};

/// Intersection over union; 0 for disjoint or empty boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// An instance counts as localized when its IoU is strictly above this.
pub const SUCCESS_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GtInstance {
    pub class_id: usize,
    pub bbox: BBox,
}

/// Ground truth and detections for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub gt: Vec<GtInstance>,
    pub detections: Vec<DetectedBox>,
}

impl EvalRecord {
    /// Number of ground-truth instances.
    pub fn level(&self) -> usize {
        self.gt.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceMatch {
    pub detection: Option<usize>,
    pub iou: f64,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub instances: Vec<InstanceMatch>,
}

impl MatchResult {
    pub fn all_succeeded(&self) -> bool {
        self.instances.iter().all(|m| m.success)
    }
}

/// Greedy per-class matching. Detections are visited by descending score
/// (stable, so input order breaks ties); each claims the unmatched
/// same-class ground truth it overlaps most, lowest index on ties.
pub fn match_instances(gt: &[GtInstance], detections: &[DetectedBox]) -> MatchResult {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut instances = vec![InstanceMatch { detection: None, iou: 0.0, success: false }; gt.len()];
    for d in order {
        let det = &detections[d];
        let mut best: Option<(usize, f64)> = None;
        for (g, inst) in gt.iter().enumerate() {
            if inst.class_id != det.class_id || instances[g].detection.is_some() {
                continue;
            }
            let v = iou(&inst.bbox, &det.bbox);
            if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
                best = Some((g, v));
            }
        }
        if let Some((g, v)) = best {
            instances[g] = InstanceMatch { detection: Some(d), iou: v, success: v > SUCCESS_IOU };
        }
    }
    MatchResult { instances }
}

/// Ratios keyed `L<n>` per level present plus `avg`; a level with no
/// images is absent rather than zero.
pub type LevelRatios = BTreeMap<String, f64>;

pub fn level_key(level: usize) -> String {
    format!("L{level}")
}

fn ratios(counts: &BTreeMap<usize, (usize, usize)>) -> LevelRatios {
    let mut out = LevelRatios::new();
    let (mut hit, mut all) = (0, 0);
    for (&level, &(h, n)) in counts {
        if n > 0 {
            out.insert(level_key(level), h as f64 / n as f64);
        }
        hit += h;
        all += n;
    }
    if all > 0 {
        out.insert("avg".into(), hit as f64 / all as f64);
    }
    out
}

/// Successful / total instances per level; `avg` pools all instances.
pub fn instance_success_ratio(records: &[EvalRecord]) -> LevelRatios {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let m = match_instances(&r.gt, &r.detections);
        let e = counts.entry(r.level()).or_default();
        e.0 += m.instances.iter().filter(|i| i.success).count();
        e.1 += m.instances.len();
    }
    ratios(&counts)
}

/// Images whose every instance succeeded, per level; `avg` pools all images.
/// Extra detections do not count against an image.
pub fn image_success_ratio(records: &[EvalRecord]) -> LevelRatios {
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let m = match_instances(&r.gt, &r.detections);
        let e = counts.entry(r.level()).or_default();
        e.0 += usize::from(m.all_succeeded());
        e.1 += 1;
    }
    ratios(&counts)
}

/// Mean achieved IoU over all ground-truth instances, unmatched ones as 0.
pub fn mean_iou(records: &[EvalRecord]) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in records {
        for m in match_instances(&r.gt, &r.detections).instances {
            sum += m.iou;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}
