use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::iou;
use crate::icbp::BBox;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("scorer failed: {0}")]
pub struct ScorerFailure(pub String);

/// Native output range of a scorer; cosine scores are mapped to `[0, 1]`
/// by `(s + 1) / 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreRange {
    #[default]
    Unit,
    Cosine,
}

/// A similarity model over some pair type (crop and prompt, crop and
/// reference image, ...).
pub trait Scorer<P: ?Sized> {
    fn name(&self) -> &str;

    fn range(&self) -> ScoreRange {
        ScoreRange::Unit
    }

    fn score(&self, pair: &P) -> Result<f64, ScorerFailure>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub scorer: String,
    /// Absent when no pair was scored.
    pub mean: Option<f64>,
    pub n_pairs: usize,
    pub n_failed: usize,
}

/// Mean normalized score over the pairs. Pairs whose scorer call fails, or
/// whose normalized score falls outside `[0, 1]`, are excluded and counted.
pub fn aggregate_similarity<P, S: Scorer<P> + ?Sized>(pairs: &[P], scorer: &S) -> SimilarityReport {
    let (mut sum, mut ok, mut failed) = (0.0, 0usize, 0usize);
    for p in pairs {
        let s = scorer.score(p).map(|s| match scorer.range() {
            ScoreRange::Unit => s,
            ScoreRange::Cosine => (s + 1.0) / 2.0,
        });
        match s {
            Ok(v) if (0.0..=1.0).contains(&v) => {
                sum += v;
                ok += 1;
            }
            _ => failed += 1,
        }
    }
    SimilarityReport {
        scorer: scorer.name().to_string(),
        mean: (ok > 0).then(|| sum / ok as f64),
        n_pairs: pairs.len(),
        n_failed: failed,
    }
}

/// Stand-in scorer on synthetic data: IoU of the crop box with the
/// reference box.
pub struct IouScorer;

impl Scorer<(BBox, BBox)> for IouScorer {
    fn name(&self) -> &str {
        "iou-stub"
    }

    fn score(&self, pair: &(BBox, BBox)) -> Result<f64, ScorerFailure> {
        Ok(iou(&pair.0, &pair.1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{match_instances, mean_iou, EvalRecord, GtInstance};
    use crate::scenes::DetectedBox;

    struct Constant;
    impl Scorer<usize> for Constant {
        fn name(&self) -> &str {
            "constant"
        }
        fn score(&self, _: &usize) -> Result<f64, ScorerFailure> {
            Ok(0.5)
        }
    }

    struct Flaky;
    impl Scorer<usize> for Flaky {
        fn name(&self) -> &str {
            "flaky-cosine"
        }
        fn range(&self) -> ScoreRange {
            ScoreRange::Cosine
        }
        fn score(&self, p: &usize) -> Result<f64, ScorerFailure> {
            if p % 2 == 0 {
                Ok(0.0)
            } else {
                Err(ScorerFailure(format!("pair {p}")))
            }
        }
    }

    #[test]
    fn constant_and_empty() {
        let pairs: Vec<usize> = (0..10).collect();
        let r = aggregate_similarity(&pairs, &Constant);
        assert_eq!(r.mean, Some(0.5));
        assert_eq!(r.scorer, "constant");
        assert_eq!(aggregate_similarity(&[] as &[usize], &Constant).mean, None);
        let r = aggregate_similarity(&pairs, &Flaky);
        assert_eq!((r.mean, r.n_failed, r.n_pairs), (Some(0.5), 5, 10));
    }

    #[test]
    fn iou_stub_equals_mean_iou() {
        let b = |c: [f64; 4]| BBox::from(c);
        let rec = EvalRecord {
            gt: vec![
                GtInstance { class_id: 0, bbox: b([0.0, 0.0, 0.5, 0.5]) },
                GtInstance { class_id: 1, bbox: b([0.5, 0.5, 0.9, 0.9]) },
            ],
            detections: vec![
                DetectedBox { class_id: 1, bbox: b([0.55, 0.5, 0.9, 0.85]), score: 0.7 },
                DetectedBox { class_id: 0, bbox: b([0.1, 0.0, 0.5, 0.6]), score: 0.8 },
            ],
        };
        let m = match_instances(&rec.gt, &rec.detections);
        let pairs: Vec<(BBox, BBox)> = m
            .instances
            .iter()
            .zip(&rec.gt)
            .map(|(mi, g)| (rec.detections[mi.detection.unwrap()].bbox, g.bbox))
            .collect();
        let r = aggregate_similarity(&pairs, &IouScorer);
        assert!((r.mean.unwrap() - mean_iou(&[rec])).abs() < 1e-12);
    }
}
