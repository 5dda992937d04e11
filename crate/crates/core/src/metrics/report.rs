use serde::{Deserialize, Serialize};

use super::{average_precision, coco_thresholds, image_success_ratio, instance_success_ratio, level_key, mean_iou, EvalRecord, LevelRatios};

pub const MATCHER: &str = "greedy-coco";
pub const POOLING: &str = "instances";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSummary {
    pub instance_sr: LevelRatios,
    pub image_sr: LevelRatios,
    pub miou: f64,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub n_images: usize,
    pub matcher: String,
    pub pooling: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_t_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dino_mean: Option<f64>,
}

pub fn summarize(records: &[EvalRecord]) -> ScoreSummary {
    let ap = average_precision(records, &coco_thresholds());
    ScoreSummary {
        instance_sr: instance_success_ratio(records),
        image_sr: image_success_ratio(records),
        miou: mean_iou(records),
        ap: ap.ap,
        ap50: ap.ap50,
        ap75: ap.ap75,
        n_images: records.len(),
        matcher: MATCHER.into(),
        pooling: POOLING.into(),
        clip_t_mean: None,
        dino_mean: None,
    }
}

/// Column order of the usual COCO-Position results table.
pub const CSV_HEADER: &str = "instance_sr_L2,instance_sr_L3,instance_sr_L4,instance_sr_L5,instance_sr_L6,instance_sr_avg,\
image_sr_L2,image_sr_L3,image_sr_L4,image_sr_L5,image_sr_L6,image_sr_avg,miou,ap,ap50,ap75";

impl ScoreSummary {
    /// One row under [`CSV_HEADER`]; absent levels are empty cells.
    pub fn csv_row(&self) -> String {
        let cell = |m: &LevelRatios, k: &str| m.get(k).map(|v| v.to_string()).unwrap_or_default();
        let mut cells = Vec::new();
        for m in [&self.instance_sr, &self.image_sr] {
            for l in 2..=6 {
                cells.push(cell(m, &level_key(l)));
            }
            cells.push(cell(m, "avg"));
        }
        for v in [self.miou, self.ap, self.ap50, self.ap75] {
            cells.push(v.to_string());
        }
        cells.join(",")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::icbp::BBox;
    use crate::metrics::GtInstance;
    use crate::scenes::DetectedBox;

    #[test]
    fn report_shape() {
        let bx = BBox::from([0.0, 0.0, 0.5, 0.5]);
        let rec = EvalRecord {
            gt: vec![GtInstance { class_id: 0, bbox: bx }, GtInstance { class_id: 1, bbox: bx }],
            detections: vec![DetectedBox { class_id: 0, bbox: bx, score: 1.0 }],
        };
        let s = summarize(&[rec]);
        let v = serde_json::to_value(&s).unwrap();
        assert_eq!(v["instance_sr"]["L2"], 0.5);
        assert_eq!(v["image_sr"]["avg"], 0.0);
        assert_eq!(v["matcher"], "greedy-coco");
        assert_eq!(v["pooling"], "instances");
        assert!(v.get("clip_t_mean").is_none());
        assert_eq!(s.csv_row(), "0.5,,,,,0.5,0,,,,,0,0.5,0.5,0.5,0.5");
        assert_eq!(CSV_HEADER.split(',').count(), s.csv_row().split(',').count());
    }
}
