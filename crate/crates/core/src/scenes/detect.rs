use serde::{Deserialize, Serialize};

use super::Palette;
use crate::flowmatch::ToyScene;
use crate::icbp::{normalize_box, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectedBox {
    pub class_id: usize,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectConfig {
    /// Largest per-channel distance from a class colour that still matches.
    #[serde(default = "d_tol")]
    pub tolerance: f64,
    #[serde(default = "d_area")]
    pub min_area: usize,
}

fn d_tol() -> f64 {
    0.25
}
fn d_area() -> usize {
    4
}

impl Default for DetectConfig {
    fn default() -> Self {
        DetectConfig { tolerance: d_tol(), min_area: d_area() }
    }
}

/// Colour-threshold detector.
///
/// For each palette class, pixels within `tolerance` (L-infinity) of the
/// class colour form a mask; every 4-connected component of at least
/// `min_area` pixels yields its tight box. The score is the mean over the
/// component of `1 - distance / tolerance`. Output is sorted by score,
/// highest first; ties keep class then raster order.
pub fn detect(scene: &ToyScene, palette: &Palette, cfg: &DetectConfig) -> Vec<DetectedBox> {
    let (h, w) = (scene.height, scene.width);
    let mut out = Vec::new();
    for (class_id, color) in palette.colors.iter().enumerate() {
        let dist: Vec<f64> = (0..h * w)
            .map(|p| {
                (0..scene.channels.min(3))
                    .map(|c| (scene.data[c * h * w + p] - color[c]).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        let mut seen: Vec<bool> = dist.iter().map(|&d| d > cfg.tolerance).collect();
        let mut stack = Vec::new();
        for start in 0..h * w {
            if seen[start] {
                continue;
            }
            seen[start] = true;
            stack.push(start);
            let (mut x1, mut y1, mut x2, mut y2) = (w, h, 0, 0);
            let (mut area, mut score) = (0usize, 0.0);
            while let Some(p) = stack.pop() {
                let (y, x) = (p / w, p % w);
                x1 = x1.min(x);
                y1 = y1.min(y);
                x2 = x2.max(x + 1);
                y2 = y2.max(y + 1);
                area += 1;
                score += 1.0 - dist[p] / cfg.tolerance;
                let mut visit = |q: usize| {
                    if !seen[q] {
                        seen[q] = true;
                        stack.push(q);
                    }
                };
                if x > 0 {
                    visit(p - 1);
                }
                if x + 1 < w {
                    visit(p + 1);
                }
                if y > 0 {
                    visit(p - w);
                }
                if y + 1 < h {
                    visit(p + w);
                }
            }
            if area < cfg.min_area {
                continue;
            }
            let px = [x1 as u32, y1 as u32, x2 as u32, y2 as u32];
            if let Ok(bbox) = normalize_box(px, w as u32, h as u32) {
                out.push(DetectedBox { class_id, bbox, score: (score / area as f64).clamp(0.0, 1.0) });
            }
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::{render, Instance, LayoutSpec};

    #[test]
    fn background_only() {
        let pal = Palette::default();
        let s = ToyScene::filled(16, 16, &pal.background);
        assert!(detect(&s, &pal, &DetectConfig::default()).is_empty());
    }

    #[test]
    fn rendered_boxes_come_back() {
        let pal = Palette::default();
        let spec = LayoutSpec {
            height: 32,
            width: 32,
            instances: vec![
                Instance { class_id: 3, bbox: BBox::new(0.1, 0.2, 0.4, 0.5).unwrap() },
                Instance { class_id: 6, bbox: BBox::new(0.5, 0.5, 0.9, 0.95).unwrap() },
            ],
        };
        let d = detect(&render(&spec, &pal), &pal, &DetectConfig::default());
        assert_eq!(d.len(), 2);
        for inst in &spec.instances {
            let hit = d.iter().find(|b| b.class_id == inst.class_id).unwrap();
            assert_eq!(hit.score, 1.0);
            for (a, b) in hit.bbox.coords().iter().zip(inst.bbox.coords()) {
                assert!((a - b).abs() <= 1.0 / 32.0 + 1e-12);
            }
        }
    }

    #[test]
    fn split_blobs_and_small_specks() {
        let pal = Palette::default();
        let mut s = ToyScene::filled(10, 10, &pal.background);
        let paint = |s: &mut ToyScene, ys: std::ops::Range<usize>, xs: std::ops::Range<usize>, v: f64| {
            for y in ys {
                for x in xs.clone() {
                    s.set(0, y, x, v);
                    s.set(1, y, x, 0.1);
                    s.set(2, y, x, 0.0);
                }
            }
        };
        paint(&mut s, 0..3, 0..3, 1.0);
        paint(&mut s, 5..8, 5..9, 0.9);
        paint(&mut s, 9..10, 0..3, 1.0); // 3 pixels: below min_area
        let d = detect(&s, &pal, &DetectConfig::default());
        assert_eq!(d.len(), 2);
        assert!(d.iter().all(|b| b.class_id == 2));
        // 1 - 0.1 / 0.25 and 1 - max(0.1, 0.1) / 0.25
        assert!((d[0].score - 0.6).abs() < 1e-12 && (d[1].score - 0.6).abs() < 1e-12);
        assert_eq!(d[0].bbox.coords(), [0.0, 0.0, 0.3, 0.3]);
        assert_eq!(d[1].bbox.coords(), [0.5, 0.5, 0.9, 0.8]);
    }
}
