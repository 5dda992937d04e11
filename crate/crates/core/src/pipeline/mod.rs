//! Dataset-construction math: placement sampling, candidate filtering,
//! weighted matching costs, Hungarian assignment and per-pair quality gates.
//! Generative and vision models are out of the loop; their outputs arrive as
//! boxes and scores.

mod assign;
mod manifest;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::icbp::{to_millis, BBox};
use crate::metrics::iou;

pub use assign::{assign, brute_force_min_cost, hungarian};
pub use manifest::{process_scene, ManifestScene, MatchSummary, SceneManifest, SceneVerdict};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PipelineError {
    #[error("invalid placement config: {0}")]
    PlacementConfig(String),
    #[error("a box with side factor {r} and aspect {aspect} does not fit the canvas")]
    NoValidPlacement { r: f64, aspect: f64 },
    #[error("cost weights must be >= 0 and sum to 1, got {0:?}")]
    WeightsOffSimplex([f64; 3]),
    #[error("score {value} at ({row}, {col}) is outside [0, 1]")]
    ScoreOutOfRange { row: usize, col: usize, value: f64 },
    #[error("non-finite cost at ({row}, {col})")]
    NonFiniteCost { row: usize, col: usize },
    #[error("cost matrix must have at least one row and equal-length rows")]
    BadCostMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementConfig {
    pub r_min: f64,
    pub r_max: f64,
    /// Canvas size in pixels.
    pub canvas_width: u32,
    pub canvas_height: u32,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig { r_min: 0.6, r_max: 0.8, canvas_width: 1024, canvas_height: 1024 }
    }
}

/// Draws `r ~ U(r_min, r_max)` and places a box whose width is `r` of the
/// canvas width, with height following the source aspect ratio
/// (`width / height`), uniformly among positions inside the canvas.
///
/// Positions and sides live on the 0.001 grid of normalized coordinates, so
/// the box width equals `r` to three decimals.
pub fn sample_placement(seed: u64, cfg: &PlacementConfig, aspect: f64) -> Result<(f64, BBox), PipelineError> {
    if !(0.0 < cfg.r_min && cfg.r_min <= cfg.r_max && cfg.r_max <= 1.0) {
        return Err(PipelineError::PlacementConfig(format!("need 0 < r_min <= r_max <= 1, got {}..{}", cfg.r_min, cfg.r_max)));
    }
    if cfg.canvas_width == 0 || cfg.canvas_height == 0 || !(aspect > 0.0 && aspect.is_finite()) {
        return Err(PipelineError::PlacementConfig("canvas and aspect ratio must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.random_range(cfg.r_min..=cfg.r_max);
    let w = to_millis(r);
    let h_norm = r * f64::from(cfg.canvas_width) / aspect / f64::from(cfg.canvas_height);
    let h = to_millis(h_norm);
    if h > 1000 || h <= 0 || w <= 0 {
        return Err(PipelineError::NoValidPlacement { r, aspect });
    }
    let x = rng.random_range(0..=1000 - w);
    let y = rng.random_range(0..=1000 - h);
    let m = |v: i64| v as f64 / 1000.0;
    let b = BBox { x1: m(x), y1: m(y), x2: m(x + w), y2: m(y + h) };
    Ok((r, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub area_min: f64,
    pub area_max: f64,
    pub dedup_iou: f64,
    pub min_subjects: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { area_min: 0.20, area_max: 0.60, dedup_iou: 0.9, min_subjects: 3 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum FilterVerdict {
    /// Indices of surviving candidates, ascending.
    Kept { kept: Vec<usize> },
    TooFewSubjects { kept: Vec<usize> },
}

/// Box area on the 0.001 grid, so that decimal bounds compare exactly.
fn grid_area(b: &BBox) -> f64 {
    let w = to_millis(b.x2) - to_millis(b.x1);
    let h = to_millis(b.y2) - to_millis(b.y1);
    (w.max(0) * h.max(0)) as f64 / 1e6
}

/// Drops candidates whose area is outside `[area_min, area_max]`, then
/// removes duplicates: visiting by descending score (lower index on ties),
/// a candidate survives unless it has IoU >= `dedup_iou` with one already
/// kept. Fewer than `min_subjects` survivors rejects the image.
pub fn filter_candidates(cands: &[Candidate], cfg: &FilterConfig) -> FilterVerdict {
    let mut order: Vec<usize> = (0..cands.len())
        .filter(|&i| {
            let a = grid_area(&cands[i].bbox);
            cfg.area_min <= a && a <= cfg.area_max
        })
        .collect();
    order.sort_by(|&a, &b| cands[b].score.total_cmp(&cands[a].score).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&cands[k].bbox, &cands[i].bbox) < cfg.dedup_iou) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    if kept.len() < cfg.min_subjects {
        FilterVerdict::TooFewSubjects { kept }
    } else {
        FilterVerdict::Kept { kept }
    }
}

pub const CLIP_T_GATE: f64 = 0.25;

/// Text-crop similarity gate, inclusive at the threshold.
pub fn crop_gate(s_t: f64, threshold: f64) -> bool {
    s_t >= threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub s_t: f64,
    pub s_d: f64,
    pub s_i: f64,
}

impl ScoreTriple {
    pub fn new(s_t: f64, s_d: f64, s_i: f64) -> Self {
        ScoreTriple { s_t, s_d, s_i }
    }

    fn get(&self, k: usize) -> f64 {
        [self.s_t, self.s_d, self.s_i][k]
    }

    fn set(&mut self, k: usize, v: f64) {
        match k {
            0 => self.s_t = v,
            1 => self.s_d = v,
            _ => self.s_i = v,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { alpha: 1.0 / 3.0, beta: 1.0 / 3.0, gamma: 1.0 / 3.0 }
    }
}

impl CostWeights {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Result<Self, PipelineError> {
        let w = CostWeights { alpha, beta, gamma };
        w.check()?;
        Ok(w)
    }

    pub fn check(&self) -> Result<(), PipelineError> {
        let ws = [self.alpha, self.beta, self.gamma];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (ws.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(PipelineError::WeightsOffSimplex(ws));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreNormalization {
    /// Scores are already in `[0, 1]`.
    #[default]
    None,
    /// Per score kind, `(s - min) / (max - min)` over the matrix; a kind that
    /// is constant across the matrix is left unchanged.
    MinMax,
}

pub fn normalize_scores(scores: &[Vec<ScoreTriple>], mode: ScoreNormalization) -> Vec<Vec<ScoreTriple>> {
    let mut out = scores.to_vec();
    if mode == ScoreNormalization::None {
        return out;
    }
    for k in 0..3 {
        let vals = scores.iter().flatten().map(|s| s.get(k));
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        if !(hi > lo) {
            continue;
        }
        for s in out.iter_mut().flatten() {
            s.set(k, (s.get(k) - lo) / (hi - lo));
        }
    }
    out
}

/// `C = 1 - (alpha s_t + beta s_d + gamma s_i)` elementwise.
pub fn combined_cost(scores: &[Vec<ScoreTriple>], w: &CostWeights) -> Result<Vec<Vec<f64>>, PipelineError> {
    w.check()?;
    let mut out = Vec::with_capacity(scores.len());
    for (row, r) in scores.iter().enumerate() {
        let mut costs = Vec::with_capacity(r.len());
        for (col, s) in r.iter().enumerate() {
            for value in [s.s_t, s.s_d, s.s_i] {
                if !(0.0..=1.0).contains(&value) {
                    return Err(PipelineError::ScoreOutOfRange { row, col, value });
                }
            }
            let sim = w.alpha * s.s_t + w.beta * s.s_d + w.gamma * s.s_i;
            costs.push((1.0 - sim).clamp(0.0, 1.0));
        }
        out.push(costs);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RejectReason {
    IncompleteMatching { subjects: usize, boxes: usize },
    QualityCheck { subject: usize, bbox: usize, failed: Vec<String> },
}

impl std::fmt::Display for RejectReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RejectReason::IncompleteMatching { subjects, boxes } => {
                write!(f, "incomplete_matching: {subjects} subjects, {boxes} boxes")
            }
            RejectReason::QualityCheck { subject, bbox, failed } => {
                write!(f, "quality_check: subject {subject} -> box {bbox} below threshold on {}", failed.join(", "))
            }
        }
    }
}

impl RejectReason {
    /// Short label for summary counts.
    pub fn label(&self) -> &'static str {
        match self {
            RejectReason::IncompleteMatching { .. } => "incomplete_matching",
            RejectReason::QualityCheck { .. } => "quality_check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Verdict {
    Accepted,
    Rejected(Vec<RejectReason>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(subject, box)` in subject order; empty when rejected by `assign`.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of assigned costs; `None` when no complete matching exists.
    pub total_cost: Option<f64>,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityThresholds {
    pub t_min: f64,
    pub d_min: f64,
    pub i_min: f64,
}

impl Default for QualityThresholds {
    fn default() -> Self {
        QualityThresholds { t_min: 0.25, d_min: 0.30, i_min: 0.50 }
    }
}

/// Rejects when any matched pair falls below a threshold, listing each
/// failing pair; an assignment already rejected keeps its verdict.
pub fn accept_scene(a: &Assignment, scores: &[Vec<ScoreTriple>], th: &QualityThresholds) -> Verdict {
    if let Verdict::Rejected(r) = &a.verdict {
        return Verdict::Rejected(r.clone());
    }
    let mut reasons = Vec::new();
    for &(i, j) in &a.pairs {
        let s = scores[i][j];
        let mut failed = Vec::new();
        if s.s_t < th.t_min {
            failed.push("s_t".to_string());
        }
        if s.s_d < th.d_min {
            failed.push("s_d".to_string());
        }
        if s.s_i < th.i_min {
            failed.push("s_i".to_string());
        }
        if !failed.is_empty() {
            reasons.push(RejectReason::QualityCheck { subject: i, bbox: j, failed });
        }
    }
    if reasons.is_empty() {
        Verdict::Accepted
    } else {
        Verdict::Rejected(reasons)
    }
}
