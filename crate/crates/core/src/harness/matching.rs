use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{HarnessError, Stage};
use crate::pipeline::{process_scene, CostWeights, MatchSummary, QualityThresholds, SceneManifest, SceneVerdict, ScoreNormalization};

pub const MATCH_FORMAT: &str = "layoutkit-match";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub format: String,
    pub version: u32,
    pub weights: CostWeights,
    pub thresholds: QualityThresholds,
    pub normalization: ScoreNormalization,
    pub verdicts: Vec<SceneVerdict>,
    pub summary: MatchSummary,
}

impl MatchReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Parses a manifest; a blank file is an empty manifest.
pub fn read_manifest(path: &Path) -> Result<SceneManifest, HarnessError> {
    let text = std::fs::read_to_string(path).map_err(HarnessError::io(path))?;
    if text.trim().is_empty() {
        return Ok(SceneManifest { scenes: Vec::new() });
    }
    serde_json::from_str(&text).map_err(|e| HarnessError::MalformedManifest {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })
}

pub fn run_match(
    manifest: &Path,
    weights: &CostWeights,
    thresholds: &QualityThresholds,
    normalization: ScoreNormalization,
) -> Result<MatchReport, HarnessError> {
    weights.check().map_err(|e| HarnessError::stage(Stage::Match)(e.into()))?;
    let m = read_manifest(manifest)?;
    let results = m
        .scenes
        .iter()
        .map(|s| process_scene(s, weights, thresholds, normalization))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| HarnessError::stage(Stage::Match)(e.into()))?;
    let summary = MatchSummary::from_verdicts(&results);
    Ok(MatchReport {
        format: MATCH_FORMAT.into(),
        version: 1,
        weights: *weights,
        thresholds: *thresholds,
        normalization,
        verdicts: results.into_iter().map(|(v, _)| v).collect(),
        summary,
    })
}
