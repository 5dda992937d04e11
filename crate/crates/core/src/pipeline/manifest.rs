//! Scene manifest in, verdicts out.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{accept_scene, assign, combined_cost, normalize_scores, CostWeights, PipelineError, QualityThresholds, ScoreNormalization, ScoreTriple, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneManifest {
    pub scenes: Vec<ManifestScene>,
}

/// One scene: `scores[i][j]` rates subject `i` against candidate box `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestScene {
    pub scene_id: String,
    pub scores: Vec<Vec<ScoreTriple>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneVerdict {
    pub scene_id: String,
    pub assignment: Option<Vec<[usize; 2]>>,
    pub total_cost: Option<f64>,
    /// `"accepted"` or `"rejected"`.
    pub verdict: String,
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchSummary {
    pub n_scenes: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub rejected_by_reason: BTreeMap<String, usize>,
}

impl MatchSummary {
    pub fn from_verdicts(verdicts: &[(SceneVerdict, Vec<&'static str>)]) -> Self {
        let mut s = MatchSummary { n_scenes: verdicts.len(), ..Default::default() };
        for (v, labels) in verdicts {
            if v.verdict == "accepted" {
                s.accepted += 1;
            } else {
                s.rejected += 1;
                let mut seen: Vec<&str> = labels.clone();
                seen.sort_unstable();
                seen.dedup();
                for l in seen {
                    *s.rejected_by_reason.entry(l.to_string()).or_default() += 1;
                }
            }
        }
        s
    }
}

/// Normalizes the scores, builds the combined cost, assigns, and applies the
/// per-pair quality gate. Also returns the reason labels for summaries.
pub fn process_scene(
    scene: &ManifestScene,
    weights: &CostWeights,
    thresholds: &QualityThresholds,
    normalization: ScoreNormalization,
) -> Result<(SceneVerdict, Vec<&'static str>), PipelineError> {
    let scores = normalize_scores(&scene.scores, normalization);
    let cost = combined_cost(&scores, weights)?;
    let a = assign(&cost)?;
    let verdict = accept_scene(&a, &scores, thresholds);
    let (name, reasons, labels) = match &verdict {
        Verdict::Accepted => ("accepted", Vec::new(), Vec::new()),
        Verdict::Rejected(r) => ("rejected", r.iter().map(ToString::to_string).collect(), r.iter().map(|x| x.label()).collect()),
    };
    let complete = a.total_cost.is_some();
    Ok((
        SceneVerdict {
            scene_id: scene.scene_id.clone(),
            assignment: complete.then(|| a.pairs.iter().map(|&(i, j)| [i, j]).collect()),
            total_cost: a.total_cost,
            verdict: name.into(),
            reasons,
        },
        labels,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_incomplete() {
        let perfect = ManifestScene { scene_id: "a".into(), scores: vec![vec![ScoreTriple::new(1.0, 1.0, 1.0)]] };
        let (v, _) = process_scene(&perfect, &CostWeights::default(), &QualityThresholds::default(), ScoreNormalization::None).unwrap();
        assert_eq!(v.verdict, "accepted");
        assert_eq!(v.assignment, Some(vec![[0, 0]]));
        assert_eq!(v.total_cost, Some(0.0));

        let short = ManifestScene { scene_id: "b".into(), scores: vec![vec![ScoreTriple::new(0.5, 0.5, 0.5); 2]; 3] };
        let (v, labels) = process_scene(&short, &CostWeights::default(), &QualityThresholds::default(), ScoreNormalization::None).unwrap();
        assert_eq!(v.verdict, "rejected");
        assert_eq!(v.assignment, None);
        assert_eq!(v.reasons, vec!["incomplete_matching: 3 subjects, 2 boxes".to_string()]);
        let s = MatchSummary::from_verdicts(&[(v, labels)]);
        assert_eq!(s.rejected_by_reason["incomplete_matching"], 1);
    }

    #[test]
    fn json_shapes() {
        let m: SceneManifest = serde_json::from_str(
            r#"{"scenes":[{"scene_id":"s1","scores":[[{"s_t":0.9,"s_d":0.8,"s_i":0.7}]]}]}"#,
        )
        .unwrap();
        let (v, _) = process_scene(&m.scenes[0], &CostWeights::default(), &QualityThresholds::default(), ScoreNormalization::None).unwrap();
        let j = serde_json::to_value(&v).unwrap();
        assert_eq!(j["scene_id"], "s1");
        assert_eq!(j["assignment"][0][1], 0);
        assert!(j["reasons"].as_array().unwrap().is_empty());
    }
}
