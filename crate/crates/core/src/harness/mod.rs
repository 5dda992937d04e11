//! Experiment orchestration: configuration, the layout-control benchmark,
//! and the manifest matcher, with machine-readable reports.
//!
//! # Seeds
//!
//! Every random draw descends from the root `seed` through
//! [`split_seed`](crate::seed::split_seed), one counter per stage:
//!
//! | counter | stage                                                   |
//! |---------|---------------------------------------------------------|
//! | 0       | training layouts; layout `i` uses `split_seed(s0, i)`   |
//! | 1       | held-out layouts; layout `i` uses `split_seed(s1, i)`   |
//! | 2       | model initialisation and the training loop              |
//! | 3       | sampler; held-out item `i` uses `split_seed(s3, i)`     |
//!
//! where `sK = split_seed(seed, K)`. Every sweep point, and the
//! coordinate-stripped baseline, reuses the same sampler seeds, so the
//! points differ only in guidance.

mod bench;
mod matching;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::flowmatch::{FlowError, ModelConfig, OptimizerKind, SamplerConfig, TrainConfig};
use crate::guidance::{GuidanceConfig, GuidanceError};
use crate::pipeline::PipelineError;
use crate::scenes::{DetectConfig, LayoutConfig, Palette, SceneError};
use crate::seed::split_seed;

pub use bench::{
    build_dataset, evaluate_point, held_out_layouts, run_benchmark, run_benchmark_with, samples_digest, train_model,
    write_outputs, SweepPoint, SweepReport, TrainingSummary, Provenance, PLOT_CSV_HEADER, REPORT_FORMAT,
};
pub use matching::{read_manifest, run_match, MatchReport, MATCH_FORMAT};

/// Overrides `output_dir` when set.
pub const OUT_DIR_ENV: &str = "LAYOUTKIT_OUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

pub const SWEEP_REPORT_SCHEMA: &str = include_str!("../../schemas/sweep_report.schema.json");
pub const MATCH_REPORT_SCHEMA: &str = include_str!("../../schemas/match_report.schema.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Dataset,
    Train,
    Sample,
    Match,
    Report,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Dataset => "dataset",
            Stage::Train => "train",
            Stage::Sample => "sample",
            Stage::Match => "match",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error(transparent)]
    Scenes(#[from] SceneError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed manifest {}: {message} at line {line}, column {column}", path.display())]
    MalformedManifest { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{stage} stage failed: {source}")]
    Stage { stage: Stage, source: StageError },
}

impl HarnessError {
    pub(crate) fn stage(stage: Stage) -> impl FnOnce(StageError) -> HarnessError {
        move |source| HarnessError::Stage { stage, source }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
        move |source| HarnessError::Io { path: path.to_path_buf(), source }
    }

    /// Process exit code: 2 for configuration, 3 for data, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => EXIT_CONFIG,
            HarnessError::Io { .. } | HarnessError::MalformedManifest { .. } => EXIT_DATA,
            HarnessError::Stage { source, .. } => match source {
                StageError::Flow(e) => flow_exit_code(e),
                StageError::Scenes(SceneError::Config(_)) => EXIT_CONFIG,
                StageError::Scenes(_) => EXIT_DATA,
                StageError::Pipeline(PipelineError::WeightsOffSimplex(_) | PipelineError::PlacementConfig(_)) => {
                    EXIT_CONFIG
                }
                StageError::Pipeline(_) => EXIT_DATA,
            },
        }
    }
}

fn flow_exit_code(e: &FlowError) -> i32 {
    match e {
        FlowError::TrainingDiverged { .. } | FlowError::NonFinite(_) => EXIT_NUMERIC,
        FlowError::Guidance(GuidanceError::NonFinite) => EXIT_NUMERIC,
        FlowError::Config(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden: Vec<usize>,
    pub offset_scale: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::new(1, 1, 1, Palette::default().vocab());
        ModelSettings { hidden: m.hidden, offset_scale: m.offset_scale }
    }
}

/// Training hyper-parameters; the seed comes from the stage scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub p_drop_coord: f64,
    pub p_drop_text: f64,
    pub p_drop_all: f64,
    pub pixels_per_sample: Option<usize>,
    pub optimizer: OptimizerKind,
    pub grad_clip: Option<f64>,
    pub lambda_fm: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::new(ModelConfig::new(1, 1, 1, Palette::default().vocab()), 0, 3000);
        TrainSettings {
            steps: t.steps,
            lr: t.lr,
            batch: t.batch,
            p_drop_coord: t.p_drop_coord,
            p_drop_text: t.p_drop_text,
            p_drop_all: t.p_drop_all,
            pixels_per_sample: t.pixels_per_sample,
            optimizer: t.optimizer,
            grad_clip: t.grad_clip,
            lambda_fm: t.lambda_fm,
        }
    }
}

/// Sampler settings shared by every sweep point; `guidance.s_coord` is
/// replaced by each sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSettings {
    pub num_steps: usize,
    pub timestep_shift: f64,
    pub guidance: GuidanceConfig,
}

impl Default for SamplerSettings {
    fn default() -> Self {
        let s = SamplerConfig::default();
        SamplerSettings { num_steps: s.num_steps, timestep_shift: s.timestep_shift, guidance: s.guidance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Training scenes.
    pub dataset_size: usize,
    /// Held-out layouts sampled at every sweep point.
    pub eval_size: usize,
    pub layout: LayoutConfig,
    pub model: ModelSettings,
    pub train: TrainSettings,
    pub sampler: SamplerSettings,
    pub detect: DetectConfig,
    /// Coordinate guidance scales; finite, non-negative, ascending.
    pub sweep: Vec<f64>,
    /// Also evaluate the coordinate-stripped baseline.
    pub baseline: bool,
    /// Sampler worker threads (0 = all cores). Does not affect results.
    pub threads: usize,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            dataset_size: 3000,
            eval_size: 200,
            layout: LayoutConfig::default(),
            model: ModelSettings::default(),
            train: TrainSettings::default(),
            sampler: SamplerSettings::default(),
            detect: DetectConfig::default(),
            sweep: vec![0.2, 1.0],
            baseline: true,
            threads: 0,
            output_dir: None,
        }
    }
}

/// Root-derived seed of one stage (see the module docs).
pub fn stage_seed(root: u64, counter: u64) -> u64 {
    split_seed(root, counter)
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.sweep.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad(format!("sweep values must be finite and >= 0, got {:?}", self.sweep));
        }
        if self.sweep.windows(2).any(|w| w[0] > w[1]) {
            return bad(format!("sweep values must be sorted ascending, got {:?}", self.sweep));
        }
        if self.dataset_size == 0 || self.eval_size == 0 {
            return bad("dataset_size and eval_size must be positive".into());
        }
        let conf = |e: FlowError| HarnessError::Config(e.to_string());
        self.train_config().check().map_err(conf)?;
        self.sampler_config(None).check().map_err(conf)?;
        for &s in &self.sweep {
            self.sampler_config(Some(s)).check().map_err(conf)?;
        }
        if !(self.detect.tolerance > 0.0 && self.detect.tolerance.is_finite()) {
            return bad("detect.tolerance must be positive".into());
        }
        Ok(())
    }

    pub fn palette(&self) -> Palette {
        Palette::default()
    }

    pub fn model_config(&self) -> ModelConfig {
        let pal = self.palette();
        ModelConfig {
            hidden: self.model.hidden.clone(),
            offset_scale: self.model.offset_scale,
            ..ModelConfig::new(self.layout.height, self.layout.width, 3, pal.vocab())
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            lr: t.lr,
            batch: t.batch,
            p_drop_coord: t.p_drop_coord,
            p_drop_text: t.p_drop_text,
            p_drop_all: t.p_drop_all,
            pixels_per_sample: t.pixels_per_sample,
            optimizer: t.optimizer,
            grad_clip: t.grad_clip,
            lambda_fm: t.lambda_fm,
            ..TrainConfig::new(self.model_config(), stage_seed(self.seed, 2), t.steps)
        }
    }

    /// Sampler for one sweep point; `None` is the coordinate-stripped baseline.
    pub fn sampler_config(&self, s_coord: Option<f64>) -> SamplerConfig {
        let s = &self.sampler;
        let mut guidance = s.guidance;
        if let Some(v) = s_coord {
            guidance.s_coord = v;
        }
        SamplerConfig {
            num_steps: s.num_steps,
            timestep_shift: s.timestep_shift,
            guidance,
            seed: stage_seed(self.seed, 3),
            drop_coordinates: s_coord.is_none(),
        }
    }

    /// The configuration as recorded in reports and hashed for provenance:
    /// everything that can change results, so not `threads` or `output_dir`.
    pub fn identity(&self) -> Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Value::Object(m) = &mut v {
            m.remove("threads");
            m.remove("output_dir");
        }
        v
    }
}

/// Reads a JSON or TOML document (by extension; other extensions try JSON
/// first), applies `key.path=value` overrides, and deserializes it. Override
/// values are read as JSON where they parse as such and as strings otherwise.
pub fn load_config<T: serde::de::DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T, HarnessError> {
    let mut doc = match path {
        None => Value::Object(Default::default()),
        Some(p) => parse_document(p, &std::fs::read_to_string(p).map_err(HarnessError::io(p))?)?,
    };
    for o in overrides {
        apply_override(&mut doc, o)?;
    }
    serde_json::from_value(doc).map_err(|e| HarnessError::Config(e.to_string()))
}

/// [`load_config`] for an experiment, followed by the output-directory
/// environment override and validation.
pub fn load_experiment(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg: ExperimentConfig = load_config(path, overrides)?;
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
        cfg.output_dir = Some(PathBuf::from(dir));
    }
    cfg.check()?;
    Ok(cfg)
}

fn parse_document(path: &Path, text: &str) -> Result<Value, HarnessError> {
    let err = |m: String| HarnessError::Config(format!("{}: {m}", path.display()));
    let toml = |t: &str| toml::from_str::<toml::Table>(t).map(|t| serde_json::to_value(t).expect("toml converts"));
    match path.extension().and_then(|e| e.to_str()) {
        Some("toml") => toml(text).map_err(|e| err(e.to_string())),
        Some("json") => serde_json::from_str(text).map_err(|e| err(e.to_string())),
        _ => serde_json::from_str(text).or_else(|je| toml(text).map_err(|_| err(je.to_string()))),
    }
}

pub fn apply_override(doc: &mut Value, spec: &str) -> Result<(), HarnessError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| HarnessError::Config(format!("override {spec:?} is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("override {spec:?} has an empty key segment")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for (i, part) in parts.iter().enumerate() {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let Value::Object(map) = node else {
            return Err(HarnessError::Config(format!("override {spec:?}: {} is not a table", parts[..i].join("."))));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), value);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert(Value::Null);
    }
    unreachable!("override key has at least one segment")
}
