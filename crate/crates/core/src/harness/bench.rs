use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{stage_seed, ExperimentConfig, HarnessError, Stage, StageError};
use crate::flowmatch::{sample_batch, train, FlowError, ToyModel, ToyScene, TrainExample};
use crate::metrics::{summarize, EvalRecord, GtInstance, ScoreSummary, CSV_HEADER};
use crate::scenes::{detect, render, sample_layout, LayoutSpec, Palette};

pub const REPORT_FORMAT: &str = "layoutkit-sweep";
pub const PLOT_CSV_HEADER: &str = "s_coord,miou,ap,ap50,ap75,instance_sr_avg,image_sr_avg";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the canonical JSON of the recorded config.
    pub config_hash: String,
    pub seed: u64,
    pub crate_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub steps: usize,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
    /// SHA-256 of the trained parameters (little-endian f64s).
    pub params_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    /// `None` for the coordinate-stripped baseline.
    pub s_coord: Option<f64>,
    pub summary: ScoreSummary,
    /// SHA-256 of every generated image, in held-out order.
    pub samples_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub format: String,
    pub version: u32,
    pub provenance: Provenance,
    pub config: Value,
    pub training: Option<TrainingSummary>,
    pub baseline: Option<SweepPoint>,
    pub points: Vec<SweepPoint>,
    /// False while the sweep is still running or after it aborted.
    pub complete: bool,
}

impl SweepReport {
    pub fn new(config: &ExperimentConfig) -> Self {
        let identity = config.identity();
        let canonical = serde_json::to_vec(&identity).expect("config serializes");
        SweepReport {
            format: REPORT_FORMAT.into(),
            version: 1,
            provenance: Provenance {
                config_hash: hex::encode(Sha256::digest(&canonical)),
                seed: config.seed,
                crate_version: env!("CARGO_PKG_VERSION").into(),
            },
            config: identity,
            training: None,
            baseline: None,
            points: Vec::new(),
            complete: false,
        }
    }

    pub fn point(&self, s_coord: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.s_coord == Some(s_coord))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Plot data: one row per sweep point, then the baseline with an empty `s_coord`.
    pub fn plot_csv(&self) -> String {
        let mut out = format!("{PLOT_CSV_HEADER}\n");
        for p in self.points.iter().chain(&self.baseline) {
            let s = &p.summary;
            let avg = |m: &crate::metrics::LevelRatios| m.get("avg").map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.s_coord.map(|v| v.to_string()).unwrap_or_default(),
                s.miou,
                s.ap,
                s.ap50,
                s.ap75,
                avg(&s.instance_sr),
                avg(&s.image_sr)
            ));
        }
        out
    }

    /// Per-level table in the usual results layout, labelled by run.
    pub fn table_csv(&self) -> String {
        let mut out = format!("run,{CSV_HEADER}\n");
        for p in self.baseline.iter().chain(&self.points) {
            let label = p.s_coord.map_or("stripped".to_string(), |v| format!("s_coord={v}"));
            out.push_str(&format!("{label},{}\n", p.summary.csv_row()));
        }
        out
    }
}

pub fn build_dataset(cfg: &ExperimentConfig, palette: &Palette) -> Result<Vec<TrainExample>, HarnessError> {
    let root = stage_seed(cfg.seed, 0);
    (0..cfg.dataset_size as u64)
        .map(|i| {
            let spec = sample_layout(crate::seed::split_seed(root, i), &cfg.layout, palette)?;
            Ok(TrainExample { prompt: spec.to_prompt(palette), scene: render(&spec, palette) })
        })
        .collect::<Result<_, crate::scenes::SceneError>>()
        .map_err(|e| HarnessError::stage(Stage::Dataset)(e.into()))
}

pub fn held_out_layouts(cfg: &ExperimentConfig, palette: &Palette) -> Result<Vec<LayoutSpec>, HarnessError> {
    let root = stage_seed(cfg.seed, 1);
    (0..cfg.eval_size as u64)
        .map(|i| sample_layout(crate::seed::split_seed(root, i), &cfg.layout, palette))
        .collect::<Result<_, _>>()
        .map_err(|e| HarnessError::stage(Stage::Dataset)(e.into()))
}

pub fn train_model(cfg: &ExperimentConfig, data: &[TrainExample]) -> Result<(ToyModel, TrainingSummary), HarnessError> {
    let out = train(&cfg.train_config(), data).map_err(|e| HarnessError::stage(Stage::Train)(e.into()))?;
    let h = &out.loss_history;
    let window = (h.len() / 10).clamp(1, 50).min(h.len());
    let mean = |s: &[f64]| (!s.is_empty()).then(|| s.iter().sum::<f64>() / s.len() as f64);
    let mut hasher = Sha256::new();
    for p in out.model.net.flat_params() {
        hasher.update(p.to_le_bytes());
    }
    let summary = TrainingSummary {
        steps: h.len(),
        initial_loss: mean(&h[..window]),
        final_loss: mean(&h[h.len() - window..]),
        params_sha256: hex::encode(hasher.finalize()),
    };
    Ok((out.model, summary))
}

pub fn samples_digest(images: &[ToyScene]) -> String {
    let mut hasher = Sha256::new();
    for img in images {
        for v in &img.data {
            hasher.update(v.to_le_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

/// Samples every held-out layout at one guidance setting, detects, and scores.
/// `None` runs the coordinate-stripped baseline.
pub fn evaluate_point(
    cfg: &ExperimentConfig,
    model: &ToyModel,
    palette: &Palette,
    layouts: &[LayoutSpec],
    s_coord: Option<f64>,
) -> Result<(SweepPoint, Vec<ToyScene>), HarnessError> {
    let prompts: Vec<_> = layouts.iter().map(|l| l.to_prompt(palette)).collect();
    let images = sample_batch(model, &prompts, &cfg.sampler_config(s_coord), cfg.threads)
        .map_err(|e: FlowError| HarnessError::stage(Stage::Sample)(e.into()))?;
    let records: Vec<EvalRecord> = images
        .iter()
        .zip(layouts)
        .map(|(img, spec)| EvalRecord {
            gt: spec.instances.iter().map(|i| GtInstance { class_id: i.class_id, bbox: i.bbox }).collect(),
            detections: detect(img, palette, &cfg.detect),
        })
        .collect();
    let point = SweepPoint { s_coord, summary: summarize(&records), samples_sha256: samples_digest(&images) };
    Ok((point, images))
}

/// Writes `report.json`, `sweep.csv` and `table.csv` into `dir`.
pub fn write_outputs(dir: &Path, report: &SweepReport) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
    for (name, body) in [
        ("report.json", report.to_json()),
        ("sweep.csv", report.plot_csv()),
        ("table.csv", report.table_csv()),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(HarnessError::io(&path))?;
    }
    Ok(())
}

pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<SweepReport, HarnessError> {
    run_benchmark_with(cfg, |_| {})
}

/// [`run_benchmark`] with a progress callback. When `output_dir` is set the
/// report is rewritten after every stage, so an aborted run leaves the
/// finished points on disk marked incomplete.
pub fn run_benchmark_with(cfg: &ExperimentConfig, mut progress: impl FnMut(&str)) -> Result<SweepReport, HarnessError> {
    cfg.check()?;
    let palette = cfg.palette();
    let mut report = SweepReport::new(cfg);
    let flush = |r: &SweepReport| match &cfg.output_dir {
        Some(dir) => write_outputs(dir, r),
        None => Ok(()),
    };

    progress(&format!("building {} training scenes", cfg.dataset_size));
    let data = build_dataset(cfg, &palette)?;
    let layouts = held_out_layouts(cfg, &palette)?;
    progress(&format!("training for {} steps", cfg.train.steps));
    let (model, training) = train_model(cfg, &data)?;
    drop(data);
    report.training = Some(training);
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir).map_err(HarnessError::io(dir))?;
        let path = dir.join("model.json");
        model.save(&path).map_err(|e| HarnessError::stage(Stage::Report)(StageError::Flow(e)))?;
    }
    flush(&report)?;

    let mut runs: Vec<Option<f64>> = Vec::new();
    if cfg.baseline {
        runs.push(None);
    }
    runs.extend(cfg.sweep.iter().copied().map(Some));
    for s in runs {
        progress(&match s {
            Some(v) => format!("sampling {} layouts at s_coord={v}", layouts.len()),
            None => format!("sampling {} layouts without coordinates", layouts.len()),
        });
        let (point, _) = evaluate_point(cfg, &model, &palette, &layouts, s)?;
        progress(&format!("  miou {:.4}  ap50 {:.4}", point.summary.miou, point.summary.ap50));
        match s {
            None => report.baseline = Some(point),
            Some(_) => report.points.push(point),
        }
        flush(&report)?;
    }
    report.complete = true;
    flush(&report)?;
    Ok(report)
}
