use layoutkit::harness::*;
use layoutkit::pipeline::{CostWeights, QualityThresholds, ScoreNormalization};
use serde_json::Value;

fn tiny() -> ExperimentConfig {
    let mut cfg = ExperimentConfig { seed: 11, dataset_size: 16, eval_size: 6, sweep: vec![0.2, 1.0], ..Default::default() };
    cfg.layout.height = 16;
    cfg.layout.width = 16;
    cfg.model.hidden = vec![8, 8];
    cfg.train.steps = 4;
    cfg.train.batch = 4;
    cfg.sampler.num_steps = 3;
    cfg.threads = 2;
    cfg
}

fn assert_valid(schema: &str, doc: &Value) {
    let schema: Value = serde_json::from_str(schema).unwrap();
    let v = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = v.iter_errors(doc).map(|e| format!("{e} at {}", e.instance_path)).collect();
    assert!(errors.is_empty(), "{errors:#?}");
}

#[test]
fn single_point_sweep() {
    let cfg = ExperimentConfig { sweep: vec![0.2], baseline: false, ..tiny() };
    let r = run_benchmark(&cfg).unwrap();
    assert_eq!(r.points.len(), 1);
    assert!(r.baseline.is_none());
    assert!(r.complete);
    assert_eq!(r.points[0].summary.n_images, 6);
}

#[test]
fn reports_are_reproducible_and_valid() {
    let a = run_benchmark(&tiny()).unwrap();
    let b = run_benchmark(&ExperimentConfig { threads: 1, ..tiny() }).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.plot_csv(), b.plot_csv());
    assert_eq!(a.points.len(), 2);
    assert_valid(SWEEP_REPORT_SCHEMA, &serde_json::to_value(&a).unwrap());

    let other = run_benchmark(&ExperimentConfig { seed: 12, ..tiny() }).unwrap();
    assert_ne!(a.provenance.config_hash, other.provenance.config_hash);
    assert_ne!(a.training.as_ref().unwrap().params_sha256, other.training.as_ref().unwrap().params_sha256);
}

#[test]
fn zero_coordinate_scale_reproduces_the_stripped_baseline() {
    let r = run_benchmark(&ExperimentConfig { sweep: vec![0.0], ..tiny() }).unwrap();
    let base = r.baseline.as_ref().unwrap();
    assert_eq!(r.points[0].samples_sha256, base.samples_sha256);
    assert_eq!(r.points[0].summary, base.summary);
}

#[test]
fn outputs_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig { output_dir: Some(dir.path().join("run")), ..tiny() };
    let r = run_benchmark(&cfg).unwrap();
    let run = dir.path().join("run");
    let json = std::fs::read_to_string(run.join("report.json")).unwrap();
    assert_eq!(json, r.to_json());
    let csv = std::fs::read_to_string(run.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "s_coord,miou,ap,ap50,ap75,instance_sr_avg,image_sr_avg");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("0.2,"));
    assert!(lines[3].starts_with(','));
    assert!(run.join("table.csv").exists());
    assert!(layoutkit::flowmatch::ToyModel::load(&run.join("model.json")).is_ok());
}

#[test]
fn config_files_overrides_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("exp.toml");
    std::fs::write(&path, "seed = 5\nsweep = [0.2, 1.0]\n[train]\nsteps = 2\n").unwrap();
    let cfg: ExperimentConfig = load_config(Some(&path), &["sweep=[0.6]".into(), "sampler.num_steps=7".into()]).unwrap();
    assert_eq!((cfg.seed, cfg.train.steps, cfg.sampler.num_steps), (5, 2, 7));
    assert_eq!(cfg.sweep, vec![0.6]);

    let e = load_experiment(Some(&path), &["sweep=[1.0, 0.2]".into()]).unwrap_err();
    assert_eq!(e.exit_code(), EXIT_CONFIG);

    std::env::set_var(OUT_DIR_ENV, dir.path().join("env-out"));
    let cfg = load_experiment(Some(&path), &[]).unwrap();
    std::env::remove_var(OUT_DIR_ENV);
    assert_eq!(cfg.output_dir, Some(dir.path().join("env-out")));
}

fn write(dir: &std::path::Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn match_defaults(path: &std::path::Path) -> Result<MatchReport, HarnessError> {
    run_match(path, &CostWeights::default(), &QualityThresholds::default(), ScoreNormalization::None)
}

#[test]
fn match_examples() {
    let dir = tempfile::tempdir().unwrap();
    let empty = match_defaults(&write(dir.path(), "empty.json", r#"{"scenes": []}"#)).unwrap();
    assert!(empty.verdicts.is_empty());
    assert_eq!((empty.summary.n_scenes, empty.summary.accepted, empty.summary.rejected), (0, 0, 0));
    assert!(match_defaults(&write(dir.path(), "blank.json", "\n")).unwrap().verdicts.is_empty());

    let one = r#"{"scenes": [{"scene_id": "s0", "scores": [[{"s_t": 1, "s_d": 1, "s_i": 1}]]}]}"#;
    let r = match_defaults(&write(dir.path(), "one.json", one)).unwrap();
    assert_eq!(r.verdicts[0].verdict, "accepted");
    assert_eq!(r.summary.accepted, 1);
    assert_valid(MATCH_REPORT_SCHEMA, &serde_json::to_value(&r).unwrap());

    let cell = r#"{"s_t": 0.9, "s_d": 0.9, "s_i": 0.9}"#;
    let row = format!("[{cell}, {cell}]");
    let short = format!(r#"{{"scenes": [{{"scene_id": "m3n2", "scores": [{row}, {row}, {row}]}}]}}"#);
    let r = match_defaults(&write(dir.path(), "short.json", &short)).unwrap();
    assert_eq!(r.verdicts[0].verdict, "rejected");
    assert!(r.verdicts[0].assignment.is_none());
    assert!(r.verdicts[0].total_cost.is_none());
    assert_eq!(r.summary.rejected_by_reason.get("incomplete_matching"), Some(&1));
    assert_valid(MATCH_REPORT_SCHEMA, &serde_json::to_value(&r).unwrap());
}

#[test]
fn malformed_manifest_reports_position() {
    let dir = tempfile::tempdir().unwrap();
    let p = write(dir.path(), "bad.json", "{\"scenes\": [\n  {\"scene_id\": 3}\n]}");
    match match_defaults(&p) {
        Err(e @ HarnessError::MalformedManifest { line, .. }) => {
            assert_eq!(line, 2);
            assert_eq!(e.exit_code(), EXIT_DATA);
        }
        other => panic!("expected MalformedManifest, got {other:?}"),
    }
    let off = run_match(&p, &CostWeights { alpha: 1.0, beta: 1.0, gamma: 1.0 }, &QualityThresholds::default(), ScoreNormalization::None);
    assert_eq!(off.unwrap_err().exit_code(), EXIT_CONFIG);
}
