use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use layoutkit::flowmatch::{sample_batch, ToyModel};
use layoutkit::harness::{
    self, load_experiment, ExperimentConfig, HarnessError, Stage, StageError, EXIT_CONFIG, EXIT_DATA,
};
use layoutkit::icbp::{IcbpError, LayoutJson};
use layoutkit::metrics::{summarize, EvalRecord, GtInstance};
use layoutkit::pipeline::{CostWeights, QualityThresholds, ScoreNormalization};
use layoutkit::scenes::{detect, read_archive, write_archive, LayoutSpec};
use layoutkit::LayoutPrompt;

#[derive(Parser)]
#[command(name = "layoutkit", version, about = "Coordinate-tag prompts, guided toy sampling, and layout metrics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Experiment config (JSON or TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one config value, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, Failure> {
        Ok(load_experiment(self.config.as_deref(), &self.overrides)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the toy model on synthetic scenes and save a checkpoint.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Sample scenes into an archive (PNG plus layout JSON per scene).
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        model: PathBuf,
        /// Prompts to sample; defaults to the config's held-out layouts.
        #[arg(long = "prompt")]
        prompts: Vec<String>,
        /// Coordinate guidance scale; defaults to the config's sampler value.
        #[arg(long)]
        s_coord: Option<f64>,
        /// Condition on the prompts with their coordinates removed.
        #[arg(long, conflicts_with = "s_coord")]
        strip: bool,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Detect and score an archive against its layouts.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, short)]
        archive: PathBuf,
    },
    /// Train, sweep coordinate guidance, and write the report.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Assign subjects to candidate boxes for every scene in a manifest.
    Match {
        #[arg(long, short)]
        manifest: PathBuf,
        /// Cost weights for text, detection and image similarity.
        #[arg(long, value_delimiter = ',', default_values_t = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])]
        weights: Vec<f64>,
        /// Quality thresholds for text, detection and image similarity.
        #[arg(long, value_delimiter = ',', default_values_t = [0.25, 0.30, 0.50])]
        thresholds: Vec<f64>,
        #[arg(long, value_enum, default_value_t = Normalize::None)]
        normalize: Normalize,
        /// Write the verdicts here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Parse or format coordinate-tag prompts.
    Prompt {
        #[command(subcommand)]
        action: PromptAction,
    },
}

#[derive(Subcommand)]
enum PromptAction {
    /// Prompt text (or `-` for stdin) to layout JSON.
    Parse { text: String },
    /// Layout JSON file (or `-` for stdin) to canonical prompt text.
    Format {
        layout: PathBuf,
        /// Print the prompt with its coordinate tags removed.
        #[arg(long)]
        strip: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Normalize {
    None,
    MinMax,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure { code: e.exit_code(), message: e.to_string() }
    }
}

impl From<IcbpError> for Failure {
    fn from(e: IcbpError) -> Self {
        Failure { code: EXIT_DATA, message: e.to_string() }
    }
}

fn stage_err<E: Into<StageError>>(stage: Stage) -> impl FnOnce(E) -> Failure {
    move |e| HarnessError::Stage { stage, source: e.into() }.into()
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code as u8)
        }
    }
}

fn read_input(arg: &Path) -> Result<String, Failure> {
    let mut s = String::new();
    if arg == Path::new("-") {
        std::io::stdin().read_to_string(&mut s).map(|_| s)
    } else {
        std::fs::read_to_string(arg)
    }
    .map_err(|e| Failure { code: EXIT_DATA, message: format!("{}: {e}", arg.display()) })
}

fn write_file(path: &Path, body: &str) -> Result<(), Failure> {
    std::fs::write(path, body).map_err(|e| Failure { code: EXIT_DATA, message: format!("{}: {e}", path.display()) })
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train { cfg, out } => {
            let cfg = cfg.load()?;
            let palette = cfg.palette();
            eprintln!("building {} training scenes", cfg.dataset_size);
            let data = harness::build_dataset(&cfg, &palette)?;
            eprintln!("training for {} steps", cfg.train.steps);
            let (model, summary) = harness::train_model(&cfg, &data)?;
            model.save(&out).map_err(stage_err(Stage::Report))?;
            println!("{}", to_json(&summary));
        }
        Command::Sample { cfg, model, prompts, s_coord, strip, out } => {
            let cfg = cfg.load()?;
            let palette = cfg.palette();
            let model = ToyModel::load(&model).map_err(stage_err(Stage::Sample))?;
            let layouts: Vec<LayoutSpec> = if prompts.is_empty() {
                harness::held_out_layouts(&cfg, &palette)?
            } else {
                let (h, w) = (model.config.height, model.config.width);
                prompts
                    .iter()
                    .map(|t| {
                        let p = LayoutPrompt::parse(t)?;
                        LayoutSpec::from_prompt(&p, &palette, h, w).map_err(stage_err(Stage::Dataset))
                    })
                    .collect::<Result<_, Failure>>()?
            };
            let point = if strip { None } else { Some(s_coord.unwrap_or(cfg.sampler.guidance.s_coord)) };
            let sampler = cfg.sampler_config(point);
            sampler.check().map_err(|e| Failure { code: EXIT_CONFIG, message: e.to_string() })?;
            let prompts: Vec<_> = layouts.iter().map(|l| l.to_prompt(&palette)).collect();
            let images = sample_batch(&model, &prompts, &sampler, cfg.threads).map_err(stage_err(Stage::Sample))?;
            let scenes: Vec<_> = layouts
                .into_iter()
                .zip(images)
                .enumerate()
                .map(|(i, (l, img))| (format!("{i:05}"), l, img))
                .collect();
            let index = write_archive(&out, &scenes, &palette).map_err(stage_err(Stage::Report))?;
            eprintln!("wrote {} scenes to {}", index.scenes.len(), out.display());
        }
        Command::Eval { cfg, archive } => {
            let cfg = cfg.load()?;
            let palette = cfg.palette();
            let scenes = read_archive(&archive, &palette).map_err(stage_err(Stage::Dataset))?;
            let records: Vec<EvalRecord> = scenes
                .iter()
                .map(|(_, spec, img)| EvalRecord {
                    gt: spec.instances.iter().map(|i| GtInstance { class_id: i.class_id, bbox: i.bbox }).collect(),
                    detections: detect(img, &palette, &cfg.detect),
                })
                .collect();
            println!("{}", to_json(&summarize(&records)));
        }
        Command::Sweep { cfg } => {
            let cfg = cfg.load()?;
            let report = harness::run_benchmark_with(&cfg, |m| eprintln!("{m}"))?;
            match &cfg.output_dir {
                Some(dir) => eprintln!("report written to {}", dir.join("report.json").display()),
                None => print!("{}", report.to_json()),
            }
        }
        Command::Match { manifest, weights, thresholds, normalize, out } => {
            if weights.len() != 3 || thresholds.len() != 3 {
                return Err(Failure { code: EXIT_CONFIG, message: "--weights and --thresholds take three comma-separated values".into() });
            }
            let weights = CostWeights { alpha: weights[0], beta: weights[1], gamma: weights[2] };
            let thresholds = QualityThresholds { t_min: thresholds[0], d_min: thresholds[1], i_min: thresholds[2] };
            let normalization = match normalize {
                Normalize::None => ScoreNormalization::None,
                Normalize::MinMax => ScoreNormalization::MinMax,
            };
            let report = harness::run_match(&manifest, &weights, &thresholds, normalization)?;
            match out {
                Some(path) => write_file(&path, &report.to_json())?,
                None => print!("{}", report.to_json()),
            }
        }
        Command::Prompt { action } => match action {
            PromptAction::Parse { text } => {
                let text = if text == "-" { read_input(Path::new("-"))? } else { text };
                let p = LayoutPrompt::parse(text.trim_end_matches('\n'))?;
                if let Err(v) = p.validate() {
                    eprintln!("warning: {v:?}");
                }
                println!("{}", to_json(&p.to_layout()));
            }
            PromptAction::Format { layout, strip } => {
                let text = read_input(&layout)?;
                let layout: LayoutJson = serde_json::from_str(&text)
                    .map_err(|e| Failure { code: EXIT_DATA, message: format!("{}: {e}", layout.display()) })?;
                let p = LayoutPrompt::from_layout(&layout)?;
                println!("{}", if strip { p.strip_coordinates() } else { p.serialize() });
            }
        },
    }
    Ok(())
}
