//! `kloc`: simulate scenes, train predictors, evaluate, ablate and benchmark.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use settings::Settings;

#[derive(Parser, Debug)]
#[command(
    name = "kloc",
    version,
    about = "Camera localization by differentiable weighted rigid alignment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a scene, a trajectory and rendered observations.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Directory for scene.kloc, trajectory.kloc and observations.kloc.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint and per-epoch history.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Checkpoint to write.
        #[arg(long)]
        model: PathBuf,
        /// Continue from this checkpoint instead of a fresh model.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// History report; stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Localize every frame with one strategy (or all of them) and report errors.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: Data,
        /// Checkpoint to evaluate.
        #[arg(long, required_unless_present = "ground_truth")]
        model: Option<PathBuf>,
        /// Use the rendered ground-truth maps instead of a model.
        #[arg(long)]
        ground_truth: bool,
        /// Include per-frame timings in the report.
        #[arg(long)]
        timing: bool,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train the loss, resolution and output variants and report one row each.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Time prediction and pose computation at the three standard resolutions.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// An mlp-mode checkpoint.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// `key = value` settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Grid size as HEIGHTxWIDTH, e.g. 60x80.
    #[arg(long)]
    resolution: Option<String>,
    /// none, mask, rigid-ransac, pnp-ransac or weighted.
    #[arg(long)]
    strategy: Option<String>,
    /// Any setting as KEY=VALUE; repeatable, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug, Clone)]
struct Data {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    trajectory: PathBuf,
    /// Rendered observations; rendered from the scene when omitted.
    #[arg(long)]
    observations: Option<PathBuf>,
}

impl Common {
    fn settings(&self) -> anyhow::Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            let text = commands::read(path)?;
            s.apply_file(&text)?;
        }
        if let Some(seed) = self.seed {
            s.apply("seed", &seed.to_string())?;
        }
        if let Some(r) = &self.resolution {
            s.apply("resolution", r)?;
        }
        if let Some(st) = &self.strategy {
            s.apply("strategy", st)?;
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                kloc_core::Error::Config(format!("--set expects KEY=VALUE, got `{kv}`"))
            })?;
            s.apply(k.trim(), v.trim())?;
        }
        s.validate()?;
        Ok(s)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Simulate { common, out } => commands::simulate(&common.settings()?, &out),
        Command::Train {
            common,
            data,
            model,
            resume,
            report,
        } => commands::train(
            &common.settings()?,
            &data.into(),
            &model,
            resume.as_deref(),
            report.as_deref(),
        ),
        Command::Evaluate {
            common,
            data,
            model,
            ground_truth,
            timing,
            report,
        } => {
            let source = match model {
                Some(path) if !ground_truth => commands::Predictor::Model(path),
                _ => commands::Predictor::GroundTruth,
            };
            commands::evaluate(
                &common.settings()?,
                &data.into(),
                &source,
                timing,
                report.as_deref(),
            )
        }
        Command::Ablate {
            common,
            scene,
            trajectory,
            report,
        } => commands::ablate(&common.settings()?, &scene, &trajectory, report.as_deref()),
        Command::Benchmark {
            common,
            model,
            scene,
            report,
        } => commands::benchmark(&common.settings()?, &model, &scene, report.as_deref()),
    }
}

impl From<Data> for commands::DataPaths {
    fn from(d: Data) -> Self {
        Self {
            scene: d.scene,
            trajectory: d.trajectory,
            observations: d.observations,
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                commands::EXIT_USAGE
            } else {
                0
            });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
