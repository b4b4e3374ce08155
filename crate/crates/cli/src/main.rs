//! `gazegest`: synthesize sessions, evaluate and ablate classifiers,
//! benchmark latency and check gradients.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 usage or config error.

mod artifact;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::commands::EvalExtras;
use crate::config::RunConfig;

/// Bad flags or config values. Anything else that goes wrong is a runtime
/// error.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageError(pub String);

#[derive(Parser)]
#[command(name = "gazegest", version, about = "Gaze-gesture recognition toolkit")]
struct Cli {
    /// Print the machine-readable report on stdout instead of the text table.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a session log and its ground-truth manifest.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Train and evaluate one model (LOSO for gestures, stratified k-fold for user ID).
    Eval {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// User ID on the full set and on each gesture alone.
        #[arg(long)]
        per_gesture: bool,
        /// Train on the guided stages, test on recall.
        #[arg(long, conflicts_with = "per_gesture")]
        cross_stage: bool,
    },
    /// Evaluate one model on every modality, per held-out subject.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Per-window inference latency. Always single-threaded.
    Bench {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Benchmark all three models.
        #[arg(long)]
        all: bool,
        /// Classes for user ID come from the subject count.
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        /// Windows per forward pass.
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Finite-difference gradient check of the default model graphs.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        model: ModelArgs,
        /// Check all three models.
        #[arg(long)]
        all: bool,
    },
}

#[derive(Args)]
struct Common {
    /// JSON file with any subset of the run configuration; flags win over it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory [default: $GAZEGEST_OUT, else ./gazegest-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for synthesis, training and benchmark inputs.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for fold-level parallelism.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct PlanArgs {
    /// Log file to ingest instead of a synthetic session.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic subjects.
    #[arg(long)]
    subjects: Option<usize>,
    /// Repetitions per gesture and stage.
    #[arg(long)]
    reps: Option<u32>,
    /// Synthesize head-dominant subjects only.
    #[arg(long)]
    head_dominant: bool,
}

#[derive(Args)]
struct ModelArgs {
    /// tinyhar, deepconvlstm or sahar.
    #[arg(long)]
    model: Option<String>,
    /// gesture or userid.
    #[arg(long)]
    task: Option<String>,
    /// eye_head, eyes, left_eye, right_eye or head.
    #[arg(long)]
    modality: Option<String>,
    /// Window source: resampled (fixed-length trials) or raw (timestamped frames).
    #[arg(long)]
    window_domain: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    /// Maximum training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// Epochs without validation improvement before stopping.
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Folds for stratified user ID.
    #[arg(long)]
    folds: Option<usize>,
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

impl Common {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(seed) = self.seed {
            cfg.seed = seed;
            cfg.train.seed = seed;
            cfg.bench.seed = seed;
        }
        set(&mut cfg.jobs, self.jobs);
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
    }
}

impl PlanArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        set(&mut cfg.plan.subjects, self.subjects);
        set(&mut cfg.plan.reps, self.reps);
        cfg.plan.head_dominant |= self.head_dominant;
    }
}

impl ModelArgs {
    fn apply(&self, cfg: &mut RunConfig) -> Result<(), UsageError> {
        set(&mut cfg.model, self.model.clone());
        set(&mut cfg.task, self.task.clone());
        set(&mut cfg.modality, self.modality.clone());
        if let Some(d) = &self.window_domain {
            cfg.window.domain = d.parse().map_err(UsageError)?;
        }
        Ok(())
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        set(&mut cfg.train.max_epochs, self.epochs);
        set(&mut cfg.train.patience, self.patience);
        set(&mut cfg.train.batch, self.batch_size);
        set(&mut cfg.train.lr, self.lr);
        set(&mut cfg.folds, self.folds);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let json = cli.json;
    match cli.command {
        Command::Simulate { common, plan } => {
            let mut cfg = config::load("simulate", common.config.as_deref())?;
            common.apply(&mut cfg);
            plan.apply(&mut cfg);
            commands::simulate(&cfg, json)
        }
        Command::Eval { common, plan, model, train, per_gesture, cross_stage } => {
            let mut cfg = config::load("eval", common.config.as_deref())?;
            common.apply(&mut cfg);
            plan.apply(&mut cfg);
            model.apply(&mut cfg)?;
            train.apply(&mut cfg);
            commands::eval(&cfg, &EvalExtras { per_gesture, cross_stage }, json)
        }
        Command::Ablate { common, plan, model, train } => {
            let mut cfg = config::load("ablate", common.config.as_deref())?;
            common.apply(&mut cfg);
            plan.apply(&mut cfg);
            model.apply(&mut cfg)?;
            train.apply(&mut cfg);
            commands::ablate(&cfg, json)
        }
        Command::Bench { common, model, all, subjects, iterations, warmup, batch } => {
            let mut cfg = config::load("bench", common.config.as_deref())?;
            common.apply(&mut cfg);
            model.apply(&mut cfg)?;
            set(&mut cfg.plan.subjects, subjects);
            set(&mut cfg.bench.iterations, iterations);
            set(&mut cfg.bench.warmup, warmup);
            set(&mut cfg.bench.batch, batch);
            if cfg.jobs != 1 {
                eprintln!("note: bench runs single-threaded; ignoring jobs = {}", cfg.jobs);
                cfg.jobs = 1;
            }
            commands::bench(&cfg, all, json)
        }
        Command::Gradcheck { common, model, all } => {
            let mut cfg = config::load("gradcheck", common.config.as_deref())?;
            common.apply(&mut cfg);
            model.apply(&mut cfg)?;
            commands::gradcheck(&cfg, all, json)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
