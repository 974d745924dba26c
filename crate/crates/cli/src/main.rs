//! `tripcast`: generate or ingest trip logs, train and evaluate the
//! next-trip models, search hyperparameters and explain predictions.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tripcast::explain::{Level, Output};
use tripcast::nn::Variant;
use tripcast::train::{LossKind, OptimizerKind};

use commands::{ExplainRequest, Regime, SplitName};
use config::{Overrides, RunConfig};
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "tripcast", version, about = "Next-trip forecasting for vehicle fleets")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [default: $TRIPCAST_OUT_DIR or "."].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic fleet's trips as CSV.
    GenData {
        #[arg(long)]
        vehicles: Option<usize>,
        #[arg(long)]
        days: Option<u32>,
        /// Output file [default: <out-dir>/trips.csv].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a trips CSV and report merge/filter counts.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Write the merged and filtered trips here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a fixed train/validation/test split.
    Train(TrainArgs),
    /// Train over resampled rounds, carrying weights forward.
    CrossVal {
        #[command(flatten)]
        train: TrainArgs,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Rank hyperparameter combinations by validation error.
    GridSearch {
        #[command(flatten)]
        train: TrainArgs,
        /// Number of grid points to try.
        #[arg(long)]
        budget: Option<usize>,
    },
    /// Prediction error of a checkpoint on one split of a trips CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
    },
    /// Forecast the trip after the last one in a history CSV.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        history: PathBuf,
        /// Vehicle to forecast when the history holds several.
        #[arg(long)]
        vehicle: Option<String>,
    },
    /// Shapley attributions for one test sample.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `event` (per trip) or `feature` (per feature group).
        #[arg(long, default_value = "event")]
        level: Level,
        /// `delta_t`, `distance` or `both`.
        #[arg(long, default_value = "both")]
        output: String,
        /// Index into the test split.
        #[arg(long, default_value_t = 0)]
        trip_index: usize,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Trips CSV.
    #[arg(long)]
    data: PathBuf,
    /// Model variant: pm1, pm2, pm3 or pm4.
    #[arg(long)]
    variant: Option<Variant>,
    /// History window in days.
    #[arg(long)]
    window: Option<u32>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    loss: Option<LossKind>,
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    patience: Option<usize>,
}

impl TrainArgs {
    fn apply(&self, o: &mut Overrides) {
        o.variant = self.variant;
        o.window_days = self.window;
        o.epochs = self.epochs;
        o.learning_rate = self.lr;
        o.batch_size = self.batch_size;
        o.loss = self.loss;
        o.optimizer = self.optimizer;
        o.patience = self.patience;
    }
}

fn parse_outputs(text: &str) -> Result<Vec<Output>, CliError> {
    if text.eq_ignore_ascii_case("both") {
        return Ok(Output::BOTH.to_vec());
    }
    text.parse::<Output>()
        .map(|o| vec![o])
        .map_err(|e| CliError::Usage(format!("--output: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut overrides = Overrides {
        seed: cli.seed,
        out_dir: cli.out_dir.clone(),
        ..Overrides::default()
    };
    match &cli.command {
        Command::GenData { vehicles, days, .. } => {
            overrides.vehicles = *vehicles;
            overrides.days = *days;
        }
        Command::Train(t) => t.apply(&mut overrides),
        Command::CrossVal { train, rounds } => {
            train.apply(&mut overrides);
            overrides.rounds = *rounds;
        }
        Command::GridSearch { train, budget } => {
            train.apply(&mut overrides);
            overrides.budget = *budget;
        }
        _ => {}
    }
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::GenData { out, .. } => commands::gen_data(&cfg, out),
        Command::Ingest { input, out } => commands::ingest(&input, out),
        Command::Train(t) => commands::train(cfg, &t.data, Regime::FixedSplit),
        Command::CrossVal { train, .. } => commands::train(cfg, &train.data, Regime::CrossVal),
        Command::GridSearch { train, .. } => commands::grid(cfg, &train.data),
        Command::Eval {
            checkpoint,
            data,
            split,
        } => commands::eval(&cfg, &checkpoint, &data, split),
        Command::Predict {
            checkpoint,
            history,
            vehicle,
        } => commands::predict(&checkpoint, &history, vehicle.as_deref()),
        Command::Explain {
            checkpoint,
            data,
            level,
            output,
            trip_index,
        } => commands::explain(
            &cfg,
            ExplainRequest {
                checkpoint: &checkpoint,
                data: &data,
                level,
                outputs: parse_outputs(&output)?,
                trip_index,
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let default_level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(default_level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
