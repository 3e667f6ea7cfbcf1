use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod output;
mod settings;

/// Latent-indicator anomaly detection and robust forecasting experiments.
///
/// Every option can also be given in a flat `key = value` file passed with
/// `--config` (keys are the long flag names); flags take precedence.
#[derive(Debug, Parser)]
#[command(name = "mcem-anomaly", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic sinusoid with injected spikes as a labeled CSV.
    Synth(SynthArgs),
    /// Train a detector on the training split of a series.
    Train(TrainArgs),
    /// Score series online with trained detectors.
    Detect(DetectArgs),
    /// Compare forecasting MAE of conventional and latent-indicator training,
    /// optionally with spikes injected into the training split.
    ForecastEval(ForecastEvalArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub output_dir: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// EM iterations.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Sampled indicator paths (and training epochs) per EM iteration.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub context_length: Option<usize>,
    /// Hidden layer sizes, comma separated (e.g. `32,32`).
    #[arg(long)]
    pub hidden: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Initial probability of entering the anomalous state.
    #[arg(long)]
    pub p01: Option<f64>,
    /// Initial probability of staying in the anomalous state.
    #[arg(long)]
    pub p11: Option<f64>,
    /// Posterior threshold above which a point is treated as anomalous.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Keep the chain's initial distribution fixed (`true` by default).
    #[arg(long)]
    pub freeze_initial: Option<bool>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub train_frac: Option<f64>,
    #[arg(long)]
    pub val_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Standard deviation of the Gaussian noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Fraction of points that receive a spike.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Absolute spike size.
    #[arg(long)]
    pub magnitude: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV with `index,value[,label]` columns and a header.
    #[arg(long)]
    pub input: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Train conventionally (every point nominal) instead.
    #[arg(long)]
    pub no_lai: bool,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Series to score; repeat for several.
    #[arg(long)]
    pub input: Vec<String>,
    /// Detector file; either one for all inputs or one per input.
    #[arg(long)]
    pub detector: Vec<String>,
    /// Override the detector's flagging threshold.
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Score only the test split (with the preceding points as context).
    #[arg(long)]
    pub test_split: bool,
    #[command(flatten)]
    pub split: SplitArgs,
}

#[derive(Debug, Args)]
pub struct ForecastEvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[arg(long)]
    pub input: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub split: SplitArgs,
    /// Keep every n-th point before splitting.
    #[arg(long)]
    pub factor: Option<usize>,
    /// Spike rate injected into the training split.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Spike size; required whenever a rate is given.
    #[arg(long)]
    pub magnitude: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Detect(a) => commands::detect(a),
        Command::ForecastEval(a) => commands::forecast_eval(a),
    };
    match result.and_then(|(staged, summary)| Ok((staged.commit()?, summary))) {
        Ok((written, summary)) => {
            print!("{summary}");
            for p in written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
