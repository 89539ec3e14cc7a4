mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Format;
use config::{merge, read_config_file, GenConfig, RunConfig, GEN_KEYS, TRAIN_KEYS};
use error::{CliError, EXIT_USAGE};

/// Multi-task conversion-funnel models with adaptive information transfer.
#[derive(Parser)]
#[command(name = "aitm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Train a model and save it as a JSON artifact.
    Train(TrainArgs),
    /// Report AUC, logloss and violation rate of a model on a data file.
    Evaluate(EvaluateArgs),
    /// Write per-row predictions y_hat1..y_hatT.
    Predict(DataArgs),
    /// Write the per-row attention weights of every transfer step.
    InspectWeights(DataArgs),
    /// Generate a synthetic funnel and write train/val/test files.
    GenData(GenArgs),
    /// Rank banner candidates by weight times predicted conversion.
    Rank(RankArgs),
}

/// Flags mirror the config-file keys, with dashes instead of underscores.
/// Values are validated together after merging.
#[derive(Args)]
struct TrainArgs {
    /// `key = value` file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<String>,
    #[arg(long)]
    val: Option<String>,
    /// Model artifact to write.
    #[arg(long)]
    out: Option<String>,
    /// Run log that metric rows are appended to.
    #[arg(long)]
    log: Option<String>,
    /// aitm, single_task or prob_transfer.
    #[arg(long)]
    variant: Option<String>,
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long)]
    embedding_dim: Option<String>,
    /// Comma-separated layer widths.
    #[arg(long)]
    tower_dims: Option<String>,
    /// Comma-separated dropout rate per tower layer.
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    ait_dim: Option<String>,
    /// One attention module shared by every task pair.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    share_ait: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    l2: Option<String>,
    #[arg(long)]
    alpha: Option<String>,
    /// Target share of final-task positives in the training data, or `none`.
    #[arg(long)]
    lambda_target: Option<String>,
    /// Feature column to downsample within (one group per token).
    #[arg(long)]
    downsample_group: Option<String>,
    #[arg(long)]
    min_frequency: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    seed: Option<String>,
}

impl TrainArgs {
    fn pairs(self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("train", self.train),
            ("val", self.val),
            ("out", self.out),
            ("log", self.log),
            ("variant", self.variant),
            ("tasks", self.tasks),
            ("embedding_dim", self.embedding_dim),
            ("tower_dims", self.tower_dims),
            ("dropout", self.dropout),
            ("ait_dim", self.ait_dim),
            ("share_ait", self.share_ait),
            ("lr", self.lr),
            ("batch_size", self.batch_size),
            ("l2", self.l2),
            ("alpha", self.alpha),
            ("lambda_target", self.lambda_target),
            ("downsample_group", self.downsample_group),
            ("min_frequency", self.min_frequency),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("seed", self.seed),
        ]
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Run log that metric rows are appended to.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    tasks: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    /// Comma-separated conditional pass rate of each step.
    #[arg(long)]
    base_rates: Option<String>,
    /// Comma-separated number of tokens of each feature field.
    #[arg(long)]
    cardinalities: Option<String>,
    #[arg(long)]
    perturbation: Option<String>,
    #[arg(long)]
    step_correlation: Option<String>,
    #[arg(long)]
    zipf_exponent: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Train, validation and test fractions.
    #[arg(long)]
    split: Option<String>,
    /// Downsample training negatives to this positive share, or `none`.
    #[arg(long)]
    downsample: Option<String>,
}

impl GenArgs {
    fn pairs(self) -> Vec<(&'static str, Option<String>)> {
        vec![
            ("out_dir", self.out_dir),
            ("tasks", self.tasks),
            ("samples", self.samples),
            ("base_rates", self.base_rates),
            ("cardinalities", self.cardinalities),
            ("perturbation", self.perturbation),
            ("step_correlation", self.step_correlation),
            ("zipf_exponent", self.zipf_exponent),
            ("seed", self.seed),
            ("split", self.split),
            ("downsample", self.downsample),
        ]
    }
}

#[derive(Args)]
struct RankArgs {
    /// TSV with `business`, `maturity`, optional `objective` and `request`,
    /// `weight` (or three value factors) and `y_hat1..y_hatT`.
    #[arg(long)]
    candidates: PathBuf,
    /// Comma-separated task names in model order.
    #[arg(long, value_delimiter = ',')]
    task_names: Option<Vec<String>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn merged(
    keys: &[(&str, Option<&str>)],
    file: Option<PathBuf>,
    flags: Vec<(&'static str, Option<String>)>,
) -> (std::collections::BTreeMap<String, String>, Vec<String>) {
    let mut errors = Vec::new();
    let pairs = match file {
        Some(p) => read_config_file(&p, &mut errors),
        None => Vec::new(),
    };
    let map = merge(keys, pairs, flags, &mut errors);
    (map, errors)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let file = args.config.clone();
            let (map, errors) = merged(TRAIN_KEYS, file, args.pairs());
            commands::cmd_train(RunConfig::from_map(map, errors)?)
        }
        Command::Evaluate(a) => commands::cmd_evaluate(&a.model, &a.data, a.log.as_deref(), a.format),
        Command::Predict(a) => commands::cmd_predict(&a.model, &a.data, a.out.as_deref()),
        Command::InspectWeights(a) => commands::cmd_inspect_weights(&a.model, &a.data, a.out.as_deref()),
        Command::GenData(args) => {
            let file = args.config.clone();
            let (map, errors) = merged(GEN_KEYS, file, args.pairs());
            commands::cmd_gen_data(GenConfig::from_map(&map, errors)?)
        }
        Command::Rank(a) => commands::cmd_rank(&a.candidates, a.task_names, a.out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_USAGE as u8)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
