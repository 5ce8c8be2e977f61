//! `pipeplan`: end-to-end pipeline for learning and benchmarking pipe
//! rehabilitation policies.
//!
//! Subcommands: `train-dqn` (online training, also logs the near-expert
//! dataset), `collect` (random/near-expert/expert datasets), `train-cql`
//! (offline training on a stored dataset), `evaluate` (roll out models and
//! baseline strategies and emit comparison CSVs).
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 runtime or
//! numeric error.

mod config;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use pipeplan_core::baselines::BaselineKind;
use pipeplan_core::cql;
use pipeplan_core::dataset::{self, CollectSource, Dataset, SourcePolicy};
use pipeplan_core::dqn;
use pipeplan_core::env::{load_pipes, PipeSpec};
use pipeplan_core::eval::{self, BaselinePolicy, ModelPolicy, Policy};
use pipeplan_core::nn;

use config::{config_key_help, RunConfig};

#[derive(Parser)]
#[command(
    name = "pipeplan",
    about = "Learn and benchmark rehabilitation policies for deteriorating water pipes",
    version,
    after_long_help = config_key_help()
)]
struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed for all pipeline stages.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for models, logs, datasets, and reports.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,

    /// Pipe roster CSV (header `id,age,material,length`).
    #[arg(long, global = true)]
    roster: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the online agent; writes the model, training log, and the
    /// near-expert dataset accumulated during training.
    TrainDqn(TrainDqnArgs),
    /// Collect a transition dataset with a behavior policy.
    Collect(CollectArgs),
    /// Train the offline agent on a stored dataset.
    TrainCql(TrainCqlArgs),
    /// Roll out models and baseline strategies; writes metrics.csv,
    /// perpipe.csv, and plotdata.csv.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct TrainDqnArgs {
    /// Override the number of training episodes.
    #[arg(long)]
    episodes: Option<usize>,
}

#[derive(Args)]
struct CollectArgs {
    /// Behavior policy: random, near-expert, or expert.
    #[arg(long)]
    policy: String,

    /// Trained model JSON (required for the expert policy).
    #[arg(long)]
    model: Option<PathBuf>,

    /// Number of episodes to collect.
    #[arg(long, default_value_t = 1000)]
    episodes: usize,

    /// Output dataset path; defaults to `<out-dir>/<policy>.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainCqlArgs {
    /// Input dataset (JSON Lines).
    #[arg(long)]
    dataset: PathBuf,

    /// Override the number of training epochs.
    #[arg(long)]
    epochs: Option<usize>,

    /// Override the conservatism weight.
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Trained model JSON to evaluate greedily (repeatable).
    #[arg(long)]
    model: Vec<PathBuf>,

    /// Baseline strategy to evaluate (repeatable):
    /// maintain-5|maintain-10|corrective|greedy|random|none.
    #[arg(long)]
    strategy: Vec<String>,

    /// Override evaluation episodes per pipe.
    #[arg(long)]
    episodes_per_pipe: Option<usize>,
}

/// Error wrapper that carries the process exit code.
enum CliError {
    /// Bad arguments, unreadable inputs, invalid config: exit 2.
    Usage(anyhow::Error),
    /// Failures inside a pipeline run: exit 3.
    Runtime(anyhow::Error),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(e) | CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

trait Classify<T> {
    fn usage(self) -> Result<T, CliError>;
    fn runtime(self) -> Result<T, CliError>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Usage(e.into()))
    }

    fn runtime(self) -> Result<T, CliError> {
        self.map_err(|e| CliError::Runtime(e.into()))
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))
                .usage()?;
            toml::from_str::<RunConfig>(&text)
                .with_context(|| format!("parsing config {}", path.display()))
                .usage()?
        }
        None => RunConfig::default(),
    };
    cfg.resolve_seed(cli.seed);
    if let Some(roster) = &cli.roster {
        cfg.roster = roster.clone();
    }

    let roster = load_pipes(&cfg.roster)
        .with_context(|| format!("loading roster {}", cfg.roster.display()))
        .usage()?;
    fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("creating output dir {}", cli.out_dir.display()))
        .usage()?;

    match &cli.command {
        Command::TrainDqn(args) => cmd_train_dqn(&cli, cfg, &roster, args),
        Command::Collect(args) => cmd_collect(&cli, cfg, &roster, args),
        Command::TrainCql(args) => cmd_train_cql(&cli, cfg, &roster, args),
        Command::Evaluate(args) => cmd_evaluate(&cli, cfg, &roster, args),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .usage()?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Sidecar JSON with the fully resolved configuration of a run.
fn write_sidecar(path: &Path, cfg: &RunConfig) -> Result<(), CliError> {
    let mut doc = serde_json::to_value(cfg).expect("config serializes");
    // The seed is skipped inside the nested configs; the top-level field
    // is authoritative.
    doc["seed"] = serde_json::json!(cfg.seed);
    write_file(path, &serde_json::to_string_pretty(&doc).expect("json"))
}

fn cmd_train_dqn(
    cli: &Cli,
    mut cfg: RunConfig,
    roster: &[PipeSpec],
    args: &TrainDqnArgs,
) -> Result<(), CliError> {
    if let Some(episodes) = args.episodes {
        cfg.dqn.episodes = episodes;
    }
    let mut sink: Vec<dataset::TransitionRecord> = Vec::new();
    let result = dqn::train(roster, &cfg.env, &cfg.dqn, &mut sink).runtime()?;

    let model_path = cli.out_dir.join("dqn_model.json");
    nn::save_model(&result.params, &model_path).usage()?;
    println!("wrote {}", model_path.display());
    write_sidecar(&cli.out_dir.join("dqn_config.json"), &cfg)?;
    write_file(
        &cli.out_dir.join("dqn_train_log.csv"),
        &dqn::training_log_csv(&result.log),
    )?;

    let ds = Dataset {
        header: dataset::DatasetHeader {
            format_version: dataset::DATASET_FORMAT_VERSION,
            source_policy: SourcePolicy::NearExpert,
            episodes: cfg.dqn.episodes,
            steps_per_episode: cfg.dqn.steps_per_episode,
            seed: cfg.dqn.seed,
            roster_checksum: dataset::roster_checksum(roster),
        },
        records: sink,
    };
    let ds_path = cli.out_dir.join("near_expert.jsonl");
    dataset::write_dataset(&ds, &ds_path).usage()?;
    println!("wrote {}", ds_path.display());
    Ok(())
}

fn cmd_collect(
    cli: &Cli,
    cfg: RunConfig,
    roster: &[PipeSpec],
    args: &CollectArgs,
) -> Result<(), CliError> {
    let policy: SourcePolicy = args.policy.parse().map_err(anyhow::Error::msg).usage()?;
    let expert_params = match policy {
        SourcePolicy::Expert => {
            let path = args.model.as_ref().ok_or_else(|| {
                CliError::Usage(anyhow::anyhow!("--policy expert requires --model <path>"))
            })?;
            Some(nn::load_model(path).usage()?)
        }
        _ => None,
    };
    let source = match policy {
        SourcePolicy::Random => CollectSource::Random,
        SourcePolicy::Expert => CollectSource::Expert(expert_params.as_ref().unwrap()),
        SourcePolicy::NearExpert => CollectSource::NearExpert(&cfg.dqn),
    };
    let ds = dataset::collect(source, roster, args.episodes, &cfg.env, cfg.seed).runtime()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| cli.out_dir.join(format!("{policy}.jsonl")));
    dataset::write_dataset(&ds, &out).usage()?;
    println!("wrote {} ({} records)", out.display(), ds.records.len());
    Ok(())
}

fn cmd_train_cql(
    cli: &Cli,
    mut cfg: RunConfig,
    roster: &[PipeSpec],
    args: &TrainCqlArgs,
) -> Result<(), CliError> {
    if let Some(epochs) = args.epochs {
        cfg.cql.epochs = epochs;
    }
    if let Some(alpha) = args.alpha {
        cfg.cql.alpha = alpha;
    }
    let ds = dataset::read_dataset(&args.dataset)
        .with_context(|| format!("reading dataset {}", args.dataset.display()))
        .usage()?;
    let result = cql::train_offline(&ds, &cfg.cql, roster, &cfg.env).runtime()?;

    let model_path = cli.out_dir.join("cql_model.json");
    nn::save_model(&result.params, &model_path).usage()?;
    println!("wrote {}", model_path.display());
    write_sidecar(&cli.out_dir.join("cql_config.json"), &cfg)?;
    write_file(
        &cli.out_dir.join("cql_train_log.csv"),
        &cql::epoch_log_csv(&result.log),
    )?;
    Ok(())
}

fn cmd_evaluate(
    cli: &Cli,
    mut cfg: RunConfig,
    roster: &[PipeSpec],
    args: &EvaluateArgs,
) -> Result<(), CliError> {
    if let Some(episodes) = args.episodes_per_pipe {
        cfg.eval.episodes_per_pipe = episodes;
    }
    if args.model.is_empty() && args.strategy.is_empty() {
        return Err(CliError::Usage(anyhow::anyhow!(
            "nothing to evaluate: pass at least one --model or --strategy"
        )));
    }

    let mut policies: Vec<Box<dyn Policy>> = Vec::new();
    for path in &args.model {
        let params = nn::load_model(path)
            .map_err(anyhow::Error::from)
            .with_context(|| format!("loading model {}", path.display()))
            .usage()?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string());
        policies.push(Box::new(ModelPolicy::new(name, params)));
    }
    for name in &args.strategy {
        let kind: BaselineKind = name.parse().map_err(anyhow::Error::msg).usage()?;
        policies.push(Box::new(BaselinePolicy::new(kind)));
    }

    let mut reports = Vec::new();
    let mut per_pipe = Vec::new();
    for policy in &policies {
        let outcome = eval::evaluate_policy(
            policy.as_ref(),
            roster,
            cfg.eval.episodes_per_pipe,
            &cfg.env,
            cfg.seed,
        )
        .runtime()?;
        reports.push(outcome.report);
        per_pipe.extend(outcome.per_pipe);
    }

    let comparison = eval::compare(&reports);
    write_file(&cli.out_dir.join("metrics.csv"), &comparison.metrics_csv)?;
    write_file(
        &cli.out_dir.join("perpipe.csv"),
        &eval::perpipe_csv(&per_pipe),
    )?;
    write_file(&cli.out_dir.join("plotdata.csv"), &comparison.plotdata_csv)?;
    Ok(())
}
