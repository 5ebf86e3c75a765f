use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use suenet::models::{ModelConfig, ModelKind};
use suenet::pipeline::{self, read_json};
use suenet::scenario::{OodTarget, SamplingRanges};
use suenet::sue::SolverConfig;
use suenet::train::TrainConfig;
use suenet::{Error, Result};

/// Learned approximations of stochastic user equilibrium traffic flows.
#[derive(Parser)]
#[command(name = "suenet", version)]
struct Cli {
    /// Worker threads for equilibrium solves and evaluation [default: all cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample in-distribution scenarios by Latin hypercube and solve them
    GenId(GenIdArgs),
    /// Perturb base scenarios past the sampling range, one file per level
    GenOod(GenOodArgs),
    /// Build feature tensors, the train/val/test split and the normalizer
    Prepare(PrepareArgs),
    /// Train one model on prepared tensors
    Train(TrainArgs),
    /// Score checkpoints and the mean baseline on the test split
    Eval(EvalArgs),
    /// Score checkpoints on every OOD level
    OodSweep(OodSweepArgs),
    /// Run every stage with one config
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct NetworkArg {
    /// Network file [default: bundled Sioux Falls]
    #[arg(long)]
    network: Option<PathBuf>,
}

#[derive(Args)]
struct GenIdArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file with demand/speed/capacity ranges
    #[arg(long)]
    ranges: Option<PathBuf>,
    /// JSON file with BPR, logit and MSA settings
    #[arg(long)]
    solver_config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenOodArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[arg(long)]
    base_dataset: PathBuf,
    #[arg(long)]
    target: OodTarget,
    /// Percent levels: `10..90` (step 10) or a list such as `10,50,90`
    #[arg(long, default_value = "10..90")]
    levels: String,
    #[arg(long, default_value_t = 50)]
    per_level: usize,
    /// Largest excursion past the range, as a fraction of its upper bound (<= 0.25)
    #[arg(long, default_value_t = 0.25)]
    magnitude: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ranges: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PrepareArgs {
    #[command(flatten)]
    network: NetworkArg,
    #[arg(long)]
    dataset: PathBuf,
    /// Train, validation and test shares
    #[arg(long, default_value = "0.6,0.2,0.2")]
    split: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory written by `prepare`
    #[arg(long)]
    tensors: PathBuf,
    #[arg(long)]
    model: ModelKind,
    /// `default` or a JSON file with optional `model` and `train` sections
    #[arg(long, default_value = "default")]
    config: String,
    /// Overrides the config's epoch count
    #[arg(long)]
    epochs: Option<usize>,
    /// Overrides the config's seed
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Training output directories or their checkpoint.bin files
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    #[arg(long)]
    tensors: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OodSweepArgs {
    #[arg(long, num_args = 1.., value_delimiter = ',', required = true)]
    checkpoints: Vec<PathBuf>,
    /// Directory written by `prepare`; supplies the normalizer and level 0
    #[arg(long)]
    tensors: PathBuf,
    /// Directory holding ood_<target>_<level>.jsonl files (subdirectories included)
    #[arg(long)]
    ood_dir: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    /// JSON pipeline config; omitted fields take the full-scale defaults
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TrainFile {
    #[serde(default)]
    model: Option<serde_json::Value>,
    #[serde(default)]
    train: Option<TrainConfig>,
}

fn parse_levels(s: &str) -> Result<Vec<u32>> {
    let bad = || Error::Validation(format!("cannot parse levels {s:?}; use `10..90` or `10,20,30`"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: u32 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u32 = hi.trim().parse().map_err(|_| bad())?;
        if lo == 0 || lo > hi || !lo.is_multiple_of(10) || !hi.is_multiple_of(10) {
            return Err(bad());
        }
        return Ok((lo..=hi).step_by(10).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn parse_split(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Validation(format!("cannot parse split {s:?}")))?;
    parts
        .try_into()
        .map_err(|_| Error::Validation(format!("split {s:?} needs three shares")))
}

fn ranges_from(path: Option<&Path>) -> Result<SamplingRanges> {
    path.map_or_else(|| Ok(SamplingRanges::default()), read_json)
}

fn model_config(kind: ModelKind, section: Option<serde_json::Value>) -> Result<ModelConfig> {
    let mut value = match section {
        Some(serde_json::Value::Object(map)) => serde_json::Value::Object(map),
        Some(other) => return Err(Error::Validation(format!("model section must be an object, got {other}"))),
        None => serde_json::json!({}),
    };
    if kind == ModelKind::Mean {
        return Err(Error::Validation("the mean baseline has nothing to train".into()));
    }
    value["kind"] = serde_json::Value::String(kind.name().to_string());
    serde_json::from_value(value).map_err(|e| Error::Validation(format!("model config: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenId(a) => {
            let solver = a
                .solver_config
                .as_deref()
                .map_or_else(|| Ok(SolverConfig::default()), read_json)?;
            let m = pipeline::gen_id(
                &pipeline::GenIdOptions {
                    network: a.network.network,
                    n: a.n,
                    seed: a.seed,
                    ranges: ranges_from(a.ranges.as_deref())?,
                    solver,
                },
                &a.out,
            )?;
            println!("wrote {} ({})", a.out.join(pipeline::DATASET_FILE).display(), m.details["scenarios"]);
        }
        Command::GenOod(a) => {
            let levels = parse_levels(&a.levels)?;
            pipeline::gen_ood(
                &pipeline::GenOodOptions {
                    network: a.network.network,
                    base_dataset: a.base_dataset,
                    target: a.target,
                    levels: levels.clone(),
                    per_level: a.per_level,
                    magnitude: a.magnitude,
                    seed: a.seed,
                    ranges: ranges_from(a.ranges.as_deref())?,
                },
                &a.out,
            )?;
            println!("wrote {} level files to {}", levels.len(), a.out.display());
        }
        Command::Prepare(a) => {
            pipeline::prepare(
                &pipeline::PrepareOptions {
                    network: a.network.network,
                    dataset: a.dataset,
                    split: parse_split(&a.split)?,
                    seed: a.seed,
                },
                &a.out,
            )?;
            println!("wrote {}", a.out.join(pipeline::TENSORS_FILE).display());
        }
        Command::Train(a) => {
            let file: TrainFile = if a.config == "default" {
                TrainFile::default()
            } else {
                read_json(Path::new(&a.config))?
            };
            let model = model_config(a.model, file.model)?;
            let mut train = file.train.unwrap_or_default();
            if let Some(e) = a.epochs {
                train.epochs = e;
            }
            if let Some(s) = a.seed {
                train.seed = s;
            }
            let (_, log) = pipeline::train_stage(
                &pipeline::TrainOptions {
                    tensors: a.tensors,
                    model,
                    train,
                },
                &a.out,
            )?;
            println!(
                "best validation MAE {:.6} at epoch {} of {}",
                log.best_val_mae,
                log.best_epoch,
                log.epochs.len()
            );
        }
        Command::Eval(a) => {
            let (_, report) = pipeline::eval_stage(
                &pipeline::EvalOptions {
                    checkpoints: a.checkpoints,
                    tensors: a.tensors,
                },
                &a.out,
            )?;
            print!("{}", suenet::eval::metrics_csv(&report.test));
        }
        Command::OodSweep(a) => {
            let (_, report) = pipeline::ood_sweep_stage(
                &pipeline::OodSweepOptions {
                    checkpoints: a.checkpoints,
                    tensors: a.tensors,
                    ood_dir: a.ood_dir,
                },
                &a.out,
            )?;
            for c in &report.curves {
                println!("{}:", c.target);
                print!("{}", suenet::eval::ood_csv(c));
            }
            for f in &report.flags {
                println!("flag: {f}");
            }
        }
        Command::Pipeline(a) => {
            let mut cfg: pipeline::PipelineConfig = a.config.as_deref().map_or_else(|| Ok(Default::default()), read_json)?;
            if let Some(n) = a.n {
                cfg.n_scenarios = n;
            }
            if let Some(e) = a.epochs {
                cfg.train.epochs = e;
            }
            if let Some(s) = a.seed {
                cfg.seed = s;
                cfg.train.seed = s;
            }
            let outcome = pipeline::run_pipeline(&cfg, &a.out)?;
            print!("{}", suenet::eval::metrics_csv(&outcome.test_report.test));
            for f in &outcome.ood_report.flags {
                println!("flag: {f}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
