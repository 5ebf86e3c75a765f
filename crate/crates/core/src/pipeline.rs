//! Experiment stages shared by the command line and the acceptance suite.
//!
//! Each stage reads files, writes files into its own output directory and
//! finishes by writing `manifest.json` there. A manifest lists the hashes of
//! its inputs and outputs plus the hashes of the manifests of the stages that
//! produced those inputs, so the chain gen → prepare → train → eval can be
//! audited from any end.
//!
//! Stage outputs:
//!
//! | stage | files |
//! |-------|-------|
//! | gen-id | `dataset.jsonl` |
//! | gen-ood | `ood_<target>_<level>.jsonl` per level |
//! | prepare | `tensors.bin`, `network.net` (normalizer and split live in the manifest) |
//! | train | `checkpoint.bin`, `model.json`, `train_log.json` |
//! | eval / ood-sweep | report files from [`crate::eval::emit_report`] |

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::ParamSet;
use crate::dataset::{assemble_all, fit_normalizer, split_dataset, FeatureTensors, Normalizer, SplitIndex, TensorBundle};
use crate::error::{Error, Result};
use crate::eval::{emit_report, evaluate, ood_sweep, OodCurve, Report};
use crate::models::{Model, ModelConfig, ModelKind};
use crate::network::{load_network, write_network, Network, NodeId};
use crate::scenario::{
    generate_id_scenarios, generate_ood_scenarios, read_jsonl, write_jsonl, OodSpec, OodTarget, SamplingRanges,
    Scenario, OOD_LEVELS,
};
use crate::sue::SolverConfig;
use crate::train::{train, TrainConfig, TrainLog};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const TENSORS_FILE: &str = "tensors.bin";
pub const NETWORK_FILE: &str = "network.net";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const MODEL_CARD_FILE: &str = "model.json";
pub const TRAIN_LOG_FILE: &str = "train_log.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn digest(path: &Path) -> Result<FileDigest> {
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub git_describe: Option<String>,
    pub started_at: String,
    pub finished_at: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<FileDigest>,
    /// Manifests of the stages that produced the inputs.
    pub parents: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub details: serde_json::Value,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn now() -> String {
    humantime::format_rfc3339_seconds(SystemTime::now()).to_string()
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

struct ManifestBuilder {
    command: String,
    started_at: String,
    config: serde_json::Value,
    seeds: BTreeMap<String, u64>,
    inputs: Vec<FileDigest>,
    parents: Vec<FileDigest>,
    outputs: Vec<PathBuf>,
    details: serde_json::Value,
}

impl ManifestBuilder {
    fn new(command: &str, config: &impl Serialize) -> Result<Self> {
        Ok(ManifestBuilder {
            command: command.to_string(),
            started_at: now(),
            config: serde_json::to_value(config).map_err(|e| Error::json("serializing config", e))?,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            parents: Vec::new(),
            outputs: Vec::new(),
            details: serde_json::Value::Null,
        })
    }

    fn seed(&mut self, name: &str, value: u64) {
        self.seeds.insert(name.to_string(), value);
    }

    /// Records an input file and the manifest next to it, if any.
    fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        if let Some(dir) = path.parent() {
            let m = dir.join(MANIFEST_FILE);
            if m.is_file() && !self.parents.iter().any(|p| Path::new(&p.path) == m) {
                self.parents.push(digest(&m)?);
            }
        }
        Ok(())
    }

    fn finish(self, out_dir: &Path) -> Result<RunManifest> {
        let outputs = self.outputs.iter().map(|p| digest(p)).collect::<Result<_>>()?;
        let manifest = RunManifest {
            command: self.command,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            git_describe: git_describe(),
            started_at: self.started_at,
            finished_at: now(),
            config: self.config,
            seeds: self.seeds,
            inputs: self.inputs,
            parents: self.parents,
            outputs,
            details: self.details,
        };
        write_json(&out_dir.join(MANIFEST_FILE), &manifest)?;
        Ok(manifest)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// The bundled Sioux Falls network when `path` is `None`.
pub fn network_from(path: Option<&Path>) -> Result<Network> {
    match path {
        Some(p) => load_network(p),
        None => Ok(Network::sioux_falls()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenIdOptions {
    pub network: Option<PathBuf>,
    pub n: usize,
    pub seed: u64,
    pub ranges: SamplingRanges,
    pub solver: SolverConfig,
}

pub fn gen_id(opts: &GenIdOptions, out_dir: &Path) -> Result<RunManifest> {
    let network = network_from(opts.network.as_deref())?;
    opts.ranges.validate()?;
    opts.solver.validate()?;
    let mut m = ManifestBuilder::new("gen-id", opts)?;
    m.seed("lhs", opts.seed);
    if let Some(p) = &opts.network {
        m.input(p)?;
    }
    let batch = generate_id_scenarios(&network, &opts.ranges, opts.n, opts.seed, &opts.solver)?;
    create_dir(out_dir)?;
    let path = out_dir.join(DATASET_FILE);
    write_jsonl(&path, &batch.scenarios)?;
    log::info!("gen-id: {} scenarios, {} discarded", batch.scenarios.len(), batch.discarded.len());
    m.outputs.push(path);
    m.details = serde_json::json!({
        "network_sha256": network.content_hash(),
        "scenarios": batch.scenarios.len(),
        "discarded": batch.discarded,
    });
    m.finish(out_dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOodOptions {
    pub network: Option<PathBuf>,
    pub base_dataset: PathBuf,
    pub target: OodTarget,
    pub levels: Vec<u32>,
    pub per_level: usize,
    pub magnitude: f64,
    pub seed: u64,
    pub ranges: SamplingRanges,
}

pub fn ood_file_name(target: OodTarget, level: u32) -> String {
    format!("ood_{target}_{level}.jsonl")
}

/// Parses `ood_<target>_<level>.jsonl`.
pub fn parse_ood_file_name(name: &str) -> Option<(OodTarget, u32)> {
    let stem = name.strip_prefix("ood_")?.strip_suffix(".jsonl")?;
    let (target, level) = stem.rsplit_once('_')?;
    Some((target.parse().ok()?, level.parse().ok()?))
}

pub fn gen_ood(opts: &GenOodOptions, out_dir: &Path) -> Result<RunManifest> {
    let network = network_from(opts.network.as_deref())?;
    opts.ranges.validate()?;
    if opts.levels.is_empty() {
        return Err(Error::Validation("no OOD levels requested".into()));
    }
    let specs: Vec<OodSpec> = opts
        .levels
        .iter()
        .map(|&level| OodSpec {
            target: opts.target,
            fraction: level as f64 / 100.0,
            magnitude: opts.magnitude,
            scenarios_per_level: opts.per_level,
            base_seed: opts.seed,
        })
        .collect();
    for s in &specs {
        s.validate()?;
    }
    let base = read_jsonl(&opts.base_dataset)?;
    let solver = base
        .first()
        .map(|s| s.solver)
        .ok_or_else(|| Error::Validation(format!("{} holds no scenarios", opts.base_dataset.display())))?;
    let mut m = ManifestBuilder::new("gen-ood", opts)?;
    m.seed("ood", opts.seed);
    m.input(&opts.base_dataset)?;
    create_dir(out_dir)?;
    let mut discarded = BTreeMap::new();
    for (spec, &level) in specs.iter().zip(&opts.levels) {
        let batch = generate_ood_scenarios(&network, &base, &opts.ranges, spec, &solver)?;
        if batch.scenarios.len() < opts.per_level {
            log::warn!(
                "{} level {level}%: only {} of {} scenarios converged",
                opts.target,
                batch.scenarios.len(),
                opts.per_level
            );
        }
        let path = out_dir.join(ood_file_name(opts.target, level));
        write_jsonl(&path, &batch.scenarios)?;
        m.outputs.push(path);
        discarded.insert(level.to_string(), batch.discarded);
    }
    m.details = serde_json::json!({ "solver": solver, "discarded": discarded });
    m.finish(out_dir)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub network: Option<PathBuf>,
    pub dataset: PathBuf,
    pub split: [f64; 3],
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedDetails {
    pub normalizer: Normalizer,
    pub split: SplitIndex,
}

pub fn prepare(opts: &PrepareOptions, out_dir: &Path) -> Result<RunManifest> {
    let network = network_from(opts.network.as_deref())?;
    let scenarios = read_jsonl(&opts.dataset)?;
    let samples = assemble_all(&scenarios, &network)?;
    let ids: Vec<u64> = samples.iter().map(|s| s.scenario_id).collect();
    let split = split_dataset(&ids, opts.split, opts.seed)?;
    let bundle = TensorBundle {
        topology: network.topology(),
        samples,
    };
    let normalizer = fit_normalizer(&bundle.select(&split.train)?)?;

    let mut m = ManifestBuilder::new("prepare", opts)?;
    m.seed("split", opts.seed);
    m.input(&opts.dataset)?;
    create_dir(out_dir)?;
    let tensors = out_dir.join(TENSORS_FILE);
    bundle.save(&tensors)?;
    let net = out_dir.join(NETWORK_FILE);
    std::fs::write(&net, write_network(&network)).map_err(|e| Error::io(format!("writing {}", net.display()), e))?;
    m.outputs.extend([tensors, net]);
    m.details = serde_json::to_value(PreparedDetails { normalizer, split })
        .map_err(|e| Error::json("serializing prepare details", e))?;
    m.finish(out_dir)
}

/// A prepared tensor directory loaded back into memory.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dir: PathBuf,
    pub network: Network,
    pub bundle: TensorBundle,
    pub normalizer: Normalizer,
    pub split: SplitIndex,
}

impl Prepared {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
        let details: PreparedDetails = serde_json::from_value(manifest.details)
            .map_err(|e| Error::json(format!("{}/{MANIFEST_FILE} details", dir.display()), e))?;
        let network = load_network(dir.join(NETWORK_FILE))?;
        let bundle = TensorBundle::load(dir.join(TENSORS_FILE))?;
        if bundle.topology != network.topology() {
            return Err(Error::Validation(format!(
                "{} tensors were built for a different network",
                dir.display()
            )));
        }
        Ok(Prepared {
            dir: dir.to_path_buf(),
            network,
            bundle,
            normalizer: details.normalizer,
            split: details.split,
        })
    }

    /// Normalized samples with the given ids, in order.
    pub fn normalized(&self, ids: &[u64]) -> Result<Vec<FeatureTensors>> {
        Ok(self.bundle.select(ids)?.iter().map(|s| self.normalizer.transform(s)).collect())
    }

    /// Assembles and normalizes scenarios from another file (e.g. OOD).
    pub fn normalize_scenarios(&self, scenarios: &[Scenario]) -> Result<Vec<FeatureTensors>> {
        Ok(assemble_all(scenarios, &self.network)?
            .iter()
            .map(|s| self.normalizer.transform(s))
            .collect())
    }

    pub fn edge_labels(&self) -> Vec<(NodeId, NodeId)> {
        self.network.edges().iter().map(|e| (e.from, e.to)).collect()
    }

    fn record_inputs(&self, m: &mut ManifestBuilder) -> Result<()> {
        m.input(&self.dir.join(TENSORS_FILE))?;
        m.input(&self.dir.join(NETWORK_FILE))
    }
}

/// Everything needed to rebuild a trained model next to its checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub config: ModelConfig,
    pub topology: crate::network::Topology,
    pub train: TrainConfig,
    pub best_epoch: usize,
    pub best_val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub tensors: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn train_stage(opts: &TrainOptions, out_dir: &Path) -> Result<(RunManifest, TrainLog)> {
    let prepared = Prepared::load(&opts.tensors)?;
    let train_set = prepared.normalized(&prepared.split.train)?;
    let val_set = prepared.normalized(&prepared.split.val)?;
    let mut m = ManifestBuilder::new("train", opts)?;
    m.seed("train", opts.train.seed);
    prepared.record_inputs(&mut m)?;
    let outcome = train(opts.model.clone(), &prepared.bundle.topology, &train_set, &val_set, &opts.train)?;
    log::info!(
        "train {}: best val MAE {:.5} at epoch {} of {}",
        opts.model.kind(),
        outcome.log.best_val_mae,
        outcome.log.best_epoch,
        outcome.log.epochs.len()
    );

    create_dir(out_dir)?;
    let ckpt = out_dir.join(CHECKPOINT_FILE);
    outcome.model.params.save(&ckpt)?;
    let card = out_dir.join(MODEL_CARD_FILE);
    write_json(
        &card,
        &ModelCard {
            config: opts.model.clone(),
            topology: outcome.model.topology.clone(),
            train: opts.train.clone(),
            best_epoch: outcome.log.best_epoch,
            best_val_mae: outcome.log.best_val_mae,
        },
    )?;
    let log_path = out_dir.join(TRAIN_LOG_FILE);
    write_json(&log_path, &outcome.log)?;
    m.outputs.extend([ckpt, card, log_path]);
    m.details = serde_json::json!({ "parameters": outcome.model.params.num_scalars() });
    Ok((m.finish(out_dir)?, outcome.log))
}

/// Accepts a training output directory or a path to its `checkpoint.bin`.
pub fn checkpoint_dir(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.to_path_buf()
    } else {
        path.parent().map(Path::to_path_buf).unwrap_or_default()
    }
}

pub fn load_model(path: &Path) -> Result<Model> {
    let dir = checkpoint_dir(path);
    let card: ModelCard = read_json(&dir.join(MODEL_CARD_FILE))?;
    let params = ParamSet::load(dir.join(CHECKPOINT_FILE))?;
    Model::from_parts(card.config, card.topology, params)
}

fn load_models(paths: &[PathBuf], prepared: &Prepared, m: &mut ManifestBuilder) -> Result<Vec<Model>> {
    let mut models = Vec::new();
    for p in paths {
        let dir = checkpoint_dir(p);
        let model = load_model(p)?;
        if model.topology != prepared.bundle.topology {
            return Err(Error::Validation(format!(
                "checkpoint {} was trained on a different network",
                p.display()
            )));
        }
        m.input(&dir.join(CHECKPOINT_FILE))?;
        m.input(&dir.join(MODEL_CARD_FILE))?;
        models.push(model);
    }
    models.sort_by_key(Model::kind);
    if models.windows(2).any(|w| w[0].kind() == w[1].kind()) {
        return Err(Error::Validation("two checkpoints of the same model kind".into()));
    }
    Ok(models)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub checkpoints: Vec<PathBuf>,
    pub tensors: PathBuf,
}

/// Test-split metrics for every checkpoint plus the mean baseline.
pub fn eval_stage(opts: &EvalOptions, out_dir: &Path) -> Result<(RunManifest, Report)> {
    let prepared = Prepared::load(&opts.tensors)?;
    let mut m = ManifestBuilder::new("eval", opts)?;
    prepared.record_inputs(&mut m)?;
    let models = load_models(&opts.checkpoints, &prepared, &mut m)?;
    let refs: Vec<&Model> = models.iter().collect();
    let test = prepared.normalized(&prepared.split.test)?;
    let report = Report::new(evaluate(&refs, true, &test)?, Vec::new(), prepared.normalizer.target);
    m.outputs = emit_report(&report, &prepared.edge_labels(), out_dir)?;
    m.details = serde_json::json!({ "flags": report.flags, "notes": report.notes });
    Ok((m.finish(out_dir)?, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodSweepOptions {
    pub checkpoints: Vec<PathBuf>,
    pub tensors: PathBuf,
    /// Searched, with its immediate subdirectories, for `ood_<target>_<level>.jsonl`.
    pub ood_dir: PathBuf,
}

fn find_ood_files(dir: &Path) -> Result<BTreeMap<(OodTarget, u32), PathBuf>> {
    let mut found = BTreeMap::new();
    let mut dirs = vec![dir.to_path_buf()];
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(format!("reading {}", dir.display()), e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(format!("reading {}", dir.display()), e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    for d in dirs {
        let entries = std::fs::read_dir(&d).map_err(|e| Error::io(format!("reading {}", d.display()), e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(format!("reading {}", d.display()), e))?.path();
            let key = path.file_name().and_then(|n| n.to_str()).and_then(parse_ood_file_name);
            if let Some(key) = key {
                if let Some(prev) = found.insert(key, path.clone()) {
                    return Err(Error::Validation(format!(
                        "{} and {} hold the same OOD level",
                        prev.display(),
                        path.display()
                    )));
                }
            }
        }
    }
    Ok(found)
}

/// MAE per level for every checkpoint and the mean baseline. Level 0 is the
/// in-distribution test split.
pub fn ood_sweep_stage(opts: &OodSweepOptions, out_dir: &Path) -> Result<(RunManifest, Report)> {
    let prepared = Prepared::load(&opts.tensors)?;
    let mut m = ManifestBuilder::new("ood-sweep", opts)?;
    prepared.record_inputs(&mut m)?;
    let models = load_models(&opts.checkpoints, &prepared, &mut m)?;
    let refs: Vec<&Model> = models.iter().collect();
    let files = find_ood_files(&opts.ood_dir)?;
    if files.is_empty() {
        return Err(Error::Validation(format!("no ood_<target>_<level>.jsonl files under {}", opts.ood_dir.display())));
    }
    let test = prepared.normalized(&prepared.split.test)?;
    let mut curves: Vec<OodCurve> = Vec::new();
    for target in OodTarget::ALL {
        let mine: Vec<(u32, &PathBuf)> = files
            .iter()
            .filter(|((t, _), _)| *t == target)
            .map(|((_, l), p)| (*l, p))
            .collect();
        if mine.is_empty() {
            continue;
        }
        for level in OOD_LEVELS {
            if !mine.iter().any(|(l, _)| *l == level) {
                log::warn!("{target} level {level}% missing under {}; skipped", opts.ood_dir.display());
            }
        }
        let mut levels = vec![(0, test.clone())];
        for (level, path) in mine {
            m.input(path)?;
            let scenarios = read_jsonl(path)?;
            levels.push((level, prepared.normalize_scenarios(&scenarios)?));
        }
        curves.push(ood_sweep(&refs, target, &levels)?);
    }
    let report = Report::new(Vec::new(), curves, prepared.normalizer.target);
    m.outputs = emit_report(&report, &prepared.edge_labels(), out_dir)?;
    m.details = serde_json::json!({ "flags": report.flags, "notes": report.notes });
    Ok((m.finish(out_dir)?, report))
}

/// Defaults follow the full-scale experiment; tests shrink `n_scenarios`
/// and `train.epochs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub network: Option<PathBuf>,
    pub n_scenarios: usize,
    pub seed: u64,
    pub ranges: SamplingRanges,
    pub solver: SolverConfig,
    pub split: [f64; 3],
    pub ood_targets: Vec<OodTarget>,
    pub ood_levels: Vec<u32>,
    pub ood_per_level: usize,
    pub ood_magnitude: f64,
    pub models: Vec<ModelConfig>,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            network: None,
            n_scenarios: 10_000,
            seed: 0,
            ranges: SamplingRanges::default(),
            solver: SolverConfig::default(),
            split: [0.6, 0.2, 0.2],
            ood_targets: OodTarget::ALL.to_vec(),
            ood_levels: OOD_LEVELS.to_vec(),
            ood_per_level: 50,
            ood_magnitude: 0.25,
            models: ModelKind::LEARNED.iter().filter_map(|&k| ModelConfig::default_for(k)).collect(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub test_report: Report,
    pub ood_report: Report,
    pub train_logs: Vec<(ModelKind, TrainLog)>,
}

/// Subdirectories written by [`run_pipeline`].
pub mod layout {
    pub const ID: &str = "id";
    pub const OOD: &str = "ood";
    pub const PREPARED: &str = "prepared";
    pub const MODELS: &str = "models";
    pub const EVAL: &str = "eval";
    pub const OOD_SWEEP: &str = "ood_sweep";
}

/// Runs every stage with derived seeds: LHS `seed`, split `seed + 1`,
/// OOD `seed + 2`, training `train.seed`.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<PipelineOutcome> {
    let id_dir = out.join(layout::ID);
    gen_id(
        &GenIdOptions {
            network: cfg.network.clone(),
            n: cfg.n_scenarios,
            seed: cfg.seed,
            ranges: cfg.ranges,
            solver: cfg.solver,
        },
        &id_dir,
    )?;
    let dataset = id_dir.join(DATASET_FILE);

    let ood_dir = out.join(layout::OOD);
    for &target in &cfg.ood_targets {
        gen_ood(
            &GenOodOptions {
                network: cfg.network.clone(),
                base_dataset: dataset.clone(),
                target,
                levels: cfg.ood_levels.clone(),
                per_level: cfg.ood_per_level,
                magnitude: cfg.ood_magnitude,
                seed: cfg.seed.wrapping_add(2),
                ranges: cfg.ranges,
            },
            &ood_dir.join(target.as_str()),
        )?;
    }

    let prepared = out.join(layout::PREPARED);
    prepare(
        &PrepareOptions {
            network: cfg.network.clone(),
            dataset,
            split: cfg.split,
            seed: cfg.seed.wrapping_add(1),
        },
        &prepared,
    )?;

    let mut checkpoints = Vec::new();
    let mut train_logs = Vec::new();
    for model in &cfg.models {
        let dir = out.join(layout::MODELS).join(model.kind().name());
        let (_, log) = train_stage(
            &TrainOptions {
                tensors: prepared.clone(),
                model: model.clone(),
                train: cfg.train.clone(),
            },
            &dir,
        )?;
        train_logs.push((model.kind(), log));
        checkpoints.push(dir);
    }

    let (_, test_report) = eval_stage(
        &EvalOptions {
            checkpoints: checkpoints.clone(),
            tensors: prepared.clone(),
        },
        &out.join(layout::EVAL),
    )?;
    let ood_report = if cfg.ood_targets.is_empty() {
        Report::new(Vec::new(), Vec::new(), test_report.target_scale)
    } else {
        ood_sweep_stage(
            &OodSweepOptions {
                checkpoints,
                tensors: prepared,
                ood_dir,
            },
            &out.join(layout::OOD_SWEEP),
        )?
        .1
    };
    Ok(PipelineOutcome {
        test_report,
        ood_report,
        train_logs,
    })
}
