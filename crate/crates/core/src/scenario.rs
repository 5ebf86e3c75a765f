//! Scenario sampling: Latin hypercube designs for in-distribution data and
//! controlled above-range perturbations for out-of-distribution data.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::index::sample as sample_indices;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, OdMatrix};
use crate::sue::{solve_sue, EquilibriumSolution, SolverConfig};

pub const SCENARIO_SCHEMA_VERSION: u32 = 1;

/// Perturbation levels (percent of targets changed) used for OOD sweeps.
pub const OOD_LEVELS: [u32; 9] = [10, 20, 30, 40, 50, 60, 70, 80, 90];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub low: f64,
    pub high: f64,
}

impl Range {
    pub fn new(low: f64, high: f64) -> Self {
        Range { low, high }
    }

    fn at(&self, u: f64) -> f64 {
        self.low + u * (self.high - self.low)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.low && v <= self.high
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingRanges {
    /// vehicles per OD pair
    pub demand: Range,
    /// km/h
    pub speed: Range,
    /// vehicles/h
    pub capacity: Range,
}

impl Default for SamplingRanges {
    fn default() -> Self {
        SamplingRanges {
            demand: Range::new(0.0, 1500.0),
            speed: Range::new(45.0, 80.0),
            capacity: Range::new(4000.0, 26000.0),
        }
    }
}

impl SamplingRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, r) in [("demand", self.demand), ("speed", self.speed), ("capacity", self.capacity)] {
            if !(r.low >= 0.0 && r.low < r.high && r.high.is_finite()) {
                return Err(Error::Validation(format!(
                    "{name} range [{}, {}] must satisfy 0 <= low < high",
                    r.low, r.high
                )));
            }
        }
        if self.speed.low == 0.0 || self.capacity.low == 0.0 {
            return Err(Error::Validation("speed and capacity ranges must be strictly positive".into()));
        }
        Ok(())
    }

    pub fn get(&self, target: OodTarget) -> Range {
        match target {
            OodTarget::Demand => self.demand,
            OodTarget::Speed => self.speed,
            OodTarget::Capacity => self.capacity,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OodTarget {
    Demand,
    Speed,
    Capacity,
}

impl OodTarget {
    pub const ALL: [OodTarget; 3] = [OodTarget::Demand, OodTarget::Speed, OodTarget::Capacity];

    pub fn as_str(&self) -> &'static str {
        match self {
            OodTarget::Demand => "demand",
            OodTarget::Speed => "speed",
            OodTarget::Capacity => "capacity",
        }
    }
}

impl fmt::Display for OodTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OodTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "demand" => Ok(OodTarget::Demand),
            "speed" => Ok(OodTarget::Speed),
            "capacity" => Ok(OodTarget::Capacity),
            other => Err(Error::Validation(format!(
                "unknown OOD target `{other}` (expected demand, speed or capacity)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Generator {
    Id,
    Ood,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: Generator,
    pub perturbation_kind: Option<OodTarget>,
    pub perturbation_fraction: Option<f64>,
    pub perturbation_magnitude: Option<f64>,
    pub base_scenario_id: Option<u64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub schema_version: u32,
    pub scenario_id: u64,
    pub od: OdMatrix,
    /// km/h per edge
    pub speeds: Vec<f64>,
    /// vehicles/h per edge
    pub capacities: Vec<f64>,
    /// minutes per edge, 60 · length / speed
    pub free_flow_times: Vec<f64>,
    pub solution: EquilibriumSolution,
    pub solver: SolverConfig,
    pub provenance: Provenance,
}

/// A scenario whose solve was dropped from a batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discarded {
    pub scenario_id: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioBatch {
    pub scenarios: Vec<Scenario>,
    pub discarded: Vec<Discarded>,
}

/// `n_samples × dims` Latin hypercube in [0, 1): in every column each of the
/// `n_samples` equal-width strata holds exactly one value.
pub fn lhs_sample(dims: usize, n_samples: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Array2::zeros((n_samples, dims));
    let below_one = 1.0 - f64::EPSILON / 2.0;
    let mut strata: Vec<usize> = (0..n_samples).collect();
    for d in 0..dims {
        strata.shuffle(&mut rng);
        for (i, &k) in strata.iter().enumerate() {
            let u: f64 = rng.gen();
            out[[i, d]] = ((k as f64 + u) / n_samples as f64).min(below_one);
        }
    }
    out
}

/// Number of LHS dimensions for a network: off-diagonal OD pairs plus one
/// speed and one capacity per edge.
pub fn id_sample_dims(network: &Network) -> usize {
    let z = network.num_zones();
    z * (z - 1) + 2 * network.num_edges()
}

struct ScenarioInputs {
    scenario_id: u64,
    od: OdMatrix,
    speeds: Vec<f64>,
    capacities: Vec<f64>,
    provenance: Provenance,
}

fn solve_inputs(
    network: &Network,
    inputs: Vec<ScenarioInputs>,
    solver: &SolverConfig,
) -> ScenarioBatch {
    let results: Vec<std::result::Result<Scenario, Discarded>> = inputs
        .into_par_iter()
        .map(|inp| {
            let discard = |reason: String| Discarded {
                scenario_id: inp.scenario_id,
                reason,
            };
            let solution = solve_sue(network, &inp.od, &inp.speeds, &inp.capacities, solver)
                .map_err(|e| discard(e.to_string()))?;
            if !solution.converged {
                return Err(discard(format!(
                    "not converged after {} iterations (gap {:.3e})",
                    solution.iterations, solution.gap
                )));
            }
            Ok(Scenario {
                schema_version: SCENARIO_SCHEMA_VERSION,
                scenario_id: inp.scenario_id,
                free_flow_times: network.free_flow_times(&inp.speeds),
                od: inp.od,
                speeds: inp.speeds,
                capacities: inp.capacities,
                solution,
                solver: *solver,
                provenance: inp.provenance,
            })
        })
        .collect();

    let mut batch = ScenarioBatch::default();
    for r in results {
        match r {
            Ok(s) => batch.scenarios.push(s),
            Err(d) => {
                log::warn!("discarding scenario {}: {}", d.scenario_id, d.reason);
                batch.discarded.push(d);
            }
        }
    }
    batch
}

/// Samples `n` scenarios by LHS over OD demand, edge speed and edge capacity,
/// then labels each with its equilibrium. Solver failures and non-converged
/// runs are dropped and reported in `discarded`.
pub fn generate_id_scenarios(
    network: &Network,
    ranges: &SamplingRanges,
    n: usize,
    seed: u64,
    solver: &SolverConfig,
) -> Result<ScenarioBatch> {
    ranges.validate()?;
    solver.validate()?;
    if n == 0 {
        return Err(Error::Validation("number of scenarios must be >= 1".into()));
    }
    let z = network.num_zones();
    let m = network.num_edges();
    let dims = id_sample_dims(network);
    let design = lhs_sample(dims, n, seed);

    let inputs = design
        .rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            let mut od = OdMatrix::zeros(z);
            let n_pairs = z * (z - 1);
            let pairs: Vec<(usize, usize)> = od.pairs().collect();
            for (k, (r, s)) in pairs.into_iter().enumerate() {
                od.set(r, s, ranges.demand.at(row[k]));
            }
            let speeds = (0..m).map(|e| ranges.speed.at(row[n_pairs + e])).collect();
            let capacities = (0..m)
                .map(|e| ranges.capacity.at(row[n_pairs + m + e]))
                .collect();
            ScenarioInputs {
                scenario_id: i as u64,
                od,
                speeds,
                capacities,
                provenance: Provenance {
                    generator: Generator::Id,
                    perturbation_kind: None,
                    perturbation_fraction: None,
                    perturbation_magnitude: None,
                    base_scenario_id: None,
                    seed,
                },
            }
        })
        .collect();

    Ok(solve_inputs(network, inputs, solver))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OodSpec {
    pub target: OodTarget,
    /// Share of edges (speed, capacity) or OD pairs (demand) perturbed.
    pub fraction: f64,
    /// Maximum relative excursion past the range's upper bound.
    pub magnitude: f64,
    pub scenarios_per_level: usize,
    pub base_seed: u64,
}

impl OodSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction >= 0.1 - 1e-9 && self.fraction <= 0.9 + 1e-9) {
            return Err(Error::Validation(format!(
                "OOD fraction {} outside [0.1, 0.9]",
                self.fraction
            )));
        }
        if !(self.magnitude > 0.0 && self.magnitude <= 0.25) {
            return Err(Error::Validation(format!(
                "OOD magnitude {} outside (0, 0.25]",
                self.magnitude
            )));
        }
        if self.scenarios_per_level == 0 {
            return Err(Error::Validation("scenarios_per_level must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of perturbed items out of `count`, ⌈fraction · count⌉.
    pub fn num_selected(&self, count: usize) -> usize {
        // guard against 0.1 * 110 = 11.000000000000002
        let raw = self.fraction * count as f64;
        ((raw - 1e-9).ceil() as usize).clamp(1, count)
    }

    fn stream(&self) -> u64 {
        let t = match self.target {
            OodTarget::Demand => 1,
            OodTarget::Speed => 2,
            OodTarget::Capacity => 3,
        };
        t * 10_000 + (self.fraction * 1000.0).round() as u64
    }
}

/// Draws one value in (high, high · (1 + magnitude)].
fn above_range(rng: &mut ChaCha8Rng, high: f64, magnitude: f64) -> f64 {
    let u: f64 = rng.gen();
    high + (1.0 - u) * high * magnitude
}

fn mix_seed(a: u64, b: u64, c: u64) -> u64 {
    // splitmix64 finalizer over the combined words
    let mut z = a ^ b.rotate_left(21) ^ c.rotate_left(42) ^ 0x9E37_79B9_7F4A_7C15;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Perturbs randomly chosen base scenarios past the sampling range for one
/// target and level, then re-solves each equilibrium.
///
/// Base scenarios are visited in a seeded random order; when a perturbed
/// scenario fails to converge it is logged and the next base scenario in that
/// order takes its place, until `scenarios_per_level` labels exist or the
/// base set is exhausted.
pub fn generate_ood_scenarios(
    network: &Network,
    base_scenarios: &[Scenario],
    ranges: &SamplingRanges,
    spec: &OodSpec,
    solver: &SolverConfig,
) -> Result<ScenarioBatch> {
    spec.validate()?;
    solver.validate()?;
    if base_scenarios.len() < spec.scenarios_per_level {
        return Err(Error::Validation(format!(
            "{} base scenarios, {} requested per level",
            base_scenarios.len(),
            spec.scenarios_per_level
        )));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(spec.base_seed);
    order_rng.set_stream(spec.stream());
    let mut order: Vec<usize> = (0..base_scenarios.len()).collect();
    order.shuffle(&mut order_rng);

    let high = ranges.get(spec.target).high;
    let perturb = |position: usize| -> ScenarioInputs {
        let base = &base_scenarios[order[position]];
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.base_seed, spec.stream(), position as u64));
        let mut od = base.od.clone();
        let mut speeds = base.speeds.clone();
        let mut capacities = base.capacities.clone();
        match spec.target {
            OodTarget::Demand => {
                let pairs: Vec<(usize, usize)> = od.pairs().collect();
                let picks = sample_indices(&mut rng, pairs.len(), spec.num_selected(pairs.len()));
                for p in picks.into_vec() {
                    let (r, s) = pairs[p];
                    od.set(r, s, above_range(&mut rng, high, spec.magnitude));
                }
            }
            OodTarget::Speed | OodTarget::Capacity => {
                let values = if spec.target == OodTarget::Speed {
                    &mut speeds
                } else {
                    &mut capacities
                };
                let picks = sample_indices(&mut rng, values.len(), spec.num_selected(values.len()));
                for e in picks.into_vec() {
                    values[e] = above_range(&mut rng, high, spec.magnitude);
                }
            }
        }
        ScenarioInputs {
            scenario_id: position as u64,
            od,
            speeds,
            capacities,
            provenance: Provenance {
                generator: Generator::Ood,
                perturbation_kind: Some(spec.target),
                perturbation_fraction: Some(spec.fraction),
                perturbation_magnitude: Some(spec.magnitude),
                base_scenario_id: Some(base.scenario_id),
                seed: spec.base_seed,
            },
        }
    };

    let mut out = ScenarioBatch::default();
    let mut next = 0;
    while out.scenarios.len() < spec.scenarios_per_level && next < order.len() {
        let want = (spec.scenarios_per_level - out.scenarios.len()).min(order.len() - next);
        let inputs = (next..next + want).map(&perturb).collect();
        next += want;
        let batch = solve_inputs(network, inputs, solver);
        out.scenarios.extend(batch.scenarios);
        out.discarded.extend(batch.discarded);
    }
    for (k, s) in out.scenarios.iter_mut().enumerate() {
        s.scenario_id = k as u64;
    }
    Ok(out)
}

pub fn write_jsonl(path: impl AsRef<Path>, scenarios: &[Scenario]) -> Result<()> {
    let path = path.as_ref();
    let ctx = || format!("writing {}", path.display());
    let file = std::fs::File::create(path).map_err(|e| Error::io(ctx(), e))?;
    let mut w = BufWriter::new(file);
    for s in scenarios {
        serde_json::to_writer(&mut w, s).map_err(|e| Error::json(ctx(), e))?;
        w.write_all(b"\n").map_err(|e| Error::io(ctx(), e))?;
    }
    w.flush().map_err(|e| Error::io(ctx(), e))
}

pub fn read_jsonl(path: impl AsRef<Path>) -> Result<Vec<Scenario>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)
        .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Scenario = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        if s.schema_version != SCENARIO_SCHEMA_VERSION {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: format!("unsupported schema version {}", s.schema_version),
            });
        }
        out.push(s);
    }
    Ok(out)
}
