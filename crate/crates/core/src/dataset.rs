//! Model-ready feature tensors, min-max normalization, splits and the binary
//! tensor bundle.
//!
//! `tensors.bin` layout (little-endian):
//!
//! ```text
//! magic        8 bytes "SUEFEAT1"
//! version      u32 (1)
//! num_nodes    u64, num_zones u64, num_edges u64, num_samples u64
//! zone_nodes   u64 × num_zones
//! edge_index   (u64 tail, u64 head) × num_edges
//! per sample:  scenario_id u64
//!              node_features f64 × (num_nodes · num_zones), row-major
//!              edge_features f64 × (num_edges · 3), row-major [T, S, C]
//!              targets       f64 × num_edges
//! ```

use std::path::Path;

use ndarray::{Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, Topology};
use crate::scenario::Scenario;

pub const EDGE_FEATURE_NAMES: [&str; 3] = ["free_flow_time", "speed", "capacity"];

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensors {
    pub scenario_id: u64,
    /// |V| × Z; row i holds the demand from node i to each zone, zero for
    /// non-centroid nodes.
    pub node_features: Array2<f64>,
    /// |E| × 3 with columns [free-flow time, speed, capacity].
    pub edge_features: Array2<f64>,
    pub edge_index: Vec<(usize, usize)>,
    /// Equilibrium flow per edge.
    pub targets: Vec<f64>,
}

pub fn assemble_features(scenario: &Scenario, network: &Network) -> Result<FeatureTensors> {
    let z = network.num_zones();
    let m = network.num_edges();
    if scenario.od.num_zones() != z {
        return Err(Error::Validation(format!(
            "scenario {} has {} zones, network has {z}",
            scenario.scenario_id,
            scenario.od.num_zones()
        )));
    }
    for (name, len) in [
        ("speeds", scenario.speeds.len()),
        ("capacities", scenario.capacities.len()),
        ("free_flow_times", scenario.free_flow_times.len()),
        ("edge_flows", scenario.solution.edge_flows.len()),
    ] {
        if len != m {
            return Err(Error::Validation(format!(
                "scenario {} has {len} {name} for {m} edges",
                scenario.scenario_id
            )));
        }
    }

    let mut node_features = Array2::zeros((network.num_nodes(), z));
    for (zone, node) in network.zone_node_indices().into_iter().enumerate() {
        node_features
            .row_mut(node)
            .assign(&ArrayView1::from(scenario.od.row(zone)));
    }
    let mut edge_features = Array2::zeros((m, 3));
    for e in 0..m {
        edge_features[[e, 0]] = scenario.free_flow_times[e];
        edge_features[[e, 1]] = scenario.speeds[e];
        edge_features[[e, 2]] = scenario.capacities[e];
    }
    Ok(FeatureTensors {
        scenario_id: scenario.scenario_id,
        node_features,
        edge_features,
        edge_index: network.edge_index(),
        targets: scenario.solution.edge_flows.clone(),
    })
}

pub fn assemble_all(scenarios: &[Scenario], network: &Network) -> Result<Vec<FeatureTensors>> {
    scenarios
        .par_iter()
        .map(|s| assemble_features(s, network))
        .collect()
}

/// Affine map of one feature onto [0, 1] by its fitted range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    fn fit<'a>(values: impl Iterator<Item = &'a f64>) -> Self {
        let (min, max) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
        MinMax { min, max }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    /// Degenerate ranges (max = min) map everything to 0.
    pub fn transform(&self, v: f64) -> f64 {
        let span = self.span();
        if span > 0.0 {
            (v - self.min) / span
        } else {
            0.0
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        self.min + v * self.span()
    }
}

/// Min-max statistics fitted on the training split: one global range for
/// OD demand, one per edge-feature column and one for target flows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub node: MinMax,
    pub edge: [MinMax; 3],
    pub target: MinMax,
}

pub fn fit_normalizer(train: &[FeatureTensors]) -> Result<Normalizer> {
    if train.is_empty() {
        return Err(Error::Validation("cannot fit a normalizer on an empty split".into()));
    }
    let node = MinMax::fit(train.iter().flat_map(|t| t.node_features.iter()));
    let edge = [0, 1, 2].map(|c| MinMax::fit(train.iter().flat_map(|t| t.edge_features.column(c).into_iter())));
    let target = MinMax::fit(train.iter().flat_map(|t| t.targets.iter()));
    Ok(Normalizer { node, edge, target })
}

impl Normalizer {
    pub fn transform(&self, t: &FeatureTensors) -> FeatureTensors {
        let mut edge_features = t.edge_features.clone();
        for (c, mm) in self.edge.iter().enumerate() {
            edge_features.column_mut(c).mapv_inplace(|v| mm.transform(v));
        }
        FeatureTensors {
            scenario_id: t.scenario_id,
            node_features: t.node_features.mapv(|v| self.node.transform(v)),
            edge_features,
            edge_index: t.edge_index.clone(),
            targets: t.targets.iter().map(|&v| self.target.transform(v)).collect(),
        }
    }

    pub fn inverse(&self, t: &FeatureTensors) -> FeatureTensors {
        let mut edge_features = t.edge_features.clone();
        for (c, mm) in self.edge.iter().enumerate() {
            edge_features.column_mut(c).mapv_inplace(|v| mm.inverse(v));
        }
        FeatureTensors {
            scenario_id: t.scenario_id,
            node_features: t.node_features.mapv(|v| self.node.inverse(v)),
            edge_features,
            edge_index: t.edge_index.clone(),
            targets: t.targets.iter().map(|&v| self.target.inverse(v)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIndex {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
    pub proportions: [f64; 3],
    pub seed: u64,
}

/// Seeded shuffle of `ids`, cut into train/val/test by `proportions`.
pub fn split_dataset(ids: &[u64], proportions: [f64; 3], seed: u64) -> Result<SplitIndex> {
    if proportions.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Validation(format!("negative split proportion in {proportions:?}")));
    }
    let total: f64 = proportions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!(
            "split proportions {proportions:?} sum to {total}, not 1"
        )));
    }
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n = shuffled.len();
    let n_train = ((proportions[0] * n as f64).round() as usize).min(n);
    let n_val = ((proportions[1] * n as f64).round() as usize).min(n - n_train);
    let test = shuffled.split_off(n_train + n_val);
    let val = shuffled.split_off(n_train);
    Ok(SplitIndex {
        train: shuffled,
        val,
        test,
        proportions,
        seed,
    })
}

/// Raw (unnormalized) feature tensors for a fixed topology.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorBundle {
    pub topology: Topology,
    pub samples: Vec<FeatureTensors>,
}

struct Reader<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Reader<'b> {
    fn take(&mut self, n: usize) -> Option<&'b [u8]> {
        let chunk = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(chunk)
    }

    fn u64s(&mut self, n: usize) -> Option<Vec<u64>> {
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let raw = self.take(n.checked_mul(8)?)?;
        Some(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }
}

const BUNDLE_MAGIC: &[u8; 8] = b"SUEFEAT1";
const BUNDLE_VERSION: u32 = 1;

impl TensorBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let t = &self.topology;
        let (v, z, m) = (t.num_nodes, t.num_zones(), t.num_edges());
        let per = 8 + 8 * (v * z + 4 * m);
        let mut out = Vec::with_capacity(64 + 16 * m + per * self.samples.len());
        out.extend_from_slice(BUNDLE_MAGIC);
        out.extend_from_slice(&BUNDLE_VERSION.to_le_bytes());
        for n in [v, z, m, self.samples.len()] {
            out.extend_from_slice(&(n as u64).to_le_bytes());
        }
        for &zn in &t.zone_nodes {
            out.extend_from_slice(&(zn as u64).to_le_bytes());
        }
        for &(a, b) in &t.edge_index {
            out.extend_from_slice(&(a as u64).to_le_bytes());
            out.extend_from_slice(&(b as u64).to_le_bytes());
        }
        for s in &self.samples {
            out.extend_from_slice(&s.scenario_id.to_le_bytes());
            for x in s.node_features.iter().chain(s.edge_features.iter()).chain(&s.targets) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], source: &Path) -> Result<Self> {
        let err = |message: &str| Error::Format {
            path: source.to_path_buf(),
            message: message.to_string(),
        };
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8).ok_or_else(|| err("truncated"))? != BUNDLE_MAGIC {
            return Err(err("bad magic"));
        }
        let version = r.take(4).ok_or_else(|| err("truncated"))?;
        let version = u32::from_le_bytes(version.try_into().expect("4 bytes"));
        if version != BUNDLE_VERSION {
            return Err(err(&format!("unsupported version {version}")));
        }
        let u64s = |r: &mut Reader, n: usize| r.u64s(n).ok_or_else(|| err("truncated"));
        let head = u64s(&mut r, 4)?;
        let (v, z, m, count) = (head[0] as usize, head[1] as usize, head[2] as usize, head[3] as usize);
        let zone_nodes: Vec<usize> = u64s(&mut r, z)?.into_iter().map(|x| x as usize).collect();
        let flat = u64s(&mut r, 2 * m)?;
        let edge_index: Vec<(usize, usize)> =
            flat.chunks_exact(2).map(|p| (p[0] as usize, p[1] as usize)).collect();
        if zone_nodes.iter().any(|&n| n >= v) || edge_index.iter().any(|&(a, b)| a >= v || b >= v) {
            return Err(err("topology index out of range"));
        }
        let topology = Topology {
            num_nodes: v,
            edge_index,
            zone_nodes,
        };

        let floats_per = v * z + 4 * m;
        let mut samples = Vec::with_capacity(count.min(bytes.len() / 8));
        for _ in 0..count {
            let id = u64s(&mut r, 1)?[0];
            let floats = r.f64s(floats_per).ok_or_else(|| err("truncated"))?;
            let (nf, rest) = floats.split_at(v * z);
            let (ef, tg) = rest.split_at(3 * m);
            samples.push(FeatureTensors {
                scenario_id: id,
                node_features: Array2::from_shape_vec((v, z), nf.to_vec()).expect("sized"),
                edge_features: Array2::from_shape_vec((m, 3), ef.to_vec()).expect("sized"),
                edge_index: topology.edge_index.clone(),
                targets: tg.to_vec(),
            });
        }
        if r.pos != bytes.len() {
            return Err(err("trailing bytes"));
        }
        Ok(TensorBundle { topology, samples })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }

    /// Samples whose ids appear in `ids`, in the order of `ids`.
    pub fn select(&self, ids: &[u64]) -> Result<Vec<FeatureTensors>> {
        let by_id: std::collections::HashMap<u64, &FeatureTensors> =
            self.samples.iter().map(|s| (s.scenario_id, s)).collect();
        ids.iter()
            .map(|id| {
                by_id
                    .get(id)
                    .map(|s| (*s).clone())
                    .ok_or_else(|| Error::Validation(format!("scenario {id} not in tensor bundle")))
            })
            .collect()
    }
}
