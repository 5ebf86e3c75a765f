//! Per-edge flow predictors: the gated graph network and the GCN, MLP and
//! mean baselines.
//!
//! Every learned model is a flat, ordered list of parameters described by
//! [`param_layout`]; forward passes consume the matching [`Var`]s in that
//! order, so the same code runs on borrowed parameters during training and
//! on free variables in gradient checks.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamSet, Var};
use crate::dataset::FeatureTensors;
use crate::error::{Error, Result};
use crate::network::Topology;

pub const EDGE_FEATURES: usize = 3;

/// Scenarios evaluated per forward pass at inference time. Fixed so results
/// do not depend on the thread count.
pub const EVAL_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Σ η⊙m / (Σ η + eps)
    GateNormalized,
    /// Σ η⊙m
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatedGcnConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub decoder_hidden: usize,
    pub residual: bool,
    pub gate_eps: f64,
    pub aggregation: Aggregation,
}

impl Default for GatedGcnConfig {
    fn default() -> Self {
        GatedGcnConfig {
            hidden_dim: 64,
            num_layers: 6,
            decoder_hidden: 64,
            residual: true,
            gate_eps: 1e-6,
            aggregation: Aggregation::GateNormalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub decoder_hidden: usize,
}

impl Default for GcnConfig {
    fn default() -> Self {
        GcnConfig {
            hidden_dim: 64,
            num_layers: 6,
            decoder_hidden: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MlpConfig {
    pub hidden_dim: usize,
    pub num_layers: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig {
            hidden_dim: 512,
            num_layers: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Gatedgcn(GatedGcnConfig),
    Gcn(GcnConfig),
    Mlp(MlpConfig),
}

impl ModelConfig {
    pub fn default_for(kind: ModelKind) -> Option<Self> {
        match kind {
            ModelKind::Gatedgcn => Some(ModelConfig::Gatedgcn(GatedGcnConfig::default())),
            ModelKind::Gcn => Some(ModelConfig::Gcn(GcnConfig::default())),
            ModelKind::Mlp => Some(ModelConfig::Mlp(MlpConfig::default())),
            ModelKind::Mean => None,
        }
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            ModelConfig::Gatedgcn(_) => ModelKind::Gatedgcn,
            ModelConfig::Gcn(_) => ModelKind::Gcn,
            ModelConfig::Mlp(_) => ModelKind::Mlp,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (hidden, layers, decoder) = match self {
            ModelConfig::Gatedgcn(c) => {
                if !(c.gate_eps > 0.0) {
                    return Err(Error::Validation(format!("gate_eps must be positive, got {}", c.gate_eps)));
                }
                (c.hidden_dim, c.num_layers, c.decoder_hidden)
            }
            ModelConfig::Gcn(c) => (c.hidden_dim, c.num_layers, c.decoder_hidden),
            ModelConfig::Mlp(c) => (c.hidden_dim, c.num_layers, 1),
        };
        if hidden == 0 || layers == 0 || decoder == 0 {
            return Err(Error::Validation(format!(
                "{} needs hidden_dim, num_layers and decoder width >= 1",
                self.kind()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Gatedgcn,
    Gcn,
    Mlp,
    Mean,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [ModelKind::Gatedgcn, ModelKind::Gcn, ModelKind::Mlp, ModelKind::Mean];
    pub const LEARNED: [ModelKind; 3] = [ModelKind::Gatedgcn, ModelKind::Gcn, ModelKind::Mlp];

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Gatedgcn => "gatedgcn",
            ModelKind::Gcn => "gcn",
            ModelKind::Mlp => "mlp",
            ModelKind::Mean => "mean",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Validation(format!("unknown model {s:?}; expected gatedgcn, gcn, mlp or mean")))
    }
}

/// Names and shapes of every parameter, in forward-pass order.
pub fn param_layout(config: &ModelConfig, topology: &Topology) -> Vec<(String, (usize, usize))> {
    let mut out = Vec::new();
    let mut linear = |name: String, fan_in: usize, fan_out: usize| {
        out.push((format!("{name}.w"), (fan_in, fan_out)));
        out.push((format!("{name}.b"), (1, fan_out)));
    };
    let z = topology.num_zones();
    match config {
        ModelConfig::Gatedgcn(c) => {
            let d = c.hidden_dim;
            linear("enc.node".into(), z, d);
            linear("enc.edge".into(), EDGE_FEATURES, d);
            for l in 0..c.num_layers {
                for m in ["a", "b", "c", "u", "v"] {
                    linear(format!("layer{l}.{m}"), d, d);
                }
            }
            linear("dec.0".into(), 3 * d, c.decoder_hidden);
            linear("dec.1".into(), c.decoder_hidden, 1);
        }
        ModelConfig::Gcn(c) => {
            let d = c.hidden_dim;
            linear("enc.node".into(), z, d);
            for l in 0..c.num_layers {
                linear(format!("layer{l}"), d, d);
            }
            linear("dec.0".into(), 2 * d, c.decoder_hidden);
            linear("dec.1".into(), c.decoder_hidden, 1);
        }
        ModelConfig::Mlp(c) => {
            let mut fan_in = mlp_input_len(topology);
            for l in 0..c.num_layers {
                linear(format!("mlp{l}"), fan_in, c.hidden_dim);
                fan_in = c.hidden_dim;
            }
            linear("mlp.out".into(), fan_in, topology.num_edges());
        }
    }
    out
}

/// Z² + 3|E| + |V|² + |V||E|.
pub fn mlp_input_len(t: &Topology) -> usize {
    let (z, m, v) = (t.num_zones(), t.num_edges(), t.num_nodes);
    z * z + EDGE_FEATURES * m + v * v + v * m
}

/// Glorot-uniform weights and zero biases.
pub fn init_params(config: &ModelConfig, topology: &Topology, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::new();
    for (name, (rows, cols)) in param_layout(config, topology) {
        if name.ends_with(".b") {
            params.insert_zeros(name, rows, cols);
        } else {
            params.insert_glorot(name, rows, cols, &mut rng);
        }
    }
    params
}

/// Normalized symmetric GCN propagation D̂^{-1/2}(A_sym + I)D̂^{-1/2} as a
/// message list: row k sends `weight[k]` times node `src[k]` to node `dst[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnPropagation {
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub weight: Vec<f64>,
}

pub fn gcn_propagation(num_nodes: usize, edge_index: &[(usize, usize)]) -> GcnPropagation {
    let mut nbrs: Vec<BTreeSet<usize>> = (0..num_nodes).map(|i| BTreeSet::from([i])).collect();
    for &(a, b) in edge_index {
        nbrs[a].insert(b);
        nbrs[b].insert(a);
    }
    let deg: Vec<f64> = nbrs.iter().map(|n| n.len() as f64).collect();
    let mut p = GcnPropagation {
        src: Vec::new(),
        dst: Vec::new(),
        weight: Vec::new(),
    };
    for (j, set) in nbrs.iter().enumerate() {
        for &i in set {
            p.src.push(i);
            p.dst.push(j);
            p.weight.push(1.0 / (deg[i] * deg[j]).sqrt());
        }
    }
    p
}

/// Several scenarios stacked as one disconnected graph.
#[derive(Debug, Clone)]
pub struct Batch {
    pub num_samples: usize,
    pub num_nodes: usize,
    /// Edge count of each sample, in order.
    pub edges_per_sample: Vec<usize>,
    pub node_x: Array2<f64>,
    pub edge_x: Array2<f64>,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub gcn: Option<GcnPropagation>,
    pub mlp_x: Option<Array2<f64>>,
    /// Column of per-edge targets, or samples × edges for the MLP.
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn new(config: &ModelConfig, topology: &Topology, samples: &[&FeatureTensors]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        let z = samples[0].node_features.ncols();
        let total_nodes: usize = samples.iter().map(|s| s.node_features.nrows()).sum();
        let total_edges: usize = samples.iter().map(|s| s.edge_index.len()).sum();
        let mut node_x = Array2::zeros((total_nodes, z));
        let mut edge_x = Array2::zeros((total_edges, EDGE_FEATURES));
        let mut src = Vec::with_capacity(total_edges);
        let mut dst = Vec::with_capacity(total_edges);
        let mut targets = Vec::with_capacity(total_edges);
        let mut edges_per_sample = Vec::with_capacity(samples.len());
        let (mut node_off, mut edge_off) = (0, 0);
        for s in samples {
            let (v, m) = (s.node_features.nrows(), s.edge_index.len());
            if s.node_features.ncols() != z || s.edge_features.dim() != (m, EDGE_FEATURES) || s.targets.len() != m {
                return Err(Error::shape(
                    "batch",
                    format!("scenario {} tensors do not line up", s.scenario_id),
                ));
            }
            if let Some(&(a, b)) = s.edge_index.iter().find(|&&(a, b)| a >= v || b >= v) {
                return Err(Error::Validation(format!(
                    "scenario {} edge ({a}, {b}) outside {v} nodes",
                    s.scenario_id
                )));
            }
            node_x.slice_mut(ndarray::s![node_off..node_off + v, ..]).assign(&s.node_features);
            edge_x.slice_mut(ndarray::s![edge_off..edge_off + m, ..]).assign(&s.edge_features);
            src.extend(s.edge_index.iter().map(|&(a, _)| a + node_off));
            dst.extend(s.edge_index.iter().map(|&(_, b)| b + node_off));
            targets.extend_from_slice(&s.targets);
            edges_per_sample.push(m);
            node_off += v;
            edge_off += m;
        }

        let mut gcn = None;
        let mut mlp_x = None;
        let mut target_shape = (total_edges, 1);
        match config {
            ModelConfig::Gcn(_) => {
                let mut all = GcnPropagation {
                    src: Vec::new(),
                    dst: Vec::new(),
                    weight: Vec::new(),
                };
                let mut off = 0;
                for s in samples {
                    let p = gcn_propagation(s.node_features.nrows(), &s.edge_index);
                    all.src.extend(p.src.iter().map(|i| i + off));
                    all.dst.extend(p.dst.iter().map(|j| j + off));
                    all.weight.extend(p.weight);
                    off += s.node_features.nrows();
                }
                gcn = Some(all);
            }
            ModelConfig::Mlp(_) => {
                let rows = samples
                    .iter()
                    .map(|s| mlp_input(s, topology))
                    .collect::<Result<Vec<_>>>()?;
                let width = mlp_input_len(topology);
                let flat: Vec<f64> = rows.into_iter().flatten().collect();
                mlp_x = Some(Array2::from_shape_vec((samples.len(), width), flat).expect("sized"));
                target_shape = (samples.len(), topology.num_edges());
            }
            ModelConfig::Gatedgcn(_) => {}
        }

        Ok(Batch {
            num_samples: samples.len(),
            num_nodes: total_nodes,
            edges_per_sample,
            node_x,
            edge_x,
            src,
            dst,
            gcn,
            mlp_x,
            targets: Array2::from_shape_vec(target_shape, targets).expect("sized"),
        })
    }

    /// Splits a forward-pass output back into one vector per sample.
    pub fn split_predictions(&self, pred: ndarray::ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
        let flat: Vec<f64> = pred.iter().copied().collect();
        let mut out = Vec::with_capacity(self.num_samples);
        let mut off = 0;
        for &m in &self.edges_per_sample {
            out.push(flat[off..off + m].to_vec());
            off += m;
        }
        out
    }
}

/// Flattened [OD (Z×Z), edge features (|E|×3), adjacency (|V|×|V|),
/// incidence (|V|×|E|)] for one scenario.
pub fn mlp_input(s: &FeatureTensors, topology: &Topology) -> Result<Vec<f64>> {
    if s.edge_index != topology.edge_index
        || s.node_features.nrows() != topology.num_nodes
        || s.node_features.ncols() != topology.num_zones()
    {
        return Err(Error::Validation(format!(
            "scenario {} topology differs from the one the MLP was built for",
            s.scenario_id
        )));
    }
    let mut x = Vec::with_capacity(mlp_input_len(topology));
    for &node in &topology.zone_nodes {
        x.extend(s.node_features.row(node).iter());
    }
    x.extend(s.edge_features.iter());
    x.extend(topology.adjacency().iter());
    x.extend(topology.incidence().iter());
    Ok(x)
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

pub fn linear(g: &mut Graph<'_>, x: Var, l: Linear) -> Result<Var> {
    let y = g.matmul(x, l.w)?;
    g.add_row(y, l.b)
}

struct Cursor<'v> {
    vars: &'v [Var],
    pos: usize,
}

impl Cursor<'_> {
    fn linear(&mut self) -> Result<Linear> {
        let pair = self.vars.get(self.pos..self.pos + 2).ok_or_else(|| {
            Error::shape("forward", format!("ran out of parameters at {}", self.pos))
        })?;
        self.pos += 2;
        Ok(Linear { w: pair[0], b: pair[1] })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GatedLayer {
    pub a: Linear,
    pub b: Linear,
    pub c: Linear,
    pub u: Linear,
    pub v: Linear,
}

/// Affine node and edge encoders.
pub fn encode(g: &mut Graph<'_>, node_x: Var, edge_x: Var, node: Linear, edge: Linear) -> Result<(Var, Var)> {
    Ok((linear(g, node_x, node)?, linear(g, edge_x, edge)?))
}

/// One gated message-passing layer over directed edges `src[k] → dst[k]`:
///
/// ```text
/// ê' = ê + ReLU(A h_src + B h_dst + C ê)
/// η  = σ(ê')
/// m̂  = Σ_in η ⊙ V h_src / (Σ_in η + eps)
/// h' = h + ReLU(U h + m̂)
/// ```
pub fn gatedgcn_layer<'a>(
    g: &mut Graph<'a>,
    h: Var,
    e: Var,
    p: &GatedLayer,
    src: &'a [usize],
    dst: &'a [usize],
    config: &GatedGcnConfig,
) -> Result<(Var, Var)> {
    let n = g.shape(h).0;
    let ha = linear(g, h, p.a)?;
    let hb = linear(g, h, p.b)?;
    let ec = linear(g, e, p.c)?;
    let ha_src = g.gather(ha, src)?;
    let hb_dst = g.gather(hb, dst)?;
    let pre = g.add(ha_src, hb_dst)?;
    let pre = g.add(pre, ec)?;
    let pre = g.relu(pre);
    let e_new = if config.residual { g.add(e, pre)? } else { pre };

    let gate = g.sigmoid(e_new);
    let hv = linear(g, h, p.v)?;
    let hv_src = g.gather(hv, src)?;
    let msg = g.mul(gate, hv_src)?;
    let num = g.scatter_sum(msg, dst, n)?;
    let agg = match config.aggregation {
        Aggregation::GateNormalized => {
            let den = g.scatter_sum(gate, dst, n)?;
            let den = g.add_scalar(den, config.gate_eps);
            g.div(num, den)?
        }
        Aggregation::Sum => num,
    };
    let hu = linear(g, h, p.u)?;
    let upd = g.add(hu, agg)?;
    let upd = g.relu(upd);
    let h_new = if config.residual { g.add(h, upd)? } else { upd };
    Ok((h_new, e_new))
}

/// Two-layer ReLU MLP over concat(h_src, h_dst[, edge]) per edge.
pub fn decode<'a>(
    g: &mut Graph<'a>,
    h: Var,
    edge: Option<Var>,
    src: &'a [usize],
    dst: &'a [usize],
    hidden: Linear,
    out: Linear,
) -> Result<Var> {
    let hs = g.gather(h, src)?;
    let hd = g.gather(h, dst)?;
    let z = match edge {
        Some(e) => g.concat_cols(&[hs, hd, e])?,
        None => g.concat_cols(&[hs, hd])?,
    };
    let z = linear(g, z, hidden)?;
    let z = g.relu(z);
    linear(g, z, out)
}

/// Single symmetric-normalized graph convolution ReLU(P h W + b).
pub fn gcn_layer<'a>(g: &mut Graph<'a>, h: Var, prop: &'a GcnPropagation, l: Linear) -> Result<Var> {
    let n = g.shape(h).0;
    let hw = g.matmul(h, l.w)?;
    let from = g.gather(hw, &prop.src)?;
    let weighted = g.scale_rows(from, &prop.weight)?;
    let agg = g.scatter_sum(weighted, &prop.dst, n)?;
    let out = g.add_row(agg, l.b)?;
    Ok(g.relu(out))
}

/// Full forward pass; `params` follow [`param_layout`] order.
pub fn forward_graph<'a>(
    config: &ModelConfig,
    g: &mut Graph<'a>,
    params: &[Var],
    batch: &'a Batch,
) -> Result<Var> {
    let mut p = Cursor { vars: params, pos: 0 };
    let out = match config {
        ModelConfig::Gatedgcn(c) => {
            let x = g.constant_ref(&batch.node_x);
            let ex = g.constant_ref(&batch.edge_x);
            let (enc_n, enc_e) = (p.linear()?, p.linear()?);
            let (mut h, e0) = encode(g, x, ex, enc_n, enc_e)?;
            let mut e = e0;
            for _ in 0..c.num_layers {
                let layer = GatedLayer {
                    a: p.linear()?,
                    b: p.linear()?,
                    c: p.linear()?,
                    u: p.linear()?,
                    v: p.linear()?,
                };
                (h, e) = gatedgcn_layer(g, h, e, &layer, &batch.src, &batch.dst, c)?;
            }
            let (d0, d1) = (p.linear()?, p.linear()?);
            decode(g, h, Some(e0), &batch.src, &batch.dst, d0, d1)?
        }
        ModelConfig::Gcn(c) => {
            let prop = batch
                .gcn
                .as_ref()
                .ok_or_else(|| Error::Validation("batch was not built for the gcn model".into()))?;
            let x = g.constant_ref(&batch.node_x);
            let mut h = linear(g, x, p.linear()?)?;
            for _ in 0..c.num_layers {
                h = gcn_layer(g, h, prop, p.linear()?)?;
            }
            let (d0, d1) = (p.linear()?, p.linear()?);
            decode(g, h, None, &batch.src, &batch.dst, d0, d1)?
        }
        ModelConfig::Mlp(c) => {
            let x = batch
                .mlp_x
                .as_ref()
                .ok_or_else(|| Error::Validation("batch was not built for the mlp model".into()))?;
            let mut h = g.constant_ref(x);
            for _ in 0..c.num_layers {
                h = linear(g, h, p.linear()?)?;
                h = g.relu(h);
            }
            linear(g, h, p.linear()?)?
        }
    };
    if p.pos != params.len() {
        return Err(Error::shape(
            "forward",
            format!("{} parameters supplied, {} used", params.len(), p.pos),
        ));
    }
    Ok(out)
}

/// Registers every tensor of `params` as a trainable leaf and runs the
/// forward pass. Returns the prediction and the parameter handles.
pub fn forward_params<'a>(
    config: &ModelConfig,
    params: &'a ParamSet,
    g: &mut Graph<'a>,
    batch: &'a Batch,
) -> Result<(Var, Vec<Var>)> {
    let vars: Vec<Var> = params.values().iter().map(|p| g.param(p)).collect();
    let out = forward_graph(config, g, &vars, batch)?;
    Ok((out, vars))
}

/// A learned model bound to the topology it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub topology: Topology,
    pub params: ParamSet,
}

impl Model {
    pub fn init(config: ModelConfig, topology: Topology, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, &topology, seed);
        Ok(Model { config, topology, params })
    }

    /// Checks that `params` has exactly the layout this config expects.
    pub fn from_parts(config: ModelConfig, topology: Topology, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let layout = param_layout(&config, &topology);
        let matches = layout.len() == params.len()
            && layout
                .iter()
                .zip(params.names().iter().zip(params.values()))
                .all(|((n, shape), (pn, pv))| n == pn && *shape == pv.dim());
        if !matches {
            return Err(Error::Validation(format!(
                "checkpoint parameters do not match the {} layout",
                config.kind()
            )));
        }
        Ok(Model { config, topology, params })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind()
    }

    pub fn batch(&self, samples: &[&FeatureTensors]) -> Result<Batch> {
        Batch::new(&self.config, &self.topology, samples)
    }

    /// Normalized per-edge predictions for each sample, in order.
    pub fn predict(&self, samples: &[FeatureTensors]) -> Result<Vec<Vec<f64>>> {
        let chunks: Vec<Vec<Vec<f64>>> = samples
            .par_chunks(EVAL_CHUNK)
            .map(|chunk| {
                let refs: Vec<&FeatureTensors> = chunk.iter().collect();
                let batch = self.batch(&refs)?;
                let mut g = Graph::new();
                let (out, _) = forward_params(&self.config, &self.params, &mut g, &batch)?;
                Ok(batch.split_predictions(g.value(out)))
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}

/// Per-edge mean of the evaluation targets themselves.
pub fn mean_baseline(eval_targets: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = eval_targets
        .first()
        .ok_or_else(|| Error::Validation("mean baseline needs a nonempty evaluation set".into()))?;
    let m = first.len();
    if eval_targets.iter().any(|t| t.len() != m) {
        return Err(Error::shape("mean_baseline", "target vectors differ in length"));
    }
    let n = eval_targets.len() as f64;
    Ok((0..m)
        .map(|e| eval_targets.iter().map(|t| t[e]).sum::<f64>() / n)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Network;
    use ndarray::array;

    fn toy_sample(v: usize, edges: &[(usize, usize)], z: usize) -> FeatureTensors {
        let m = edges.len();
        FeatureTensors {
            scenario_id: 0,
            node_features: Array2::from_shape_fn((v, z), |(i, j)| ((i * 7 + j * 3) % 5) as f64 / 5.0),
            edge_features: Array2::from_shape_fn((m, 3), |(e, c)| ((e * 5 + c) % 7) as f64 / 7.0),
            edge_index: edges.to_vec(),
            targets: vec![0.5; m],
        }
    }

    fn toy_topology(v: usize, edges: &[(usize, usize)], z: usize) -> Topology {
        Topology {
            num_nodes: v,
            edge_index: edges.to_vec(),
            zone_nodes: (0..z).collect(),
        }
    }

    #[test]
    fn sioux_falls_mlp_input_is_2749() {
        let t = Network::sioux_falls().topology();
        assert_eq!(mlp_input_len(&t), 121 + 228 + 576 + 1824);
        assert_eq!(mlp_input_len(&t), 2749);
    }

    #[test]
    fn default_configs() {
        let c = GatedGcnConfig::default();
        assert_eq!((c.hidden_dim, c.num_layers, c.decoder_hidden), (64, 6, 64));
        assert!(c.residual);
        let m = MlpConfig::default();
        assert_eq!((m.hidden_dim, m.num_layers), (512, 5));
        let json = serde_json::to_string(&ModelConfig::Gatedgcn(c.clone())).unwrap();
        assert!(json.contains("\"kind\":\"gatedgcn\""));
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, ModelConfig::Gatedgcn(c));
        let partial: ModelConfig = serde_json::from_str(r#"{"kind":"gcn","hidden_dim":8}"#).unwrap();
        assert_eq!(partial, ModelConfig::Gcn(GcnConfig { hidden_dim: 8, ..GcnConfig::default() }));
    }

    #[test]
    fn model_kind_parsing() {
        assert_eq!("mlp".parse::<ModelKind>().unwrap(), ModelKind::Mlp);
        assert!("transformer".parse::<ModelKind>().is_err());
    }

    #[test]
    fn zero_config_rejected() {
        let c = ModelConfig::Gatedgcn(GatedGcnConfig { num_layers: 0, ..Default::default() });
        assert!(c.validate().is_err());
    }

    #[test]
    fn triangle_normalization() {
        let p = gcn_propagation(3, &[(0, 1), (1, 2), (2, 0)]);
        // every node has two neighbours plus itself
        assert_eq!(p.src.len(), 9);
        assert!(p.weight.iter().all(|w| (w - 1.0 / 3.0).abs() < 1e-15));
        let single = gcn_propagation(1, &[]);
        assert_eq!(single.weight, vec![1.0]);
    }

    #[test]
    fn single_node_gcn_is_relu() {
        let prop = gcn_propagation(1, &[]);
        let w = Array2::eye(3);
        let b = Array2::zeros((1, 3));
        let mut g = Graph::new();
        let h = g.constant(array![[1.0, -2.0, 0.5]]);
        let l = Linear { w: g.constant_ref(&w), b: g.constant_ref(&b) };
        let out = gcn_layer(&mut g, h, &prop, l).unwrap();
        assert_eq!(g.value(out), array![[1.0, 0.0, 0.5]]);
    }

    #[test]
    fn zero_weight_layer_is_identity() {
        let edges = [(0, 1), (1, 2), (2, 0), (0, 2)];
        let (src, dst): (Vec<usize>, Vec<usize>) = edges.iter().copied().unzip();
        let zero = Array2::zeros((4, 4));
        let zb = Array2::zeros((1, 4));
        let h0 = Array2::from_shape_fn((3, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
        let e0 = Array2::from_shape_fn((4, 4), |(i, j)| (i + 2 * j) as f64 * 0.1 - 0.4);
        let mut g = Graph::new();
        let lin = |g: &mut Graph<'_>| Linear { w: g.constant(zero.clone()), b: g.constant(zb.clone()) };
        let layer = GatedLayer { a: lin(&mut g), b: lin(&mut g), c: lin(&mut g), u: lin(&mut g), v: lin(&mut g) };
        let h = g.constant(h0.clone());
        let e = g.constant(e0.clone());
        let (h1, e1) = gatedgcn_layer(&mut g, h, e, &layer, &src, &dst, &GatedGcnConfig::default()).unwrap();
        assert_eq!(g.value(h1), h0);
        assert_eq!(g.value(e1), e0);
    }

    #[test]
    fn isolated_node_depends_on_u_only() {
        // node 2 has no incoming edges
        let edges = [(0, 1), (2, 0)];
        let (src, dst): (Vec<usize>, Vec<usize>) = edges.iter().copied().unzip();
        let d = 2;
        let ones = Array2::from_elem((d, d), 0.5);
        let b = Array2::zeros((1, d));
        let h0 = array![[1.0, 2.0], [0.5, -1.0], [0.3, 0.7]];
        let e0 = Array2::from_elem((2, d), 0.2);
        let mut g = Graph::new();
        let lin = |g: &mut Graph<'_>| Linear { w: g.constant(ones.clone()), b: g.constant(b.clone()) };
        let layer = GatedLayer { a: lin(&mut g), b: lin(&mut g), c: lin(&mut g), u: lin(&mut g), v: lin(&mut g) };
        let h = g.constant(h0.clone());
        let e = g.constant(e0);
        let (h1, _) = gatedgcn_layer(&mut g, h, e, &layer, &src, &dst, &GatedGcnConfig::default()).unwrap();
        // U h_2 = 0.5 * (0.3 + 0.7) per column, message sum empty
        assert!((g.value(h1)[[2, 0]] - (0.3 + 0.5)).abs() < 1e-15);
        assert!((g.value(h1)[[2, 1]] - (0.7 + 0.5)).abs() < 1e-15);
    }

    #[test]
    fn zero_decoder_outputs_bias() {
        let d = 3;
        let h0 = Array2::zeros((2, d));
        let e0 = Array2::zeros((1, d));
        let src = [0usize];
        let dst = [1usize];
        let mut g = Graph::new();
        let h = g.constant(h0);
        let e = g.constant(e0);
        let hidden = Linear { w: g.constant(Array2::zeros((3 * d, 4))), b: g.constant(Array2::zeros((1, 4))) };
        let out = Linear { w: g.constant(Array2::zeros((4, 1))), b: g.constant(array![[0.7]]) };
        let y = decode(&mut g, h, Some(e), &src, &dst, hidden, out).unwrap();
        assert_eq!(g.value(y), array![[0.7]]);
    }

    #[test]
    fn layouts_match_forward() {
        let edges = [(0, 1), (1, 2), (2, 0), (2, 3)];
        let t = toy_topology(4, &edges, 2);
        let s = toy_sample(4, &edges, 2);
        for config in [
            ModelConfig::Gatedgcn(GatedGcnConfig { hidden_dim: 4, num_layers: 2, decoder_hidden: 3, ..Default::default() }),
            ModelConfig::Gcn(GcnConfig { hidden_dim: 4, num_layers: 2, decoder_hidden: 3 }),
            ModelConfig::Mlp(MlpConfig { hidden_dim: 5, num_layers: 2 }),
        ] {
            let model = Model::init(config, t.clone(), 3).unwrap();
            let preds = model.predict(&[s.clone(), s.clone()]).unwrap();
            assert_eq!(preds.len(), 2);
            assert_eq!(preds[0].len(), 4);
            assert_eq!(preds[0], preds[1]);
            assert!(preds[0].iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn mlp_rejects_other_topology() {
        let t = toy_topology(3, &[(0, 1), (1, 2)], 2);
        let s = toy_sample(3, &[(0, 1), (2, 1)], 2);
        let model = Model::init(ModelConfig::Mlp(MlpConfig { hidden_dim: 3, num_layers: 1 }), t, 0).unwrap();
        assert!(matches!(model.predict(&[s]), Err(Error::Validation(_))));
    }

    #[test]
    fn mismatched_checkpoint_rejected() {
        let t = toy_topology(3, &[(0, 1), (1, 2)], 2);
        let small = ModelConfig::Gcn(GcnConfig { hidden_dim: 2, num_layers: 1, decoder_hidden: 2 });
        let big = ModelConfig::Gcn(GcnConfig { hidden_dim: 3, num_layers: 1, decoder_hidden: 2 });
        let params = init_params(&small, &t, 0);
        assert!(Model::from_parts(small, t.clone(), params.clone()).is_ok());
        assert!(Model::from_parts(big, t, params).is_err());
    }

    #[test]
    fn mean_baseline_examples() {
        assert_eq!(mean_baseline(&[vec![0.0, 2.0], vec![1.0, 2.0]]).unwrap(), vec![0.5, 2.0]);
        assert!(mean_baseline(&[]).is_err());
    }
}
