//! Logit stochastic user equilibrium by the method of successive averages.
//!
//! Link costs follow the BPR volume-delay function. Each OD pair keeps a
//! column-generated path set, seeded with the `initial_paths` shortest loopless
//! paths at free-flow times (Yen); every iteration adds the current shortest path,
//! loads demand over the path set with a multinomial logit split, and moves
//! the path flows toward that auxiliary loading with step 1/k, where k counts
//! iterations since the path set last grew.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Network, NodeId, OdMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub bpr_alpha: f64,
    pub bpr_beta: f64,
    /// Logit dispersion, 1/minutes. Larger values approach deterministic UE.
    pub logit_theta: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        CostParams {
            bpr_alpha: 0.15,
            bpr_beta: 4.0,
            logit_theta: 0.5,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.bpr_alpha >= 0.0) {
            return Err(Error::Validation(format!("bpr_alpha {} < 0", self.bpr_alpha)));
        }
        if !(self.bpr_beta >= 1.0) {
            return Err(Error::Validation(format!("bpr_beta {} < 1", self.bpr_beta)));
        }
        if !(self.logit_theta > 0.0 && self.logit_theta.is_finite()) {
            return Err(Error::Validation(format!("logit_theta {} must be > 0", self.logit_theta)));
        }
        Ok(())
    }
}

/// Cost parameters plus MSA stopping rule; echoed into every scenario record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    #[serde(flatten)]
    pub params: CostParams,
    pub max_iter: usize,
    pub gap_tol: f64,
    /// Loopless free-flow paths seeded per OD pair before column generation.
    #[serde(default = "default_initial_paths")]
    pub initial_paths: usize,
}

fn default_initial_paths() -> usize {
    3
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            params: CostParams::default(),
            max_iter: 200,
            gap_tol: 1e-4,
            initial_paths: default_initial_paths(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.max_iter == 0 {
            return Err(Error::Validation("max_iter must be >= 1".into()));
        }
        if self.initial_paths == 0 {
            return Err(Error::Validation("initial_paths must be >= 1".into()));
        }
        if !(self.gap_tol > 0.0) {
            return Err(Error::Validation(format!("gap_tol {} must be > 0", self.gap_tol)));
        }
        Ok(())
    }
}

/// BPR travel time in minutes: `t0 * (1 + alpha * (flow / capacity)^beta)`.
pub fn bpr_time(t0: f64, flow: f64, capacity: f64, params: &CostParams) -> Result<f64> {
    if !(t0 > 0.0) {
        return Err(Error::Domain(format!("free-flow time {t0} must be > 0")));
    }
    if !(capacity > 0.0) {
        return Err(Error::Domain(format!("capacity {capacity} must be > 0")));
    }
    if !(flow >= 0.0) {
        return Err(Error::Domain(format!("flow {flow} must be >= 0")));
    }
    Ok(bpr_unchecked(t0, flow, capacity, params))
}

#[inline]
fn bpr_unchecked(t0: f64, flow: f64, capacity: f64, params: &CostParams) -> f64 {
    t0 * (1.0 + params.bpr_alpha * (flow / capacity).powf(params.bpr_beta))
}

/// Multinomial logit choice probabilities, shifted by the minimum cost so
/// that large cost differences cannot overflow.
pub fn logit_split(path_costs: &[f64], theta: f64) -> Result<Vec<f64>> {
    if path_costs.is_empty() {
        return Err(Error::Validation("logit split needs at least one path".into()));
    }
    if !(theta > 0.0) {
        return Err(Error::Domain(format!("theta {theta} must be > 0")));
    }
    let mut probs = Vec::with_capacity(path_costs.len());
    logit_into(path_costs, theta, &mut probs);
    Ok(probs)
}

fn logit_into(costs: &[f64], theta: f64, out: &mut Vec<f64>) {
    let c_min = costs.iter().copied().fold(f64::INFINITY, f64::min);
    out.clear();
    out.extend(costs.iter().map(|&c| (-theta * (c - c_min)).exp()));
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
}

/// A simple path as a sequence of edge indices, with its cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub edges: Vec<usize>,
    pub cost: f64,
}

/// Adjacency lists over node indices for repeated shortest-path queries.
#[derive(Debug, Clone)]
pub struct RoutingGraph {
    node_ids: Vec<NodeId>,
    tails: Vec<usize>,
    heads: Vec<usize>,
    out_edges: Vec<Vec<usize>>,
    in_edges: Vec<Vec<usize>>,
}

#[derive(Copy, Clone, PartialEq)]
struct HeapEntry {
    dist: f64,
    node: usize,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Shortest-path distances from one origin, used to extract tie-broken paths.
pub struct ShortestPathTree {
    origin: usize,
    dist: Vec<f64>,
}

const TIE_REL_TOL: f64 = 1e-12;

impl RoutingGraph {
    pub fn new(network: &Network) -> Self {
        let n = network.num_nodes();
        let mut out_edges = vec![Vec::new(); n];
        let mut in_edges = vec![Vec::new(); n];
        let (mut tails, mut heads) = (Vec::new(), Vec::new());
        for (e, (t, h)) in network.edge_index().into_iter().enumerate() {
            out_edges[t].push(e);
            in_edges[h].push(e);
            tails.push(t);
            heads.push(h);
        }
        let node_ids: Vec<NodeId> = network.nodes().iter().map(|n| n.id).collect();
        // Visit successors in ascending node id so extraction is order independent.
        for list in out_edges.iter_mut() {
            list.sort_by_key(|&e| node_ids[heads[e]]);
        }
        RoutingGraph {
            node_ids,
            tails,
            heads,
            out_edges,
            in_edges,
        }
    }

    pub fn tree(&self, origin: usize, edge_times: &[f64]) -> ShortestPathTree {
        let mut dist = vec![f64::INFINITY; self.node_ids.len()];
        let mut heap = BinaryHeap::new();
        dist[origin] = 0.0;
        heap.push(HeapEntry {
            dist: 0.0,
            node: origin,
        });
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            for &e in &self.out_edges[node] {
                let next = self.heads[e];
                let cand = d + edge_times[e];
                if cand < dist[next] {
                    dist[next] = cand;
                    heap.push(HeapEntry {
                        dist: cand,
                        node: next,
                    });
                }
            }
        }
        ShortestPathTree { origin, dist }
    }

    fn tight(&self, tree: &ShortestPathTree, e: usize, edge_times: &[f64]) -> bool {
        let (u, v) = (self.tails[e], self.heads[e]);
        let via = tree.dist[u] + edge_times[e];
        via.is_finite() && (via - tree.dist[v]).abs() <= TIE_REL_TOL * tree.dist[v].max(1.0)
    }

    /// Minimum-cost path to `destination`; among equal-cost paths the one
    /// with the lexicographically smallest node-id sequence.
    pub fn extract(
        &self,
        tree: &ShortestPathTree,
        destination: usize,
        edge_times: &[f64],
    ) -> Option<Route> {
        if !tree.dist[destination].is_finite() {
            return None;
        }
        // Nodes lying on at least one shortest path to the destination.
        let mut on_path = vec![false; self.node_ids.len()];
        let mut stack = vec![destination];
        on_path[destination] = true;
        while let Some(v) = stack.pop() {
            for &e in &self.in_edges[v] {
                let u = self.tails[e];
                if !on_path[u] && self.tight(tree, e, edge_times) {
                    on_path[u] = true;
                    stack.push(u);
                }
            }
        }

        let mut edges = Vec::new();
        let mut node = tree.origin;
        let mut cost = 0.0;
        while node != destination {
            let e = self.out_edges[node]
                .iter()
                .copied()
                .find(|&e| on_path[self.heads[e]] && self.tight(tree, e, edge_times))?;
            cost += edge_times[e];
            edges.push(e);
            node = self.heads[e];
        }
        Some(Route { edges, cost })
    }

    /// Dijkstra avoiding banned nodes and edges; ties resolve by heap order.
    fn restricted_path(
        &self,
        from: usize,
        to: usize,
        edge_times: &[f64],
        banned_nodes: &[bool],
        banned_edges: &[bool],
    ) -> Option<Vec<usize>> {
        let n = self.node_ids.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut pred: Vec<Option<usize>> = vec![None; n];
        let mut heap = BinaryHeap::new();
        dist[from] = 0.0;
        heap.push(HeapEntry { dist: 0.0, node: from });
        while let Some(HeapEntry { dist: d, node }) = heap.pop() {
            if d > dist[node] {
                continue;
            }
            if node == to {
                break;
            }
            for &e in &self.out_edges[node] {
                let next = self.heads[e];
                if banned_edges[e] || banned_nodes[next] {
                    continue;
                }
                let cand = d + edge_times[e];
                if cand < dist[next] {
                    dist[next] = cand;
                    pred[next] = Some(e);
                    heap.push(HeapEntry { dist: cand, node: next });
                }
            }
        }
        if !dist[to].is_finite() {
            return None;
        }
        let mut edges = Vec::new();
        let mut node = to;
        while node != from {
            let e = pred[node]?;
            edges.push(e);
            node = self.tails[e];
        }
        edges.reverse();
        Some(edges)
    }

    /// Up to `k` loopless paths in increasing cost order (Yen's algorithm),
    /// starting from the tie-broken shortest path.
    pub fn k_shortest(
        &self,
        tree: &ShortestPathTree,
        destination: usize,
        edge_times: &[f64],
        k: usize,
    ) -> Vec<Route> {
        let Some(first) = self.extract(tree, destination, edge_times) else {
            return Vec::new();
        };
        let cost = |edges: &[usize]| edges.iter().map(|&e| edge_times[e]).sum::<f64>();
        let mut found = vec![first];
        let mut candidates: Vec<Route> = Vec::new();
        let mut banned_nodes = vec![false; self.node_ids.len()];
        let mut banned_edges = vec![false; self.tails.len()];
        while found.len() < k {
            let prev = found.last().expect("nonempty").edges.clone();
            for i in 0..prev.len() {
                let root = &prev[..i];
                let spur = self.tails[prev[i]];
                banned_nodes.iter_mut().for_each(|b| *b = false);
                banned_edges.iter_mut().for_each(|b| *b = false);
                for p in &found {
                    if p.edges.len() > i && p.edges[..i] == *root {
                        banned_edges[p.edges[i]] = true;
                    }
                }
                for &e in root {
                    banned_nodes[self.tails[e]] = true;
                }
                let Some(tail) = self.restricted_path(spur, destination, edge_times, &banned_nodes, &banned_edges)
                else {
                    continue;
                };
                let mut edges = root.to_vec();
                edges.extend(tail);
                if !found.iter().chain(&candidates).any(|r| r.edges == edges) {
                    candidates.push(Route { cost: cost(&edges), edges });
                }
            }
            let Some(best) = candidates
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.cost.total_cmp(&b.1.cost).then_with(|| a.1.edges.cmp(&b.1.edges)))
                .map(|(i, _)| i)
            else {
                break;
            };
            found.push(candidates.swap_remove(best));
        }
        found
    }

    pub fn node_id(&self, index: usize) -> NodeId {
        self.node_ids[index]
    }
}

/// Minimum-cost path between two nodes under fixed positive edge times.
pub fn shortest_path(
    network: &Network,
    edge_times: &[f64],
    origin: NodeId,
    destination: NodeId,
) -> Result<Route> {
    if edge_times.len() != network.num_edges() {
        return Err(Error::Validation(format!(
            "{} edge times for {} edges",
            edge_times.len(),
            network.num_edges()
        )));
    }
    if let Some(t) = edge_times.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::Domain(format!("edge time {t} must be > 0")));
    }
    let idx = |id: NodeId| {
        network
            .node_index(id)
            .ok_or_else(|| Error::Validation(format!("unknown node {id}")))
    };
    let (o, d) = (idx(origin)?, idx(destination)?);
    let graph = RoutingGraph::new(network);
    let tree = graph.tree(o, edge_times);
    graph.extract(&tree, d, edge_times).ok_or(Error::NoPath {
        origin,
        destination,
    })
}

/// Column-generated paths and their flows for one OD pair.
#[derive(Debug, Clone, PartialEq)]
pub struct OdPaths {
    pub origin: usize,
    pub destination: usize,
    pub demand: f64,
    pub paths: Vec<Vec<usize>>,
    pub flows: Vec<f64>,
}

/// Path sets for every OD pair with positive demand; `origin`/`destination`
/// are zone indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PathSet {
    pub pairs: Vec<OdPaths>,
}

impl PathSet {
    /// Edge flows as the path-flow weighted sum of edge-path incidence.
    pub fn edge_flows(&self, num_edges: usize) -> Vec<f64> {
        let mut flows = vec![0.0; num_edges];
        for pair in &self.pairs {
            for (path, &f) in pair.paths.iter().zip(&pair.flows) {
                for &e in path {
                    flows[e] += f;
                }
            }
        }
        flows
    }

    pub fn num_paths(&self) -> usize {
        self.pairs.iter().map(|p| p.paths.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSolution {
    /// vehicles/h
    pub edge_flows: Vec<f64>,
    /// minutes
    pub edge_times: Vec<f64>,
    pub gap: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A solution together with the final path set and per-iteration gaps.
#[derive(Debug, Clone)]
pub struct SueRun {
    pub solution: EquilibriumSolution,
    pub paths: PathSet,
    pub gap_history: Vec<f64>,
}

pub fn solve_sue(
    network: &Network,
    od: &OdMatrix,
    speeds: &[f64],
    capacities: &[f64],
    config: &SolverConfig,
) -> Result<EquilibriumSolution> {
    solve_sue_detailed(network, od, speeds, capacities, config).map(|run| run.solution)
}

pub fn solve_sue_detailed(
    network: &Network,
    od: &OdMatrix,
    speeds: &[f64],
    capacities: &[f64],
    config: &SolverConfig,
) -> Result<SueRun> {
    config.validate()?;
    let m = network.num_edges();
    if od.num_zones() != network.num_zones() {
        return Err(Error::Validation(format!(
            "OD matrix has {} zones, network has {}",
            od.num_zones(),
            network.num_zones()
        )));
    }
    for (name, values) in [("speeds", speeds), ("capacities", capacities)] {
        if values.len() != m {
            return Err(Error::Validation(format!("{} {name} for {m} edges", values.len())));
        }
        if let Some(v) = values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Validation(format!("{name} entry {v} must be > 0")));
        }
    }
    let free_flow = network.free_flow_times(speeds);
    let params = config.params;

    if od.total() == 0.0 {
        return Ok(SueRun {
            solution: EquilibriumSolution {
                edge_flows: vec![0.0; m],
                edge_times: free_flow,
                gap: 0.0,
                iterations: 0,
                converged: true,
            },
            paths: PathSet::default(),
            gap_history: Vec::new(),
        });
    }

    let graph = RoutingGraph::new(network);
    let zone_nodes = network.zone_node_indices();
    let mut paths = PathSet {
        pairs: od
            .pairs()
            .filter(|&(r, s)| od.get(r, s) > 0.0)
            .map(|(r, s)| OdPaths {
                origin: r,
                destination: s,
                demand: od.get(r, s),
                paths: Vec::new(),
                flows: Vec::new(),
            })
            .collect(),
    };
    // pairs are grouped by origin zone, in ascending order
    let mut origin_ranges: Vec<(usize, std::ops::Range<usize>)> = Vec::new();
    for (k, pair) in paths.pairs.iter().enumerate() {
        match origin_ranges.last_mut() {
            Some((r, range)) if *r == pair.origin => range.end = k + 1,
            _ => origin_ranges.push((pair.origin, k..k + 1)),
        }
    }

    let mut flows = vec![0.0; m];
    let mut times = vec![0.0; m];
    let mut aux_path_flows: Vec<Vec<f64>> = vec![Vec::new(); paths.pairs.len()];
    let mut costs = Vec::new();
    let mut probs = Vec::new();
    let mut gap_history = Vec::with_capacity(config.max_iter);
    let mut gap = f64::INFINITY;
    let mut converged = false;
    let mut iterations = 0;
    // MSA step counter, restarted whenever the path set grows
    let mut k = 0usize;

    for n in 1..=config.max_iter + 1 {
        for e in 0..m {
            times[e] = bpr_unchecked(free_flow[e], flows[e], capacities[e], &params);
        }

        // column generation, skipped on the final gap-only evaluation
        let mut grew = false;
        if n <= config.max_iter {
            let seeds = if n == 1 { config.initial_paths } else { 1 };
            for (r, range) in &origin_ranges {
                let tree = graph.tree(zone_nodes[*r], &times);
                for pair in &mut paths.pairs[range.clone()] {
                    let routes = graph.k_shortest(&tree, zone_nodes[pair.destination], &times, seeds);
                    if routes.is_empty() {
                        return Err(Error::UnreachablePair {
                            origin: network.zone_ids()[pair.origin],
                            destination: network.zone_ids()[pair.destination],
                            demand: pair.demand,
                        });
                    }
                    for route in routes {
                        if !pair.paths.contains(&route.edges) {
                            pair.paths.push(route.edges);
                            pair.flows.push(0.0);
                            grew = true;
                        }
                    }
                }
            }
        }

        let mut aux = vec![0.0; m];
        for (pair, aux_flows) in paths.pairs.iter().zip(aux_path_flows.iter_mut()) {
            costs.clear();
            costs.extend(pair.paths.iter().map(|p| p.iter().map(|&e| times[e]).sum::<f64>()));
            logit_into(&costs, params.logit_theta, &mut probs);
            aux_flows.clear();
            aux_flows.extend(probs.iter().map(|p| p * pair.demand));
            for (path, &f) in pair.paths.iter().zip(aux_flows.iter()) {
                for &e in path {
                    aux[e] += f;
                }
            }
        }

        if n > 1 {
            let diff: f64 = aux.iter().zip(&flows).map(|(a, f)| (a - f).abs()).sum();
            let norm: f64 = flows.iter().sum();
            gap = diff / norm;
            gap_history.push(gap);
            if gap < config.gap_tol {
                converged = true;
                break;
            }
        }
        if n > config.max_iter {
            break;
        }

        k = if grew { 1 } else { k + 1 };
        let step = 1.0 / k as f64;
        for (pair, aux_flows) in paths.pairs.iter_mut().zip(&aux_path_flows) {
            for (f, a) in pair.flows.iter_mut().zip(aux_flows) {
                *f += step * (a - *f);
            }
        }
        flows = paths.edge_flows(m);
        iterations = n;
    }

    Ok(SueRun {
        solution: EquilibriumSolution {
            edge_flows: flows,
            edge_times: times,
            gap,
            iterations,
            converged,
        },
        paths,
        gap_history,
    })
}

/// Σ_e f_e · t_e(f_e), vehicle-minutes per hour.
pub fn total_system_time(solution: &EquilibriumSolution) -> f64 {
    solution
        .edge_flows
        .iter()
        .zip(&solution.edge_times)
        .map(|(f, t)| f * t)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bpr_values() {
        let p = CostParams::default();
        assert_eq!(bpr_time(10.0, 0.0, 100.0, &p).unwrap(), 10.0);
        assert_abs_diff_eq!(bpr_time(10.0, 100.0, 100.0, &p).unwrap(), 11.5, epsilon = 1e-12);
        // 10 * (1 + 0.15 * 2^4)
        assert_abs_diff_eq!(bpr_time(10.0, 200.0, 100.0, &p).unwrap(), 34.0, epsilon = 1e-12);
        assert!(matches!(bpr_time(0.0, 1.0, 1.0, &p), Err(Error::Domain(_))));
        assert!(matches!(bpr_time(1.0, 1.0, 0.0, &p), Err(Error::Domain(_))));
    }

    #[test]
    fn logit_values() {
        assert_eq!(logit_split(&[10.0, 10.0], 0.3).unwrap(), vec![0.5, 0.5]);
        let p = logit_split(&[1.0, 2.0], 1.0).unwrap();
        // 1 / (1 + e^-1)
        assert_abs_diff_eq!(p[0], 0.731_058_578_630_004_9, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.268_941_421_369_995_1, epsilon = 1e-12);
        let p = logit_split(&[10.0, 1000.0], 0.5).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert!(logit_split(&[], 1.0).is_err());
    }

    fn diamond() -> Network {
        // two routes 1->2->4 and 1->3->4
        parse_network(
            "NODES 4\nEDGES 4\nZONES 2\n1 1\n2 0\n3 0\n4 1\n\
             1 2 1 60 1000\n2 4 1 60 1000\n1 3 1 60 1000\n3 4 1 60 1000\n1\n4\n",
            "diamond",
        )
        .unwrap()
    }

    #[test]
    fn shortest_path_prefers_cheaper_route() {
        let n = diamond();
        let r = shortest_path(&n, &[1.0, 2.0, 2.0, 3.0], 1, 4).unwrap();
        assert_eq!(r.edges, vec![0, 1]);
        assert_abs_diff_eq!(r.cost, 3.0);
        let r = shortest_path(&n, &[3.0, 2.0, 1.0, 2.0], 1, 4).unwrap();
        assert_eq!(r.edges, vec![2, 3]);
    }

    #[test]
    fn ties_break_to_smaller_node_sequence() {
        let n = diamond();
        let r = shortest_path(&n, &[1.0, 2.0, 2.0, 1.0], 1, 4).unwrap();
        assert_eq!(r.edges, vec![0, 1], "1-2-4 precedes 1-3-4");
    }

    #[test]
    fn unreachable_destination() {
        let n = diamond();
        let err = shortest_path(&n, &[1.0; 4], 4, 1).unwrap_err();
        assert!(matches!(err, Error::NoPath { origin: 4, destination: 1 }));
    }

    #[test]
    fn zero_demand_gives_zero_flows() {
        let n = diamond();
        let od = OdMatrix::zeros(2);
        let s = solve_sue(&n, &od, &[60.0; 4], &[1000.0; 4], &SolverConfig::default()).unwrap();
        assert_eq!(s.edge_flows, vec![0.0; 4]);
        assert_eq!(s.gap, 0.0);
        assert!(s.converged);
    }

    #[test]
    fn symmetric_routes_split_evenly() {
        let n = diamond();
        let od = OdMatrix::from_rows(vec![vec![0.0, 1000.0], vec![0.0, 0.0]]).unwrap();
        let s = solve_sue(&n, &od, &[60.0; 4], &[1000.0; 4], &SolverConfig::default()).unwrap();
        for f in &s.edge_flows {
            assert_abs_diff_eq!(*f, 500.0, epsilon = 1.0);
        }
    }

    #[test]
    fn unreachable_pair_with_demand_is_an_error() {
        let n = diamond();
        let od = OdMatrix::from_rows(vec![vec![0.0, 0.0], vec![5.0, 0.0]]).unwrap();
        let err = solve_sue(&n, &od, &[60.0; 4], &[1000.0; 4], &SolverConfig::default()).unwrap_err();
        assert!(
            matches!(err, Error::UnreachablePair { origin: 4, destination: 1, .. }),
            "{err}"
        );
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = CostParams {
            logit_theta: 0.0,
            ..CostParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = CostParams {
            bpr_beta: 0.5,
            ..CostParams::default()
        };
        assert!(bad.validate().is_err());
    }

    /// Costs of every simple path by exhaustive search.
    fn all_simple_path_costs(net: &Network, times: &[f64], from: usize, to: usize) -> Vec<f64> {
        fn walk(net: &Network, times: &[f64], at: usize, to: usize, seen: &mut Vec<bool>, cost: f64, out: &mut Vec<f64>) {
            if at == to {
                out.push(cost);
                return;
            }
            for (e, (t, h)) in net.edge_index().into_iter().enumerate() {
                if t == at && !seen[h] {
                    seen[h] = true;
                    walk(net, times, h, to, seen, cost + times[e], out);
                    seen[h] = false;
                }
            }
        }
        let mut seen = vec![false; net.num_nodes()];
        seen[from] = true;
        let mut out = Vec::new();
        walk(net, times, from, to, &mut seen, 0.0, &mut out);
        out.sort_by(f64::total_cmp);
        out
    }

    #[test]
    fn k_shortest_matches_exhaustive_enumeration() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let n = 7;
            let mut text = format!("NODES {n}\n");
            let mut edges = Vec::new();
            for a in 1..=n {
                for b in 1..=n {
                    if a != b && rng.gen_bool(0.45) {
                        edges.push(format!("{a} {b} {} 60 1000", rng.gen_range(0.5..5.0)));
                    }
                }
            }
            text += &format!("EDGES {}\nZONES 2\n", edges.len());
            for id in 1..=n {
                text += &format!("{id} {}\n", u8::from(id == 1 || id == n));
            }
            text += &(edges.join("\n") + "\n1\n" + &n.to_string() + "\n");
            let net = parse_network(&text, "random").unwrap();
            let times = net.free_flow_times(&net.base_speeds());
            let graph = RoutingGraph::new(&net);
            let tree = graph.tree(0, &times);
            let want = all_simple_path_costs(&net, &times, 0, n - 1);
            let got = graph.k_shortest(&tree, n - 1, &times, 5);
            assert_eq!(got.len(), want.len().min(5));
            for (route, w) in got.iter().zip(&want) {
                assert!((route.cost - w).abs() < 1e-9, "{} vs {w}", route.cost);
                let sum: f64 = route.edges.iter().map(|&e| times[e]).sum();
                assert_eq!(sum, route.cost);
            }
        }
    }

    #[test]
    fn initial_paths_defaults_when_absent() {
        let cfg: SolverConfig =
            serde_json::from_str(r#"{"bpr_alpha":0.15,"bpr_beta":4.0,"logit_theta":0.5,"max_iter":200,"gap_tol":0.0001}"#).unwrap();
        assert_eq!(cfg.initial_paths, 3);
        let zero = SolverConfig {
            initial_paths: 0,
            ..cfg
        };
        assert!(zero.validate().is_err());
    }

    #[test]
    fn dominated_route_still_gets_logit_share() {
        // route 1->2->4 is 10 min, route 1->3->4 is 14 min and never becomes
        // shortest; seeding both gives the logit split e^{-2}/(1+e^{-2})
        let net = parse_network(
            "NODES 4\nEDGES 4\nZONES 2\n1 1\n2 0\n3 0\n4 1\n\
             1 2 5 60 1e9\n2 4 5 60 1e9\n1 3 7 60 1e9\n3 4 7 60 1e9\n1\n4\n",
            "dominated",
        )
        .unwrap();
        let od = OdMatrix::from_rows(vec![vec![0.0, 100.0], vec![0.0, 0.0]]).unwrap();
        let sol = solve_sue(&net, &od, &net.base_speeds(), &net.base_capacities(), &SolverConfig::default()).unwrap();
        let share = (-2.0f64).exp() / (1.0 + (-2.0f64).exp());
        assert_abs_diff_eq!(sol.edge_flows[2], 100.0 * share, epsilon = 1e-6);
    }
}
