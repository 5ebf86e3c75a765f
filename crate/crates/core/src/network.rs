//! Directed road graph, traffic zones and origin-destination demand.
//!
//! Networks are read from a small line-oriented text format:
//!
//! ```text
//! # comments and blank lines are ignored
//! NODES <n>
//! EDGES <m>
//! ZONES <z>
//! <id> <is_centroid 0|1>                                  (n lines)
//! <from> <to> <length_km> <base_speed_kmh> <capacity_vph> (m lines)
//! <zone node id>                                          (z lines)
//! ```
//!
//! Zone order in the file is the canonical zone order used by OD matrices
//! and node feature rows.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub type NodeId = u32;

const SIOUX_FALLS: &str = include_str!("../data/sioux_falls.net");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: NodeId,
    pub is_centroid: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub from: NodeId,
    pub to: NodeId,
    /// km
    pub length: f64,
    /// km/h
    pub base_speed: f64,
    /// vehicles/h
    pub base_capacity: f64,
}

impl EdgeRecord {
    /// Free-flow travel time in minutes at the given speed.
    pub fn free_flow_time(&self, speed_kmh: f64) -> f64 {
        60.0 * self.length / speed_kmh
    }
}

/// Validated, immutable road network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    nodes: Vec<NodeRecord>,
    edges: Vec<EdgeRecord>,
    zone_ids: Vec<NodeId>,
    node_index: HashMap<NodeId, usize>,
}

impl Network {
    pub fn new(
        nodes: Vec<NodeRecord>,
        edges: Vec<EdgeRecord>,
        zone_ids: Vec<NodeId>,
    ) -> Result<Self> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, node) in nodes.iter().enumerate() {
            if node_index.insert(node.id, i).is_some() {
                return Err(Error::Validation(format!("duplicate node id {}", node.id)));
            }
        }

        let mut seen_pairs = HashSet::with_capacity(edges.len());
        for (k, e) in edges.iter().enumerate() {
            for end in [e.from, e.to] {
                if !node_index.contains_key(&end) {
                    return Err(Error::Validation(format!(
                        "edge {k} ({} -> {}) references missing node {end}",
                        e.from, e.to
                    )));
                }
            }
            if e.from == e.to {
                return Err(Error::Validation(format!("edge {k} is a self-loop on node {}", e.from)));
            }
            if !seen_pairs.insert((e.from, e.to)) {
                return Err(Error::Validation(format!(
                    "duplicate edge {} -> {}",
                    e.from, e.to
                )));
            }
            for (name, v) in [
                ("length", e.length),
                ("base_speed", e.base_speed),
                ("base_capacity", e.base_capacity),
            ] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Validation(format!(
                        "edge {k} ({} -> {}) has non-positive {name} {v}",
                        e.from, e.to
                    )));
                }
            }
        }

        let mut zone_set = HashSet::with_capacity(zone_ids.len());
        for &z in &zone_ids {
            if !node_index.contains_key(&z) {
                return Err(Error::Validation(format!("zone {z} is not a node")));
            }
            if !zone_set.insert(z) {
                return Err(Error::Validation(format!("duplicate zone {z}")));
            }
        }
        for node in &nodes {
            if node.is_centroid != zone_set.contains(&node.id) {
                return Err(Error::Validation(format!(
                    "node {} centroid flag disagrees with the zone list",
                    node.id
                )));
            }
        }

        Ok(Network {
            nodes,
            edges,
            zone_ids,
            node_index,
        })
    }

    /// The bundled 24-node, 76-link Sioux Falls instance with 11 zones.
    pub fn sioux_falls() -> Self {
        parse_network(SIOUX_FALLS, "<bundled sioux_falls.net>")
            .expect("bundled Sioux Falls network is valid")
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn edges(&self) -> &[EdgeRecord] {
        &self.edges
    }

    pub fn zone_ids(&self) -> &[NodeId] {
        &self.zone_ids
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_zones(&self) -> usize {
        self.zone_ids.len()
    }

    pub fn node_index(&self, id: NodeId) -> Option<usize> {
        self.node_index.get(&id).copied()
    }

    /// Node index of each zone, in zone order.
    pub fn zone_node_indices(&self) -> Vec<usize> {
        self.zone_ids.iter().map(|z| self.node_index[z]).collect()
    }

    /// (tail, head) node indices for every edge.
    pub fn edge_index(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .map(|e| (self.node_index[&e.from], self.node_index[&e.to]))
            .collect()
    }

    pub fn topology(&self) -> Topology {
        Topology {
            num_nodes: self.num_nodes(),
            edge_index: self.edge_index(),
            zone_nodes: self.zone_node_indices(),
        }
    }

    pub fn base_speeds(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.base_speed).collect()
    }

    pub fn base_capacities(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.base_capacity).collect()
    }

    /// Free-flow times in minutes for per-edge speeds.
    pub fn free_flow_times(&self, speeds: &[f64]) -> Vec<f64> {
        self.edges
            .iter()
            .zip(speeds)
            .map(|(e, &s)| e.free_flow_time(s))
            .collect()
    }

    /// Hex SHA-256 of the canonical text serialization.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(write_network(self).as_bytes()))
    }
}

/// Index-level view of the graph structure shared by feature assembly and models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    pub num_nodes: usize,
    pub edge_index: Vec<(usize, usize)>,
    /// Node index of each zone, in zone order.
    pub zone_nodes: Vec<usize>,
}

impl Topology {
    pub fn num_edges(&self) -> usize {
        self.edge_index.len()
    }

    pub fn num_zones(&self) -> usize {
        self.zone_nodes.len()
    }

    pub fn adjacency(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.num_nodes, self.num_nodes));
        for &(i, j) in &self.edge_index {
            a[[i, j]] = 1.0;
        }
        a
    }

    pub fn incidence(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.num_nodes, self.num_edges()));
        for (e, &(tail, head)) in self.edge_index.iter().enumerate() {
            m[[tail, e]] = -1.0;
            m[[head, e]] = 1.0;
        }
        m
    }
}

/// |V|×|V| 0/1 matrix; entry (i, j) is 1 iff edge i→j exists.
pub fn adjacency(network: &Network) -> Array2<f64> {
    network.topology().adjacency()
}

/// |V|×|E| matrix with −1 at each edge's tail and +1 at its head.
pub fn incidence(network: &Network) -> Array2<f64> {
    network.topology().incidence()
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::io(format!("reading network {}", path.display()), e))?;
    parse_network(&text, &path.display().to_string())
}

pub fn parse_network(text: &str, source: &str) -> Result<Network> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let mut header = |key: &str| -> Result<usize> {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, format!("missing `{key}` header")))?;
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(v), None) if k == key => v
                .parse()
                .map_err(|_| parse_err(no, format!("invalid count `{v}` for {key}"))),
            _ => Err(parse_err(no, format!("expected `{key} <count>`, found `{line}`"))),
        }
    };
    let n_nodes = header("NODES")?;
    let n_edges = header("EDGES")?;
    let n_zones = header("ZONES")?;

    fn field<T: std::str::FromStr>(
        parts: &[&str],
        i: usize,
        name: &str,
        no: usize,
        err: &dyn Fn(usize, String) -> Error,
    ) -> Result<T> {
        let raw = parts
            .get(i)
            .ok_or_else(|| err(no, format!("missing field `{name}`")))?;
        raw.parse()
            .map_err(|_| err(no, format!("invalid {name} `{raw}`")))
    }

    let mut next_record = |what: &str, arity: usize| -> Result<(usize, Vec<&str>)> {
        let (no, line) = lines
            .next()
            .ok_or_else(|| parse_err(0, format!("unexpected end of file while reading {what}")))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != arity {
            return Err(parse_err(
                no,
                format!("{what} line needs {arity} fields, found {}", parts.len()),
            ));
        }
        Ok((no, parts))
    };

    let mut nodes = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (no, p) = next_record("node", 2)?;
        let id = field(&p, 0, "node id", no, &parse_err)?;
        let flag: u8 = field(&p, 1, "is_centroid", no, &parse_err)?;
        if flag > 1 {
            return Err(parse_err(no, format!("is_centroid must be 0 or 1, found {flag}")));
        }
        nodes.push(NodeRecord {
            id,
            is_centroid: flag == 1,
        });
    }

    let mut edges = Vec::with_capacity(n_edges);
    for _ in 0..n_edges {
        let (no, p) = next_record("edge", 5)?;
        edges.push(EdgeRecord {
            from: field(&p, 0, "from", no, &parse_err)?,
            to: field(&p, 1, "to", no, &parse_err)?,
            length: field(&p, 2, "length", no, &parse_err)?,
            base_speed: field(&p, 3, "base_speed", no, &parse_err)?,
            base_capacity: field(&p, 4, "base_capacity", no, &parse_err)?,
        });
    }

    let mut zone_ids = Vec::with_capacity(n_zones);
    for _ in 0..n_zones {
        let (no, p) = next_record("zone", 1)?;
        zone_ids.push(field(&p, 0, "zone id", no, &parse_err)?);
    }

    if let Some((no, line)) = lines.next() {
        return Err(parse_err(no, format!("unexpected trailing content `{line}`")));
    }

    Network::new(nodes, edges, zone_ids)
}

/// Canonical text serialization; `parse_network` reads it back unchanged.
pub fn write_network(network: &Network) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "NODES {}", network.num_nodes());
    let _ = writeln!(out, "EDGES {}", network.num_edges());
    let _ = writeln!(out, "ZONES {}", network.num_zones());
    for n in network.nodes() {
        let _ = writeln!(out, "{} {}", n.id, u8::from(n.is_centroid));
    }
    for e in network.edges() {
        let _ = writeln!(
            out,
            "{} {} {:?} {:?} {:?}",
            e.from, e.to, e.length, e.base_speed, e.base_capacity
        );
    }
    for z in network.zone_ids() {
        let _ = writeln!(out, "{z}");
    }
    out
}

/// Trips between zones, indexed in the network's zone order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OdMatrix {
    zones: usize,
    demand: Vec<f64>,
}

impl OdMatrix {
    pub fn zeros(zones: usize) -> Self {
        OdMatrix {
            zones,
            demand: vec![0.0; zones * zones],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let zones = rows.len();
        let mut demand = Vec::with_capacity(zones * zones);
        for (r, row) in rows.into_iter().enumerate() {
            if row.len() != zones {
                return Err(Error::Validation(format!(
                    "OD row {r} has {} entries, expected {zones}",
                    row.len()
                )));
            }
            demand.extend(row);
        }
        let od = OdMatrix { zones, demand };
        od.validate()?;
        Ok(od)
    }

    fn validate(&self) -> Result<()> {
        for r in 0..self.zones {
            for s in 0..self.zones {
                let q = self.get(r, s);
                if !(q.is_finite() && q >= 0.0) {
                    return Err(Error::Validation(format!("OD entry ({r}, {s}) = {q} is not >= 0")));
                }
                if r == s && q != 0.0 {
                    return Err(Error::Validation(format!("OD diagonal entry ({r}, {r}) = {q} is not 0")));
                }
            }
        }
        Ok(())
    }

    pub fn num_zones(&self) -> usize {
        self.zones
    }

    pub fn get(&self, origin: usize, destination: usize) -> f64 {
        self.demand[origin * self.zones + destination]
    }

    /// Sets an off-diagonal entry. Panics on a diagonal or negative value.
    pub fn set(&mut self, origin: usize, destination: usize, trips: f64) {
        assert!(origin != destination, "diagonal OD entries are fixed at 0");
        assert!(trips >= 0.0, "OD demand must be non-negative");
        self.demand[origin * self.zones + destination] = trips;
    }

    pub fn row(&self, origin: usize) -> &[f64] {
        &self.demand[origin * self.zones..(origin + 1) * self.zones]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.demand
    }

    pub fn total(&self) -> f64 {
        self.demand.iter().sum()
    }

    /// Off-diagonal (origin, destination) pairs in row-major order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let z = self.zones;
        (0..z).flat_map(move |r| (0..z).filter(move |&s| s != r).map(move |s| (r, s)))
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.zones).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn to_csv(&self, zone_ids: &[NodeId]) -> String {
        let mut out = String::from("zone");
        for z in zone_ids {
            let _ = write!(out, ",{z}");
        }
        out.push('\n');
        for (r, z) in zone_ids.iter().enumerate() {
            let _ = write!(out, "{z}");
            for q in self.row(r) {
                let _ = write!(out, ",{q:?}");
            }
            out.push('\n');
        }
        out
    }

    /// Parses a CSV with zone ids as header row and first column; the ids
    /// must match `zone_ids` in order.
    pub fn from_csv(text: &str, zone_ids: &[NodeId]) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: "<od csv>".into(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty OD csv".into()))?;
        let ids: Vec<&str> = header.split(',').skip(1).map(str::trim).collect();
        let expected: Vec<String> = zone_ids.iter().map(|z| z.to_string()).collect();
        if ids != expected {
            return Err(err(1, "OD header does not match the network zone order".into()));
        }
        let mut rows = Vec::with_capacity(zone_ids.len());
        for (i, line) in lines {
            let mut cells = line.split(',').map(str::trim);
            let label = cells.next().unwrap_or_default();
            if label != expected.get(rows.len()).map(String::as_str).unwrap_or("") {
                return Err(err(i + 1, format!("unexpected row label `{label}`")));
            }
            let row = cells
                .map(|c| c.parse::<f64>().map_err(|_| err(i + 1, format!("invalid demand `{c}`"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.len() != zone_ids.len() {
            return Err(err(0, format!("expected {} OD rows, found {}", zone_ids.len(), rows.len())));
        }
        OdMatrix::from_rows(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node() -> Network {
        parse_network("NODES 2\nEDGES 1\nZONES 2\n1 1\n2 1\n1 2 1.5 50 1000\n1\n2\n", "t").unwrap()
    }

    #[test]
    fn minimal_graph() {
        let n = two_node();
        assert_eq!(n.num_nodes(), 2);
        assert_eq!(n.num_edges(), 1);
        assert_eq!(adjacency(&n), ndarray::array![[0.0, 1.0], [0.0, 0.0]]);
        assert_eq!(incidence(&n), ndarray::array![[-1.0], [1.0]]);
    }

    #[test]
    fn empty_edge_set_gives_zero_adjacency() {
        let n = parse_network("NODES 3\nEDGES 0\nZONES 0\n1 0\n2 0\n3 0\n", "t").unwrap();
        assert!(adjacency(&n).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sioux_falls_dimensions() {
        let n = Network::sioux_falls();
        assert_eq!((n.num_nodes(), n.num_edges(), n.num_zones()), (24, 76, 11));
        let a = adjacency(&n);
        assert_eq!(a.dim(), (24, 24));
        assert_eq!(a.iter().filter(|&&v| v != 0.0).count(), 76);
        let m = incidence(&n);
        assert_eq!(m.dim(), (24, 76));
        assert_eq!(m.iter().filter(|&&v| v != 0.0).count(), 152);
        for col in m.columns() {
            assert_eq!(col.sum(), 0.0);
        }
    }

    #[test]
    fn missing_node_is_rejected() {
        let err = parse_network("NODES 2\nEDGES 1\nZONES 0\n1 0\n2 0\n1 3 1 50 1000\n", "t").unwrap_err();
        assert!(matches!(err, Error::Validation(ref m) if m.contains("missing node 3")), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = parse_network("NODES 2\nEDGES 1\nZONES 0\n1 0\n2 0\n1 2 x 50 1000\n", "f.net").unwrap_err();
        match err {
            Error::Parse { line, ref message, .. } => {
                assert_eq!(line, 6);
                assert!(message.contains("length"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn invariants_enforced() {
        let self_loop = "NODES 1\nEDGES 1\nZONES 0\n1 0\n1 1 1 50 1000\n";
        assert!(parse_network(self_loop, "t").is_err());
        let dup = "NODES 2\nEDGES 2\nZONES 0\n1 0\n2 0\n1 2 1 50 1000\n1 2 2 50 1000\n";
        assert!(parse_network(dup, "t").is_err());
        let flag = "NODES 2\nEDGES 0\nZONES 1\n1 0\n2 0\n1\n";
        assert!(parse_network(flag, "t").is_err());
        let dup_zone = "NODES 2\nEDGES 0\nZONES 2\n1 1\n2 0\n1\n1\n";
        assert!(parse_network(dup_zone, "t").is_err());
    }

    #[test]
    fn sioux_falls_roundtrip() {
        let n = Network::sioux_falls();
        let again = parse_network(&write_network(&n), "rt").unwrap();
        assert_eq!(n, again);
    }

    #[test]
    fn od_csv_roundtrip() {
        let n = two_node();
        let od = OdMatrix::from_rows(vec![vec![0.0, 12.5], vec![3.0, 0.0]]).unwrap();
        let back = OdMatrix::from_csv(&od.to_csv(n.zone_ids()), n.zone_ids()).unwrap();
        assert_eq!(od, back);
        assert!(OdMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.0, 0.0]]).is_err());
        assert!(OdMatrix::from_rows(vec![vec![0.0, -1.0], vec![0.0, 0.0]]).is_err());
    }
}
