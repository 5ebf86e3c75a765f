//! Fixtures shared by the benchmarks.

use ndarray::Array2;
use suenet::dataset::FeatureTensors;
use suenet::{Network, OdMatrix};

/// Sioux Falls with every input at the middle of its sampling range.
pub fn sioux_falls_midrange() -> (Network, OdMatrix, Vec<f64>, Vec<f64>) {
    let n = Network::sioux_falls();
    let mut od = OdMatrix::zeros(n.num_zones());
    let pairs: Vec<_> = od.pairs().collect();
    for (r, s) in pairs {
        od.set(r, s, 750.0);
    }
    let m = n.num_edges();
    (n, od, vec![62.5; m], vec![15_000.0; m])
}

/// Deterministic normalized-looking samples on the Sioux Falls topology.
pub fn synthetic_samples(network: &Network, count: usize) -> Vec<FeatureTensors> {
    let t = network.topology();
    let (v, z, m) = (t.num_nodes, t.num_zones(), t.num_edges());
    let wave = |a: usize, b: usize, c: usize| ((a * 31 + b * 17 + c * 7) % 101) as f64 / 100.0;
    (0..count)
        .map(|k| {
            let mut node_features = Array2::zeros((v, z));
            for (row, &node) in t.zone_nodes.iter().enumerate() {
                for col in 0..z {
                    if row != col {
                        node_features[[node, col]] = wave(k, row, col);
                    }
                }
            }
            FeatureTensors {
                scenario_id: k as u64,
                node_features,
                edge_features: Array2::from_shape_fn((m, 3), |(e, f)| wave(k, e, f)),
                edge_index: t.edge_index.clone(),
                targets: (0..m).map(|e| wave(k, e, 5)).collect(),
            }
        })
        .collect()
}
