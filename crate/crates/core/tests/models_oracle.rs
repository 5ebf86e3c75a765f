//! Model forward passes against straightforward loop implementations.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use suenet::autodiff::ParamSet;
use suenet::dataset::FeatureTensors;
use suenet::models::{param_layout, GatedGcnConfig, GcnConfig, Model, ModelConfig};
use suenet::Topology;

type Mat = Vec<Vec<f64>>;

fn to_mat(a: &Array2<f64>) -> Mat {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// x · W + b for each row of x.
fn affine(x: &Mat, params: &ParamSet, name: &str) -> Mat {
    let w = to_mat(params.get(&format!("{name}.w")).unwrap());
    let b = to_mat(params.get(&format!("{name}.b")).unwrap()).remove(0);
    x.iter()
        .map(|row| {
            (0..b.len())
                .map(|j| b[j] + row.iter().zip(&w).map(|(xi, wi)| xi * wi[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn random_params(config: &ModelConfig, topology: &Topology, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = ParamSet::new();
    for (name, (r, c)) in param_layout(config, topology) {
        p.insert(name, Array2::from_shape_simple_fn((r, c), || rng.gen_range(-0.6..0.6)));
    }
    p
}

fn sample(topology: &Topology, rng: &mut ChaCha8Rng) -> FeatureTensors {
    let z = topology.num_zones();
    let m = topology.num_edges();
    let mut node_features = Array2::zeros((topology.num_nodes, z));
    for (row, &v) in topology.zone_nodes.iter().enumerate() {
        for col in 0..z {
            node_features[[v, col]] = if row == col { 0.0 } else { rng.gen_range(0.0..1.0) };
        }
    }
    FeatureTensors {
        scenario_id: 0,
        node_features,
        edge_features: Array2::from_shape_simple_fn((m, 3), || rng.gen_range(0.0..1.0)),
        edge_index: topology.edge_index.clone(),
        targets: vec![0.0; m],
    }
}

fn gatedgcn_oracle(cfg: &GatedGcnConfig, p: &ParamSet, t: &Topology, s: &FeatureTensors) -> Vec<f64> {
    let mut h = affine(&to_mat(&s.node_features), p, "enc.node");
    let e0 = affine(&to_mat(&s.edge_features), p, "enc.edge");
    let mut e = e0.clone();
    let d = cfg.hidden_dim;
    for l in 0..cfg.num_layers {
        let ah = affine(&h, p, &format!("layer{l}.a"));
        let bh = affine(&h, p, &format!("layer{l}.b"));
        let ce = affine(&e, p, &format!("layer{l}.c"));
        let uh = affine(&h, p, &format!("layer{l}.u"));
        let vh = affine(&h, p, &format!("layer{l}.v"));
        let mut e_new = e.clone();
        for (k, &(a, b)) in t.edge_index.iter().enumerate() {
            for j in 0..d {
                e_new[k][j] += relu(ah[a][j] + bh[b][j] + ce[k][j]);
            }
        }
        let mut num = vec![vec![0.0; d]; t.num_nodes];
        let mut den = vec![vec![0.0; d]; t.num_nodes];
        for (k, &(a, b)) in t.edge_index.iter().enumerate() {
            for j in 0..d {
                let gate = sigmoid(e_new[k][j]);
                num[b][j] += gate * vh[a][j];
                den[b][j] += gate;
            }
        }
        for v in 0..t.num_nodes {
            for j in 0..d {
                h[v][j] += relu(uh[v][j] + num[v][j] / (den[v][j] + cfg.gate_eps));
            }
        }
        e = e_new;
    }
    decoder(p, t, &h, Some(&e0))
}

fn decoder(p: &ParamSet, t: &Topology, h: &Mat, e0: Option<&Mat>) -> Vec<f64> {
    let z: Mat = t
        .edge_index
        .iter()
        .enumerate()
        .map(|(k, &(a, b))| {
            let mut row = h[a].clone();
            row.extend(&h[b]);
            if let Some(e0) = e0 {
                row.extend(&e0[k]);
            }
            row
        })
        .collect();
    let hidden: Mat = affine(&z, p, "dec.0")
        .into_iter()
        .map(|r| r.into_iter().map(relu).collect())
        .collect();
    affine(&hidden, p, "dec.1").into_iter().map(|r| r[0]).collect()
}

fn gcn_oracle(cfg: &GcnConfig, p: &ParamSet, t: &Topology, s: &FeatureTensors) -> Vec<f64> {
    // Â = D^-1/2 (A + Aᵀ + I, binarized) D^-1/2
    let n = t.num_nodes;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for &(u, v) in &t.edge_index {
        a[u][v] = 1.0;
        a[v][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|r| r.iter().sum()).collect();
    let mut h = affine(&to_mat(&s.node_features), p, "enc.node");
    for l in 0..cfg.num_layers {
        let hw = affine(&h, p, &format!("layer{l}"));
        let bias = to_mat(p.get(&format!("layer{l}.b")).unwrap()).remove(0);
        // affine() already added the bias once per row; undo before propagating
        let hw: Mat = hw
            .into_iter()
            .map(|r| r.iter().zip(&bias).map(|(x, b)| x - b).collect())
            .collect();
        h = (0..n)
            .map(|i| {
                (0..cfg.hidden_dim)
                    .map(|j| {
                        let s: f64 = (0..n).map(|k| a[i][k] / (deg[i] * deg[k]).sqrt() * hw[k][j]).sum();
                        relu(s + bias[j])
                    })
                    .collect()
            })
            .collect();
    }
    decoder(p, t, &h, None)
}

fn path_topology() -> Topology {
    Topology {
        num_nodes: 3,
        edge_index: vec![(0, 1), (1, 2), (2, 1), (1, 0)],
        zone_nodes: vec![0, 2],
    }
}

fn mesh_topology() -> Topology {
    Topology {
        num_nodes: 6,
        edge_index: vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (0, 3), (4, 1), (2, 5), (1, 0)],
        zone_nodes: vec![0, 3, 4],
    }
}

fn assert_close(got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len());
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()), "got {got:?}\nwant {want:?}");
    }
}

#[test]
fn gatedgcn_matches_loop_oracle_on_three_node_path() {
    let t = path_topology();
    let cfg = GatedGcnConfig {
        hidden_dim: 3,
        num_layers: 2,
        decoder_hidden: 4,
        ..GatedGcnConfig::default()
    };
    let config = ModelConfig::Gatedgcn(cfg.clone());
    let params = random_params(&config, &t, 1);
    let model = Model::from_parts(config, t.clone(), params.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let s = sample(&t, &mut rng);
    let got = model.predict(std::slice::from_ref(&s)).unwrap().remove(0);
    assert_close(&got, &gatedgcn_oracle(&cfg, &params, &t, &s));
}

#[test]
fn gatedgcn_matches_loop_oracle_on_batches() {
    let t = mesh_topology();
    let cfg = GatedGcnConfig {
        hidden_dim: 5,
        num_layers: 3,
        decoder_hidden: 6,
        ..GatedGcnConfig::default()
    };
    let config = ModelConfig::Gatedgcn(cfg.clone());
    let params = random_params(&config, &t, 3);
    let model = Model::from_parts(config, t.clone(), params.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    // more than one inference chunk
    let samples: Vec<FeatureTensors> = (0..40).map(|_| sample(&t, &mut rng)).collect();
    let got = model.predict(&samples).unwrap();
    for (s, pred) in samples.iter().zip(&got) {
        assert_close(pred, &gatedgcn_oracle(&cfg, &params, &t, s));
    }
}

#[test]
fn gcn_matches_dense_normalized_adjacency() {
    let t = mesh_topology();
    let cfg = GcnConfig {
        hidden_dim: 4,
        num_layers: 3,
        decoder_hidden: 5,
    };
    let config = ModelConfig::Gcn(cfg.clone());
    let params = random_params(&config, &t, 5);
    let model = Model::from_parts(config, t.clone(), params.clone()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let samples: Vec<FeatureTensors> = (0..5).map(|_| sample(&t, &mut rng)).collect();
    let got = model.predict(&samples).unwrap();
    for (s, pred) in samples.iter().zip(&got) {
        assert_close(pred, &gcn_oracle(&cfg, &params, &t, s));
    }
}

#[test]
fn predictions_do_not_depend_on_batch_composition() {
    let t = mesh_topology();
    let model = Model::init(ModelConfig::Gatedgcn(GatedGcnConfig::default()), t.clone(), 9).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let samples: Vec<FeatureTensors> = (0..3).map(|_| sample(&t, &mut rng)).collect();
    let together = model.predict(&samples).unwrap();
    for (i, s) in samples.iter().enumerate() {
        let alone = model.predict(std::slice::from_ref(s)).unwrap().remove(0);
        assert_eq!(alone, together[i]);
    }
}

#[test]
fn non_zone_rows_are_read_by_the_graph_model() {
    // assembled data keeps these rows at zero; the architecture still reads them
    let t = mesh_topology();
    let model = Model::init(ModelConfig::Gatedgcn(GatedGcnConfig::default()), t.clone(), 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let s = sample(&t, &mut rng);
    let base = model.predict(std::slice::from_ref(&s)).unwrap();
    for node in (0..t.num_nodes).filter(|v| !t.zone_nodes.contains(v)) {
        let mut changed = s.clone();
        changed.node_features.row_mut(node).fill(0.7);
        assert_ne!(model.predict(&[changed]).unwrap(), base, "node {node}");
    }
}
