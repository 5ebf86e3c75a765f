//! Dense 64-bit tensors with reverse-mode differentiation, AdamW and losses.

mod graph;
mod optim;
mod params;

pub use graph::{l1_loss, mse_loss, Gradients, Graph, Var};
pub use optim::{AdamW, AdamWConfig};
pub use params::ParamSet;


#[cfg(test)]
mod tests {
    use super::gradcheck::max_rel_error;
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        // keep away from the kinks of relu and abs
        Array2::from_shape_simple_fn((rows, cols), || {
            let v: f64 = rng.gen_range(0.1..1.5);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
    }

    const H: f64 = 1e-5;
    const TOL: f64 = 1e-5;

    #[test]
    fn relu_forward_and_mask() {
        let mut g = Graph::new();
        let x = g.variable(array![[-1.0, 2.0]]);
        let y = g.relu(x);
        assert_eq!(g.value(y), array![[0.0, 2.0]]);
        let s = g.sum(y);
        let grads = g.backward(s);
        assert_eq!(grads.get(x).unwrap(), array![[0.0, 1.0]]);
    }

    #[test]
    fn scatter_sum_definition() {
        let mut g = Graph::new();
        let x = g.constant(array![[1.0], [2.0], [3.0]]);
        let idx = [0, 0, 1];
        let y = g.scatter_sum(x, &idx, 2).unwrap();
        assert_eq!(g.value(y), array![[3.0], [3.0]]);
    }

    #[test]
    fn scatter_then_gather_on_distinct_indices_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random(4, 3, &mut rng);
        let idx = [2, 0, 5, 3];
        let mut g = Graph::new();
        let x = g.constant(data.clone());
        let s = g.scatter_sum(x, &idx, 6).unwrap();
        let back = g.gather(s, &idx).unwrap();
        assert_eq!(g.value(back), data);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::new();
        let a = g.constant(Array2::zeros((2, 3)));
        let b = g.constant(Array2::zeros((2, 3)));
        match g.matmul(a, b) {
            Err(crate::Error::Shape { op, detail }) => {
                assert_eq!(op, "matmul");
                assert!(detail.contains("2x3"));
            }
            _ => panic!("expected shape error"),
        }
        assert!(g.add_row(a, b).is_err());
        let idx = [5];
        assert!(g.gather(a, &idx).is_err());
    }

    #[test]
    fn matmul_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let inputs = [random(4, 3, &mut rng), random(3, 2, &mut rng)];
        let err = max_rel_error(&inputs, H, &|g, v| g.matmul(v[0], v[1]).unwrap());
        assert!(err < 1e-6, "matmul rel err {err}");
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..3 {
            let (r, c) = (2 + trial, 3 + trial);
            let inputs = [random(r, c, &mut rng), random(r, c, &mut rng)];
            let cases: Vec<(&str, Box<dyn Fn(&mut Graph<'_>, &[Var]) -> Var>)> = vec![
                ("add", Box::new(|g, v| g.add(v[0], v[1]).unwrap())),
                ("sub", Box::new(|g, v| g.sub(v[0], v[1]).unwrap())),
                ("mul", Box::new(|g, v| g.mul(v[0], v[1]).unwrap())),
                ("div", Box::new(|g, v| g.div(v[0], v[1]).unwrap())),
                ("relu", Box::new(|g, v| g.relu(v[0]))),
                ("sigmoid", Box::new(|g, v| g.sigmoid(v[0]))),
                ("abs", Box::new(|g, v| g.abs(v[0]))),
                ("square", Box::new(|g, v| g.square(v[0]))),
                ("scale", Box::new(|g, v| g.scale(v[0], -1.7))),
                ("add_scalar", Box::new(|g, v| g.add_scalar(v[0], 0.3))),
                ("mean", Box::new(|g, v| g.mean(v[0]))),
                ("abs_sum", Box::new(|g, v| g.abs_sum(v[0]))),
                (
                    "weighted",
                    Box::new(|g, v| {
                        // nonlinear composite so the sum seed is not uniform
                        let s = g.sigmoid(v[1]);
                        let m = g.mul(v[0], s).unwrap();
                        g.square(m)
                    }),
                ),
            ];
            for (name, f) in cases {
                let err = max_rel_error(&inputs, H, f.as_ref());
                assert!(err < TOL, "{name} rel err {err}");
            }
        }
    }

    #[test]
    fn structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x = random(5, 3, &mut rng);
        let bias = random(1, 3, &mut rng);
        let y = random(5, 2, &mut rng);
        let w = random(5, 3, &mut rng);
        let idx: Vec<usize> = vec![4, 0, 0, 2, 3, 1, 4];
        let scatter_idx: Vec<usize> = vec![1, 1, 0, 3, 2];
        let weights: Vec<f64> = vec![0.5, -1.0, 2.0, 0.25, 1.5];

        let err = max_rel_error(&[x.clone(), bias.clone(), w.clone()], H, &|g, v| {
            let a = g.add_row(v[0], v[1]).unwrap();
            let a = g.sigmoid(a);
            g.mul(a, v[2]).unwrap()
        });
        assert!(err < TOL, "add_row rel err {err}");

        let err = max_rel_error(&[x.clone(), y.clone()], H, &|g, v| {
            let c = g.concat_cols(&[v[0], v[1], v[0]]).unwrap();
            g.square(c)
        });
        assert!(err < TOL, "concat rel err {err}");

        let err = max_rel_error(std::slice::from_ref(&x), H, &|g, v| {
            let gth = g.gather(v[0], &idx).unwrap();
            g.square(gth)
        });
        assert!(err < TOL, "gather rel err {err}");

        let err = max_rel_error(std::slice::from_ref(&x), H, &|g, v| {
            let sc = g.scatter_sum(v[0], &scatter_idx, 4).unwrap();
            g.square(sc)
        });
        assert!(err < TOL, "scatter rel err {err}");

        let err = max_rel_error(std::slice::from_ref(&x), H, &|g, v| {
            let sr = g.scale_rows(v[0], &weights).unwrap();
            g.square(sr)
        });
        assert!(err < TOL, "scale_rows rel err {err}");
    }

    #[test]
    fn losses() {
        let mut g = Graph::new();
        let p = g.constant(array![[1.0], [2.0]]);
        let t = g.constant(array![[1.0], [4.0]]);
        let l = l1_loss(&mut g, p, t).unwrap();
        assert_eq!(g.value(l)[[0, 0]], 1.0);
        let l0 = l1_loss(&mut g, p, p).unwrap();
        assert_eq!(g.value(l0)[[0, 0]], 0.0);

        let p = g.constant(array![[1.0], [1.0]]);
        let t = g.constant(array![[0.0], [2.0]]);
        let m = mse_loss(&mut g, p, t).unwrap();
        assert_eq!(g.value(m)[[0, 0]], 1.0);
        let bad = g.constant(Array2::zeros((3, 1)));
        assert!(matches!(
            l1_loss(&mut g, p, bad),
            Err(crate::Error::Shape { op: "l1_loss", .. })
        ));
    }

    #[test]
    fn l1_subgradient_at_zero_is_zero() {
        let mut g = Graph::new();
        let p = g.variable(array![[2.0, 3.0]]);
        let t = g.constant(array![[2.0, 1.0]]);
        let l = l1_loss(&mut g, p, t).unwrap();
        let grads = g.backward(l);
        assert_eq!(grads.get(p).unwrap(), array![[0.0, 0.5]]);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let inputs = [random(6, 1, &mut rng), random(6, 1, &mut rng)];
        let err = max_rel_error(&inputs, H, &|g, v| mse_loss(g, v[0], v[1]).unwrap());
        assert!(err < 1e-6, "mse rel err {err}");
        let err = max_rel_error(&inputs, H, &|g, v| l1_loss(g, v[0], v[1]).unwrap());
        assert!(err < 1e-6, "l1 rel err {err}");
    }

    #[test]
    fn reused_tensor_accumulates_gradients() {
        // f(x) = sum(x * x + 3x)  =>  df/dx = 2x + 3
        let mut g = Graph::new();
        let x = g.variable(array![[1.0, -2.0]]);
        let sq = g.mul(x, x).unwrap();
        let lin = g.scale(x, 3.0);
        let total = g.add(sq, lin).unwrap();
        let s = g.sum(total);
        let grads = g.backward(s);
        let gx = grads.get(x).unwrap();
        assert_abs_diff_eq!(gx[[0, 0]], 5.0);
        assert_abs_diff_eq!(gx[[0, 1]], -1.0);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(array![[1.0]]);
        let x = g.variable(array![[2.0]]);
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap()[[0, 0]], 1.0);
    }
}
