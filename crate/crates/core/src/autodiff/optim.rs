use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Adam with decoupled weight decay. Moment buffers are shaped like the
/// parameters they track.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    step: u64,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Array2<f64>]) -> Self {
        AdamW {
            config,
            step: 0,
            first: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
            second: params.iter().map(|p| Array2::zeros(p.dim())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(Error::shape(
                "adamw_step",
                format!(
                    "{} params, {} grads, {} moment buffers",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            ));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.dim() != g.dim() {
                return Err(Error::shape(
                    "adamw_step",
                    format!("param {:?} vs grad {:?}", p.dim(), g.dim()),
                ));
            }
        }
        self.step += 1;
        let AdamWConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let decay = 1.0 - lr * weight_decay;
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = vec![array![[1.0, -2.0]]];
        let mut opt = AdamW::new(AdamWConfig::default(), &params);
        opt.step(&mut params, &[array![[0.0, 0.0]]]).unwrap();
        assert_eq!(params[0], array![[1.0, -2.0]]);
    }

    #[test]
    fn single_step_matches_hand_computation() {
        // m = 0.1 g, v = 0.001 g², m̂ = g, v̂ = g²  =>  Δ = -lr · g / (|g| + eps)
        let g = 0.5;
        let mut params = vec![array![[2.0]]];
        let mut opt = AdamW::new(AdamWConfig::default(), &params);
        opt.step(&mut params, &[array![[g]]]).unwrap();
        let expected = 2.0 - 1e-3 * g / (g + 1e-8);
        assert_abs_diff_eq!(params[0][[0, 0]], expected, epsilon = 1e-15);

        // with weight decay the parameter first shrinks by (1 - lr·wd)
        let cfg = AdamWConfig {
            weight_decay: 0.1,
            ..AdamWConfig::default()
        };
        let mut params = vec![array![[2.0]]];
        let mut opt = AdamW::new(cfg, &params);
        opt.step(&mut params, &[array![[g]]]).unwrap();
        let expected = 2.0 * (1.0 - 1e-4) - 1e-3 * g / (g + 1e-8);
        assert_abs_diff_eq!(params[0][[0, 0]], expected, epsilon = 1e-15);
    }

    #[test]
    fn deterministic_runs() {
        let run = || {
            let mut params = vec![array![[0.3, 0.1], [-0.2, 0.7]]];
            let mut opt = AdamW::new(AdamWConfig::default(), &params);
            for k in 0..5 {
                let g = params[0].mapv(|x| x * (k as f64 + 1.0) - 0.1);
                opt.step(&mut params, &[g]).unwrap();
            }
            params
        };
        assert_eq!(run(), run());
    }
}
