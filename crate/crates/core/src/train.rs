//! Mini-batch AdamW training with early stopping on validation MAE.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{l1_loss, mse_loss, AdamW, AdamWConfig, Graph};
use crate::dataset::FeatureTensors;
use crate::error::{Error, Result};
use crate::eval::mean_absolute_error;
use crate::models::{forward_params, Model, ModelConfig, ModelKind};
use crate::network::Topology;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    L1,
    Mse,
}

impl LossKind {
    pub fn default_for(kind: ModelKind) -> Self {
        match kind {
            ModelKind::Mlp => LossKind::Mse,
            _ => LossKind::L1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub early_stop_patience: usize,
    pub seed: u64,
    /// Defaults to L1 for graph models and MSE for the MLP.
    pub loss: Option<LossKind>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            weight_decay: 0.0,
            early_stop_patience: 20,
            seed: 0,
            loss: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Validation("epochs and batch_size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::Validation(format!(
                "lr must be positive and weight_decay non-negative (lr {}, weight_decay {})",
                self.lr, self.weight_decay
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the batch losses.
    pub train_loss: f64,
    pub val_mae: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub stopped_early: bool,
    pub loss: LossKind,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation MAE.
    pub model: Model,
    pub log: TrainLog,
}

pub fn train(
    config: ModelConfig,
    topology: &Topology,
    train_set: &[FeatureTensors],
    val_set: &[FeatureTensors],
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    tc.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::Validation("training needs nonempty train and val splits".into()));
    }
    let loss_kind = tc.loss.unwrap_or_else(|| LossKind::default_for(config.kind()));
    let mut model = Model::init(config, topology.clone(), tc.seed)?;
    let mut opt = AdamW::new(
        AdamWConfig {
            lr: tc.lr,
            weight_decay: tc.weight_decay,
            ..AdamWConfig::default()
        },
        model.params.values(),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    rng.set_stream(1);
    let val_targets: Vec<Vec<f64>> = val_set.iter().map(|s| s.targets.clone()).collect();

    let mut best = model.params.clone();
    let mut best_epoch = 0;
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;
    let mut stopped_early = false;
    let mut epochs = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let samples: Vec<&FeatureTensors> = chunk.iter().map(|&i| &train_set[i]).collect();
            let batch = model.batch(&samples)?;
            let (loss, grads) = {
                let mut g = Graph::new();
                let (pred, vars) = forward_params(&model.config, &model.params, &mut g, &batch)?;
                let target = g.constant_ref(&batch.targets);
                let loss = match loss_kind {
                    LossKind::L1 => l1_loss(&mut g, pred, target)?,
                    LossKind::Mse => mse_loss(&mut g, pred, target)?,
                };
                let value = g.value(loss)[[0, 0]];
                if !value.is_finite() {
                    return Err(Error::NonFiniteLoss { epoch, batch: b });
                }
                let mut grads = g.backward(loss);
                let grads: Vec<_> = vars
                    .iter()
                    .zip(model.params.values())
                    .map(|(&v, p)| grads.take_or_zeros(v, p.dim()))
                    .collect();
                (value, grads)
            };
            opt.step(model.params.values_mut(), &grads)?;
            loss_sum += loss;
            batches += 1;
        }
        if !model.params.is_finite() {
            return Err(Error::NonFiniteLoss { epoch, batch: batches });
        }

        let val_mae = mean_absolute_error(&model.predict(val_set)?, &val_targets)?;
        let train_loss = loss_sum / batches as f64;
        log::debug!("{} epoch {epoch}: train loss {train_loss:.6}, val MAE {val_mae:.6}", model.kind());
        epochs.push(EpochLog {
            epoch,
            train_loss,
            val_mae,
        });
        if val_mae < best_val {
            best_val = val_mae;
            best_epoch = epoch;
            best = model.params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > tc.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }

    model.params = best;
    Ok(TrainOutcome {
        model,
        log: TrainLog {
            epochs,
            best_epoch,
            best_val_mae: best_val,
            stopped_early,
            loss: loss_kind,
        },
    })
}
