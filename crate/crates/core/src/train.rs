//! Shared supervised training loop (autoencoder and classifier).

use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{loss_and_grads, rows, AdamState, Loss, Mlp};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// `None` trains full-batch; otherwise fixed-size batches drawn from a
    /// fresh shuffle every epoch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            epochs: 500,
            batch_size: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Objective {
    Mse,
    CrossEntropy,
}

/// Runs Adam on `mlp` and returns the sample-weighted mean loss of each epoch.
pub(crate) fn fit(
    mlp: &mut Mlp,
    inputs: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    objective: Objective,
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if inputs.nrows() != targets.nrows() {
        return Err(Error::shape(format!(
            "{} inputs but {} targets",
            inputs.nrows(),
            targets.nrows()
        )));
    }
    if inputs.nrows() == 0 {
        return Err(Error::Empty("training set".into()));
    }
    if cfg.batch_size == Some(0) {
        return Err(Error::config("batch size must be positive"));
    }
    let m = inputs.nrows();
    let batch = cfg.batch_size.unwrap_or(m).min(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(mlp);
    let mut order: Vec<usize> = (0..m).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        if batch < m {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for chunk in order.chunks(batch) {
            let (x, y): (Array2<f64>, Array2<f64>);
            let (xv, yv) = if batch == m {
                (inputs, targets)
            } else {
                x = rows(inputs, chunk);
                y = rows(targets, chunk);
                (x.view(), y.view())
            };
            let loss = match objective {
                Objective::Mse => Loss::Mse(yv),
                Objective::CrossEntropy => Loss::CrossEntropy(yv),
            };
            let (value, grads) = loss_and_grads(mlp, xv, &loss, false)?;
            if !value.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    what: format!("loss {value}"),
                });
            }
            adam.step(mlp, &grads, cfg.lr)?;
            total += value * chunk.len() as f64;
        }
        history.push(total / m as f64);
    }
    Ok(history)
}
