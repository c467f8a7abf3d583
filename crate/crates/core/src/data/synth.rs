use ndarray::Array2;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::oracle::analytic_oracle;
use crate::{Error, Result};

/// Feature distribution for synthetic datasets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampling {
    /// Uniform in `[−half_width, half_width]^n`.
    Uniform { half_width: f64 },
    /// Uniform in the cube with the ball `‖x‖ < radius` rejected.
    UniformExcludingBall { half_width: f64, radius: f64 },
}

impl Default for Sampling {
    fn default() -> Self {
        Sampling::UniformExcludingBall {
            half_width: 1.0,
            radius: 0.1,
        }
    }
}

/// `m` samples of width `n` labelled by the registered analytic oracle
/// `oracle_id`.
pub fn synth_dataset(
    oracle_id: &str,
    n: usize,
    m: usize,
    sampling: Sampling,
    seed: u64,
) -> Result<Dataset> {
    let oracle = analytic_oracle(oracle_id)?;
    if m == 0 {
        return Err(Error::Empty("synthetic dataset with zero samples".into()));
    }
    if n != oracle.input_width() {
        return Err(Error::shape(format!(
            "oracle {oracle_id} takes width {}, requested {n}",
            oracle.input_width()
        )));
    }
    let (half, radius) = match sampling {
        Sampling::Uniform { half_width } => (half_width, 0.0),
        Sampling::UniformExcludingBall { half_width, radius } => (half_width, radius),
    };
    if !(half > 0.0) || radius < 0.0 || radius >= half {
        return Err(Error::config(format!(
            "cannot sample the cube of half-width {half} outside radius {radius}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = Array2::zeros((m, n));
    for mut row in features.rows_mut() {
        loop {
            row.mapv_inplace(|_| rng.random_range(-half..=half));
            if row.dot(&row) >= radius * radius {
                break;
            }
        }
    }
    let targets = oracle.evaluate(features.view())?;
    Dataset::new(features, targets, None)
}
