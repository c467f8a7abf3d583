//! Scalar objectives over network outputs.

use ndarray::{Array2, ArrayView2, Zip};

use super::mlp::{Activation, GradientSet, Mlp, OutputGrad};
use crate::{Error, Result};

/// A scalar objective evaluated on the network output for a batch.
pub enum Loss<'a> {
    /// Mean of squared differences over every output entry.
    Mse(ArrayView2<'a, f64>),
    /// Cross-entropy against target probabilities. Categorical when the final
    /// layer is softmax, element-wise binary when it is sigmoid. Averaged over
    /// rows.
    CrossEntropy(ArrayView2<'a, f64>),
    /// Any reduction of the output batch that reports its own value and its
    /// gradient with respect to the outputs.
    Reduction(&'a dyn Fn(ArrayView2<f64>) -> (f64, Array2<f64>)),
}

fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x)
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Evaluates `loss` on `mlp(batch)` and returns the exact gradient of it with
/// respect to all parameters, and with respect to the batch when
/// `want_input_grads` is set.
pub fn loss_and_grads(
    mlp: &Mlp,
    batch: ArrayView2<f64>,
    loss: &Loss<'_>,
    want_input_grads: bool,
) -> Result<(f64, GradientSet)> {
    let trace = mlp.forward_traced(batch)?;
    let out = trace.output();
    let rows = out.nrows().max(1) as f64;

    let check_target = |t: &ArrayView2<f64>| -> Result<()> {
        if t.dim() != out.dim() {
            return Err(Error::shape(format!(
                "target has shape {:?}, output has shape {:?}",
                t.dim(),
                out.dim()
            )));
        }
        Ok(())
    };

    let (value, seed) = match loss {
        Loss::Mse(target) => {
            check_target(target)?;
            let count = out.len().max(1) as f64;
            let diff = out - target;
            let value = diff.iter().map(|d| d * d).sum::<f64>() / count;
            (value, OutputGrad::Output(diff * (2.0 / count)))
        }
        Loss::CrossEntropy(target) => {
            check_target(target)?;
            let pre = trace.last_pre_activation();
            let last = *mlp.activations().last().unwrap();
            let value = match last {
                Activation::Softmax => {
                    let mut total = 0.0;
                    for (z, y) in pre.rows().into_iter().zip(target.rows()) {
                        let max = z.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                        let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
                        total -= Zip::from(&z)
                            .and(&y)
                            .fold(0.0, |acc, &zv, &yv| acc + yv * (zv - lse));
                    }
                    total / rows
                }
                Activation::Sigmoid => {
                    let total = Zip::from(pre).and(target).fold(0.0, |acc, &z, &y| {
                        acc - (y * log_sigmoid(z) + (1.0 - y) * log_sigmoid(-z))
                    });
                    total / rows
                }
                other => {
                    return Err(Error::UnsupportedLoss(format!(
                        "cross-entropy needs a softmax or sigmoid output layer, found {}",
                        other.name()
                    )))
                }
            };
            let mut grad = out.to_owned();
            if last == Activation::Softmax {
                for (mut g, y) in grad.rows_mut().into_iter().zip(target.rows()) {
                    let mass = y.sum();
                    Zip::from(&mut g).and(&y).for_each(|p, &yv| *p = *p * mass - yv);
                }
            } else {
                grad -= target;
            }
            grad /= rows;
            (value, OutputGrad::PreActivation(grad))
        }
        Loss::Reduction(f) => {
            let (value, grad) = f(out.view());
            if grad.dim() != out.dim() {
                return Err(Error::shape(format!(
                    "reduction gradient has shape {:?}, output has shape {:?}",
                    grad.dim(),
                    out.dim()
                )));
            }
            (value, OutputGrad::Output(grad))
        }
    };

    let grads = mlp.backward(&trace, seed, true, want_input_grads)?;
    Ok((value, grads))
}
