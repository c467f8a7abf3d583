use ndarray::{Array1, Array2, Zip};

use super::mlp::{GradientSet, Mlp};
use crate::{Error, Result};

/// Bias-corrected Adam moments for one [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    step_count: u64,
    first_weights: Vec<Array2<f64>>,
    first_biases: Vec<Array1<f64>>,
    second_weights: Vec<Array2<f64>>,
    second_biases: Vec<Array1<f64>>,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon_stab: f64,
}

impl AdamState {
    pub fn new(mlp: &Mlp) -> Self {
        let zeros = GradientSet::zeros_like(mlp);
        AdamState {
            step_count: 0,
            first_weights: zeros.weights.clone(),
            first_biases: zeros.biases.clone(),
            second_weights: zeros.weights,
            second_biases: zeros.biases,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_stab: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one Adam update to `mlp` in place.
    pub fn step(&mut self, mlp: &mut Mlp, grads: &GradientSet, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::config(format!("learning rate must be positive, got {lr}")));
        }
        let shapes_match = grads.weights.len() == self.first_weights.len()
            && grads.biases.len() == self.first_biases.len()
            && mlp.weights().len() == self.first_weights.len()
            && grads
                .weights
                .iter()
                .zip(&self.first_weights)
                .zip(mlp.weights())
                .all(|((g, m), w)| g.dim() == m.dim() && w.dim() == m.dim())
            && grads
                .biases
                .iter()
                .zip(&self.first_biases)
                .zip(mlp.biases())
                .all(|((g, m), b)| g.len() == m.len() && b.len() == m.len());
        if !shapes_match {
            return Err(Error::shape("gradient, moment and parameter shapes disagree"));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon_stab);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);

        let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };

        for (j, w) in mlp.weights_mut().iter_mut().enumerate() {
            Zip::from(w)
                .and(&grads.weights[j])
                .and(&mut self.first_weights[j])
                .and(&mut self.second_weights[j])
                .for_each(update);
        }
        for (j, b) in mlp.biases_mut().iter_mut().enumerate() {
            Zip::from(b)
                .and(&grads.biases[j])
                .and(&mut self.first_biases[j])
                .and(&mut self.second_biases[j])
                .for_each(update);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::Activation;

    fn net() -> Mlp {
        Mlp::new(&[3, 4, 2], &[Activation::Relu, Activation::Identity], 5).unwrap()
    }

    #[test]
    fn first_step_moves_each_parameter_by_lr_against_the_gradient_sign() {
        let mut mlp = net();
        let before = mlp.clone();
        let mut grads = GradientSet::zeros_like(&mlp);
        for (j, w) in grads.weights.iter_mut().enumerate() {
            w.indexed_iter_mut()
                .for_each(|((r, c), g)| *g = if (r + c + j) % 2 == 0 { 0.7 } else { -2.5 });
        }
        grads.biases.iter_mut().for_each(|b| b.fill(0.01));
        let mut state = AdamState::new(&mlp);
        let lr = 0.03;
        state.step(&mut mlp, &grads, lr).unwrap();
        // m̂ = g and v̂ = g², so the step is lr·g/(|g|+eps)
        for j in 0..mlp.layer_count() {
            for ((after, before), g) in mlp.weights()[j]
                .iter()
                .zip(before.weights()[j].iter())
                .zip(grads.weights[j].iter())
            {
                let expected = -lr * g / (g.abs() + 1e-8);
                assert!((after - before - expected).abs() < 1e-12);
                assert!(((after - before).abs() - lr).abs() < 1e-8);
            }
        }
        assert_eq!(state.step_count(), 1);
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut mlp = net();
        let before = mlp.clone();
        let mut state = AdamState::new(&mlp);
        let zeros = GradientSet::zeros_like(&mlp);
        for expected in 1..=3 {
            state.step(&mut mlp, &zeros, 3e-5).unwrap();
            assert_eq!(state.step_count(), expected);
        }
        assert_eq!(mlp, before);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut mlp = net();
        let mut state = AdamState::new(&mlp);
        let grads = GradientSet::zeros_like(&mlp);
        assert!(state.step(&mut mlp, &grads, 0.0).is_err());
        assert!(state.step(&mut mlp, &grads, -1e-3).is_err());

        let mut bad = grads.clone();
        bad.weights[0][(0, 0)] = f64::NAN;
        assert!(matches!(
            state.step(&mut mlp, &bad, 1e-3),
            Err(Error::NonFinite(_))
        ));

        let other = Mlp::new(&[3, 5, 2], &[Activation::Relu, Activation::Identity], 5).unwrap();
        let wrong = GradientSet::zeros_like(&other);
        assert!(matches!(
            state.step(&mut mlp, &wrong, 1e-3),
            Err(Error::Shape(_))
        ));
        assert_eq!(state.step_count(), 0);
    }
}
