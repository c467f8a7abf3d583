//! Independent numerical oracles shared by the integration tests.
#![allow(dead_code)]

use ndarray::{Array1, Array2, ArrayView2};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symflow::diffcore::{Activation, Mlp};

pub fn random_batch(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
}

/// Random network with 1 to 3 layers and widths up to 16.
pub fn random_small_net(seed: u64) -> Mlp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let layers = rng.random_range(1..=3usize);
    let mut sizes = vec![rng.random_range(1..=16usize)];
    let mut acts = Vec::new();
    for j in 0..layers {
        sizes.push(rng.random_range(1..=16usize));
        let pick = rng.random_range(0..4usize);
        acts.push(match (j + 1 == layers, pick) {
            (false, 0 | 1) => Activation::Relu,
            (false, _) => Activation::Sigmoid,
            (true, 0) => Activation::Softmax,
            (true, 1) => Activation::Sigmoid,
            (true, 2) => Activation::Relu,
            (true, _) => Activation::Identity,
        });
    }
    let mut net = Mlp::new(&sizes, &acts, seed).unwrap();
    // non-zero biases so that every code path sees them
    for b in net.biases_mut() {
        b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    net
}

pub fn mse(out: ArrayView2<f64>, target: ArrayView2<f64>) -> f64 {
    let d = &out - &target;
    d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64
}

/// Central differences of `f` with respect to every weight and bias of `net`,
/// in the same layer order as `GradientSet`.
pub fn fd_param_grads(
    net: &Mlp,
    h: f64,
    f: impl Fn(&Mlp) -> f64,
) -> (Vec<Array2<f64>>, Vec<Array1<f64>>) {
    let mut probe = net.clone();
    let mut wg = Vec::new();
    let mut bg = Vec::new();
    for j in 0..net.layer_count() {
        let mut g = Array2::zeros(net.weights()[j].raw_dim());
        for idx in ndarray::indices(net.weights()[j].raw_dim()) {
            let orig = probe.weights()[j][idx];
            probe.weights_mut()[j][idx] = orig + h;
            let up = f(&probe);
            probe.weights_mut()[j][idx] = orig - h;
            let down = f(&probe);
            probe.weights_mut()[j][idx] = orig;
            g[idx] = (up - down) / (2.0 * h);
        }
        wg.push(g);
        let mut g = Array1::zeros(net.biases()[j].len());
        for i in 0..g.len() {
            let orig = probe.biases()[j][i];
            probe.biases_mut()[j][i] = orig + h;
            let up = f(&probe);
            probe.biases_mut()[j][i] = orig - h;
            let down = f(&probe);
            probe.biases_mut()[j][i] = orig;
            g[i] = (up - down) / (2.0 * h);
        }
        bg.push(g);
    }
    (wg, bg)
}

/// Central differences of a scalar function of a matrix.
pub fn fd_matrix_grad(x: &Array2<f64>, h: f64, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut probe = x.clone();
    let mut g = Array2::zeros(x.raw_dim());
    for idx in ndarray::indices(x.raw_dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

/// Relative error with a floor so that tiny gradients do not blow it up.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs().max(b.abs())).max(1e-6)
}

/// Central-difference Jacobian of a point map, shape `(n_out, n_in)`.
pub fn fd_jacobian(
    point: &Array1<f64>,
    h: f64,
    f: impl Fn(&Array1<f64>) -> Array1<f64>,
) -> Array2<f64> {
    let n_out = f(point).len();
    let mut jac = Array2::zeros((n_out, point.len()));
    let mut probe = point.clone();
    for c in 0..point.len() {
        let orig = probe[c];
        probe[c] = orig + h;
        let up = f(&probe);
        probe[c] = orig - h;
        let down = f(&probe);
        probe[c] = orig;
        jac.column_mut(c).assign(&((up - down) / (2.0 * h)));
    }
    jac
}
