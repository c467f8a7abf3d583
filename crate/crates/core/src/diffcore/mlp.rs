//! Dense feed-forward networks with hand-written reverse-mode differentiation.
//!
//! Each layer computes `y = activation(x Wᵀ + b)` on a batch `x` whose rows
//! are samples. Weights are stored with shape `(out, in)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Sigmoid => "sigmoid",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "relu" => Some(Activation::Relu),
            "sigmoid" => Some(Activation::Sigmoid),
            "softmax" => Some(Activation::Softmax),
            "identity" => Some(Activation::Identity),
            _ => None,
        }
    }

    pub(crate) fn apply(self, mut pre: Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => pre,
            Activation::Relu => {
                pre.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
                pre
            }
            Activation::Sigmoid => {
                pre.mapv_inplace(sigmoid);
                pre
            }
            Activation::Softmax => {
                for mut row in pre.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                    row.mapv_inplace(|v| (v - max).exp());
                    let total = row.sum();
                    row.mapv_inplace(|v| v / total);
                }
                pre
            }
        }
    }

    /// Maps a gradient with respect to the activation output onto the
    /// pre-activation. `post` is the activation output for the same batch.
    pub(crate) fn backprop(
        self,
        pre: &Array2<f64>,
        post: &Array2<f64>,
        mut grad: Array2<f64>,
    ) -> Array2<f64> {
        match self {
            Activation::Identity => grad,
            Activation::Relu => {
                // subgradient at exactly zero is zero
                ndarray::Zip::from(&mut grad)
                    .and(pre)
                    .for_each(|g, &p| {
                        if p <= 0.0 {
                            *g = 0.0
                        }
                    });
                grad
            }
            Activation::Sigmoid => {
                ndarray::Zip::from(&mut grad)
                    .and(post)
                    .for_each(|g, &s| *g *= s * (1.0 - s));
                grad
            }
            Activation::Softmax => {
                for (mut g, s) in grad.rows_mut().into_iter().zip(post.rows()) {
                    let dot = g.dot(&s);
                    ndarray::Zip::from(&mut g)
                        .and(&s)
                        .for_each(|gv, &sv| *gv = sv * (*gv - dot));
                }
                grad
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A fully connected network: architecture plus trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_sizes: Vec<usize>,
    activations: Vec<Activation>,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
    seed: u64,
}

/// Gradients of a scalar with respect to every parameter of an [`Mlp`], and
/// optionally with respect to the input batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
    pub input: Option<Array2<f64>>,
}

impl GradientSet {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        GradientSet {
            weights: mlp.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            biases: mlp.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            input: None,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && self.biases.iter().all(|b| b.iter().all(|v| v.is_finite()))
            && self
                .input
                .as_ref()
                .is_none_or(|x| x.iter().all(|v| v.is_finite()))
    }

    /// Adds `other` into `self`, parameter by parameter.
    pub fn accumulate(&mut self, other: &GradientSet) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            *a += b;
        }
    }
}

/// Intermediate values of a forward pass, kept for the backward sweep.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `inputs[j]` is the input to layer `j`.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl Trace {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Pre-activation values of the final layer.
    pub fn last_pre_activation(&self) -> &Array2<f64> {
        self.pre.last().expect("mlp has at least one layer")
    }
}

/// Where the backward sweep is seeded.
#[derive(Debug, Clone)]
pub enum OutputGrad {
    /// Gradient with respect to the network output.
    Output(Array2<f64>),
    /// Gradient with respect to the final pre-activation (skips the last
    /// activation; used by fused softmax/sigmoid cross-entropy).
    PreActivation(Array2<f64>),
}

impl Mlp {
    /// Builds a network with Glorot-uniform weights and zero biases, drawn
    /// from a ChaCha8 stream seeded by `seed`.
    pub fn new(layer_sizes: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::config(format!(
                "an mlp needs at least an input and an output layer, got {} sizes",
                layer_sizes.len()
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        if activations.len() != layer_sizes.len() - 1 {
            return Err(Error::config(format!(
                "expected {} activations, got {}",
                layer_sizes.len() - 1,
                activations.len()
            )));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(activations.len());
        let mut biases = Vec::with_capacity(activations.len());
        for pair in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_simple_fn((fan_out, fan_in), || {
                rng.random_range(-limit..=limit)
            });
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }

        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            activations: activations.to_vec(),
            weights,
            biases,
            seed,
        })
    }

    /// Assembles a network from explicit parameters, validating shapes.
    pub fn from_parts(
        activations: Vec<Activation>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        seed: u64,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() || weights.len() != activations.len()
        {
            return Err(Error::shape(format!(
                "{} weight matrices, {} bias vectors, {} activations",
                weights.len(),
                biases.len(),
                activations.len()
            )));
        }
        let mut layer_sizes = vec![weights[0].ncols()];
        for (j, (w, b)) in weights.iter().zip(&biases).enumerate() {
            if w.ncols() != *layer_sizes.last().unwrap() {
                return Err(Error::shape(format!(
                    "layer {j} expects width {}, previous layer produces {}",
                    w.ncols(),
                    layer_sizes.last().unwrap()
                )));
            }
            if b.len() != w.nrows() {
                return Err(Error::shape(format!(
                    "layer {j} bias has length {}, expected {}",
                    b.len(),
                    w.nrows()
                )));
            }
            if w.nrows() == 0 || w.ncols() == 0 {
                return Err(Error::config("layer sizes must be positive"));
            }
            layer_sizes.push(w.nrows());
        }
        Ok(Mlp {
            layer_sizes,
            activations,
            weights,
            biases,
            seed,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn weights_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [Array1<f64>] {
        &mut self.biases
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// FNV-1a over the bit patterns of every parameter. Equal checksums on
    /// the same network mean nothing was modified.
    pub fn checksum(&self) -> u64 {
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        let params = self
            .weights
            .iter()
            .flat_map(|w| w.iter())
            .chain(self.biases.iter().flat_map(|b| b.iter()));
        for v in params {
            for byte in v.to_bits().to_le_bytes() {
                hash ^= byte as u64;
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }

    fn check_width(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::shape(format!(
                "network expects input width {}, got {width}",
                self.input_width()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(batch.ncols())?;
        let mut x = batch.to_owned();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let pre = x.dot(&w.t()) + b;
            x = act.apply(pre);
        }
        Ok(x)
    }

    pub fn forward_point(&self, point: ArrayView1<f64>) -> Result<Array1<f64>> {
        let batch = point.insert_axis(Axis(0));
        Ok(self.forward(batch)?.row(0).to_owned())
    }

    /// Forward pass that keeps every layer input and pre-activation.
    pub fn forward_traced(&self, batch: ArrayView2<f64>) -> Result<Trace> {
        self.check_width(batch.ncols())?;
        let mut inputs = Vec::with_capacity(self.layer_count());
        let mut pre = Vec::with_capacity(self.layer_count());
        let mut x = batch.to_owned();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let z = x.dot(&w.t()) + b;
            inputs.push(x);
            x = act.apply(z.clone());
            pre.push(z);
        }
        Ok(Trace {
            inputs,
            pre,
            output: x,
        })
    }

    /// Reverse sweep over a recorded trace.
    pub fn backward(
        &self,
        trace: &Trace,
        seed: OutputGrad,
        want_params: bool,
        want_input: bool,
    ) -> Result<GradientSet> {
        let last = self.layer_count() - 1;
        let mut grad = match seed {
            OutputGrad::Output(g) => {
                check_same_shape(&g, &trace.output, "output gradient")?;
                self.activations[last].backprop(&trace.pre[last], &trace.output, g)
            }
            OutputGrad::PreActivation(g) => {
                check_same_shape(&g, &trace.pre[last], "pre-activation gradient")?;
                g
            }
        };

        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut input = None;
        for j in (0..=last).rev() {
            if want_params {
                weights.push(grad.t().dot(&trace.inputs[j]));
                biases.push(grad.sum_axis(Axis(0)));
            }
            if j == 0 {
                if want_input {
                    input = Some(grad.dot(&self.weights[0]));
                }
                break;
            }
            let upstream = grad.dot(&self.weights[j]);
            grad = self.activations[j - 1].backprop(
                &trace.pre[j - 1],
                &trace.inputs[j],
                upstream,
            );
        }
        weights.reverse();
        biases.reverse();
        Ok(GradientSet {
            weights,
            biases,
            input,
        })
    }

    /// Vector-Jacobian product with respect to the input batch:
    /// row `i` of the result is `J(x_i)ᵀ upstream_i`.
    pub fn input_vjp(&self, batch: ArrayView2<f64>, upstream: Array2<f64>) -> Result<Array2<f64>> {
        let trace = self.forward_traced(batch)?;
        let grads = self.backward(&trace, OutputGrad::Output(upstream), false, true)?;
        Ok(grads.input.expect("input gradient requested"))
    }

    /// Jacobian of the output with respect to the input at `point`,
    /// shape `(n_out, n_in)`.
    pub fn jacobian(&self, point: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check_width(point.len())?;
        let mut jac = Array2::<f64>::eye(self.input_width());
        let mut x = point.to_owned();
        for ((w, b), act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let pre = w.dot(&x) + b;
            jac = w.dot(&jac);
            match act {
                Activation::Identity => x = pre,
                Activation::Relu => {
                    for (r, &p) in pre.iter().enumerate() {
                        if p <= 0.0 {
                            jac.row_mut(r).fill(0.0);
                        }
                    }
                    x = pre.mapv(|v| if v > 0.0 { v } else { 0.0 });
                }
                Activation::Sigmoid => {
                    x = pre.mapv(sigmoid);
                    for (r, &s) in x.iter().enumerate() {
                        jac.row_mut(r).mapv_inplace(|v| v * s * (1.0 - s));
                    }
                }
                Activation::Softmax => {
                    let probs = Activation::Softmax
                        .apply(pre.insert_axis(Axis(0)))
                        .index_axis_move(Axis(0), 0);
                    // (diag(p) - p pᵀ) J
                    let weighted = probs.dot(&jac);
                    let mut next = jac.clone();
                    for (r, &p) in probs.iter().enumerate() {
                        let mut row = next.row_mut(r);
                        row -= &weighted;
                        row *= p;
                    }
                    jac = next;
                    x = probs;
                }
            }
        }
        Ok(jac)
    }

    /// Replaces every parameter with zero. Mostly useful in tests.
    pub fn zero_parameters(&mut self) {
        self.weights.iter_mut().for_each(|w| w.fill(0.0));
        self.biases.iter_mut().for_each(|b| b.fill(0.0));
    }

    /// Splits into the first `layers` layers and the rest, keeping the
    /// parameters of each.
    pub fn split_at(&self, layers: usize) -> Result<(Mlp, Mlp)> {
        if layers == 0 || layers >= self.layer_count() {
            return Err(Error::config(format!(
                "cannot split {} layers after layer {layers}",
                self.layer_count()
            )));
        }
        let part = |r: std::ops::Range<usize>| {
            Mlp::from_parts(
                self.activations[r.clone()].to_vec(),
                self.weights[r.clone()].to_vec(),
                self.biases[r].to_vec(),
                self.seed,
            )
        };
        Ok((part(0..layers)?, part(layers..self.layer_count())?))
    }
}

fn check_same_shape(a: &Array2<f64>, b: &Array2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "{what} has shape {:?}, expected {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// Gathers the rows listed in `idx` into an owned matrix.
pub(crate) fn rows(batch: ArrayView2<f64>, idx: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((idx.len(), batch.ncols()));
    for (dst, &src) in idx.iter().enumerate() {
        out.row_mut(dst).assign(&batch.row(src));
    }
    out
}
