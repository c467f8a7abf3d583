//! Oracles: the maps whose output a symmetry must conserve.
//!
//! An oracle is either a registered closed-form function on feature space or
//! a classifier trained on latent vectors. Learned oracles are immutable once
//! trained.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::Dataset;
use crate::diffcore::{read_checkpoint, write_checkpoint, Activation, Mlp, OutputGrad};
use crate::train::{fit, Objective, TrainConfig};
use crate::{Error, Result};

/// Registered closed-form oracles, all with a single output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AnalyticOracle {
    /// `x₁² + x₂²`
    SumSq2d,
    /// `x₁² + x₂² + x₃²`
    SumSq3d,
    /// `x₃`
    Proj3d,
    /// `x₁ + x₂`
    Linear2d,
}

impl AnalyticOracle {
    pub const ALL: [AnalyticOracle; 4] = [
        AnalyticOracle::SumSq2d,
        AnalyticOracle::SumSq3d,
        AnalyticOracle::Proj3d,
        AnalyticOracle::Linear2d,
    ];

    pub fn from_id(id: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|o| o.id() == id)
            .ok_or_else(|| Error::UnknownOracle(id.to_string()))
    }

    pub fn id(self) -> &'static str {
        match self {
            AnalyticOracle::SumSq2d => "sumsq2d",
            AnalyticOracle::SumSq3d => "sumsq3d",
            AnalyticOracle::Proj3d => "proj3d",
            AnalyticOracle::Linear2d => "linear2d",
        }
    }

    pub fn input_width(self) -> usize {
        match self {
            AnalyticOracle::SumSq2d | AnalyticOracle::Linear2d => 2,
            AnalyticOracle::SumSq3d | AnalyticOracle::Proj3d => 3,
        }
    }

    pub fn value(self, x: ArrayView1<f64>) -> f64 {
        match self {
            AnalyticOracle::SumSq2d | AnalyticOracle::SumSq3d => x.dot(&x),
            AnalyticOracle::Proj3d => x[2],
            AnalyticOracle::Linear2d => x[0] + x[1],
        }
    }

    pub fn gradient(self, x: ArrayView1<f64>) -> Array1<f64> {
        match self {
            AnalyticOracle::SumSq2d | AnalyticOracle::SumSq3d => &x * 2.0,
            AnalyticOracle::Proj3d => ndarray::array![0.0, 0.0, 1.0],
            AnalyticOracle::Linear2d => ndarray::array![1.0, 1.0],
        }
    }
}

/// How the final layer of a learned oracle is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputHead {
    Logits,
    Sigmoid,
    Softmax,
}

impl OutputHead {
    fn activation(self) -> Activation {
        match self {
            OutputHead::Logits => Activation::Identity,
            OutputHead::Sigmoid => Activation::Sigmoid,
            OutputHead::Softmax => Activation::Softmax,
        }
    }

    fn name(self) -> &'static str {
        match self {
            OutputHead::Logits => "logits",
            OutputHead::Sigmoid => "sigmoid",
            OutputHead::Softmax => "softmax",
        }
    }
}

/// A trained classifier ψ together with its head and the class label of each
/// output index.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedOracle {
    model: Mlp,
    head: OutputHead,
    classes: Vec<usize>,
}

impl LearnedOracle {
    pub fn new(model: Mlp, head: OutputHead, classes: Vec<usize>) -> Result<Self> {
        if *model.activations().last().unwrap() != head.activation() {
            return Err(Error::config(format!(
                "{} head needs a {} output layer",
                head.name(),
                head.activation().name()
            )));
        }
        let expected = match head {
            OutputHead::Sigmoid => 2,
            _ => model.output_width(),
        };
        if classes.len() != expected || (head == OutputHead::Sigmoid && model.output_width() != 1) {
            return Err(Error::shape(format!(
                "{} outputs with {} head cannot label classes {classes:?}",
                model.output_width(),
                head.name()
            )));
        }
        Ok(LearnedOracle {
            model,
            head,
            classes,
        })
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    Analytic(AnalyticOracle),
    Learned(LearnedOracle),
}

/// Looks up a registered analytic oracle by id (`sumsq2d`, `sumsq3d`,
/// `proj3d`, `linear2d`).
pub fn analytic_oracle(id: &str) -> Result<Oracle> {
    AnalyticOracle::from_id(id).map(Oracle::Analytic)
}

impl Oracle {
    pub fn input_width(&self) -> usize {
        match self {
            Oracle::Analytic(a) => a.input_width(),
            Oracle::Learned(l) => l.model.input_width(),
        }
    }

    pub fn output_width(&self) -> usize {
        match self {
            Oracle::Analytic(_) => 1,
            Oracle::Learned(l) => l.model.output_width(),
        }
    }

    /// Stable identifier: the registry id, or a parameter checksum for
    /// learned oracles.
    pub fn reference(&self) -> String {
        match self {
            Oracle::Analytic(a) => a.id().to_string(),
            Oracle::Learned(l) => format!("learned:{:016x}", l.model.checksum()),
        }
    }

    fn check(&self, points: ArrayView2<f64>) -> Result<()> {
        if points.ncols() != self.input_width() {
            return Err(Error::shape(format!(
                "oracle expects width {}, got {}",
                self.input_width(),
                points.ncols()
            )));
        }
        Ok(())
    }

    /// Head output at each row of `points`, shape `B × k`.
    pub fn evaluate(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(points)?;
        match self {
            Oracle::Analytic(a) => Ok(points
                .rows()
                .into_iter()
                .map(|p| a.value(p))
                .collect::<Array1<f64>>()
                .insert_axis(Axis(1))),
            Oracle::Learned(l) => l.model.forward(points),
        }
    }

    /// Row `i` of the result is `J_oracle(x_i)ᵀ upstream_i`.
    pub fn vjp(&self, points: ArrayView2<f64>, upstream: Array2<f64>) -> Result<Array2<f64>> {
        self.check(points)?;
        if upstream.dim() != (points.nrows(), self.output_width()) {
            return Err(Error::shape(format!(
                "upstream gradient has shape {:?}, expected {:?}",
                upstream.dim(),
                (points.nrows(), self.output_width())
            )));
        }
        match self {
            Oracle::Analytic(a) => {
                let mut out = Array2::zeros(points.raw_dim());
                for ((mut o, p), u) in out.rows_mut().into_iter().zip(points.rows()).zip(upstream.rows()) {
                    o.assign(&(a.gradient(p) * u[0]));
                }
                Ok(out)
            }
            Oracle::Learned(l) => l.model.input_vjp(points, upstream),
        }
    }

    /// The vector a symmetry must conserve: the logits for a softmax head,
    /// the head output otherwise.
    pub fn conserved(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        match self {
            Oracle::Learned(l) if l.head == OutputHead::Softmax => {
                self.check(points)?;
                Ok(l.model.forward_traced(points)?.last_pre_activation().clone())
            }
            _ => self.evaluate(points),
        }
    }

    /// Vector-Jacobian product of [`Oracle::conserved`].
    pub fn conserved_vjp(&self, points: ArrayView2<f64>, upstream: Array2<f64>) -> Result<Array2<f64>> {
        match self {
            Oracle::Learned(l) if l.head == OutputHead::Softmax => {
                self.check(points)?;
                if upstream.dim() != (points.nrows(), self.output_width()) {
                    return Err(Error::shape(format!(
                        "upstream gradient has shape {:?}, expected {:?}",
                        upstream.dim(),
                        (points.nrows(), self.output_width())
                    )));
                }
                let trace = l.model.forward_traced(points)?;
                let grads = l.model.backward(&trace, OutputGrad::PreActivation(upstream), false, true)?;
                Ok(grads.input.expect("input gradient requested"))
            }
            _ => self.vjp(points, upstream),
        }
    }

    /// Gradient of the output with respect to the input, shape `(k, n)`.
    pub fn jacobian(&self, point: ArrayView1<f64>) -> Result<Array2<f64>> {
        self.check(point.insert_axis(Axis(0)))?;
        match self {
            Oracle::Analytic(a) => Ok(a.gradient(point).insert_axis(Axis(0))),
            Oracle::Learned(l) => l.model.jacobian(point),
        }
    }

    /// Output index predicted for each row of head outputs. A single sigmoid
    /// column is thresholded at 0.5; wider outputs use [`argmax_class`].
    pub fn predicted_index(outputs: ArrayView2<f64>) -> Vec<usize> {
        if outputs.ncols() == 1 {
            outputs.column(0).iter().map(|&p| usize::from(p >= 0.5)).collect()
        } else {
            argmax_class(outputs)
        }
    }

    /// Class labels predicted at each point (learned oracles only).
    pub fn predict_labels(&self, points: ArrayView2<f64>) -> Result<Vec<usize>> {
        let Oracle::Learned(l) = self else {
            return Err(Error::config("analytic oracles do not predict classes"));
        };
        let out = self.evaluate(points)?;
        Ok(Oracle::predicted_index(out.view())
            .into_iter()
            .map(|i| l.classes[i])
            .collect())
    }

    /// Checkpoint JSON of a learned oracle, with `output_head` and `classes`
    /// added to the network document.
    pub fn to_checkpoint(&self) -> Result<String> {
        let Oracle::Learned(l) = self else {
            return Err(Error::config("analytic oracles have no checkpoint"));
        };
        let mut extra = Map::new();
        extra.insert("output_head".into(), Value::from(l.head.name()));
        extra.insert("classes".into(), Value::from(l.classes.clone()));
        write_checkpoint(&l.model, &extra)
    }

    pub fn from_checkpoint(text: &str) -> Result<Oracle> {
        let (model, extra) = read_checkpoint(text)?;
        let head: OutputHead = serde_json::from_value(
            extra
                .get("output_head")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("missing output_head".into()))?,
        )?;
        let classes: Vec<usize> = match extra.get("classes") {
            Some(v) => serde_json::from_value(v.clone())?,
            None if head == OutputHead::Sigmoid => vec![0, 1],
            None => (0..model.output_width()).collect(),
        };
        Ok(Oracle::Learned(LearnedOracle::new(model, head, classes)?))
    }
}

/// Per-row index of the largest entry; ties go to the lowest index.
pub fn argmax_class(outputs: ArrayView2<f64>) -> Vec<usize> {
    outputs
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of samples whose predicted output index matches the index
/// encoded in the dataset targets.
pub fn accuracy(oracle: &Oracle, dataset: &Dataset) -> Result<f64> {
    if dataset.sample_count() == 0 {
        return Err(Error::Empty("accuracy on an empty dataset".into()));
    }
    if dataset.target_width() != oracle.output_width() {
        return Err(Error::shape(format!(
            "targets of width {} for an oracle with {} outputs",
            dataset.target_width(),
            oracle.output_width()
        )));
    }
    let out = oracle.evaluate(dataset.features().view())?;
    let predicted = Oracle::predicted_index(out.view());
    let truth = Oracle::predicted_index(dataset.targets().view());
    let hits = predicted.iter().zip(&truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / dataset.sample_count() as f64)
}

/// Architecture of a latent classifier: hidden widths plus head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierArch {
    pub hidden: Vec<usize>,
    pub head: OutputHead,
}

impl Default for ClassifierArch {
    fn default() -> Self {
        ClassifierArch {
            hidden: vec![128, 128, 32],
            head: OutputHead::Softmax,
        }
    }
}

/// Trains ψ on a dataset whose features are latent vectors and whose targets
/// are one-hot (softmax head) or 0/1 (sigmoid head). `classes` names the
/// class of each output index (for a sigmoid head: the classes read as 0
/// and 1).
pub fn train_classifier(
    train: &Dataset,
    classes: &[usize],
    arch: &ClassifierArch,
    config: &TrainConfig,
) -> Result<Oracle> {
    let k = match arch.head {
        OutputHead::Sigmoid => 1,
        OutputHead::Softmax => classes.len(),
        OutputHead::Logits => {
            return Err(Error::UnsupportedLoss(
                "cross-entropy training needs a softmax or sigmoid head".into(),
            ))
        }
    };
    if train.target_width() != k {
        return Err(Error::shape(format!(
            "targets of width {} for a {}-output {} head",
            train.target_width(),
            k,
            arch.head.name()
        )));
    }
    let mut sizes = vec![train.feature_width()];
    sizes.extend(&arch.hidden);
    sizes.push(k);
    let mut acts = vec![Activation::Relu; arch.hidden.len()];
    acts.push(arch.head.activation());
    let mut model = Mlp::new(&sizes, &acts, config.seed)?;
    fit(
        &mut model,
        train.features().view(),
        train.targets().view(),
        Objective::CrossEntropy,
        config,
    )?;
    Ok(Oracle::Learned(LearnedOracle::new(model, arch.head, classes.to_vec())?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn analytic_values() {
        let o = analytic_oracle("sumsq2d").unwrap();
        assert_eq!(o.evaluate(array![[3.0, 4.0]].view()).unwrap(), array![[25.0]]);
        assert_eq!(
            o.evaluate(array![[1.0, 0.0], [0.0, 1.0]].view()).unwrap(),
            array![[1.0], [1.0]]
        );
        let p = analytic_oracle("proj3d").unwrap();
        assert_eq!(p.evaluate(array![[5.0, -2.0, 7.0]].view()).unwrap(), array![[7.0]]);
        let s = analytic_oracle("sumsq3d").unwrap();
        let v = s.evaluate(array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]].view()).unwrap();
        assert_eq!(v, array![[1.0], [1.0]]);
        let l = analytic_oracle("linear2d").unwrap();
        assert_eq!(l.evaluate(array![[2.0, -0.5]].view()).unwrap(), array![[1.5]]);
        assert!(matches!(analytic_oracle("cubic"), Err(Error::UnknownOracle(_))));
        assert!(s.evaluate(array![[1.0, 2.0]].view()).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        let out = array![[0.1, 0.9], [0.5, 0.5]];
        assert_eq!(argmax_class(out.view()), vec![1, 0]);
        let mut ten = Array2::zeros((1, 10));
        ten[(0, 7)] = 3.0;
        ten[(0, 2)] = 2.9;
        assert_eq!(argmax_class(ten.view()), vec![7]);
    }

    #[test]
    fn analytic_vjp_scales_the_gradient() {
        let o = analytic_oracle("sumsq3d").unwrap();
        let g = o
            .vjp(array![[1.0, 2.0, 3.0]].view(), array![[0.5]])
            .unwrap();
        assert_eq!(g, array![[1.0, 2.0, 3.0]]);
        assert!(o.vjp(array![[1.0, 2.0, 3.0]].view(), array![[0.5, 1.0]]).is_err());
    }

    fn tiny_binary() -> Oracle {
        let model = Mlp::from_parts(
            vec![Activation::Sigmoid],
            vec![array![[10.0, 0.0]]],
            vec![array![0.0]],
            0,
        )
        .unwrap();
        Oracle::Learned(LearnedOracle::new(model, OutputHead::Sigmoid, vec![0, 1]).unwrap())
    }

    #[test]
    fn accuracy_extremes() {
        let o = tiny_binary();
        let x = array![[1.0, 0.0], [-1.0, 3.0], [2.0, 1.0]];
        let right = Dataset::new(x.clone(), array![[1.0], [0.0], [1.0]], None).unwrap();
        let wrong = Dataset::new(x.clone(), array![[0.0], [1.0], [0.0]], None).unwrap();
        assert_eq!(accuracy(&o, &right).unwrap(), 1.0);
        assert_eq!(accuracy(&o, &wrong).unwrap(), 0.0);
        assert_eq!(o.predict_labels(x.view()).unwrap(), vec![1, 0, 1]);
        let bad = Dataset::new(x, array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]], None).unwrap();
        assert!(accuracy(&o, &bad).is_err());
    }

    #[test]
    fn learned_oracle_is_pure_and_round_trips() {
        let o = tiny_binary();
        let p = array![[0.3, -0.1], [0.3, -0.1]];
        let out = o.evaluate(p.view()).unwrap();
        assert_eq!(out.row(0), out.row(1));
        let text = o.to_checkpoint().unwrap();
        assert!(text.contains("\"output_head\":\"sigmoid\""));
        assert_eq!(Oracle::from_checkpoint(&text).unwrap(), o);
    }

    #[test]
    fn head_must_match_output_layer() {
        let model = Mlp::new(&[2, 3], &[Activation::Identity], 0).unwrap();
        assert!(LearnedOracle::new(model.clone(), OutputHead::Softmax, vec![0, 1, 2]).is_err());
        assert!(LearnedOracle::new(model, OutputHead::Logits, vec![0, 1]).is_err());
    }

    #[test]
    fn constant_labels_are_learned_trivially() {
        let x = Array2::from_shape_fn((20, 2), |(i, j)| (i as f64 * 0.1) - j as f64);
        let d = Dataset::new(x, Array2::ones((20, 1)), None).unwrap();
        let arch = ClassifierArch {
            hidden: vec![8],
            head: OutputHead::Sigmoid,
        };
        let cfg = TrainConfig {
            epochs: 50,
            ..TrainConfig::default()
        };
        let o = train_classifier(&d, &[0, 1], &arch, &cfg).unwrap();
        assert_eq!(accuracy(&o, &d).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_label_width_is_rejected() {
        let d = Dataset::new(Array2::zeros((4, 2)), Array2::zeros((4, 3)), None).unwrap();
        let arch = ClassifierArch::default();
        assert!(matches!(
            train_classifier(&d, &[0, 1], &arch, &TrainConfig::default()),
            Err(Error::Shape(_))
        ));
    }
}
