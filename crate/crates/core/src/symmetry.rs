//! Learning oracle-preserving generators.
//!
//! A generator is a network `G: ℝ^ℓ → ℝ^ℓ` whose infinitesimal flow
//! `z ↦ z + εG(z)` leaves the oracle output unchanged. Several generators are
//! trained together against
//!
//! ```text
//! Σ_α L_inv(G_α) + h_norm·L_norm + h_ortho·L_ortho
//! L_inv(G)  = 1/(Bε²) Σ_i ‖ψ(z_i + εG(z_i)) − ψ(z_i)‖²
//! L_norm    = Σ_α [ mean_i (‖G_α(z_i)‖ − 1)² + mean_i (‖G_α(z_i)‖ − mean_j ‖G_α(z_j)‖)² ]
//! L_ortho   = 1/B Σ_i Σ_{α<β} (G_α(z_i)·G_β(z_i))²
//! ```
//!
//! `ψ` is the conserved output of the oracle (logits for a softmax classifier).
//! The oracle is frozen; its outputs at the training points are computed once.

use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{read_checkpoint, rows, write_checkpoint, Activation, AdamState, GradientSet, Mlp, OutputGrad};
use crate::field::VectorField;
use crate::oracle::Oracle;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainingMode {
    /// All generators updated every step.
    Joint,
    /// Generators trained one after another, each against the already
    /// trained (frozen) ones.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub epsilon: f64,
    pub h_norm: f64,
    pub h_ortho: f64,
    pub lr: f64,
    /// Epochs per training run (per generator in sequential mode).
    pub epochs: usize,
    pub seed: u64,
    /// Hidden widths of each generator network.
    pub hidden: Vec<usize>,
    pub mode: TrainingMode,
    /// Minibatch size; `None` trains on all points every step. The logged
    /// per-epoch losses are always full-data values before the epoch's
    /// updates.
    pub batch_size: Option<usize>,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            epsilon: 1e-3,
            h_norm: 1.0,
            h_ortho: 1.0,
            lr: 1e-3,
            epochs: 4000,
            seed: 0,
            hidden: vec![64, 64],
            mode: TrainingMode::Joint,
            batch_size: None,
        }
    }
}

/// Loss components at one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub inv: f64,
    pub norm: f64,
    pub ortho: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSet {
    generators: Vec<Mlp>,
    epsilon: f64,
    h_norm: f64,
    h_ortho: f64,
    oracle_ref: String,
    training_log: Vec<LossRecord>,
    final_losses: Option<LossRecord>,
}

impl GeneratorSet {
    pub fn new(generators: Vec<Mlp>, epsilon: f64, h_norm: f64, h_ortho: f64, oracle_ref: String) -> Result<Self> {
        check_epsilon(epsilon)?;
        let dim = generators
            .first()
            .ok_or_else(|| Error::config("a generator set needs at least one generator"))?
            .input_width();
        for g in &generators {
            if g.input_width() != dim || g.output_width() != dim {
                return Err(Error::shape(format!(
                    "generator {}→{} in a set of dimension {dim}",
                    g.input_width(),
                    g.output_width()
                )));
            }
        }
        Ok(GeneratorSet {
            generators,
            epsilon,
            h_norm,
            h_ortho,
            oracle_ref,
            training_log: Vec::new(),
            final_losses: None,
        })
    }

    pub fn generators(&self) -> &[Mlp] {
        &self.generators
    }

    pub fn len(&self) -> usize {
        self.generators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.generators.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.generators[0].input_width()
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn h_norm(&self) -> f64 {
        self.h_norm
    }

    pub fn h_ortho(&self) -> f64 {
        self.h_ortho
    }

    pub fn oracle_ref(&self) -> &str {
        &self.oracle_ref
    }

    pub fn training_log(&self) -> &[LossRecord] {
        &self.training_log
    }

    /// Loss components after the last update, evaluated on the training
    /// points.
    pub fn final_losses(&self) -> Option<LossRecord> {
        self.final_losses
    }

    pub fn fields(&self) -> Vec<&dyn VectorField> {
        self.generators.iter().map(|g| g as &dyn VectorField).collect()
    }

    /// `epoch,L_inv,L_norm,L_ortho,total`, one row per epoch.
    pub fn write_log_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "epoch,L_inv,L_norm,L_ortho,total")?;
        for r in &self.training_log {
            writeln!(
                out,
                "{},{:.17e},{:.17e},{:.17e},{:.17e}",
                r.epoch, r.inv, r.norm, r.ortho, r.total
            )?;
        }
        Ok(())
    }

    /// Writes `generator_<α>.json` per generator plus `manifest.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
        let empty = serde_json::Map::new();
        for (i, g) in self.generators.iter().enumerate() {
            let path = dir.join(format!("generator_{i}.json"));
            std::fs::write(&path, write_checkpoint(g, &empty)?).map_err(|e| Error::file(path, e))?;
        }
        let manifest = serde_json::json!({
            "epsilon": self.epsilon,
            "h_norm": self.h_norm,
            "h_ortho": self.h_ortho,
            "oracle_ref": self.oracle_ref,
            "count": self.generators.len(),
        });
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::file(path, e))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let path = dir.join(name);
            std::fs::read_to_string(&path).map_err(|e| Error::file(path, e))
        };
        let manifest: serde_json::Value = serde_json::from_str(&read("manifest.json")?)?;
        let num = |key: &str| {
            manifest[key]
                .as_f64()
                .ok_or_else(|| Error::Checkpoint(format!("manifest field `{key}` missing")))
        };
        let count = manifest["count"]
            .as_u64()
            .ok_or_else(|| Error::Checkpoint("manifest field `count` missing".into()))?;
        let generators = (0..count)
            .map(|i| Ok(read_checkpoint(&read(&format!("generator_{i}.json"))?)?.0))
            .collect::<Result<Vec<_>>>()?;
        GeneratorSet::new(
            generators,
            num("epsilon")?,
            num("h_norm")?,
            num("h_ortho")?,
            manifest["oracle_ref"].as_str().unwrap_or_default().to_string(),
        )
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::config(format!("epsilon must be positive, got {epsilon}")));
    }
    Ok(())
}

/// Invariance loss of one field against the oracle on `batch`.
pub fn loss_invariance(
    oracle: &Oracle,
    field: &dyn VectorField,
    batch: ArrayView2<f64>,
    epsilon: f64,
) -> Result<f64> {
    check_epsilon(epsilon)?;
    let reference = oracle.conserved(batch)?;
    let values = field.eval(batch)?;
    Ok(invariance_terms(oracle, batch, &reference, &values, epsilon, false)?.0)
}

/// Normalization loss summed over `fields`.
pub fn loss_norm(fields: &[&dyn VectorField], batch: ArrayView2<f64>) -> Result<f64> {
    let mut total = 0.0;
    for f in fields {
        total += norm_terms(&f.eval(batch)?).0;
    }
    Ok(total)
}

/// Pairwise orthogonality loss over `fields`; zero for a single field.
pub fn loss_ortho(fields: &[&dyn VectorField], batch: ArrayView2<f64>) -> Result<f64> {
    let values = fields.iter().map(|f| f.eval(batch)).collect::<Result<Vec<_>>>()?;
    Ok(ortho_terms(&values, false).0)
}

/// Value of the invariance loss and, when asked, its gradient with respect to
/// the field values.
fn invariance_terms(
    oracle: &Oracle,
    points: ArrayView2<f64>,
    reference: &Array2<f64>,
    values: &Array2<f64>,
    epsilon: f64,
    want_grad: bool,
) -> Result<(f64, Option<Array2<f64>>)> {
    if values.dim() != points.dim() {
        return Err(Error::shape(format!(
            "field values {:?} at points {:?}",
            values.dim(),
            points.dim()
        )));
    }
    let b = points.nrows().max(1) as f64;
    let moved = &points + &(values * epsilon);
    let diff = oracle.conserved(moved.view())? - reference;
    let scale = 1.0 / (b * epsilon * epsilon);
    let value = diff.iter().map(|d| d * d).sum::<f64>() * scale;
    if !want_grad {
        return Ok((value, None));
    }
    let upstream = diff * (2.0 * scale);
    let grad = oracle.conserved_vjp(moved.view(), upstream)? * epsilon;
    Ok((value, Some(grad)))
}

/// `mean (n−1)² + mean (n−n̄)²` over the row norms, and its gradient.
fn norm_terms(values: &Array2<f64>) -> (f64, Array2<f64>) {
    let b = values.nrows().max(1) as f64;
    let norms: Array1<f64> = values.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mean = norms.sum() / b;
    let value = norms
        .iter()
        .map(|&n| (n - 1.0).powi(2) + (n - mean).powi(2))
        .sum::<f64>()
        / b;
    // the n̄ dependence drops out because Σ (n_i − n̄) = 0
    let mut grad = values.clone();
    for (mut row, &n) in grad.rows_mut().into_iter().zip(&norms) {
        if n > 0.0 {
            let d = 2.0 * ((n - 1.0) + (n - mean)) / b;
            row *= d / n;
        } else {
            row.fill(0.0);
        }
    }
    (value, grad)
}

/// `1/B Σ_i Σ_{α<β} (g_α·g_β)²` and, when asked, the gradient with respect to
/// every field's values.
fn ortho_terms(values: &[Array2<f64>], want_grad: bool) -> (f64, Vec<Array2<f64>>) {
    let mut grads: Vec<Array2<f64>> = if want_grad {
        values.iter().map(|v| Array2::zeros(v.raw_dim())).collect()
    } else {
        Vec::new()
    };
    let Some(first) = values.first() else {
        return (0.0, grads);
    };
    let b = first.nrows().max(1) as f64;
    let mut value = 0.0;
    for a in 0..values.len() {
        for c in a + 1..values.len() {
            let dots: Array1<f64> = Zip::from(values[a].rows())
                .and(values[c].rows())
                .map_collect(|x, y| x.dot(&y));
            value += dots.iter().map(|d| d * d).sum::<f64>() / b;
            if want_grad {
                let w = (&dots * (2.0 / b)).insert_axis(Axis(1));
                grads[a] += &(&values[c] * &w);
                grads[c] += &(&values[a] * &w);
            }
        }
    }
    (value, grads)
}

/// The combined training objective on a fixed point set.
pub struct SymmetryObjective<'a> {
    oracle: &'a Oracle,
    points: ArrayView2<'a, f64>,
    reference: Array2<f64>,
    epsilon: f64,
    h_norm: f64,
    h_ortho: f64,
}

impl<'a> SymmetryObjective<'a> {
    pub fn new(
        oracle: &'a Oracle,
        points: ArrayView2<'a, f64>,
        epsilon: f64,
        h_norm: f64,
        h_ortho: f64,
    ) -> Result<Self> {
        check_epsilon(epsilon)?;
        let reference = oracle.conserved(points)?;
        Ok(SymmetryObjective {
            oracle,
            points,
            reference,
            epsilon,
            h_norm,
            h_ortho,
        })
    }

    pub fn evaluate(&self, generators: &[Mlp]) -> Result<LossRecord> {
        Ok(self.run(generators, &[], 0)?.0)
    }

    /// Loss components and parameter gradients of the total loss for the
    /// generators whose indices are listed in `trainable`.
    pub fn gradients(&self, generators: &[Mlp], trainable: &[usize]) -> Result<(LossRecord, Vec<GradientSet>)> {
        self.run(generators, trainable, 0)
    }

    fn run(&self, generators: &[Mlp], trainable: &[usize], epoch: usize) -> Result<(LossRecord, Vec<GradientSet>)> {
        self.run_on(self.points, &self.reference, generators, trainable, epoch)
    }

    fn run_on(
        &self,
        points: ArrayView2<f64>,
        reference: &Array2<f64>,
        generators: &[Mlp],
        trainable: &[usize],
        epoch: usize,
    ) -> Result<(LossRecord, Vec<GradientSet>)> {
        let traces = generators
            .iter()
            .map(|g| g.forward_traced(points))
            .collect::<Result<Vec<_>>>()?;
        let values: Vec<Array2<f64>> = traces.iter().map(|t| t.output().clone()).collect();
        let want = |i: usize| trainable.contains(&i);

        let mut inv = 0.0;
        let mut norm = 0.0;
        let mut value_grads: Vec<Option<Array2<f64>>> = vec![None; generators.len()];
        for (i, v) in values.iter().enumerate() {
            let (li, gi) = invariance_terms(self.oracle, points, reference, v, self.epsilon, want(i))?;
            let (ln, gn) = norm_terms(v);
            inv += li;
            norm += ln;
            if let Some(gi) = gi {
                value_grads[i] = Some(gi + &(gn * self.h_norm));
            }
        }
        let (ortho, go) = ortho_terms(&values, !trainable.is_empty());
        let total = inv + self.h_norm * norm + self.h_ortho * ortho;
        let record = LossRecord {
            epoch,
            inv,
            norm,
            ortho,
            total,
        };

        let mut grads = Vec::with_capacity(trainable.len());
        for &i in trainable {
            let g = value_grads[i].take().expect("trainable generator") + &(&go[i] * self.h_ortho);
            grads.push(generators[i].backward(&traces[i], OutputGrad::Output(g), true, false)?);
        }
        Ok((record, grads))
    }

    /// Same as [`SymmetryObjective::gradients`] restricted to the rows `idx`.
    fn batch_gradients(&self, idx: &[usize], generators: &[Mlp], trainable: &[usize]) -> Result<Vec<GradientSet>> {
        let points = rows(self.points, idx);
        let reference = rows(self.reference.view(), idx);
        Ok(self.run_on(points.view(), &reference, generators, trainable, 0)?.1)
    }
}

/// Trains `n_generators` generator networks against the frozen `oracle` on
/// the given points.
pub fn train_generators(
    oracle: &Oracle,
    points: ArrayView2<f64>,
    n_generators: usize,
    config: &GeneratorConfig,
) -> Result<GeneratorSet> {
    if n_generators == 0 {
        return Err(Error::config("at least one generator is required"));
    }
    if points.nrows() == 0 {
        return Err(Error::Empty("no training points".into()));
    }
    let dim = oracle.input_width();
    if points.ncols() != dim {
        return Err(Error::shape(format!(
            "points of width {} for an oracle on width {dim}",
            points.ncols()
        )));
    }
    let mut sizes = vec![dim];
    sizes.extend(&config.hidden);
    sizes.push(dim);
    let mut acts = vec![Activation::Relu; config.hidden.len()];
    acts.push(Activation::Identity);

    let mut generators = (0..n_generators)
        .map(|i| Mlp::new(&sizes, &acts, config.seed.wrapping_add(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let objective = SymmetryObjective::new(oracle, points, config.epsilon, config.h_norm, config.h_ortho)?;

    let schedule: Vec<Vec<usize>> = match config.mode {
        TrainingMode::Joint => vec![(0..n_generators).collect()],
        TrainingMode::Sequential => (0..n_generators).map(|i| vec![i]).collect(),
    };

    let batch = match config.batch_size {
        Some(0) => return Err(Error::config("batch size must be positive")),
        Some(b) if b < points.nrows() => Some(b),
        _ => None,
    };
    let mut order: Vec<usize> = (0..points.nrows()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut log = Vec::new();
    let mut epoch = 0;
    for stage in schedule {
        // the objective only sees generators trained so far
        let active = stage.iter().max().unwrap() + 1;
        let mut states: Vec<AdamState> = stage.iter().map(|&i| AdamState::new(&generators[i])).collect();
        for _ in 0..config.epochs {
            let step = |generators: &mut [Mlp], states: &mut [AdamState], grads: &[GradientSet]| {
                for ((&i, state), g) in stage.iter().zip(states.iter_mut()).zip(grads) {
                    state.step(&mut generators[i], g, config.lr).map_err(|e| match e {
                        Error::NonFinite(what) => Error::Divergence { epoch, what },
                        other => other,
                    })?;
                }
                Ok::<(), Error>(())
            };
            let (record, grads) = objective.run(&generators[..active], if batch.is_some() { &[] } else { &stage }, epoch)?;
            if !record.total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    what: format!("total loss {}", record.total),
                });
            }
            log.push(record);
            match batch {
                None => step(&mut generators, &mut states, &grads)?,
                Some(b) => {
                    order.shuffle(&mut rng);
                    for chunk in order.chunks(b) {
                        let grads = objective.batch_gradients(chunk, &generators[..active], &stage)?;
                        step(&mut generators, &mut states, &grads)?;
                    }
                }
            }
            epoch += 1;
        }
    }

    let mut final_losses = objective.evaluate(&generators)?;
    final_losses.epoch = epoch;
    if !final_losses.total.is_finite() {
        return Err(Error::Divergence {
            epoch,
            what: "final loss is not finite".into(),
        });
    }
    let mut set = GeneratorSet::new(generators, config.epsilon, config.h_norm, config.h_ortho, oracle.reference())?;
    set.training_log = log;
    set.final_losses = Some(final_losses);
    Ok(set)
}
