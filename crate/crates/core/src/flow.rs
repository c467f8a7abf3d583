//! Streamlines of generator fields and what the oracle and decoder see
//! along them.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};

use crate::diffcore::Mlp;
use crate::field::VectorField;
use crate::image::GrayImage;
use crate::oracle::Oracle;
use crate::{Error, Result};

/// Forward-Euler path `z_{t+1} = z_t + ε G(z_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    start: Array1<f64>,
    epsilon: f64,
    points: Array2<f64>,
    generator_index: usize,
}

impl Trajectory {
    pub fn start(&self) -> &Array1<f64> {
        &self.start
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `(steps + 1) × ℓ`, first row the start.
    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn generator_index(&self) -> usize {
        self.generator_index
    }

    pub fn steps(&self) -> usize {
        self.points.nrows() - 1
    }

    pub fn end(&self) -> ArrayView1<'_, f64> {
        self.points.row(self.steps())
    }
}

/// Integrates `steps` Euler steps of `field` from `start`. `generator_index`
/// only labels the result.
pub fn integrate_streamline(
    field: &dyn VectorField,
    generator_index: usize,
    start: ArrayView1<f64>,
    epsilon: f64,
    steps: usize,
) -> Result<Trajectory> {
    if start.len() != field.dim() {
        return Err(Error::shape(format!(
            "start of width {} for a field of dimension {}",
            start.len(),
            field.dim()
        )));
    }
    if !epsilon.is_finite() {
        return Err(Error::config(format!("step size {epsilon} is not finite")));
    }
    if start.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("streamline start point".into()));
    }
    let mut points = Array2::zeros((steps + 1, start.len()));
    points.row_mut(0).assign(&start);
    let mut z = start.to_owned();
    for t in 1..=steps {
        let g = field.eval_point(z.view())?;
        z.scaled_add(epsilon, &g);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("streamline point at step {t}")));
        }
        points.row_mut(t).assign(&z);
    }
    Ok(Trajectory {
        start: start.to_owned(),
        epsilon,
        points,
        generator_index,
    })
}

/// Oracle head output at every trajectory point, `(steps + 1) × k`.
pub fn trace_likelihood(oracle: &Oracle, trajectory: &Trajectory) -> Result<Array2<f64>> {
    oracle.evaluate(trajectory.points.view())
}

/// Largest `‖ψ(z_t) − ψ(z_0)‖_∞` along a traced trajectory.
pub fn max_drift(likelihood: &Array2<f64>) -> f64 {
    let first = likelihood.row(0);
    likelihood
        .rows()
        .into_iter()
        .map(|r| r.iter().zip(first).fold(0.0, |m, (a, b)| f64::max(m, (a - b).abs())))
        .fold(0.0, f64::max)
}

/// Indices `0, stride, 2·stride, …` up to the last step.
pub fn frame_indices(trajectory: &Trajectory, stride: usize) -> Result<Vec<usize>> {
    if stride == 0 {
        return Err(Error::config("frame stride must be positive"));
    }
    Ok((0..=trajectory.steps()).step_by(stride).collect())
}

/// Decodes every `stride`-th trajectory point into a `shape` image.
pub fn decode_trajectory(
    decoder: &Mlp,
    trajectory: &Trajectory,
    stride: usize,
    shape: (usize, usize),
) -> Result<Vec<GrayImage>> {
    let idx = frame_indices(trajectory, stride)?;
    let latents = crate::diffcore::rows(trajectory.points.view(), &idx);
    let decoded = decoder.forward(latents.view())?;
    decoded
        .rows()
        .into_iter()
        .map(|r| GrayImage::new(shape.0, shape.1, r))
        .collect()
}

/// Frames of a two-sided walk from a common start: the backward frames far
/// to near, then the forward frames, with the start shown once.
pub fn two_sided_frames(
    decoder: &Mlp,
    backward: &Trajectory,
    forward: &Trajectory,
    stride: usize,
    shape: (usize, usize),
) -> Result<Vec<GrayImage>> {
    if backward.start != forward.start {
        return Err(Error::config("two-sided walk needs a shared start point"));
    }
    let mut frames = decode_trajectory(decoder, backward, stride, shape)?;
    frames.reverse();
    frames.extend(decode_trajectory(decoder, forward, stride, shape)?.into_iter().skip(1));
    Ok(frames)
}

/// `step,z1..zℓ[,p1..pk]`, one row per trajectory point.
pub fn write_trajectory_csv(
    trajectory: &Trajectory,
    likelihood: Option<&Array2<f64>>,
    mut out: impl Write,
) -> Result<()> {
    if let Some(p) = likelihood {
        if p.nrows() != trajectory.points.nrows() {
            return Err(Error::shape(format!(
                "{} likelihood rows for {} trajectory points",
                p.nrows(),
                trajectory.points.nrows()
            )));
        }
    }
    let dim = trajectory.points.ncols();
    let mut header = vec!["step".to_string()];
    header.extend((1..=dim).map(|i| format!("z{i}")));
    if let Some(p) = likelihood {
        header.extend((1..=p.ncols()).map(|i| format!("p{i}")));
    }
    writeln!(out, "{}", header.join(","))?;
    for (t, z) in trajectory.points.rows().into_iter().enumerate() {
        let mut line = t.to_string();
        let probs = likelihood.map(|p| p.row(t));
        for v in z.iter().chain(probs.iter().flat_map(|r| r.iter())) {
            line.push_str(&format!(",{v:.17e}"));
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}
