//! Lie brackets of generator fields and closure of the algebra they span.
//!
//! For fields `G_α`, `G_β` with Jacobians `J_α`, `J_β` the bracket sampled at
//! `z` is the operator commutator
//!
//! ```text
//! [G_α, G_β](z) = J_α(z) G_β(z) − J_β(z) G_α(z)
//! ```
//!
//! which reduces to `(AB − BA) z` for linear fields `Az`, `Bz`. Closure asks
//! whether every bracket is a constant combination `Σ_γ a_αβγ G_γ` of the
//! generators; the structure constants `a` are fitted by least squares on a
//! fixed point set.

use std::fmt::Write as _;
use std::io::Write;

use ndarray::{Array1, Array2, Array3, ArrayView2};

use crate::field::VectorField;
use crate::{Error, Result};

/// Ridge added to the normal equations of the structure-constant fit.
pub const FIT_RIDGE: f64 = 1e-10;

/// Brackets with `Σ_i ‖C_i‖²` below this are treated as exactly zero.
pub const ZERO_BRACKET: f64 = 1e-18;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldSource {
    Generator(usize),
    Bracket(usize, usize),
}

/// A field evaluated on a point set.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    points: Array2<f64>,
    values: Array2<f64>,
    source: FieldSource,
}

impl SampledField {
    pub fn new(points: Array2<f64>, values: Array2<f64>, source: FieldSource) -> Result<Self> {
        if points.dim() != values.dim() {
            return Err(Error::shape(format!(
                "field values {:?} at points {:?}",
                values.dim(),
                points.dim()
            )));
        }
        Ok(SampledField { points, values, source })
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn source(&self) -> FieldSource {
        self.source
    }

    fn squared_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

fn check_fields(fields: &[&dyn VectorField], points: ArrayView2<f64>) -> Result<()> {
    for f in fields {
        if f.dim() != points.ncols() {
            return Err(Error::shape(format!(
                "field of dimension {} sampled at points of width {}",
                f.dim(),
                points.ncols()
            )));
        }
    }
    Ok(())
}

/// Each field evaluated at `points`, labelled by its position.
pub fn sample_fields(fields: &[&dyn VectorField], points: ArrayView2<f64>) -> Result<Vec<SampledField>> {
    check_fields(fields, points)?;
    fields
        .iter()
        .enumerate()
        .map(|(i, f)| SampledField::new(points.to_owned(), f.eval(points)?, FieldSource::Generator(i)))
        .collect()
}

/// Values of `[g_alpha, g_beta]` at every row of `points`.
pub fn bracket(g_alpha: &dyn VectorField, g_beta: &dyn VectorField, points: ArrayView2<f64>) -> Result<Array2<f64>> {
    check_fields(&[g_alpha, g_beta], points)?;
    let va = g_alpha.eval(points)?;
    let vb = g_beta.eval(points)?;
    let mut out = Array2::zeros(points.raw_dim());
    for (i, z) in points.rows().into_iter().enumerate() {
        let c = g_alpha.jacobian(z)?.dot(&vb.row(i)) - g_beta.jacobian(z)?.dot(&va.row(i));
        out.row_mut(i).assign(&c);
    }
    Ok(out)
}

/// Brackets of every pair `α < β`, in lexicographic pair order.
pub fn all_brackets(fields: &[&dyn VectorField], points: ArrayView2<f64>) -> Result<Vec<SampledField>> {
    check_fields(fields, points)?;
    let values = fields.iter().map(|f| f.eval(points)).collect::<Result<Vec<_>>>()?;
    // one Jacobian per field and point, shared across pairs
    let jacobians = fields
        .iter()
        .map(|f| points.rows().into_iter().map(|z| f.jacobian(z)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for a in 0..fields.len() {
        for b in a + 1..fields.len() {
            let mut c = Array2::zeros(points.raw_dim());
            for i in 0..points.nrows() {
                let v = jacobians[a][i].dot(&values[b].row(i)) - jacobians[b][i].dot(&values[a].row(i));
                c.row_mut(i).assign(&v);
            }
            out.push(SampledField::new(points.to_owned(), c, FieldSource::Bracket(a, b))?);
        }
    }
    Ok(out)
}

/// Fitted structure constants of a generator set.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureConstants {
    /// Full antisymmetric tensor `a[α][β][γ]`.
    coefficients: Array3<f64>,
    /// Pairs `(α, β)` with `α < β`, in the order of the per-pair vectors.
    pairs: Vec<(usize, usize)>,
    residuals: Vec<f64>,
    bracket_magnitudes: Vec<f64>,
    fit_points: Array2<f64>,
}

impl StructureConstants {
    pub fn generator_count(&self) -> usize {
        self.coefficients.dim().0
    }

    pub fn coefficients(&self) -> &Array3<f64> {
        &self.coefficients
    }

    pub fn get(&self, alpha: usize, beta: usize, gamma: usize) -> f64 {
        self.coefficients[(alpha, beta, gamma)]
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// Relative closure residual per pair.
    pub fn residuals(&self) -> &[f64] {
        &self.residuals
    }

    /// `√(Σ‖C‖²) / √(Σ‖G_α‖² · mean ‖G_β‖²)` per pair.
    pub fn bracket_magnitudes(&self) -> &[f64] {
        &self.bracket_magnitudes
    }

    pub fn fit_points(&self) -> &Array2<f64> {
        &self.fit_points
    }

    /// Largest pair residual, 0 for a single generator.
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    /// Rows `alpha,beta,gamma,a,residual` for every `α < β` and every `γ`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "alpha,beta,gamma,a,residual")?;
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            for g in 0..self.generator_count() {
                writeln!(
                    out,
                    "{a},{b},{g},{:.17e},{:.17e}",
                    self.coefficients[(a, b, g)],
                    self.residuals[p]
                )?;
            }
        }
        Ok(())
    }

    /// Human-readable summary with the closure and Abelian verdicts.
    pub fn report(&self, closure_tol: f64, abelian_tol: f64) -> String {
        let mut s = String::new();
        let n = self.generator_count();
        let _ = writeln!(s, "generators: {n}");
        let _ = writeln!(s, "fit points: {}", self.fit_points.nrows());
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            let terms: Vec<String> = (0..n)
                .map(|g| format!("{:+.4} G{g}", self.coefficients[(a, b, g)]))
                .collect();
            let _ = writeln!(
                s,
                "[G{a}, G{b}] ≈ {}  (residual {:.4}, magnitude {:.4})",
                terms.join(" "),
                self.residuals[p],
                self.bracket_magnitudes[p]
            );
        }
        let closed = self.max_residual() < closure_tol;
        let _ = writeln!(
            s,
            "closed: {} (max residual {:.4}, tolerance {closure_tol})",
            if closed { "yes" } else { "no" },
            self.max_residual()
        );
        let _ = writeln!(
            s,
            "abelian: {} (tolerance {abelian_tol})",
            if is_abelian(self, abelian_tol) { "yes" } else { "no" }
        );
        s
    }
}

fn pair_index(n: usize, a: usize, b: usize) -> usize {
    // position of (a, b), a < b, in lexicographic order
    a * (2 * n - a - 1) / 2 + (b - a - 1)
}

fn check_same_points(reference: &Array2<f64>, fields: &[SampledField]) -> Result<()> {
    for f in fields {
        if f.points != reference {
            return Err(Error::shape("fields are sampled on different point sets".to_string()));
        }
    }
    Ok(())
}

/// Least-squares structure constants from sampled generators and their
/// pairwise brackets.
pub fn fit_structure_constants(generators: &[SampledField], brackets: &[SampledField]) -> Result<StructureConstants> {
    let first = generators
        .first()
        .ok_or_else(|| Error::config("no generator fields to fit against"))?;
    let points = first.points.clone();
    check_same_points(&points, generators)?;
    check_same_points(&points, brackets)?;
    let n = generators.len();
    let pair_count = n * (n - 1) / 2;
    let mut ordered: Vec<Option<&SampledField>> = vec![None; pair_count];
    for br in brackets {
        match br.source {
            FieldSource::Bracket(a, b) if a < b && b < n => ordered[pair_index(n, a, b)] = Some(br),
            other => {
                return Err(Error::config(format!("unexpected bracket field {other:?} for {n} generators")));
            }
        }
    }

    // Gram matrix of the generators under Σ_i u(z_i)·v(z_i)
    let mut gram = Array2::<f64>::zeros((n, n));
    for a in 0..n {
        for b in a..n {
            let v = (&generators[a].values * &generators[b].values).sum();
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    let mut regularized = gram.clone();
    for a in 0..n {
        regularized[(a, a)] += FIT_RIDGE;
    }
    let factor = cholesky(&regularized)?;
    let mean_sq: Vec<f64> = generators
        .iter()
        .map(|g| g.squared_norm() / points.nrows().max(1) as f64)
        .collect();

    let mut coefficients = Array3::zeros((n, n, n));
    let mut pairs = Vec::with_capacity(pair_count);
    let mut residuals = Vec::with_capacity(pair_count);
    let mut magnitudes = Vec::with_capacity(pair_count);
    for a in 0..n {
        for b in a + 1..n {
            let br = ordered[pair_index(n, a, b)]
                .ok_or_else(|| Error::config(format!("missing bracket for pair ({a}, {b})")))?;
            let rhs: Array1<f64> = generators.iter().map(|g| (&g.values * &br.values).sum()).collect();
            let coef = cholesky_solve(&factor, &rhs);
            let mut fitted = Array2::<f64>::zeros(points.raw_dim());
            for (g, &c) in generators.iter().zip(&coef) {
                fitted.scaled_add(c, &g.values);
            }
            let mismatch: f64 = (&br.values - &fitted).iter().map(|v| v * v).sum();
            let total = br.squared_norm();
            residuals.push(if total < ZERO_BRACKET {
                0.0
            } else {
                (mismatch / total).sqrt()
            });
            let scale = (generators[a].squared_norm() * mean_sq[b]).sqrt();
            magnitudes.push(if total < ZERO_BRACKET {
                0.0
            } else if scale > 0.0 {
                total.sqrt() / scale
            } else {
                f64::INFINITY
            });
            for g in 0..n {
                coefficients[(a, b, g)] = coef[g];
                coefficients[(b, a, g)] = -coef[g];
            }
            pairs.push((a, b));
        }
    }
    Ok(StructureConstants {
        coefficients,
        pairs,
        residuals,
        bracket_magnitudes: magnitudes,
        fit_points: points,
    })
}

/// Brackets, fit and residuals for `fields` sampled at `points`.
pub fn analyze(fields: &[&dyn VectorField], points: ArrayView2<f64>) -> Result<StructureConstants> {
    let generators = sample_fields(fields, points)?;
    let brackets = all_brackets(fields, points)?;
    fit_structure_constants(&generators, &brackets)
}

/// `Σ_{α<β} mean_i ‖C_αβ(z_i)‖²` with `C_αβ = [G_α, G_β] − Σ_γ a_αβγ G_γ`
/// for an arbitrary coefficient tensor `a` of shape `(N, N, N)`.
pub fn closure_loss(coefficients: &Array3<f64>, generators: &[SampledField], brackets: &[SampledField]) -> Result<f64> {
    let n = generators.len();
    if coefficients.dim() != (n, n, n) {
        return Err(Error::shape(format!(
            "coefficients {:?} for {n} generators",
            coefficients.dim()
        )));
    }
    let Some(first) = generators.first() else {
        return Ok(0.0);
    };
    check_same_points(&first.points, generators)?;
    check_same_points(&first.points, brackets)?;
    let m = first.points.nrows().max(1) as f64;
    let mut loss = 0.0;
    for br in brackets {
        let FieldSource::Bracket(a, b) = br.source else {
            return Err(Error::config(format!("{:?} is not a bracket field", br.source)));
        };
        if a >= n || b >= n {
            return Err(Error::config(format!("bracket ({a}, {b}) for {n} generators")));
        }
        let mut c = br.values.clone();
        for (g, gen) in generators.iter().enumerate() {
            c.scaled_add(-coefficients[(a, b, g)], &gen.values);
        }
        loss += c.iter().map(|v| v * v).sum::<f64>() / m;
    }
    Ok(loss)
}

/// True when every structure constant and every relative bracket magnitude is
/// within `tol`. A single generator is trivially Abelian.
pub fn is_abelian(constants: &StructureConstants, tol: f64) -> bool {
    let max_a = constants.coefficients.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let max_mag = constants.bracket_magnitudes.iter().copied().fold(0.0_f64, f64::max);
    max_a <= tol && max_mag <= tol
}

fn cholesky(a: &Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum();
            if i == j {
                let d = a[(i, i)] - s;
                if !(d > 0.0) {
                    return Err(Error::NonFinite(format!(
                        "generator Gram matrix is not positive definite (pivot {d:e})"
                    )));
                }
                l[(i, i)] = d.sqrt();
            } else {
                l[(i, j)] = (a[(i, j)] - s) / l[(j, j)];
            }
        }
    }
    Ok(l)
}

fn cholesky_solve(l: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut y = Array1::<f64>::zeros(n);
    for i in 0..n {
        let s: f64 = (0..i).map(|k| l[(i, k)] * y[k]).sum();
        y[i] = (b[i] - s) / l[(i, i)];
    }
    let mut x = Array1::<f64>::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| l[(k, i)] * x[k]).sum();
        x[i] = (y[i] - s) / l[(i, i)];
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{so3_generators, ConstantField, LinearField};
    use ndarray::array;

    fn cube_points(m: usize, dim: usize) -> Array2<f64> {
        Array2::from_shape_fn((m, dim), |(i, j)| (((i * 37 + j * 101) % 97) as f64 / 48.5) - 1.0)
    }

    #[test]
    fn pair_indices_are_lexicographic() {
        let n = 5;
        let mut k = 0;
        for a in 0..n {
            for b in a + 1..n {
                assert_eq!(pair_index(n, a, b), k);
                k += 1;
            }
        }
    }

    #[test]
    fn linear_bracket_is_the_matrix_commutator() {
        let a = array![[1.0, 2.0], [0.0, -1.0]];
        let b = array![[0.0, 1.0], [3.0, 0.5]];
        let pts = cube_points(10, 2);
        let fa = LinearField::new(a.clone()).unwrap();
        let fb = LinearField::new(b.clone()).unwrap();
        let got = bracket(&fa, &fb, pts.view()).unwrap();
        let comm = a.dot(&b) - b.dot(&a);
        let expected = pts.dot(&comm.t());
        assert!((&got - &expected).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn so3_brackets_cycle() {
        let [lx, ly, lz] = so3_generators();
        let pts = cube_points(50, 3);
        let c = bracket(&lx, &ly, pts.view()).unwrap();
        let z = lz.eval(pts.view()).unwrap();
        assert!((&c - &z).iter().all(|v| v.abs() < 1e-14));
    }

    #[test]
    fn so3_structure_constants() {
        let fields = so3_generators();
        let refs: Vec<&dyn VectorField> = fields.iter().map(|f| f as &dyn VectorField).collect();
        let sc = analyze(&refs, cube_points(64, 3).view()).unwrap();
        assert_eq!(sc.pairs(), &[(0, 1), (0, 2), (1, 2)]);
        assert!((sc.get(0, 1, 2) - 1.0).abs() < 1e-8);
        assert!((sc.get(0, 2, 1) + 1.0).abs() < 1e-8);
        assert!((sc.get(1, 2, 0) - 1.0).abs() < 1e-8);
        assert!((sc.get(1, 0, 2) + 1.0).abs() < 1e-8);
        assert!(sc.max_residual() < 1e-8);
        assert!(!is_abelian(&sc, 0.05));
    }

    #[test]
    fn translations_commute() {
        let e1 = ConstantField { value: array![1.0, 0.0, 0.0] };
        let e2 = ConstantField { value: array![0.0, 1.0, 0.0] };
        let sc = analyze(&[&e1, &e2], cube_points(20, 3).view()).unwrap();
        assert_eq!(sc.residuals(), &[0.0]);
        assert!(sc.coefficients().iter().all(|v| v.abs() < 1e-12));
        assert!(is_abelian(&sc, 0.05));
    }

    #[test]
    fn single_generator_is_vacuous() {
        let [lx, ..] = so3_generators();
        let sc = analyze(&[&lx], cube_points(8, 3).view()).unwrap();
        assert!(sc.pairs().is_empty() && sc.residuals().is_empty());
        assert!(is_abelian(&sc, 0.05));
        assert_eq!(sc.max_residual(), 0.0);
    }

    #[test]
    fn zero_coefficients_give_the_bracket_norm() {
        let fields = so3_generators();
        let refs: Vec<&dyn VectorField> = fields.iter().map(|f| f as &dyn VectorField).collect();
        let pts = cube_points(40, 3);
        let gens = sample_fields(&refs, pts.view()).unwrap();
        let brs = all_brackets(&refs, pts.view()).unwrap();
        let zero = Array3::zeros((3, 3, 3));
        let expected: f64 = brs.iter().map(|b| b.squared_norm() / 40.0).sum();
        assert!((closure_loss(&zero, &gens, &brs).unwrap() - expected).abs() < 1e-12);
        let sc = fit_structure_constants(&gens, &brs).unwrap();
        assert!(closure_loss(sc.coefficients(), &gens, &brs).unwrap() < 1e-10);
    }

    #[test]
    fn mismatched_inputs_are_rejected() {
        let [lx, ly, _] = so3_generators();
        let a = sample_fields(&[&lx], cube_points(8, 3).view()).unwrap();
        let b = sample_fields(&[&ly], cube_points(9, 3).view()).unwrap();
        let mut gens = a.clone();
        gens.push(SampledField::new(b[0].points.clone(), b[0].values.clone(), FieldSource::Generator(1)).unwrap());
        assert!(fit_structure_constants(&gens, &[]).is_err());
        assert!(bracket(&lx, &ConstantField { value: array![1.0, 0.0] }, cube_points(3, 3).view()).is_err());
        assert!(SampledField::new(Array2::zeros((2, 3)), Array2::zeros((2, 2)), FieldSource::Generator(0)).is_err());
        assert!(fit_structure_constants(&[], &[]).is_err());
    }

    #[test]
    fn csv_lists_every_gamma() {
        let fields = so3_generators();
        let refs: Vec<&dyn VectorField> = fields.iter().map(|f| f as &dyn VectorField).collect();
        let sc = analyze(&refs, cube_points(16, 3).view()).unwrap();
        let mut buf = Vec::new();
        sc.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 3);
        assert!(text.starts_with("alpha,beta,gamma,a,residual\n0,1,0,"));
        assert!(sc.report(0.05, 0.05).contains("abelian: no"));
    }
}
