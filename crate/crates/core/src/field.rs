//! Vector fields on ℝ^ℓ: trained generator networks and a few closed-form
//! fields used as references.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::diffcore::Mlp;
use crate::{Error, Result};

/// A map ℝ^ℓ → ℝ^ℓ that can be evaluated on a batch of points and
/// differentiated at a single point.
pub trait VectorField {
    fn dim(&self) -> usize;

    /// Field values at each row of `points`.
    fn eval(&self, points: ArrayView2<f64>) -> Result<Array2<f64>>;

    /// Jacobian `∂G_r/∂z_c` at `point`, shape `(ℓ, ℓ)`.
    fn jacobian(&self, point: ArrayView1<f64>) -> Result<Array2<f64>>;

    fn eval_point(&self, point: ArrayView1<f64>) -> Result<Array1<f64>> {
        let out = self.eval(point.insert_axis(Axis(0)))?;
        Ok(out.index_axis_move(Axis(0), 0))
    }
}

pub(crate) fn check_points(dim: usize, points: ArrayView2<f64>) -> Result<()> {
    if points.ncols() != dim {
        return Err(Error::shape(format!(
            "field of dimension {dim} evaluated on points of width {}",
            points.ncols()
        )));
    }
    Ok(())
}

impl VectorField for Mlp {
    fn dim(&self) -> usize {
        self.input_width()
    }

    fn eval(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        if self.input_width() != self.output_width() {
            return Err(Error::shape(format!(
                "network {}→{} is not a vector field",
                self.input_width(),
                self.output_width()
            )));
        }
        self.forward(points)
    }

    fn jacobian(&self, point: ArrayView1<f64>) -> Result<Array2<f64>> {
        Mlp::jacobian(self, point)
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn eval(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        (**self).eval(points)
    }

    fn jacobian(&self, point: ArrayView1<f64>) -> Result<Array2<f64>> {
        (**self).jacobian(point)
    }
}

/// `G(z) = A z`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearField {
    pub matrix: Array2<f64>,
}

impl LinearField {
    pub fn new(matrix: Array2<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::shape(format!(
                "linear field needs a square matrix, got {:?}",
                matrix.dim()
            )));
        }
        Ok(LinearField { matrix })
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_points(self.dim(), points)?;
        Ok(points.dot(&self.matrix.t()))
    }

    fn jacobian(&self, point: ArrayView1<f64>) -> Result<Array2<f64>> {
        check_points(self.dim(), point.insert_axis(Axis(0)))?;
        Ok(self.matrix.clone())
    }
}

/// A field with the same value everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantField {
    pub value: Array1<f64>,
}

impl VectorField for ConstantField {
    fn dim(&self) -> usize {
        self.value.len()
    }

    fn eval(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_points(self.dim(), points)?;
        let mut out = Array2::zeros((points.nrows(), self.dim()));
        out.rows_mut().into_iter().for_each(|mut r| r.assign(&self.value));
        Ok(out)
    }

    fn jacobian(&self, point: ArrayView1<f64>) -> Result<Array2<f64>> {
        check_points(self.dim(), point.insert_axis(Axis(0)))?;
        Ok(Array2::zeros((self.dim(), self.dim())))
    }
}

/// Unit-speed rotation in the plane, `(−z₂, z₁)/‖z‖`. Singular at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UnitRotation2d;

impl VectorField for UnitRotation2d {
    fn dim(&self) -> usize {
        2
    }

    fn eval(&self, points: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_points(2, points)?;
        let mut out = Array2::zeros((points.nrows(), 2));
        for (mut o, p) in out.rows_mut().into_iter().zip(points.rows()) {
            let r = p[0].hypot(p[1]);
            o[0] = -p[1] / r;
            o[1] = p[0] / r;
        }
        Ok(out)
    }

    fn jacobian(&self, point: ArrayView1<f64>) -> Result<Array2<f64>> {
        check_points(2, point.insert_axis(Axis(0)))?;
        let (x, y) = (point[0], point[1]);
        let r2 = x * x + y * y;
        let r3 = r2 * r2.sqrt();
        // d/dz of (−y, x)/r
        Ok(ndarray::array![[x * y / r3, -x * x / r3], [y * y / r3, -x * y / r3]])
    }
}

/// The three rotation generators of so(3) acting on ℝ³, `L_i(z) = e_i × z`:
/// `L_x = (0, −z₃, z₂)`, `L_y = (z₃, 0, −z₁)`, `L_z = (−z₂, z₁, 0)`.
pub fn so3_generators() -> [LinearField; 3] {
    use ndarray::array;
    [
        LinearField {
            matrix: array![[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]],
        },
        LinearField {
            matrix: array![[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [-1.0, 0.0, 0.0]],
        },
        LinearField {
            matrix: array![[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn rotation_field_is_unit_and_tangent() {
        let pts = array![[3.0, 4.0], [-0.2, 0.1], [1.0, 0.0]];
        let v = UnitRotation2d.eval(pts.view()).unwrap();
        for (p, g) in pts.rows().into_iter().zip(v.rows()) {
            assert!((g.dot(&g) - 1.0).abs() < 1e-12);
            assert!(g.dot(&p).abs() < 1e-12);
        }
        assert_eq!(v.row(2), array![0.0, 1.0]);
    }

    #[test]
    fn rotation_jacobian_matches_difference_quotient() {
        let p = array![0.7, -0.4];
        let jac = UnitRotation2d.jacobian(p.view()).unwrap();
        let h = 1e-6;
        for c in 0..2 {
            let mut up = p.clone();
            up[c] += h;
            let mut dn = p.clone();
            dn[c] -= h;
            let d = (UnitRotation2d.eval_point(up.view()).unwrap()
                - UnitRotation2d.eval_point(dn.view()).unwrap())
                / (2.0 * h);
            for r in 0..2 {
                assert!((jac[(r, c)] - d[r]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn so3_fields_are_cross_products() {
        let [lx, ly, lz] = so3_generators();
        let z = array![[1.0, 2.0, 3.0]];
        assert_eq!(lx.eval(z.view()).unwrap(), array![[0.0, -3.0, 2.0]]);
        assert_eq!(ly.eval(z.view()).unwrap(), array![[3.0, 0.0, -1.0]]);
        assert_eq!(lz.eval(z.view()).unwrap(), array![[-2.0, 1.0, 0.0]]);
    }

    #[test]
    fn non_square_network_is_not_a_field() {
        let mlp = Mlp::new(&[2, 3], &[crate::diffcore::Activation::Identity], 0).unwrap();
        assert!(VectorField::eval(&mlp, Array2::zeros((1, 2)).view()).is_err());
    }
}
