mod support;

use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;
use support::{fd_jacobian, random_batch};
use symflow::algebra::{all_brackets, analyze, bracket, closure_loss, fit_structure_constants, sample_fields};
use symflow::diffcore::{Activation, Mlp};
use symflow::field::{so3_generators, LinearField, VectorField};

fn random_field(dim: usize, hidden: usize, act: Activation, seed: u64) -> Mlp {
    let mut net = Mlp::new(&[dim, hidden, dim], &[act, Activation::Identity], seed).unwrap();
    let n = net.biases().len();
    for (j, b) in net.biases_mut().iter_mut().enumerate() {
        b.mapv_inplace(|_| 0.1 * (j as f64 + 1.0) / n as f64);
    }
    net
}

/// Bracket from central-difference Jacobians.
fn fd_bracket(a: &dyn VectorField, b: &dyn VectorField, z: &Array1<f64>, h: f64) -> Array1<f64> {
    let ja = fd_jacobian(z, h, |p| a.eval_point(p.view()).unwrap());
    let jb = fd_jacobian(z, h, |p| b.eval_point(p.view()).unwrap());
    ja.dot(&b.eval_point(z.view()).unwrap()) - jb.dot(&a.eval_point(z.view()).unwrap())
}

fn assert_matches_fd(act: Activation, seed: u64) {
    let dim = 4;
    let a = random_field(dim, 16, act, seed);
    let b = random_field(dim, 16, act, seed + 1);
    let pts = random_batch(100, dim, seed + 2);
    let ad = bracket(&a, &b, pts.view()).unwrap();
    for (i, z) in pts.rows().into_iter().enumerate() {
        let fd = fd_bracket(&a, &b, &z.to_owned(), 1e-4);
        let diff = (&fd - &ad.row(i)).mapv(|v| v * v).sum().sqrt();
        let scale = ad.row(i).mapv(|v| v * v).sum().sqrt().max(1e-12);
        assert!(diff / scale < 1e-5, "point {i}: relative {}", diff / scale);
    }
}

#[test]
fn brackets_match_difference_brackets_on_smooth_fields() {
    assert_matches_fd(Activation::Sigmoid, 1);
    assert_matches_fd(Activation::Sigmoid, 11);
}

#[test]
fn brackets_match_difference_brackets_on_relu_fields() {
    assert_matches_fd(Activation::Relu, 21);
}

#[test]
fn so3_closes_with_levi_civita_constants() {
    let fields = so3_generators();
    let refs: Vec<&dyn VectorField> = fields.iter().map(|f| f as &dyn VectorField).collect();
    let pts = random_batch(512, 3, 9);
    let sc = analyze(&refs, pts.view()).unwrap();
    for a in 0..3 {
        for b in 0..3 {
            for g in 0..3 {
                let eps = match (a, b, g) {
                    (0, 1, 2) | (1, 2, 0) | (2, 0, 1) => 1.0,
                    (1, 0, 2) | (2, 1, 0) | (0, 2, 1) => -1.0,
                    _ => 0.0,
                };
                assert!((sc.get(a, b, g) - eps).abs() < 1e-9, "a[{a}{b}{g}]");
            }
        }
    }
    let gens = sample_fields(&refs, pts.view()).unwrap();
    let brs = all_brackets(&refs, pts.view()).unwrap();
    assert!(closure_loss(sc.coefficients(), &gens, &brs).unwrap() < 1e-10);
}

fn linear(seed: u64) -> LinearField {
    LinearField::new(random_batch(3, 3, seed)).unwrap()
}

#[test]
fn jacobi_identity_on_linear_fields() {
    let (x, y, z) = (linear(1), linear(2), linear(3));
    let pts = random_batch(100, 3, 4);
    // [X,[Y,Z]] + [Y,[Z,X]] + [Z,[X,Y]] with the inner brackets as linear fields
    let comm = |p: &LinearField, q: &LinearField| {
        LinearField::new(p.matrix.dot(&q.matrix) - q.matrix.dot(&p.matrix)).unwrap()
    };
    let total = bracket(&x, &comm(&y, &z), pts.view()).unwrap()
        + bracket(&y, &comm(&z, &x), pts.view()).unwrap()
        + bracket(&z, &comm(&x, &y), pts.view()).unwrap();
    assert!(total.iter().all(|v| v.abs() < 1e-12));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn brackets_are_antisymmetric(seed in 0u64..10_000) {
        let a = random_field(3, 8, Activation::Relu, seed);
        let b = random_field(3, 8, Activation::Sigmoid, seed + 1);
        let pts = random_batch(20, 3, seed + 2);
        let ab = bracket(&a, &b, pts.view()).unwrap();
        let ba = bracket(&b, &a, pts.view()).unwrap();
        prop_assert!((&ab + &ba).iter().all(|v| v.abs() < 1e-12));
        let aa = bracket(&a, &a, pts.view()).unwrap();
        prop_assert!(aa.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn fitted_constants_are_optimal(seed in 0u64..10_000, shift in -1.0f64..1.0) {
        let fields = [random_field(3, 6, Activation::Sigmoid, seed),
                      random_field(3, 6, Activation::Sigmoid, seed + 1),
                      random_field(3, 6, Activation::Sigmoid, seed + 2)];
        let refs: Vec<&dyn VectorField> = fields.iter().map(|f| f as &dyn VectorField).collect();
        let pts = random_batch(40, 3, seed + 3);
        let gens = sample_fields(&refs, pts.view()).unwrap();
        let brs = all_brackets(&refs, pts.view()).unwrap();
        let sc = fit_structure_constants(&gens, &brs).unwrap();
        let best = closure_loss(sc.coefficients(), &gens, &brs).unwrap();
        let zero = closure_loss(&Array3::zeros((3, 3, 3)), &gens, &brs).unwrap();
        prop_assert!(best <= zero * (1.0 + 1e-12));
        let mut other = sc.coefficients().clone();
        other[(0, 1, 2)] += shift;
        other[(1, 0, 2)] -= shift;
        prop_assert!(best <= closure_loss(&other, &gens, &brs).unwrap() * (1.0 + 1e-12));
        for r in sc.residuals() {
            prop_assert!((0.0..=1.0 + 1e-9).contains(r));
        }
    }
}

#[test]
fn structure_constants_are_antisymmetric_by_construction() {
    let fields = [random_field(3, 6, Activation::Relu, 5), random_field(3, 6, Activation::Relu, 6)];
    let refs: Vec<&dyn VectorField> = fields.iter().map(|f| f as &dyn VectorField).collect();
    let sc = analyze(&refs, random_batch(30, 3, 7).view()).unwrap();
    for g in 0..2 {
        assert_eq!(sc.get(0, 1, g), -sc.get(1, 0, g));
        assert_eq!(sc.get(0, 0, g), 0.0);
    }
    let _: &Array2<f64> = sc.fit_points();
}
