mod common;

use common::*;
use nalgebra::SymmetricEigen;
use nonstat_geo::kernels::{
    covariance_matrix, cross_covariance, matern_bessel, matern_correlation, CovarianceForm, CovarianceSpec,
    CovariateKernel, InputPoint, MaternKernel,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn matern_reference_values() {
    // κ = 1.5 at u = φ: (1 + √3) e^{-√3}
    let k = MaternKernel::new(0.3, 1.5).unwrap();
    let want = (1.0 + 3f64.sqrt()) * (-(3f64.sqrt())).exp();
    assert!((matern_correlation(0.3, &k).unwrap() - want).abs() < 1e-15);
    // κ = 2.5 at u = 2φ: (1 + 2√5 + 20/3) e^{-2√5}
    let k = MaternKernel::new(0.5, 2.5).unwrap();
    let want = (1.0 + 2.0 * 5f64.sqrt() + 20.0 / 3.0) * (-2.0 * 5f64.sqrt()).exp();
    assert!((matern_correlation(1.0, &k).unwrap() - want).abs() < 1e-15);
    // κ = 1 has no closed form: ρ = s K_1(s) with s = √2 u/φ; K_1(√2) from scipy.special.kv.
    let s = 2f64.sqrt();
    assert!((matern_bessel(1.0, 1.0) - s * 0.314_197_611_629_897_84).abs() < 1e-12);
}

#[test]
fn zero_distance_is_unit_correlation() {
    for kappa in [0.5, 1.0, 1.5, 2.5, 3.7] {
        let k = MaternKernel::new(0.2, kappa).unwrap();
        assert_eq!(matern_correlation(0.0, &k).unwrap(), 1.0);
    }
}

#[test]
fn product_of_single_covariate_by_hand() {
    let spec = CovarianceSpec::new(
        CovarianceForm::Product,
        MaternKernel::new(0.3, 0.5).unwrap(),
        vec![CovariateKernel::new("e", MaternKernel::new(0.2, 0.5).unwrap())],
        0.5,
    )
    .unwrap();
    let a = InputPoint::new([0.0, 0.0]).with("e", 0.1);
    let b = InputPoint::new([0.3, 0.4]).with("e", -0.1);
    let c = cross_covariance(&[a], &[b], &spec).unwrap()[(0, 0)];
    let want = 0.5 * (-0.5f64 / 0.3).exp() * (-0.2f64 / 0.2).exp();
    assert!((c - want).abs() < 1e-15);
}

#[test]
fn marginal_variances_by_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts = random_points(&mut rng, 6, 3);
    for (form, factor) in [
        (CovarianceForm::Stationary, 1.0),
        (CovarianceForm::Product, 1.0),
        (CovarianceForm::PartialSum, 3.0),
        (CovarianceForm::FullSum, 4.0),
    ] {
        let spec = random_spec(&mut rng, form, 3);
        let m = covariance_matrix(&pts, &spec, 0.0).unwrap();
        for i in 0..6 {
            assert!((m[(i, i)] - factor * spec.sigma2).abs() < 1e-14 * factor);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn covariance_is_symmetric_psd(seed in any::<u64>(), n in 2usize..40, fi in 0usize..4, p in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, FORMS[fi], p);
        let pts = random_points(&mut rng, n, p);
        let m = covariance_matrix(&pts, &spec, 0.0).unwrap();
        prop_assert!((&m - m.transpose()).abs().max() == 0.0);
        let min = SymmetricEigen::new(m).eigenvalues.min();
        prop_assert!(min >= -1e-8, "min eigenvalue {}", min);
    }

    #[test]
    fn matern_is_monotone_and_bounded(phi in 0.01f64..5.0, u1 in 0.0f64..10.0, du in 0.0f64..10.0, ki in 0usize..3) {
        let k = MaternKernel::new(phi, KAPPAS[ki]).unwrap();
        let a = matern_correlation(u1, &k).unwrap();
        let b = matern_correlation(u1 + du, &k).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-15);
    }

    #[test]
    fn relabeling_points_permutes_the_matrix(seed in any::<u64>(), n in 2usize..15, fi in 0usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = random_spec(&mut rng, FORMS[fi], 2);
        let pts = random_points(&mut rng, n, 2);
        let mut order: Vec<usize> = (0..n).collect();
        order.reverse();
        let permuted: Vec<InputPoint> = order.iter().map(|&i| pts[i].clone()).collect();
        let m = covariance_matrix(&pts, &spec, 0.1).unwrap();
        let mp = covariance_matrix(&permuted, &spec, 0.1).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(mp[(i, j)], m[(order[i], order[j])]);
            }
        }
    }
}
