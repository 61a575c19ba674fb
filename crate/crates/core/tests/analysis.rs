use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use emtdq::analysis::{
    aggregate, charpoly_coefficients, eigen_diff, eigen_residual, eigenvalues, fit_scaling, polynomial_roots,
    AnalysisError, BenchRecord, SampledTrajectory,
};

fn random_matrix(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0))
}

#[test]
fn lc_tank_oscillates_at_resonance() {
    let (l, c) = (0.2, 0.05);
    let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0 / l, 1.0 / c, 0.0]);
    let ev = eigenvalues(&a).unwrap();
    let w = 1.0 / (l * c).sqrt();
    assert!((ev[0] - Complex64::new(0.0, -w)).norm() < 1e-12);
    assert!((ev[1] - Complex64::new(0.0, w)).norm() < 1e-12);
}

#[test]
fn rotation_and_diagonal_spectra() {
    let r = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let ev = eigenvalues(&r).unwrap();
    assert!((ev[0] - Complex64::new(0.0, -1.0)).norm() < 1e-14);
    assert!((ev[1] - Complex64::new(0.0, 1.0)).norm() < 1e-14);
    let d = DMatrix::from_diagonal(&nalgebra::DVector::from_row_slice(&[3.0, -2.0, 0.5]));
    let ev = eigenvalues(&d).unwrap();
    let re: Vec<f64> = ev.iter().map(|z| z.re).collect();
    assert_eq!(re, vec![-2.0, 0.5, 3.0]);
    assert!(ev.iter().all(|z| z.im == 0.0));
}

#[test]
fn large_random_matrix_has_small_residual() {
    let a = random_matrix(50, 11);
    assert!(eigen_residual(&a).unwrap() < 1e-10);
    let ev = eigenvalues(&a).unwrap();
    let trace: f64 = (0..50).map(|i| a[(i, i)]).sum();
    let sum: Complex64 = ev.iter().sum();
    assert!((sum.re - trace).abs() < 1e-10 && sum.im.abs() < 1e-10);
}

#[test]
fn eigenvalues_agree_with_characteristic_polynomial_roots() {
    let big = random_matrix(50, 12);
    for k in 0..10 {
        let sub = big.view((5 * k, 5 * k % 45), (5, 5)).into_owned();
        let a = eigenvalues(&sub).unwrap();
        let b = polynomial_roots(&charpoly_coefficients(&sub));
        assert!(eigen_diff(&a, &b).unwrap() < 1e-8, "block {k}");
    }
}

#[test]
fn similarity_permutation_keeps_spectrum() {
    let a = random_matrix(12, 13);
    let perm: Vec<usize> = vec![3, 7, 0, 11, 5, 1, 9, 2, 10, 4, 8, 6];
    let p = DMatrix::from_fn(12, 12, |i, j| if perm[i] == j { 1.0 } else { 0.0 });
    let b = &p * &a * p.transpose();
    let d = eigen_diff(&eigenvalues(&a).unwrap(), &eigenvalues(&b).unwrap()).unwrap();
    assert!(d < 1e-10);
}

#[test]
fn eigen_diff_requires_equal_counts() {
    let a = [Complex64::new(1.0, 0.0)];
    assert!(matches!(eigen_diff(&a, &[]), Err(AnalysisError::CountMismatch(1, 0))));
}

fn separated_points() -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::btree_set((-20i32..20, -20i32..20), 1..8)
        .prop_map(|set| set.into_iter().map(|(r, i)| Complex64::new(0.5 * r as f64, 0.5 * i as f64)).collect())
}

proptest! {
    #[test]
    fn eigen_diff_ignores_order_and_tracks_small_shifts(za in separated_points(), shift in -0.1..0.1f64) {
        let rev: Vec<Complex64> = za.iter().rev().copied().collect();
        prop_assert_eq!(eigen_diff(&za, &za).unwrap(), 0.0);
        prop_assert_eq!(eigen_diff(&za, &rev).unwrap(), 0.0);
        let moved: Vec<Complex64> = rev.iter().map(|z| z + shift).collect();
        let d = eigen_diff(&za, &moved).unwrap();
        prop_assert!((d - shift.abs()).abs() < 1e-12);
        prop_assert_eq!(d, eigen_diff(&moved, &za).unwrap());
    }
}

#[test]
fn scaling_fit_recovers_power_law() {
    let pts: Vec<(f64, f64)> = [9.0, 18.0, 36.0, 72.0, 144.0].iter().map(|&n: &f64| (n, 3e-4 * n.powf(1.5))).collect();
    let fit = fit_scaling(&pts).unwrap();
    assert!((fit.exponent - 1.5).abs() < 1e-12);
    assert!((fit.r2 - 1.0).abs() < 1e-12);
    assert!(fit_scaling(&pts[..2]).is_err());
    assert!(fit_scaling(&[(1.0, 1.0), (2.0, 0.0), (3.0, 1.0)]).is_err());
}

#[test]
fn aggregate_drops_warm_up_runs() {
    let rec = |rep, wall| BenchRecord {
        case: "c1".into(),
        buses: 9,
        wall_time: wall,
        peak_rss: 1000,
        allocated: Some(10),
        repetition: rep,
    };
    let agg = aggregate(&[rec(0, 100.0), rec(1, 1.0), rec(2, 3.0)]);
    assert_eq!(agg.len(), 1);
    assert_eq!(agg[0].reps, 2);
    assert!((agg[0].wall_time - 2.0).abs() < 1e-15);
}

#[test]
fn trajectory_files_compare_on_shared_variables() {
    let a = SampledTrajectory::from_csv("t,x,y\n0,1,2\n0.001,1.5,2\n").unwrap();
    let b = SampledTrajectory::from_csv("t,y,x\n0,2,1\n0.001,2.25,1.5\n").unwrap();
    let rep = a.diff(&b).unwrap();
    assert!((rep.max - 0.25).abs() < 1e-15);
    assert_eq!(rep.worst().unwrap().0, "y");
    let c = SampledTrajectory::from_csv("t,w\n0,1\n0.001,1\n").unwrap();
    assert!(matches!(a.diff(&c), Err(AnalysisError::DisjointVariables)));
    assert!(SampledTrajectory::from_csv("t,x\n0,abc\n").is_err());
}
