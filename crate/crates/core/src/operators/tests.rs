use super::*;
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(m, n, (0..m * n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Singular values of the materialized matrix from an independent dense SVD.
fn oracle_singular_values(op: &LinearOperator) -> Vec<f64> {
    let mut s: Vec<f64> = op.to_dense().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

fn sample_operators() -> Vec<LinearOperator> {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let rgb = ImageShape::new(4, 6, 3).unwrap();
    vec![
        LinearOperator::identity(7).unwrap(),
        LinearOperator::mask(9, vec![0, 3, 4, 8]).unwrap(),
        LinearOperator::block_avg_sr(ImageShape::new(4, 6, 1).unwrap(), 2).unwrap(),
        LinearOperator::block_avg_sr(rgb, 2).unwrap(),
        LinearOperator::colorize_avg(rgb).unwrap(),
        LinearOperator::separable_blur(ImageShape::gray(6, 5), gaussian_kernel(3, 0.8), Boundary::Circular).unwrap(),
        LinearOperator::separable_blur(rgb, vec![0.2, 0.5, 0.3], Boundary::Circular).unwrap(),
        LinearOperator::dense(random_matrix(&mut rng, 5, 8)).unwrap(),
        LinearOperator::dense(random_matrix(&mut rng, 8, 5)).unwrap(),
    ]
}

#[test]
fn identity_examples() {
    let op = LinearOperator::identity(3).unwrap();
    let x = DVector::from_vec(vec![1.0, 2.0, 3.0]);
    assert_eq!(op.apply(&x).unwrap(), x);
    assert_eq!(LinearOperator::identity(2).unwrap().svd().singular_values(), &[1.0, 1.0]);
    assert!(matches!(LinearOperator::identity(0), Err(DmpsError::InvalidRange(_))));
}

#[test]
fn mask_examples() {
    let op = LinearOperator::mask(4, vec![0, 2]).unwrap();
    let x = DVector::from_vec(vec![5.0, 6.0, 7.0, 8.0]);
    assert_eq!(op.apply(&x).unwrap().as_slice(), &[5.0, 7.0]);
    let back = op.apply_transpose(&DVector::from_vec(vec![5.0, 7.0])).unwrap();
    assert_eq!(back.as_slice(), &[5.0, 0.0, 7.0, 0.0]);
    assert!(matches!(
        LinearOperator::mask(4, vec![3, 3]),
        Err(DmpsError::DuplicateIndex(3))
    ));
    assert!(matches!(
        LinearOperator::mask(4, vec![1, 4]),
        Err(DmpsError::IndexOutOfRange { index: 4, len: 4 })
    ));
    assert!(LinearOperator::mask(4, vec![]).is_err());
}

#[test]
fn row_orthonormal_kinds_have_identity_gram() {
    for op in [
        LinearOperator::identity(5).unwrap(),
        LinearOperator::mask(10, vec![1, 2, 7]).unwrap(),
    ] {
        let a = op.to_dense();
        let gram = &a * a.transpose();
        assert_relative_eq!(gram, DMatrix::identity(op.rows(), op.rows()), epsilon = 1e-12);
    }
}

#[test]
fn block_average_examples() {
    let op = LinearOperator::block_avg_sr(ImageShape::gray(2, 2), 2).unwrap();
    let x = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
    assert_eq!(op.apply(&x).unwrap().as_slice(), &[4.0]);
    assert!(matches!(
        LinearOperator::block_avg_sr(ImageShape::gray(3, 3), 2),
        Err(DmpsError::Divisibility(_))
    ));

    let op = LinearOperator::block_avg_sr(ImageShape::gray(8, 8), 2).unwrap();
    assert!(op.svd().singular_values().iter().all(|&s| s == 0.5));
    let a = op.to_dense();
    for row in a.row_iter() {
        let nz: Vec<f64> = row.iter().copied().filter(|&v| v != 0.0).collect();
        assert_eq!(nz, vec![0.25; 4]);
    }
    for s in oracle_singular_values(&op) {
        assert_relative_eq!(s, 0.5, epsilon = 1e-12);
    }
}

#[test]
fn colorize_examples() {
    let op = LinearOperator::colorize_avg(ImageShape::new(1, 1, 3).unwrap()).unwrap();
    let y = op.apply(&DVector::from_vec(vec![0.3, 0.6, 0.9])).unwrap();
    assert_relative_eq!(y[0], 0.6, epsilon = 1e-15);
    assert!(matches!(
        LinearOperator::colorize_avg(ImageShape::gray(4, 4)),
        Err(DmpsError::ChannelCount { expected: 3, got: 1 })
    ));

    // N = 16 * 16 * 3 = 768
    let op = LinearOperator::colorize_avg(ImageShape::new(16, 16, 3).unwrap()).unwrap();
    assert_eq!(op.rows(), 256);
    let expected = 1.0 / 3f64.sqrt();
    for &s in op.svd().singular_values() {
        assert_relative_eq!(s, expected, epsilon = 1e-15);
    }
    for s in oracle_singular_values(&op) {
        assert_relative_eq!(s, expected, epsilon = 1e-12);
    }
}

#[test]
fn delta_kernel_blur_is_identity() {
    let shape = ImageShape::gray(3, 4);
    let op = LinearOperator::separable_blur(shape, vec![1.0], Boundary::Circular).unwrap();
    let x = DVector::from_fn(12, |i, _| i as f64 * 0.5 - 1.0);
    assert_eq!(op.apply(&x).unwrap(), x);
    assert!(op.svd().singular_values().iter().all(|&s| (s - 1.0).abs() < 1e-14));
}

#[test]
fn uniform_blur_top_singular_value_is_one() {
    let op = LinearOperator::separable_blur(ImageShape::gray(4, 4), uniform_kernel(3), Boundary::Circular).unwrap();
    assert_relative_eq!(op.svd().singular_values()[0], 1.0, epsilon = 1e-14);
}

#[test]
fn gaussian_blur_spectrum_matches_dense_svd() {
    let op = LinearOperator::separable_blur(ImageShape::gray(8, 8), gaussian_kernel(5, 1.0), Boundary::Circular).unwrap();
    let ours = op.svd().singular_values();
    let oracle = oracle_singular_values(&op);
    assert_eq!(ours.len(), 64);
    for (a, b) in ours.iter().zip(&oracle) {
        assert!((a - b).abs() <= 1e-8, "{a} vs {b}");
    }
}

#[test]
fn blur_rejects_bad_kernels() {
    let shape = ImageShape::gray(8, 8);
    assert!(matches!(
        LinearOperator::separable_blur(shape, vec![0.5, 0.5], Boundary::Circular),
        Err(DmpsError::Kernel(_))
    ));
    assert!(matches!(
        LinearOperator::separable_blur(shape, vec![0.5, 0.5, 0.5], Boundary::Circular),
        Err(DmpsError::Kernel(_))
    ));
    assert!(matches!(
        LinearOperator::separable_blur(shape, uniform_kernel(9), Boundary::Circular),
        Err(DmpsError::Kernel(_))
    ));
}

#[test]
fn dense_examples() {
    let op = LinearOperator::dense(DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0])).unwrap();
    assert_eq!(op.svd().singular_values(), &[2.0, 0.0]);
    let op = LinearOperator::dense(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])).unwrap();
    for &s in op.svd().singular_values() {
        assert_relative_eq!(s, 1.0, epsilon = 1e-14);
    }
    let bad = DMatrix::from_row_slice(1, 2, &[1.0, f64::NAN]);
    assert!(matches!(LinearOperator::dense(bad), Err(DmpsError::NonFinite(_))));
}

#[test]
fn dense_gaussian_svd_reconstructs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_matrix(&mut rng, 8, 16);
    let op = LinearOperator::dense(a.clone()).unwrap();
    let (u, s, vt) = op.svd_dense_factors();
    let rebuilt = &u * DMatrix::from_diagonal(&DVector::from_vec(s)) * &vt;
    assert!((rebuilt - &a).norm() / a.norm() <= 1e-8);
}

#[test]
fn svd_invariants_hold_for_every_kind() {
    for op in sample_operators() {
        let (u, s, vt) = op.svd_dense_factors();
        let r = op.rank();
        assert_eq!(s.len(), r);
        assert!(s.windows(2).all(|w| w[0] >= w[1]), "{:?}", op.kind());
        assert!(s.iter().all(|&v| v >= 0.0));
        assert_relative_eq!(u.transpose() * &u, DMatrix::identity(r, r), epsilon = 1e-10);
        assert_relative_eq!(&vt * vt.transpose(), DMatrix::identity(r, r), epsilon = 1e-10);
        let a = op.to_dense();
        let rebuilt = &u * DMatrix::from_diagonal(&DVector::from_vec(s)) * &vt;
        assert!((rebuilt - &a).norm() <= 1e-8 * a.norm(), "{:?}", op.kind());
    }
}

#[test]
fn structured_apply_matches_svd_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for op in sample_operators() {
        for _ in 0..5 {
            let x = random_vec(&mut rng, op.cols());
            let direct = op.apply(&x).unwrap();
            let s = DVector::from_column_slice(op.svd().singular_values());
            let via_svd = op.svd_u(&op.svd_vt(&x).unwrap().component_mul(&s)).unwrap();
            assert!((&direct - &via_svd).norm() <= 1e-9 * direct.norm().max(1e-300), "{:?}", op.kind());
        }
    }
}

#[test]
fn dense_adjoint_identity_on_many_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let op = LinearOperator::dense(random_matrix(&mut rng, 4, 6)).unwrap();
    for _ in 0..100 {
        let x = random_vec(&mut rng, 6);
        let y = random_vec(&mut rng, 4);
        let lhs = op.apply(&x).unwrap().dot(&y);
        let rhs = x.dot(&op.apply_transpose(&y).unwrap());
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0));
    }
}

#[test]
fn dimension_mismatch_is_reported() {
    let op = LinearOperator::identity(3).unwrap();
    let err = op.apply(&DVector::zeros(4)).unwrap_err();
    assert!(matches!(err, DmpsError::DimensionMismatch { expected: 3, got: 4, .. }));
    assert!(op.apply_transpose(&DVector::zeros(2)).is_err());
}

#[test]
fn row_orthogonal_norms() {
    let op = LinearOperator::block_avg_sr(ImageShape::gray(4, 4), 2).unwrap();
    assert!(op.row_orthogonal_norms().unwrap().iter().all(|&v| v == 0.25));
    let op = LinearOperator::dense(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0])).unwrap();
    assert!(matches!(op.row_orthogonal_norms(), Err(DmpsError::NotRowOrthogonal(_))));
    let op = LinearOperator::dense(DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 0.0, 0.0, 2.0])).unwrap();
    assert_eq!(op.row_orthogonal_norms().unwrap().as_slice(), &[2.0, 4.0]);
}

#[test]
fn svd_is_shared_across_threads() {
    let op = std::sync::Arc::new(LinearOperator::separable_blur(ImageShape::gray(8, 8), uniform_kernel(3), Boundary::Circular).unwrap());
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let op = op.clone();
            std::thread::spawn(move || op.svd() as *const Svd as usize)
        })
        .collect();
    let ptrs: Vec<usize> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(ptrs.windows(2).all(|w| w[0] == w[1]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn adjoint_identity_all_kinds(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for op in sample_operators() {
            let x = random_vec(&mut rng, op.cols());
            let y = random_vec(&mut rng, op.rows());
            let lhs = op.apply(&x).unwrap().dot(&y);
            let rhs = x.dot(&op.apply_transpose(&y).unwrap());
            let scale = op.apply(&x).unwrap().norm() * y.norm();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * scale.max(1e-300));
        }
    }
}
