use super::*;
use crate::operators::{gaussian_kernel, uniform_kernel, Boundary, ImageShape};
use approx::assert_relative_eq;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn normal_mat(rng: &mut ChaCha8Rng, m: usize, n: usize) -> DMatrix<f64> {
    DMatrix::from_iterator(m, n, (0..m * n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn random_problem(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Problem {
    let a = normal_mat(rng, m, n);
    let sigma = rng.random_range(0.05..1.5);
    Problem::new(normal_vec(rng, m), LinearOperator::dense(a).unwrap(), sigma).unwrap()
}

fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}

fn schedule() -> DdpmSchedule {
    DdpmSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

/// Schedule whose last step has `alpha_bar = abar`.
fn schedule_ending_at(abar: f64) -> DdpmSchedule {
    DdpmSchedule::alpha_bar_geometric(2, 0.999, abar).unwrap()
}

fn fd_gradient(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[i] += h;
        lo[i] -= h;
        (f(&hi) - f(&lo)) / (2.0 * h)
    })
}

/// Row-by-row evaluation of the elementwise formula, written independently of
/// the library path.
fn elementwise_oracle(a: &DMatrix<f64>, y: &DVector<f64>, sigma: f64, abar: f64, x: &DVector<f64>) -> DVector<f64> {
    let root = abar.sqrt();
    let mut out = DVector::zeros(a.ncols());
    for m in 0..a.nrows() {
        let row = a.row(m).transpose();
        let resid = y[m] - row.dot(x) / root;
        let denom = sigma * sigma * root + (1.0 - abar) / root * row.norm_squared();
        out += row * (resid / denom);
    }
    out
}

#[test]
fn scalar_example_matches_hand_value() {
    let sched = schedule_ending_at(0.5);
    assert_relative_eq!(sched.alpha_bar(2), 0.5, max_relative = 1e-15);
    let p = Problem::new(DVector::from_vec(vec![3.0]), LinearOperator::dense(DMatrix::from_element(1, 1, 2.0)).unwrap(), 1.0).unwrap();
    let x = DVector::from_vec(vec![1.0]);
    let expected = 2.0 * 2f64.sqrt() * (3.0 - 2.0 * 2f64.sqrt()) / 5.0;
    let cache = ResolventCache::new(&p).unwrap();
    assert_relative_eq!(pll_score_direct(&p, &sched, &x, 2).unwrap()[0], expected, max_relative = 1e-13);
    assert_relative_eq!(pll_score_svd(&p, &cache, &sched, &x, 2).unwrap()[0], expected, max_relative = 1e-13);
    assert_relative_eq!(pll_score_diag(&p, &sched, &x, 2).unwrap()[0], expected, max_relative = 1e-13);
}

#[test]
fn identity_near_clean_limit_gives_gaussian_likelihood_score() {
    let sched = DdpmSchedule::alpha_bar_geometric(2, 1.0 - 1e-12, 0.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let y = normal_vec(&mut rng, 5);
    let x = normal_vec(&mut rng, 5);
    let p = Problem::new(y.clone(), LinearOperator::identity(5).unwrap(), 0.3).unwrap();
    let got = pll_score_direct(&p, &sched, &x, 1).unwrap();
    let clean = (&y - &x) / 0.09;
    assert!(rel_err(&got, &clean) < 1e-8);
}

#[test]
fn direct_form_is_gradient_of_gaussian_log_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let sched = schedule();
    for _ in 0..20 {
        let p = random_problem(&mut rng, 4, 6);
        let x = normal_vec(&mut rng, 6);
        let t = rng.random_range(1..=1000);
        let score = pll_score_direct(&p, &sched, &x, t).unwrap();
        let fd = fd_gradient(|z| pseudo_log_likelihood(&p, &sched, z, t).unwrap(), &x, 1e-5);
        for i in 0..6 {
            assert!((score[i] - fd[i]).abs() <= 1e-5 * (1.0 + score[i].abs()), "t={t}: {} vs {}", score[i], fd[i]);
        }
    }
}

#[test]
fn svd_form_matches_direct_form_on_random_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sched = schedule();
    for _ in 0..50 {
        let p = random_problem(&mut rng, 8, 12);
        let cache = ResolventCache::new(&p).unwrap();
        let x = normal_vec(&mut rng, 12);
        let t = rng.random_range(1..=1000);
        let direct = pll_score_direct(&p, &sched, &x, t).unwrap();
        let svd = pll_score_svd(&p, &cache, &sched, &x, t).unwrap();
        assert!(rel_err(&svd, &direct) <= 1e-10, "t={t}");
    }
}

#[test]
fn svd_form_matches_direct_form_on_tall_dense() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let sched = schedule();
    for _ in 0..10 {
        let p = random_problem(&mut rng, 9, 5);
        let cache = ResolventCache::new(&p).unwrap();
        let x = normal_vec(&mut rng, 5);
        let t = rng.random_range(1..=1000);
        let direct = pll_score_direct(&p, &sched, &x, t).unwrap();
        let svd = pll_score_svd(&p, &cache, &sched, &x, t).unwrap();
        assert!(rel_err(&svd, &direct) <= 1e-10);
    }
}

#[test]
fn structured_operators_agree_across_forms() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sched = schedule();
    let rgb = ImageShape::new(6, 6, 3).unwrap();
    let gray = ImageShape::gray(8, 6);
    let ops = vec![
        LinearOperator::identity(10).unwrap(),
        LinearOperator::mask(10, vec![0, 3, 4, 9]).unwrap(),
        LinearOperator::block_avg_sr(rgb, 2).unwrap(),
        LinearOperator::colorize_avg(rgb).unwrap(),
        LinearOperator::separable_blur(gray, uniform_kernel(3), Boundary::Circular).unwrap(),
        LinearOperator::separable_blur(gray, gaussian_kernel(5, 1.0), Boundary::Circular).unwrap(),
    ];
    for op in ops {
        let diag_ok = op.row_orthogonal_norms().is_ok();
        let y = normal_vec(&mut rng, op.rows());
        let p = Problem::new(y, op, 0.1).unwrap();
        let cache = ResolventCache::new(&p).unwrap();
        for t in [1, 10, 300, 1000] {
            let x = normal_vec(&mut rng, p.dim());
            let direct = pll_score_direct(&p, &sched, &x, t).unwrap();
            let svd = pll_score_svd(&p, &cache, &sched, &x, t).unwrap();
            assert!(rel_err(&svd, &direct) <= 1e-10, "{:?} t={t}", p.operator().kind());
            if diag_ok {
                let diag = pll_score_diag(&p, &sched, &x, t).unwrap();
                assert!(rel_err(&diag, &direct) <= 1e-10);
            }
        }
    }
}

#[test]
fn mask_matches_independent_elementwise_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let sched = schedule();
    let op = LinearOperator::mask(7, vec![1, 2, 5]).unwrap();
    let a = op.to_dense();
    let p = Problem::new(normal_vec(&mut rng, 3), op, 0.2).unwrap();
    let cache = ResolventCache::new(&p).unwrap();
    for t in [1, 50, 999] {
        let x = normal_vec(&mut rng, 7);
        let oracle = elementwise_oracle(&a, p.y(), 0.2, sched.alpha_bar(t), &x);
        assert!(rel_err(&pll_score_svd(&p, &cache, &sched, &x, t).unwrap(), &oracle) <= 1e-10);
        assert!(rel_err(&pll_score_diag(&p, &sched, &x, t).unwrap(), &oracle) <= 1e-12);
    }
}

#[test]
fn zero_singular_direction_is_annihilated() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
    let p = Problem::new(DVector::from_vec(vec![1.5, -0.7]), LinearOperator::dense(a).unwrap(), 0.5).unwrap();
    let cache = ResolventCache::new(&p).unwrap();
    let sched = schedule();
    let x = DVector::from_vec(vec![0.3, 2.0]);
    for t in [1, 500, 1000] {
        let s = pll_score_svd(&p, &cache, &sched, &x, t).unwrap();
        assert_eq!(s[1], 0.0);
        assert!(s[0] != 0.0);
    }
}

#[test]
fn identity_diag_reduces_to_scalar_formula() {
    let sched = schedule();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let y = normal_vec(&mut rng, 4);
    let p = Problem::new(y.clone(), LinearOperator::identity(4).unwrap(), 0.4).unwrap();
    for t in [1, 200, 1000] {
        let x = normal_vec(&mut rng, 4);
        let ab = sched.alpha_bar(t);
        let expected = (&y / ab.sqrt() - &x / ab) * (ab / (0.16 * ab + (1.0 - ab)));
        let diag = pll_score_diag(&p, &sched, &x, t).unwrap();
        assert!(rel_err(&diag, &expected) <= 1e-12);
        assert!(rel_err(&pll_score_direct(&p, &sched, &x, t).unwrap(), &expected) <= 1e-12);
    }
}

#[test]
fn mask_diag_zero_fills_unmeasured() {
    let p = Problem::new(DVector::from_vec(vec![1.0, 2.0]), LinearOperator::mask(4, vec![0, 2]).unwrap(), 0.1).unwrap();
    let x = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
    let s = pll_score_diag(&p, &schedule(), &x, 10).unwrap();
    assert_eq!(s[1], 0.0);
    assert_eq!(s[3], 0.0);
    assert!(s[0] != 0.0 && s[2] != 0.0);
}

#[test]
fn diag_rejects_non_orthogonal_rows() {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let p = Problem::new(DVector::from_vec(vec![0.0, 0.0]), LinearOperator::dense(a).unwrap(), 1.0).unwrap();
    let err = pll_score_diag(&p, &schedule(), &DVector::zeros(2), 1).unwrap_err();
    assert!(matches!(err, DmpsError::NotRowOrthogonal(_)));
}

#[test]
fn smld_identity_example() {
    let sched = SmldSchedule::geometric(2, 2.0, 1.0, 1e-3, 1).unwrap();
    assert_eq!(sched.sigma(1), 1.0);
    let p = Problem::new(DVector::from_vec(vec![2.0]), LinearOperator::identity(1).unwrap(), 1.0).unwrap();
    let cache = ResolventCache::new(&p).unwrap();
    let x = DVector::from_vec(vec![0.0]);
    assert_relative_eq!(pll_score_smld(&p, &cache, &sched, &x, 1).unwrap()[0], 1.0, max_relative = 1e-15);
    assert_relative_eq!(pll_score_smld_direct(&p, &sched, &x, 1).unwrap()[0], 1.0, max_relative = 1e-15);
}

#[test]
fn smld_svd_matches_dense_and_its_log_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sched = SmldSchedule::geometric(20, 10.0, 0.01, 1e-4, 1).unwrap();
    for _ in 0..30 {
        let m = rng.random_range(1..7);
        let n = rng.random_range(1..7);
        let p = random_problem(&mut rng, m, n);
        let cache = ResolventCache::new(&p).unwrap();
        let x = normal_vec(&mut rng, n);
        let t = rng.random_range(1..=20);
        let direct = pll_score_smld_direct(&p, &sched, &x, t).unwrap();
        let svd = pll_score_smld(&p, &cache, &sched, &x, t).unwrap();
        assert!(rel_err(&svd, &direct) <= 1e-10);
        let fd = fd_gradient(|z| pseudo_log_likelihood_smld(&p, &sched, z, t).unwrap(), &x, 1e-5);
        for i in 0..n {
            assert!((direct[i] - fd[i]).abs() <= 1e-5 * (1.0 + direct[i].abs()));
        }
    }
}

#[test]
fn smld_small_noise_gives_clean_likelihood_score() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let sched = SmldSchedule::geometric(2, 1.0, 1e-9, 1e-4, 1).unwrap();
    let p = random_problem(&mut rng, 3, 5);
    let cache = ResolventCache::new(&p).unwrap();
    let x = normal_vec(&mut rng, 5);
    let got = pll_score_smld(&p, &cache, &sched, &x, 1).unwrap();
    let clean = clean_likelihood_score(&p, &x).unwrap();
    assert!(rel_err(&got, &clean) < 1e-8);
}

#[test]
fn converges_to_clean_score_as_noise_vanishes() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let sched = DdpmSchedule::alpha_bar_geometric(60, 1.0 - 1e-10, 0.05).unwrap();
    let p = random_problem(&mut rng, 4, 6);
    let cache = ResolventCache::new(&p).unwrap();
    let x = normal_vec(&mut rng, 6);
    let clean = clean_likelihood_score(&p, &x).unwrap();
    let errors: Vec<f64> = (1..=60)
        .rev()
        .map(|t| rel_err(&pll_score_svd(&p, &cache, &sched, &x, t).unwrap(), &clean))
        .collect();
    for w in errors.windows(2) {
        assert!(w[1] <= w[0] + 1e-12, "{errors:?}");
    }
    assert!(*errors.last().unwrap() < 1e-6);
}

#[test]
fn cache_projects_measurement() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = random_problem(&mut rng, 5, 8);
    let cache = ResolventCache::new(&p).unwrap();
    let (u, s, _) = p.operator().svd_dense_factors();
    assert!((cache.ut_y() - u.tr_mul(p.y())).amax() <= 1e-12 * (1.0 + p.y().norm()));
    assert_eq!(cache.singular_values().as_slice(), s.as_slice());
}

#[test]
fn rejects_bad_problems_and_inputs() {
    let op = LinearOperator::identity(3).unwrap();
    assert!(Problem::new(DVector::zeros(3), op.clone(), 0.0).is_err());
    assert!(Problem::new(DVector::zeros(3), op.clone(), f64::NAN).is_err());
    assert!(Problem::new(DVector::zeros(2), op.clone(), 1.0).is_err());
    assert!(Problem::new(DVector::from_vec(vec![0.0, f64::INFINITY, 0.0]), op.clone(), 1.0).is_err());
    let p = Problem::new(DVector::zeros(3), op, 1.0).unwrap();
    let sched = schedule();
    assert!(pll_score_direct(&p, &sched, &DVector::zeros(4), 1).is_err());
    assert!(pll_score_direct(&p, &sched, &DVector::zeros(3), 0).is_err());
    assert!(pll_score_direct(&p, &sched, &DVector::zeros(3), 1001).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_and_direct_forms_agree(seed in any::<u64>(), m in 1usize..7, n in 1usize..7, t in 1usize..=1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_problem(&mut rng, m, n);
        let cache = ResolventCache::new(&p).unwrap();
        let x = normal_vec(&mut rng, n);
        let sched = schedule();
        let direct = pll_score_direct(&p, &sched, &x, t).unwrap();
        let svd = pll_score_svd(&p, &cache, &sched, &x, t).unwrap();
        prop_assert!((&svd - &direct).norm() <= 1e-10 * direct.norm().max(1e-12));
    }
}
