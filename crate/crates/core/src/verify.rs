//! Self-check suite: the three pseudo-likelihood forms against each other,
//! finite-difference checks of every score, and operator adjoint/SVD checks.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DmpsError, Result};
use crate::likelihood::{
    pll_score_diag, pll_score_direct, pll_score_smld, pll_score_smld_direct, pll_score_svd, pseudo_log_likelihood, Problem,
    ResolventCache,
};
use crate::operators::{gaussian_kernel, Boundary, ImageShape, LinearOperator};
use crate::prior::{GaussianPrior, GmmPrior, NoisyPrior};
use crate::schedule::{DdpmSchedule, SmldSchedule};

/// Largest `size` accepted by [`run_verification`].
pub const MAX_VERIFY_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Rows of the random dense operators; columns are `size + size / 2`.
    pub size: usize,
    /// Added to every SVD-form score before comparison. Nonzero only when
    /// checking that the suite detects faults.
    pub perturbation: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            size: 8,
            perturbation: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckResult>,
}

impl VerifyReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn fd_gradient(f: impl Fn(&DVector<f64>) -> Result<f64>, x: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(x.len());
    for i in 0..x.len() {
        let mut hi = x.clone();
        let mut lo = x.clone();
        hi[i] += h;
        lo[i] -= h;
        out[i] = (f(&hi)? - f(&lo)?) / (2.0 * h);
    }
    Ok(out)
}

/// Elementwise error scaled by `1 + |reference|`.
fn fd_error(score: &DVector<f64>, fd: &DVector<f64>) -> f64 {
    score.iter().zip(fd.iter()).map(|(s, f)| (s - f).abs() / (1.0 + f.abs())).fold(0.0, f64::max)
}

struct Suite {
    checks: Vec<CheckResult>,
}

impl Suite {
    fn record(&mut self, name: &str, max_error: f64, tolerance: f64) {
        self.checks.push(CheckResult {
            name: name.to_string(),
            max_error,
            tolerance,
            passed: max_error <= tolerance,
        });
    }
}

fn operator_zoo(size: usize) -> Result<Vec<LinearOperator>> {
    let side = (size as f64).sqrt().ceil().max(4.0) as usize;
    let side = side + side % 2;
    let gray = ImageShape::gray(side, side);
    let rgb = ImageShape::new(side, side, 3)?;
    let kept: Vec<usize> = (0..size).step_by(2).collect();
    Ok(vec![
        LinearOperator::identity(size)?,
        LinearOperator::mask(size, kept)?,
        LinearOperator::block_avg_sr(rgb, 2)?,
        LinearOperator::colorize_avg(rgb)?,
        LinearOperator::separable_blur(gray, gaussian_kernel(3, 1.0), Boundary::Circular)?,
    ])
}

/// Runs every check and reports each one; `Err` only for invalid options.
pub fn run_verification(options: &VerifyOptions) -> Result<VerifyReport> {
    if options.size == 0 || options.size > MAX_VERIFY_SIZE {
        return Err(DmpsError::DimensionTooLarge(format!(
            "verification size must be in 1..={MAX_VERIFY_SIZE}, got {}",
            options.size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut suite = Suite { checks: Vec::new() };
    let ddpm = DdpmSchedule::linear(1000, 1e-4, 0.02)?;
    let smld = SmldSchedule::geometric(20, 10.0, 0.01, 2e-5, 1)?;
    let bump = options.perturbation;
    let (m, n) = (options.size, options.size + options.size / 2);

    let mut err: f64 = 0.0;
    let mut smld_err: f64 = 0.0;
    for _ in 0..5 {
        let a = DMatrix::from_iterator(m, n, (0..m * n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let problem = Problem::new(normal_vec(&mut rng, m), LinearOperator::dense(a)?, rng.random_range(0.05..1.0))?;
        let cache = ResolventCache::new(&problem)?;
        for _ in 0..10 {
            let x = normal_vec(&mut rng, n);
            let t = rng.random_range(1..=ddpm.len());
            let svd = pll_score_svd(&problem, &cache, &ddpm, &x, t)?.add_scalar(bump);
            err = err.max(rel(&svd, &pll_score_direct(&problem, &ddpm, &x, t)?));
            let t = rng.random_range(1..=smld.len());
            let svd = pll_score_smld(&problem, &cache, &smld, &x, t)?.add_scalar(bump);
            smld_err = smld_err.max(rel(&svd, &pll_score_smld_direct(&problem, &smld, &x, t)?));
        }
    }
    suite.record("ddpm svd form == direct form (dense)", err, 1e-10);
    suite.record("smld svd form == direct form (dense)", smld_err, 1e-10);

    let mut svd_err: f64 = 0.0;
    let mut diag_err: f64 = 0.0;
    let mut adjoint_err: f64 = 0.0;
    let mut factor_err: f64 = 0.0;
    for op in operator_zoo(options.size)? {
        let diagonal = op.row_orthogonal_norms().is_ok();
        let problem = Problem::new(normal_vec(&mut rng, op.rows()), op, 0.1)?;
        let cache = ResolventCache::new(&problem)?;
        let op = problem.operator();
        for _ in 0..4 {
            let x = normal_vec(&mut rng, op.cols());
            let t = rng.random_range(1..=ddpm.len());
            let direct = pll_score_direct(&problem, &ddpm, &x, t)?;
            let svd = pll_score_svd(&problem, &cache, &ddpm, &x, t)?.add_scalar(bump);
            svd_err = svd_err.max(rel(&svd, &direct));
            if diagonal {
                diag_err = diag_err.max(rel(&pll_score_diag(&problem, &ddpm, &x, t)?, &direct));
            }
            let y = normal_vec(&mut rng, op.rows());
            let lhs = op.apply(&x)?.dot(&y);
            let rhs = x.dot(&op.apply_transpose(&y)?);
            adjoint_err = adjoint_err.max((lhs - rhs).abs() / (1.0 + lhs.abs()));
            let s = DVector::from_column_slice(op.svd().singular_values());
            let via_svd = op.svd_u(&op.svd_vt(&x)?.component_mul(&s))?;
            factor_err = factor_err.max(rel(&via_svd, &op.apply(&x)?));
        }
    }
    suite.record("svd form == direct form (structured operators)", svd_err, 1e-10);
    suite.record("diagonal form == direct form (row-orthogonal)", diag_err, 1e-10);
    suite.record("operator adjoint identity", adjoint_err, 1e-10);
    suite.record("operator U S V^T reproduces A", factor_err, 1e-10);

    let mut fd_err: f64 = 0.0;
    for _ in 0..20 {
        let (m, n) = (rng.random_range(1..5), rng.random_range(1..5));
        let a = DMatrix::from_iterator(m, n, (0..m * n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let problem = Problem::new(normal_vec(&mut rng, m), LinearOperator::dense(a)?, rng.random_range(0.1..1.0))?;
        let cache = ResolventCache::new(&problem)?;
        let x = normal_vec(&mut rng, n);
        let t = rng.random_range(1..=ddpm.len());
        let score = pll_score_svd(&problem, &cache, &ddpm, &x, t)?.add_scalar(bump);
        let fd = fd_gradient(|z| pseudo_log_likelihood(&problem, &ddpm, z, t), &x, 1e-5)?;
        fd_err = fd_err.max(fd_error(&score, &fd));
    }
    suite.record("pseudo-likelihood score == finite differences", fd_err, 1e-5);

    let mut prior_err: f64 = 0.0;
    for _ in 0..10 {
        let n = rng.random_range(1..4);
        let b = DMatrix::from_iterator(n, n, (0..n * n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let cov = &b * b.transpose() * 0.5 + DMatrix::identity(n, n) * 0.3;
        let cov = (&cov + cov.transpose()) * 0.5;
        let g = GaussianPrior::new(normal_vec(&mut rng, n), cov)?;
        let h = GaussianPrior::isotropic(normal_vec(&mut rng, n) * 2.0, 0.5)?;
        let mix = GmmPrior::new(vec![0.3, 0.7], vec![g.clone(), h])?;
        let x = normal_vec(&mut rng, n);
        let priors: [&dyn NoisyPrior; 2] = [&g, &mix];
        for prior in priors {
            let t = rng.random_range(1..=ddpm.len());
            let ab = ddpm.alpha_bar(t);
            let sigma = smld.sigma(rng.random_range(1..=smld.len()));
            for (scale, var) in [(ab.sqrt(), 1.0 - ab), (1.0, sigma * sigma)] {
                let score = prior.perturbed_score(&x, scale, var)?;
                let fd = fd_gradient(|z| prior.perturbed_log_density(z, scale, var), &x, 1e-5)?;
                prior_err = prior_err.max(fd_error(&score, &fd));
            }
        }
    }
    suite.record("prior scores == finite differences", prior_err, 1e-5);

    Ok(VerifyReport { checks: suite.checks })
}
