//! Ground truth for Gaussian and mixture priors under `y = A x + n`.
//!
//! Everything here is closed form except [`quadrature_perturbed_likelihood_score`],
//! which integrates `p(y | x_t) = int p(y | x0) p(x0 | x_t) dx0` numerically
//! on tensor grids and differentiates it by central differences.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, DmpsError, Result};
use crate::io::{write_csv, CsvValue};
use crate::likelihood::Problem;
use crate::prior::{GaussianPrior, GmmPrior, NoisyPrior, MAX_DENSE_DIM};
use crate::schedule::DdpmSchedule;

/// Largest dimension handled by the quadrature oracle.
pub const QUADRATURE_MAX_DIM: usize = 2;
/// Grid points per axis for the quadrature oracle; the error estimate
/// compares against a grid with half the spacing removed.
pub const QUADRATURE_POINTS: usize = 129;
const QUADRATURE_COARSE: usize = 65;
const QUADRATURE_HALF_WIDTH: f64 = 8.0;

fn spd_inverse(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let inv = m
        .cholesky()
        .ok_or_else(|| DmpsError::NotPositiveDefinite(what.to_string()))?
        .inverse();
    Ok((&inv + inv.transpose()) * 0.5)
}

/// A Gaussian with dense covariance.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_det: f64,
}

impl GaussianPosterior {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        check_len("covariance rows", n, covariance.nrows())?;
        check_len("covariance cols", n, covariance.ncols())?;
        let covariance = (&covariance + covariance.transpose()) * 0.5;
        let chol = covariance
            .clone()
            .cholesky()
            .ok_or_else(|| DmpsError::NotPositiveDefinite("posterior covariance".into()))?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Self {
            mean,
            precision: (&precision + precision.transpose()) * 0.5,
            covariance,
            log_det,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn score(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state", self.dim(), x.len())?;
        Ok(-(&self.precision * (x - &self.mean)))
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        check_len("state", self.dim(), x.len())?;
        let d = x - &self.mean;
        let n = self.dim() as f64;
        Ok(-0.5 * (n * (2.0 * PI).ln() + self.log_det + d.dot(&(&self.precision * &d))))
    }

    pub fn to_prior(&self) -> Result<GaussianPrior> {
        GaussianPrior::new(self.mean.clone(), self.covariance.clone())
    }
}

fn check_problem(prior_dim: usize, problem: &Problem) -> Result<()> {
    check_len("prior dimension", problem.dim(), prior_dim)?;
    if prior_dim > MAX_DENSE_DIM {
        return Err(DmpsError::DimensionTooLarge(format!(
            "dense oracle limited to {MAX_DENSE_DIM} dimensions, got {prior_dim}"
        )));
    }
    Ok(())
}

/// Conjugate update of one Gaussian, plus its log evidence `log N(y; A mu, sigma^2 I + A C A^T)`.
fn conjugate_update(prior: &GaussianPrior, a: &DMatrix<f64>, problem: &Problem) -> Result<(GaussianPosterior, f64)> {
    let s2 = problem.noise_sigma().powi(2);
    let c = prior.covariance();
    let c_inv = spd_inverse(c.clone(), "prior covariance")?;
    let precision = &c_inv + a.tr_mul(a) / s2;
    let cov = spd_inverse(precision, "posterior precision")?;
    let mean = &cov * (&c_inv * prior.mean() + a.tr_mul(problem.y()) / s2);

    let m = a.nrows();
    let evidence_cov = DMatrix::identity(m, m) * s2 + a * &c * a.transpose();
    let evidence = GaussianPosterior::new(a * prior.mean(), evidence_cov)?;
    let log_evidence = evidence.log_density(problem.y())?;
    Ok((GaussianPosterior::new(mean, cov)?, log_evidence))
}

/// Exact posterior of `x` given `y` for a Gaussian prior.
pub fn exact_gaussian_posterior(prior: &GaussianPrior, problem: &Problem) -> Result<GaussianPosterior> {
    check_problem(prior.dim(), problem)?;
    let a = problem.operator().to_dense();
    Ok(conjugate_update(prior, &a, problem)?.0)
}

/// Exact posterior mixture: each component updated conjugately, weights
/// proportional to `w_k N(y; A mu_k, sigma^2 I + A C_k A^T)`.
pub fn exact_gmm_posterior(prior: &GmmPrior, problem: &Problem) -> Result<GmmPrior> {
    check_problem(prior.dim(), problem)?;
    let a = problem.operator().to_dense();
    let mut log_weights = Vec::with_capacity(prior.weights().len());
    let mut components = Vec::with_capacity(prior.weights().len());
    for (w, c) in prior.weights().iter().zip(prior.components()) {
        let (post, log_evidence) = conjugate_update(c, &a, problem)?;
        log_weights.push(w.ln() + log_evidence);
        components.push(post.to_prior()?);
    }
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_weights.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|r| r / total).collect();
    Ok(GmmPrior::from_normalized(weights, components))
}

/// Exact reverse transition `p(x0 | x_t)` under the DDPM forward process for
/// a Gaussian prior.
pub fn exact_reverse_transition(
    prior: &GaussianPrior,
    schedule: &DdpmSchedule,
    x_t: &DVector<f64>,
    t: usize,
) -> Result<GaussianPosterior> {
    schedule.check_step(t)?;
    check_len("state", prior.dim(), x_t.len())?;
    let n = prior.dim();
    let abar = schedule.alpha_bar(t);
    let c_inv = spd_inverse(prior.covariance(), "prior covariance")?;
    let precision = &c_inv + DMatrix::identity(n, n) * (abar / (1.0 - abar));
    let cov = spd_inverse(precision, "reverse-transition precision")?;
    let mean = &cov * (&c_inv * prior.mean() + x_t * (abar.sqrt() / (1.0 - abar)));
    GaussianPosterior::new(mean, cov)
}

/// Score in `x_t` of the exact `p(y | x_t)` for a Gaussian prior.
///
/// With `p(x0 | x_t) = N(K x_t + b, S)`, where `K = S sqrt(abar) / (1 - abar)`,
/// `y | x_t ~ N(A (K x_t + b), sigma^2 I + A S A^T)`.
pub fn exact_perturbed_likelihood_score(
    prior: &GaussianPrior,
    problem: &Problem,
    schedule: &DdpmSchedule,
    x_t: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    check_problem(prior.dim(), problem)?;
    let reverse = exact_reverse_transition(prior, schedule, x_t, t)?;
    let abar = schedule.alpha_bar(t);
    let a = problem.operator().to_dense();
    let s = reverse.covariance();
    let m = a.nrows();
    let cov = DMatrix::identity(m, m) * problem.noise_sigma().powi(2) + &a * s * a.transpose();
    let resid = problem.y() - &a * reverse.mean();
    let solved = cov
        .cholesky()
        .ok_or_else(|| DmpsError::Solver("exact likelihood covariance".into()))?
        .solve(&resid);
    Ok(s * a.tr_mul(&solved) * (abar.sqrt() / (1.0 - abar)))
}

/// Quadrature estimate of the exact perturbed-likelihood score.
#[derive(Debug, Clone)]
pub struct QuadratureScore {
    pub score: DVector<f64>,
    /// Largest elementwise change between the fine and the coarse grid.
    pub error_estimate: f64,
}

/// Tensor-product trapezoid grid in one or two dimensions, with the
/// `x_t`-independent part of the log integrand precomputed per node.
struct Grid {
    nodes: Vec<DVector<f64>>,
    base: Vec<f64>,
}

impl Grid {
    fn new(centre: &DVector<f64>, half_widths: &DVector<f64>, points: usize, base: impl Fn(&DVector<f64>) -> f64) -> Self {
        let d = centre.len();
        let axes: Vec<Vec<(f64, f64)>> = (0..d)
            .map(|i| {
                let lo = centre[i] - half_widths[i];
                let step = 2.0 * half_widths[i] / (points - 1) as f64;
                (0..points)
                    .map(|k| {
                        let w = if k == 0 || k == points - 1 { 0.5 } else { 1.0 };
                        (lo + step * k as f64, w * step)
                    })
                    .collect()
            })
            .collect();
        let mut nodes = Vec::new();
        let mut base_vals = Vec::new();
        let total = points.pow(d as u32);
        for flat in 0..total {
            let mut rem = flat;
            let mut x = DVector::zeros(d);
            let mut log_w = 0.0;
            for (i, axis) in axes.iter().enumerate() {
                let (pos, w) = axis[rem % points];
                rem /= points;
                x[i] = pos;
                log_w += w.ln();
            }
            base_vals.push(log_w + base(&x));
            nodes.push(x);
        }
        Self { nodes, base: base_vals }
    }

    /// `log sum_i exp(base_i + extra(node_i))`.
    fn log_integral(&self, extra: impl Fn(&DVector<f64>) -> f64) -> f64 {
        let vals: Vec<f64> = self.nodes.iter().zip(&self.base).map(|(x, b)| b + extra(x)).collect();
        log_sum_exp(&vals)
    }
}

fn log_sum_exp(vals: &[f64]) -> f64 {
    let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + vals.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

fn isotropic_log_normal(x: &DVector<f64>, mean: &DVector<f64>, var: f64) -> f64 {
    let n = x.len() as f64;
    -0.5 * (n * (2.0 * PI * var).ln() + (x - mean).norm_squared() / var)
}

/// Box of `+-8` standard deviations around a Gaussian with precision `p`.
fn placement(p: DMatrix<f64>, shift: DVector<f64>) -> Result<(DVector<f64>, DVector<f64>)> {
    let cov = spd_inverse(p, "placement precision")?;
    let centre = &cov * shift;
    let half = cov.diagonal().map(|v| QUADRATURE_HALF_WIDTH * v.sqrt());
    Ok((centre, half))
}

/// Brute-force `grad_{x_t} log p(y | x_t)` for a mixture prior in at most two
/// dimensions.
///
/// `p(y | x_t) = int N(y; A x0, sigma^2 I) N(x_t; sqrt(abar) x0, (1 - abar) I) p(x0) dx0 / p_t(x_t)`
/// with both integrals evaluated per mixture component on a
/// [`QUADRATURE_POINTS`]-point trapezoid grid spanning `+-8` standard
/// deviations of that component's integrand. Grids are fixed at `x_t` and the
/// gradient is taken by central differences.
pub fn quadrature_perturbed_likelihood_score(
    prior: &GmmPrior,
    problem: &Problem,
    schedule: &DdpmSchedule,
    x_t: &DVector<f64>,
    t: usize,
) -> Result<QuadratureScore> {
    let d = prior.dim();
    if d > QUADRATURE_MAX_DIM {
        return Err(DmpsError::DimensionTooLarge(format!(
            "quadrature oracle supports at most {QUADRATURE_MAX_DIM} dimensions, got {d}"
        )));
    }
    check_len("prior dimension", problem.dim(), d)?;
    check_len("state", d, x_t.len())?;
    schedule.check_step(t)?;
    let abar = schedule.alpha_bar(t);
    let root = abar.sqrt();
    let noise_var = 1.0 - abar;
    let s2 = problem.noise_sigma().powi(2);
    let a = problem.operator().to_dense();
    let y = problem.y();

    let estimate = |points: usize| -> Result<DVector<f64>> {
        let mut numerators = Vec::new();
        let mut denominators = Vec::new();
        for (w, comp) in prior.weights().iter().zip(prior.components()) {
            if *w == 0.0 {
                continue;
            }
            let c_inv = spd_inverse(comp.covariance(), "prior covariance")?;
            let prior_shift = &c_inv * comp.mean() + x_t * (root / noise_var);
            let transition_precision = &c_inv + DMatrix::identity(d, d) * (abar / noise_var);
            let log_prior = |x0: &DVector<f64>| w.ln() + comp.perturbed_log_density(x0, 1.0, 0.0).expect("dimension checked");

            let (centre, half) = placement(&transition_precision + a.tr_mul(&a) / s2, &prior_shift + a.tr_mul(y) / s2)?;
            numerators.push(Grid::new(&centre, &half, points, |x0| {
                log_prior(x0) + isotropic_log_normal(y, &(&a * x0), s2)
            }));
            let (centre, half) = placement(transition_precision, prior_shift)?;
            denominators.push(Grid::new(&centre, &half, points, log_prior));
        }
        let log_likelihood = |x: &DVector<f64>| {
            let transition = |x0: &DVector<f64>| isotropic_log_normal(x, &(x0 * root), noise_var);
            let num: Vec<f64> = numerators.iter().map(|g| g.log_integral(transition)).collect();
            let den: Vec<f64> = denominators.iter().map(|g| g.log_integral(transition)).collect();
            log_sum_exp(&num) - log_sum_exp(&den)
        };
        let h = 1e-3 * noise_var.sqrt();
        Ok(DVector::from_fn(d, |i, _| {
            let mut hi = x_t.clone();
            let mut lo = x_t.clone();
            hi[i] += h;
            lo[i] -= h;
            (log_likelihood(&hi) - log_likelihood(&lo)) / (2.0 * h)
        }))
    };

    let fine = estimate(QUADRATURE_POINTS)?;
    let coarse = estimate(QUADRATURE_COARSE)?;
    Ok(QuadratureScore {
        error_estimate: (&fine - coarse).amax(),
        score: fine,
    })
}

/// One row of the scalar toy comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyRecord {
    pub t: usize,
    pub alpha_bar: f64,
    pub m_exact: f64,
    pub v_exact: f64,
    pub m_pseudo: f64,
    pub v_pseudo: f64,
}

impl ToyRecord {
    pub fn mean_gap(&self) -> f64 {
        (self.m_pseudo - self.m_exact).abs() / self.m_exact.abs()
    }

    pub fn var_gap(&self) -> f64 {
        (self.v_pseudo - self.v_exact).abs() / self.v_exact
    }
}

/// Exact versus pseudo moments of `p(x0 | x_t)` for the scalar prior
/// `N(0, sigma0^2)`, one record per step `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyCurve {
    records: Vec<ToyRecord>,
}

pub const TOY_CSV_HEADER: [&str; 6] = ["t", "alpha_bar", "m_exact", "v_exact", "m_pseudo", "v_pseudo"];

impl ToyCurve {
    pub fn records(&self) -> &[ToyRecord] {
        &self.records
    }

    pub fn csv_rows(&self) -> Vec<Vec<CsvValue>> {
        self.records
            .iter()
            .map(|r| {
                vec![
                    CsvValue::from(r.t),
                    r.alpha_bar.into(),
                    r.m_exact.into(),
                    r.v_exact.into(),
                    r.m_pseudo.into(),
                    r.v_pseudo.into(),
                ]
            })
            .collect()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(path, &TOY_CSV_HEADER, &self.csv_rows())
    }
}

/// Scalar toy: prior `N(0, sigma0^2)`, state `x_t`, and `alpha_bar`
/// decaying geometrically from `abar_max` at `t = 1` to `abar_min` at `t = T`.
/// `sigma0 = inf` gives the flat-prior limit.
pub fn toy_experiment(sigma0: f64, x_t: f64, steps: usize, abar_max: f64, abar_min: f64) -> Result<ToyCurve> {
    if !(sigma0 > 0.0) {
        return Err(DmpsError::InvalidRange(format!("sigma0 must be positive, got {sigma0}")));
    }
    if !x_t.is_finite() {
        return Err(DmpsError::InvalidRange(format!("x_t must be finite, got {x_t}")));
    }
    let schedule = DdpmSchedule::alpha_bar_geometric(steps, abar_max, abar_min)?;
    let records = (1..=steps)
        .map(|t| {
            let ab = schedule.alpha_bar(t);
            // (1 - abar) / sigma0^2 written so that sigma0 = inf gives 0
            let r = (1.0 - ab) / sigma0 / sigma0;
            ToyRecord {
                t,
                alpha_bar: ab,
                m_exact: ab.sqrt() * x_t / (r + ab),
                v_exact: (1.0 - ab) / (r + ab),
                m_pseudo: x_t / ab.sqrt(),
                v_pseudo: (1.0 - ab) / ab,
            }
        })
        .collect();
    Ok(ToyCurve { records })
}
