//! Noise-perturbed pseudo-likelihood scores for `y = A x + n`, `n ~ N(0, sigma^2 I)`.
//!
//! Replacing the reverse transition `p(x0 | x_t)` by a Gaussian proportional to
//! the forward transition gives, in DDPM form,
//!
//! ```text
//! p~(y | x_t) = N(y; A x_t / sqrt(abar), sigma^2 I + (1 - abar) / abar * A A^T)
//! ```
//!
//! and in SMLD form `N(y; A x_t, sigma^2 I + sigma_t^2 A A^T)`. Both share the
//! shape `N(y; g A x, sigma^2 I + c A A^T)` whose score in `x` is
//! `g A^T (sigma^2 I + c A A^T)^{-1} (y - g A x)`.
//!
//! Three evaluations are provided: a dense `M x M` solve (reference), the
//! elementwise form for row-orthogonal `A`, and the SVD form used by the
//! samplers, which needs only the cached factors and a diagonal solve.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, DmpsError, Result};
use crate::operators::LinearOperator;
use crate::schedule::{DdpmSchedule, SmldSchedule};

/// Measurement `y`, operator `A`, and noise level `sigma`.
#[derive(Debug, Clone)]
pub struct Problem {
    y: DVector<f64>,
    operator: LinearOperator,
    noise_sigma: f64,
}

impl Problem {
    pub fn new(y: DVector<f64>, operator: LinearOperator, noise_sigma: f64) -> Result<Self> {
        check_len("measurement", operator.rows(), y.len())?;
        if !(noise_sigma > 0.0 && noise_sigma.is_finite()) {
            return Err(DmpsError::InvalidRange(format!(
                "noise sigma must be positive and finite, got {noise_sigma}"
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(DmpsError::NonFinite("measurement".into()));
        }
        Ok(Self {
            y,
            operator,
            noise_sigma,
        })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.operator
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_sigma
    }

    pub fn dim(&self) -> usize {
        self.operator.cols()
    }
}

/// `U^T y` and the singular values, computed once per problem.
#[derive(Debug, Clone)]
pub struct ResolventCache {
    ut_y: DVector<f64>,
    singular_values: DVector<f64>,
}

impl ResolventCache {
    pub fn new(problem: &Problem) -> Result<Self> {
        let op = problem.operator();
        Ok(Self {
            ut_y: op.svd_ut(problem.y())?,
            singular_values: DVector::from_column_slice(op.svd().singular_values()),
        })
    }

    pub fn ut_y(&self) -> &DVector<f64> {
        &self.ut_y
    }

    pub fn singular_values(&self) -> &DVector<f64> {
        &self.singular_values
    }
}

/// Mean scale `g` and covariance coefficient `c` of the DDPM-form pseudo-likelihood.
fn ddpm_coefficients(schedule: &DdpmSchedule, t: usize) -> Result<(f64, f64)> {
    schedule.check_step(t)?;
    let abar = schedule.alpha_bar(t);
    Ok((1.0 / abar.sqrt(), (1.0 - abar) / abar))
}

fn smld_coefficients(schedule: &SmldSchedule, t: usize) -> Result<(f64, f64)> {
    schedule.check_step(t)?;
    let sigma = schedule.sigma(t);
    Ok((1.0, sigma * sigma))
}

/// `sigma^2 I + c A A^T` and the residual `y - g A x`.
fn dense_system(problem: &Problem, x: &DVector<f64>, g: f64, c: f64) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    check_len("state", problem.dim(), x.len())?;
    let a = problem.operator().to_dense();
    let m = a.nrows();
    let s2 = problem.noise_sigma() * problem.noise_sigma();
    let cov = DMatrix::identity(m, m) * s2 + (&a * a.transpose()) * c;
    let resid = problem.y() - (&a * x) * g;
    Ok((a, cov, resid))
}

fn dense_score(problem: &Problem, x: &DVector<f64>, g: f64, c: f64) -> Result<DVector<f64>> {
    let (a, cov, resid) = dense_system(problem, x, g, c)?;
    let chol = cov
        .cholesky()
        .ok_or_else(|| DmpsError::Solver("pseudo-likelihood covariance is not positive definite".into()))?;
    Ok(a.tr_mul(&chol.solve(&resid)) * g)
}

fn svd_score(problem: &Problem, cache: &ResolventCache, x: &DVector<f64>, g: f64, c: f64) -> Result<DVector<f64>> {
    check_len("state", problem.dim(), x.len())?;
    let op = problem.operator();
    let s2 = problem.noise_sigma() * problem.noise_sigma();
    let vt_x = op.svd_vt(x)?;
    let coeffs = DVector::from_fn(cache.singular_values.len(), |i, _| {
        let s = cache.singular_values[i];
        s / (s2 + c * s * s) * (cache.ut_y[i] - g * s * vt_x[i])
    });
    Ok(op.svd_v(&coeffs)? * g)
}

/// DDPM-form pseudo-likelihood score via a dense `M x M` solve.
pub fn pll_score_direct(problem: &Problem, schedule: &DdpmSchedule, x: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
    let (g, c) = ddpm_coefficients(schedule, t)?;
    dense_score(problem, x, g, c)
}

/// DDPM-form pseudo-likelihood score via the cached SVD of `A`.
pub fn pll_score_svd(
    problem: &Problem,
    cache: &ResolventCache,
    schedule: &DdpmSchedule,
    x: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    let (g, c) = ddpm_coefficients(schedule, t)?;
    svd_score(problem, cache, x, g, c)
}

/// DDPM-form pseudo-likelihood score for operators with `A A^T` diagonal.
///
/// Row `m` contributes `a_m * r_m / (sigma^2 sqrt(abar) + (1 - abar) / sqrt(abar) * |a_m|^2)`
/// with `r = y - A x / sqrt(abar)`.
pub fn pll_score_diag(problem: &Problem, schedule: &DdpmSchedule, x: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
    schedule.check_step(t)?;
    check_len("state", problem.dim(), x.len())?;
    let op = problem.operator();
    let norms = op.row_orthogonal_norms()?;
    let root = schedule.alpha_bar(t).sqrt();
    let s2 = problem.noise_sigma() * problem.noise_sigma();
    let resid = problem.y() - op.apply(x)? / root;
    let weighted = DVector::from_fn(resid.len(), |m, _| {
        resid[m] / (s2 * root + (1.0 - root * root) / root * norms[m])
    });
    op.apply_transpose(&weighted)
}

/// SMLD-form pseudo-likelihood score via the cached SVD of `A`.
pub fn pll_score_smld(
    problem: &Problem,
    cache: &ResolventCache,
    schedule: &SmldSchedule,
    x: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    let (g, c) = smld_coefficients(schedule, t)?;
    svd_score(problem, cache, x, g, c)
}

/// SMLD-form pseudo-likelihood score via a dense `M x M` solve.
pub fn pll_score_smld_direct(problem: &Problem, schedule: &SmldSchedule, x: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
    let (g, c) = smld_coefficients(schedule, t)?;
    dense_score(problem, x, g, c)
}

/// `log p~(y | x_t)` in DDPM form, evaluated densely.
pub fn pseudo_log_likelihood(problem: &Problem, schedule: &DdpmSchedule, x: &DVector<f64>, t: usize) -> Result<f64> {
    let (g, c) = ddpm_coefficients(schedule, t)?;
    gaussian_log_density(problem, x, g, c)
}

/// `log p~(y | x_t)` in SMLD form, evaluated densely.
pub fn pseudo_log_likelihood_smld(problem: &Problem, schedule: &SmldSchedule, x: &DVector<f64>, t: usize) -> Result<f64> {
    let (g, c) = smld_coefficients(schedule, t)?;
    gaussian_log_density(problem, x, g, c)
}

fn gaussian_log_density(problem: &Problem, x: &DVector<f64>, g: f64, c: f64) -> Result<f64> {
    let (_, cov, resid) = dense_system(problem, x, g, c)?;
    let m = resid.len() as f64;
    let chol = cov
        .cholesky()
        .ok_or_else(|| DmpsError::Solver("pseudo-likelihood covariance is not positive definite".into()))?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let quad = resid.dot(&chol.solve(&resid));
    Ok(-0.5 * (m * (2.0 * PI).ln() + logdet + quad))
}

/// Exact (clean) likelihood score `A^T (y - A x) / sigma^2`.
pub fn clean_likelihood_score(problem: &Problem, x: &DVector<f64>) -> Result<DVector<f64>> {
    let op = problem.operator();
    let s2 = problem.noise_sigma() * problem.noise_sigma();
    Ok(op.apply_transpose(&(problem.y() - op.apply(x)?))? / s2)
}

/// `|y - A x_t / sqrt(abar_t)|`, the data-consistency residual of a DDPM state.
pub fn ddpm_residual_norm(problem: &Problem, schedule: &DdpmSchedule, x: &DVector<f64>, t: usize) -> Result<f64> {
    schedule.check_step(t)?;
    let op = problem.operator();
    Ok((problem.y() - op.apply(x)? / schedule.alpha_bar(t).sqrt()).norm())
}

#[cfg(test)]
mod tests;
