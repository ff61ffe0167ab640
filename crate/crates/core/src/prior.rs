//! Analytic noise-perturbed prior scores.
//!
//! Diffusing `x0 ~ p` as `x = a x0 + sqrt(v) w` keeps Gaussians Gaussian:
//! `N(mu, C)` becomes `N(a mu, a^2 C + v I)`, and a mixture becomes the
//! mixture of the diffused components. DDPM-form uses `a = sqrt(abar_t)`,
//! `v = 1 - abar_t`; SMLD-form uses `a = 1`, `v = sigma_t^2`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, DmpsError, Result};
use crate::schedule::{DdpmSchedule, SmldSchedule};

/// Largest dimension accepted for a dense (non-diagonal) covariance.
pub const MAX_DENSE_DIM: usize = 4096;

/// Score of a noise-perturbed prior at a given schedule index.
///
/// In DDPM form this is `-s_theta(x_t, t) / sqrt(1 - abar_t)`; see
/// [`as_pretrained_residual`] for the conversion to the noise-prediction
/// convention.
pub trait ScoreModel: Sync {
    fn dim(&self) -> usize;
    fn score(&self, x: &DVector<f64>, t: usize) -> Result<DVector<f64>>;
}

/// A prior whose diffused marginals have closed-form densities and scores.
pub trait NoisyPrior: Sync + Send {
    fn dim(&self) -> usize;

    /// Score of the law of `scale * x0 + sqrt(noise_var) * w`.
    fn perturbed_score(&self, x: &DVector<f64>, scale: f64, noise_var: f64) -> Result<DVector<f64>>;

    /// Log-density of the law of `scale * x0 + sqrt(noise_var) * w`.
    fn perturbed_log_density(&self, x: &DVector<f64>, scale: f64, noise_var: f64) -> Result<f64>;
}

#[derive(Debug, Clone)]
enum Covariance {
    Diagonal(DVector<f64>),
    Dense {
        matrix: DMatrix<f64>,
        eigenvalues: DVector<f64>,
        eigenvectors: DMatrix<f64>,
    },
}

/// `N(mean, covariance)` prior.
///
/// Dense covariances are eigendecomposed once at construction so every
/// perturbed covariance `a^2 C + v I` is diagonal in the same basis.
#[derive(Debug, Clone)]
pub struct GaussianPrior {
    mean: DVector<f64>,
    cov: Covariance,
}

impl GaussianPrior {
    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        Self::diagonal(mean, DVector::from_element(n, variance))
    }

    pub fn diagonal(mean: DVector<f64>, variances: DVector<f64>) -> Result<Self> {
        check_len("prior variances", mean.len(), variances.len())?;
        if mean.is_empty() {
            return Err(DmpsError::InvalidRange("prior dimension must be >= 1".into()));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(DmpsError::NonFinite("prior mean".into()));
        }
        if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(DmpsError::NotPositiveDefinite(format!("variance {v}")));
        }
        Ok(Self {
            mean,
            cov: Covariance::Diagonal(variances),
        })
    }

    /// Full covariance; must be symmetric to 1e-12 and positive definite.
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let n = mean.len();
        if n == 0 {
            return Err(DmpsError::InvalidRange("prior dimension must be >= 1".into()));
        }
        if n > MAX_DENSE_DIM {
            return Err(DmpsError::DimensionTooLarge(format!(
                "dense covariance limited to {MAX_DENSE_DIM} dimensions, got {n}; use a diagonal prior"
            )));
        }
        check_len("covariance rows", n, covariance.nrows())?;
        check_len("covariance cols", n, covariance.ncols())?;
        if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
            return Err(DmpsError::NonFinite("prior parameters".into()));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 {
            return Err(DmpsError::NotPositiveDefinite(format!(
                "asymmetry {asym:e} exceeds 1e-12"
            )));
        }
        let eig = SymmetricEigen::new(covariance.clone());
        if let Some(&low) = eig.eigenvalues.iter().find(|&&l| l <= 0.0) {
            return Err(DmpsError::NotPositiveDefinite(format!("eigenvalue {low:e}")));
        }
        Ok(Self {
            mean,
            cov: Covariance::Dense {
                matrix: covariance,
                eigenvalues: eig.eigenvalues,
                eigenvectors: eig.eigenvectors,
            },
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Diagonal(d) => DMatrix::from_diagonal(d),
            Covariance::Dense { matrix, .. } => matrix.clone(),
        }
    }

    /// `(a^2 C + v I)^{-1} d` and `log det(a^2 C + v I)`.
    fn solve_perturbed(&self, d: &DVector<f64>, scale: f64, noise_var: f64) -> (DVector<f64>, f64) {
        let a2 = scale * scale;
        match &self.cov {
            Covariance::Diagonal(vars) => {
                let mut logdet = 0.0;
                let sol = DVector::from_fn(d.len(), |i, _| {
                    let s = a2 * vars[i] + noise_var;
                    logdet += s.ln();
                    d[i] / s
                });
                (sol, logdet)
            }
            Covariance::Dense {
                eigenvalues,
                eigenvectors,
                ..
            } => {
                let mut coords = eigenvectors.tr_mul(d);
                let mut logdet = 0.0;
                for (c, &l) in coords.iter_mut().zip(eigenvalues.iter()) {
                    let s = a2 * l + noise_var;
                    logdet += s.ln();
                    *c /= s;
                }
                (eigenvectors * coords, logdet)
            }
        }
    }

    fn log_density_and_score(&self, x: &DVector<f64>, scale: f64, noise_var: f64) -> (f64, DVector<f64>) {
        let d = x - &self.mean * scale;
        let (sol, logdet) = self.solve_perturbed(&d, scale, noise_var);
        let n = x.len() as f64;
        let log_density = -0.5 * (n * (2.0 * PI).ln() + logdet + d.dot(&sol));
        (log_density, -sol)
    }
}

impl NoisyPrior for GaussianPrior {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn perturbed_score(&self, x: &DVector<f64>, scale: f64, noise_var: f64) -> Result<DVector<f64>> {
        check_len("state", self.dim(), x.len())?;
        Ok(self.log_density_and_score(x, scale, noise_var).1)
    }

    fn perturbed_log_density(&self, x: &DVector<f64>, scale: f64, noise_var: f64) -> Result<f64> {
        check_len("state", self.dim(), x.len())?;
        Ok(self.log_density_and_score(x, scale, noise_var).0)
    }
}

/// Finite mixture of Gaussian priors.
#[derive(Debug, Clone)]
pub struct GmmPrior {
    weights: Vec<f64>,
    components: Vec<GaussianPrior>,
}

impl GmmPrior {
    pub fn new(weights: Vec<f64>, components: Vec<GaussianPrior>) -> Result<Self> {
        if weights.is_empty() {
            return Err(DmpsError::InvalidRange("mixture needs at least one component".into()));
        }
        check_len("mixture components", weights.len(), components.len())?;
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(DmpsError::InvalidRange(format!("mixture weight {w} is not positive")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DmpsError::InvalidRange(format!("mixture weights sum to {total}")));
        }
        let dim = components[0].dim();
        for c in &components[1..] {
            check_len("component dimension", dim, c.dim())?;
        }
        Ok(Self {
            weights,
            components,
        })
    }

    /// Mixture with already-normalized weights, some of which may have
    /// underflowed to zero.
    pub(crate) fn from_normalized(weights: Vec<f64>, components: Vec<GaussianPrior>) -> Self {
        debug_assert!(weights.iter().all(|w| *w >= 0.0) && (weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        Self {
            weights,
            components,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[GaussianPrior] {
        &self.components
    }

    /// Mixture mean and covariance.
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        let n = self.dim();
        let mut mean = DVector::zeros(n);
        let mut second = DMatrix::zeros(n, n);
        for (w, c) in self.weights.iter().zip(&self.components) {
            mean += c.mean() * *w;
            second += (c.covariance() + c.mean() * c.mean().transpose()) * *w;
        }
        let cov = second - &mean * mean.transpose();
        (mean, cov)
    }

    fn log_density_and_score(&self, x: &DVector<f64>, scale: f64, noise_var: f64) -> (f64, DVector<f64>) {
        let parts: Vec<(f64, DVector<f64>)> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| {
                let (lp, s) = c.log_density_and_score(x, scale, noise_var);
                (w.ln() + lp, s)
            })
            .collect();
        let max = parts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = parts.iter().map(|p| (p.0 - max).exp()).sum();
        let log_norm = max + total.ln();
        let mut score = DVector::zeros(x.len());
        for (lp, s) in &parts {
            score += s * (lp - log_norm).exp();
        }
        (log_norm, score)
    }
}

impl From<GaussianPrior> for GmmPrior {
    fn from(g: GaussianPrior) -> Self {
        Self {
            weights: vec![1.0],
            components: vec![g],
        }
    }
}

impl NoisyPrior for GmmPrior {
    fn dim(&self) -> usize {
        self.components[0].dim()
    }

    fn perturbed_score(&self, x: &DVector<f64>, scale: f64, noise_var: f64) -> Result<DVector<f64>> {
        check_len("state", self.dim(), x.len())?;
        Ok(self.log_density_and_score(x, scale, noise_var).1)
    }

    fn perturbed_log_density(&self, x: &DVector<f64>, scale: f64, noise_var: f64) -> Result<f64> {
        check_len("state", self.dim(), x.len())?;
        Ok(self.log_density_and_score(x, scale, noise_var).0)
    }
}

/// Prior score under the DDPM forward process.
#[derive(Debug, Clone, Copy)]
pub struct DdpmPriorScore<'a, P: ?Sized> {
    prior: &'a P,
    schedule: &'a DdpmSchedule,
}

impl<'a, P: NoisyPrior + ?Sized> DdpmPriorScore<'a, P> {
    pub fn new(prior: &'a P, schedule: &'a DdpmSchedule) -> Self {
        Self { prior, schedule }
    }
}

impl<P: NoisyPrior + ?Sized> ScoreModel for DdpmPriorScore<'_, P> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn score(&self, x: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        self.schedule.check_step(t)?;
        let abar = self.schedule.alpha_bar(t);
        self.prior.perturbed_score(x, abar.sqrt(), 1.0 - abar)
    }
}

/// Prior score under the SMLD forward process `x_t = x_0 + sigma_t w`.
#[derive(Debug, Clone, Copy)]
pub struct SmldPriorScore<'a, P: ?Sized> {
    prior: &'a P,
    schedule: &'a SmldSchedule,
}

impl<'a, P: NoisyPrior + ?Sized> SmldPriorScore<'a, P> {
    pub fn new(prior: &'a P, schedule: &'a SmldSchedule) -> Self {
        Self { prior, schedule }
    }
}

impl<P: NoisyPrior + ?Sized> ScoreModel for SmldPriorScore<'_, P> {
    fn dim(&self) -> usize {
        self.prior.dim()
    }

    fn score(&self, x: &DVector<f64>, t: usize) -> Result<DVector<f64>> {
        self.schedule.check_step(t)?;
        let sigma = self.schedule.sigma(t);
        self.prior.perturbed_score(x, 1.0, sigma * sigma)
    }
}

pub fn gaussian_noisy_score(
    prior: &GaussianPrior,
    schedule: &DdpmSchedule,
    x: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    DdpmPriorScore::new(prior, schedule).score(x, t)
}

pub fn gmm_noisy_score(
    prior: &GmmPrior,
    schedule: &DdpmSchedule,
    x: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    DdpmPriorScore::new(prior, schedule).score(x, t)
}

pub fn smld_noisy_score<P: NoisyPrior + ?Sized>(
    prior: &P,
    schedule: &SmldSchedule,
    x: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    SmldPriorScore::new(prior, schedule).score(x, t)
}

/// Noise-prediction output `s_theta = -sqrt(1 - abar_t) * score`.
pub fn as_pretrained_residual<M: ScoreModel + ?Sized>(
    model: &M,
    schedule: &DdpmSchedule,
    x: &DVector<f64>,
    t: usize,
) -> Result<DVector<f64>> {
    schedule.check_step(t)?;
    let score = model.score(x, t)?;
    Ok(residual_from_score(score, schedule.alpha_bar(t)))
}

pub fn residual_from_score(score: DVector<f64>, alpha_bar: f64) -> DVector<f64> {
    score * -(1.0 - alpha_bar).sqrt()
}

/// Inverse of [`residual_from_score`].
pub fn score_from_residual(residual: DVector<f64>, alpha_bar: f64) -> DVector<f64> {
    residual * (-1.0 / (1.0 - alpha_bar).sqrt())
}
