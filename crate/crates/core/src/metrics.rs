//! PSNR and sample-moment summaries.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, DmpsError, Result};
use crate::oracle::GaussianPosterior;
use crate::prior::{GmmPrior, NoisyPrior};
use crate::sampler::SampleSet;

/// Truth norms below this are compared in absolute terms (scale 1).
pub const RELATIVE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    /// Zero mean squared error.
    Identical,
}

impl Psnr {
    /// Decibels, with `Identical` as `+inf`.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Identical => f64::INFINITY,
        }
    }
}

/// `10 log10(peak^2 / MSE)`.
pub fn psnr(reference: &DVector<f64>, estimate: &DVector<f64>, peak: f64) -> Result<Psnr> {
    check_len("estimate", reference.len(), estimate.len())?;
    if reference.is_empty() {
        return Err(DmpsError::InvalidRange("psnr of empty vectors".into()));
    }
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(DmpsError::InvalidRange(format!("peak must be positive, got {peak}")));
    }
    let mse = (reference - estimate).norm_squared() / reference.len() as f64;
    if !mse.is_finite() {
        return Err(DmpsError::NonFinite("psnr inputs".into()));
    }
    Ok(if mse == 0.0 {
        Psnr::Identical
    } else {
        Psnr::Finite(10.0 * (peak * peak / mse).log10())
    })
}

/// Clamps every entry to `[0, 1]`, for image comparisons.
pub fn clamp_unit(x: &DVector<f64>) -> DVector<f64> {
    x.map(|v| v.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentSummary {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    pub count: usize,
}

fn check_dims(samples: &[DVector<f64>]) -> Result<usize> {
    let first = samples.first().ok_or(DmpsError::InsufficientSamples { needed: 1, have: 0 })?;
    let n = first.len();
    for s in samples {
        check_len("sample dimension", n, s.len())?;
    }
    Ok(n)
}

pub fn sample_mean(samples: &[DVector<f64>]) -> Result<DVector<f64>> {
    let n = check_dims(samples)?;
    let sum = samples.iter().fold(DVector::zeros(n), |acc, s| acc + s);
    Ok(sum / samples.len() as f64)
}

/// Sample mean and Bessel-corrected covariance (two-pass).
pub fn sample_moments(samples: &[DVector<f64>]) -> Result<MomentSummary> {
    let n = check_dims(samples)?;
    if samples.len() < 2 {
        return Err(DmpsError::InsufficientSamples {
            needed: 2,
            have: samples.len(),
        });
    }
    let mean = sample_mean(samples)?;
    let mut cov = DMatrix::zeros(n, n);
    for s in samples {
        let d = s - &mean;
        cov.ger(1.0, &d, &d, 1.0);
    }
    cov /= (samples.len() - 1) as f64;
    Ok(MomentSummary {
        mean,
        covariance: cov,
        count: samples.len(),
    })
}

pub fn moments(set: &SampleSet) -> Result<MomentSummary> {
    sample_moments(set.samples())
}

/// Reference distribution for [`posterior_moment_error`].
#[derive(Debug, Clone, Copy)]
pub enum Truth<'a> {
    Gaussian(&'a GaussianPosterior),
    Mixture(&'a GmmPrior),
}

impl Truth<'_> {
    pub fn moments(&self) -> (DVector<f64>, DMatrix<f64>) {
        match self {
            Truth::Gaussian(g) => (g.mean().clone(), g.covariance().clone()),
            Truth::Mixture(m) => m.moments(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentError {
    pub mean_rel_err: f64,
    pub cov_rel_err: f64,
}

fn relative(err: f64, scale: f64) -> f64 {
    if scale < RELATIVE_FLOOR {
        err
    } else {
        err / scale
    }
}

/// Euclidean (mean) and Frobenius (covariance) relative errors of the sample
/// moments against `truth`.
pub fn posterior_moment_error(samples: &[DVector<f64>], truth: Truth<'_>) -> Result<MomentError> {
    let summary = sample_moments(samples)?;
    let (mean, cov) = truth.moments();
    check_len("truth dimension", summary.mean.len(), mean.len())?;
    Ok(MomentError {
        mean_rel_err: relative((&summary.mean - &mean).norm(), mean.norm()),
        cov_rel_err: relative((&summary.covariance - &cov).norm(), cov.norm()),
    })
}

/// Fraction of samples whose most responsible mixture component is `k`.
pub fn component_fractions(samples: &[DVector<f64>], mixture: &GmmPrior) -> Result<Vec<f64>> {
    let n = check_dims(samples)?;
    check_len("mixture dimension", n, mixture.dim())?;
    let mut counts = vec![0usize; mixture.weights().len()];
    for s in samples {
        let mut best = (0, f64::NEG_INFINITY);
        for (k, (w, c)) in mixture.weights().iter().zip(mixture.components()).enumerate() {
            let lp = w.ln() + c.perturbed_log_density(s, 1.0, 0.0)?;
            if lp > best.1 {
                best = (k, lp);
            }
        }
        counts[best.0] += 1;
    }
    Ok(counts.iter().map(|&c| c as f64 / samples.len() as f64).collect())
}
