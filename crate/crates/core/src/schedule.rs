//! Forward-diffusion noise schedules.
//!
//! Every schedule is indexed by a step `t` in `1..=T`, where `t = 1` is the
//! least-noisy level and `t = T` the noisiest, matching the order in which the
//! samplers visit them in reverse (`t = T, T-1, ..., 1`).

use crate::error::{DmpsError, Result};

/// Variance-preserving (DDPM-form) schedule.
///
/// The reverse-process variance is fixed to `beta_t` since no learned variance
/// is available without a trained network.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpmSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    reverse_vars: Vec<f64>,
}

impl DdpmSchedule {
    /// Linear-beta schedule from `beta_min` to `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps < 2 {
            return Err(DmpsError::InvalidRange(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0) {
            return Err(DmpsError::InvalidRange(format!(
                "need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}"
            )));
        }
        let span = beta_max - beta_min;
        let last = (steps - 1) as f64;
        let betas = (0..steps)
            .map(|i| beta_min + span * (i as f64) / last)
            .collect();
        Self::from_betas(betas)
    }

    /// Schedule whose `alpha_bar` decays geometrically from `abar_max` at
    /// `t = 1` to `abar_min` at `t = T`.
    ///
    /// The cumulative products are stored exactly as given by the closed form;
    /// the per-step betas are recovered as `1 - abar_t / abar_{t-1}` with
    /// `abar_0 = 1`.
    pub fn alpha_bar_geometric(steps: usize, abar_max: f64, abar_min: f64) -> Result<Self> {
        if steps < 2 {
            return Err(DmpsError::InvalidRange(format!(
                "schedule needs at least 2 steps, got {steps}"
            )));
        }
        if !(abar_min > 0.0 && abar_min < abar_max && abar_max < 1.0) {
            return Err(DmpsError::InvalidRange(format!(
                "need 0 < abar_min < abar_max < 1, got min={abar_min}, max={abar_max}"
            )));
        }
        let last = (steps - 1) as f64;
        let ratio = abar_min / abar_max;
        let alpha_bars: Vec<f64> = (0..steps)
            .map(|i| abar_max * ratio.powf(i as f64 / last))
            .collect();
        let mut alphas = Vec::with_capacity(steps);
        let mut prev = 1.0;
        for &ab in &alpha_bars {
            alphas.push(ab / prev);
            prev = ab;
        }
        let betas: Vec<f64> = alphas.iter().map(|a| 1.0 - a).collect();
        let reverse_vars = betas.clone();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            reverse_vars,
        })
    }

    /// Builds a schedule from an explicit, strictly increasing beta sequence.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(DmpsError::InvalidRange(format!(
                "schedule needs at least 2 steps, got {}",
                betas.len()
            )));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(DmpsError::InvalidRange(format!(
                    "beta[{}] = {b} is outside (0, 1)",
                    i + 1
                )));
            }
        }
        if let Some(i) = betas.windows(2).position(|w| w[1] <= w[0]) {
            return Err(DmpsError::InvalidRange(format!(
                "betas must be strictly increasing (beta[{}] >= beta[{}])",
                i + 1,
                i + 2
            )));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alpha_bars = alphas
            .iter()
            .scan(1.0, |acc, &a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let reverse_vars = betas.clone();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            reverse_vars,
        })
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Validates a step index.
    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(DmpsError::InvalidRange(format!(
                "step t={t} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t - 1]
    }

    /// Variance of the noise injected by the reverse update at step `t`.
    pub fn reverse_var(&self, t: usize) -> f64 {
        self.reverse_vars[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn reverse_vars(&self) -> &[f64] {
        &self.reverse_vars
    }
}

/// Variance-exploding (SMLD-form) noise ladder for annealed Langevin sampling.
///
/// `sigmas` is stored in visiting order, largest first. Step `t = 1` refers to
/// the smallest level, so `sigma(1) == sigma_min` and the per-level Langevin
/// step size is `eps * sigma(t)^2 / sigma(1)^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct SmldSchedule {
    sigmas: Vec<f64>,
    step_scale: f64,
    inner_steps: usize,
}

impl SmldSchedule {
    pub fn geometric(
        levels: usize,
        sigma_max: f64,
        sigma_min: f64,
        eps: f64,
        inner_steps: usize,
    ) -> Result<Self> {
        if levels < 2 {
            return Err(DmpsError::InvalidRange(format!(
                "noise ladder needs at least 2 levels, got {levels}"
            )));
        }
        if !(sigma_min > 0.0 && sigma_max > sigma_min && sigma_max.is_finite()) {
            return Err(DmpsError::InvalidRange(format!(
                "need sigma_max > sigma_min > 0, got max={sigma_max}, min={sigma_min}"
            )));
        }
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(DmpsError::InvalidRange(format!("step scale eps must be > 0, got {eps}")));
        }
        if inner_steps == 0 {
            return Err(DmpsError::InvalidRange("inner step count K must be >= 1".into()));
        }
        let last = (levels - 1) as f64;
        let ratio = sigma_min / sigma_max;
        let sigmas = (0..levels)
            .map(|i| sigma_max * ratio.powf(i as f64 / last))
            .collect();
        Ok(Self {
            sigmas,
            step_scale: eps,
            inner_steps,
        })
    }

    /// Unvalidated constructor for null tests (zero step scale).
    #[cfg(test)]
    pub(crate) fn from_parts(sigmas: Vec<f64>, step_scale: f64, inner_steps: usize) -> Self {
        Self {
            sigmas,
            step_scale,
            inner_steps,
        }
    }

    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(DmpsError::InvalidRange(format!(
                "level t={t} outside 1..={}",
                self.len()
            )));
        }
        Ok(())
    }

    /// Noise standard deviation at level `t` (`t = 1` is the smallest).
    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[self.sigmas.len() - t]
    }

    /// Langevin step size at level `t`.
    pub fn step_size(&self, t: usize) -> f64 {
        let smallest = self.sigma(1);
        let s = self.sigma(t);
        self.step_scale * s * s / (smallest * smallest)
    }

    /// Noise levels in visiting order (largest first).
    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    pub fn step_scale(&self) -> f64 {
        self.step_scale
    }

    pub fn inner_steps(&self) -> usize {
        self.inner_steps
    }
}
