//! DMPS samplers: prior score plus scaled pseudo-likelihood score.
//!
//! DDPM form, per step `t = T..1`:
//!
//! ```text
//! x' = (x - (1 - alpha_t) / sqrt(1 - abar_t) * s_theta(x, t)) / sqrt(alpha_t) + sqrt(beta_t) z_t
//! x' += lambda * (1 - alpha_t) / sqrt(alpha_t) * grad log p~(y | x)
//! ```
//!
//! The likelihood correction is evaluated at the pre-update state `x` and
//! added after the noise, and noise is injected at `t = 1` too.
//!
//! SMLD form, levels `t = T..1` with `K` Langevin steps each and
//! `a_t = eps * sigma_t^2 / sigma_1^2`:
//!
//! ```text
//! x' = x + a_t s(x, sigma_t) + sqrt(2 a_t) z + lambda a_t grad log p~(y | x)
//! ```
//!
//! Each chain draws its noise from a [`NoiseStream`] keyed by `(seed, chain)`,
//! so results do not depend on thread count or on how many chains are run.

use log::{log_enabled, trace, Level};
use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{DmpsError, Result};
use crate::likelihood::{pll_score_smld, pll_score_svd, Problem, ResolventCache};
use crate::prior::{as_pretrained_residual, ScoreModel};
use crate::rng::{NoiseStream, INIT_STEP};
use crate::schedule::{DdpmSchedule, SmldSchedule};

const PROGRESS: &str = "dmps::progress";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Ddpm,
    Smld,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DmpsConfig {
    pub lambda: f64,
    pub seed: u64,
    pub num_samples: usize,
    pub variant: Variant,
}

impl Default for DmpsConfig {
    fn default() -> Self {
        Self {
            lambda: 1.75,
            seed: 0,
            num_samples: 1,
            variant: Variant::Ddpm,
        }
    }
}

impl DmpsConfig {
    pub fn new(lambda: f64, seed: u64, num_samples: usize, variant: Variant) -> Result<Self> {
        let config = Self {
            lambda,
            seed,
            num_samples,
            variant,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(DmpsError::InvalidRange(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        if self.num_samples == 0 {
            return Err(DmpsError::InvalidRange("num_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// Final states of all chains, with the per-chain noise keys.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    samples: Vec<DVector<f64>>,
    config: DmpsConfig,
    per_sample_seeds: Vec<u64>,
}

impl SampleSet {
    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    pub fn config(&self) -> &DmpsConfig {
        &self.config
    }

    /// Key of each chain's [`NoiseStream`].
    pub fn per_sample_seeds(&self) -> &[u64] {
        &self.per_sample_seeds
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn into_samples(self) -> Vec<DVector<f64>> {
        self.samples
    }
}

/// Either schedule, for entry points that serve both variants.
#[derive(Debug, Clone, Copy)]
pub enum ScheduleRef<'a> {
    Ddpm(&'a DdpmSchedule),
    Smld(&'a SmldSchedule),
}

impl ScheduleRef<'_> {
    pub fn variant(&self) -> Variant {
        match self {
            ScheduleRef::Ddpm(_) => Variant::Ddpm,
            ScheduleRef::Smld(_) => Variant::Smld,
        }
    }
}

fn check_inputs<M: ScoreModel + ?Sized>(problem: &Problem, model: &M, config: &DmpsConfig, variant: Variant) -> Result<()> {
    config.validate()?;
    if config.variant != variant {
        return Err(DmpsError::InvalidRange(format!(
            "config selects {:?} but a {variant:?} schedule was given",
            config.variant
        )));
    }
    if model.dim() != problem.dim() {
        return Err(DmpsError::DimensionMismatch {
            what: "prior dimension",
            expected: problem.dim(),
            got: model.dim(),
        });
    }
    Ok(())
}

fn ensure_finite(x: &DVector<f64>, chain: usize, t: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DmpsError::NonFiniteState { chain, t })
    }
}

fn run_chains(config: &DmpsConfig, chain: impl Fn(usize, NoiseStream) -> Result<DVector<f64>> + Sync) -> Result<SampleSet> {
    let streams: Vec<NoiseStream> = (0..config.num_samples)
        .map(|k| NoiseStream::new(config.seed, k as u64))
        .collect();
    let samples = streams
        .par_iter()
        .enumerate()
        .map(|(k, &stream)| chain(k, stream))
        .collect::<Result<Vec<_>>>()?;
    Ok(SampleSet {
        samples,
        config: *config,
        per_sample_seeds: streams.iter().map(NoiseStream::key).collect(),
    })
}

/// One DDPM-form chain. `lambda` is not validated so that null runs are possible.
pub(crate) fn ddpm_chain<M: ScoreModel + ?Sized>(
    problem: &Problem,
    cache: &ResolventCache,
    model: &M,
    schedule: &DdpmSchedule,
    lambda: f64,
    stream: NoiseStream,
    chain: usize,
) -> Result<DVector<f64>> {
    let n = problem.dim();
    let mut x = stream.normals(INIT_STEP, n);
    for t in (1..=schedule.len()).rev() {
        let alpha = schedule.alpha(t);
        let abar = schedule.alpha_bar(t);
        let residual = as_pretrained_residual(model, schedule, &x, t)?;
        let pll = pll_score_svd(problem, cache, schedule, &x, t)?;
        let z = stream.normals(t as u64, n);
        let mut next = (&x - residual * ((1.0 - alpha) / (1.0 - abar).sqrt())) / alpha.sqrt();
        next += z * schedule.reverse_var(t).sqrt();
        next += pll * (lambda * (1.0 - alpha) / alpha.sqrt());
        ensure_finite(&next, chain, t)?;
        if log_enabled!(target: PROGRESS, Level::Trace) {
            let r = (problem.y() - problem.operator().apply(&next)? / abar.sqrt()).norm();
            trace!(target: PROGRESS, "step={t} chain={chain} residual={r:.6e}");
        }
        x = next;
    }
    Ok(x)
}

/// One SMLD-form chain. Neither `lambda` nor the step scale is validated.
pub(crate) fn smld_chain<M: ScoreModel + ?Sized>(
    problem: &Problem,
    cache: &ResolventCache,
    model: &M,
    schedule: &SmldSchedule,
    lambda: f64,
    stream: NoiseStream,
    chain: usize,
) -> Result<DVector<f64>> {
    let n = problem.dim();
    let k_steps = schedule.inner_steps();
    let mut x = stream.normals(INIT_STEP, n);
    for t in (1..=schedule.len()).rev() {
        let step = schedule.step_size(t);
        for k in 1..=k_steps {
            let prior = model.score(&x, t)?;
            let pll = pll_score_smld(problem, cache, schedule, &x, t)?;
            let z = stream.normals(((t - 1) * k_steps + k) as u64, n);
            let next = &x + prior * step + z * (2.0 * step).sqrt() + pll * (lambda * step);
            ensure_finite(&next, chain, t)?;
            x = next;
        }
        if log_enabled!(target: PROGRESS, Level::Trace) {
            let r = (problem.y() - problem.operator().apply(&x)?).norm();
            trace!(target: PROGRESS, "step={t} chain={chain} residual={r:.6e}");
        }
    }
    Ok(x)
}

/// DDPM-form DMPS. `model` supplies the noise-perturbed prior score at each `t`.
pub fn dmps_ddpm<M: ScoreModel + ?Sized>(
    problem: &Problem,
    model: &M,
    schedule: &DdpmSchedule,
    config: &DmpsConfig,
) -> Result<SampleSet> {
    check_inputs(problem, model, config, Variant::Ddpm)?;
    let cache = ResolventCache::new(problem)?;
    run_chains(config, |k, stream| {
        ddpm_chain(problem, &cache, model, schedule, config.lambda, stream, k)
    })
}

/// SMLD-form DMPS with annealed Langevin steps.
pub fn dmps_smld<M: ScoreModel + ?Sized>(
    problem: &Problem,
    model: &M,
    schedule: &SmldSchedule,
    config: &DmpsConfig,
) -> Result<SampleSet> {
    check_inputs(problem, model, config, Variant::Smld)?;
    let cache = ResolventCache::new(problem)?;
    run_chains(config, |k, stream| {
        smld_chain(problem, &cache, model, schedule, config.lambda, stream, k)
    })
}

/// Dispatches on the schedule variant.
pub fn dmps<M: ScoreModel + ?Sized>(
    problem: &Problem,
    model: &M,
    schedule: ScheduleRef<'_>,
    config: &DmpsConfig,
) -> Result<SampleSet> {
    match schedule {
        ScheduleRef::Ddpm(s) => dmps_ddpm(problem, model, s, config),
        ScheduleRef::Smld(s) => dmps_smld(problem, model, s, config),
    }
}

/// Runs DMPS once per `lambda` with the seed of `base`, so that chain `k`
/// sees the same noise for every `lambda`. Failures are reported per entry.
pub fn run_lambda_sweep<M: ScoreModel + ?Sized>(
    problem: &Problem,
    model: &M,
    schedule: ScheduleRef<'_>,
    lambdas: &[f64],
    base: &DmpsConfig,
) -> Vec<(f64, Result<SampleSet>)> {
    lambdas
        .iter()
        .map(|&lambda| {
            let config = DmpsConfig { lambda, ..*base };
            (lambda, dmps(problem, model, schedule, &config))
        })
        .collect()
}
