//! Subcommand bodies.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use dmps::error::DmpsError;
use dmps::io::{load_image, load_matrix, save_image, save_matrix, write_csv, CsvValue};
use dmps::likelihood::Problem;
use dmps::metrics::{clamp_unit, posterior_moment_error, psnr, sample_mean, Truth};
use dmps::operators::{gaussian_kernel, uniform_kernel, Boundary, ImageShape, LinearOperator};
use dmps::oracle::{exact_gaussian_posterior, exact_gmm_posterior, toy_experiment};
use dmps::prior::{DdpmPriorScore, GaussianPrior, GmmPrior, NoisyPrior, SmldPriorScore};
use dmps::rng::{chain_seed, NoiseStream};
use dmps::sampler::{run_lambda_sweep, SampleSet, ScheduleRef};
use dmps::schedule::{DdpmSchedule, SmldSchedule};
use dmps::verify::{run_verification, VerifyOptions};
use log::info;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{
    ComponentSpec, CovSpec, InputSource, KernelKind, MaskPattern, OperatorSpec, PriorSpec, RunConfig, ScheduleSpec,
    Task,
};

/// Chain indices reserved for measurement noise, operator draws and prior
/// draws, far from the sampler's chains `0..num_samples`.
const MEASUREMENT_CHAIN: u64 = u64::MAX;
const OPERATOR_CHAIN: u64 = u64::MAX - 1;
const TRUTH_CHAIN: u64 = u64::MAX - 2;

pub const METRICS_HEADER: [&str; 9] = [
    "task",
    "lambda",
    "seed",
    "sample",
    "chain_seed",
    "psnr_db",
    "measurement_psnr_db",
    "mean_rel_err",
    "cov_rel_err",
];

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error("{0}")]
    Numeric(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Verification(_) => 5,
        }
    }
}

impl From<DmpsError> for CliError {
    fn from(e: DmpsError) -> Self {
        if e.is_io() {
            CliError::Io(e.to_string())
        } else {
            CliError::Numeric(e.to_string())
        }
    }
}

fn config_err(e: DmpsError) -> CliError {
    CliError::Config(e.to_string())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

enum Schedule {
    Ddpm(DdpmSchedule),
    Smld(SmldSchedule),
}

impl Schedule {
    fn build(spec: &ScheduleSpec) -> Result<Self, CliError> {
        Ok(match *spec {
            ScheduleSpec::Linear { steps, beta_min, beta_max } => {
                Schedule::Ddpm(DdpmSchedule::linear(steps, beta_min, beta_max).map_err(config_err)?)
            }
            ScheduleSpec::Geometric { steps, abar_max, abar_min } => {
                Schedule::Ddpm(DdpmSchedule::alpha_bar_geometric(steps, abar_max, abar_min).map_err(config_err)?)
            }
            ScheduleSpec::Smld { levels, sigma_max, sigma_min, eps, inner_steps } => Schedule::Smld(
                SmldSchedule::geometric(levels, sigma_max, sigma_min, eps, inner_steps).map_err(config_err)?,
            ),
        })
    }

    fn as_ref(&self) -> ScheduleRef<'_> {
        match self {
            Schedule::Ddpm(s) => ScheduleRef::Ddpm(s),
            Schedule::Smld(s) => ScheduleRef::Smld(s),
        }
    }
}

enum Prior {
    Gaussian(GaussianPrior),
    Gmm(GmmPrior),
}

impl Prior {
    fn as_noisy(&self) -> &dyn NoisyPrior {
        match self {
            Prior::Gaussian(g) => g,
            Prior::Gmm(m) => m,
        }
    }

    fn draw(&self, seed: u64) -> Result<DVector<f64>, CliError> {
        let component = match self {
            Prior::Gaussian(g) => g,
            Prior::Gmm(m) => {
                let u: f64 = ChaCha8Rng::seed_from_u64(chain_seed(seed, TRUTH_CHAIN)).random();
                let mut acc = 0.0;
                let mut pick = m.weights().len() - 1;
                for (k, w) in m.weights().iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = k;
                        break;
                    }
                }
                &m.components()[pick]
            }
        };
        let z = NoiseStream::new(seed, TRUTH_CHAIN).normals(0, component.mean().len());
        let chol = component
            .covariance()
            .cholesky()
            .ok_or_else(|| CliError::Numeric("prior covariance is not positive definite".into()))?;
        Ok(component.mean() + chol.l() * z)
    }
}

fn build_component(spec: &ComponentSpec, n: usize) -> Result<GaussianPrior, CliError> {
    let mean = match spec.mean.len() {
        1 => DVector::from_element(n, spec.mean[0]),
        len if len == n => DVector::from_column_slice(&spec.mean),
        len => {
            return Err(CliError::Numeric(format!("prior mean has {len} entries, problem dimension is {n}")));
        }
    };
    Ok(match &spec.cov {
        CovSpec::Isotropic(v) => GaussianPrior::isotropic(mean, *v)?,
        CovSpec::Diagonal(v) => GaussianPrior::diagonal(mean, DVector::from_column_slice(v))?,
        CovSpec::File(path) => GaussianPrior::new(mean, load_matrix(path)?)?,
    })
}

fn build_prior(spec: &PriorSpec, truth: Option<&DVector<f64>>, n: usize) -> Result<Prior, CliError> {
    Ok(match spec {
        PriorSpec::Fit => {
            let truth = truth.ok_or_else(|| CliError::Config("prior kind fit needs a ground-truth input".into()))?;
            let var = truth.variance();
            if !(var > 0.0) {
                return Err(CliError::Numeric("cannot fit a prior to a constant input".into()));
            }
            Prior::Gaussian(GaussianPrior::isotropic(DVector::from_element(n, truth.mean()), var)?)
        }
        PriorSpec::Gaussian(c) => Prior::Gaussian(build_component(c, n)?),
        PriorSpec::Gmm { weights, components } => {
            let comps = components.iter().map(|c| build_component(c, n)).collect::<Result<Vec<_>, _>>()?;
            Prior::Gmm(GmmPrior::new(weights.clone(), comps)?)
        }
    })
}

/// Ground truth and, for image tasks, its layout.
fn load_truth(config: &RunConfig) -> Result<Option<(Option<ImageShape>, DVector<f64>)>, CliError> {
    Ok(match &config.input {
        InputSource::Image(path) => {
            let (shape, x) = load_image(path)?;
            Some((Some(shape), x))
        }
        InputSource::Matrix(path) => {
            let m = load_matrix(path)?;
            if config.task.is_demo() {
                if m.ncols() != 1 && m.nrows() != 1 {
                    return Err(CliError::Numeric(format!(
                        "demo input must be a vector, got {}x{}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                Some((None, DVector::from_iterator(m.len(), m.iter().copied())))
            } else {
                // a matrix stands in for a gray image, row-major
                let shape = ImageShape::gray(m.nrows(), m.ncols());
                Some((Some(shape), DVector::from_iterator(m.len(), m.transpose().iter().copied())))
            }
        }
        InputSource::FromPrior => None,
    })
}

fn need_shape(shape: Option<ImageShape>) -> Result<ImageShape, CliError> {
    shape.ok_or_else(|| CliError::Numeric("this operator needs an image input".into()))
}

fn build_operator(config: &RunConfig, shape: Option<ImageShape>, n: usize) -> Result<LinearOperator, CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(chain_seed(config.seed, OPERATOR_CHAIN));
    Ok(match &config.operator {
        OperatorSpec::Identity => LinearOperator::identity(n)?,
        OperatorSpec::Colorize => LinearOperator::colorize_avg(need_shape(shape)?)?,
        OperatorSpec::Sr { factor } => LinearOperator::block_avg_sr(need_shape(shape)?, *factor)?,
        OperatorSpec::Blur { kernel, size, std } => {
            let k = match kernel {
                KernelKind::Uniform => uniform_kernel(*size),
                KernelKind::Gaussian => gaussian_kernel(*size, *std),
            };
            LinearOperator::separable_blur(need_shape(shape)?, k, Boundary::Circular)?
        }
        OperatorSpec::Mask { pattern, keep_fraction } => {
            let shape = shape.unwrap_or(ImageShape::gray(n, 1));
            let plane = shape.plane();
            let mut pixels: Vec<usize> = match pattern {
                MaskPattern::Random => {
                    let mut order: Vec<usize> = (0..plane).collect();
                    order.shuffle(&mut rng);
                    order.truncate(((plane as f64 * keep_fraction).round() as usize).max(1));
                    order
                }
                MaskPattern::Box => {
                    let side = (1.0 - keep_fraction).sqrt();
                    let bh = (shape.height as f64 * side).round() as usize;
                    let bw = (shape.width as f64 * side).round() as usize;
                    let (r0, c0) = ((shape.height - bh) / 2, (shape.width - bw) / 2);
                    (0..plane)
                        .filter(|p| {
                            let (r, c) = (p / shape.width, p % shape.width);
                            !(r >= r0 && r < r0 + bh && c >= c0 && c < c0 + bw)
                        })
                        .collect()
                }
            };
            pixels.sort_unstable();
            let kept = (0..shape.channels).flat_map(|c| pixels.iter().map(move |p| c * plane + p)).collect();
            LinearOperator::mask(n, kept)?
        }
        OperatorSpec::MaskIndices(kept) => LinearOperator::mask(n, kept.clone())?,
        OperatorSpec::Cs { rows, matrix } => {
            let a = match matrix {
                Some(path) => load_matrix(path)?,
                None => {
                    let z = NoiseStream::new(config.seed, OPERATOR_CHAIN).normals(0, rows * n);
                    DMatrix::from_column_slice(*rows, n, z.as_slice()) / (*rows as f64).sqrt()
                }
            };
            if a.nrows() != *rows || a.ncols() != n {
                return Err(CliError::Numeric(format!(
                    "cs matrix is {}x{}, expected {rows}x{n}",
                    a.nrows(),
                    a.ncols()
                )));
            }
            LinearOperator::dense(a)?
        }
        OperatorSpec::Dense(path) => {
            let a = load_matrix(path)?;
            if a.ncols() != n {
                return Err(CliError::Numeric(format!("operator has {} columns, signal has {n}", a.ncols())));
            }
            LinearOperator::dense(a)?
        }
    })
}

/// Shape of the measurement when it can be viewed as an image.
fn measurement_shape(task: Task, shape: ImageShape, operator: &OperatorSpec) -> Option<ImageShape> {
    match (task, operator) {
        (Task::Denoise | Task::Blur, _) => Some(shape),
        (Task::Colorize, _) => Some(ImageShape::gray(shape.height, shape.width)),
        (Task::Sr, OperatorSpec::Sr { factor }) => {
            ImageShape::new(shape.height / factor, shape.width / factor, shape.channels).ok()
        }
        _ => None,
    }
}

struct Prepared {
    truth: DVector<f64>,
    shape: Option<ImageShape>,
    prior: Prior,
    problem: Problem,
    schedule: Schedule,
}

fn prepare(config: &RunConfig) -> Result<Prepared, CliError> {
    let schedule = Schedule::build(&config.schedule)?;
    let loaded = load_truth(config)?;
    let (shape, truth, prior) = match loaded {
        Some((shape, truth)) => {
            let prior = build_prior(&config.prior, Some(&truth), truth.len())?;
            (shape, truth, prior)
        }
        None => {
            let n = match &config.prior {
                PriorSpec::Gaussian(c) => c.mean.len(),
                PriorSpec::Gmm { components, .. } => components[0].mean.len(),
                PriorSpec::Fit => return Err(CliError::Config("prior kind fit needs an input".into())),
            };
            let prior = build_prior(&config.prior, None, n)?;
            let truth = prior.draw(config.seed)?;
            (None, truth, prior)
        }
    };
    let n = truth.len();
    let operator = build_operator(config, shape, n)?;
    let clean = operator.apply(&truth)?;
    let y = clean + NoiseStream::new(config.seed, MEASUREMENT_CHAIN).normals(0, operator.rows()) * config.sigma;
    let problem = Problem::new(y, operator, config.sigma)?;
    Ok(Prepared {
        truth,
        shape,
        prior,
        problem,
        schedule,
    })
}

fn run_dmps(p: &Prepared, config: &RunConfig, lambdas: &[f64]) -> Vec<(f64, Result<SampleSet, DmpsError>)> {
    let prior = p.prior.as_noisy();
    let base = config.dmps_config();
    match &p.schedule {
        Schedule::Ddpm(s) => run_lambda_sweep(&p.problem, &DdpmPriorScore::new(prior, s), p.schedule.as_ref(), lambdas, &base),
        Schedule::Smld(s) => run_lambda_sweep(&p.problem, &SmldPriorScore::new(prior, s), p.schedule.as_ref(), lambdas, &base),
    }
}

fn text(v: Option<f64>) -> CsvValue {
    v.map_or_else(|| CsvValue::from(""), CsvValue::from)
}

fn metric_rows(p: &Prepared, config: &RunConfig, lambda: f64, set: &SampleSet) -> Result<Vec<Vec<CsvValue>>, CliError> {
    let images = !config.task.is_demo();
    let measurement_psnr = if images && p.problem.y().len() == p.truth.len() && config.task != Task::Cs {
        Some(psnr(&p.truth, &clamp_unit(p.problem.y()), 1.0)?.db())
    } else {
        None
    };
    let moment_err = if config.task.is_demo() && set.len() >= 2 {
        let err = match &p.prior {
            Prior::Gaussian(g) => {
                posterior_moment_error(set.samples(), Truth::Gaussian(&exact_gaussian_posterior(g, &p.problem)?))?
            }
            Prior::Gmm(m) => posterior_moment_error(set.samples(), Truth::Mixture(&exact_gmm_posterior(m, &p.problem)?))?,
        };
        Some(err)
    } else {
        None
    };
    let row = |sample: String, chain: Option<u64>, estimate: &DVector<f64>| -> Result<Vec<CsvValue>, CliError> {
        let sample_psnr = if images {
            Some(psnr(&p.truth, &clamp_unit(estimate), 1.0)?.db())
        } else {
            None
        };
        Ok(vec![
            CsvValue::from(config.task.name()),
            CsvValue::from(lambda),
            CsvValue::from(config.seed),
            CsvValue::from(sample),
            chain.map_or_else(|| CsvValue::from(""), CsvValue::from),
            text(sample_psnr),
            text(measurement_psnr),
            text(moment_err.map(|e| e.mean_rel_err)),
            text(moment_err.map(|e| e.cov_rel_err)),
        ])
    };
    let mut rows = Vec::with_capacity(set.len() + 1);
    for (k, (s, &seed)) in set.samples().iter().zip(set.per_sample_seeds()).enumerate() {
        rows.push(row(k.to_string(), Some(seed), s)?);
    }
    rows.push(row("mean".into(), None, &sample_mean(set.samples())?)?);
    Ok(rows)
}

fn create_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn write_manifest(out: &Path, command: &str, header: &[(String, String)], body: &str) -> Result<(), CliError> {
    let created = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "# dmps {command} manifest");
    let _ = writeln!(s, "# version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(s, "# created_unix = {created}");
    for (k, v) in header {
        let _ = writeln!(s, "# {k} = {v}");
    }
    s.push_str(body);
    let path = out.join("manifest.txt");
    fs::write(&path, s).map_err(|e| io_err(&path, e))
}

fn samples_matrix(set: &SampleSet) -> DMatrix<f64> {
    DMatrix::from_columns(set.samples())
}

fn write_measurement(p: &Prepared, config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let y = p.problem.y();
    save_matrix(out.join("measurement.mat"), &DMatrix::from_column_slice(y.len(), 1, y.as_slice()))?;
    if let Some(shape) = p.shape {
        if let Some(ms) = measurement_shape(config.task, shape, &config.operator) {
            save_image(out.join(image_name("measurement", ms)), ms, y)?;
        } else if config.task == Task::Inpaint {
            save_image(out.join(image_name("measurement", shape)), shape, &p.problem.operator().apply_transpose(y)?)?;
        }
    }
    Ok(())
}

fn image_name(stem: &str, shape: ImageShape) -> String {
    format!("{stem}.{}", if shape.channels == 1 { "pgm" } else { "ppm" })
}

fn seeds_list(set: &SampleSet) -> String {
    set.per_sample_seeds().iter().map(u64::to_string).collect::<Vec<_>>().join(", ")
}

pub fn cmd_sample(mut config: RunConfig, out: &Path) -> Result<(), CliError> {
    let p = prepare(&config)?;
    create_dir(out)?;
    let (lambda, result) = run_dmps(&p, &config, &[config.lambda]).remove(0);
    let set = result?;
    write_measurement(&p, &config, out)?;
    save_matrix(out.join("samples.mat"), &samples_matrix(&set))?;
    if let Some(shape) = p.shape {
        for (k, s) in set.samples().iter().enumerate() {
            save_image(out.join(image_name(&format!("sample_{k:03}"), shape)), shape, s)?;
        }
        save_image(out.join(image_name("mean", shape)), shape, &sample_mean(set.samples())?)?;
    }
    write_csv(out.join("metrics.csv"), &METRICS_HEADER, &metric_rows(&p, &config, lambda, &set)?)?;
    config.output_dir = Some(out.to_path_buf());
    write_manifest(
        out,
        "sample",
        &[
            ("rerun".into(), "dmps sample --config manifest.txt".into()),
            ("chain_seeds".into(), seeds_list(&set)),
        ],
        &config.to_config_text(),
    )?;
    info!("wrote {} samples to {}", set.len(), out.display());
    Ok(())
}

pub fn cmd_sweep(mut config: RunConfig, lambdas: &[f64], out: &Path) -> Result<(), CliError> {
    if lambdas.is_empty() {
        return Err(CliError::Config("no lambdas given".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
        return Err(CliError::Config(format!("lambda must be positive, got {bad}")));
    }
    let p = prepare(&config)?;
    create_dir(out)?;
    write_measurement(&p, &config, out)?;
    let mut rows = Vec::new();
    let mut seeds = String::new();
    for (i, (lambda, result)) in run_dmps(&p, &config, lambdas).into_iter().enumerate() {
        let set = result?;
        save_matrix(out.join(format!("samples_{i:02}.mat")), &samples_matrix(&set))?;
        rows.extend(metric_rows(&p, &config, lambda, &set)?);
        seeds = seeds_list(&set);
    }
    write_csv(out.join("metrics.csv"), &METRICS_HEADER, &rows)?;
    let list = lambdas.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
    config.output_dir = Some(out.to_path_buf());
    write_manifest(
        out,
        "sweep",
        &[
            ("rerun".into(), format!("dmps sweep --config manifest.txt --lambdas {list}")),
            ("lambdas".into(), list.clone()),
            ("samples_files".into(), "samples_NN.mat in lambda order".into()),
            ("chain_seeds".into(), seeds),
        ],
        &config.to_config_text(),
    )?;
    info!("wrote sweep over {} lambdas to {}", lambdas.len(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyArgs {
    pub sigma0: f64,
    pub x_t: f64,
    pub steps: usize,
    pub abar_max: f64,
    pub abar_min: f64,
}

pub fn cmd_toy(args: ToyArgs, out: &Path) -> Result<PathBuf, CliError> {
    let curve = toy_experiment(args.sigma0, args.x_t, args.steps, args.abar_max, args.abar_min).map_err(config_err)?;
    create_dir(out)?;
    let path = out.join("toy.csv");
    curve.write_csv(&path)?;
    let body = format!(
        "[toy]\nsigma0 = {}\nx_t = {}\nsteps = {}\nabar_max = {}\nabar_min = {}\n",
        args.sigma0, args.x_t, args.steps, args.abar_max, args.abar_min
    );
    let rerun = format!(
        "dmps toy --sigma0 {} --x-t {} --steps {} --abar-max {} --abar-min {}",
        args.sigma0, args.x_t, args.steps, args.abar_max, args.abar_min
    );
    write_manifest(out, "toy", &[("rerun".into(), rerun)], &body)?;
    Ok(path)
}

/// Prints one line per check; fails if any check fails.
pub fn cmd_verify(seed: u64, sizes: &[usize], perturbation: f64) -> Result<(), CliError> {
    let mut failed = 0;
    println!("{:<6} {:>5}  {:<48} {:>12} {:>10}", "result", "size", "check", "max_error", "tolerance");
    for &size in sizes {
        let report = run_verification(&VerifyOptions { seed, size, perturbation }).map_err(config_err)?;
        for c in &report.checks {
            failed += usize::from(!c.passed);
            println!(
                "{:<6} {:>5}  {:<48} {:>12.3e} {:>10.1e}",
                if c.passed { "PASS" } else { "FAIL" },
                size,
                c.name,
                c.max_error,
                c.tolerance
            );
        }
    }
    if failed > 0 {
        return Err(CliError::Verification(format!("{failed} check(s) failed")));
    }
    Ok(())
}
