//! Run configuration: bracketed sections of `key = value` lines.
//!
//! ```text
//! [run]
//! task = denoise
//! sigma = 0.5
//! [input]
//! image = clean.pgm
//! ```
//!
//! Every key is checked against the task; anything unknown is an error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dmps::sampler::{DmpsConfig, Variant};
use ini::Ini;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Denoise,
    Inpaint,
    Sr,
    Blur,
    Colorize,
    Cs,
    GaussianDemo,
    GmmDemo,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::Denoise,
        Task::Inpaint,
        Task::Sr,
        Task::Blur,
        Task::Colorize,
        Task::Cs,
        Task::GaussianDemo,
        Task::GmmDemo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::Denoise => "denoise",
            Task::Inpaint => "inpaint",
            Task::Sr => "sr",
            Task::Blur => "blur",
            Task::Colorize => "colorize",
            Task::Cs => "cs",
            Task::GaussianDemo => "gaussian_demo",
            Task::GmmDemo => "gmm_demo",
        }
    }

    pub fn is_demo(self) -> bool {
        matches!(self, Task::GaussianDemo | Task::GmmDemo)
    }

    fn operator_keys(self) -> &'static [&'static str] {
        match self {
            Task::Denoise | Task::Colorize => &[],
            Task::Inpaint => &["pattern", "keep_fraction"],
            Task::Sr => &["factor"],
            Task::Blur => &["kernel", "size", "std"],
            Task::Cs => &["rows", "matrix"],
            Task::GaussianDemo | Task::GmmDemo => &["kind", "kept", "matrix"],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InputSource {
    Image(PathBuf),
    Matrix(PathBuf),
    /// Demo tasks only: ground truth drawn from the prior.
    FromPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskPattern {
    Random,
    /// Drops a centered box covering a quarter of each side.
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    Identity,
    Mask { pattern: MaskPattern, keep_fraction: f64 },
    MaskIndices(Vec<usize>),
    Sr { factor: usize },
    Blur { kernel: KernelKind, size: usize, std: f64 },
    Colorize,
    /// Gaussian design scaled by `1/sqrt(rows)`, or loaded from a file.
    Cs { rows: usize, matrix: Option<PathBuf> },
    Dense(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleSpec {
    Linear { steps: usize, beta_min: f64, beta_max: f64 },
    Geometric { steps: usize, abar_max: f64, abar_min: f64 },
    Smld { levels: usize, sigma_max: f64, sigma_min: f64, eps: f64, inner_steps: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovSpec {
    Isotropic(f64),
    Diagonal(Vec<f64>),
    File(PathBuf),
}

/// A mean list of length 1 is broadcast to the problem dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentSpec {
    pub mean: Vec<f64>,
    pub cov: CovSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub enum PriorSpec {
    /// Isotropic Gaussian matched to the ground truth's mean and variance.
    Fit,
    Gaussian(ComponentSpec),
    Gmm { weights: Vec<f64>, components: Vec<ComponentSpec> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub task: Task,
    pub sigma: f64,
    pub lambda: f64,
    pub seed: u64,
    pub num_samples: usize,
    pub variant: Variant,
    pub output_dir: Option<PathBuf>,
    pub input: InputSource,
    pub operator: OperatorSpec,
    pub schedule: ScheduleSpec,
    pub prior: PriorSpec,
}

impl RunConfig {
    pub fn dmps_config(&self) -> DmpsConfig {
        DmpsConfig {
            lambda: self.lambda,
            seed: self.seed,
            num_samples: self.num_samples,
            variant: self.variant,
        }
    }
}

pub const DEFAULT_LAMBDA: f64 = 1.75;
pub const DEFAULT_SIGMA: f64 = 0.05;
pub const DEFAULT_SMLD_EPS: f64 = 2e-5;
pub const DEFAULT_SMLD_INNER: usize = 3;

/// Flattened `(section, key) -> value` view of the file.
struct Table {
    values: BTreeMap<(String, String), String>,
    base: PathBuf,
}

impl Table {
    fn from_str(text: &str, base: PathBuf) -> Result<Self, String> {
        let ini = Ini::load_from_str(text).map_err(|e| format!("parse error: {e}"))?;
        let mut values = BTreeMap::new();
        for (section, props) in ini.iter() {
            let section = match section {
                Some(s) => s.trim().to_ascii_lowercase(),
                None if props.is_empty() => continue,
                None => {
                    let key = props.iter().next().map(|(k, _)| k.to_string()).unwrap_or_default();
                    return Err(format!("key `{key}` appears before any [section]"));
                }
            };
            for (key, value) in props.iter() {
                let key = key.trim().to_ascii_lowercase();
                if values.insert((section.clone(), key.clone()), value.trim().to_string()).is_some() {
                    return Err(format!("duplicate key `{key}` in [{section}]"));
                }
            }
        }
        Ok(Self { values, base })
    }

    fn check_allowed(&self, allowed: &dyn Fn(&str, &str) -> bool) -> Result<(), String> {
        for (section, key) in self.values.keys() {
            if !allowed(section, key) {
                return Err(format!("unknown key `{key}` in [{section}]"));
            }
        }
        Ok(())
    }

    fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.values.get(&(section.to_string(), key.to_string())).map(String::as_str)
    }

    fn parse<T: std::str::FromStr>(&self, section: &str, key: &str) -> Result<Option<T>, String> {
        self.get(section, key)
            .map(|v| v.parse::<T>().map_err(|_| format!("[{section}] {key}: cannot parse `{v}`")))
            .transpose()
    }

    fn parse_or<T: std::str::FromStr>(&self, section: &str, key: &str, default: T) -> Result<T, String> {
        Ok(self.parse(section, key)?.unwrap_or(default))
    }

    fn list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, String> {
        self.get(section, key).map(|v| parse_list(v).map_err(|e| format!("[{section}] {key}: {e}"))).transpose()
    }

    fn path(&self, section: &str, key: &str) -> Option<PathBuf> {
        self.get(section, key).map(|p| self.base.join(p))
    }
}

/// Comma- or whitespace-separated reals.
pub fn parse_list(text: &str) -> Result<Vec<f64>, String> {
    let items: Vec<&str> = text.split([',', ' ', '\t']).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err("empty list".into());
    }
    items
        .iter()
        .map(|s| s.parse::<f64>().map_err(|_| format!("cannot parse `{s}` as a number")))
        .collect()
}

fn positive(name: &str, v: f64) -> Result<f64, String> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{name} must be positive and finite, got {v}"))
    }
}

fn parse_task(name: &str) -> Result<Task, String> {
    Task::ALL
        .into_iter()
        .find(|t| t.name() == name)
        .ok_or_else(|| format!("unknown task `{name}`"))
}

fn component_keys(key: &str, count: usize) -> bool {
    ["mean_", "variance_", "covariance_"].iter().any(|prefix| {
        key.strip_prefix(prefix)
            .and_then(|k| k.parse::<usize>().ok())
            .is_some_and(|k| (1..=count).contains(&k))
    })
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base).map_err(ConfigError::Invalid)
    }

    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, String> {
        let table = Table::from_str(text, base.to_path_buf())?;
        let task = parse_task(table.get("run", "task").ok_or("[run] task is required")?)?;
        let variant = match table.get("run", "variant").unwrap_or("ddpm") {
            "ddpm" => Variant::Ddpm,
            "smld" => Variant::Smld,
            other => return Err(format!("unknown variant `{other}`")),
        };
        let prior_kind = table.get("prior", "kind").unwrap_or(if task.is_demo() {
            if task == Task::GmmDemo {
                "gmm"
            } else {
                "gaussian"
            }
        } else {
            "fit"
        });
        let components: usize = table.parse_or("prior", "components", 0)?;
        let schedule_kind = table.get("schedule", "kind").unwrap_or(match variant {
            Variant::Ddpm => "linear",
            Variant::Smld => "geometric",
        });

        table.check_allowed(&|section, key| match section {
            "run" => ["task", "sigma", "lambda", "seed", "num_samples", "variant", "output_dir"].contains(&key),
            "input" => ["image", "matrix"].contains(&key),
            "operator" => task.operator_keys().contains(&key),
            "schedule" => match (variant, schedule_kind) {
                (Variant::Ddpm, "linear") => ["kind", "steps", "beta_min", "beta_max"].contains(&key),
                (Variant::Ddpm, _) => ["kind", "steps", "abar_max", "abar_min"].contains(&key),
                (Variant::Smld, _) => ["kind", "levels", "sigma_max", "sigma_min", "eps", "inner_steps"].contains(&key),
            },
            "prior" => match prior_kind {
                "fit" => key == "kind",
                "gaussian" => ["kind", "mean", "variance", "covariance"].contains(&key),
                _ => ["kind", "components", "weights"].contains(&key) || component_keys(key, components),
            },
            _ => false,
        })?;

        let sigma = positive("sigma", table.parse_or("run", "sigma", DEFAULT_SIGMA)?)?;
        let lambda = positive("lambda", table.parse_or("run", "lambda", DEFAULT_LAMBDA)?)?;
        let seed = table.parse_or("run", "seed", 0u64)?;
        let num_samples = table.parse_or("run", "num_samples", 1usize)?;
        if num_samples == 0 {
            return Err("num_samples must be at least 1".into());
        }
        let output_dir = table.path("run", "output_dir");

        let input = match (table.path("input", "image"), table.path("input", "matrix")) {
            (Some(_), Some(_)) => return Err("[input] takes either image or matrix, not both".into()),
            (Some(p), None) if !task.is_demo() => InputSource::Image(p),
            (Some(_), None) => return Err(format!("task {} takes a matrix input, not an image", task.name())),
            (None, Some(p)) => InputSource::Matrix(p),
            (None, None) if task.is_demo() => InputSource::FromPrior,
            (None, None) => return Err(format!("task {} needs [input] image or matrix", task.name())),
        };
        if task == Task::Colorize && matches!(input, InputSource::Matrix(_)) {
            return Err("colorize needs an RGB image input".into());
        }

        let operator = parse_operator(&table, task)?;
        let schedule = parse_schedule(&table, variant, schedule_kind)?;
        let prior = parse_prior(&table, task, prior_kind, components)?;

        Ok(Self {
            task,
            sigma,
            lambda,
            seed,
            num_samples,
            variant,
            output_dir,
            input,
            operator,
            schedule,
            prior,
        })
    }

    /// Fully resolved config in the same format, with absolute paths.
    pub fn to_config_text(&self) -> String {
        let mut s = String::new();
        let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf()).display().to_string();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "task = {}", self.task.name());
        let _ = writeln!(s, "sigma = {}", self.sigma);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "num_samples = {}", self.num_samples);
        let _ = writeln!(
            s,
            "variant = {}",
            match self.variant {
                Variant::Ddpm => "ddpm",
                Variant::Smld => "smld",
            }
        );
        if let Some(dir) = &self.output_dir {
            let _ = writeln!(s, "output_dir = {}", abs(dir));
        }

        let _ = writeln!(s, "\n[input]");
        match &self.input {
            InputSource::Image(p) => {
                let _ = writeln!(s, "image = {}", abs(p));
            }
            InputSource::Matrix(p) => {
                let _ = writeln!(s, "matrix = {}", abs(p));
            }
            InputSource::FromPrior => {}
        }

        let _ = writeln!(s, "\n[operator]");
        let demo = self.task.is_demo();
        match &self.operator {
            OperatorSpec::Identity if demo => {
                let _ = writeln!(s, "kind = identity");
            }
            OperatorSpec::Identity | OperatorSpec::Colorize => {}
            OperatorSpec::Mask { pattern, keep_fraction } => {
                let p = match pattern {
                    MaskPattern::Random => "random",
                    MaskPattern::Box => "box",
                };
                let _ = writeln!(s, "pattern = {p}\nkeep_fraction = {keep_fraction}");
            }
            OperatorSpec::MaskIndices(kept) => {
                let k: Vec<String> = kept.iter().map(|i| i.to_string()).collect();
                let _ = writeln!(s, "kind = mask\nkept = {}", k.join(", "));
            }
            OperatorSpec::Sr { factor } => {
                let _ = writeln!(s, "factor = {factor}");
            }
            OperatorSpec::Blur { kernel, size, std } => {
                let k = match kernel {
                    KernelKind::Uniform => "uniform",
                    KernelKind::Gaussian => "gaussian",
                };
                let _ = writeln!(s, "kernel = {k}\nsize = {size}\nstd = {std}");
            }
            OperatorSpec::Cs { rows, matrix } => {
                let _ = writeln!(s, "rows = {rows}");
                if let Some(p) = matrix {
                    let _ = writeln!(s, "matrix = {}", abs(p));
                }
            }
            OperatorSpec::Dense(p) => {
                let _ = writeln!(s, "kind = dense\nmatrix = {}", abs(p));
            }
        }

        let _ = writeln!(s, "\n[schedule]");
        match &self.schedule {
            ScheduleSpec::Linear { steps, beta_min, beta_max } => {
                let _ = writeln!(s, "kind = linear\nsteps = {steps}\nbeta_min = {beta_min}\nbeta_max = {beta_max}");
            }
            ScheduleSpec::Geometric { steps, abar_max, abar_min } => {
                let _ = writeln!(s, "kind = geometric\nsteps = {steps}\nabar_max = {abar_max}\nabar_min = {abar_min}");
            }
            ScheduleSpec::Smld { levels, sigma_max, sigma_min, eps, inner_steps } => {
                let _ = writeln!(
                    s,
                    "kind = geometric\nlevels = {levels}\nsigma_max = {sigma_max}\nsigma_min = {sigma_min}\neps = {eps}\ninner_steps = {inner_steps}"
                );
            }
        }

        let _ = writeln!(s, "\n[prior]");
        let component = |s: &mut String, suffix: &str, c: &ComponentSpec| {
            let _ = writeln!(s, "mean{suffix} = {}", list(&c.mean));
            match &c.cov {
                CovSpec::Isotropic(v) => {
                    let _ = writeln!(s, "variance{suffix} = {v}");
                }
                CovSpec::Diagonal(v) => {
                    let _ = writeln!(s, "variance{suffix} = {}", list(v));
                }
                CovSpec::File(p) => {
                    let _ = writeln!(s, "covariance{suffix} = {}", abs(p));
                }
            }
        };
        match &self.prior {
            PriorSpec::Fit => {
                let _ = writeln!(s, "kind = fit");
            }
            PriorSpec::Gaussian(c) => {
                let _ = writeln!(s, "kind = gaussian");
                component(&mut s, "", c);
            }
            PriorSpec::Gmm { weights, components } => {
                let _ = writeln!(s, "kind = gmm\ncomponents = {}\nweights = {}", components.len(), list(weights));
                for (k, c) in components.iter().enumerate() {
                    component(&mut s, &format!("_{}", k + 1), c);
                }
            }
        }
        s
    }
}

fn parse_operator(table: &Table, task: Task) -> Result<OperatorSpec, String> {
    Ok(match task {
        Task::Denoise => OperatorSpec::Identity,
        Task::Colorize => OperatorSpec::Colorize,
        Task::Inpaint => {
            let pattern = match table.get("operator", "pattern").unwrap_or("random") {
                "random" => MaskPattern::Random,
                "box" => MaskPattern::Box,
                other => return Err(format!("unknown mask pattern `{other}`")),
            };
            let keep_fraction: f64 = table.parse_or("operator", "keep_fraction", 0.5)?;
            if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
                return Err(format!("keep_fraction must be in (0, 1], got {keep_fraction}"));
            }
            OperatorSpec::Mask { pattern, keep_fraction }
        }
        Task::Sr => {
            let factor = table.parse_or("operator", "factor", 2usize)?;
            if factor == 0 {
                return Err("factor must be at least 1".into());
            }
            OperatorSpec::Sr { factor }
        }
        Task::Blur => {
            let kernel = match table.get("operator", "kernel").unwrap_or("uniform") {
                "uniform" => KernelKind::Uniform,
                "gaussian" => KernelKind::Gaussian,
                other => return Err(format!("unknown kernel `{other}`")),
            };
            let size = table.parse_or("operator", "size", 9usize)?;
            let std = positive("std", table.parse_or("operator", "std", 3.0)?)?;
            OperatorSpec::Blur { kernel, size, std }
        }
        Task::Cs => {
            let rows = table.parse::<usize>("operator", "rows")?.ok_or("cs needs [operator] rows")?;
            if rows == 0 {
                return Err("rows must be at least 1".into());
            }
            OperatorSpec::Cs {
                rows,
                matrix: table.path("operator", "matrix"),
            }
        }
        Task::GaussianDemo | Task::GmmDemo => match table.get("operator", "kind").unwrap_or("identity") {
            "identity" => OperatorSpec::Identity,
            "mask" => {
                let kept = table.get("operator", "kept").ok_or("mask operator needs `kept`")?;
                let kept = kept
                    .split([',', ' '])
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<usize>().map_err(|_| format!("bad mask index `{s}`")))
                    .collect::<Result<Vec<_>, _>>()?;
                OperatorSpec::MaskIndices(kept)
            }
            "dense" => OperatorSpec::Dense(table.path("operator", "matrix").ok_or("dense operator needs `matrix`")?),
            other => return Err(format!("unknown operator kind `{other}`")),
        },
    })
}

fn parse_schedule(table: &Table, variant: Variant, kind: &str) -> Result<ScheduleSpec, String> {
    let s = "schedule";
    Ok(match (variant, kind) {
        (Variant::Ddpm, "linear") => ScheduleSpec::Linear {
            steps: table.parse_or(s, "steps", 1000)?,
            beta_min: table.parse_or(s, "beta_min", 1e-4)?,
            beta_max: table.parse_or(s, "beta_max", 0.02)?,
        },
        (Variant::Ddpm, "geometric") => ScheduleSpec::Geometric {
            steps: table.parse_or(s, "steps", 500)?,
            abar_max: table.parse_or(s, "abar_max", 0.99)?,
            abar_min: table.parse_or(s, "abar_min", 0.01)?,
        },
        (Variant::Smld, "geometric") => ScheduleSpec::Smld {
            levels: table.parse_or(s, "levels", 232)?,
            sigma_max: table.parse_or(s, "sigma_max", 50.0)?,
            sigma_min: table.parse_or(s, "sigma_min", 0.01)?,
            eps: table.parse_or(s, "eps", DEFAULT_SMLD_EPS)?,
            inner_steps: table.parse_or(s, "inner_steps", DEFAULT_SMLD_INNER)?,
        },
        (_, other) => return Err(format!("unknown schedule kind `{other}` for this variant")),
    })
}

fn parse_component(table: &Table, suffix: &str) -> Result<ComponentSpec, String> {
    let mean = table
        .list("prior", &format!("mean{suffix}"))?
        .ok_or_else(|| format!("[prior] mean{suffix} is required"))?;
    let variance = table.list("prior", &format!("variance{suffix}"))?;
    let covariance = table.path("prior", &format!("covariance{suffix}"));
    let cov = match (variance, covariance) {
        (Some(_), Some(_)) => return Err(format!("give variance{suffix} or covariance{suffix}, not both")),
        (Some(v), None) => {
            for &x in &v {
                positive(&format!("variance{suffix}"), x)?;
            }
            if v.len() == 1 {
                CovSpec::Isotropic(v[0])
            } else {
                if v.len() != mean.len() {
                    return Err(format!("variance{suffix} has {} entries, mean has {}", v.len(), mean.len()));
                }
                CovSpec::Diagonal(v)
            }
        }
        (None, Some(p)) => CovSpec::File(p),
        (None, None) => CovSpec::Isotropic(1.0),
    };
    Ok(ComponentSpec { mean, cov })
}

fn parse_prior(table: &Table, task: Task, kind: &str, components: usize) -> Result<PriorSpec, String> {
    let prior = match kind {
        "fit" => PriorSpec::Fit,
        "gaussian" => PriorSpec::Gaussian(parse_component(table, "")?),
        "gmm" => {
            if components == 0 {
                return Err("gmm prior needs components >= 1".into());
            }
            let weights = table.list("prior", "weights")?.ok_or("gmm prior needs weights")?;
            if weights.len() != components {
                return Err(format!("{} weights for {components} components", weights.len()));
            }
            let comps = (1..=components)
                .map(|k| parse_component(table, &format!("_{k}")))
                .collect::<Result<Vec<_>, _>>()?;
            PriorSpec::Gmm { weights, components: comps }
        }
        other => return Err(format!("unknown prior kind `{other}`")),
    };
    match (task, &prior) {
        (Task::GaussianDemo, PriorSpec::Gaussian(_)) | (Task::GmmDemo, PriorSpec::Gmm { .. }) => Ok(prior),
        (Task::GaussianDemo, _) => Err("gaussian_demo needs a gaussian prior".into()),
        (Task::GmmDemo, _) => Err("gmm_demo needs a gmm prior".into()),
        _ => Ok(prior),
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Io(String),
    Invalid(String),
}
