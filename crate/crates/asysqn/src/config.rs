//! Experiment files: one `section.key = value` per line, `#` starts a
//! comment. Keys not listed in [`KEYS`] are rejected.

use std::fmt::Write as _;
use std::path::PathBuf;

use asysqn_core::algorithms::{AlgoConfig, Curvature, Method};
use asysqn_core::aggregation::MaskMode;
use asysqn_core::partition::ColumnOrder;
use asysqn_core::runtime::{Mode, SchedulerConfig};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Libsvm,
    Csv,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "libsvm" => Ok(Format::Libsvm),
            "csv" => Ok(Format::Csv),
            _ => Err("one of libsvm, csv".into()),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Format::Libsvm => "libsvm",
            Format::Csv => "csv",
        })
    }
}

/// Built-in generated datasets, used instead of a file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synthetic {
    /// Dense Gaussian features, `data.n x data.d`.
    LogisticGaussian,
    /// Census-style one-hot rows, 123 columns.
    AdultLike,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSpec {
    pub path: Option<PathBuf>,
    pub format: Format,
    pub label_column: String,
    /// Lower bound on the feature count of LIBSVM input.
    pub min_columns: usize,
    pub one_hot: Vec<usize>,
    pub zscore: bool,
    pub order: ColumnOrder,
    pub synthetic: Option<Synthetic>,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
    /// 0 trains on everything; otherwise trial `t` holds out fold
    /// `t % holdout_folds` and reports test accuracy.
    pub holdout_folds: usize,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            path: None,
            format: Format::Libsvm,
            label_column: "label".into(),
            min_columns: 0,
            one_hot: Vec::new(),
            zscore: false,
            order: ColumnOrder::Natural,
            synthetic: None,
            n: 1000,
            d: 50,
            seed: 0,
            holdout_folds: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub data: DataSpec,
    pub q: usize,
    pub trials: usize,
    pub out: Option<PathBuf>,
    pub f_star: Option<f64>,
    /// Solve the centralized problem for `f*` when none is given.
    pub reference: bool,
    /// Stop once `f - f*` drops to this value.
    pub target_suboptimality: Option<f64>,
    /// Run parties on OS threads instead of the simulator.
    pub threads: bool,
    pub algo: AlgoConfig,
    pub sched: SchedulerConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            data: DataSpec::default(),
            q: 8,
            trials: 1,
            out: None,
            f_star: None,
            reference: true,
            target_suboptimality: None,
            threads: false,
            algo: AlgoConfig::default(),
            sched: SchedulerConfig::default(),
        }
    }
}

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("data.path", "dataset file"),
    ("data.format", "libsvm or csv"),
    ("data.label_column", "csv column holding the labels"),
    ("data.min_columns", "pad libsvm input to at least this many features"),
    ("data.one_hot", "comma-separated categorical column indices"),
    ("data.zscore", "standardize every column"),
    ("data.column_seed", "shuffle columns before splitting with this seed"),
    ("data.synthetic", "logistic_gaussian or adult_like instead of a file"),
    ("data.n", "synthetic sample count"),
    ("data.d", "synthetic feature count (logistic_gaussian)"),
    ("data.seed", "synthetic data and holdout seed"),
    ("data.holdout_folds", "hold out one fold per trial for test accuracy (0 = off)"),
    ("run.q", "number of parties"),
    ("run.trials", "independent trials, seeds offset by the trial index"),
    ("run.out", "output directory (else $ASYSQN_OUT, else ./runs)"),
    ("run.f_star", "known optimal objective"),
    ("run.reference", "solve for f* when it is not given"),
    ("run.target_suboptimality", "stop once f - f* reaches this value"),
    ("run.threads", "run parties on OS threads (not deterministic)"),
    ("algo.method", "sgd, svrg or saga"),
    ("algo.curvature", "sdlbfgs or identity"),
    ("algo.step_size", "step size gamma"),
    ("algo.batch", "mini-batch size"),
    ("algo.lambda", "l2 regularization weight"),
    ("algo.memory", "curvature pairs kept"),
    ("algo.delta", "lower bound on the curvature scaling"),
    ("algo.epoch_length", "svrg inner steps per anchor"),
    ("algo.epochs", "svrg epochs per party"),
    ("algo.max_iterations", "block updates over all parties"),
    ("algo.target_objective", "stop at this objective"),
    ("algo.eval_every", "global iterations between recorded objectives"),
    ("algo.seed", "mini-batch seed"),
    ("algo.paired_curvature", "curvature pairs from two gradients on one batch"),
    ("algo.anchor_barrier", "wait for all parties at svrg epoch ends"),
    ("sched.mode", "async or sync"),
    ("sched.seed", "tree and mask seed"),
    ("sched.speeds", "comma-separated party speeds in (0, 1]"),
    ("sched.tau_bound", "largest local-clock lead in async mode"),
    ("sched.alpha_lat", "seconds per message"),
    ("sched.beta_bw", "seconds per byte"),
    ("sched.seconds_per_mult", "simulated seconds per multiply-add"),
    ("sched.masks", "uniform or disabled"),
    ("sched.record_events", "write the event log"),
];

fn opt<T: std::fmt::Display>(v: &Option<T>, none: &str) -> String {
    v.as_ref().map_or_else(|| none.to_string(), |x| x.to_string())
}

fn list<T: std::fmt::Display>(v: &[T]) -> String {
    if v.is_empty() {
        "default".into()
    } else {
        v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
    }
}

impl ExperimentSpec {
    /// Current value of `key` in config syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let (d, a, s) = (&self.data, &self.algo, &self.sched);
        Some(match key {
            "data.path" => opt(&d.path.as_ref().map(|p| p.display()), "none"),
            "data.format" => d.format.to_string(),
            "data.label_column" => d.label_column.clone(),
            "data.min_columns" => d.min_columns.to_string(),
            "data.one_hot" => {
                if d.one_hot.is_empty() {
                    "none".into()
                } else {
                    list(&d.one_hot)
                }
            }
            "data.zscore" => d.zscore.to_string(),
            "data.column_seed" => match d.order {
                ColumnOrder::Natural => "none".into(),
                ColumnOrder::Shuffled { seed } => seed.to_string(),
            },
            "data.synthetic" => match d.synthetic {
                None => "none".into(),
                Some(Synthetic::LogisticGaussian) => "logistic_gaussian".into(),
                Some(Synthetic::AdultLike) => "adult_like".into(),
            },
            "data.n" => d.n.to_string(),
            "data.d" => d.d.to_string(),
            "data.seed" => d.seed.to_string(),
            "data.holdout_folds" => d.holdout_folds.to_string(),
            "run.q" => self.q.to_string(),
            "run.trials" => self.trials.to_string(),
            "run.out" => opt(&self.out.as_ref().map(|p| p.display()), "none"),
            "run.f_star" => opt(&self.f_star, "none"),
            "run.reference" => self.reference.to_string(),
            "run.target_suboptimality" => opt(&self.target_suboptimality, "none"),
            "run.threads" => self.threads.to_string(),
            "algo.method" => a.method.to_string(),
            "algo.curvature" => a.curvature.to_string(),
            "algo.step_size" => a.step_size.to_string(),
            "algo.batch" => opt(&a.batch, "auto"),
            "algo.lambda" => a.lambda.to_string(),
            "algo.memory" => a.memory.to_string(),
            "algo.delta" => a.delta.to_string(),
            "algo.epoch_length" => opt(&a.epoch_length, "auto"),
            "algo.epochs" => opt(&a.epochs, "none"),
            "algo.max_iterations" => opt(&a.max_iterations, "auto"),
            "algo.target_objective" => opt(&a.target_objective, "none"),
            "algo.eval_every" => opt(&a.eval_every, "auto"),
            "algo.seed" => a.seed.to_string(),
            "algo.paired_curvature" => a.paired_curvature.to_string(),
            "algo.anchor_barrier" => a.anchor_barrier.to_string(),
            "sched.mode" => s.mode.to_string(),
            "sched.seed" => s.seed.to_string(),
            "sched.speeds" => list(&s.speeds),
            "sched.tau_bound" => opt(&s.tau_bound, "none"),
            "sched.alpha_lat" => s.latency.alpha_lat.to_string(),
            "sched.beta_bw" => s.latency.beta_bw.to_string(),
            "sched.seconds_per_mult" => s.seconds_per_mult.to_string(),
            "sched.masks" => match s.mask_mode {
                MaskMode::Uniform => "uniform".into(),
                MaskMode::Disabled => "disabled".into(),
            },
            "sched.record_events" => s.record_events.to_string(),
            _ => return None,
        })
    }

    /// Sets `key` from its config-syntax value.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let ty = |expected: &str| CliError::Type {
            key: key.into(),
            expected: expected.into(),
            got: value.into(),
        };
        let float = || value.parse::<f64>().map_err(|_| ty("float"));
        let int = || value.parse::<usize>().map_err(|_| ty("integer"));
        let uint = || value.parse::<u64>().map_err(|_| ty("integer"));
        let boolean = || value.parse::<bool>().map_err(|_| ty("bool (true or false)"));
        let maybe = |none: &str| value == none;
        let (d, a, s) = (&mut self.data, &mut self.algo, &mut self.sched);
        match key {
            "data.path" => d.path = if maybe("none") { None } else { Some(PathBuf::from(value)) },
            "data.format" => d.format = value.parse().map_err(|e: String| ty(&e))?,
            "data.label_column" => d.label_column = value.into(),
            "data.min_columns" => d.min_columns = int()?,
            "data.one_hot" => {
                d.one_hot = if maybe("none") || value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| v.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| ty("comma-separated integers"))?
                }
            }
            "data.zscore" => d.zscore = boolean()?,
            "data.column_seed" => {
                d.order = if maybe("none") {
                    ColumnOrder::Natural
                } else {
                    ColumnOrder::Shuffled {
                        seed: uint().map_err(|_| ty("integer or none"))?,
                    }
                }
            }
            "data.synthetic" => {
                d.synthetic = match value {
                    "none" => None,
                    "logistic_gaussian" => Some(Synthetic::LogisticGaussian),
                    "adult_like" => Some(Synthetic::AdultLike),
                    _ => return Err(ty("one of none, logistic_gaussian, adult_like")),
                }
            }
            "data.n" => d.n = int()?,
            "data.d" => d.d = int()?,
            "data.seed" => d.seed = uint()?,
            "data.holdout_folds" => d.holdout_folds = int()?,
            "run.q" => self.q = int()?,
            "run.trials" => self.trials = int()?,
            "run.out" => self.out = if maybe("none") { None } else { Some(PathBuf::from(value)) },
            "run.f_star" => self.f_star = if maybe("none") { None } else { Some(float().map_err(|_| ty("float or none"))?) },
            "run.reference" => self.reference = boolean()?,
            "run.target_suboptimality" => {
                self.target_suboptimality = if maybe("none") { None } else { Some(float().map_err(|_| ty("float or none"))?) }
            }
            "run.threads" => self.threads = boolean()?,
            "algo.method" => a.method = value.parse::<Method>().map_err(|_| ty("one of sgd, svrg, saga"))?,
            "algo.curvature" => a.curvature = value.parse::<Curvature>().map_err(|_| ty("one of sdlbfgs, identity"))?,
            "algo.step_size" => a.step_size = float()?,
            "algo.batch" => a.batch = if maybe("auto") { None } else { Some(int().map_err(|_| ty("integer or auto"))?) },
            "algo.lambda" => a.lambda = float()?,
            "algo.memory" => a.memory = int()?,
            "algo.delta" => a.delta = float()?,
            "algo.epoch_length" => {
                a.epoch_length = if maybe("auto") { None } else { Some(int().map_err(|_| ty("integer or auto"))?) }
            }
            "algo.epochs" => a.epochs = if maybe("none") { None } else { Some(int().map_err(|_| ty("integer or none"))?) },
            "algo.max_iterations" => {
                a.max_iterations = if maybe("auto") { None } else { Some(int().map_err(|_| ty("integer or auto"))?) }
            }
            "algo.target_objective" => {
                a.target_objective = if maybe("none") { None } else { Some(float().map_err(|_| ty("float or none"))?) }
            }
            "algo.eval_every" => {
                a.eval_every = if maybe("auto") { None } else { Some(int().map_err(|_| ty("integer or auto"))?) }
            }
            "algo.seed" => a.seed = uint()?,
            "algo.paired_curvature" => a.paired_curvature = boolean()?,
            "algo.anchor_barrier" => a.anchor_barrier = boolean()?,
            "sched.mode" => s.mode = value.parse::<Mode>().map_err(|_| ty("one of async, sync"))?,
            "sched.seed" => s.seed = uint()?,
            "sched.speeds" => {
                s.speeds = if maybe("default") || value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| ty("comma-separated floats or default"))?
                }
            }
            "sched.tau_bound" => s.tau_bound = if maybe("none") { None } else { Some(int().map_err(|_| ty("integer or none"))?) },
            "sched.alpha_lat" => s.latency.alpha_lat = float()?,
            "sched.beta_bw" => s.latency.beta_bw = float()?,
            "sched.seconds_per_mult" => s.seconds_per_mult = float()?,
            "sched.masks" => {
                s.mask_mode = match value {
                    "uniform" => MaskMode::Uniform,
                    "disabled" => MaskMode::Disabled,
                    _ => return Err(ty("one of uniform, disabled")),
                }
            }
            "sched.record_events" => s.record_events = boolean()?,
            _ => return Err(CliError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    /// Every key, one per line, in [`KEYS`] order.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        for (key, _) in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key).expect("listed key"));
        }
        out
    }

    /// Checks what can be checked before loading data.
    pub fn validate(&self) -> Result<(), CliError> {
        match (&self.data.path, self.data.synthetic) {
            (None, None) => return Err(CliError::DatasetMissing),
            (Some(p), None) if !p.exists() => return Err(CliError::Invalid(format!("dataset {} does not exist", p.display()))),
            _ => {}
        }
        if self.trials == 0 {
            return Err(CliError::Invalid("run.trials must be at least 1".into()));
        }
        if self.q == 0 {
            return Err(CliError::Invalid("run.q must be at least 1".into()));
        }
        if self.target_suboptimality.is_some_and(|e| !(e > 0.0)) {
            return Err(CliError::Invalid("run.target_suboptimality must be positive".into()));
        }
        self.sched.validate(self.q)?;
        Ok(())
    }
}

/// Parses without validating.
pub fn parse_config_unchecked(text: &str) -> Result<ExperimentSpec, CliError> {
    let mut spec = ExperimentSpec::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split_once('#').map_or(raw, |(a, _)| a).trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| CliError::Parse {
            line: lineno + 1,
            msg: format!("expected `section.key = value`, got `{line}`"),
        })?;
        spec.set(key.trim(), value.trim())?;
    }
    Ok(spec)
}

pub fn parse_config(text: &str) -> Result<ExperimentSpec, CliError> {
    let spec = parse_config_unchecked(text)?;
    spec.validate()?;
    Ok(spec)
}

/// `--help` text: every key with its default.
pub fn keys_help() -> String {
    let defaults = ExperimentSpec::default();
    let width = KEYS.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    let mut out = String::from("Config keys (`section.key = value`, `#` comments):\n");
    for (key, doc) in KEYS {
        let _ = writeln!(out, "  {key:width$}  {doc} [default: {}]", defaults.get(key).expect("listed key"));
    }
    out
}
