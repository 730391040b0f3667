//! Running experiments and writing their artifacts.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use asysqn_core::algorithms::{reference_solve, AlgoConfig, ReferenceMethod, REFERENCE_TOL};
use asysqn_core::metrics::{accuracy, mean_std, suboptimality_series};
use asysqn_core::partition::{gather_weights, one_hot_encode, vertical_split, zscore_normalize, Dataset};
use asysqn_core::runtime::{run, EventLogEntry, RunRecord, SchedulerConfig};
use asysqn_core::synthetic::{adult_like, logistic_gaussian};

use crate::config::{ExperimentSpec, Format, Synthetic};
use crate::io::{parse_csv, parse_libsvm};
use crate::threads::run_threaded;
use crate::CliError;

pub const RUN_HEADER: [&str; 9] = [
    "t",
    "comm_rounds",
    "messages",
    "bytes",
    "sim_comm_time_s",
    "sim_compute_time_s",
    "virtual_time_s",
    "objective",
    "suboptimality",
];

pub const METRICS_HEADER: [&str; 14] = [
    "trial",
    "status",
    "iterations",
    "comm_rounds",
    "messages",
    "bytes",
    "sim_comm_time_s",
    "sim_compute_time_s",
    "virtual_time_s",
    "objective",
    "f_star",
    "suboptimality",
    "max_staleness",
    "test_accuracy",
];

/// 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Reads the configured file or generates the synthetic set, then applies
/// one-hot encoding and z-scoring.
pub fn load_dataset(spec: &ExperimentSpec) -> Result<Dataset, CliError> {
    let d = &spec.data;
    let mut ds = match (d.synthetic, &d.path) {
        (Some(Synthetic::LogisticGaussian), _) => logistic_gaussian(d.n, d.d, d.seed)?,
        (Some(Synthetic::AdultLike), _) => adult_like(d.n, d.seed)?,
        (None, Some(path)) => {
            let file = fs::File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            match d.format {
                Format::Libsvm => parse_libsvm(BufReader::new(file), d.min_columns)?,
                Format::Csv => parse_csv(file, &d.label_column)?,
            }
        }
        (None, None) => return Err(CliError::DatasetMissing),
    };
    if !d.one_hot.is_empty() {
        ds = one_hot_encode(&ds, &d.one_hot)?;
    }
    if d.zscore {
        ds = zscore_normalize(&ds)?;
    }
    Ok(ds)
}

/// Training and optional test rows of one trial.
pub fn trial_data(spec: &ExperimentSpec, ds: &Dataset, trial: usize) -> Result<(Dataset, Option<Dataset>), CliError> {
    let folds = spec.data.holdout_folds;
    if folds == 0 {
        return Ok((ds.clone(), None));
    }
    let (train, test) = ds.holdout_split(folds, trial % folds, spec.data.seed)?;
    Ok((train, Some(test)))
}

/// Seeds of trial `t` are the configured seeds plus `t`.
pub fn trial_configs(spec: &ExperimentSpec, trial: usize) -> (AlgoConfig, SchedulerConfig) {
    let mut algo = spec.algo.clone();
    let mut sched = spec.sched.clone();
    algo.seed = algo.seed.wrapping_add(trial as u64);
    sched.seed = sched.seed.wrapping_add(trial as u64);
    (algo, sched)
}

fn cached_f_star(dir: &Path) -> Option<f64> {
    let text = fs::read_to_string(dir.join("reference.txt")).ok()?;
    text.lines()
        .find_map(|l| l.strip_prefix("f_star = "))
        .and_then(|v| v.trim().parse().ok())
}

/// Writes `reference.txt` with the centralized optimum of the full dataset.
pub fn write_reference(spec: &ExperimentSpec, out: &Path) -> Result<f64, CliError> {
    let ds = load_dataset(spec)?;
    let sol = reference_solve(&ds, spec.algo.lambda, REFERENCE_TOL, ReferenceMethod::Lbfgs)?;
    fs::create_dir_all(out)?;
    let text = format!(
        "f_star = {}\ngrad_norm = {}\niterations = {}\nlambda = {}\nn = {}\nd = {}\n",
        num(sol.f_star),
        num(sol.grad_norm),
        sol.iterations,
        spec.algo.lambda,
        ds.n(),
        ds.d()
    );
    fs::write(out.join("reference.txt"), text)?;
    Ok(sol.f_star)
}

fn f_star_for(spec: &ExperimentSpec, train: &Dataset, out: &Path) -> Result<Option<f64>, CliError> {
    if spec.f_star.is_some() {
        return Ok(spec.f_star);
    }
    if spec.data.holdout_folds == 0 {
        if let Some(f) = cached_f_star(out) {
            return Ok(Some(f));
        }
    }
    if spec.reference || spec.target_suboptimality.is_some() {
        let sol = reference_solve(train, spec.algo.lambda, REFERENCE_TOL, ReferenceMethod::Lbfgs)?;
        return Ok(Some(sol.f_star));
    }
    Ok(None)
}

pub fn write_run_csv(path: &Path, records: &[RunRecord], f_star: Option<f64>) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUN_HEADER)?;
    for r in records {
        w.write_record([
            r.t.to_string(),
            r.comm_rounds.to_string(),
            r.messages.to_string(),
            r.bytes.to_string(),
            num(r.sim_comm_time),
            num(r.sim_compute_time),
            num(r.virtual_time),
            num(r.objective),
            opt_num(f_star.map(|f| r.objective - f)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, line: usize) -> Result<T, CliError> {
    rec.get(i).and_then(|v| v.parse().ok()).ok_or_else(|| CliError::Parse {
        line,
        msg: format!("column {} is missing or malformed", RUN_HEADER[i]),
    })
}

pub fn read_run_csv(path: &Path) -> Result<Vec<RunRecord>, CliError> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = k + 2;
        out.push(RunRecord {
            t: field(&rec, 0, line)?,
            comm_rounds: field(&rec, 1, line)?,
            messages: field(&rec, 2, line)?,
            bytes: field(&rec, 3, line)?,
            sim_comm_time: field(&rec, 4, line)?,
            sim_compute_time: field(&rec, 5, line)?,
            virtual_time: field(&rec, 6, line)?,
            objective: field(&rec, 7, line)?,
        });
    }
    Ok(out)
}

fn write_events(path: &Path, events: &[EventLogEntry]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["time_s", "party", "kind", "k", "t", "staleness"])?;
    for e in events {
        w.write_record([
            num(e.time),
            e.party.to_string(),
            format!("{:?}", e.kind).to_lowercase(),
            e.k.to_string(),
            e.t.to_string(),
            e.staleness.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One finished (or diverged) trial.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trial: usize,
    pub diverged: bool,
    pub records: Vec<RunRecord>,
    pub f_star: Option<f64>,
    pub max_staleness: usize,
    pub test_accuracy: Option<f64>,
    pub w: Vec<f64>,
    pub events: Vec<EventLogEntry>,
}

impl TrialOutcome {
    pub fn last(&self) -> Option<&RunRecord> {
        self.records.last()
    }
}

/// Runs one trial without writing anything.
pub fn run_trial(spec: &ExperimentSpec, ds: &Dataset, trial: usize, out: &Path) -> Result<TrialOutcome, CliError> {
    let (train, test) = trial_data(spec, ds, trial)?;
    let f_star = f_star_for(spec, &train, out)?;
    let (mut algo, sched) = trial_configs(spec, trial);
    if let (Some(eps), Some(f)) = (spec.target_suboptimality, f_star) {
        algo.target_objective = Some(f + eps);
    }
    let shards = vertical_split(&train, spec.q, spec.data.order)?;
    let result = if spec.threads {
        run_threaded(&shards, &algo, &sched)
    } else {
        run(&shards, &algo, &sched)
    };
    match result {
        Ok(r) => {
            let w = gather_weights(&r.shards)[..train.d()].to_vec();
            let test_accuracy = test.as_ref().map(|t| accuracy(&w, t)).transpose()?;
            Ok(TrialOutcome {
                trial,
                diverged: false,
                max_staleness: r.max_staleness,
                records: r.records,
                f_star,
                test_accuracy,
                w,
                events: r.events,
            })
        }
        Err(asysqn_core::Error::Diverged(partial)) => Ok(TrialOutcome {
            trial,
            diverged: true,
            records: partial.records,
            f_star,
            max_staleness: 0,
            test_accuracy: None,
            w: Vec::new(),
            events: Vec::new(),
        }),
        Err(e) => Err(e.into()),
    }
}

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub out: PathBuf,
    pub trials: Vec<TrialOutcome>,
}

impl ExperimentReport {
    pub fn diverged(&self) -> Vec<usize> {
        self.trials.iter().filter(|t| t.diverged).map(|t| t.trial).collect()
    }
}

/// Runs every trial and writes `spec.cfg`, `run_<trial>.csv`,
/// `metrics.csv` and `summary.txt` into `out`. Diverged trials keep their
/// partial series and make the caller exit nonzero.
pub fn run_experiment(spec: &ExperimentSpec, out: &Path) -> Result<ExperimentReport, CliError> {
    spec.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("spec.cfg"), spec.serialize())?;
    let ds = load_dataset(spec)?;
    let mut trials = Vec::with_capacity(spec.trials);
    for trial in 0..spec.trials {
        let o = run_trial(spec, &ds, trial, out)?;
        write_run_csv(&out.join(format!("run_{trial}.csv")), &o.records, o.f_star)?;
        if spec.sched.record_events && !spec.threads {
            write_events(&out.join(format!("events_{trial}.csv")), &o.events)?;
        }
        trials.push(o);
    }
    write_metrics(&out.join("metrics.csv"), &trials)?;
    fs::write(out.join("summary.txt"), summary(spec, &trials))?;
    Ok(ExperimentReport { out: out.to_path_buf(), trials })
}

fn write_metrics(path: &Path, trials: &[TrialOutcome]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for o in trials {
        let Some(r) = o.last() else { continue };
        w.write_record([
            o.trial.to_string(),
            if o.diverged { "diverged" } else { "ok" }.to_string(),
            r.t.to_string(),
            r.comm_rounds.to_string(),
            r.messages.to_string(),
            r.bytes.to_string(),
            num(r.sim_comm_time),
            num(r.sim_compute_time),
            num(r.virtual_time),
            num(r.objective),
            opt_num(o.f_star),
            opt_num(o.f_star.map(|f| r.objective - f)),
            o.max_staleness.to_string(),
            opt_num(o.test_accuracy),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn summary(spec: &ExperimentSpec, trials: &[TrialOutcome]) -> String {
    let done: Vec<&TrialOutcome> = trials.iter().filter(|t| !t.diverged && t.last().is_some()).collect();
    let mut s = format!(
        "method {} curvature {} mode {} q {} trials {} (diverged {})\n",
        spec.algo.method,
        spec.algo.curvature,
        spec.sched.mode,
        spec.q,
        trials.len(),
        trials.len() - done.len()
    );
    if spec.threads {
        s.push_str("times are measured wall-clock seconds on OS threads\n");
    } else {
        s.push_str("times are simulated seconds from the latency and compute model, not measured\n");
    }
    s.push_str(&format!("{:<22} {:>24} {:>24}\n", "metric", "mean", "std"));
    let mut row = |name: &str, xs: Vec<f64>| {
        if !xs.is_empty() {
            let (m, sd) = mean_std(&xs);
            s.push_str(&format!("{name:<22} {:>24} {:>24}\n", num(m), num(sd)));
        }
    };
    let last = |f: fn(&RunRecord) -> f64| done.iter().map(|t| f(t.last().expect("filtered"))).collect::<Vec<_>>();
    row("iterations", last(|r| r.t as f64));
    row("comm_rounds", last(|r| r.comm_rounds as f64));
    row("messages", last(|r| r.messages as f64));
    row("bytes", last(|r| r.bytes as f64));
    row("sim_comm_time_s", last(|r| r.sim_comm_time));
    row("sim_compute_time_s", last(|r| r.sim_compute_time));
    row("virtual_time_s", last(|r| r.virtual_time));
    row("objective", last(|r| r.objective));
    row(
        "suboptimality",
        done.iter()
            .filter_map(|t| t.f_star.map(|f| t.last().expect("filtered").objective - f))
            .collect(),
    );
    row("test_accuracy", done.iter().filter_map(|t| t.test_accuracy).collect());
    s
}

/// Output directory name of one grid value, e.g. `gamma_0.1`.
pub fn grid_dir(name: &str, value: &str) -> String {
    format!("{name}_{value}")
}

/// `gamma` is accepted for `algo.step_size`; any config key works.
pub fn grid_key(name: &str) -> &str {
    match name {
        "gamma" => "algo.step_size",
        other => other,
    }
}

/// One experiment per grid value, in parallel threads, each in its own
/// subdirectory; `sweep.csv` lists the final means.
pub fn sweep(spec: &ExperimentSpec, name: &str, values: &[String], out: &Path) -> Result<Vec<ExperimentReport>, CliError> {
    let key = grid_key(name);
    let specs: Vec<ExperimentSpec> = values
        .iter()
        .map(|v| {
            let mut s = spec.clone();
            s.set(key, v)?;
            s.validate()?;
            Ok(s)
        })
        .collect::<Result<_, CliError>>()?;
    fs::create_dir_all(out)?;
    let reports: Vec<Result<ExperimentReport, CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = specs
            .iter()
            .zip(values)
            .map(|(s, v)| {
                let dir = out.join(grid_dir(name, v));
                scope.spawn(move || run_experiment(s, &dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let reports: Vec<ExperimentReport> = reports.into_iter().collect::<Result<_, _>>()?;
    let mut w = csv::Writer::from_path(out.join("sweep.csv"))?;
    w.write_record([name, "diverged", "mean_comm_rounds", "mean_objective", "mean_suboptimality"])?;
    for (v, r) in values.iter().zip(&reports) {
        let ok: Vec<&TrialOutcome> = r.trials.iter().filter(|t| !t.diverged).collect();
        let mean = |xs: Vec<f64>| if xs.is_empty() { String::new() } else { num(mean_std(&xs).0) };
        w.write_record([
            v.clone(),
            r.diverged().len().to_string(),
            mean(ok.iter().filter_map(|t| t.last()).map(|l| l.comm_rounds as f64).collect()),
            mean(ok.iter().filter_map(|t| t.last()).map(|l| l.objective).collect()),
            mean(ok.iter().filter_map(|t| Some(t.last()?.objective - t.f_star?)).collect()),
        ])?;
    }
    w.flush()?;
    Ok(reports)
}

/// Re-reads a run directory, writes `curve.csv` (sub-optimality against
/// communication rounds per trial) and returns a printable table.
pub fn report(dir: &Path) -> Result<String, CliError> {
    let mut runs: Vec<(usize, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let trial = name.strip_prefix("run_")?.strip_suffix(".csv")?.parse().ok()?;
            Some((trial, e.path()))
        })
        .collect();
    runs.sort();
    if runs.is_empty() {
        return Err(CliError::Io(format!("no run_<trial>.csv in {}", dir.display())));
    }
    let f_stars = read_f_stars(dir)?;
    let mut curve = csv::Writer::from_path(dir.join("curve.csv"))?;
    curve.write_record(["trial", "comm_rounds", "suboptimality"])?;
    let mut text = format!("{:>6} {:>10} {:>14} {:>24} {:>24}\n", "trial", "iterations", "comm_rounds", "objective", "suboptimality");
    for (trial, path) in &runs {
        let records = read_run_csv(path)?;
        let Some(last) = records.last() else { continue };
        let f_star = f_stars.get(trial).copied().flatten();
        if let Ok(series) = suboptimality_series(&records, f_star) {
            for (rounds, gap) in series {
                curve.write_record([trial.to_string(), rounds.to_string(), num(gap)])?;
            }
        }
        text.push_str(&format!(
            "{trial:>6} {:>10} {:>14} {:>24} {:>24}\n",
            last.t,
            last.comm_rounds,
            num(last.objective),
            opt_num(f_star.map(|f| last.objective - f))
        ));
    }
    curve.flush()?;
    let summary = dir.join("summary.txt");
    if summary.exists() {
        text.push('\n');
        text.push_str(&fs::read_to_string(summary)?);
    }
    Ok(text)
}

fn read_f_stars(dir: &Path) -> Result<std::collections::BTreeMap<usize, Option<f64>>, CliError> {
    let mut out = std::collections::BTreeMap::new();
    let path = dir.join("metrics.csv");
    if !path.exists() {
        return Ok(out);
    }
    let mut rdr = csv::Reader::from_path(path)?;
    for rec in rdr.records() {
        let rec = rec?;
        if let Some(trial) = rec.get(0).and_then(|v| v.parse().ok()) {
            out.insert(trial, rec.get(10).and_then(|v| v.parse().ok()));
        }
    }
    Ok(out)
}

/// Writes a dataset in LIBSVM form; used to export synthetic sets.
pub fn export_libsvm(ds: &Dataset, path: &Path) -> Result<(), CliError> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    crate::io::write_libsvm(ds, &mut w)?;
    w.flush()?;
    Ok(())
}
