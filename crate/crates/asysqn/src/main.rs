use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asysqn::config::{keys_help, parse_config_unchecked, Format};
use asysqn::experiment::ExperimentReport;
use asysqn::{report, run_experiment, sweep, write_reference, CliError, ExperimentSpec};
use clap::{Args, Parser, Subcommand};

/// Asynchronous quasi-Newton training over vertically partitioned data.
#[derive(Parser)]
#[command(version, after_help = keys_help())]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Overrides {
    /// Experiment config file.
    config: PathBuf,
    /// Sets both algo.seed and sched.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (beats run.out and $ASYSQN_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset format.
    #[arg(long, value_parser = ["libsvm", "csv"])]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run all trials of one experiment.
    #[command(after_help = keys_help())]
    Train(Overrides),
    /// One experiment per grid value, e.g. `--grid gamma=0.05,0.1,0.2`.
    #[command(after_help = keys_help())]
    Sweep {
        #[command(flatten)]
        o: Overrides,
        #[arg(long)]
        grid: String,
    },
    /// Solve the centralized problem and cache f* in the output directory.
    #[command(after_help = keys_help())]
    Reference(Overrides),
    /// Summarize a finished run directory and write curve.csv.
    Report { dir: PathBuf },
}

fn load(o: &Overrides) -> Result<(ExperimentSpec, PathBuf), CliError> {
    let text = std::fs::read_to_string(&o.config).map_err(|e| CliError::Io(format!("{}: {e}", o.config.display())))?;
    let mut spec = parse_config_unchecked(&text)?;
    if let Some(seed) = o.seed {
        spec.algo.seed = seed;
        spec.sched.seed = seed;
    }
    if let Some(f) = &o.format {
        spec.data.format = f.parse::<Format>().map_err(CliError::Invalid)?;
    }
    // a relative dataset path is relative to the config file
    if let (Some(p), Some(dir)) = (&spec.data.path, o.config.parent()) {
        if p.is_relative() && !p.exists() && dir.join(p).exists() {
            spec.data.path = Some(dir.join(p));
        }
    }
    let out = o
        .out
        .clone()
        .or_else(|| spec.out.clone())
        .or_else(|| std::env::var_os("ASYSQN_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));
    spec.validate()?;
    Ok((spec, out))
}

fn finish(r: &ExperimentReport) -> ExitCode {
    let bad = r.diverged();
    if bad.is_empty() {
        println!("wrote {}", r.out.display());
        ExitCode::SUCCESS
    } else {
        eprintln!("trials {bad:?} diverged; partial series kept in {}", r.out.display());
        ExitCode::from(2)
    }
}

fn main_inner(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.cmd {
        Cmd::Train(o) => {
            let (spec, out) = load(&o)?;
            Ok(finish(&run_experiment(&spec, &out)?))
        }
        Cmd::Sweep { o, grid } => {
            let (spec, out) = load(&o)?;
            let (name, values) = grid
                .split_once('=')
                .ok_or_else(|| CliError::Invalid(format!("--grid expects name=v1,v2,..., got `{grid}`")))?;
            let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
            let reports = sweep(&spec, name.trim(), &values, &out)?;
            let mut code = ExitCode::SUCCESS;
            for r in &reports {
                if finish(r) != ExitCode::SUCCESS {
                    code = ExitCode::from(2);
                }
            }
            Ok(code)
        }
        Cmd::Reference(o) => {
            let (spec, out) = load(&o)?;
            let f = write_reference(&spec, &out)?;
            println!("f_star = {f:.16e}");
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { dir } => {
            print!("{}", report(Path::new(&dir))?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match main_inner(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
