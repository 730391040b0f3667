use std::fs;
use std::path::Path;
use std::process::Command;

use asysqn::config::{parse_config_unchecked, KEYS};
use asysqn::experiment::{read_run_csv, run_experiment};
use asysqn::io::{parse_libsvm, write_libsvm};
use asysqn_core::partition::vertical_split;
use asysqn_core::runtime::run;
use proptest::prelude::*;

const SMALL: &str = "\
data.synthetic = logistic_gaussian
data.n = 80
data.d = 10
run.q = 3
algo.method = svrg
algo.lambda = 0.01
algo.step_size = 0.1
algo.paired_curvature = true
algo.delta = 0.1
algo.max_iterations = 300
algo.eval_every = 30
";

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_asysqn"))
}

fn write_cfg(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.cfg");
    fs::write(&p, text).unwrap();
    p
}

#[test]
fn train_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), &format!("{SMALL}run.trials = 3\n"));
    let out = tmp.path().join("out");
    let st = bin().args(["train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status().unwrap();
    assert!(st.success());
    for f in ["spec.cfg", "run_0.csv", "run_1.csv", "run_2.csv", "metrics.csv", "summary.txt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("mean") && summary.contains("std") && summary.contains("simulated"));
    let header = fs::read_to_string(out.join("run_0.csv")).unwrap();
    assert!(header.starts_with("t,comm_rounds,messages,bytes,sim_comm_time_s,sim_compute_time_s"));
}

#[test]
fn run_csv_is_read_back_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = parse_config_unchecked(SMALL).unwrap();
    let rep = run_experiment(&spec, tmp.path()).unwrap();
    let back = read_run_csv(&tmp.path().join("run_0.csv")).unwrap();
    assert_eq!(back, rep.trials[0].records);
    let ds = asysqn::experiment::load_dataset(&spec).unwrap();
    let direct = run(&vertical_split(&ds, 3, spec.data.order).unwrap(), &spec.algo, &spec.sched).unwrap();
    assert_eq!(back, direct.records);
}

#[test]
fn repeated_invocations_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), &format!("{SMALL}sched.mode = async\nsched.record_events = true\n"));
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let st = bin().args(["train", cfg.to_str().unwrap(), "--seed", "5", "--out", out.to_str().unwrap()]).status().unwrap();
        assert!(st.success());
    }
    for f in ["run_0.csv", "events_0.csv", "metrics.csv", "summary.txt"] {
        assert_eq!(fs::read(tmp.path().join("a").join(f)).unwrap(), fs::read(tmp.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_makes_one_directory_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    let out = tmp.path().join("sw");
    let st = bin()
        .args(["sweep", cfg.to_str().unwrap(), "--grid", "gamma=0.05,0.1,0.2", "--out", out.to_str().unwrap()])
        .status()
        .unwrap();
    assert!(st.success());
    for g in ["0.05", "0.1", "0.2"] {
        let d = out.join(format!("gamma_{g}"));
        assert!(d.join("run_0.csv").exists());
        assert!(fs::read_to_string(d.join("spec.cfg")).unwrap().contains(&format!("algo.step_size = {g}")));
    }
    assert_eq!(fs::read_to_string(out.join("sweep.csv")).unwrap().lines().count(), 4);
}

#[test]
fn reference_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), &format!("{SMALL}run.reference = false\n"));
    let out = tmp.path().join("r");
    let o = bin().args(["reference", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("f_star = "));
    assert!(bin().args(["train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status().unwrap().success());
    let metrics = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let row: Vec<&str> = metrics.lines().nth(1).unwrap().split(',').collect();
    assert!(!row[10].is_empty(), "f* taken from the cache");
    let o = bin().args(["report", out.to_str().unwrap()]).output().unwrap();
    assert!(o.status.success());
    assert!(out.join("curve.csv").exists());
    assert!(String::from_utf8_lossy(&o.stdout).contains("suboptimality"));
}

#[test]
fn out_dir_falls_back_to_env() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), SMALL);
    let out = tmp.path().join("from_env");
    let st = bin().args(["train", cfg.to_str().unwrap()]).env("ASYSQN_OUT", &out).status().unwrap();
    assert!(st.success());
    assert!(out.join("run_0.csv").exists());
}

#[test]
fn divergence_exits_nonzero_and_keeps_partial_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        tmp.path(),
        "data.synthetic = logistic_gaussian\ndata.n = 50\ndata.d = 6\nrun.q = 2\nalgo.curvature = identity\nalgo.step_size = 1e300\nalgo.eval_every = 1\nalgo.max_iterations = 50\nalgo.lambda = 1\n",
    );
    let out = tmp.path().join("div");
    let st = bin().args(["train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status().unwrap();
    assert_eq!(st.code(), Some(2));
    assert!(!read_run_csv(&out.join("run_0.csv")).unwrap().is_empty());
    assert!(fs::read_to_string(out.join("metrics.csv")).unwrap().contains("diverged"));
}

#[test]
fn bad_configs_fail_with_a_message() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "algo.method = svrg\n");
    let o = bin().args(["train", cfg.to_str().unwrap()]).output().unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("no dataset"));
    let cfg = write_cfg(tmp.path(), "data.synthetic = adult_like\nalgo.nope = 1\n");
    let o = bin().args(["train", cfg.to_str().unwrap()]).output().unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains("algo.nope"));
}

#[test]
fn help_lists_every_key_with_default() {
    for args in [vec!["--help"], vec!["train", "--help"]] {
        let o = bin().args(&args).output().unwrap();
        let text = String::from_utf8_lossy(&o.stdout);
        for (key, _) in KEYS {
            assert!(text.contains(key), "{key}");
        }
        assert!(text.contains("[default: 0.01]"));
    }
}

#[test]
fn libsvm_and_csv_files_train() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("d.svm"), "+1 1:0.5 3:1\n-1 2:2\n+1 1:1 2:1\n-1 3:-1\n").unwrap();
    fs::write(tmp.path().join("d.csv"), "a,b,label,c\n0.5,0,1,1\n0,2,0,0\n1,1,1,0\n0,0,0,-1\n").unwrap();
    let base = "run.q = 2\nalgo.max_iterations = 20\nalgo.eval_every = 5\nalgo.lambda = 0.1\n";
    let cfg = write_cfg(tmp.path(), &format!("{base}data.path = d.svm\n"));
    let out = tmp.path().join("svm");
    assert!(bin().args(["train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status().unwrap().success());
    let cfg = write_cfg(tmp.path(), &format!("{base}data.path = d.csv\n"));
    let out2 = tmp.path().join("csv");
    assert!(bin().args(["train", cfg.to_str().unwrap(), "--format", "csv", "--out", out2.to_str().unwrap()]).status().unwrap().success());
    assert_eq!(fs::read(out.join("run_0.csv")).unwrap(), fs::read(out2.join("run_0.csv")).unwrap());
}

#[test]
fn thread_mode_trains() {
    let mut spec = parse_config_unchecked(SMALL).unwrap();
    spec.threads = true;
    let tmp = tempfile::tempdir().unwrap();
    let rep = run_experiment(&spec, tmp.path()).unwrap();
    let recs = &rep.trials[0].records;
    assert!(recs.last().unwrap().objective < recs[0].objective);
    assert!(fs::read_to_string(tmp.path().join("summary.txt")).unwrap().contains("measured"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn libsvm_round_trip(rows in prop::collection::vec((prop::bool::ANY, prop::collection::btree_map(0usize..30, -1e3..1e3f64, 0..8)), 1..20)) {
        let mut text = String::new();
        for (pos, feats) in &rows {
            text.push_str(if *pos { "+1" } else { "-1" });
            for (j, v) in feats {
                text.push_str(&format!(" {}:{}", j + 1, v));
            }
            text.push('\n');
        }
        let a = parse_libsvm(text.as_bytes(), 0).unwrap();
        let mut buf = Vec::new();
        write_libsvm(&a, &mut buf).unwrap();
        let b = parse_libsvm(buf.as_slice(), a.d()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn config_round_trip(q in 1usize..16, gamma in 1e-4..10.0f64, seed in any::<u64>(), tau in prop::option::of(0usize..50), method in 0usize..3) {
        let mut spec = parse_config_unchecked(SMALL).unwrap();
        spec.q = q;
        spec.algo.step_size = gamma;
        spec.sched.seed = seed;
        spec.sched.tau_bound = tau;
        spec.algo.method = ["sgd", "svrg", "saga"][method].parse().unwrap();
        prop_assert_eq!(parse_config_unchecked(&spec.serialize()).unwrap(), spec);
    }
}
