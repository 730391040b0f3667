//! Evaluation quantities computed from finished runs.
//!
//! Times are simulated (virtual) seconds from the runtime's cost model, not
//! measured wall-clock time.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::partition::Dataset;
use crate::runtime::{LatencyModel, RunRecord, TrainRun};
use crate::{Error, Result};

/// How far below `f*` an objective may fall before the optimum is
/// considered wrong rather than merely rounded.
pub const REFERENCE_SLACK: f64 = 1e-9;

/// Communication and time totals at one point of a run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostLedger {
    pub comm_rounds: u64,
    pub messages: u64,
    pub bytes: u64,
    pub sim_comm_time: f64,
    pub sim_compute_time: f64,
}

impl From<&RunRecord> for CostLedger {
    fn from(r: &RunRecord) -> Self {
        CostLedger {
            comm_rounds: r.comm_rounds,
            messages: r.messages,
            bytes: r.bytes,
            sim_comm_time: r.sim_comm_time,
            sim_compute_time: r.sim_compute_time,
        }
    }
}

/// One named value and the two runs (or run and oracle) it compares.
#[derive(Debug, Clone, PartialEq)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub sources: (String, String),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
}

impl MetricReport {
    pub fn push(&mut self, name: &str, value: f64, a: &str, b: &str) {
        self.metrics.push(Metric {
            name: name.into(),
            value,
            sources: (a.into(), b.into()),
        });
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.name == name).map(|m| m.value)
    }
}

/// `(comm_rounds, f - f*)` for every record, clamped at 0.
pub fn suboptimality_series(records: &[RunRecord], f_star: Option<f64>) -> Result<Vec<(u64, f64)>> {
    let f_star = f_star.ok_or(Error::MissingOptimum)?;
    records
        .iter()
        .map(|r| {
            let gap = r.objective - f_star;
            if gap < -REFERENCE_SLACK * f_star.abs().max(1.0) {
                Err(Error::Mismatch(format!(
                    "objective {:e} at t={} is below the optimum {:e}",
                    r.objective, r.t, f_star
                )))
            } else {
                Ok((r.comm_rounds, gap.max(0.0)))
            }
        })
        .collect()
}

/// First record whose objective is within `eps` of `f_star`.
pub fn first_below(records: &[RunRecord], f_star: f64, eps: f64) -> Option<&RunRecord> {
    records.iter().find(|r| r.objective - f_star <= eps)
}

/// Time to send a `d_ell`-vector over time to send one scalar.
pub fn cti(latency: &LatencyModel, d_ell: usize) -> f64 {
    latency.message_time(8 * d_ell as u64) / latency.message_time(8)
}

/// Synchronous over asynchronous compute time (wall minus communication)
/// for runs over the same iteration budget.
pub fn crui(sync_run: &TrainRun, async_run: &TrainRun) -> Result<f64> {
    if sync_run.clock.t != async_run.clock.t {
        return Err(Error::Mismatch(format!(
            "iteration budgets differ ({} vs {})",
            sync_run.clock.t, async_run.clock.t
        )));
    }
    if sync_run.shards.len() != async_run.shards.len() {
        return Err(Error::Mismatch("party counts differ".into()));
    }
    let a = async_run.last().sim_compute_time;
    let s = sync_run.last().sim_compute_time;
    if !(a > 0.0) {
        return Err(Error::Mismatch("asynchronous run has no compute time".into()));
    }
    Ok(s / a)
}

/// `(q, T_1 / T_q)` where `T_q` is the simulated time at which the `q`-party
/// run first recorded an objective at or below `target`. Needs a `q = 1` run.
pub fn speedup_curve(runs_by_q: &[(usize, &[RunRecord])], target: f64) -> Result<Vec<(usize, f64)>> {
    let times: Vec<(usize, Option<f64>)> = runs_by_q
        .iter()
        .map(|(q, recs)| (*q, recs.iter().find(|r| r.objective <= target).map(|r| r.virtual_time)))
        .collect();
    let missing: Vec<usize> = times.iter().filter(|(_, t)| t.is_none()).map(|(q, _)| *q).collect();
    if !missing.is_empty() {
        return Err(Error::TargetNotReached(missing));
    }
    let serial = times
        .iter()
        .find(|(q, _)| *q == 1)
        .and_then(|(_, t)| *t)
        .ok_or_else(|| Error::Mismatch("speedup needs a single-party run".into()))?;
    Ok(times
        .into_iter()
        .map(|(q, t)| {
            let t = t.expect("checked above");
            (q, if t > 0.0 { serial / t } else { 1.0 })
        })
        .collect())
}

/// Share of `test` whose label matches `sign(w . x)`, ties counted as +1.
pub fn accuracy(w: &[f64], test: &Dataset) -> Result<f64> {
    if test.n() == 0 {
        return Err(Error::EmptyTestSet);
    }
    if w.len() != test.d() {
        return Err(Error::DimensionMismatch {
            expected: test.d(),
            got: w.len(),
        });
    }
    let hits = (0..test.n())
        .filter(|&i| {
            let pred = if test.features.row_dot(i, w) >= 0.0 { 1.0 } else { -1.0 };
            pred == test.labels[i]
        })
        .count();
    Ok(hits as f64 / test.n() as f64)
}

/// Held-out accuracy of a federated and a centralized model.
pub fn lossless_compare(w_fed: &[f64], w_cent: &[f64], test: &Dataset) -> Result<(f64, f64)> {
    Ok((accuracy(w_fed, test)?, accuracy(w_cent, test)?))
}

/// Least-squares slope, intercept and `R^2` of `ys` against `xs`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Sample mean and standard deviation (`n - 1` denominator; 0 for a single
/// value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, libm::sqrt(var))
}
