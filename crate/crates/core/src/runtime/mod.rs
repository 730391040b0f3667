//! Deterministic discrete-event execution of the parties.
//!
//! Each party loops over local iterations. An iteration starts with a read
//! of the peers' current blocks (a snapshot), spends simulated time on
//! aggregation and local arithmetic, and only then publishes its new block.
//! Reads may therefore be stale. A stale-synchronous gate bounds how far a
//! party's local clock may run ahead of its slowest peer: with bound `tau`
//! a party at local iteration `k` may start only once every peer has
//! completed at least `k - tau` iterations. Synchronous mode is bound 0,
//! which is a barrier after every iteration.

mod events;

use alloc::boxed::Box;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use events::{Event, EventKind, EventQueue};

use crate::aggregation::{build_tree, distinct_tree, MaskMode, TreeTopology};
use crate::algorithms::{party_iteration, AlgoConfig, CostCounters, Method, PartyState, ShardSource, StepOutcome};
use crate::objective::full_objective;
use crate::partition::{check_consistent, PartyShard};
use crate::{DivergedRun, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    #[default]
    Async,
    Sync,
}

impl core::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "async" => Ok(Mode::Async),
            "sync" => Ok(Mode::Sync),
            _ => Err(Error::InvalidConfig(format!("unknown mode `{s}` (async, sync)"))),
        }
    }
}

impl core::fmt::Display for Mode {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Mode::Async => "async",
            Mode::Sync => "sync",
        })
    }
}

/// Per-message latency plus per-byte transfer time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyModel {
    pub alpha_lat: f64,
    pub beta_bw: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            alpha_lat: 50e-6,
            beta_bw: 1e-9,
        }
    }
}

impl LatencyModel {
    #[inline]
    pub fn message_time(&self, bytes: u64) -> f64 {
        self.alpha_lat + self.beta_bw * bytes as f64
    }
}

pub const DEFAULT_STRAGGLER_SPEED: f64 = 0.35;
pub const DEFAULT_SECONDS_PER_MULT: f64 = 1e-9;

/// One straggler (the last party) at [`DEFAULT_STRAGGLER_SPEED`], the rest
/// at full speed. A single party is never a straggler.
pub fn default_speeds(q: usize) -> Vec<f64> {
    let mut s = vec![1.0; q];
    if q > 1 {
        s[q - 1] = DEFAULT_STRAGGLER_SPEED;
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchedulerConfig {
    pub mode: Mode,
    /// Seeds the aggregation trees and the masks.
    pub seed: u64,
    /// Speed factor per party in `(0, 1]`; empty means [`default_speeds`].
    pub speeds: Vec<f64>,
    /// Largest allowed lead of a party's local clock over any peer's in
    /// async mode; `None` is unbounded. Sync mode always uses 0.
    pub tau_bound: Option<usize>,
    pub latency: LatencyModel,
    /// Simulated seconds per multiply-add at speed 1.
    pub seconds_per_mult: f64,
    pub mask_mode: MaskMode,
    /// Keep a log of every start and completion.
    pub record_events: bool,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            mode: Mode::Async,
            seed: 0,
            speeds: Vec::new(),
            tau_bound: None,
            latency: LatencyModel::default(),
            seconds_per_mult: DEFAULT_SECONDS_PER_MULT,
            mask_mode: MaskMode::Uniform,
            record_events: false,
        }
    }
}

impl SchedulerConfig {
    pub fn speeds_for(&self, q: usize) -> Vec<f64> {
        if self.speeds.is_empty() {
            default_speeds(q)
        } else {
            self.speeds.clone()
        }
    }

    pub fn effective_tau(&self) -> Option<usize> {
        match self.mode {
            Mode::Sync => Some(0),
            Mode::Async => self.tau_bound,
        }
    }

    pub fn validate(&self, q: usize) -> Result<()> {
        let speeds = self.speeds_for(q);
        if speeds.len() != q {
            return Err(Error::InvalidConfig(format!("{} speed factors for {q} parties", speeds.len())));
        }
        if let Some(s) = speeds.iter().find(|&&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::InvalidConfig(format!("speed factor {s} outside (0, 1]")));
        }
        let l = self.latency;
        if !(l.alpha_lat >= 0.0 && l.beta_bw >= 0.0 && l.alpha_lat.is_finite() && l.beta_bw.is_finite()) {
            return Err(Error::InvalidConfig("latency model needs finite nonnegative terms".into()));
        }
        if !(self.seconds_per_mult > 0.0) || !self.seconds_per_mult.is_finite() {
            return Err(Error::InvalidConfig("seconds per multiply must be positive".into()));
        }
        Ok(())
    }

    /// Simulated duration of aggregating `scalars` predictors in one call:
    /// both trees are traversed concurrently, one hop per level.
    pub fn aggregation_time(&self, t1: &TreeTopology, t2: &TreeTopology, scalars: u64) -> f64 {
        let hops = t1.height().max(t2.height());
        hops as f64 * self.latency.message_time(scalars * crate::aggregation::SCALAR_BYTES)
    }
}

/// Global iteration count and the local clocks it sums.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct GlobalClock {
    pub t: usize,
    pub per_party_k: Vec<usize>,
}

impl GlobalClock {
    pub fn new(q: usize) -> Self {
        GlobalClock {
            t: 0,
            per_party_k: vec![0; q],
        }
    }

    pub fn tick(&mut self, party: usize) {
        self.per_party_k[party] += 1;
        self.t += 1;
    }

    /// `max(0, k_reader - k_peer)`.
    pub fn lag(&self, reader: usize, peer: usize) -> usize {
        self.per_party_k[reader].saturating_sub(self.per_party_k[peer])
    }
}

/// One row of a run's time series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunRecord {
    pub t: usize,
    pub comm_rounds: u64,
    pub messages: u64,
    pub bytes: u64,
    /// Mean per-party time spent in aggregation.
    pub sim_comm_time: f64,
    /// Simulated wall time minus `sim_comm_time`.
    pub sim_compute_time: f64,
    /// Simulated wall time.
    pub virtual_time: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventLogEntry {
    pub time: f64,
    pub party: usize,
    pub kind: EventKind,
    /// Local iteration of `party` (started or completed).
    pub k: usize,
    /// Global iteration count when the event was handled.
    pub t: usize,
    /// Largest peer lag seen by the read (starts only).
    pub staleness: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainRun {
    pub records: Vec<RunRecord>,
    pub shards: Vec<PartyShard>,
    pub clock: GlobalClock,
    pub counters: CostCounters,
    /// Largest lag of a peer's local clock behind the reader's.
    pub max_staleness: usize,
    /// Largest number of other block updates published between a party's
    /// read and its own publish.
    pub max_overlap: usize,
    /// Time each party spent on local arithmetic.
    pub busy_compute: Vec<f64>,
    /// Time each party spent in aggregation.
    pub busy_comm: Vec<f64>,
    pub final_time: f64,
    pub reached_target: bool,
    /// Smallest `v . d` over all steps.
    pub min_alignment: f64,
    pub damping_activations: u64,
    pub events: Vec<EventLogEntry>,
}

impl TrainRun {
    pub fn last(&self) -> &RunRecord {
        self.records.last().expect("a run has at least the initial record")
    }

    /// Share of the run party `p` spent computing.
    pub fn utilization(&self, p: usize) -> f64 {
        if self.final_time > 0.0 {
            self.busy_compute[p] / self.final_time
        } else {
            0.0
        }
    }
}

/// What a requesting party sees of one peer.
#[derive(Debug, Clone, PartialEq)]
pub struct PeerRead {
    pub party: usize,
    pub components: Vec<f64>,
    /// Peer's completed local iterations at read time.
    pub local_iteration: usize,
    /// `max(0, k_requester - k_peer)`.
    pub staleness: usize,
}

/// Every peer's predictor components for `samples` from its currently
/// published block, tagged with how far it lags the requester.
pub fn snapshot_peer_components(
    shards: &[PartyShard],
    clock: &GlobalClock,
    requesting: usize,
    samples: &[usize],
) -> Result<Vec<PeerRead>> {
    if requesting >= shards.len() {
        return Err(Error::IndexOutOfRange {
            index: requesting,
            n: shards.len(),
        });
    }
    shards
        .iter()
        .filter(|s| s.party_id != requesting)
        .map(|s| {
            Ok(PeerRead {
                party: s.party_id,
                components: crate::algorithms::own_components(s, &s.w_block, samples)?,
                local_iteration: clock.per_party_k[s.party_id],
                staleness: clock.lag(requesting, s.party_id),
            })
        })
        .collect()
}

struct InFlight {
    start: f64,
    comm: f64,
    compute: f64,
    read_t: usize,
    outcome: StepOutcome,
    counters: CostCounters,
}

struct Sim<'a> {
    cfg: &'a AlgoConfig,
    sched: &'a SchedulerConfig,
    shards: Vec<PartyShard>,
    states: Vec<PartyState>,
    clock: GlobalClock,
    t1: TreeTopology,
    t2: TreeTopology,
    speeds: Vec<f64>,
    tau: Option<usize>,
    in_flight: Vec<Option<InFlight>>,
    waiting: Vec<bool>,
    counters: CostCounters,
    comm_done: Vec<f64>,
    compute_done: Vec<f64>,
    records: Vec<RunRecord>,
    events: Vec<EventLogEntry>,
    max_staleness: usize,
    max_overlap: usize,
    min_alignment: f64,
    damping_activations: u64,
}

impl Sim<'_> {
    fn q(&self) -> usize {
        self.shards.len()
    }

    fn n(&self) -> usize {
        self.shards[0].n()
    }

    /// Stale-synchronous gate plus the optional SVRG epoch barrier.
    fn may_start(&self, p: usize) -> bool {
        let k = self.clock.per_party_k[p];
        if let Some(tau) = self.tau {
            if self.clock.per_party_k.iter().any(|&kj| kj + tau < k) {
                return false;
            }
        }
        if self.cfg.method == Method::Svrg && self.cfg.anchor_barrier {
            let n = self.n();
            let st = &self.states[p];
            if st.anchor.is_some() && st.needs_full_pass(self.cfg, n) {
                let len = self.cfg.epoch_len(n);
                return (0..self.q()).all(|j| {
                    let sj = &self.states[j];
                    sj.epochs > st.epochs
                        || (sj.epochs == st.epochs && sj.inner >= len && self.in_flight[j].is_none())
                });
            }
        }
        true
    }

    fn sim_comm_time(&self, now: f64) -> f64 {
        let total: f64 = (0..self.q())
            .map(|p| {
                let partial = self.in_flight[p]
                    .as_ref()
                    .map_or(0.0, |f| (now - f.start).clamp(0.0, f.comm));
                self.comm_done[p] + partial
            })
            .sum();
        total / self.q() as f64
    }

    fn record(&mut self, now: f64) -> Result<()> {
        let objective = full_objective(&self.shards, self.cfg.lambda)?;
        let comm = self.sim_comm_time(now);
        self.records.push(RunRecord {
            t: self.clock.t,
            comm_rounds: self.counters.comm_rounds,
            messages: self.counters.messages,
            bytes: self.counters.bytes,
            sim_comm_time: comm,
            sim_compute_time: (now - comm).max(0.0),
            virtual_time: now,
            objective,
        });
        if objective.is_finite() {
            Ok(())
        } else {
            Err(self.diverged())
        }
    }

    fn diverged(&mut self) -> Error {
        Error::Diverged(Box::new(DivergedRun {
            t: self.clock.t,
            records: core::mem::take(&mut self.records),
        }))
    }

    fn start(&mut self, p: usize, now: f64) -> Result<()> {
        let k = self.clock.per_party_k[p];
        let staleness = (0..self.q()).map(|j| self.clock.lag(p, j)).max().unwrap_or(0);
        self.max_staleness = self.max_staleness.max(staleness);
        let rng = crate::rng::stream(self.sched.seed, crate::rng::STREAM_MASK, &[p as u64, k as u64]);
        let mut src = ShardSource::new(&self.shards, &self.t1, &self.t2, rng);
        src.mask_mode = self.sched.mask_mode;
        let outcome = match party_iteration(&mut self.states[p], &self.shards[p], self.cfg, &mut src) {
            Ok(o) => o,
            Err(Error::NonFinite(_)) => return Err(self.diverged()),
            Err(e) => return Err(e),
        };
        let comm: f64 = src
            .calls
            .iter()
            .map(|&s| self.sched.aggregation_time(&self.t1, &self.t2, s))
            .sum();
        let counters = src.counters;
        let compute = outcome.mults as f64 * self.sched.seconds_per_mult / self.speeds[p];
        self.min_alignment = self.min_alignment.min(outcome.alignment());
        if outcome.damping.is_some_and(|d| d.activated) {
            self.damping_activations += 1;
        }
        if self.sched.record_events {
            self.events.push(EventLogEntry {
                time: now,
                party: p,
                kind: EventKind::Start,
                k,
                t: self.clock.t,
                staleness,
            });
        }
        self.in_flight[p] = Some(InFlight {
            start: now,
            comm,
            compute,
            read_t: self.clock.t,
            outcome,
            counters,
        });
        Ok(())
    }

    fn complete(&mut self, p: usize, now: f64) {
        let f = self.in_flight[p].take().expect("completion of a started iteration");
        self.shards[p].w_block = f.outcome.w_new;
        self.clock.tick(p);
        self.counters.add(&f.counters);
        self.comm_done[p] += f.comm;
        self.compute_done[p] += f.compute;
        self.max_overlap = self.max_overlap.max(self.clock.t - f.read_t - 1);
        if self.sched.record_events {
            self.events.push(EventLogEntry {
                time: now,
                party: p,
                kind: EventKind::Complete,
                k: self.clock.per_party_k[p],
                t: self.clock.t,
                staleness: 0,
            });
        }
    }
}

/// Trains until the iteration budget is spent or the target objective is
/// reached, whichever comes first.
pub fn run(shards: &[PartyShard], cfg: &AlgoConfig, sched: &SchedulerConfig) -> Result<TrainRun> {
    let n = check_consistent(shards)?;
    let q = shards.len();
    if shards.iter().enumerate().any(|(i, s)| s.party_id != i) {
        return Err(Error::InvalidConfig("shards must be ordered by party id".into()));
    }
    cfg.validate(n)?;
    sched.validate(q)?;
    let t1 = build_tree(q, sched.seed)?;
    let t2 = distinct_tree(&t1, sched.seed).tree;
    let budget = cfg.iteration_budget(n, q);
    let eval_every = cfg.eval_interval(n);

    let mut sim = Sim {
        cfg,
        sched,
        shards: shards.to_vec(),
        states: (0..q).map(|p| PartyState::new(p, cfg)).collect::<Result<_>>()?,
        clock: GlobalClock::new(q),
        t1,
        t2,
        speeds: sched.speeds_for(q),
        tau: sched.effective_tau(),
        in_flight: (0..q).map(|_| None).collect(),
        waiting: vec![false; q],
        counters: CostCounters::new(q),
        comm_done: vec![0.0; q],
        compute_done: vec![0.0; q],
        records: Vec::new(),
        events: Vec::new(),
        max_staleness: 0,
        max_overlap: 0,
        min_alignment: f64::INFINITY,
        damping_activations: 0,
    };
    sim.record(0.0)?;
    let target_hit = |r: &RunRecord| cfg.target_objective.is_some_and(|f| r.objective <= f);
    let mut reached_target = target_hit(sim.last_record());
    let mut now = 0.0;
    let mut queue = EventQueue::new();
    if budget > 0 && !reached_target {
        for p in 0..q {
            queue.push(0.0, p, EventKind::Start);
        }
    }
    while let Some(ev) = queue.virtual_time_advance() {
        now = ev.time;
        let p = ev.party;
        match ev.kind {
            EventKind::Start => {
                if sim.in_flight[p].is_some() {
                    continue;
                }
                if !sim.may_start(p) {
                    sim.waiting[p] = true;
                    continue;
                }
                sim.waiting[p] = false;
                sim.start(p, now)?;
                let f = sim.in_flight[p].as_ref().expect("just started");
                queue.push(now + f.comm + f.compute, p, EventKind::Complete);
            }
            EventKind::Complete => {
                sim.complete(p, now);
                let t = sim.clock.t;
                if t % eval_every == 0 || t >= budget {
                    sim.record(now)?;
                    reached_target = target_hit(sim.last_record());
                }
                if t >= budget || reached_target {
                    break;
                }
                queue.push(now, p, EventKind::Start);
                for j in 0..q {
                    if sim.waiting[j] {
                        sim.waiting[j] = false;
                        queue.push(now, j, EventKind::Start);
                    }
                }
            }
        }
    }
    if sim.clock.t < budget && !reached_target {
        return Err(Error::InvalidConfig(format!(
            "scheduler stalled after {} of {budget} iterations",
            sim.clock.t
        )));
    }
    if sim.last_record().t != sim.clock.t {
        sim.record(now)?;
    }
    let busy_comm: Vec<f64> = (0..q)
        .map(|p| {
            sim.comm_done[p]
                + sim.in_flight[p]
                    .as_ref()
                    .map_or(0.0, |f| (now - f.start).clamp(0.0, f.comm))
        })
        .collect();
    Ok(TrainRun {
        records: sim.records,
        shards: sim.shards,
        clock: sim.clock,
        counters: sim.counters,
        max_staleness: sim.max_staleness,
        max_overlap: sim.max_overlap,
        busy_compute: sim.compute_done,
        busy_comm,
        final_time: now,
        reached_target,
        min_alignment: sim.min_alignment,
        damping_activations: sim.damping_activations,
        events: sim.events,
    })
}

impl Sim<'_> {
    fn last_record(&self) -> &RunRecord {
        self.records.last().expect("initial record")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::algorithms::Curvature;
    use crate::matrix::FeatureMatrix;
    use crate::partition::{vertical_split, ColumnOrder, Dataset};
    use rand::{Rng, SeedableRng};

    fn data(n: usize, d: usize) -> Dataset {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|i| if x[i * d] + 0.3 * x[i * d + 1] > 0.0 { 1.0 } else { -1.0 }).collect();
        Dataset::new(FeatureMatrix::from_dense(n, d, x).unwrap(), y).unwrap()
    }

    #[test]
    fn objective_decreases() {
        let shards = vertical_split(&data(60, 6), 3, ColumnOrder::Natural).unwrap();
        let cfg = AlgoConfig {
            step_size: 0.2,
            ..Default::default()
        };
        let run = run(&shards, &cfg, &SchedulerConfig::default()).unwrap();
        assert!((run.records[0].objective - core::f64::consts::LN_2).abs() < 1e-15);
        assert!(run.last().objective < run.records[0].objective);
        assert_eq!(run.clock.t, 21 * 60);
        assert_eq!(run.clock.t, run.clock.per_party_k.iter().sum::<usize>());
    }

    #[test]
    fn sync_fast_party_idles() {
        let shards = vertical_split(&data(40, 4), 2, ColumnOrder::Natural).unwrap();
        let cfg = AlgoConfig {
            curvature: Curvature::Identity,
            max_iterations: Some(200),
            ..Default::default()
        };
        let sched = SchedulerConfig {
            mode: Mode::Sync,
            speeds: vec![1.0, 0.35],
            latency: LatencyModel {
                alpha_lat: 0.0,
                beta_bw: 0.0,
            },
            ..Default::default()
        };
        let run = run(&shards, &cfg, &sched).unwrap();
        assert!((run.utilization(0) - 0.35).abs() < 1e-9, "{}", run.utilization(0));
        assert!((run.utilization(1) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn counters_follow_batches() {
        let shards = vertical_split(&data(36, 6), 3, ColumnOrder::Natural).unwrap();
        let cfg = AlgoConfig {
            max_iterations: Some(30),
            ..Default::default()
        };
        let run = run(&shards, &cfg, &SchedulerConfig::default()).unwrap();
        assert_eq!(run.counters.comm_rounds, 30 * 6);
        assert_eq!(run.counters.messages, 30 * 6 * 4);
        assert_eq!(run.counters.sent.iter().sum::<u64>(), run.counters.messages);
    }
}
