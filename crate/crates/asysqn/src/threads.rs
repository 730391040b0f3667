//! Best-effort execution on OS threads, one per party.
//!
//! Peers' blocks are read under a lock at aggregation time and each party
//! publishes its block after every step. The interleaving is whatever the
//! OS produces, so runs are not reproducible and no staleness bound is
//! enforced. Times in the records are measured wall-clock seconds.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::Instant;

use asysqn_core::aggregation::{aggregate_batch, build_tree, distinct_tree, MaskMode, TreeTopology};
use asysqn_core::algorithms::{own_components, party_iteration, AlgoConfig, CostCounters, PartyState, PredictorSource};
use asysqn_core::objective::full_objective;
use asysqn_core::partition::{check_consistent, PartyShard};
use asysqn_core::rng::{stream, STREAM_MASK};
use asysqn_core::runtime::{GlobalClock, RunRecord, SchedulerConfig, TrainRun};
use asysqn_core::{Error, Result};
use rand_chacha::ChaCha8Rng;

struct Shared<'a> {
    shards: &'a [PartyShard],
    blocks: Vec<RwLock<Vec<f64>>>,
    t1: TreeTopology,
    t2: TreeTopology,
    mask_mode: MaskMode,
}

impl Shared<'_> {
    fn snapshot(&self) -> Vec<PartyShard> {
        self.shards
            .iter()
            .zip(&self.blocks)
            .map(|(s, b)| PartyShard {
                w_block: b.read().expect("block lock").clone(),
                ..s.clone()
            })
            .collect()
    }
}

struct LockedSource<'a, 'b> {
    shared: &'a Shared<'b>,
    rng: ChaCha8Rng,
    counters: CostCounters,
    comm_seconds: f64,
}

impl PredictorSource for LockedSource<'_, '_> {
    fn predictors(&mut self, own: &PartyShard, own_w: &[f64], samples: &[usize]) -> Result<Vec<f64>> {
        let started = Instant::now();
        let components = self
            .shared
            .shards
            .iter()
            .zip(&self.shared.blocks)
            .map(|(s, b)| {
                if s.party_id == own.party_id {
                    own_components(own, own_w, samples)
                } else {
                    own_components(s, &b.read().expect("block lock"), samples)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let agg = aggregate_batch(&components, &self.shared.t1, &self.shared.t2, self.shared.mask_mode, &mut self.rng)?;
        self.counters.charge(samples.len() as u64, &self.shared.t1, &self.shared.t2);
        self.comm_seconds += started.elapsed().as_secs_f64();
        Ok(agg.theta)
    }
}

/// Same inputs and outputs as the simulator's `run`; `sim_comm_time` is the
/// mean time parties spent inside aggregation.
pub fn run_threaded(shards: &[PartyShard], cfg: &AlgoConfig, sched: &SchedulerConfig) -> Result<TrainRun> {
    let n = check_consistent(shards)?;
    let q = shards.len();
    cfg.validate(n)?;
    sched.validate(q)?;
    let t1 = build_tree(q, sched.seed)?;
    let t2 = distinct_tree(&t1, sched.seed).tree;
    let shared = Shared {
        shards,
        blocks: shards.iter().map(|s| RwLock::new(s.w_block.clone())).collect(),
        t1,
        t2,
        mask_mode: sched.mask_mode,
    };
    let budget = cfg.iteration_budget(n, q);
    let eval_every = cfg.eval_interval(n).max(1);
    let t = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let clocks: Vec<AtomicUsize> = (0..q).map(|_| AtomicUsize::new(0)).collect();
    let records = Mutex::new(Vec::new());
    let comm = Mutex::new(vec![0.0; q]);
    let counters = Mutex::new(CostCounters::new(q));
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let start = Instant::now();

    let record = |t_now: usize| -> Result<bool> {
        let snap = shared.snapshot();
        let objective = full_objective(&snap, cfg.lambda)?;
        let c = counters.lock().expect("counter lock").clone();
        let elapsed = start.elapsed().as_secs_f64();
        let mean_comm = comm.lock().expect("comm lock").iter().sum::<f64>() / q as f64;
        records.lock().expect("record lock").push(RunRecord {
            t: t_now,
            comm_rounds: c.comm_rounds,
            messages: c.messages,
            bytes: c.bytes,
            sim_comm_time: mean_comm,
            sim_compute_time: (elapsed - mean_comm).max(0.0),
            virtual_time: elapsed,
            objective,
        });
        if !objective.is_finite() {
            return Err(Error::NonFinite("objective"));
        }
        Ok(cfg.target_objective.is_some_and(|f| objective <= f))
    };
    if record(0)? {
        stop.store(true, Ordering::SeqCst);
    }

    let final_shards: Vec<PartyShard> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..q)
            .map(|p| {
                let (shared, t, stop, clocks, comm, counters, failure, record) =
                    (&shared, &t, &stop, &clocks, &comm, &counters, &failure, &record);
                scope.spawn(move || {
                    let mut shard = shared.shards[p].clone();
                    let mut state = match PartyState::new(p, cfg) {
                        Ok(s) => s,
                        Err(e) => {
                            *failure.lock().expect("failure lock") = Some(e);
                            stop.store(true, Ordering::SeqCst);
                            return shard;
                        }
                    };
                    while !stop.load(Ordering::SeqCst) {
                        let k = clocks[p].load(Ordering::SeqCst);
                        let mut src = LockedSource {
                            shared,
                            rng: stream(sched.seed, STREAM_MASK, &[p as u64, k as u64]),
                            counters: CostCounters::new(q),
                            comm_seconds: 0.0,
                        };
                        let out = match party_iteration(&mut state, &shard, cfg, &mut src) {
                            Ok(o) => o,
                            Err(e) => {
                                *failure.lock().expect("failure lock") = Some(e);
                                stop.store(true, Ordering::SeqCst);
                                break;
                            }
                        };
                        shard.w_block.clone_from(&out.w_new);
                        shared.blocks[p].write().expect("block lock").clone_from(&out.w_new);
                        counters.lock().expect("counter lock").add(&src.counters);
                        comm.lock().expect("comm lock")[p] += src.comm_seconds;
                        clocks[p].fetch_add(1, Ordering::SeqCst);
                        let t_now = t.fetch_add(1, Ordering::SeqCst) + 1;
                        if t_now >= budget {
                            stop.store(true, Ordering::SeqCst);
                        }
                        if t_now % eval_every == 0 && t_now < budget {
                            match record(t_now) {
                                Ok(true) => stop.store(true, Ordering::SeqCst),
                                Ok(false) => {}
                                Err(e) => {
                                    *failure.lock().expect("failure lock") = Some(e);
                                    stop.store(true, Ordering::SeqCst);
                                }
                            }
                        }
                    }
                    shard
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("party thread panicked")).collect()
    });
    if let Some(e) = failure.into_inner().expect("failure lock") {
        return Err(e);
    }
    let t_final = t.load(Ordering::SeqCst);
    let reached_target = record(t_final)?;
    let mut records = records.into_inner().expect("record lock");
    records.sort_by_key(|r| r.t);
    let final_time = start.elapsed().as_secs_f64();
    let busy_comm = comm.into_inner().expect("comm lock");
    let per_party_k: Vec<usize> = clocks.iter().map(|c| c.load(Ordering::SeqCst)).collect();
    Ok(TrainRun {
        records,
        shards: final_shards,
        clock: GlobalClock { t: t_final, per_party_k },
        counters: counters.into_inner().expect("counter lock"),
        max_staleness: 0,
        max_overlap: 0,
        busy_compute: busy_comm.iter().map(|c| (final_time - c).max(0.0)).collect(),
        busy_comm,
        final_time,
        reached_target,
        min_alignment: f64::NAN,
        damping_activations: 0,
        events: Vec::new(),
    })
}
