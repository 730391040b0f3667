//! Per-party optimizer steps: SGD, SVRG and SAGA estimators, each with
//! either damped L-BFGS or identity curvature.
//!
//! A party never touches a peer's block. Everything it learns about the
//! rest of the model arrives as aggregated predictors through a
//! [`PredictorSource`], which the simulator, the threaded runner and the
//! standalone step functions below implement in different ways.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::aggregation::{aggregate_batch, messages_per_scalar, MaskMode, TreeTopology, SCALAR_BYTES};
use crate::linalg::{self, axpy, dot};
use crate::objective::{self, block_gradient, block_gradient_into, loss_derivative_unchecked};
use crate::partition::{Dataset, PartyShard};
use crate::sdlbfgs::{CurvatureMemory, DampingReport, DEFAULT_DELTA, DEFAULT_MEMORY};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Method {
    #[default]
    Sgd,
    Svrg,
    Saga,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Curvature {
    #[default]
    SdLbfgs,
    Identity,
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Method::Sgd),
            "svrg" => Ok(Method::Svrg),
            "saga" => Ok(Method::Saga),
            _ => Err(Error::InvalidConfig(format!("unknown method `{s}` (sgd, svrg, saga)"))),
        }
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Method::Sgd => "sgd",
            Method::Svrg => "svrg",
            Method::Saga => "saga",
        })
    }
}

impl core::str::FromStr for Curvature {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sdlbfgs" => Ok(Curvature::SdLbfgs),
            "identity" => Ok(Curvature::Identity),
            _ => Err(Error::InvalidConfig(format!("unknown curvature `{s}` (sdlbfgs, identity)"))),
        }
    }
}

impl core::fmt::Display for Curvature {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(match self {
            Curvature::SdLbfgs => "sdlbfgs",
            Curvature::Identity => "identity",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlgoConfig {
    pub method: Method,
    pub curvature: Curvature,
    pub step_size: f64,
    /// Mini-batch size; `None` means `ceil(sqrt(n))`.
    pub batch: Option<usize>,
    pub lambda: f64,
    pub memory: usize,
    pub delta: f64,
    /// SVRG inner steps per party between anchor refreshes; `None` means
    /// `ceil(n / b)`.
    pub epoch_length: Option<usize>,
    /// SVRG outer loops; when set the run stops once every party finished
    /// this many epochs.
    pub epochs: Option<usize>,
    /// Total block updates over all parties; `None` means `21 n`.
    pub max_iterations: Option<usize>,
    /// Stop as soon as a recorded objective is at or below this value.
    pub target_objective: Option<f64>,
    /// Record the objective every this many global iterations; `None`
    /// means `n`.
    pub eval_every: Option<usize>,
    pub seed: u64,
    /// Build curvature pairs from two gradients on the same batch instead of
    /// consecutive estimators.
    pub paired_curvature: bool,
    /// Hold every party at each SVRG epoch boundary until all parties reach
    /// it.
    pub anchor_barrier: bool,
}

impl Default for AlgoConfig {
    fn default() -> Self {
        AlgoConfig {
            method: Method::Sgd,
            curvature: Curvature::SdLbfgs,
            step_size: 0.05,
            batch: None,
            lambda: 1e-4,
            memory: DEFAULT_MEMORY,
            delta: DEFAULT_DELTA,
            epoch_length: None,
            epochs: None,
            max_iterations: None,
            target_objective: None,
            eval_every: None,
            seed: 0,
            paired_curvature: false,
            anchor_barrier: false,
        }
    }
}

/// `ceil(sqrt(n))`, at least 1.
pub fn default_batch(n: usize) -> usize {
    let mut b = libm::sqrt(n as f64) as usize;
    while b * b < n {
        b += 1;
    }
    while b > 1 && (b - 1) * (b - 1) >= n {
        b -= 1;
    }
    b.max(1)
}

impl AlgoConfig {
    pub fn batch_size(&self, n: usize) -> usize {
        self.batch.unwrap_or_else(|| default_batch(n))
    }

    pub fn epoch_len(&self, n: usize) -> usize {
        self.epoch_length
            .unwrap_or_else(|| n.div_ceil(self.batch_size(n)))
            .max(1)
    }

    pub fn iteration_budget(&self, n: usize, q: usize) -> usize {
        let budget = self.max_iterations.unwrap_or(21 * n);
        match (self.method, self.epochs) {
            (Method::Svrg, Some(s)) => budget.min(s * self.epoch_len(n) * q),
            _ => budget,
        }
    }

    pub fn eval_interval(&self, n: usize) -> usize {
        self.eval_every.unwrap_or(n).max(1)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::InvalidConfig(format!("step size must be positive, got {}", self.step_size)));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let b = self.batch_size(n);
        if b == 0 || b > n {
            return Err(Error::InvalidConfig(format!("batch size {b} outside 1..={n}")));
        }
        if self.memory == 0 {
            return Err(Error::InvalidConfig("memory size must be positive".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::InvalidConfig("delta must be positive".into()));
        }
        if self.epochs == Some(0) {
            return Err(Error::InvalidConfig("svrg needs at least one epoch".into()));
        }
        if self.epoch_length == Some(0) {
            return Err(Error::InvalidConfig("epoch length must be positive".into()));
        }
        if self.eval_every == Some(0) {
            return Err(Error::InvalidConfig("eval interval must be positive".into()));
        }
        Ok(())
    }
}

/// The mini-batch for local iteration `k`: `b` indices drawn uniformly with
/// replacement. Every party uses the same batch at the same local iteration.
pub fn batch_indices(seed: u64, k: usize, b: usize, n: usize) -> Vec<usize> {
    let mut rng = crate::rng::stream(seed, crate::rng::STREAM_BATCH, &[k as u64]);
    (0..b).map(|_| rng.gen_range(0..n)).collect()
}

/// Source of aggregated predictors for one requesting party.
pub trait PredictorSource {
    /// Full predictors `theta_i` for `samples`, with the requester's own
    /// component computed from `own_w` and every peer's from the peer's
    /// current block.
    fn predictors(&mut self, own: &PartyShard, own_w: &[f64], samples: &[usize]) -> Result<Vec<f64>>;
}

/// Communication counters accumulated by aggregation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostCounters {
    /// Aggregated scalars (one masked two-tree aggregation each).
    pub comm_rounds: u64,
    pub messages: u64,
    pub bytes: u64,
    /// Messages sent by each party.
    pub sent: Vec<u64>,
}

impl CostCounters {
    pub fn new(q: usize) -> Self {
        CostCounters {
            sent: vec![0; q],
            ..Default::default()
        }
    }

    /// Accounts for aggregating `scalars` predictors over `t1` and `t2`.
    pub fn charge(&mut self, scalars: u64, t1: &TreeTopology, t2: &TreeTopology) {
        let q = t1.q();
        self.comm_rounds += scalars;
        self.messages += messages_per_scalar(q) * scalars;
        self.bytes += messages_per_scalar(q) * scalars * SCALAR_BYTES;
        if self.sent.len() < q {
            self.sent.resize(q, 0);
        }
        for u in 0..q {
            let sends = u64::from(t1.parent(u).is_some()) + u64::from(t2.parent(u).is_some());
            self.sent[u] += sends * scalars;
        }
    }

    pub fn add(&mut self, other: &CostCounters) {
        self.comm_rounds += other.comm_rounds;
        self.messages += other.messages;
        self.bytes += other.bytes;
        if self.sent.len() < other.sent.len() {
            self.sent.resize(other.sent.len(), 0);
        }
        for (a, b) in self.sent.iter_mut().zip(&other.sent) {
            *a += b;
        }
    }
}

/// Peer components read directly from a slice of shards (the requester's
/// entry is ignored), aggregated by the two-tree masked protocol.
pub struct ShardSource<'a> {
    pub shards: &'a [PartyShard],
    pub t1: &'a TreeTopology,
    pub t2: &'a TreeTopology,
    pub mask_mode: MaskMode,
    pub rng: ChaCha8Rng,
    pub counters: CostCounters,
    /// Size of every aggregation call, in order.
    pub calls: Vec<u64>,
}

impl<'a> ShardSource<'a> {
    pub fn new(shards: &'a [PartyShard], t1: &'a TreeTopology, t2: &'a TreeTopology, rng: ChaCha8Rng) -> Self {
        ShardSource {
            shards,
            t1,
            t2,
            mask_mode: MaskMode::Uniform,
            rng,
            counters: CostCounters::new(shards.len()),
            calls: Vec::new(),
        }
    }
}

impl PredictorSource for ShardSource<'_> {
    fn predictors(&mut self, own: &PartyShard, own_w: &[f64], samples: &[usize]) -> Result<Vec<f64>> {
        let components = component_table(self.shards, own, own_w, samples)?;
        let agg = aggregate_batch(&components, self.t1, self.t2, self.mask_mode, &mut self.rng)?;
        self.counters.charge(samples.len() as u64, self.t1, self.t2);
        self.calls.push(samples.len() as u64);
        Ok(agg.theta)
    }
}

/// `components[l][k]` = party `l`'s share of the predictor of `samples[k]`.
pub fn component_table(
    shards: &[PartyShard],
    own: &PartyShard,
    own_w: &[f64],
    samples: &[usize],
) -> Result<Vec<Vec<f64>>> {
    shards
        .iter()
        .map(|s| {
            let (shard, w) = if s.party_id == own.party_id {
                (own, own_w)
            } else {
                (s, s.w_block.as_slice())
            };
            own_components(shard, w, samples)
        })
        .collect()
}

/// This party's predictor components for `samples`.
pub fn own_components(shard: &PartyShard, w: &[f64], samples: &[usize]) -> Result<Vec<f64>> {
    if w.len() != shard.dim() {
        return Err(Error::DimensionMismatch {
            expected: shard.dim(),
            got: w.len(),
        });
    }
    let n = shard.n();
    samples
        .iter()
        .map(|&i| {
            if i >= n {
                Err(Error::IndexOutOfRange { index: i, n })
            } else {
                Ok(shard.features.row_dot(i, w))
            }
        })
        .collect()
}

/// Per-sample block gradients `alpha_i` for every sample, stored row-major,
/// with their running mean.
#[derive(Debug, Clone, PartialEq)]
pub struct SagaTable {
    dim: usize,
    alpha: Vec<f64>,
    mean: Vec<f64>,
    since_recompute: usize,
}

impl SagaTable {
    /// Table filled with the per-sample gradients at `w` given all `n`
    /// predictors.
    pub fn initialize(shard: &PartyShard, w: &[f64], all_theta: &[f64], lambda: f64) -> Result<Self> {
        let n = shard.n();
        let dim = shard.dim();
        if all_theta.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: all_theta.len(),
            });
        }
        let mut alpha = vec![0.0; n * dim];
        for i in 0..n {
            sample_gradient_into(shard, w, i, all_theta[i], lambda, &mut alpha[i * dim..(i + 1) * dim]);
        }
        let mut table = SagaTable {
            dim,
            alpha,
            mean: vec![0.0; dim],
            since_recompute: 0,
        };
        table.recompute_mean();
        Ok(table)
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.alpha.len() / self.dim.max(1)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.alpha[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Replaces `alpha_i`, keeping the mean current.
    pub fn replace(&mut self, i: usize, g: &[f64]) {
        let inv_n = 1.0 / self.n() as f64;
        let dim = self.dim;
        let row = &mut self.alpha[i * dim..(i + 1) * dim];
        for ((m, a), &gn) in self.mean.iter_mut().zip(row.iter_mut()).zip(g) {
            *m += (gn - *a) * inv_n;
            *a = gn;
        }
        self.since_recompute += 1;
        if self.since_recompute >= self.n() {
            self.recompute_mean();
        }
    }

    /// Exact mean from the stored rows; clears accumulated drift.
    pub fn recompute_mean(&mut self) {
        let n = self.n();
        self.mean.iter_mut().for_each(|m| *m = 0.0);
        for i in 0..n {
            let row = &self.alpha[i * self.dim..(i + 1) * self.dim];
            for (m, a) in self.mean.iter_mut().zip(row) {
                *m += a;
            }
        }
        let inv_n = 1.0 / n as f64;
        self.mean.iter_mut().for_each(|m| *m *= inv_n);
        self.since_recompute = 0;
    }
}

/// `H(theta_i, y_i) (x_i)_l + lambda * w`.
fn sample_gradient_into(shard: &PartyShard, w: &[f64], i: usize, theta: f64, lambda: f64, out: &mut [f64]) {
    out.iter_mut().zip(w).for_each(|(o, wi)| *o = lambda * wi);
    shard
        .features
        .row_axpy(i, loss_derivative_unchecked(theta, shard.labels[i]), out);
}

/// Anchor of the current SVRG epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrgAnchor {
    pub w: Vec<f64>,
    /// Predictors of every sample at the anchor.
    pub theta: Vec<f64>,
    /// Full block gradient at the anchor.
    pub full_gradient: Vec<f64>,
}

impl SvrgAnchor {
    pub fn new(shard: &PartyShard, w: &[f64], theta: Vec<f64>, lambda: f64) -> Result<Self> {
        let all: Vec<usize> = (0..shard.n()).collect();
        let full_gradient = block_gradient(shard, w, &all, &theta, lambda)?;
        Ok(SvrgAnchor {
            w: w.to_vec(),
            theta,
            full_gradient,
        })
    }
}

/// Everything a party carries between its iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct PartyState {
    pub party_id: usize,
    /// Local iterations started so far.
    pub k: usize,
    memory: Option<CurvatureMemory>,
    /// Block and estimator of the previous iteration.
    prev: Option<(Vec<f64>, Vec<f64>)>,
    pub anchor: Option<SvrgAnchor>,
    /// Inner steps taken since the last anchor refresh.
    pub inner: usize,
    /// Completed SVRG epochs.
    pub epochs: usize,
    pub saga: Option<SagaTable>,
}

impl PartyState {
    pub fn new(party_id: usize, cfg: &AlgoConfig) -> Result<Self> {
        let memory = match cfg.curvature {
            Curvature::SdLbfgs => Some(CurvatureMemory::new(cfg.memory, cfg.delta)?),
            Curvature::Identity => None,
        };
        Ok(PartyState {
            party_id,
            k: 0,
            memory,
            prev: None,
            anchor: None,
            inner: 0,
            epochs: 0,
            saga: None,
        })
    }

    pub fn memory(&self) -> Option<&CurvatureMemory> {
        self.memory.as_ref()
    }

    /// Whether the next iteration begins with a full pass.
    pub fn needs_full_pass(&self, cfg: &AlgoConfig, n: usize) -> bool {
        match cfg.method {
            Method::Sgd => false,
            Method::Svrg => self.anchor.is_none() || self.inner >= cfg.epoch_len(n),
            Method::Saga => self.saga.is_none(),
        }
    }
}

/// Result of one local iteration, not yet applied to the shard.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub w_new: Vec<f64>,
    pub estimator: Vec<f64>,
    pub direction: Vec<f64>,
    /// Predictors aggregated for the mini-batch.
    pub batch_scalars: u64,
    /// Predictors aggregated by a full pass at the start of this iteration.
    pub full_pass_scalars: u64,
    /// Multiply-adds performed locally, for the compute-time model.
    pub mults: u64,
    pub damping: Option<DampingReport>,
}

impl StepOutcome {
    /// `v . d`, positive for a descent direction.
    pub fn alignment(&self) -> f64 {
        dot(&self.estimator, &self.direction)
    }
}

/// One local iteration of party `shard.party_id`: build the estimator at the
/// party's current block and the peers' blocks as `src` exposes them, update
/// curvature, and return the new block.
pub fn party_iteration(
    state: &mut PartyState,
    shard: &PartyShard,
    cfg: &AlgoConfig,
    src: &mut dyn PredictorSource,
) -> Result<StepOutcome> {
    let n = shard.n();
    let dim = shard.dim() as u64;
    let w = shard.w_block.as_slice();
    let b = cfg.batch_size(n);
    let mut mults = 0u64;
    let mut full_pass_scalars = 0u64;

    if state.needs_full_pass(cfg, n) {
        let all: Vec<usize> = (0..n).collect();
        let theta = src.predictors(shard, w, &all)?;
        full_pass_scalars = n as u64;
        mults += 2 * n as u64 * dim;
        match cfg.method {
            Method::Svrg => {
                if state.anchor.is_some() {
                    state.epochs += 1;
                }
                state.anchor = Some(SvrgAnchor::new(shard, w, theta, cfg.lambda)?);
                state.inner = 0;
            }
            Method::Saga => state.saga = Some(SagaTable::initialize(shard, w, &theta, cfg.lambda)?),
            Method::Sgd => unreachable!(),
        }
    }

    let batch = batch_indices(cfg.seed, state.k, b, n);
    let theta = src.predictors(shard, w, &batch)?;
    mults += 2 * b as u64 * dim;

    let mut grad = vec![0.0; shard.dim()];
    block_gradient_into(shard, w, &batch, &theta, cfg.lambda, &mut grad)?;
    let estimator = match cfg.method {
        Method::Sgd => grad.clone(),
        Method::Svrg => {
            let anchor = state.anchor.as_ref().expect("anchor set by full pass");
            let theta_anchor: Vec<f64> = batch.iter().map(|&i| anchor.theta[i]).collect();
            let g_anchor = block_gradient(shard, &anchor.w, &batch, &theta_anchor, cfg.lambda)?;
            mults += b as u64 * dim;
            let mut v = grad.clone();
            axpy(-1.0, &g_anchor, &mut v);
            axpy(1.0, &anchor.full_gradient, &mut v);
            state.inner += 1;
            v
        }
        Method::Saga => {
            let table = state.saga.as_mut().expect("table set by full pass");
            let inv_b = 1.0 / b as f64;
            let mut v = table.mean().to_vec();
            let mut fresh = vec![0.0; shard.dim()];
            let mut updates: Vec<(usize, Vec<f64>)> = Vec::with_capacity(b);
            let mut seen = BTreeSet::new();
            for (&i, &t) in batch.iter().zip(&theta) {
                sample_gradient_into(shard, w, i, t, cfg.lambda, &mut fresh);
                axpy(inv_b, &fresh, &mut v);
                axpy(-inv_b, table.row(i), &mut v);
                if seen.insert(i) {
                    updates.push((i, fresh.clone()));
                }
            }
            for (i, g) in &updates {
                table.replace(*i, g);
            }
            mults += 3 * b as u64 * dim;
            v
        }
    };
    if !linalg::all_finite(&estimator) {
        return Err(Error::NonFinite("gradient estimator"));
    }

    let mut damping = None;
    let direction = match state.memory.as_mut() {
        None => estimator.clone(),
        Some(memory) => {
            let pair = if cfg.paired_curvature {
                match &state.prev {
                    Some((w_prev, _)) => {
                        // same batch, own block moved back; peers' parts unchanged
                        let own_now = own_components(shard, w, &batch)?;
                        let own_then = own_components(shard, w_prev, &batch)?;
                        let theta_then: Vec<f64> = theta
                            .iter()
                            .zip(own_now.iter().zip(&own_then))
                            .map(|(t, (a, b))| t - a + b)
                            .collect();
                        let g_then = block_gradient(shard, w_prev, &batch, &theta_then, cfg.lambda)?;
                        mults += 3 * b as u64 * dim;
                        Some((linalg::sub(w, w_prev), linalg::sub(&grad, &g_then)))
                    }
                    None => None,
                }
            } else {
                state
                    .prev
                    .as_ref()
                    .map(|(w_prev, v_prev)| (linalg::sub(w, w_prev), linalg::sub(&estimator, v_prev)))
            };
            if let Some((s, y)) = pair {
                match memory.update(&s, &y) {
                    Ok(r) => damping = Some(r),
                    Err(Error::DegenerateStep) => {}
                    Err(e) => return Err(e),
                }
                mults += 6 * dim;
            }
            mults += (4 * memory.len() as u64 + 1) * dim;
            memory.direction(&estimator)?
        }
    };
    let mut w_new = w.to_vec();
    axpy(-cfg.step_size, &direction, &mut w_new);
    mults += dim;
    if !linalg::all_finite(&w_new) {
        return Err(Error::NonFinite("model block"));
    }
    if state.memory.is_some() {
        state.prev = Some((w.to_vec(), estimator.clone()));
    }
    state.k += 1;
    Ok(StepOutcome {
        w_new,
        estimator,
        direction,
        batch_scalars: b as u64,
        full_pass_scalars,
        mults,
        damping,
    })
}

fn step_in_place(
    shards: &mut [PartyShard],
    party: usize,
    state: &mut PartyState,
    cfg: &AlgoConfig,
    t1: &TreeTopology,
    t2: &TreeTopology,
    counters: &mut CostCounters,
) -> Result<StepOutcome> {
    if party >= shards.len() {
        return Err(Error::IndexOutOfRange {
            index: party,
            n: shards.len(),
        });
    }
    let rng = crate::rng::stream(cfg.seed, crate::rng::STREAM_MASK, &[party as u64, state.k as u64]);
    let out = {
        let mut src = ShardSource::new(shards, t1, t2, rng);
        let out = party_iteration(state, &shards[party], cfg, &mut src)?;
        counters.add(&src.counters);
        out
    };
    shards[party].w_block.clone_from(&out.w_new);
    Ok(out)
}

/// One AsySQN-SGD step of `party` against the peers' current blocks,
/// applied immediately.
pub fn sgd_party_step(
    shards: &mut [PartyShard],
    party: usize,
    state: &mut PartyState,
    cfg: &AlgoConfig,
    t1: &TreeTopology,
    t2: &TreeTopology,
    counters: &mut CostCounters,
) -> Result<StepOutcome> {
    let cfg = AlgoConfig { method: Method::Sgd, ..cfg.clone() };
    step_in_place(shards, party, state, &cfg, t1, t2, counters)
}

/// One SVRG epoch of `party`: anchor refresh followed by the configured
/// number of inner steps.
pub fn svrg_party_epoch(
    shards: &mut [PartyShard],
    party: usize,
    state: &mut PartyState,
    cfg: &AlgoConfig,
    t1: &TreeTopology,
    t2: &TreeTopology,
    counters: &mut CostCounters,
) -> Result<Vec<StepOutcome>> {
    let cfg = AlgoConfig { method: Method::Svrg, ..cfg.clone() };
    let n = shards.first().map_or(0, |s| s.n());
    if state.anchor.is_some() {
        state.inner = cfg.epoch_len(n);
    }
    (0..cfg.epoch_len(n))
        .map(|_| step_in_place(shards, party, state, &cfg, t1, t2, counters))
        .collect()
}

/// One AsySQN-SAGA step of `party`; the first call fills the table.
pub fn saga_party_step(
    shards: &mut [PartyShard],
    party: usize,
    state: &mut PartyState,
    cfg: &AlgoConfig,
    t1: &TreeTopology,
    t2: &TreeTopology,
    counters: &mut CostCounters,
) -> Result<StepOutcome> {
    let cfg = AlgoConfig { method: Method::Saga, ..cfg.clone() };
    step_in_place(shards, party, state, &cfg, t1, t2, counters)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReferenceMethod {
    /// L-BFGS with Armijo backtracking.
    #[default]
    Lbfgs,
    /// Gradient descent with backtracking.
    GradientDescent,
    /// Single-sample SVRG with a `1 / (4 L_max)` step.
    Svrg,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSolution {
    pub w: Vec<f64>,
    pub f_star: f64,
    pub grad_norm: f64,
    pub iterations: usize,
}

pub const REFERENCE_TOL: f64 = 1e-10;

/// Centralized high-accuracy solve of the unsplit problem, stopping when the
/// full gradient norm drops below `tol`.
pub fn reference_solve(dataset: &Dataset, lambda: f64, tol: f64, method: ReferenceMethod) -> Result<ReferenceSolution> {
    if !(lambda > 0.0) {
        return Err(Error::InvalidConfig("reference solve needs lambda > 0".into()));
    }
    match method {
        ReferenceMethod::Lbfgs => lbfgs_solve(dataset, lambda, tol, 20_000),
        ReferenceMethod::GradientDescent => gd_solve(dataset, lambda, tol, 2_000_000),
        ReferenceMethod::Svrg => svrg_solve(dataset, lambda, tol, 100_000),
    }
}

fn not_converged(iterations: usize, g: &[f64], f: f64) -> Error {
    Error::NotConverged {
        iterations,
        grad_norm: linalg::norm(g),
        objective: f,
    }
}

/// Armijo backtracking along `dir` (a descent direction for `g`).
fn backtrack(dataset: &Dataset, lambda: f64, w: &[f64], f: f64, g: &[f64], dir: &[f64], t0: f64) -> Result<(Vec<f64>, f64)> {
    let slope = dot(g, dir);
    let mut t = t0;
    for _ in 0..80 {
        let mut trial = w.to_vec();
        axpy(-t, dir, &mut trial);
        let ft = objective::centralized_objective(dataset, &trial, lambda)?;
        // rounding slack lets the last steps through once the decrease
        // drops below the resolution of f
        if ft <= f - 1e-4 * t * slope + 8.0 * f64::EPSILON * f.abs() {
            return Ok((trial, ft));
        }
        t *= 0.5;
    }
    Ok((w.to_vec(), f))
}

fn lbfgs_solve(dataset: &Dataset, lambda: f64, tol: f64, cap: usize) -> Result<ReferenceSolution> {
    let d = dataset.d();
    let mut w = vec![0.0; d];
    let mut f = objective::centralized_objective(dataset, &w, lambda)?;
    let mut g = objective::centralized_gradient(dataset, &w, lambda)?;
    let mut pairs: alloc::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();
    for it in 0..cap {
        if linalg::norm(&g) < tol {
            return Ok(ReferenceSolution {
                grad_norm: linalg::norm(&g),
                w,
                f_star: f,
                iterations: it,
            });
        }
        // two-loop on the undamped pairs
        let mut u = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &u);
            axpy(-a, y, &mut u);
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            linalg::scale(dot(s, y) / dot(y, y), &mut u);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let bta = rho * dot(y, &u);
            axpy(a - bta, s, &mut u);
        }
        if dot(&u, &g) <= 0.0 {
            pairs.clear();
            u = g.clone();
        }
        let t0 = if pairs.is_empty() { 1.0 / linalg::norm(&g).max(1.0) } else { 1.0 };
        let (w_new, f_new) = backtrack(dataset, lambda, &w, f, &g, &u, t0)?;
        let g_new = objective::centralized_gradient(dataset, &w_new, lambda)?;
        let s = linalg::sub(&w_new, &w);
        let y = linalg::sub(&g_new, &g);
        let sy = dot(&s, &y);
        if linalg::norm_sq(&s) == 0.0 {
            // no progress possible at double precision
            let gn = linalg::norm(&g_new);
            if gn < tol {
                return Ok(ReferenceSolution {
                    w: w_new,
                    f_star: f_new,
                    grad_norm: gn,
                    iterations: it + 1,
                });
            }
            return Err(not_converged(it + 1, &g_new, f_new));
        }
        if sy > 1e-300 {
            if pairs.len() == 10 {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        w = w_new;
        f = f_new;
        g = g_new;
    }
    Err(not_converged(cap, &g, f))
}

/// `max_i ||x_i||^2 / 4 + lambda`, a smoothness bound for every `f_i`.
fn max_sample_smoothness(dataset: &Dataset, lambda: f64) -> f64 {
    (0..dataset.n())
        .map(|i| dataset.features.row_norm_sq(i))
        .fold(0.0, f64::max)
        / 4.0
        + lambda
}

fn gd_solve(dataset: &Dataset, lambda: f64, tol: f64, cap: usize) -> Result<ReferenceSolution> {
    let mut w = vec![0.0; dataset.d()];
    let mut f = objective::centralized_objective(dataset, &w, lambda)?;
    let mut g = objective::centralized_gradient(dataset, &w, lambda)?;
    let mut t = 1.0 / max_sample_smoothness(dataset, lambda);
    for it in 0..cap {
        let gn = linalg::norm(&g);
        if gn < tol {
            return Ok(ReferenceSolution { w, f_star: f, grad_norm: gn, iterations: it });
        }
        let (w_new, f_new) = backtrack(dataset, lambda, &w, f, &g, &g, 2.0 * t)?;
        let moved = linalg::norm_sq(&linalg::sub(&w_new, &w));
        if moved == 0.0 {
            return Err(not_converged(it, &g, f));
        }
        t = linalg::norm(&linalg::sub(&w_new, &w)) / gn;
        w = w_new;
        f = f_new;
        g = objective::centralized_gradient(dataset, &w, lambda)?;
    }
    Err(not_converged(cap, &g, f))
}

fn svrg_solve(dataset: &Dataset, lambda: f64, tol: f64, max_epochs: usize) -> Result<ReferenceSolution> {
    let n = dataset.n();
    let d = dataset.d();
    let step = 1.0 / (4.0 * max_sample_smoothness(dataset, lambda));
    let mut w = vec![0.0; d];
    let mut rng = crate::rng::stream(0, crate::rng::STREAM_BATCH, &[u64::MAX]);
    let mut last_f = f64::NAN;
    for epoch in 0..max_epochs {
        let anchor = w.clone();
        let mu = objective::centralized_gradient(dataset, &anchor, lambda)?;
        let gn = linalg::norm(&mu);
        last_f = objective::centralized_objective(dataset, &anchor, lambda)?;
        if gn < tol {
            return Ok(ReferenceSolution {
                w: anchor,
                f_star: last_f,
                grad_norm: gn,
                iterations: epoch,
            });
        }
        let anchor_theta: Vec<f64> = (0..n).map(|i| dataset.features.row_dot(i, &anchor)).collect();
        for _ in 0..2 * n {
            let i = rng.gen_range(0..n);
            let y = dataset.labels[i];
            let h_now = loss_derivative_unchecked(dataset.features.row_dot(i, &w), y);
            let h_then = loss_derivative_unchecked(anchor_theta[i], y);
            // v = (h_now - h_then) x_i + lambda (w - anchor) + mu
            let mut v = mu.clone();
            axpy(lambda, &w, &mut v);
            axpy(-lambda, &anchor, &mut v);
            dataset.features.row_axpy(i, h_now - h_then, &mut v);
            axpy(-step, &v, &mut w);
        }
        if !linalg::all_finite(&w) {
            return Err(Error::NonFinite("reference iterate"));
        }
    }
    let g = objective::centralized_gradient(dataset, &w, lambda)?;
    Err(Error::NotConverged {
        iterations: max_epochs,
        grad_norm: linalg::norm(&g),
        objective: last_f,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::build_tree;
    use crate::matrix::FeatureMatrix;
    use crate::partition::{vertical_split, ColumnOrder};

    fn toy() -> Dataset {
        let rows = vec![vec![(0, 1.0), (1, -0.5), (2, 0.25)], vec![(0, -0.3), (2, 2.0), (3, 1.0)]];
        Dataset::new(FeatureMatrix::from_sparse_rows(&rows, 4).unwrap(), vec![1.0, -1.0]).unwrap()
    }

    #[test]
    fn batch_default_is_ceil_sqrt() {
        assert_eq!(default_batch(1), 1);
        assert_eq!(default_batch(3000), 55);
        assert_eq!(default_batch(32561), 181);
        assert_eq!(default_batch(500), 23);
        assert_eq!(default_batch(400), 20);
    }

    #[test]
    fn batches_are_shared_and_in_range() {
        let a = batch_indices(3, 7, 50, 10);
        assert_eq!(a, batch_indices(3, 7, 50, 10));
        assert!(a.iter().all(|&i| i < 10));
        assert_ne!(a, batch_indices(3, 8, 50, 10));
    }

    #[test]
    fn zero_step_leaves_block() {
        let mut shards = vertical_split(&toy(), 2, ColumnOrder::Natural).unwrap();
        shards[0].w_block = vec![0.3, -0.2];
        let cfg = AlgoConfig {
            curvature: Curvature::Identity,
            step_size: 0.0,
            batch: Some(2),
            ..Default::default()
        };
        let t = build_tree(2, 0).unwrap();
        let mut st = PartyState::new(0, &cfg).unwrap();
        let mut c = CostCounters::new(2);
        sgd_party_step(&mut shards, 0, &mut st, &cfg, &t, &t, &mut c).unwrap();
        assert_eq!(shards[0].w_block, vec![0.3, -0.2]);
        assert_eq!(c.comm_rounds, 2);
        assert_eq!(c.messages, 4);
    }

    #[test]
    fn saga_table_mean_tracks_rows() {
        let shards = vertical_split(&toy(), 1, ColumnOrder::Natural).unwrap();
        let w = vec![0.1, 0.2, -0.3, 0.4];
        let theta = objective::predictors(&shards).unwrap();
        let mut table = SagaTable::initialize(&shards[0], &w, &theta, 0.1).unwrap();
        table.replace(1, &[1.0, 2.0, 3.0, 4.0]);
        let expect: Vec<f64> = (0..4).map(|j| (table.row(0)[j] + table.row(1)[j]) / 2.0).collect();
        for (a, b) in table.mean().iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_features_give_zero_optimum() {
        let ds = Dataset::new(FeatureMatrix::zeros(6, 3), vec![1.0, -1.0, 1.0, 1.0, -1.0, -1.0]).unwrap();
        for m in [ReferenceMethod::Lbfgs, ReferenceMethod::GradientDescent, ReferenceMethod::Svrg] {
            let sol = reference_solve(&ds, 0.1, 1e-10, m).unwrap();
            assert!(sol.w.iter().all(|&x| x == 0.0));
            assert!((sol.f_star - core::f64::consts::LN_2).abs() < 1e-15);
        }
    }
}
