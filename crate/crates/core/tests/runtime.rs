use asysqn_core::algorithms::*;
use asysqn_core::partition::*;
use asysqn_core::runtime::*;
use asysqn_core::synthetic::logistic_gaussian;
use proptest::prelude::*;

fn shards(q: usize) -> Vec<PartyShard> {
    let ds = logistic_gaussian(120, 16, 4).unwrap();
    vertical_split(&ds, q, ColumnOrder::Natural).unwrap()
}

fn cfg(method: Method, curvature: Curvature) -> AlgoConfig {
    AlgoConfig {
        method,
        curvature,
        step_size: 0.1,
        lambda: 1e-2,
        delta: 0.1,
        paired_curvature: true,
        max_iterations: Some(600),
        eval_every: Some(40),
        ..Default::default()
    }
}

#[test]
fn repeated_runs_are_identical() {
    for mode in [Mode::Async, Mode::Sync] {
        for method in [Method::Sgd, Method::Svrg, Method::Saga] {
            let sched = SchedulerConfig { mode, seed: 3, record_events: true, ..Default::default() };
            let a = run(&shards(4), &cfg(method, Curvature::SdLbfgs), &sched).unwrap();
            let b = run(&shards(4), &cfg(method, Curvature::SdLbfgs), &sched).unwrap();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn single_party_async_is_sync_bit_for_bit() {
    for method in [Method::Sgd, Method::Svrg, Method::Saga] {
        let c = cfg(method, Curvature::SdLbfgs);
        let a = run(&shards(1), &c, &SchedulerConfig { mode: Mode::Async, ..Default::default() }).unwrap();
        let s = run(&shards(1), &c, &SchedulerConfig { mode: Mode::Sync, ..Default::default() }).unwrap();
        assert_eq!(a.records, s.records);
        assert_eq!(a.shards, s.shards);
    }
}

#[test]
fn sync_identity_run_tracks_the_single_party_run() {
    // with identity curvature every party of a synchronous round reads the
    // same snapshot, so q rounds of block updates are one full-vector step
    for method in [Method::Sgd, Method::Svrg, Method::Saga] {
        let c = AlgoConfig { max_iterations: Some(150), eval_every: Some(1), ..cfg(method, Curvature::Identity) };
        let one = run(&shards(1), &c, &SchedulerConfig { mode: Mode::Sync, ..Default::default() }).unwrap();
        let c4 = AlgoConfig { max_iterations: Some(600), eval_every: Some(4), ..c.clone() };
        let four = run(&shards(4), &c4, &SchedulerConfig { mode: Mode::Sync, speeds: vec![1.0; 4], ..Default::default() }).unwrap();
        assert_eq!(one.records.len(), four.records.len());
        for (a, b) in one.records.iter().zip(&four.records) {
            assert!((a.objective - b.objective).abs() < 1e-10, "{method}: {} vs {}", a.objective, b.objective);
        }
    }
}

#[test]
fn counters_are_conserved() {
    for q in [2usize, 3, 5, 8] {
        let r = run(&shards(q), &cfg(Method::Svrg, Curvature::SdLbfgs), &SchedulerConfig::default()).unwrap();
        let c = &r.counters;
        assert_eq!(c.messages, 2 * (q as u64 - 1) * c.comm_rounds);
        assert_eq!(c.bytes, 8 * c.messages);
        assert_eq!(c.sent.iter().sum::<u64>(), c.messages);
        assert_eq!(r.clock.per_party_k.iter().sum::<usize>(), r.clock.t);
        let last = r.last();
        assert!((last.sim_comm_time + last.sim_compute_time - last.virtual_time).abs() < 1e-12);
        for w in r.records.windows(2) {
            assert!(w[0].comm_rounds <= w[1].comm_rounds && w[0].virtual_time <= w[1].virtual_time);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn staleness_never_exceeds_the_bound(tau in 0usize..=16, q in 2usize..=6, seed in 0u64..100, slow in 0.05..1.0f64) {
        let mut speeds = vec![1.0; q];
        speeds[0] = slow;
        let sched = SchedulerConfig { tau_bound: Some(tau), seed, speeds, record_events: true, ..Default::default() };
        let c = AlgoConfig { max_iterations: Some(400), seed, ..cfg(Method::Sgd, Curvature::Identity) };
        let r = run(&shards(q), &c, &sched).unwrap();
        prop_assert!(r.max_staleness <= tau);
        for e in r.events.iter().filter(|e| e.kind == EventKind::Start) {
            prop_assert!(e.staleness <= tau);
        }
        let starts = r.events.iter().filter(|e| e.kind == EventKind::Start).count();
        let completes = r.events.iter().filter(|e| e.kind == EventKind::Complete).count();
        prop_assert_eq!(completes, r.clock.t);
        prop_assert!(starts >= completes);
        for w in r.events.windows(2) {
            prop_assert!(w[0].time <= w[1].time);
        }
    }

    #[test]
    fn sync_mode_has_zero_staleness(q in 1usize..=6, seed in 0u64..100) {
        let sched = SchedulerConfig { mode: Mode::Sync, seed, ..Default::default() };
        let r = run(&shards(q), &cfg(Method::Saga, Curvature::SdLbfgs), &sched).unwrap();
        prop_assert_eq!(r.max_staleness, 0);
        prop_assert!(r.min_alignment > 0.0);
    }
}

#[test]
fn variance_reduced_methods_converge_linearly() {
    let ds = logistic_gaussian(500, 40, 7).unwrap();
    let lambda = 1e-2;
    let f_star = reference_solve(&ds, lambda, 1e-10, ReferenceMethod::Lbfgs).unwrap().f_star;
    for method in [Method::Svrg, Method::Saga] {
        let c = AlgoConfig {
            method,
            step_size: 0.1,
            lambda,
            delta: 0.1,
            paired_curvature: true,
            eval_every: Some(20),
            max_iterations: Some(20_000),
            target_objective: Some(f_star + 1e-9),
            ..Default::default()
        };
        let r = run(&vertical_split(&ds, 4, ColumnOrder::Natural).unwrap(), &c, &SchedulerConfig::default()).unwrap();
        assert!(r.reached_target, "{method}");
    }
}
