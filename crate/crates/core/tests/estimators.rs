use asysqn_core::algorithms::*;
use asysqn_core::objective::*;
use asysqn_core::partition::*;
use asysqn_core::synthetic::logistic_gaussian;
use asysqn_core::Result;
use proptest::prelude::*;

/// Exact, unmasked predictors from a fixed set of peer blocks.
struct Exact<'a>(&'a [PartyShard]);

impl PredictorSource for Exact<'_> {
    fn predictors(&mut self, own: &PartyShard, own_w: &[f64], samples: &[usize]) -> Result<Vec<f64>> {
        let table = component_table(self.0, own, own_w, samples)?;
        Ok((0..samples.len()).map(|k| table.iter().map(|c| c[k]).sum()).collect())
    }
}

fn perturbed(ds: &asysqn_core::partition::Dataset, q: usize, scale: f64) -> Vec<PartyShard> {
    let mut shards = vertical_split(ds, q, ColumnOrder::Natural).unwrap();
    let w: Vec<f64> = (0..ds.d()).map(|j| scale * ((j as f64 * 0.37).sin())).collect();
    scatter_weights(&mut shards, &w);
    shards
}

/// Local iteration whose single-sample batch is `[i]`.
fn k_for(seed: u64, i: usize, n: usize) -> usize {
    (0..).find(|&k| batch_indices(seed, k, 1, n) == [i]).unwrap()
}

fn estimator_at(shards: &[PartyShard], state: &PartyState, cfg: &AlgoConfig, k: usize) -> Vec<f64> {
    let mut st = state.clone();
    st.k = k;
    party_iteration(&mut st, &shards[0], cfg, &mut Exact(shards)).unwrap().estimator
}

fn prepared(method: Method, shards: &[PartyShard], anchor_w: &[f64], cfg: &AlgoConfig) -> PartyState {
    let mut state = PartyState::new(0, cfg).unwrap();
    let mut at_anchor = shards.to_vec();
    at_anchor[0].w_block = anchor_w.to_vec();
    let theta = predictors(&at_anchor).unwrap();
    match method {
        Method::Svrg => state.anchor = Some(SvrgAnchor::new(&shards[0], anchor_w, theta, cfg.lambda).unwrap()),
        Method::Saga => state.saga = Some(SagaTable::initialize(&shards[0], anchor_w, &theta, cfg.lambda).unwrap()),
        Method::Sgd => {}
    }
    state
}

#[test]
fn single_sample_estimators_average_to_the_full_gradient() {
    let ds = logistic_gaussian(20, 6, 1).unwrap();
    let shards = perturbed(&ds, 2, 0.4);
    let lambda = 1e-2;
    let full = full_block_gradient(&shards[0], &predictors(&shards).unwrap(), lambda).unwrap();
    let anchor_w: Vec<f64> = shards[0].w_block.iter().map(|x| x - 0.3).collect();
    for method in [Method::Sgd, Method::Svrg, Method::Saga] {
        let cfg = AlgoConfig {
            method,
            curvature: Curvature::Identity,
            batch: Some(1),
            lambda,
            epoch_length: Some(usize::MAX),
            ..Default::default()
        };
        let state = prepared(method, &shards, &anchor_w, &cfg);
        let mut mean = vec![0.0; full.len()];
        for i in 0..20 {
            let v = estimator_at(&shards, &state, &cfg, k_for(cfg.seed, i, 20));
            mean.iter_mut().zip(&v).for_each(|(m, x)| *m += x / 20.0);
        }
        for (a, b) in mean.iter().zip(&full) {
            assert!((a - b).abs() < 1e-10, "{method}: {a} vs {b}");
        }
    }
}

#[test]
fn variance_reduction_near_the_optimum() {
    let ds = logistic_gaussian(200, 10, 2).unwrap();
    let lambda = 1e-2;
    let sol = reference_solve(&ds, lambda, 1e-10, ReferenceMethod::Lbfgs).unwrap();
    let near: Vec<f64> = sol.w.iter().map(|x| x + 0.01).collect();
    let mut shards = vertical_split(&ds, 2, ColumnOrder::Natural).unwrap();
    scatter_weights(&mut shards, &near);
    let anchor_w: Vec<f64> = shards[0].w_block.iter().map(|x| x - 0.005).collect();
    let variance = |method: Method| {
        let cfg = AlgoConfig {
            method,
            curvature: Curvature::Identity,
            batch: Some(1),
            lambda,
            epoch_length: Some(usize::MAX),
            seed: 77,
            ..Default::default()
        };
        let state = prepared(method, &shards, &anchor_w, &cfg);
        let draws: Vec<Vec<f64>> = (0..10_000).map(|k| estimator_at(&shards, &state, &cfg, k)).collect();
        let dim = draws[0].len();
        let mean: Vec<f64> = (0..dim).map(|j| draws.iter().map(|v| v[j]).sum::<f64>() / draws.len() as f64).collect();
        draws
            .iter()
            .map(|v| v.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
            .sum::<f64>()
            / draws.len() as f64
    };
    let sgd = variance(Method::Sgd);
    let svrg = variance(Method::Svrg);
    let saga = variance(Method::Saga);
    assert!(svrg < sgd && saga < sgd, "sgd {sgd} svrg {svrg} saga {saga}");
}

#[test]
fn reference_methods_agree() {
    let ds = logistic_gaussian(150, 8, 5).unwrap();
    let lambda = 1e-2;
    let a = reference_solve(&ds, lambda, 1e-10, ReferenceMethod::Lbfgs).unwrap();
    // f - f* <= |g|^2 / (2 lambda), so 1e-6 is already below 1e-10 in f
    let b = reference_solve(&ds, lambda, 1e-6, ReferenceMethod::GradientDescent).unwrap();
    let c = reference_solve(&ds, lambda, 1e-9, ReferenceMethod::Svrg).unwrap();
    assert!((a.f_star - b.f_star).abs() < 1e-10, "{} {}", a.f_star, b.f_star);
    assert!((a.f_star - c.f_star).abs() < 1e-10, "{} {}", a.f_star, c.f_star);
    let g = centralized_gradient(&ds, &a.w, lambda).unwrap();
    assert!(g.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e-8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn block_gradients_match_finite_differences(seed in 0u64..1000, q in 1usize..=4, bsize in 1usize..=8) {
        let ds = logistic_gaussian(50, 20, seed).unwrap();
        let lambda = 1e-2;
        let shards = perturbed(&ds, q, 0.5);
        let batch = batch_indices(seed, 0, bsize, 50);
        let sub = ds.select_rows(&batch).unwrap();
        let w = gather_weights(&shards);
        let theta = predictors(&shards).unwrap();
        let mut offset = 0;
        for s in &shards {
            let tb: Vec<f64> = batch.iter().map(|&i| theta[i]).collect();
            let g = block_gradient(s, &s.w_block, &batch, &tb, lambda).unwrap();
            for (j, &col) in s.columns.iter().enumerate() {
                let h = 1e-5;
                let mut wp = w.clone();
                wp[col] += h;
                let mut wm = w.clone();
                wm[col] -= h;
                let fd = (centralized_objective(&sub, &wp, lambda).unwrap() - centralized_objective(&sub, &wm, lambda).unwrap()) / (2.0 * h);
                prop_assert!((g[j] - fd).abs() <= 1e-5 * fd.abs().max(1e-3), "col {col}: {} vs {fd}", g[j]);
            }
            offset += s.dim();
        }
        prop_assert!(offset >= ds.d());
    }

    #[test]
    fn federated_gradient_is_the_centralized_gradient(seed in 0u64..1000, q in 1usize..=6) {
        let ds = logistic_gaussian(40, 13, seed).unwrap();
        let shards = perturbed(&ds, q, 0.3);
        let theta = predictors(&shards).unwrap();
        let central = centralized_gradient(&ds, &gather_weights(&shards), 1e-3).unwrap();
        for s in &shards {
            let g = full_block_gradient(s, &theta, 1e-3).unwrap();
            for (j, &col) in s.columns.iter().enumerate() {
                prop_assert!((g[j] - central[col]).abs() < 1e-14);
            }
        }
        let f = full_objective(&shards, 1e-3).unwrap();
        prop_assert!((f - centralized_objective(&ds, &gather_weights(&shards), 1e-3).unwrap()).abs() < 1e-14);
    }
}
