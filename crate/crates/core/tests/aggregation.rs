use asysqn_core::aggregation::*;
use asysqn_core::rng::stream;
use proptest::prelude::*;
use rand::Rng;

fn trees(q: usize, seed: u64) -> (TreeTopology, TreeTopology) {
    let t1 = build_tree(q, seed).unwrap();
    let t2 = distinct_tree(&t1, seed).tree;
    (t1, t2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn masked_sum_equals_direct_sum(q in 1usize..=12, seed in any::<u64>(), comps in prop::collection::vec(-50.0..50.0f64, 12)) {
        let (t1, t2) = trees(q, seed);
        let comps = &comps[..q];
        let mut rng = stream(seed, 9, &[]);
        let (theta, tr) = masked_aggregate(comps, &t1, &t2, &mut rng).unwrap();
        let direct: f64 = comps.iter().sum();
        prop_assert!((theta - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        prop_assert_eq!(tr.messages.len() as u64, messages_per_scalar(q));
        prop_assert_eq!(tr.bytes(), 8 * messages_per_scalar(q));
    }

    #[test]
    fn second_tree_avoids_first_tree_edges(q in 3usize..=24, seed in any::<u64>()) {
        let t1 = build_tree(q, seed).unwrap();
        let t2 = distinct_tree(&t1, seed ^ 0x55);
        prop_assert!(!t2.degenerate);
        prop_assert_eq!(t2.tree.q(), q);
        prop_assert_eq!(shared_directed_edges(&t1, &t2.tree), 0);
        prop_assert_eq!(t2.tree.edges().len(), q - 1);
    }

    #[test]
    fn batch_aggregate_counts_messages(q in 1usize..=9, b in 1usize..=20, seed in any::<u64>()) {
        let (t1, t2) = trees(q, seed);
        let mut rng = stream(seed, 3, &[]);
        let comps: Vec<Vec<f64>> = (0..q).map(|_| (0..b).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let agg = aggregate_batch(&comps, &t1, &t2, MaskMode::Uniform, &mut rng).unwrap();
        prop_assert_eq!(agg.messages, 2 * (q as u64 - 1) * b as u64);
        for k in 0..b {
            let direct: f64 = comps.iter().map(|c| c[k]).sum();
            prop_assert!((agg.theta[k] - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn masked_transcripts_pass_the_audit(q in 3usize..=10, seed in any::<u64>()) {
        let (t1, t2) = trees(q, seed);
        let mut rng = stream(seed, 4, &[]);
        let comps: Vec<f64> = (0..q).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let (_, tr) = masked_aggregate(&comps, &t1, &t2, &mut rng).unwrap();
        let report = leakage_audit(&tr, &comps).unwrap();
        prop_assert!(report.passed(), "{report:?}");
        for target in 0..q {
            prop_assert!(!collusion_audit(&tr, target, 4).unwrap().factor_recoverable);
        }
    }
}

#[test]
fn unmasked_transcript_fails_the_audit() {
    let (t1, t2) = trees(6, 11);
    let comps = [0.3, -1.2, 0.8, 2.0, -0.4, 1.1];
    let (theta, tr) = masked_aggregate_with_masks(&comps, &[0.0; 6], &t1, &t2).unwrap();
    assert!((theta - comps.iter().sum::<f64>()).abs() < 1e-12);
    let report = leakage_audit(&tr, &comps).unwrap();
    assert!(!report.masks_nonzero);
    assert!(!report.exposures.is_empty());
    assert!(!report.passed());
}

#[test]
fn full_coalition_learns_the_sum_but_not_the_factors() {
    let (t1, t2) = trees(5, 2);
    let comps = [1.0, 2.0, 3.0, 4.0, 5.0];
    let mut rng = stream(2, 5, &[]);
    let (_, tr) = masked_aggregate(&comps, &t1, &t2, &mut rng).unwrap();
    let r = collusion_audit(&tr, 0, 3).unwrap();
    assert!(r.sum_recoverable);
    assert!(!r.factor_recoverable);
    assert!(collusion_audit(&tr, 0, 1).unwrap().factor_recoverable);
}

#[test]
fn transcript_rows_cover_both_trees() {
    let (t1, t2) = trees(4, 8);
    let mut rng = stream(8, 0, &[]);
    let (_, tr) = masked_aggregate(&[1.0, 2.0, 3.0, 4.0], &t1, &t2, &mut rng).unwrap();
    let rows: Vec<TranscriptRow> = tr.rows(7).collect();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.round == 7 && r.bytes == 8));
    assert_eq!(rows.iter().filter(|r| r.tree == TreeTag::T1).count(), 3);
}
