use asysqn_core::sdlbfgs::*;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn vecs(dim: usize, count: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), count)
}

/// Random (s, y_bar) history with a mix of good, stale and negative pairs.
fn history() -> impl Strategy<Value = (usize, usize, Vec<(Vec<f64>, Vec<f64>)>)> {
    (2usize..=16, 1usize..=10, 1usize..=14).prop_flat_map(|(dim, m, len)| {
        (Just(dim), Just(m), vecs(dim, len), vecs(dim, len), prop::collection::vec(-1.0..2.0f64, len)).prop_map(
            |(dim, m, ss, noise, mix)| {
                let pairs = ss
                    .into_iter()
                    .zip(noise)
                    .zip(mix)
                    .map(|((s, e), a)| {
                        let y: Vec<f64> = s.iter().zip(&e).map(|(si, ei)| a * si + 0.5 * ei).collect();
                        (s, y)
                    })
                    .collect();
                (dim, m, pairs)
            },
        )
    })
}

fn filled(m: usize, delta: f64, pairs: &[(Vec<f64>, Vec<f64>)]) -> CurvatureMemory {
    let mut mem = CurvatureMemory::new(m, delta).unwrap();
    for (s, y) in pairs {
        if s.iter().any(|&x| x != 0.0) {
            mem.update(s, y).unwrap();
        }
    }
    mem
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn two_loop_matches_dense_oracle((dim, m, pairs) in history(), v in prop::collection::vec(-1.0..1.0f64, 16)) {
        let mem = filled(m, 0.01, &pairs);
        let v = &v[..dim];
        let h = explicit_hessian_oracle(&mem, dim).unwrap();
        let hv: Vec<f64> = (0..dim).map(|i| (0..dim).map(|j| h[i * dim + j] * v[j]).sum()).collect();
        let d = mem.direction(v).unwrap();
        prop_assert!(rel_err(&d, &hv) < 1e-10, "rel err {}", rel_err(&d, &hv));
    }

    #[test]
    fn oracle_is_symmetric_positive_definite((dim, m, pairs) in history()) {
        let mem = filled(m, 0.01, &pairs);
        let h = DMatrix::from_row_slice(dim, dim, &explicit_hessian_oracle(&mem, dim).unwrap());
        let asym = (&h - h.transpose()).abs().max();
        prop_assert!(asym <= 1e-8 * h.abs().max());
        let eig = h.symmetric_eigen().eigenvalues;
        prop_assert!(eig.min() > 0.0, "eigenvalues {eig}");
    }

    #[test]
    fn damping_lands_on_threshold(s in prop::collection::vec(-2.0..2.0f64, 6), y in prop::collection::vec(-2.0..2.0f64, 6)) {
        prop_assume!(s.iter().any(|&x| x.abs() > 1e-3));
        let mut mem = CurvatureMemory::new(4, 0.01).unwrap();
        let r = mem.update(&s, &y).unwrap();
        prop_assert!(r.damped_curvature >= DAMPING_THRESHOLD * r.sigma * (1.0 - 1e-12));
        if r.activated {
            prop_assert!((r.damped_curvature - DAMPING_THRESHOLD * r.sigma).abs() <= 1e-10 * r.sigma.max(1.0));
        } else {
            prop_assert_eq!(r.damped_curvature, r.raw_curvature);
        }
    }

    #[test]
    fn direction_is_linear((dim, m, pairs) in history(), a in -3.0..3.0f64, u in prop::collection::vec(-1.0..1.0f64, 16), v in prop::collection::vec(-1.0..1.0f64, 16)) {
        let mem = filled(m, 0.01, &pairs);
        let (u, v) = (&u[..dim], &v[..dim]);
        let comb: Vec<f64> = u.iter().zip(v).map(|(x, y)| a * x + y).collect();
        let lhs = mem.direction(&comb).unwrap();
        let (hu, hv) = (mem.direction(u).unwrap(), mem.direction(v).unwrap());
        let rhs: Vec<f64> = hu.iter().zip(&hv).map(|(x, y)| a * x + y).collect();
        let scale = rhs.iter().chain(&hu).map(|x| x.abs()).fold(1.0, f64::max);
        for (l, r) in lhs.iter().zip(&rhs) {
            prop_assert!((l - r).abs() <= 1e-9 * scale);
        }
    }
}

#[test]
fn memory_keeps_only_the_newest_pairs() {
    let mut mem = CurvatureMemory::new(3, 0.01).unwrap();
    for k in 1..=5 {
        let s = [k as f64, 1.0];
        let y = [2.0 * k as f64, 2.0];
        mem.update(&s, &y).unwrap();
    }
    assert_eq!(mem.len(), 3);
    let firsts: Vec<f64> = mem.pairs().map(|p| p.s[0]).collect();
    assert_eq!(firsts, [3.0, 4.0, 5.0]);
}

#[test]
fn secant_condition_holds_for_newest_pair() {
    let mut mem = CurvatureMemory::new(5, 0.01).unwrap();
    mem.update(&[1.0, 0.5, -0.2], &[2.0, 0.7, 0.1]).unwrap();
    mem.update(&[0.3, -1.0, 0.4], &[0.5, -1.8, 0.9]).unwrap();
    let newest = mem.pairs().last().unwrap().clone();
    let d = mem.direction(&newest.y_hat).unwrap();
    for (a, b) in d.iter().zip(&newest.s) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn stale_negative_curvature_stays_positive_definite() {
    let mut mem = CurvatureMemory::new(4, 0.01).unwrap();
    mem.update(&[1.0, 0.0, 0.0], &[-5.0, 0.0, 0.0]).unwrap();
    mem.update(&[0.0, 1.0, 1.0], &[0.0, -1.0, -1.0]).unwrap();
    let h = DMatrix::from_row_slice(3, 3, &explicit_hessian_oracle(&mem, 3).unwrap());
    assert!(h.symmetric_eigen().eigenvalues.min() > 0.0);
}
