mod common;

use common::*;
use nalgebra::DMatrix;
use nbra::ot::{
    cost_bundle, fgw_solve, gw_distance, gw_term, hungarian, sinkhorn, uniform, CostBundle,
    FwConfig, SinkhornConfig,
};
use rand::Rng;

#[test]
fn hungarian_matches_permutation_minimum() {
    let mut r = rng(11);
    for _ in 0..500 {
        let n = r.random_range(1..=6);
        let c = uniform_matrix(&mut r, n, n, 10.0);
        let (pairs, cost) = hungarian(&c).unwrap();
        assert_eq!(pairs.len(), n);
        let used: std::collections::HashSet<usize> = pairs.iter().map(|p| p.1).collect();
        assert_eq!(used.len(), n);
        let direct: f64 = pairs.iter().map(|&(i, j)| c[(i, j)]).sum();
        assert!((direct - cost).abs() < 1e-12);
        assert!((cost - brute_assignment(&c)).abs() < 1e-9);
    }
}

#[test]
fn hungarian_rectangular_matches_injection_minimum() {
    let mut r = rng(12);
    for _ in 0..100 {
        let m = r.random_range(1..=4);
        let n = r.random_range(m..=5);
        let c = uniform_matrix(&mut r, m, n, 3.0);
        // brute force: permutations of columns, first m taken as the image
        let best = permutations(n)
            .iter()
            .map(|p| (0..m).map(|i| c[(i, p[i])]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        let (_, cost) = hungarian(&c).unwrap();
        assert!((cost - best).abs() < 1e-9);
        let (pairs_t, cost_t) = hungarian(&c.transpose()).unwrap();
        assert_eq!(pairs_t.len(), m);
        assert!((cost_t - best).abs() < 1e-9);
    }
}

#[test]
fn hungarian_handles_ties_and_negatives() {
    let c = DMatrix::from_element(4, 4, 1.0);
    assert_eq!(hungarian(&c).unwrap().1, 4.0);
    let c = DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -1.0]);
    assert_eq!(hungarian(&c).unwrap().1, -2.0);
    let c = DMatrix::from_row_slice(1, 2, &[f64::NAN, 0.0]);
    assert!(hungarian(&c).is_err());
}

#[test]
fn sinkhorn_plans_are_feasible() {
    let mut r = rng(13);
    let cfg = SinkhornConfig::default();
    let mut converged = 0;
    for _ in 0..200 {
        let m = r.random_range(1..=8);
        let n = r.random_range(1..=8);
        let c = uniform_matrix(&mut r, m, n, 2.0);
        let raw_mu: Vec<f64> = (0..m).map(|_| 0.1 + r.random::<f64>()).collect();
        let s: f64 = raw_mu.iter().sum();
        let mu: Vec<f64> = raw_mu.iter().map(|x| x / s).collect();
        let out = sinkhorn(&c, &mu, &uniform(n), &cfg).unwrap();
        assert!(out.plan.t.iter().all(|x| x.is_finite() && *x > 0.0));
        if out.warning.is_none() {
            converged += 1;
            assert!(out.plan.marginal_violation() <= 1e-6);
        }
    }
    assert!(converged >= 190);
}

#[test]
fn sinkhorn_small_epsilon_uses_stable_path() {
    let mut r = rng(14);
    for eps in [1e-2, 1e-3, 1e-4] {
        let c = uniform_matrix(&mut r, 5, 6, 2.0);
        let cfg = SinkhornConfig {
            epsilon: eps,
            max_iters: 5000,
            tol: 1e-6,
        };
        let out = sinkhorn(&c, &uniform(5), &uniform(6), &cfg).unwrap();
        assert!(out.plan.t.iter().all(|x| x.is_finite() && *x >= 0.0));
        if out.warning.is_none() {
            assert!(out.plan.marginal_violation() <= 1e-6);
        }
    }
}

#[test]
fn gw_decomposition_matches_quartic_sum() {
    let mut r = rng(15);
    for _ in 0..200 {
        let m = r.random_range(1..=5);
        let n = r.random_range(1..=5);
        let dim = r.random_range(2..=6);
        let q = cloud(&mut r, m, dim);
        let c = cloud(&mut r, n, dim);
        let dq = cosine_distance_matrix(&q);
        let dc = cosine_distance_matrix(&c);
        // an arbitrary nonnegative plan, not necessarily a coupling
        let t = uniform_matrix(&mut r, m, n, 1.0 / (m * n) as f64);
        let fast = gw_term(&dq, &dc, &t).unwrap();
        let slow = gw_quartic(&dq, &dc, &t);
        assert!((fast - slow).abs() < 1e-10, "{fast} vs {slow}");
    }
}

#[test]
fn gw_random_three_by_three() {
    let mut r = rng(16);
    let q = cloud(&mut r, 3, 4);
    let c = cloud(&mut r, 3, 4);
    let b = cost_bundle(&q, &c).unwrap();
    let t = sinkhorn(&b.d, &uniform(3), &uniform(3), &SinkhornConfig::default())
        .unwrap()
        .plan
        .t;
    let fast = gw_term(&b.dq, &b.dc, &t).unwrap();
    assert!((fast - gw_quartic(&b.dq, &b.dc, &t)).abs() < 1e-10);
    assert!(fast >= 0.0);
}

fn random_bundle(r: &mut rand_chacha::ChaCha8Rng) -> CostBundle {
    let m = r.random_range(1..=6);
    let n = r.random_range(1..=6);
    let dim = r.random_range(2..=8);
    cost_bundle(&cloud(r, m, dim), &cloud(r, n, dim)).unwrap()
}

#[test]
fn fgw_at_beta_zero_is_entropic_wasserstein() {
    let mut r = rng(17);
    let cfg = FwConfig::with_beta(0.0);
    for _ in 0..100 {
        let b = random_bundle(&mut r);
        let (mu, nu) = (uniform(b.m()), uniform(b.n()));
        let sol = fgw_solve(&b, &mu, &nu, &cfg).unwrap();
        let w = sinkhorn(&b.d, &mu, &nu, &cfg.sinkhorn).unwrap();
        let direct = b.d.dot(&w.plan.t);
        assert!((sol.cost - direct).abs() < 1e-8);
        for pair in sol.history.windows(2) {
            assert!(pair[1] <= pair[0]);
        }
    }
}

#[test]
fn fgw_objective_never_increases() {
    let mut r = rng(18);
    for i in 0..200 {
        let beta = [0.0, 0.25, 0.5, 0.75, 1.0][i % 5];
        let b = random_bundle(&mut r);
        let sol = fgw_solve(&b, &uniform(b.m()), &uniform(b.n()), &FwConfig::with_beta(beta))
            .unwrap();
        assert!(sol.cost.is_finite());
        assert!(sol.iterations <= 50);
        for pair in sol.history.windows(2) {
            assert!(pair[1] <= pair[0], "{:?}", sol.history);
        }
        assert_eq!(*sol.history.last().unwrap(), sol.cost);
    }
}

#[test]
fn fgw_self_transport_is_near_zero() {
    let mut r = rng(19);
    let cfg = FwConfig::default();
    for beta in [0.0, 0.3, 0.5, 0.8, 1.0] {
        for _ in 0..10 {
            let q = cloud(&mut r, 4, 6);
            let b = cost_bundle(&q, &q).unwrap();
            let sol = fgw_solve(&b, &uniform(4), &uniform(4), &FwConfig { beta, ..cfg }).unwrap();
            assert!(sol.cost <= 10.0 * cfg.sinkhorn.epsilon, "beta {beta}: {}", sol.cost);
        }
    }
}

#[test]
fn fgw_pure_structure_ignores_rotation() {
    let mut r = rng(20);
    let cfg = FwConfig::with_beta(1.0);
    for _ in 0..10 {
        let q = cloud(&mut r, 5, 6);
        let rot = orthogonal(&mut r, 6);
        let c: Vec<Vec<f64>> = q.iter().map(|v| rotate(&rot, v)).collect();
        let b = cost_bundle(&q, &c).unwrap();
        assert!((&b.dq - &b.dc).amax() < 1e-12);
        let base = fgw_solve(&cost_bundle(&q, &q).unwrap(), &uniform(5), &uniform(5), &cfg)
            .unwrap()
            .cost;
        let sol = fgw_solve(&b, &uniform(5), &uniform(5), &cfg).unwrap();
        assert!(sol.cost <= 1e-6 + 10.0 * cfg.sinkhorn.epsilon);
        assert!((sol.cost - base).abs() < 1e-6);
    }
}

#[test]
fn fgw_single_object_orders_like_cosine() {
    let mut r = rng(21);
    let cfg = FwConfig::default();
    for _ in 0..50 {
        let q = cloud(&mut r, 1, 5);
        let cands = cloud(&mut r, 12, 5);
        let mut by_fgw: Vec<(usize, f64)> = cands
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let b = cost_bundle(&q, std::slice::from_ref(c)).unwrap();
                (i, fgw_solve(&b, &[1.0], &[1.0], &cfg).unwrap().cost)
            })
            .collect();
        let mut by_cos: Vec<(usize, f64)> = cands
            .iter()
            .enumerate()
            .map(|(i, c)| (i, -q[0].iter().zip(c).map(|(a, b)| a * b).sum::<f64>()))
            .collect();
        by_fgw.sort_by(|a, b| a.1.total_cmp(&b.1));
        by_cos.sort_by(|a, b| a.1.total_cmp(&b.1));
        let a: Vec<usize> = by_fgw.iter().map(|p| p.0).collect();
        let b: Vec<usize> = by_cos.iter().map(|p| p.0).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn gw_distance_examples() {
    let mut r = rng(22);
    let cfg = FwConfig::default();
    let a = cloud(&mut r, 10, 8);
    let same = gw_distance(&a, &a, &cfg).unwrap();
    assert!(same <= 10.0 * cfg.sinkhorn.epsilon);

    let rot = orthogonal(&mut r, 8);
    let b: Vec<Vec<f64>> = a.iter().map(|v| rotate(&rot, v)).collect();
    assert!((gw_distance(&a, &b, &cfg).unwrap() - same).abs() < 1e-6);

    let mut flipped = a.clone();
    flipped[3] = flipped[3].iter().map(|x| -x).collect();
    let d = gw_distance(&a, &flipped, &cfg).unwrap();
    assert!(d >= same + 1e-3, "{d} vs {same}");
}

#[test]
fn solvers_are_deterministic() {
    let mut r = rng(23);
    let b = random_bundle(&mut r);
    let cfg = FwConfig::default();
    let x = fgw_solve(&b, &uniform(b.m()), &uniform(b.n()), &cfg).unwrap();
    let y = fgw_solve(&b, &uniform(b.m()), &uniform(b.n()), &cfg).unwrap();
    assert_eq!(x, y);
}
