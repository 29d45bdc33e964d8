use nalgebra::{Complex, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use evsync::matops::{
    mahler_measure, solve_sylvester, sylvester_residual, CMatrix, RealMatrix, RealVector,
};
use evsync::netgraph::{CommGraph, Edge};
use evsync::runner::{self, build_sync_design};
use evsync::syncctl::{
    consensus_term, gamma_from_lyapunov, network_step, NetworkDynamics, NetworkState,
};
use evsync::{TriggerParams, TriggerPolicy};

/// A ring plus random chords, so the graph is always connected.
fn connected_graph(m: usize, seed: u64) -> CommGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<Edge> = (0..m)
        .filter(|&i| m > 2 || i == 0)
        .map(|i| Edge {
            i,
            j: (i + 1) % m,
            weight: rng.gen_range(0.2..3.0),
        })
        .collect();
    for i in 0..m {
        for j in i + 2..m {
            if rng.gen_bool(0.4) {
                edges.push(Edge {
                    i,
                    j,
                    weight: rng.gen_range(0.2..3.0),
                });
            }
        }
    }
    CommGraph::from_edges(m, &edges).unwrap()
}

fn random_matrix(n: usize, seed: u64, scale: f64) -> RealMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    RealMatrix::from_fn(n, n, |_, _| rng.gen_range(-scale..scale))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_invariants(m in 2usize..8, seed in any::<u64>()) {
        let g = connected_graph(m, seed);
        let l = g.laplacian();
        prop_assert!((&l - l.transpose()).abs().max() == 0.0);
        let row_sums = &l * RealVector::from_element(m, 1.0);
        prop_assert!(row_sums.abs().max() <= 1e-12);
        let spec = g.spectrum().unwrap();
        prop_assert_eq!(spec.mu[0], 0.0);
        prop_assert!(spec.mu.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(spec.mu2() > 0.0);
        let trace: f64 = spec.mu.iter().sum();
        prop_assert!((trace - l.trace()).abs() <= 1e-9 * (1.0 + l.trace()));
        let threshold = spec.feasibility_threshold().unwrap();
        prop_assert!(threshold > 1.0);
    }

    #[test]
    fn mahler_measure_at_least_one_and_abs_det(n in 1usize..6, seed in any::<u64>(), scale in 0.1f64..3.0) {
        let a = random_matrix(n, seed, scale);
        let mahler = mahler_measure(&a).unwrap();
        prop_assert!(mahler >= 1.0);
        prop_assert!(mahler >= a.determinant().abs() * (1.0 - 1e-9));
    }

    #[test]
    fn sylvester_residual_small(n in 1usize..5, p in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = RealMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        // Diagonal entries far outside the spectrum of `a`.
        let lambda = CMatrix::from_fn(p, p, |i, j| {
            if i == j {
                Complex::new(rng.gen_range(3.0..5.0) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }, 0.0)
            } else if i < j {
                Complex::new(rng.gen_range(-1.0..1.0), 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        });
        let rhs = CMatrix::from_fn(p, n, |_, _| Complex::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)));
        let g = solve_sylvester(&lambda, &a, &rhs).unwrap();
        let res = sylvester_residual(&lambda, &a, &rhs, &g);
        prop_assert!(res.iter().map(|z| z.norm()).fold(0.0, f64::max) <= 1e-12);
    }

    #[test]
    fn gamma_invariant_to_lyapunov_scale(seed in any::<u64>(), c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = RealMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.5..1.5));
        let b = RealVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
        let f = RealMatrix::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
        let p = &f * f.transpose() + RealMatrix::identity(2, 2) * 0.1;
        let g1 = gamma_from_lyapunov(&s, &b, &p, 2.0, 4.0);
        let g2 = gamma_from_lyapunov(&s, &b, &(p * c), 2.0, 4.0);
        prop_assert!((&g1 - &g2).abs().max() <= 1e-9 * (1.0 + g1.abs().max()));
        // Gamma S^-1 B = 2 / (mu2 + mu_m) for any P > 0.
        if let Some(s_inv) = s.clone().try_inverse() {
            if s.determinant().abs() > 1e-3 {
                let v = g1.dot(&(s_inv * &b));
                prop_assert!((v - 1.0 / 3.0).abs() <= 1e-6 * (1.0 + g1.norm() * b.norm() / s.determinant().abs()));
            }
        }
    }

    #[test]
    fn consensus_terms_sum_to_zero(m in 2usize..7, seed in any::<u64>()) {
        let g = connected_graph(m, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let held: Vec<DVector<f64>> = (0..m).map(|_| DVector::from_fn(3, |_, _| rng.gen_range(-5.0..5.0))).collect();
        let mut total = DVector::zeros(3);
        for i in 0..m {
            total += consensus_term(i, &held, &g);
        }
        prop_assert!(total.abs().max() <= 1e-11);
        let same = vec![held[0].clone(); m];
        for i in 0..m {
            prop_assert_eq!(consensus_term(i, &same, &g).abs().max(), 0.0);
        }
    }

    /// Replays a network from its own history: every decision must match the
    /// rule recomputed from stored states and an independent held-state
    /// propagation `S^(k - ks) eta(ks)`.
    #[test]
    fn trigger_decisions_match_recomputation(
        seed in any::<u64>(),
        c0 in 0.0f64..2.0,
        c1 in 0.0f64..5.0,
        rho in 0.05f64..0.99,
    ) {
        let config = runner::preset("sync_demo").unwrap();
        let (scenario, design) = build_sync_design(&config).unwrap();
        let dynamics = NetworkDynamics::<f64>::new(&design);
        let m = scenario.graph.node_count();
        let params = TriggerParams { c0, c1, rho };
        let policy = TriggerPolicy::Event(params);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let initial: Vec<DVector<f64>> = (0..m).map(|_| DVector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0))).collect();
        let mut network = NetworkState::new(initial.clone());
        let mut history = vec![initial];
        let mut last = vec![0usize; m];
        for k in 0..120 {
            let z: Vec<f64> = (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect();
            let outcome = network_step(&mut network, &scenario.graph, &dynamics, &z, &scenario.inputs, &policy).unwrap();
            let now: Vec<DVector<f64>> = network.agents.iter().map(|a| a.eta.clone()).collect();
            for i in 0..m {
                let mut held = history[last[i]][i].clone();
                for _ in last[i]..k + 1 {
                    held = &design.s * held;
                }
                let eps = (&held - &now[i]).norm_squared();
                let threshold = params.threshold(k + 1);
                if (eps - threshold).abs() > 1e-9 * (1.0 + threshold) {
                    prop_assert_eq!(outcome.triggered[i], eps >= threshold, "agent {} at k = {}", i, k + 1);
                }
                if outcome.triggered[i] {
                    last[i] = k + 1;
                }
            }
            history.push(now);
        }
    }
}
