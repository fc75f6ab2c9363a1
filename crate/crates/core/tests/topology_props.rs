use aircomp_dfl::rng;
use aircomp_dfl::topology::{laplacian_mixing, MixingMatrix, NetworkGraph};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn random_graph(n: usize, p: f64, seed: u64) -> NetworkGraph {
    let mut r = rng::substream(seed, &[1]);
    NetworkGraph::connected_erdos_renyi(n, p, &mut r, 100_000).unwrap()
}

fn reference_beta(w: &MixingMatrix) -> f64 {
    let n = w.n_devices();
    let m = DMatrix::from_fn(n, n, |i, j| w.weight(i, j) - 1.0 / n as f64);
    m.singular_values().max()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn laplacian_weights_are_doubly_stochastic(n in 2usize..24, p in 0.15f64..1.0, seed: u64) {
        let g = random_graph(n, p, seed);
        let w = laplacian_mixing(&g).unwrap();
        for i in 0..n {
            let row: f64 = (0..n).map(|j| w.weight(i, j)).sum();
            let col: f64 = (0..n).map(|j| w.weight(j, i)).sum();
            prop_assert!((row - 1.0).abs() <= 1e-12);
            prop_assert!((col - 1.0).abs() <= 1e-12);
            for j in 0..n {
                prop_assert_eq!(w.weight(i, j), w.weight(j, i));
                prop_assert!(w.weight(i, j) >= 0.0);
                if i != j && !g.has_edge(i, j) {
                    prop_assert_eq!(w.weight(i, j), 0.0);
                }
            }
        }
    }

    #[test]
    fn mixing_preserves_the_average(
        n in 2usize..16,
        seed: u64,
        values in prop::collection::vec(-100.0f64..100.0, 16 * 3),
    ) {
        let g = random_graph(n, 0.4, seed);
        let w = laplacian_mixing(&g).unwrap();
        let vs: Vec<Vec<f64>> = (0..n).map(|i| values[3 * i..3 * i + 3].to_vec()).collect();
        let mixed = w.apply(&vs);
        for k in 0..3 {
            let before: f64 = vs.iter().map(|v| v[k]).sum();
            let after: f64 = mixed.iter().map(|v| v[k]).sum();
            prop_assert!((before - after).abs() <= 1e-12 * (1.0 + before.abs()) * n as f64);
        }
    }

    #[test]
    fn beta_matches_singular_values(n in 2usize..=8, p in 0.2f64..1.0, seed: u64) {
        let w = laplacian_mixing(&random_graph(n, p, seed)).unwrap();
        prop_assert!((w.beta() - reference_beta(&w)).abs() <= 1e-8);
    }

    #[test]
    fn connected_graphs_contract(n in 2usize..=16, p in 0.1f64..1.0, seed: u64) {
        let w = laplacian_mixing(&random_graph(n, p, seed)).unwrap();
        prop_assert!(w.beta() < 1.0);
    }

    #[test]
    fn threshold_graphs_are_connected_and_symmetric(n in 2usize..20, gamma in 0.1f64..1.0, seed: u64) {
        let mut r = rng::substream(seed, &[2]);
        let g = NetworkGraph::rayleigh_threshold(n, gamma, &mut r, 100_000).unwrap();
        prop_assert!(g.is_connected());
        for (i, j) in g.edges() {
            prop_assert!(g.has_edge(j, i));
            prop_assert!(i != j);
        }
    }
}

#[test]
fn complete_graph_has_zero_beta() {
    for n in 2..10 {
        let w = laplacian_mixing(&NetworkGraph::complete(n).unwrap()).unwrap();
        assert!(w.beta() < 1e-12);
    }
}

#[test]
fn ring_beta_matches_closed_form() {
    // Circulant with self weight 1/3 and neighbor weights 1/3.
    for n in 4..20 {
        let w = laplacian_mixing(&NetworkGraph::ring(n).unwrap()).unwrap();
        let expected = (1..n)
            .map(|k| ((1.0 + 2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos()) / 3.0).abs())
            .fold(0.0, f64::max);
        assert!((w.beta() - expected).abs() < 1e-10, "n={n}");
    }
}
