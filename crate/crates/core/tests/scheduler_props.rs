use aircomp_dfl::rng;
use aircomp_dfl::scheduler::{conflicts, Schedule, SchedulePolicy};
use aircomp_dfl::topology::NetworkGraph;
use proptest::prelude::*;

/// Any graph on `n` vertices from a bit mask over the upper triangle.
fn graph_from_mask(n: usize, mask: &[bool]) -> NetworkGraph {
    let mut edges = Vec::new();
    let mut k = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            if mask[k] {
                edges.push((i, j));
            }
            k += 1;
        }
    }
    NetworkGraph::from_edges(n, edges).unwrap()
}

/// Exhaustive check straight from the definition: two receivers in the same
/// block must not be neighbors and must not share a neighbor.
fn interference_free(g: &NetworkGraph, s: &Schedule) -> bool {
    let n = g.n_devices();
    for u in 0..n {
        for v in 0..n {
            if u == v || s.assignment()[u] != s.assignment()[v] {
                continue;
            }
            if g.has_edge(u, v) {
                return false;
            }
            if (0..n).any(|k| g.has_edge(u, k) && g.has_edge(v, k)) {
                return false;
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn schedules_are_interference_free(n in 1usize..=12, mask in prop::collection::vec(any::<bool>(), 66)) {
        let g = graph_from_mask(n, &mask);
        for policy in [SchedulePolicy::Naive, SchedulePolicy::Coloring] {
            let s = Schedule::build(&g, policy);
            prop_assert!(interference_free(&g, &s));
            prop_assert!(s.is_valid_for(&g));
            prop_assert_eq!(s.assignment().len(), n);
            prop_assert_eq!(s.blocks().iter().map(Vec::len).sum::<usize>(), n);
            prop_assert!(s.blocks().iter().all(|b| !b.is_empty()));
        }
    }

    #[test]
    fn coloring_never_uses_more_blocks_than_naive(n in 1usize..=12, mask in prop::collection::vec(any::<bool>(), 66)) {
        let g = graph_from_mask(n, &mask);
        let colored = Schedule::build(&g, SchedulePolicy::Coloring).n_blocks();
        prop_assert!(colored <= Schedule::build(&g, SchedulePolicy::Naive).n_blocks());
        // Greedy coloring needs at most max conflict degree + 1 colors.
        let max_conflicts = (0..n).map(|u| (0..n).filter(|&v| v != u && conflicts(&g, u, v)).count()).max().unwrap_or(0);
        prop_assert!(colored <= max_conflicts + 1);
    }

    #[test]
    fn conflict_relation_matches_definition(n in 2usize..=12, mask in prop::collection::vec(any::<bool>(), 66)) {
        let g = graph_from_mask(n, &mask);
        for u in 0..n {
            for v in 0..n {
                if u == v { continue; }
                let expected = g.has_edge(u, v) || (0..n).any(|k| g.has_edge(u, k) && g.has_edge(v, k));
                prop_assert_eq!(conflicts(&g, u, v), expected);
            }
        }
    }
}

#[test]
fn coloring_saves_blocks_on_sparse_networks() {
    let g = NetworkGraph::ring(20).unwrap();
    let s = Schedule::build(&g, SchedulePolicy::Coloring);
    assert!(s.n_blocks() <= 5, "{} blocks", s.n_blocks());
    let mut r = rng::substream(3, &[1]);
    let g = NetworkGraph::connected_erdos_renyi(20, 0.15, &mut r, 100_000).unwrap();
    assert!(Schedule::build(&g, SchedulePolicy::Coloring).n_blocks() < 20);
}
