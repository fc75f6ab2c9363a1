//! Interference-free assignment of receiving devices to transmission blocks.
//!
//! Two receivers conflict when they are adjacent or share a neighbor: a
//! shared neighbor would have to send two differently precoded signals in the
//! same block. Conflicts are therefore the edges of the square graph `G^2`.

use std::fmt::Write as _;

use crate::topology::NetworkGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulePolicy {
    /// One receiver per block.
    Naive,
    /// Welsh–Powell greedy coloring of `G^2`.
    Coloring,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schedule {
    n_blocks: usize,
    assignment: Vec<usize>,
}

impl Schedule {
    pub fn build(graph: &NetworkGraph, policy: SchedulePolicy) -> Self {
        match policy {
            SchedulePolicy::Naive => naive_schedule(graph),
            SchedulePolicy::Coloring => coloring_schedule(graph),
        }
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    /// Block index of each device.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Receivers active in each block, in device order.
    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.n_blocks];
        for (device, &b) in self.assignment.iter().enumerate() {
            blocks[b].push(device);
        }
        blocks
    }

    /// Checks every same-block pair against the distance-two conflict rule.
    pub fn is_valid_for(&self, graph: &NetworkGraph) -> bool {
        let n = graph.n_devices();
        if self.assignment.len() != n || self.assignment.iter().any(|&b| b >= self.n_blocks) {
            return false;
        }
        (0..n).all(|u| ((u + 1)..n).all(|v| self.assignment[u] != self.assignment[v] || !conflicts(graph, u, v)))
    }

    /// `device block` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (device, block) in self.assignment.iter().enumerate() {
            let _ = writeln!(out, "{device} {block}");
        }
        out
    }
}

/// True if `u` and `v` are adjacent or have a common neighbor.
pub fn conflicts(graph: &NetworkGraph, u: usize, v: usize) -> bool {
    if graph.has_edge(u, v) {
        return true;
    }
    let (a, b) = (graph.neighbors(u), graph.neighbors(v));
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// Conflict adjacency lists (the square graph without self loops).
pub fn conflict_graph(graph: &NetworkGraph) -> Vec<Vec<usize>> {
    let n = graph.n_devices();
    (0..n).map(|u| (0..n).filter(|&v| v != u && conflicts(graph, u, v)).collect()).collect()
}

pub fn naive_schedule(graph: &NetworkGraph) -> Schedule {
    let n = graph.n_devices();
    Schedule { n_blocks: n, assignment: (0..n).collect() }
}

pub fn coloring_schedule(graph: &NetworkGraph) -> Schedule {
    let conflict = conflict_graph(graph);
    let n = conflict.len();
    let mut order: Vec<usize> = (0..n).collect();
    // Welsh–Powell: descending conflict degree, ties by device id
    order.sort_by(|&a, &b| conflict[b].len().cmp(&conflict[a].len()).then(a.cmp(&b)));

    let mut color = vec![usize::MAX; n];
    let mut colored = 0;
    let mut current = 0;
    while colored < n {
        let mut members: Vec<usize> = Vec::new();
        for &v in &order {
            if color[v] != usize::MAX {
                continue;
            }
            if members.iter().all(|&m| conflict[v].binary_search(&m).is_err()) {
                color[v] = current;
                members.push(v);
                colored += 1;
            }
        }
        current += 1;
    }
    Schedule { n_blocks: current, assignment: color }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn naive_uses_one_block_per_device() {
        let s = naive_schedule(&NetworkGraph::ring(5).unwrap());
        assert_eq!(s.n_blocks(), 5);
        assert_eq!(s.assignment(), &[0, 1, 2, 3, 4]);
        assert_eq!(naive_schedule(&NetworkGraph::complete(3).unwrap()).n_blocks(), 3);
        assert_eq!(naive_schedule(&NetworkGraph::edgeless(20).unwrap()).n_blocks(), 20);
    }

    #[test]
    fn edgeless_graph_fits_in_one_block() {
        let s = coloring_schedule(&NetworkGraph::edgeless(4).unwrap());
        assert_eq!(s.n_blocks(), 1);
        assert!(s.is_valid_for(&NetworkGraph::edgeless(4).unwrap()));
    }

    #[test]
    fn triangle_needs_three_blocks() {
        let g = NetworkGraph::complete(3).unwrap();
        let s = coloring_schedule(&g);
        assert_eq!(s.n_blocks(), 3);
        assert!(s.is_valid_for(&g));
    }

    #[test]
    fn path_four_needs_three_blocks() {
        let g = NetworkGraph::path(4).unwrap();
        let s = coloring_schedule(&g);
        assert_eq!(s.n_blocks(), 3);
        assert!(s.is_valid_for(&g));
        // the two endpoints are at distance three and share a block
        assert_eq!(s.assignment()[0], s.assignment()[3]);
    }

    #[test]
    fn invalid_schedule_detected() {
        let g = NetworkGraph::path(3).unwrap();
        // endpoints share neighbor 1
        let bad = Schedule { n_blocks: 2, assignment: vec![0, 1, 0] };
        assert!(!bad.is_valid_for(&g));
    }

    #[test]
    fn text_dump() {
        let s = coloring_schedule(&NetworkGraph::path(4).unwrap());
        let text = s.to_text();
        assert_eq!(text.lines().count(), 4);
        assert!(text.lines().all(|l| l.split(' ').count() == 2));
        assert_eq!(s.blocks().iter().map(Vec::len).sum::<usize>(), 4);
    }
}
