//! Communication graphs and mixing matrices.
//!
//! A [`NetworkGraph`] stores neighbor sets without self loops. The self
//! weight `w_ii` lives only in the [`MixingMatrix`], and consensus code adds
//! the `w_ii * theta_i` term explicitly.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::linalg;

/// Tolerance for the doubly stochastic checks on parsed or user-supplied
/// matrices.
pub const STOCHASTIC_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("graph is disconnected ({components} components); mixing would not contract")]
    Disconnected { components: usize },
    #[error("matrix is not a symmetric doubly stochastic matrix: {0}")]
    NotDoublyStochastic(String),
    #[error("edge list line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("no connected graph found after {attempts} draws")]
    NoConnectedDraw { attempts: usize },
}

/// Undirected device graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkGraph {
    adjacency: Vec<Vec<usize>>,
}

impl NetworkGraph {
    /// Edgeless graph on `n` devices.
    pub fn edgeless(n: usize) -> Result<Self, TopologyError> {
        if n == 0 {
            return Err(TopologyError::InvalidInput("graph needs at least one device".into()));
        }
        Ok(Self { adjacency: vec![Vec::new(); n] })
    }

    pub fn from_edges<I>(n: usize, edges: I) -> Result<Self, TopologyError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut g = Self::edgeless(n)?;
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(TopologyError::InvalidInput(format!("edge ({i},{j}) out of range for {n} devices")));
            }
            if i == j {
                return Err(TopologyError::InvalidInput(format!("self loop at device {i}")));
            }
            g.adjacency[i].push(j);
            g.adjacency[j].push(i);
        }
        for list in &mut g.adjacency {
            list.sort_unstable();
            list.dedup();
        }
        Ok(g)
    }

    /// Threshold graph: edge `(i, j)` iff `gains[i][j] > threshold`.
    pub fn from_gains(gains: &[Vec<f64>], threshold: f64) -> Result<Self, TopologyError> {
        let n = gains.len();
        if !(threshold >= 0.0) {
            return Err(TopologyError::InvalidInput(format!("threshold must be >= 0, got {threshold}")));
        }
        if gains.iter().any(|row| row.len() != n) {
            return Err(TopologyError::InvalidInput("gain matrix must be square".into()));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            if gains[i][i] != 0.0 {
                return Err(TopologyError::InvalidInput(format!("gain diagonal at {i} must be zero")));
            }
            for j in (i + 1)..n {
                let (a, b) = (gains[i][j], gains[j][i]);
                if a != b {
                    return Err(TopologyError::InvalidInput(format!("gains not symmetric at ({i},{j}): {a} vs {b}")));
                }
                if !(a >= 0.0) {
                    return Err(TopologyError::InvalidInput(format!("negative gain at ({i},{j})")));
                }
                if a > threshold {
                    edges.push((i, j));
                }
            }
        }
        Self::from_edges(n, edges)
    }

    pub fn complete(n: usize) -> Result<Self, TopologyError> {
        Self::from_edges(n, (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))))
    }

    pub fn path(n: usize) -> Result<Self, TopologyError> {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    /// Cycle on `n` devices; a path for `n <= 2`.
    pub fn ring(n: usize) -> Result<Self, TopologyError> {
        if n <= 2 {
            return Self::path(n);
        }
        Self::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn erdos_renyi<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<Self, TopologyError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(TopologyError::InvalidInput(format!("edge probability {p} outside [0,1]")));
        }
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        Self::from_edges(n, edges)
    }

    /// Draws Erdős–Rényi graphs until one is connected.
    pub fn connected_erdos_renyi<R: Rng + ?Sized>(
        n: usize,
        p: f64,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<Self, TopologyError> {
        for _ in 0..max_attempts {
            let g = Self::erdos_renyi(n, p, rng)?;
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(TopologyError::NoConnectedDraw { attempts: max_attempts })
    }

    /// Symmetric gain magnitudes `|h_ij|` with `h_ij ~ CN(0, 1)`, one draw per
    /// unordered pair, zero diagonal.
    pub fn rayleigh_gains<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Vec<f64>> {
        let mut gains = vec![vec![0.0; n]; n];
        let half = std::f64::consts::FRAC_1_SQRT_2;
        for i in 0..n {
            for j in (i + 1)..n {
                let re: f64 = StandardNormal.sample(rng);
                let im: f64 = StandardNormal.sample(rng);
                let g = (re * half).hypot(im * half);
                gains[i][j] = g;
                gains[j][i] = g;
            }
        }
        gains
    }

    /// Threshold graph over one Rayleigh gain draw, redrawn until connected.
    pub fn rayleigh_threshold<R: Rng + ?Sized>(
        n: usize,
        threshold: f64,
        rng: &mut R,
        max_attempts: usize,
    ) -> Result<Self, TopologyError> {
        for _ in 0..max_attempts {
            let g = Self::from_gains(&Self::rayleigh_gains(n, rng), threshold)?;
            if g.is_connected() {
                return Ok(g);
            }
        }
        Err(TopologyError::NoConnectedDraw { attempts: max_attempts })
    }

    pub fn n_devices(&self) -> usize {
        self.adjacency.len()
    }

    /// Neighbors of `i`, sorted, never containing `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adjacency[i].binary_search(&j).is_ok()
    }

    /// Edges as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(i, nb)| nb.iter().filter(move |&&j| j > i).map(move |&j| (i, j)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn component_count(&self) -> usize {
        let n = self.n_devices();
        let mut seen = vec![false; n];
        let mut components = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                for &v in &self.adjacency[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() == 1
    }

    /// Row-major graph Laplacian `D - A`.
    pub fn laplacian(&self) -> Vec<f64> {
        let n = self.n_devices();
        let mut l = vec![0.0; n * n];
        for i in 0..n {
            l[i * n + i] = self.degree(i) as f64;
            for &j in self.neighbors(i) {
                l[i * n + j] = -1.0;
            }
        }
        l
    }

    /// `n_devices=N` header then `i j 1` per edge.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n_devices={}\n", self.n_devices());
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j} 1");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, TopologyError> {
        let (n, entries) = parse_edge_list(text)?;
        Self::from_edges(n, entries.into_iter().filter(|e| e.0 != e.1).map(|(i, j, _)| (i, j)))
    }
}

/// Symmetric doubly stochastic weights with the cached contraction factor
/// `beta = ||W - (1/N) 11^T||_2`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    n: usize,
    weights: Vec<f64>,
    beta: f64,
}

impl MixingMatrix {
    /// Validates a dense row-major matrix and computes its `beta`.
    pub fn from_dense(n: usize, weights: Vec<f64>) -> Result<Self, TopologyError> {
        if n == 0 || weights.len() != n * n {
            return Err(TopologyError::InvalidInput(format!("expected {n}x{n} weights, got {}", weights.len())));
        }
        for i in 0..n {
            let mut row = 0.0;
            let mut col = 0.0;
            for j in 0..n {
                let w = weights[i * n + j];
                if !(0.0..=1.0).contains(&w) {
                    return Err(TopologyError::NotDoublyStochastic(format!("entry ({i},{j}) = {w} outside [0,1]")));
                }
                if (w - weights[j * n + i]).abs() > 1e-15 {
                    return Err(TopologyError::NotDoublyStochastic(format!("asymmetric at ({i},{j})")));
                }
                row += w;
                col += weights[j * n + i];
            }
            if (row - 1.0).abs() > STOCHASTIC_TOL || (col - 1.0).abs() > STOCHASTIC_TOL {
                return Err(TopologyError::NotDoublyStochastic(format!("row/column {i} sums to {row}/{col}")));
            }
        }
        let beta = consensus_contraction(n, &weights);
        Ok(Self { n, weights, beta })
    }

    pub fn identity(n: usize) -> Result<Self, TopologyError> {
        let mut w = vec![0.0; n * n];
        (0..n).for_each(|i| w[i * n + i] = 1.0);
        Self::from_dense(n, w)
    }

    pub fn n_devices(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    pub fn self_weight(&self, i: usize) -> f64 {
        self.weight(i, i)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// True when every nonzero off-diagonal weight sits on a graph edge.
    pub fn is_supported_on(&self, graph: &NetworkGraph) -> bool {
        graph.n_devices() == self.n
            && (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.weight(i, j) == 0.0 || graph.has_edge(i, j)))
    }

    /// Row-wise consensus `out_i = sum_j w_ij v_j`.
    pub fn apply(&self, vectors: &[Vec<f64>]) -> Vec<Vec<f64>> {
        assert_eq!(vectors.len(), self.n, "one vector per device");
        let dim = vectors.first().map_or(0, Vec::len);
        (0..self.n)
            .map(|i| {
                let mut out = vec![0.0; dim];
                for (j, v) in vectors.iter().enumerate() {
                    let w = self.weight(i, j);
                    if w != 0.0 {
                        linalg::axpy(w, v, &mut out);
                    }
                }
                out
            })
            .collect()
    }

    /// `n_devices=N` header then `i j w` for every nonzero entry with `i <= j`.
    pub fn to_edge_list(&self) -> String {
        let mut out = format!("n_devices={}\n", self.n);
        for i in 0..self.n {
            for j in i..self.n {
                let w = self.weight(i, j);
                if w != 0.0 {
                    let _ = writeln!(out, "{i} {j} {w:e}");
                }
            }
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self, TopologyError> {
        let (n, entries) = parse_edge_list(text)?;
        let mut w = vec![0.0; n * n];
        for (i, j, weight) in entries {
            w[i * n + j] = weight;
            w[j * n + i] = weight;
        }
        Self::from_dense(n, w)
    }
}

/// `W = I - L / (d_max + 1)` on a connected graph.
pub fn laplacian_mixing(graph: &NetworkGraph) -> Result<MixingMatrix, TopologyError> {
    let components = graph.component_count();
    if components != 1 {
        return Err(TopologyError::Disconnected { components });
    }
    let n = graph.n_devices();
    let eps = 1.0 / (graph.max_degree() as f64 + 1.0);
    let mut w = vec![0.0; n * n];
    for i in 0..n {
        w[i * n + i] = 1.0 - eps * graph.degree(i) as f64;
        for &j in graph.neighbors(i) {
            w[i * n + j] = eps;
        }
    }
    MixingMatrix::from_dense(n, w)
}

/// Contraction factor of `w` toward the average: the spectral norm of
/// `W - (1/N) 11^T`.
pub fn contraction_factor(w: &MixingMatrix) -> f64 {
    consensus_contraction(w.n, &w.weights)
}

fn consensus_contraction(n: usize, weights: &[f64]) -> f64 {
    let inv = 1.0 / n as f64;
    let centered: Vec<f64> = weights.iter().map(|w| w - inv).collect();
    // W - J is symmetric, so its singular values are |eigenvalues|.
    linalg::symmetric_eigenvalues(&centered, n, 1e-15).into_iter().map(f64::abs).fold(0.0, f64::max)
}

fn parse_edge_list(text: &str) -> Result<(usize, Vec<(usize, usize, f64)>), TopologyError> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or(TopologyError::Parse { line: 1, msg: "empty input".into() })?;
    let n: usize = header
        .trim()
        .strip_prefix("n_devices=")
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| TopologyError::Parse { line: 1, msg: format!("expected `n_devices=N`, got `{header}`") })?;
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let err = |msg: String| TopologyError::Parse { line: idx + 1, msg };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(err(format!("expected `i j weight`, got `{line}`")));
        }
        let i: usize = fields[0].parse().map_err(|e| err(format!("{e}")))?;
        let j: usize = fields[1].parse().map_err(|e| err(format!("{e}")))?;
        let w: f64 = fields[2].parse().map_err(|e| err(format!("{e}")))?;
        if i >= n || j >= n {
            return Err(err(format!("device index out of range for {n} devices")));
        }
        entries.push((i, j, w));
    }
    Ok((n, entries))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b}");
    }

    #[test]
    fn gains_above_threshold_give_triangle() {
        let g = 0.9;
        let gains = vec![vec![0.0, g, g], vec![g, 0.0, g], vec![g, g, 0.0]];
        let graph = NetworkGraph::from_gains(&gains, 0.5).unwrap();
        assert_eq!(graph.edges(), vec![(0, 1), (0, 2), (1, 2)]);
    }

    #[test]
    fn threshold_drops_weak_link() {
        // pairs (1,2)=0.6, (1,3)=0.4, (2,3)=0.7 in one-indexed terms
        let gains = vec![vec![0.0, 0.6, 0.4], vec![0.6, 0.0, 0.7], vec![0.4, 0.7, 0.0]];
        let graph = NetworkGraph::from_gains(&gains, 0.5).unwrap();
        assert_eq!(graph.edges(), vec![(0, 1), (1, 2)]);
        assert_eq!(graph, NetworkGraph::path(3).unwrap());
    }

    #[test]
    fn gain_equal_to_threshold_is_not_an_edge() {
        let gains = vec![vec![0.0, 0.5], vec![0.5, 0.0]];
        assert_eq!(NetworkGraph::from_gains(&gains, 0.5).unwrap().edge_count(), 0);
    }

    #[test]
    fn asymmetric_gains_rejected() {
        let gains = vec![vec![0.0, 0.6], vec![0.7, 0.0]];
        assert!(matches!(NetworkGraph::from_gains(&gains, 0.5), Err(TopologyError::InvalidInput(_))));
    }

    #[test]
    fn complete_three_mixes_uniformly() {
        let w = laplacian_mixing(&NetworkGraph::complete(3).unwrap()).unwrap();
        for &x in w.as_slice() {
            assert_close(x, 1.0 / 3.0, 1e-15);
        }
        assert_close(w.beta(), 0.0, 1e-12);
    }

    #[test]
    fn path_three_mixing_and_beta() {
        let w = laplacian_mixing(&NetworkGraph::path(3).unwrap()).unwrap();
        let third = 1.0 / 3.0;
        let want = [2.0 * third, third, 0.0, third, third, third, 0.0, third, 2.0 * third];
        for (got, want) in w.as_slice().iter().zip(want) {
            assert_close(*got, want, 1e-15);
        }
        assert_close(w.beta(), 2.0 / 3.0, 1e-12);
        assert_close(contraction_factor(&w), 2.0 / 3.0, 1e-12);
    }

    #[test]
    fn single_device() {
        let w = laplacian_mixing(&NetworkGraph::edgeless(1).unwrap()).unwrap();
        assert_eq!(w.as_slice(), &[1.0]);
        assert_eq!(w.beta(), 0.0);
    }

    #[test]
    fn identity_on_isolated_pair_has_unit_beta() {
        let w = MixingMatrix::identity(2).unwrap();
        assert_close(contraction_factor(&w), 1.0, 1e-12);
    }

    #[test]
    fn disconnected_graph_refused() {
        let g = NetworkGraph::edgeless(2).unwrap();
        assert_eq!(laplacian_mixing(&g), Err(TopologyError::Disconnected { components: 2 }));
    }

    #[test]
    fn mixing_supported_on_graph() {
        let mut rng = substream(11, &[1]);
        let g = NetworkGraph::connected_erdos_renyi(9, 0.4, &mut rng, 100).unwrap();
        let w = laplacian_mixing(&g).unwrap();
        assert!(w.is_supported_on(&g));
        assert!(w.beta() < 1.0);
    }

    #[test]
    fn edge_list_snapshot_round_trip() {
        let mut rng = substream(5, &[2]);
        let g = NetworkGraph::rayleigh_threshold(7, 0.5, &mut rng, 100).unwrap();
        let text = g.to_edge_list();
        assert!(text.starts_with("n_devices=7\n"));
        assert_eq!(NetworkGraph::from_edge_list(&text).unwrap(), g);

        let w = laplacian_mixing(&g).unwrap();
        let back = MixingMatrix::from_edge_list(&w.to_edge_list()).unwrap();
        assert_eq!(back.as_slice(), w.as_slice());
    }

    #[test]
    fn edge_list_errors_carry_line_numbers() {
        let err = MixingMatrix::from_edge_list("n_devices=2\n0 1\n").unwrap_err();
        assert!(matches!(err, TopologyError::Parse { line: 2, .. }));
        assert!(NetworkGraph::from_edge_list("devices=2\n").is_err());
    }

    #[test]
    fn rejects_non_stochastic_matrix() {
        assert!(MixingMatrix::from_dense(2, vec![0.5, 0.5, 0.5, 0.4]).is_err());
        assert!(MixingMatrix::from_dense(2, vec![0.6, 0.4, 0.3, 0.7]).is_err());
    }
}
