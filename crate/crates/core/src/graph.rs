//! Weighted sparse graph in compressed sparse row layout.
//!
//! The graph is immutable once built. Sampling helpers take a caller-owned
//! random stream so concurrent walkers never share hidden state.

use rand::Rng;

use crate::error::{Error, Result};

/// Directed weighted adjacency stored as CSR.
///
/// Every stored weight is strictly positive; zero-weight input edges are
/// dropped at construction and duplicate `(src, dst)` entries are summed.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    num_nodes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    weights: Vec<f64>,
    /// Running weight sum within each row, used for neighbor sampling.
    cumulative: Vec<f64>,
}

/// A random walk of fixed length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Walk(pub Vec<usize>);

impl Walk {
    pub fn nodes(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl SparseGraph {
    /// Builds a graph from a directed edge list.
    ///
    /// Edges are stored exactly as given; callers that want an undirected
    /// graph must list both directions.
    pub fn from_edges(num_nodes: usize, edges: &[(usize, usize, f64)]) -> Result<Self> {
        for (index, &(src, dst, weight)) in edges.iter().enumerate() {
            if src >= num_nodes || dst >= num_nodes {
                return Err(Error::EdgeOutOfRange {
                    index,
                    src,
                    dst,
                    num_nodes,
                });
            }
            if !weight.is_finite() || weight < 0.0 {
                return Err(Error::InvalidWeight {
                    index,
                    src,
                    dst,
                    weight,
                });
            }
        }

        let mut sorted: Vec<(usize, usize, f64)> =
            edges.iter().copied().filter(|e| e.2 > 0.0).collect();
        // Sorting by (src, dst, weight) makes duplicate summation independent
        // of the input order, so the CSR content is bitwise canonical.
        sorted.sort_by(|a, b| {
            (a.0, a.1)
                .cmp(&(b.0, b.1))
                .then_with(|| a.2.total_cmp(&b.2))
        });

        let mut row_offsets = vec![0usize; num_nodes + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut weights: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (src, dst, w) in sorted {
            if last == Some((src, dst)) {
                *weights.last_mut().expect("previous edge exists") += w;
                continue;
            }
            last = Some((src, dst));
            row_offsets[src + 1] += 1;
            col_indices.push(dst);
            weights.push(w);
        }
        for i in 0..num_nodes {
            row_offsets[i + 1] += row_offsets[i];
        }

        let mut cumulative = Vec::with_capacity(weights.len());
        for i in 0..num_nodes {
            let mut acc = 0.0;
            for &w in &weights[row_offsets[i]..row_offsets[i + 1]] {
                acc += w;
                cumulative.push(acc);
            }
        }

        Ok(Self {
            num_nodes,
            row_offsets,
            col_indices,
            weights,
            cumulative,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    /// Number of stored directed edges.
    pub fn num_edges(&self) -> usize {
        self.col_indices.len()
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Out-neighbors of `i` with their weights, sorted by neighbor id.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        self.col_indices[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.row_offsets[i + 1] - self.row_offsets[i]
    }

    /// Weighted degree `d_ii = sum_j a_ij`.
    pub fn weighted_degree(&self, i: usize) -> f64 {
        let end = self.row_offsets[i + 1];
        if end == self.row_offsets[i] {
            0.0
        } else {
            self.cumulative[end - 1]
        }
    }

    /// Weight of the edge `i -> j`, zero when absent.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        let range = self.row_offsets[i]..self.row_offsets[i + 1];
        match self.col_indices[range.clone()].binary_search(&j) {
            Ok(pos) => self.weights[range.start + pos],
            Err(_) => 0.0,
        }
    }

    /// Iterates over all stored edges as `(src, dst, weight)`.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.num_nodes).flat_map(move |i| self.neighbors(i).map(move |(j, w)| (i, j, w)))
    }

    /// True when every edge `(i, j, w)` has a mirror `(j, i, w)`.
    pub fn is_symmetric(&self) -> bool {
        self.edges().all(|(i, j, w)| self.weight(j, i) == w)
    }

    /// True when the graph has at least one edge between two distinct nodes.
    pub fn has_proper_edge(&self) -> bool {
        self.edges().any(|(i, j, _)| i != j)
    }

    /// Draws a neighbor of `i` with probability proportional to edge weight.
    ///
    /// Returns `None` for a dangling node (no out-edges).
    pub fn sample_neighbor<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> Option<usize> {
        let start = self.row_offsets[i];
        let end = self.row_offsets[i + 1];
        if start == end {
            return None;
        }
        let row = &self.cumulative[start..end];
        let total = row[row.len() - 1];
        let target = rng.gen::<f64>() * total;
        // First index whose running sum exceeds the target.
        let pos = row.partition_point(|&c| c <= target).min(row.len() - 1);
        Some(self.col_indices[start + pos])
    }

    /// Next step of a walk from `i`. Dangling nodes take a self-loop step.
    pub fn step<R: Rng + ?Sized>(&self, i: usize, rng: &mut R) -> usize {
        self.sample_neighbor(i, rng).unwrap_or(i)
    }

    /// Random walk of exactly `length` nodes with a uniformly drawn start.
    ///
    /// # Panics
    /// Panics when the graph has no nodes.
    pub fn random_walk<R: Rng + ?Sized>(&self, length: usize, rng: &mut R) -> Walk {
        assert!(self.num_nodes > 0, "random walk on an empty graph");
        let start = rng.gen_range(0..self.num_nodes);
        self.random_walk_from(start, length, rng)
    }

    /// Random walk of exactly `length` nodes starting at `start`.
    pub fn random_walk_from<R: Rng + ?Sized>(
        &self,
        start: usize,
        length: usize,
        rng: &mut R,
    ) -> Walk {
        let mut nodes = Vec::with_capacity(length);
        if length == 0 {
            return Walk(nodes);
        }
        let mut current = start;
        nodes.push(current);
        for _ in 1..length {
            current = self.step(current, rng);
            nodes.push(current);
        }
        Walk(nodes)
    }

    /// Pairwise smoothness penalty `sum_{i,j} a_ij (f_i - f_j)^2`.
    pub fn laplacian_quadratic(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.num_nodes {
            return Err(Error::InvalidInput(format!(
                "laplacian_quadratic: got {} values for {} nodes",
                f.len(),
                self.num_nodes
            )));
        }
        Ok(self
            .edges()
            .map(|(i, j, w)| {
                let diff = f[i] - f[j];
                w * diff * diff
            })
            .sum())
    }

    /// Connected component id per node, treating edges as undirected.
    pub fn connected_components(&self) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..self.num_nodes).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for (i, j, _) in self.edges() {
            let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
            if ri != rj {
                parent[ri.max(rj)] = ri.min(rj);
            }
        }
        let mut label = vec![usize::MAX; self.num_nodes];
        let mut next = 0;
        let mut out = vec![0; self.num_nodes];
        for i in 0..self.num_nodes {
            let root = find(&mut parent, i);
            if label[root] == usize::MAX {
                label[root] = next;
                next += 1;
            }
            out[i] = label[root];
        }
        out
    }
}
