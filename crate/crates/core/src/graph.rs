//! Undirected graphs and the symmetric-normalized propagation operator.

use std::collections::{BTreeSet, HashSet, VecDeque};

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("edge ({u}, {v}) references a node outside 0..{num_nodes}")]
    EdgeOutOfRange { u: usize, v: usize, num_nodes: usize },
    #[error("node {node} is out of range for a graph with {num_nodes} nodes")]
    NodeOutOfRange { node: usize, num_nodes: usize },
}

/// What was folded away while turning raw links into an undirected edge set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LinkStats {
    /// Links as given, including duplicates, reversed pairs and self-loops.
    pub raw_links: usize,
    /// Distinct unordered pairs that survived.
    pub distinct_edges: usize,
    pub self_loops: usize,
}

/// Simple undirected graph over dense node ids `0..num_nodes`.
///
/// Neighbor lists are sorted and never contain the node itself; the
/// self-loop of the propagation operator is added by
/// [`NormalizedAdjacency::build`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseGraph {
    neighbors: Vec<Vec<usize>>,
    num_edges: usize,
}

impl SparseGraph {
    pub fn empty(num_nodes: usize) -> Self {
        Self {
            neighbors: vec![Vec::new(); num_nodes],
            num_edges: 0,
        }
    }

    /// Builds a graph from unordered pairs. Duplicates, reversed copies and
    /// self-loops are dropped.
    pub fn new<I>(num_nodes: usize, edges: I) -> Result<Self, GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        Self::from_links(num_nodes, edges).map(|(g, _)| g)
    }

    /// Like [`SparseGraph::new`] but also reports how the raw link list was
    /// reduced.
    pub fn from_links<I>(num_nodes: usize, links: I) -> Result<(Self, LinkStats), GraphError>
    where
        I: IntoIterator<Item = (usize, usize)>,
    {
        let mut sets = vec![BTreeSet::new(); num_nodes];
        let mut stats = LinkStats::default();
        for (u, v) in links {
            stats.raw_links += 1;
            if u >= num_nodes || v >= num_nodes {
                return Err(GraphError::EdgeOutOfRange { u, v, num_nodes });
            }
            if u == v {
                stats.self_loops += 1;
                continue;
            }
            if sets[u].insert(v) {
                sets[v].insert(u);
                stats.distinct_edges += 1;
            }
        }
        let graph = Self {
            neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect(),
            num_edges: stats.distinct_edges,
        };
        Ok((graph, stats))
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Sorted neighbor ids of `node`, excluding `node` itself.
    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.num_nodes() && self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Each undirected edge once, as `(low, high)`, in ascending order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(u, ns)| ns.iter().filter(move |&&v| v > u).map(move |&v| (u, v)))
    }

    fn check_node(&self, node: usize) -> Result<(), GraphError> {
        if node < self.num_nodes() {
            Ok(())
        } else {
            Err(GraphError::NodeOutOfRange {
                node,
                num_nodes: self.num_nodes(),
            })
        }
    }

    /// All nodes within `hops` edges of `center`, including `center`,
    /// in ascending id order.
    pub fn k_hop_neighborhood(&self, center: usize, hops: usize) -> Result<Vec<usize>, GraphError> {
        Ok(self.hop_distances(center, hops)?.into_iter().map(|(n, _)| n).collect())
    }

    /// `(node, distance)` for every node within `hops` of `center`,
    /// ascending by node id.
    pub fn hop_distances(&self, center: usize, hops: usize) -> Result<Vec<(usize, usize)>, GraphError> {
        self.check_node(center)?;
        let mut dist = std::collections::BTreeMap::new();
        dist.insert(center, 0usize);
        let mut queue = VecDeque::from([center]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            if d == hops {
                continue;
            }
            for &w in &self.neighbors[u] {
                if let std::collections::btree_map::Entry::Vacant(slot) = dist.entry(w) {
                    slot.insert(d + 1);
                    queue.push_back(w);
                }
            }
        }
        Ok(dist.into_iter().collect())
    }

    /// Copy of the graph with every edge touching a doomed node removed.
    /// Node ids are kept; doomed nodes become isolated.
    pub fn remove_nodes(&self, doomed: &HashSet<usize>) -> SparseGraph {
        if doomed.is_empty() {
            return self.clone();
        }
        let mut num_edges = 0;
        let neighbors: Vec<Vec<usize>> = self
            .neighbors
            .iter()
            .enumerate()
            .map(|(u, ns)| {
                if doomed.contains(&u) {
                    return Vec::new();
                }
                let kept: Vec<usize> = ns.iter().copied().filter(|w| !doomed.contains(w)).collect();
                num_edges += kept.iter().filter(|&&w| w > u).count();
                kept
            })
            .collect();
        SparseGraph { neighbors, num_edges }
    }
}

/// `D̃^{-1/2} (A + I) D̃^{-1/2}` in row-list form.
///
/// Row `i` holds `(j, weight)` pairs sorted by `j`, diagonal included.
/// Weights are computed once per unordered pair, so the matrix is
/// bitwise symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency<T> {
    rows: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> NormalizedAdjacency<T> {
    pub fn build(graph: &SparseGraph) -> Self {
        let n = graph.num_nodes();
        let mut rows: Vec<Vec<(usize, T)>> = (0..n)
            .map(|i| Vec::with_capacity(graph.degree(i) + 1))
            .collect();
        for i in 0..n {
            // Entries with j < i were pushed while visiting row j.
            let d = graph.degree(i) + 1;
            rows[i].push((i, Self::pair_weight(d, d)));
            for &j in graph.neighbors(i).iter().filter(|&&j| j > i) {
                let w = Self::pair_weight(graph.degree(i) + 1, graph.degree(j) + 1);
                rows[i].push((j, w));
                rows[j].push((i, w));
            }
        }
        Self { rows }
    }

    /// `1 / sqrt(d_i * d_j)` for self-loop-inclusive degrees.
    pub fn pair_weight(degree_i: usize, degree_j: usize) -> T {
        T::one() / T::of((degree_i as f64) * (degree_j as f64)).sqrt()
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    /// Stored entries, counting both directions and the diagonal.
    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn row(&self, i: usize) -> &[(usize, T)] {
        &self.rows[i]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<T> {
        let row = self.rows.get(i)?;
        row.binary_search_by_key(&j, |&(k, _)| k).ok().map(|p| row[p].1)
    }

    /// Row-wise aggregation `Â · H`.
    pub fn aggregate(&self, h: ArrayView2<'_, T>) -> Array2<T> {
        let mut out = Array2::zeros((h.nrows(), h.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = out.row_mut(i);
            for &(j, w) in row {
                acc.scaled_add(w, &h.row(j));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<T> {
        let n = self.num_nodes();
        let mut m = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, w) in row {
                m[[i, j]] = w;
            }
        }
        m
    }
}
