//! Communication topology and Laplacian spectrum.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::LAPLACIAN_ZERO_TOL;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("graph needs at least one vertex")]
    Empty,
    #[error("edge ({0}, {1}) references a vertex outside 1..={2}")]
    OutOfRange(usize, usize, usize),
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("edge ({0}, {1}) has non-positive or non-finite weight {2}")]
    NonPositiveWeight(usize, usize, f64),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("graph is disconnected: λ₂ = {0:e}")]
    Disconnected(f64),
}

/// Weighted undirected edge between 0-based vertices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Undirected weighted graph with its Laplacian `L = 𝐃 − 𝐀` and sorted
/// Laplacian spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    adjacency: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    spectrum: Vec<f64>,
    /// Ascending neighbor ids with weights, per vertex.
    neighbors: Vec<Vec<(usize, f64)>>,
    edges: Vec<Edge>,
}

impl CommGraph {
    /// Builds a graph on `p` vertices from 1-based `(i, j, weight)` triples.
    pub fn build(p: usize, edges: &[(usize, usize, f64)]) -> Result<Self, GraphError> {
        if p == 0 {
            return Err(GraphError::Empty);
        }
        let mut seen = BTreeSet::new();
        let mut adjacency = DMatrix::zeros(p, p);
        let mut stored = Vec::with_capacity(edges.len());
        for &(i, j, w) in edges {
            if i == 0 || j == 0 || i > p || j > p {
                return Err(GraphError::OutOfRange(i, j, p));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(GraphError::NonPositiveWeight(i, j, w));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(GraphError::DuplicateEdge(i, j));
            }
            adjacency[(i - 1, j - 1)] = w;
            adjacency[(j - 1, i - 1)] = w;
            stored.push(Edge { i: i - 1, j: j - 1, weight: w });
        }

        let degree = DMatrix::from_diagonal(&DVector::from_iterator(
            p,
            adjacency.row_iter().map(|r| r.sum()),
        ));
        let laplacian = &degree - &adjacency;
        let mut spectrum: Vec<f64> =
            laplacian.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        spectrum.sort_by(f64::total_cmp);
        let neighbors = (0..p)
            .map(|i| {
                (0..p).filter(|&j| adjacency[(i, j)] > 0.0).map(|j| (j, adjacency[(i, j)])).collect()
            })
            .collect();
        Ok(Self { adjacency, laplacian, spectrum, neighbors, edges: stored })
    }

    /// Unit-weight cycle `1 – 2 – … – p – 1`.
    pub fn cycle(p: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = match p {
            0 | 1 => Vec::new(),
            2 => vec![(1, 2, 1.0)],
            _ => (1..=p).map(|i| (i, i % p + 1, 1.0)).collect(),
        };
        Self::build(p, &edges)
    }

    /// Unit-weight path `1 – 2 – … – p`.
    pub fn path(p: usize) -> Result<Self, GraphError> {
        let edges: Vec<_> = (1..p).map(|i| (i, i + 1, 1.0)).collect();
        Self::build(p, &edges)
    }

    /// Unit-weight complete graph.
    pub fn complete(p: usize) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        for i in 1..=p {
            for j in i + 1..=p {
                edges.push((i, j, 1.0));
            }
        }
        Self::build(p, &edges)
    }

    pub fn p(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    /// Laplacian eigenvalues in ascending order.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    /// Nonzero Laplacian eigenvalues in ascending order.
    pub fn nonzero_spectrum(&self) -> Vec<f64> {
        self.spectrum.iter().copied().filter(|&l| l > LAPLACIAN_ZERO_TOL).collect()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, f64)] {
        &self.neighbors[i]
    }

    /// Edges with 0-based endpoints, in insertion order.
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Second-smallest Laplacian eigenvalue (0 for a single vertex).
    pub fn algebraic_connectivity(&self) -> f64 {
        self.spectrum.get(1).copied().unwrap_or(0.0)
    }

    /// `(L x)_i = Σ_j a_ij (x_i − x_j)`, summed over neighbors in ascending id order.
    pub fn laplacian_action(&self, values: &[DVector<f64>], i: usize) -> DVector<f64> {
        let mut acc = DVector::zeros(values[i].len());
        for &(j, w) in &self.neighbors[i] {
            acc += (&values[i] - &values[j]) * w;
        }
        acc
    }

    /// Breadth-first reachability from vertex 0.
    pub fn is_reachable_connected(&self) -> bool {
        let p = self.p();
        let mut seen = vec![false; p];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, _) in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

/// Spectral connectivity test: `λ₂(L) > 1e-10`. A lone vertex has no
/// nonzero Laplacian eigenvalue and is reported as not connected, since
/// nothing downstream is defined for it.
pub fn check_connected(g: &CommGraph) -> bool {
    g.algebraic_connectivity() > LAPLACIAN_ZERO_TOL
}

/// `(λ₂, λ_max)` of a connected graph.
pub fn laplacian_extremes(g: &CommGraph) -> Result<(f64, f64), GraphError> {
    if !check_connected(g) {
        return Err(GraphError::Disconnected(g.algebraic_connectivity()));
    }
    let max = *g.spectrum().last().expect("non-empty spectrum");
    Ok((g.algebraic_connectivity(), max))
}
