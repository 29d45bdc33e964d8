//! Weighted undirected communication graphs.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::RealMatrix;

/// Algebraic-connectivity floor below which a graph counts as disconnected.
pub const CONNECTIVITY_TOL: f64 = 1e-9;

/// One undirected edge `i -- j` with positive weight (zero-based node indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
}

/// Connected, undirected, immutable weighted graph.
#[derive(Debug, Clone, PartialEq)]
pub struct CommGraph {
    adjacency: RealMatrix,
}

impl CommGraph {
    /// Builds from a symmetric non-negative adjacency matrix with zero diagonal.
    pub fn from_adjacency(adjacency: RealMatrix) -> Result<Self> {
        let m = adjacency.nrows();
        if adjacency.ncols() != m {
            return Err(Error::InvalidGraph(format!(
                "adjacency must be square, got {}x{}",
                m,
                adjacency.ncols()
            )));
        }
        if m == 0 {
            return Err(Error::InvalidGraph("graph has no nodes".into()));
        }
        for i in 0..m {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::InvalidGraph(format!("self-loop at node {i}")));
            }
            for j in 0..m {
                let w = adjacency[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidGraph(format!("weight a[{i}][{j}] = {w}")));
                }
                if w != adjacency[(j, i)] {
                    return Err(Error::InvalidGraph(format!("a[{i}][{j}] != a[{j}][{i}]")));
                }
            }
        }
        let graph = Self { adjacency };
        if !graph.reachable_from_zero() {
            return Err(Error::Disconnected {
                mu2: graph.algebraic_connectivity(),
            });
        }
        Ok(graph)
    }

    pub fn from_edges(node_count: usize, edges: &[Edge]) -> Result<Self> {
        let mut adj = RealMatrix::zeros(node_count, node_count);
        for e in edges {
            if e.i >= node_count || e.j >= node_count {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) outside {node_count} nodes",
                    e.i, e.j
                )));
            }
            if e.i == e.j {
                return Err(Error::InvalidGraph(format!("self-loop at node {}", e.i)));
            }
            if !(e.weight.is_finite() && e.weight > 0.0) {
                return Err(Error::InvalidGraph(format!(
                    "edge ({}, {}) has weight {}",
                    e.i, e.j, e.weight
                )));
            }
            adj[(e.i, e.j)] += e.weight;
            adj[(e.j, e.i)] += e.weight;
        }
        Self::from_adjacency(adj)
    }

    pub fn ring(m: usize) -> Result<Self> {
        let edges: Vec<Edge> = match m {
            0 | 1 => Vec::new(),
            2 => vec![unit(0, 1)],
            _ => (0..m).map(|i| unit(i, (i + 1) % m)).collect(),
        };
        Self::from_edges(m, &edges)
    }

    pub fn complete(m: usize) -> Result<Self> {
        let edges: Vec<Edge> = (0..m)
            .flat_map(|i| (i + 1..m).map(move |j| unit(i, j)))
            .collect();
        Self::from_edges(m, &edges)
    }

    pub fn path(m: usize) -> Result<Self> {
        let edges: Vec<Edge> = (1..m).map(|i| unit(i - 1, i)).collect();
        Self::from_edges(m, &edges)
    }

    pub fn star(m: usize) -> Result<Self> {
        let edges: Vec<Edge> = (1..m).map(|i| unit(0, i)).collect();
        Self::from_edges(m, &edges)
    }

    pub fn node_count(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.adjacency[(i, j)]
    }

    pub fn adjacency(&self) -> &RealMatrix {
        &self.adjacency
    }

    /// `(j, a_ij)` for every `j` with `a_ij > 0`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.node_count()).filter_map(move |j| {
            let w = self.adjacency[(i, j)];
            (w > 0.0).then_some((j, w))
        })
    }

    /// `L = D - A`.
    pub fn laplacian(&self) -> RealMatrix {
        let m = self.node_count();
        let mut l = -self.adjacency.clone();
        for i in 0..m {
            l[(i, i)] = self.adjacency.row(i).sum();
        }
        l
    }

    pub fn spectrum(&self) -> Result<LaplacianSpectrum> {
        let mut mu: Vec<f64> = self
            .laplacian()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        mu.sort_by(f64::total_cmp);
        if let Some(first) = mu.first_mut() {
            // exact zero eigenvalue (eigenvector 1)
            if first.abs() <= 1e-10 * (1.0 + self.adjacency.norm()) {
                *first = 0.0;
            }
        }
        let spectrum = LaplacianSpectrum { mu };
        if spectrum.len() > 1 && spectrum.mu2() <= CONNECTIVITY_TOL {
            return Err(Error::Disconnected {
                mu2: spectrum.mu2(),
            });
        }
        Ok(spectrum)
    }

    fn algebraic_connectivity(&self) -> f64 {
        let mut mu: Vec<f64> = self
            .laplacian()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        mu.sort_by(f64::total_cmp);
        mu.get(1).copied().unwrap_or(0.0)
    }

    fn reachable_from_zero(&self) -> bool {
        let m = self.node_count();
        let mut seen = vec![false; m];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(i) = queue.pop_front() {
            for (j, _) in self.neighbors(i) {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }
}

fn unit(i: usize, j: usize) -> Edge {
    Edge { i, j, weight: 1.0 }
}

/// Sorted Laplacian eigenvalues `0 = mu_1 <= mu_2 <= ... <= mu_m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaplacianSpectrum {
    pub mu: Vec<f64>,
}

impl LaplacianSpectrum {
    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    /// Algebraic connectivity; 0 for a single node.
    pub fn mu2(&self) -> f64 {
        self.mu.get(1).copied().unwrap_or(0.0)
    }

    pub fn mu_max(&self) -> f64 {
        self.mu.last().copied().unwrap_or(0.0)
    }

    /// `(1 + mu2/mu_m) / (1 - mu2/mu_m)`; infinite when `mu2 = mu_m` or for a
    /// single node, where any Mahler measure is admissible.
    pub fn feasibility_threshold(&self) -> Result<f64> {
        if self.len() <= 1 {
            return Ok(f64::INFINITY);
        }
        let (mu2, mum) = (self.mu2(), self.mu_max());
        if mu2 <= CONNECTIVITY_TOL {
            return Err(Error::Disconnected { mu2 });
        }
        let ratio = mu2 / mum;
        if ratio >= 1.0 - 1e-12 {
            return Ok(f64::INFINITY);
        }
        Ok((1.0 + ratio) / (1.0 - ratio))
    }
}
