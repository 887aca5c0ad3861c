//! Adjacency structure and the local network features used as susceptibility
//! covariates.
//!
//! `A[(i, j)] != 0` means a tie from actor `i` to actor `j`. All centrality
//! features are computed on the unweighted skeleton of `A`; weights only
//! enter the degree (network size) and the model itself.

mod features;
mod io;

pub use features::{
    betweenness, eigencentrality, local_clustering, row_normalize, standardize, LocalFeatures, Standardization,
    EIGEN_MAX_ITER, EIGEN_TOL,
};
pub use io::{read_edge_list, write_features_csv, EdgeList};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A validated social network on `n` actors.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    adjacency: DMatrix<f64>,
    directed: bool,
    out_neighbors: Vec<Vec<usize>>,
}

impl Network {
    /// Checks the raw adjacency matrix and wraps it. Weights are preserved.
    pub fn new(adjacency: DMatrix<f64>, directed: bool) -> Result<Self> {
        let (rows, cols) = adjacency.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        if rows < 2 {
            return Err(Error::TooSmall(rows));
        }
        for i in 0..rows {
            if adjacency[(i, i)] != 0.0 {
                return Err(Error::NonzeroDiagonal(i));
            }
        }
        if !directed {
            for i in 0..rows {
                for j in (i + 1)..rows {
                    if adjacency[(i, j)] != adjacency[(j, i)] {
                        return Err(Error::AsymmetricUndirected { i, j });
                    }
                }
            }
        }
        let out_neighbors = (0..rows).map(|i| (0..rows).filter(|&j| adjacency[(i, j)] != 0.0).collect()).collect();
        Ok(Self { adjacency, directed, out_neighbors })
    }

    /// Builds a network from 0-based edge pairs with unit weights.
    pub fn from_edges(n: usize, edges: &[(usize, usize)], directed: bool) -> Result<Self> {
        let mut a = DMatrix::zeros(n, n);
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::DimensionMismatch(format!("edge ({i}, {j}) out of range for {n} actors")));
            }
            a[(i, j)] = 1.0;
            if !directed {
                a[(j, i)] = 1.0;
            }
        }
        Self::new(a, directed)
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    pub fn adjacency(&self) -> &DMatrix<f64> {
        &self.adjacency
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    /// Skeleton out-neighbors of actor `i`, in increasing order.
    pub fn out_neighbors(&self, i: usize) -> &[usize] {
        &self.out_neighbors[i]
    }

    /// Number of ties, counting each undirected tie once.
    pub fn edge_count(&self) -> usize {
        let arcs: usize = self.out_neighbors.iter().map(Vec::len).sum();
        if self.directed {
            arcs
        } else {
            arcs / 2
        }
    }

    /// Row sums of `A` (out-degree for directed networks, weight sums for
    /// weighted ones).
    pub fn degree(&self) -> Vec<f64> {
        self.adjacency.row_iter().map(|r| r.sum()).collect()
    }

    /// Degree together with its elementwise reciprocal, the inverse network size.
    pub fn degree_and_inverse(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let degree = self.degree();
        let inverse = degree
            .iter()
            .enumerate()
            .map(|(i, &d)| if d == 0.0 { Err(Error::IsolatedActor(i)) } else { Ok(1.0 / d) })
            .collect::<Result<Vec<_>>>()?;
        Ok((degree, inverse))
    }

    /// Relabels actors: actor `i` of the result is actor `perm[i]` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n();
        let a = DMatrix::from_fn(n, n, |i, j| self.adjacency[(perm[i], perm[j])]);
        Self::new(a, self.directed)
    }
}

/// Validates a raw adjacency matrix; see [`Network::new`].
pub fn validate_network(raw_adjacency: DMatrix<f64>, directed: bool) -> Result<Network> {
    Network::new(raw_adjacency, directed)
}
