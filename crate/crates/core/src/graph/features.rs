use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use super::Network;
use crate::error::{Error, Result};

/// Default convergence tolerance for [`eigencentrality`].
pub const EIGEN_TOL: f64 = 1e-10;
/// Default iteration cap for [`eigencentrality`].
pub const EIGEN_MAX_ITER: usize = 10_000;

/// Per-actor local network features.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalFeatures {
    pub degree: Vec<f64>,
    /// `None` for actors without ties.
    pub inv_network_size: Vec<Option<f64>>,
    pub betweenness: Vec<f64>,
    pub lcc: Vec<f64>,
    pub eigencentrality: Vec<f64>,
}

impl LocalFeatures {
    pub fn compute(net: &Network) -> Result<Self> {
        let degree = net.degree();
        let inv_network_size = degree.iter().map(|&d| (d != 0.0).then(|| 1.0 / d)).collect();
        Ok(Self {
            degree,
            inv_network_size,
            betweenness: betweenness(net),
            lcc: local_clustering(net),
            eigencentrality: eigencentrality(net, EIGEN_TOL, EIGEN_MAX_ITER)?,
        })
    }

    /// Inverse network size as a complete column.
    pub fn inv_size_column(&self) -> Result<Vec<f64>> {
        self.inv_network_size.iter().enumerate().map(|(i, v)| v.ok_or(Error::IsolatedActor(i))).collect()
    }

    /// Looks up a feature column by its keyword
    /// (`degree`, `inv_size`, `betweenness`, `lcc`, `eigencentrality`).
    pub fn column(&self, keyword: &str) -> Option<Result<Vec<f64>>> {
        match keyword {
            "degree" => Some(Ok(self.degree.clone())),
            "inv_size" => Some(self.inv_size_column()),
            "betweenness" => Some(Ok(self.betweenness.clone())),
            "lcc" => Some(Ok(self.lcc.clone())),
            "eigencentrality" => Some(Ok(self.eigencentrality.clone())),
            _ => None,
        }
    }
}

/// Shortest-path betweenness (Brandes accumulation over BFS trees).
///
/// Directed networks sum over ordered pairs; undirected ones over unordered
/// pairs. Pairs with no connecting path contribute nothing.
pub fn betweenness(net: &Network) -> Vec<f64> {
    let n = net.n();
    let mut centrality = vec![0.0; n];
    let mut sigma = vec![0.0f64; n];
    let mut dist = vec![usize::MAX; n];
    let mut delta = vec![0.0f64; n];
    let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut stack = Vec::with_capacity(n);
    let mut queue = VecDeque::with_capacity(n);

    for s in 0..n {
        sigma.fill(0.0);
        dist.fill(usize::MAX);
        delta.fill(0.0);
        preds.iter_mut().for_each(Vec::clear);
        stack.clear();

        sigma[s] = 1.0;
        dist[s] = 0;
        queue.push_back(s);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for &w in net.out_neighbors(v) {
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                centrality[w] += delta[w];
            }
        }
    }
    if !net.is_directed() {
        centrality.iter_mut().for_each(|c| *c /= 2.0);
    }
    centrality
}

/// Local clustering coefficient; zero for actors with fewer than two
/// neighbors. Directed ties are symmetrized first.
pub fn local_clustering(net: &Network) -> Vec<f64> {
    let n = net.n();
    let a = net.adjacency();
    let linked = |i: usize, j: usize| a[(i, j)] != 0.0 || a[(j, i)] != 0.0;
    (0..n)
        .map(|i| {
            let nbrs: Vec<usize> = (0..n).filter(|&j| j != i && linked(i, j)).collect();
            let k = nbrs.len();
            if k < 2 {
                return 0.0;
            }
            let mut ties = 0usize;
            for (x, &u) in nbrs.iter().enumerate() {
                for &v in &nbrs[x + 1..] {
                    if linked(u, v) {
                        ties += 1;
                    }
                }
            }
            ties as f64 / (k * (k - 1) / 2) as f64
        })
        .collect()
}

/// Leading eigenvector of the adjacency skeleton, nonnegative with unit
/// Euclidean norm.
///
/// Iterates on `A + I`, which has the same eigenvectors as `A` but breaks the
/// `lambda` / `-lambda` tie of bipartite graphs, starting from the uniform
/// vector.
pub fn eigencentrality(net: &Network, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if net.edge_count() == 0 {
        return Err(Error::NoEdges);
    }
    let n = net.n();
    let mut x = vec![1.0 / (n as f64).sqrt(); n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        for (i, out) in next.iter_mut().enumerate() {
            *out = x[i] + net.out_neighbors(i).iter().map(|&j| x[j]).sum::<f64>();
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        next.iter_mut().for_each(|v| *v /= norm);
        let step = x.iter().zip(&next).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        std::mem::swap(&mut x, &mut next);
        if step < tol {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence(max_iter))
}

/// Divides each row of `A` by its sum.
pub fn row_normalize(net: &Network) -> Result<DMatrix<f64>> {
    let mut a = net.adjacency().clone();
    for (i, mut row) in a.row_iter_mut().enumerate() {
        let s = row.sum();
        if s == 0.0 {
            return Err(Error::IsolatedActor(i));
        }
        row /= s;
    }
    Ok(a)
}

/// Centering and scaling applied by [`standardize`], kept so reports can be
/// mapped back to original units. Categorical columns carry mean 0, sd 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Centers and scales every non-categorical column to unit sample SD.
pub fn standardize(columns: &DMatrix<f64>, categorical: &[bool]) -> Result<(DMatrix<f64>, Standardization)> {
    let (n, k) = columns.shape();
    if categorical.len() != k {
        return Err(Error::DimensionMismatch(format!(
            "categorical mask has {} flags for {k} columns",
            categorical.len()
        )));
    }
    let mut out = columns.clone();
    let mut means = vec![0.0; k];
    let mut sds = vec![1.0; k];
    for j in 0..k {
        if categorical[j] {
            continue;
        }
        let col: DVector<f64> = columns.column(j).into_owned();
        let mean = col.mean();
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let sd = var.sqrt();
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::ZeroVariance(j));
        }
        out.column_mut(j).iter_mut().for_each(|v| *v = (*v - mean) / sd);
        means[j] = mean;
        sds[j] = sd;
    }
    Ok((out, Standardization { means, sds }))
}
