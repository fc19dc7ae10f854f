//! Directed KNN adjacency per view. Row `i` is sample `i`'s ego-graph
//! adjacency vector: ones at its `min(k, n−1)` nearest other samples.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::numkit::par::{self, Exec};
use crate::numkit::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EgoAdjacency {
    pub adjacency: Matrix,
    /// Effective neighbour count, `min(k, n − 1)`.
    pub k: usize,
    pub view: usize,
}

impl EgoAdjacency {
    pub fn n(&self) -> usize {
        self.adjacency.rows()
    }
}

/// Euclidean KNN with self excluded; equal distances go to the lower index.
pub fn knn_adjacency(z: &Matrix, k: usize, view: usize) -> Result<EgoAdjacency> {
    let n = z.rows();
    if n < 2 {
        return Err(Error::Graph(format!("ego graphs need at least 2 nodes, got {n}")));
    }
    if k < 1 {
        return Err(Error::param("knn k must be >= 1"));
    }
    if !z.is_finite() {
        return Err(Error::Input(format!("view {view} embeddings contain non-finite values")));
    }
    let keff = k.min(n - 1);
    let mut adjacency = Matrix::zeros(n, n);
    par::for_each_row(Exec::default(), adjacency.data_mut(), n, |i, row| {
        let zi = z.row(i);
        let mut cand: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let d = zi
                    .iter()
                    .zip(z.row(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
                (d, j)
            })
            .collect();
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1))
        };
        if keff < cand.len() {
            cand.select_nth_unstable_by(keff - 1, by_dist);
        }
        for &(_, j) in &cand[..keff] {
            row[j] = 1.0;
        }
    });
    Ok(EgoAdjacency {
        adjacency,
        k: keff,
        view,
    })
}
