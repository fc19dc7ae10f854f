//! k-means on the fused embeddings and the ACC / NMI / purity triple.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numkit::par::{self, Exec};
use crate::numkit::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub restarts: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            restarts: 10,
            max_iters: 300,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    pub assignments: Vec<usize>,
    /// k × d.
    pub centers: Matrix,
    pub inertia: f64,
    pub restarts_run: usize,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest center per row (lower index on ties) and the total squared distance.
fn assign(points: &Matrix, centers: &Matrix) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let labels = (0..points.rows())
        .map(|i| {
            let p = points.row(i);
            let (best, d) = (0..centers.rows())
                .map(|c| (c, sq_dist(p, centers.row(c))))
                .fold((0, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
            total += d;
            best
        })
        .collect();
    (labels, total)
}

fn update_centers(points: &Matrix, labels: &[usize], centers: &mut Matrix) {
    let (k, d) = centers.shape();
    let mut sums = Matrix::zeros(k, d);
    let mut counts = vec![0usize; k];
    for (i, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
            *s += v;
        }
    }
    for c in 0..k {
        // Empty clusters keep their previous center.
        if counts[c] > 0 {
            let inv = 1.0 / counts[c] as f64;
            for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                *dst = s * inv;
            }
        }
    }
}

fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut dist: Vec<f64> = (0..n)
        .map(|i| sq_dist(points.row(i), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = dist.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            if dist[pick] == 0.0 {
                pick = dist.iter().rposition(|&d| d > 0.0).unwrap_or(pick);
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        chosen.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min(sq_dist(points.row(i), points.row(next)));
        }
    }
    points.select_rows(&chosen)
}

fn lloyd(points: &Matrix, cfg: &KMeansConfig, restart: usize) -> ClusterResult {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(restart as u64);
    let mut centers = kmeans_plus_plus(points, cfg.k, &mut rng);
    let (mut labels, mut inertia) = assign(points, &centers);
    let mut history = vec![inertia];
    for _ in 0..cfg.max_iters {
        update_centers(points, &labels, &mut centers);
        let (next, next_inertia) = assign(points, &centers);
        history.push(next_inertia);
        inertia = next_inertia;
        if next == labels {
            break;
        }
        labels = next;
    }
    ClusterResult {
        assignments: labels,
        centers,
        inertia,
        restarts_run: 1,
        inertia_history: history,
    }
}

/// Lloyd's algorithm with k-means++ seeding; best of `restarts` by inertia.
pub fn kmeans(points: &Matrix, cfg: &KMeansConfig) -> Result<ClusterResult> {
    let n = points.rows();
    if cfg.k == 0 || cfg.k > n {
        return Err(Error::param(format!("k-means with k={} on {n} points", cfg.k)));
    }
    if !points.is_finite() {
        return Err(Error::Input("k-means input has non-finite values".into()));
    }
    let restarts = cfg.restarts.max(1);
    let runs = par::map_range(Exec::default(), restarts, |r| lloyd(points, cfg, r));
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    best.restarts_run = restarts;
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricTriple {
    pub acc: f64,
    pub nmi: f64,
    pub pur: f64,
}

/// Dense relabelling of arbitrary ids (first-seen order).
fn densify(ids: &[usize]) -> (Vec<usize>, usize) {
    let mut map = HashMap::new();
    let dense = ids
        .iter()
        .map(|&x| {
            let next = map.len();
            *map.entry(x).or_insert(next)
        })
        .collect();
    (dense, map.len())
}

/// Rows are predicted clusters, columns true classes.
fn contingency(labels: &[usize], predictions: &[usize]) -> Result<Vec<Vec<usize>>> {
    if labels.len() != predictions.len() {
        return Err(Error::shape(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let (u, nu) = densify(labels);
    let (v, nv) = densify(predictions);
    let mut table = vec![vec![0usize; nu]; nv];
    for (a, b) in u.iter().zip(&v) {
        table[*b][*a] += 1;
    }
    Ok(table)
}

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method).
/// Returns `col_of_row`.
pub fn hungarian_min(cost: &[Vec<i64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials formulation; column 0 is a virtual source.
    let inf = i64::MAX / 4;
    let mut u = vec![0i64; n + 1];
    let mut v = vec![0i64; n + 1];
    let mut row_of_col = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of_col[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of_col[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of_col[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of_col[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of_col[j0] = row_of_col[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of_row = vec![0; n];
    for j in 1..=n {
        if row_of_col[j] > 0 {
            col_of_row[row_of_col[j] - 1] = j - 1;
        }
    }
    col_of_row
}

/// Best one-to-one cluster→class matching accuracy.
pub fn accuracy(labels: &[usize], predictions: &[usize]) -> Result<f64> {
    let table = contingency(labels, predictions)?;
    let n = labels.len();
    if n == 0 {
        return Ok(1.0);
    }
    let size = table.len().max(table.first().map_or(0, Vec::len));
    let max = table.iter().flatten().copied().max().unwrap_or(0) as i64;
    let cost: Vec<Vec<i64>> = (0..size)
        .map(|r| {
            (0..size)
                .map(|c| max - table.get(r).and_then(|row| row.get(c)).copied().unwrap_or(0) as i64)
                .collect()
        })
        .collect();
    let matching = hungarian_min(&cost);
    let matched: usize = matching
        .iter()
        .enumerate()
        .map(|(r, &c)| table.get(r).and_then(|row| row.get(c)).copied().unwrap_or(0))
        .sum();
    Ok(matched as f64 / n as f64)
}

fn entropy(counts: impl Iterator<Item = usize>, n: f64) -> f64 {
    counts
        .filter(|&c| c > 0)
        .map(|c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// `I(U;V) / sqrt(H(U)·H(V))` with natural logs. If either entropy is
/// zero: 1 when the partitions coincide, 0 otherwise.
pub fn nmi(labels: &[usize], predictions: &[usize]) -> Result<f64> {
    let table = contingency(labels, predictions)?;
    let n = labels.len();
    if n == 0 {
        return Ok(1.0);
    }
    let nf = n as f64;
    let nv = table.len();
    let nu = table.first().map_or(0, Vec::len);
    let rows: Vec<usize> = table.iter().map(|r| r.iter().sum()).collect();
    let cols: Vec<usize> = (0..nu).map(|c| table.iter().map(|r| r[c]).sum()).collect();
    let hv = entropy(rows.iter().copied(), nf);
    let hu = entropy(cols.iter().copied(), nf);
    if hu == 0.0 || hv == 0.0 {
        let identical = nu == nv && table.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1);
        return Ok(if identical { 1.0 } else { 0.0 });
    }
    let mut mi = 0.0;
    for (r, row) in table.iter().enumerate() {
        for (c, &count) in row.iter().enumerate() {
            if count > 0 {
                let pij = count as f64 / nf;
                mi += pij * (pij * nf * nf / (rows[r] as f64 * cols[c] as f64)).ln();
            }
        }
    }
    Ok((mi / (hu * hv).sqrt()).clamp(0.0, 1.0))
}

/// Fraction of samples that belong to their cluster's majority class.
pub fn purity(labels: &[usize], predictions: &[usize]) -> Result<f64> {
    let table = contingency(labels, predictions)?;
    if labels.is_empty() {
        return Ok(1.0);
    }
    let majority: usize = table.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum();
    Ok(majority as f64 / labels.len() as f64)
}

pub fn metrics(labels: &[usize], predictions: &[usize]) -> Result<MetricTriple> {
    Ok(MetricTriple {
        acc: accuracy(labels, predictions)?,
        nmi: nmi(labels, predictions)?,
        pur: purity(labels, predictions)?,
    })
}
