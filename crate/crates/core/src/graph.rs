//! Adaptive-neighbor affinity graphs and the normalized propagation operator
//! of the structural branch.

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Row-major sparse matrix; each row holds `(column, value)` pairs sorted by
/// column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseMatrix {
    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
        }
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.rows[i]
            .binary_search_by_key(&j, |&(c, _)| c)
            .map(|p| self.rows[i][p].1)
            .unwrap_or(0.0)
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.n();
        let mut out = Array2::zeros((n, n));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out[[i, j]] = v;
            }
        }
        out
    }

    pub fn matmul(&self, h: ArrayView2<f64>) -> Result<Array2<f64>> {
        if h.nrows() != self.n() {
            return Err(Error::shape(format!(
                "operator is {0}x{0}, features have {1} rows",
                self.n(),
                h.nrows()
            )));
        }
        let mut out = Array2::zeros((self.n(), h.ncols()));
        for (i, row) in self.rows.iter().enumerate() {
            let mut dst = out.row_mut(i);
            for &(j, v) in row {
                dst.scaled_add(v, &h.row(j));
            }
        }
        Ok(out)
    }

    /// Largest absolute deviation between entry `(i, j)` and `(j, i)`.
    pub fn asymmetry(&self) -> f64 {
        let mut worst = 0.0_f64;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                worst = worst.max((v - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Closed-form adaptive-neighbor weights of one sample.
///
/// `distances` are squared distances to every candidate (self excluded).
/// Returns `(candidate index, weight)` for the `k` nearest candidates, which
/// solve `min_s Σ d_j s_j + γ‖s‖²` on the probability simplex with `γ`
/// chosen so that exactly `k` weights are active. Ties are broken by index.
pub fn adaptive_neighbor_weights(distances: &[f64], k: usize) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if distances.len() < k + 1 {
        return Err(Error::domain(format!(
            "{} candidates cannot support k = {k} (need k + 1)",
            distances.len()
        )));
    }
    if distances.iter().any(|d| !d.is_finite() || *d < 0.0) {
        return Err(Error::domain("distances must be finite and non-negative"));
    }
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let edge = distances[order[k]];
    let near_sum: f64 = order[..k].iter().map(|&j| distances[j]).sum();
    let denom = k as f64 * edge - near_sum;

    // Zero denominator: the k + 1 nearest candidates are equidistant.
    if !(denom > 1e-14 * k as f64 * edge) {
        let w = 1.0 / k as f64;
        return Ok(order[..k].iter().map(|&j| (j, w)).collect());
    }
    Ok(order[..k].iter().map(|&j| (j, (edge - distances[j]) / denom)).collect())
}

/// Adaptive-neighbor graph over one view.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityGraph {
    /// Row-wise adaptive weights `S`.
    pub weights: SparseMatrix,
    /// `D^{-1/2} (Ŝ + I) D^{-1/2}` with `Ŝ = (S + Sᵀ)/2`.
    pub normalized: SparseMatrix,
    pub k: usize,
}

/// Neighborhood size used when none is configured.
pub fn default_k(n: usize) -> usize {
    10.min(n.saturating_sub(2)).max(1)
}

fn squared_distances(x: ArrayView2<f64>, i: usize) -> Vec<f64> {
    let xi = x.row(i);
    (0..x.nrows())
        .filter(|&j| j != i)
        .map(|j| xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum())
        .collect()
}

pub fn build_graph(x: ArrayView2<f64>, k: usize) -> Result<AffinityGraph> {
    let n = x.nrows();
    if n < k + 2 {
        return Err(Error::domain(format!(
            "graph on {n} samples needs n >= k + 2 = {}",
            k + 2
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("features contain non-finite values"));
    }
    let weights = (0..n)
        .into_par_iter()
        .map(|i| {
            let d = squared_distances(x, i);
            let mut row: Vec<(usize, f64)> = adaptive_neighbor_weights(&d, k)?
                .into_iter()
                // candidate indices skip `i`
                .map(|(j, w)| (if j >= i { j + 1 } else { j }, w))
                .collect();
            row.sort_by_key(|&(j, _)| j);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = SparseMatrix { rows: weights };
    let normalized = normalize_symmetric(&weights);
    Ok(AffinityGraph { weights, normalized, k })
}

impl AffinityGraph {
    /// Graph from an explicit (possibly asymmetric) weight matrix.
    pub fn from_weights(weights: SparseMatrix, k: usize) -> Self {
        let normalized = normalize_symmetric(&weights);
        Self { weights, normalized, k }
    }

    pub fn n(&self) -> usize {
        self.weights.n()
    }
}

/// Symmetrizes `S`, adds self loops and applies symmetric degree
/// normalization.
fn normalize_symmetric(s: &SparseMatrix) -> SparseMatrix {
    let n = s.n();
    let mut sym: Vec<BTreeMap<usize, f64>> = vec![BTreeMap::new(); n];
    for (i, row) in s.rows.iter().enumerate() {
        for &(j, w) in row {
            *sym[i].entry(j).or_insert(0.0) += w / 2.0;
            *sym[j].entry(i).or_insert(0.0) += w / 2.0;
        }
    }
    for (i, row) in sym.iter_mut().enumerate() {
        *row.entry(i).or_insert(0.0) += 1.0;
    }
    let inv_sqrt_deg: Vec<f64> = sym.iter().map(|row| 1.0 / row.values().sum::<f64>().sqrt()).collect();
    SparseMatrix {
        rows: sym
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .map(|(j, a)| (j, a * inv_sqrt_deg[i] * inv_sqrt_deg[j]))
                    .collect()
            })
            .collect(),
    }
}

/// Message matrix: the normalized operator applied to `h`.
pub fn aggregate(graph: &AffinityGraph, h: ArrayView2<f64>) -> Result<Array2<f64>> {
    graph.normalized.matmul(h)
}
