use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

/// Unweighted k-nearest-neighbor regression under Euclidean distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnRegressor {
    pub x: Matrix,
    pub y: Vec<f64>,
    pub k: usize,
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Indices of the `k` rows of `reference` closest to `query`; ties go to the lower index.
pub fn nearest_rows(reference: &Matrix, query: &[f64], k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize)> = reference
        .rows_iter()
        .enumerate()
        .map(|(i, r)| (squared_euclidean(r, query), i))
        .collect();
    let k = k.min(dist.len());
    let by = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() && k > 0 {
        dist.select_nth_unstable_by(k - 1, by);
        dist.truncate(k);
    }
    dist.sort_unstable_by(by);
    dist.into_iter().map(|(_, i)| i).collect()
}

impl KnnRegressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let nb = nearest_rows(&self.x, x, self.k);
        nb.iter().map(|&i| self.y[i]).sum::<f64>() / nb.len() as f64
    }
}

pub fn fit_knn_regressor(x: &Matrix, y: &[f64], k: usize) -> Result<KnnRegressor> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    if x.nrows() == 0 {
        return Err(Error::NoRows);
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    Ok(KnnRegressor {
        x: x.clone(),
        y: y.to_vec(),
        k,
    })
}
