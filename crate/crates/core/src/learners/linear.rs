//! Bayesian ridge regression fitted by evidence maximization.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Shape and rate of the Gamma hyperpriors on both precisions.
const HYPER: f64 = 1e-6;
const MAX_ITER: usize = 300;
const TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// Precision of the observation noise.
    pub noise_precision: f64,
    /// Precision of the Gaussian prior on the coefficients.
    pub weight_precision: f64,
    pub iterations: usize,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coefficients.iter().zip(x).map(|(w, x)| w * x).sum::<f64>()
    }
}

pub fn fit_bayes_ridge(x: &Matrix, y: &[f64]) -> Result<LinearModel> {
    let (n, d) = (x.nrows(), x.ncols());
    if n == 0 {
        return Err(Error::NoRows);
    }
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: y.len(),
        });
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("bayesian ridge inputs".into()));
    }

    let x_mean: Vec<f64> = (0..d).map(|j| x.column(j).iter().sum::<f64>() / n as f64).collect();
    let y_mean = y.iter().sum::<f64>() / n as f64;
    let xc = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - x_mean[j]);
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));

    let gram = xc.transpose() * &xc;
    let eig = SymmetricEigen::new(gram);
    let eigvals: Vec<f64> = eig.eigenvalues.iter().map(|v| v.max(0.0)).collect();
    let basis = eig.eigenvectors;
    let projected = basis.transpose() * (xc.transpose() * &yc);

    // (XᵀX + ratio·I)⁻¹ Xᵀy through the eigenbasis
    let solve = |ratio: f64| -> DVector<f64> {
        let scaled = DVector::from_iterator(
            d,
            projected.iter().zip(&eigvals).map(|(p, l)| p / (l + ratio)),
        );
        &basis * scaled
    };

    let var_y = yc.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let mut noise = 1.0 / (var_y + f64::EPSILON);
    let mut weight = 1.0;
    let mut coef = DVector::zeros(d);
    let mut iterations = 0;
    for it in 0..MAX_ITER {
        iterations = it + 1;
        let next = solve(weight / noise);
        let sse = (&yc - &xc * &next).norm_squared();
        let gamma: f64 = eigvals.iter().map(|l| noise * l / (weight + noise * l)).sum();
        weight = (gamma + 2.0 * HYPER) / (next.norm_squared() + 2.0 * HYPER);
        noise = (n as f64 - gamma + 2.0 * HYPER) / (sse + 2.0 * HYPER);
        let change: f64 = (&coef - &next).abs().sum();
        coef = next;
        if it > 0 && change < TOL {
            break;
        }
    }
    let coef = solve(weight / noise);
    if coef.iter().any(|c| !c.is_finite()) || !noise.is_finite() || !weight.is_finite() {
        return Err(Error::NonFinite("bayesian ridge solution".into()));
    }
    let intercept = y_mean - coef.iter().zip(&x_mean).map(|(c, m)| c * m).sum::<f64>();
    Ok(LinearModel {
        coefficients: coef.iter().copied().collect(),
        intercept,
        noise_precision: noise,
        weight_precision: weight,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::RngExt;

    #[test]
    fn recovers_noiseless_weights() {
        let mut r = rng::rng_from(3);
        let w = [1.5, -2.0, 0.25];
        let rows: Vec<[f64; 3]> = (0..500)
            .map(|_| [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)])
            .collect();
        let y: Vec<f64> = rows.iter().map(|x| 0.5 + x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()).collect();
        let m = fit_bayes_ridge(&Matrix::from_rows(&rows).unwrap(), &y).unwrap();
        for (c, w) in m.coefficients.iter().zip(&w) {
            assert!((c - w).abs() < 1e-3, "{c} vs {w}");
        }
        assert!((m.intercept - 0.5).abs() < 1e-3);
        assert!(m.noise_precision > 0.0 && m.weight_precision > 0.0);
    }

    #[test]
    fn zero_column_gives_intercept_only() {
        let x = Matrix::from_rows(&[[0.0], [0.0], [0.0], [0.0]]).unwrap();
        let m = fit_bayes_ridge(&x, &[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert_eq!(m.coefficients, vec![0.0]);
        assert!((m.intercept - 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_row_predicts_its_target() {
        let x = Matrix::from_rows(&[[4.0, -1.0]]).unwrap();
        let m = fit_bayes_ridge(&x, &[7.5]).unwrap();
        assert!((m.predict(&[100.0, 3.0]) - 7.5).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let x = Matrix::from_rows(&[[f64::NAN]]).unwrap();
        assert!(matches!(fit_bayes_ridge(&x, &[1.0]), Err(Error::NonFinite(_))));
    }
}
