//! Mean, KNN and chained-equation imputers.

use serde::{Deserialize, Serialize};

use crate::data::{fit_standardizer, Dataset, ScalerStats};
use crate::error::{invalid, Error, Result};
use crate::learners::{fit_bayes_ridge, fit_gbm, fit_random_forest, Regressor, Task, TreeParams};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputerKind {
    Mean,
    Knn,
    Iterative,
}

/// Regressor fitted per column inside the chained-equation loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backbone {
    BayesRidge,
    RandomForest,
    Gbm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImputerSpec {
    pub kind: ImputerKind,
    pub backbone: Option<Backbone>,
    /// Donor count for the KNN imputer.
    pub k: usize,
    pub max_rounds: usize,
    pub tolerance: f64,
    /// Forest / boosting settings for tree backbones.
    pub tree_params: TreeParams,
}

impl ImputerSpec {
    fn base(kind: ImputerKind, backbone: Option<Backbone>) -> Self {
        ImputerSpec {
            kind,
            backbone,
            k: 5,
            max_rounds: 10,
            tolerance: 1e-3,
            tree_params: TreeParams::default(),
        }
    }

    pub fn mean() -> Self {
        Self::base(ImputerKind::Mean, None)
    }

    pub fn knn(k: usize) -> Self {
        ImputerSpec {
            k,
            ..Self::base(ImputerKind::Knn, None)
        }
    }

    pub fn iterative(backbone: Backbone) -> Self {
        Self::base(ImputerKind::Iterative, Some(backbone))
    }

    /// Parses the short names used on the command line and in configs:
    /// `mean`, `knn`, `ridge-iter`, `rf-iter`, `gbm-iter`.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mean" => Ok(Self::mean()),
            "knn" => Ok(Self::knn(5)),
            "ridge-iter" => Ok(Self::iterative(Backbone::BayesRidge)),
            "rf-iter" => Ok(Self::iterative(Backbone::RandomForest)),
            "gbm-iter" => Ok(Self::iterative(Backbone::Gbm)),
            other => Err(invalid(format!("unknown imputer {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match (self.kind, self.backbone) {
            (ImputerKind::Mean, _) => "mean",
            (ImputerKind::Knn, _) => "knn",
            (ImputerKind::Iterative, Some(Backbone::BayesRidge)) => "ridge-iter",
            (ImputerKind::Iterative, Some(Backbone::RandomForest)) => "rf-iter",
            (ImputerKind::Iterative, Some(Backbone::Gbm)) => "gbm-iter",
            (ImputerKind::Iterative, None) => "iterative",
        }
    }

    pub fn validate(&self) -> Result<()> {
        if (self.kind == ImputerKind::Iterative) != self.backbone.is_some() {
            return Err(invalid("a backbone is required exactly for iterative imputers"));
        }
        if self.kind == ImputerKind::Knn && self.k == 0 {
            return Err(invalid("knn imputer needs k >= 1"));
        }
        if !(self.tolerance >= 0.0) {
            return Err(invalid("tolerance must be non-negative"));
        }
        self.tree_params.validate()
    }
}

/// Training rows kept by the KNN imputer. Masked cells hold 0.0 and are
/// never read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnReference {
    pub values: Matrix,
    pub mask: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterativeState {
    /// Column visiting order: ascending training missing count.
    pub order: Vec<usize>,
    /// Final-round regressor for each column, predicting it from the others.
    pub regressors: Vec<Option<Regressor>>,
    /// Sweeps run during fitting; transform replays the same number.
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedImputer {
    pub spec: ImputerSpec,
    pub means: Vec<f64>,
    pub scaler: ScalerStats,
    pub knn: Option<KnnReference>,
    pub iterative: Option<IterativeState>,
}

/// Distance between two partially observed rows: squared differences over
/// mutually observed coordinates, scaled by `d / overlap`, square-rooted.
/// `None` when no coordinate is observed in both.
pub fn nan_euclidean(a: &[f64], a_mask: &[bool], b: &[f64], b_mask: &[bool]) -> Option<f64> {
    let mut sum = 0.0;
    let mut overlap = 0usize;
    for j in 0..a.len() {
        if !a_mask[j] && !b_mask[j] {
            sum += (a[j] - b[j]).powi(2);
            overlap += 1;
        }
    }
    (overlap > 0).then(|| (sum * a.len() as f64 / overlap as f64).sqrt())
}

fn mean_filled(data: &Dataset, means: &[f64]) -> Matrix {
    let mut m = data.values().clone();
    for i in 0..data.nrows() {
        for j in 0..data.ncols() {
            if data.is_missing(i, j) {
                m.set(i, j, means[j]);
            }
        }
    }
    m
}

fn fit_backbone(backbone: Backbone, x: &Matrix, y: &[f64], params: &TreeParams) -> Result<Regressor> {
    Ok(match backbone {
        Backbone::BayesRidge => Regressor::BayesRidge(fit_bayes_ridge(x, y)?),
        Backbone::RandomForest => Regressor::Forest(fit_random_forest(x, y, params, Task::Regression)?),
        Backbone::Gbm => Regressor::Boosted(fit_gbm(x, y, params, Task::Regression)?),
    })
}

fn without(row: &[f64], skip: usize, buf: &mut Vec<f64>) {
    buf.clear();
    buf.extend_from_slice(&row[..skip]);
    buf.extend_from_slice(&row[skip + 1..]);
}

pub fn fit_imputer(spec: &ImputerSpec, data: &Dataset) -> Result<FittedImputer> {
    spec.validate()?;
    let scaler = fit_standardizer(data)?;
    let means = scaler.mean.clone();
    let mut fitted = FittedImputer {
        spec: spec.clone(),
        means,
        scaler,
        knn: None,
        iterative: None,
    };
    match spec.kind {
        ImputerKind::Mean => {}
        ImputerKind::Knn => {
            let mut values = data.values().clone();
            for (pos, m) in data.mask().iter().enumerate() {
                if *m {
                    values.set(pos / data.ncols(), pos % data.ncols(), 0.0);
                }
            }
            fitted.knn = Some(KnnReference {
                values,
                mask: data.mask().to_vec(),
            });
        }
        ImputerKind::Iterative => {
            fitted.iterative = Some(fit_iterative(spec, data, &fitted)?);
        }
    }
    Ok(fitted)
}

fn fit_iterative(spec: &ImputerSpec, data: &Dataset, base: &FittedImputer) -> Result<IterativeState> {
    let backbone = spec.backbone.expect("validated");
    let (n, d) = (data.nrows(), data.ncols());
    let missing: Vec<usize> = (0..d).map(|j| data.column_missing_count(j)).collect();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by_key(|&j| (missing[j], j));
    let mut regressors: Vec<Option<Regressor>> = vec![None; d];
    if spec.max_rounds == 0 || d < 2 {
        return Ok(IterativeState {
            order,
            regressors,
            rounds: 0,
        });
    }

    let observed_rows: Vec<Vec<usize>> = (0..d)
        .map(|j| (0..n).filter(|&i| !data.is_missing(i, j)).collect())
        .collect();
    let missing_rows: Vec<Vec<usize>> = (0..d)
        .map(|j| (0..n).filter(|&i| data.is_missing(i, j)).collect())
        .collect();

    let fit_column = |x: &Matrix, c: usize, round: usize| -> Result<Regressor> {
        let rows = &observed_rows[c];
        let features = x.select_rows(rows).drop_column(c);
        let target: Vec<f64> = rows.iter().map(|&i| x.get(i, c)).collect();
        let params = spec
            .tree_params
            .clone()
            .with_seed(rng::derive_index(rng::derive_index(spec.tree_params.seed, round as u64), c as u64));
        fit_backbone(backbone, &features, &target, &params)
    };

    let mut x = mean_filled(data, &base.means);
    let mut buf = Vec::with_capacity(d);
    let mut rounds = 0;
    for round in 0..spec.max_rounds {
        rounds = round + 1;
        let mut max_change: f64 = 0.0;
        for &c in order.iter().filter(|&&c| missing[c] > 0) {
            let model = fit_column(&x, c, round)?;
            for &i in &missing_rows[c] {
                without(x.row(i), c, &mut buf);
                let v = model.predict(&buf);
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!("imputed value for column {c}")));
                }
                max_change = max_change.max((v - x.get(i, c)).abs() / base.scaler.std[c]);
                x.set(i, c, v);
            }
            regressors[c] = Some(model);
        }
        if max_change < spec.tolerance {
            break;
        }
    }
    // columns complete in training still get a model for rows missing them later
    for &c in order.iter().filter(|&&c| missing[c] == 0) {
        regressors[c] = Some(fit_column(&x, c, rounds)?);
    }
    Ok(IterativeState {
        order,
        regressors,
        rounds,
    })
}

impl FittedImputer {
    pub fn ncols(&self) -> usize {
        self.means.len()
    }

    /// Complete copy of `data`; observed cells pass through unchanged.
    pub fn transform(&self, data: &Dataset) -> Result<Matrix> {
        if data.ncols() != self.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.ncols(),
                found: data.ncols(),
            });
        }
        match self.spec.kind {
            ImputerKind::Mean => Ok(mean_filled(data, &self.means)),
            ImputerKind::Knn => Ok(self.transform_knn(data)),
            ImputerKind::Iterative => self.transform_iterative(data),
        }
    }

    fn transform_knn(&self, data: &Dataset) -> Matrix {
        let reference = self.knn.as_ref().expect("knn imputer keeps its reference rows");
        let d = self.ncols();
        let k = self.spec.k;
        let ref_z = self.scaler.transform_matrix(&reference.values);
        let mut out = mean_filled(data, &self.means);
        let mut zq = vec![0.0; d];
        for i in 0..data.nrows() {
            let q_mask = data.row_mask(i);
            if !q_mask.iter().any(|m| *m) {
                continue;
            }
            self.scaler.transform_row(data.values().row(i), &mut zq);
            let dist: Vec<Option<f64>> = (0..reference.values.nrows())
                .map(|r| nan_euclidean(&zq, q_mask, ref_z.row(r), &reference.mask[r * d..(r + 1) * d]))
                .collect();
            for c in (0..d).filter(|&c| q_mask[c]) {
                let mut donors: Vec<(f64, usize)> = dist
                    .iter()
                    .enumerate()
                    .filter_map(|(r, dr)| match dr {
                        Some(dr) if !reference.mask[r * d + c] => Some((*dr, r)),
                        _ => None,
                    })
                    .collect();
                if donors.is_empty() {
                    continue;
                }
                donors.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let take = &donors[..k.min(donors.len())];
                let v = take.iter().map(|(_, r)| reference.values.get(*r, c)).sum::<f64>() / take.len() as f64;
                out.set(i, c, v);
            }
        }
        out
    }

    fn transform_iterative(&self, data: &Dataset) -> Result<Matrix> {
        let state = self.iterative.as_ref().expect("iterative imputer keeps its state");
        let mut x = mean_filled(data, &self.means);
        let d = self.ncols();
        let mut buf = Vec::with_capacity(d);
        let missing_rows: Vec<Vec<usize>> = (0..d)
            .map(|j| (0..data.nrows()).filter(|&i| data.is_missing(i, j)).collect())
            .collect();
        for _ in 0..state.rounds {
            for &c in &state.order {
                let Some(model) = &state.regressors[c] else {
                    continue;
                };
                for &i in &missing_rows[c] {
                    without(x.row(i), c, &mut buf);
                    let v = model.predict(&buf);
                    if !v.is_finite() {
                        return Err(Error::NonFinite(format!("imputed value for column {c}")));
                    }
                    x.set(i, c, v);
                }
            }
        }
        Ok(x)
    }
}

/// Fits on `train` and transforms `train` followed by every dataset in `others`.
pub fn impute_dataset(
    spec: &ImputerSpec,
    train: &Dataset,
    others: &[&Dataset],
) -> Result<(FittedImputer, Vec<Matrix>)> {
    let fitted = fit_imputer(spec, train)?;
    let mut out = Vec::with_capacity(others.len() + 1);
    out.push(fitted.transform(train)?);
    for o in others {
        out.push(fitted.transform(o)?);
    }
    Ok((fitted, out))
}
