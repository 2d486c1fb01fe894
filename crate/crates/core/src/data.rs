//! Tabular datasets with an explicit missingness mask, CSV ingestion,
//! standardization and deterministic stratified splitting.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Value stored in every masked cell. Learners never read it.
pub const MISSING_SENTINEL: f64 = f64::NAN;

pub const DEFAULT_MISSING_TOKENS: [&str; 4] = ["", "NA", "NaN", "?"];

/// Feature matrix with a missingness mask and a binary target.
#[derive(Debug, Clone)]
pub struct Dataset {
    values: Matrix,
    mask: Vec<bool>,
    target: Vec<u8>,
    column_names: Vec<String>,
    row_ids: Vec<usize>,
}

impl Dataset {
    /// Validates dimensions and the binary target, and overwrites masked cells
    /// with [`MISSING_SENTINEL`].
    pub fn new(
        mut values: Matrix,
        mask: Vec<bool>,
        target: Vec<u8>,
        column_names: Vec<String>,
        row_ids: Vec<usize>,
    ) -> Result<Self> {
        let (n, d) = (values.nrows(), values.ncols());
        if mask.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                found: mask.len(),
            });
        }
        if target.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: target.len(),
            });
        }
        if row_ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: row_ids.len(),
            });
        }
        if column_names.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: column_names.len(),
            });
        }
        if let Some((row, &t)) = target.iter().enumerate().find(|(_, t)| **t > 1) {
            return Err(Error::NonBinaryTarget {
                row,
                value: t.to_string(),
            });
        }
        let mut seen = HashSet::new();
        for name in &column_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
        }
        for i in 0..n {
            for j in 0..d {
                if mask[i * d + j] {
                    values.set(i, j, MISSING_SENTINEL);
                } else if !values.get(i, j).is_finite() {
                    return Err(Error::NonFinite(format!("cell ({i}, {j})")));
                }
            }
        }
        Ok(Dataset {
            values,
            mask,
            target,
            column_names,
            row_ids,
        })
    }

    /// Complete dataset with default column names and row ids `0..n`.
    pub fn complete(values: Matrix, target: Vec<u8>) -> Result<Self> {
        let (n, d) = (values.nrows(), values.ncols());
        let names = (0..d).map(|j| format!("x{j}")).collect();
        Dataset::new(values, vec![false; n * d], target, names, (0..n).collect())
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn target(&self) -> &[u8] {
        &self.target
    }

    pub fn column_names(&self) -> &[String] {
        &self.column_names
    }

    pub fn row_ids(&self) -> &[usize] {
        &self.row_ids
    }

    #[inline]
    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.mask[row * self.ncols() + col]
    }

    /// The cell value, or `None` when masked.
    #[inline]
    pub fn observed(&self, row: usize, col: usize) -> Option<f64> {
        if self.is_missing(row, col) {
            None
        } else {
            Some(self.values.get(row, col))
        }
    }

    pub fn row_mask(&self, row: usize) -> &[bool] {
        let d = self.ncols();
        &self.mask[row * d..(row + 1) * d]
    }

    pub fn missing_count(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn column_missing_count(&self, col: usize) -> usize {
        (0..self.nrows()).filter(|&i| self.is_missing(i, col)).count()
    }

    pub fn positive_count(&self) -> usize {
        self.target.iter().filter(|t| **t == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.positive_count();
        pos > 0 && pos < self.nrows()
    }

    /// Rows at `indices` (by position), preserving row ids.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let d = self.ncols();
        let mut mask = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            mask.extend_from_slice(self.row_mask(i));
        }
        Dataset {
            values: self.values.select_rows(indices),
            mask,
            target: indices.iter().map(|&i| self.target[i]).collect(),
            column_names: self.column_names.clone(),
            row_ids: indices.iter().map(|&i| self.row_ids[i]).collect(),
        }
    }

    /// Same rows and target with a replaced mask. Newly masked cells get the sentinel;
    /// cells unmasked here must have been observed before.
    pub(crate) fn with_mask(&self, mask: Vec<bool>) -> Result<Dataset> {
        Dataset::new(
            self.values.clone(),
            mask,
            self.target.clone(),
            self.column_names.clone(),
            self.row_ids.clone(),
        )
    }

    pub(crate) fn with_values(&self, values: Matrix) -> Result<Dataset> {
        Dataset::new(
            values,
            self.mask.clone(),
            self.target.clone(),
            self.column_names.clone(),
            self.row_ids.clone(),
        )
    }
}

/// Reads a headered CSV. Cells equal to one of `missing_tokens` (after trimming)
/// become masked; the target column must be fully observed and binary.
pub fn load_csv(path: &Path, target_column: &str, missing_tokens: &[&str]) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, target_column, missing_tokens)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    target_column: &str,
    missing_tokens: &[&str],
) -> Result<Dataset> {
    read_csv_inner(reader, Some(target_column), missing_tokens)
}

/// Reads a headered CSV without a target column, e.g. samples to be scored.
/// Every column is a feature; the target is filled with zeros and carries no meaning.
pub fn load_unlabeled_csv(path: &Path, missing_tokens: &[&str]) -> Result<Dataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv_inner(file, None, missing_tokens)
}

fn read_csv_inner<R: std::io::Read>(
    reader: R,
    target_column: Option<&str>,
    missing_tokens: &[&str],
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateColumn(h.clone()));
        }
    }
    let target_idx = match target_column {
        Some(t) => Some(
            headers
                .iter()
                .position(|h| h == t)
                .ok_or_else(|| Error::UnknownColumn(t.to_string()))?,
        ),
        None => None,
    };
    let feature_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != target_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let is_missing = |s: &str| missing_tokens.iter().any(|t| *t == s);
    let d = feature_names.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut target = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != headers.len() {
            return Err(Error::DimensionMismatch {
                expected: headers.len(),
                found: record.len(),
            });
        }
        if target_idx.is_none() {
            target.push(0);
        }
        for (j, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            if Some(j) == target_idx {
                if is_missing(cell) {
                    return Err(Error::MissingTarget { row });
                }
                let t = match cell.parse::<f64>() {
                    Ok(v) if v == 0.0 => 0,
                    Ok(v) if v == 1.0 => 1,
                    _ => {
                        return Err(Error::NonBinaryTarget {
                            row,
                            value: cell.to_string(),
                        });
                    }
                };
                target.push(t);
            } else if is_missing(cell) {
                values.push(MISSING_SENTINEL);
                mask.push(true);
            } else {
                let v: f64 = cell.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                    Error::Parse {
                        row,
                        column: headers[j].clone(),
                        value: cell.to_string(),
                    }
                })?;
                values.push(v);
                mask.push(false);
            }
        }
    }
    let n = target.len();
    if n == 0 {
        return Err(Error::NoRows);
    }
    Dataset::new(Matrix::from_vec(n, d, values)?, mask, target, feature_names, (0..n).collect())
}

/// Writes features (masked cells as empty strings) followed by the target column.
pub fn write_csv(data: &Dataset, path: &Path, target_column: &str) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = data.column_names().iter().map(String::as_str).collect();
    header.push(target_column);
    w.write_record(&header)?;
    for i in 0..data.nrows() {
        let mut rec: Vec<String> = (0..data.ncols())
            .map(|j| data.observed(i, j).map_or_else(String::new, |v| v.to_string()))
            .collect();
        rec.push(data.target()[i].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Per-column location and scale over observed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ScalerStats {
    /// Stats over a complete matrix.
    pub fn fit_matrix(m: &Matrix) -> Result<Self> {
        let mut mean = Vec::with_capacity(m.ncols());
        let mut std = Vec::with_capacity(m.ncols());
        for j in 0..m.ncols() {
            let col = m.column(j);
            let (mu, sd) = mean_std(&col).ok_or(Error::FullyMissingColumn(j))?;
            mean.push(mu);
            std.push(sd);
        }
        Ok(ScalerStats { mean, std })
    }

    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for (j, (o, x)) in out.iter_mut().zip(row).enumerate() {
            *o = (x - self.mean[j]) / self.std[j];
        }
    }

    pub fn transform_matrix(&self, m: &Matrix) -> Matrix {
        let mut out = m.clone();
        for i in 0..m.nrows() {
            self.transform_row(m.row(i), out.row_mut(i));
        }
        out
    }
}

/// Population mean and standard deviation; a zero spread reports std 1.
pub(crate) fn mean_std(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.is_empty() {
        return None;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    Some((mean, if sd > 0.0 { sd } else { 1.0 }))
}

pub fn fit_standardizer(data: &Dataset) -> Result<ScalerStats> {
    let mut mean = Vec::with_capacity(data.ncols());
    let mut std = Vec::with_capacity(data.ncols());
    for j in 0..data.ncols() {
        let obs: Vec<f64> = (0..data.nrows()).filter_map(|i| data.observed(i, j)).collect();
        let (mu, sd) = mean_std(&obs).ok_or(Error::FullyMissingColumn(j))?;
        mean.push(mu);
        std.push(sd);
    }
    Ok(ScalerStats { mean, std })
}

pub fn apply_standardizer(data: &Dataset, stats: &ScalerStats) -> Result<Dataset> {
    check_columns(data.ncols(), stats)?;
    let mut values = data.values().clone();
    for i in 0..data.nrows() {
        for j in 0..data.ncols() {
            if let Some(x) = data.observed(i, j) {
                values.set(i, j, (x - stats.mean[j]) / stats.std[j]);
            }
        }
    }
    data.with_values(values)
}

pub fn invert_standardizer(data: &Dataset, stats: &ScalerStats) -> Result<Dataset> {
    check_columns(data.ncols(), stats)?;
    let mut values = data.values().clone();
    for i in 0..data.nrows() {
        for j in 0..data.ncols() {
            if let Some(z) = data.observed(i, j) {
                values.set(i, j, z * stats.std[j] + stats.mean[j]);
            }
        }
    }
    data.with_values(values)
}

fn check_columns(d: usize, stats: &ScalerStats) -> Result<()> {
    if stats.mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: stats.mean.len(),
            found: d,
        });
    }
    Ok(())
}

/// Assignment of rows to `k` cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub assignments: Vec<usize>,
    pub seed: u64,
}

impl FoldPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len()).filter(|&i| self.assignments[i] != fold).collect()
    }
}

/// Positions of each class, in ascending order.
fn class_positions(targets: &[u8], indices: &[usize]) -> [Vec<usize>; 2] {
    let mut out = [Vec::new(), Vec::new()];
    for &i in indices {
        out[usize::from(targets[i])].push(i);
    }
    out
}

/// Stratified k-fold assignment.
///
/// Each class is shuffled; the negatives followed by the positives are then
/// dealt round-robin across folds. Dealing one contiguous sequence keeps fold
/// sizes within one of each other, and so does each class's run.
pub fn stratified_kfold(data: &Dataset, k: usize, seed: u64) -> Result<FoldPlan> {
    stratified_kfold_targets(data.target(), k, seed)
}

pub fn stratified_kfold_targets(targets: &[u8], k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(invalid(format!("k must be at least 2, got {k}")));
    }
    let all: Vec<usize> = (0..targets.len()).collect();
    let mut classes = class_positions(targets, &all);
    let mut rng = rng::rng_from(seed);
    for (class, members) in classes.iter_mut().enumerate() {
        if members.len() < k {
            return Err(Error::ClassTooSmall {
                class: class as u8,
                count: members.len(),
                required: k,
            });
        }
        members.shuffle(&mut rng);
    }
    let mut assignments = vec![0; targets.len()];
    for (pos, &i) in classes[0].iter().chain(classes[1].iter()).enumerate() {
        assignments[i] = pos % k;
    }
    Ok(FoldPlan {
        k,
        assignments,
        seed,
    })
}

/// Splits a fold's training rows into a stage-1 set (pipeline fitting) and a
/// stage-2 set (error recording), stratified by class.
///
/// The stage-2 total is `round(fraction · n)` clamped to `[1, n − 1]`, shared
/// out between the classes by largest remainder. Both outputs are sorted.
pub fn two_stage_split(
    train_indices: &[usize],
    stage2_fraction: f64,
    seed: u64,
    targets: &[u8],
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(stage2_fraction > 0.0 && stage2_fraction < 1.0) {
        return Err(invalid(format!(
            "stage2_fraction must lie in (0, 1), got {stage2_fraction}"
        )));
    }
    let n = train_indices.len();
    if n < 2 {
        return Err(invalid(format!(
            "{n} training rows cannot fill two non-empty stages"
        )));
    }
    let total = ((stage2_fraction * n as f64).round() as usize).clamp(1, n - 1);

    let mut classes = class_positions(targets, train_indices);
    let quotas: Vec<f64> = classes
        .iter()
        .map(|c| total as f64 * c.len() as f64 / n as f64)
        .collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = total - take.iter().sum::<usize>();
    // largest remainder, ties to the smaller class label
    let mut order = [0usize, 1];
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().cycle() {
        if remaining == 0 {
            break;
        }
        if take[c] < classes[c].len() {
            take[c] += 1;
            remaining -= 1;
        }
    }

    let mut rng = rng::rng_from(seed);
    let mut stage1 = Vec::with_capacity(n - total);
    let mut stage2 = Vec::with_capacity(total);
    for (class, members) in classes.iter_mut().enumerate() {
        members.shuffle(&mut rng);
        stage2.extend_from_slice(&members[..take[class]]);
        stage1.extend_from_slice(&members[take[class]..]);
    }
    stage1.sort_unstable();
    stage2.sort_unstable();
    Ok((stage1, stage2))
}
