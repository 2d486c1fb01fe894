//! Synthetic amputation of complete data under MCAR, MAR and MNAR.
//!
//! MAR/MNAR masks come from a per-column logistic model over a random subset
//! of "cause" columns; the intercept is calibrated so the expected missing
//! rate of each masked column equals the requested rate.

use rand::seq::{index, IndexedRandom};
use rand::RngExt;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{mean_std, Dataset};
use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mechanism {
    Mcar,
    Mar,
    Mnar,
}

impl std::str::FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mcar" => Ok(Mechanism::Mcar),
            "mar" => Ok(Mechanism::Mar),
            "mnar" => Ok(Mechanism::Mnar),
            other => Err(invalid(format!("unknown mechanism {other:?}"))),
        }
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mechanism::Mcar => "mcar",
            Mechanism::Mar => "mar",
            Mechanism::Mnar => "mnar",
        })
    }
}

/// Fractions steering the logistic mechanisms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AmputeParams {
    /// Share of columns that receive missing values.
    pub column_fraction: f64,
    /// Per-row missing probability in each masked column (also the MCAR cell rate).
    pub rate: f64,
    /// Share of the remaining columns that drive the mask.
    pub cause_fraction: f64,
}

impl Default for AmputeParams {
    fn default() -> Self {
        AmputeParams {
            column_fraction: 0.3,
            rate: 0.3,
            cause_fraction: 3.0 / 7.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmputationPlan {
    pub mechanism: Mechanism,
    pub masked_columns: Vec<usize>,
    pub cause_columns: Vec<usize>,
    /// One weight vector (aligned with `cause_columns`) per masked column.
    pub logistic_weights: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub target_rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskedCell {
    pub row: usize,
    pub column: usize,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct AmputationResult {
    pub dataset: Dataset,
    /// Original values of the newly masked cells, in row-major order.
    pub ground_truth: Vec<MaskedCell>,
    pub plan: AmputationPlan,
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate < 1.0 {
        Ok(())
    } else {
        Err(invalid(format!("rate must lie in (0, 1), got {rate}")))
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn mean_sigmoid(logits: &[f64], b: f64) -> f64 {
    logits.iter().map(|z| sigmoid(z + b)).sum::<f64>() / logits.len() as f64
}

/// Intercept `b` with `mean(sigmoid(z + b)) = target_rate`, by bisection on [-30, 30].
pub fn calibrate_intercept(logits: &[f64], target_rate: f64) -> Result<f64> {
    check_rate(target_rate)?;
    if logits.is_empty() {
        return Ok((target_rate / (1.0 - target_rate)).ln());
    }
    let (mut lo, mut hi) = (-30.0_f64, 30.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mean_sigmoid(logits, mid) < target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn finish(
    input: &Dataset,
    mask: Vec<bool>,
    plan: AmputationPlan,
) -> Result<AmputationResult> {
    let d = input.ncols();
    let mut ground_truth = Vec::new();
    for (pos, (&new, &old)) in mask.iter().zip(input.mask()).enumerate() {
        if new && !old {
            let (row, column) = (pos / d, pos % d);
            ground_truth.push(MaskedCell {
                row,
                column,
                value: input.values().get(row, column),
            });
        }
    }
    Ok(AmputationResult {
        dataset: input.with_mask(mask)?,
        ground_truth,
        plan,
    })
}

/// Masks each observed cell independently with probability `rate`.
///
/// A row that would end up with every cell missing gets one of its newly
/// masked cells (chosen uniformly) restored.
pub fn ampute_mcar(data: &Dataset, rate: f64, seed: u64) -> Result<AmputationResult> {
    check_rate(rate)?;
    let d = data.ncols();
    let mut mask = data.mask().to_vec();
    let mut rng = rng::rng_from(rng::derive(seed, "mcar"));
    mcar_cells(data, &mut mask, &(0..d).collect::<Vec<_>>(), rate, &mut rng);
    for i in 0..data.nrows() {
        let row = &mut mask[i * d..(i + 1) * d];
        if row.iter().all(|m| *m) {
            let fresh: Vec<usize> = (0..d).filter(|&j| !data.is_missing(i, j)).collect();
            if let Some(&j) = fresh.choose(&mut rng) {
                row[j] = false;
            }
        }
    }
    let plan = AmputationPlan {
        mechanism: Mechanism::Mcar,
        masked_columns: (0..d).collect(),
        cause_columns: Vec::new(),
        logistic_weights: Vec::new(),
        intercepts: Vec::new(),
        target_rate: rate,
        seed,
    };
    finish(data, mask, plan)
}

fn mcar_cells(data: &Dataset, mask: &mut [bool], columns: &[usize], rate: f64, rng: &mut rng::StdRng) {
    let d = data.ncols();
    for i in 0..data.nrows() {
        for &j in columns {
            let draw: f64 = rng.random();
            if !data.is_missing(i, j) && draw < rate {
                mask[i * d + j] = true;
            }
        }
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Column counts for the logistic mechanisms: `(masked, cause)`.
pub fn column_allocation(d: usize, params: &AmputeParams) -> Result<(usize, usize)> {
    if d < 2 {
        return Err(invalid(format!(
            "{d} column(s) cannot hold both a masked and a cause column"
        )));
    }
    let masked = ((params.column_fraction * d as f64).ceil() as usize).max(1);
    if masked >= d {
        return Err(invalid(format!(
            "column_fraction {} masks all {d} columns, leaving no cause column",
            params.column_fraction
        )));
    }
    let remaining = d - masked;
    let cause = if params.cause_fraction > 0.0 {
        round_half_up(params.cause_fraction * remaining as f64).clamp(1, remaining)
    } else {
        0
    };
    Ok((masked, cause))
}

fn logistic_plan(
    data: &Dataset,
    params: &AmputeParams,
    seed: u64,
    mechanism: Mechanism,
) -> Result<(AmputationPlan, Vec<bool>)> {
    check_rate(params.rate)?;
    if !(0.0..1.0).contains(&params.cause_fraction) && params.cause_fraction != 1.0 {
        return Err(invalid(format!(
            "cause_fraction must lie in [0, 1], got {}",
            params.cause_fraction
        )));
    }
    let (n, d) = (data.nrows(), data.ncols());
    let (n_masked, n_cause) = column_allocation(d, params)?;
    let mut rng = rng::rng_from(rng::derive(seed, "logistic"));

    let mut masked_columns = index::sample(&mut rng, d, n_masked).into_vec();
    masked_columns.sort_unstable();
    let rest: Vec<usize> = (0..d).filter(|j| !masked_columns.contains(j)).collect();
    let mut cause_columns: Vec<usize> = index::sample(&mut rng, rest.len(), n_cause)
        .into_iter()
        .map(|k| rest[k])
        .collect();
    cause_columns.sort_unstable();

    // standardized cause values; unobserved inputs sit at the mean
    let mut z = Matrix::zeros(n, cause_columns.len());
    for (c, &j) in cause_columns.iter().enumerate() {
        let obs: Vec<f64> = (0..n).filter_map(|i| data.observed(i, j)).collect();
        let (mu, sd) = mean_std(&obs).ok_or(Error::FullyMissingColumn(j))?;
        for i in 0..n {
            if let Some(x) = data.observed(i, j) {
                z.set(i, c, (x - mu) / sd);
            }
        }
    }

    let mut mask = data.mask().to_vec();
    let mut weights = Vec::with_capacity(n_masked);
    let mut intercepts = Vec::with_capacity(n_masked);
    for &j in &masked_columns {
        let w: Vec<f64> = (0..cause_columns.len()).map(|_| rng.sample(StandardNormal)).collect();
        let logits: Vec<f64> = z
            .rows_iter()
            .map(|row| row.iter().zip(&w).map(|(x, w)| x * w).sum())
            .collect();
        let logits = if cause_columns.is_empty() { vec![0.0; n] } else { logits };
        let b = calibrate_intercept(&logits, params.rate)?;
        for (i, l) in logits.iter().enumerate() {
            let draw: f64 = rng.random();
            if !data.is_missing(i, j) && draw < sigmoid(l + b) {
                mask[i * d + j] = true;
            }
        }
        weights.push(w);
        intercepts.push(b);
    }
    let plan = AmputationPlan {
        mechanism,
        masked_columns,
        cause_columns,
        logistic_weights: weights,
        intercepts,
        target_rate: params.rate,
        seed,
    };
    Ok((plan, mask))
}

/// Missing-at-random amputation: masked columns depend on observed cause columns.
pub fn ampute_mar(data: &Dataset, params: &AmputeParams, seed: u64) -> Result<AmputationResult> {
    let (plan, mask) = logistic_plan(data, params, seed, Mechanism::Mar)?;
    finish(data, mask, plan)
}

/// MAR amputation followed by MCAR masking of the cause columns themselves.
pub fn ampute_mnar(data: &Dataset, params: &AmputeParams, seed: u64) -> Result<AmputationResult> {
    let (plan, mut mask) = logistic_plan(data, params, seed, Mechanism::Mnar)?;
    let mut rng = rng::rng_from(rng::derive(seed, "mnar-causes"));
    mcar_cells(data, &mut mask, &plan.cause_columns, params.rate, &mut rng);
    finish(data, mask, plan)
}

pub fn ampute(
    data: &Dataset,
    mechanism: Mechanism,
    params: &AmputeParams,
    seed: u64,
) -> Result<AmputationResult> {
    match mechanism {
        Mechanism::Mcar => ampute_mcar(data, params.rate, seed),
        Mechanism::Mar => ampute_mar(data, params, seed),
        Mechanism::Mnar => ampute_mnar(data, params, seed),
    }
}

/// Root-mean-square error of `imputed` over the newly masked cells.
pub fn imputation_rmse(result: &AmputationResult, imputed: &Matrix) -> Result<f64> {
    let ds = &result.dataset;
    if imputed.nrows() != ds.nrows() || imputed.ncols() != ds.ncols() {
        return Err(Error::DimensionMismatch {
            expected: ds.nrows() * ds.ncols(),
            found: imputed.nrows() * imputed.ncols(),
        });
    }
    if result.ground_truth.is_empty() {
        return Err(Error::NothingAmputed);
    }
    let mut sse = 0.0;
    for cell in &result.ground_truth {
        let v = imputed.get(cell.row, cell.column);
        if !v.is_finite() {
            return Err(Error::NonFinite(format!(
                "imputed cell ({}, {})",
                cell.row, cell.column
            )));
        }
        sse += (v - cell.value).powi(2);
    }
    Ok((sse / result.ground_truth.len() as f64).sqrt())
}
