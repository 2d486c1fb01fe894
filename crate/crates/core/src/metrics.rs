//! Classification metrics, paired significance test, calibration and ranking.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{invalid, Error, Result};

/// Binary targets paired with positive-class probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredSet {
    pub targets: Vec<u8>,
    pub probabilities: Vec<f64>,
    pub label: String,
}

impl ScoredSet {
    pub fn new(targets: Vec<u8>, probabilities: Vec<f64>, label: impl Into<String>) -> Result<Self> {
        if targets.len() != probabilities.len() {
            return Err(Error::DimensionMismatch {
                expected: targets.len(),
                found: probabilities.len(),
            });
        }
        if let Some(row) = targets.iter().position(|&t| t > 1) {
            return Err(Error::NonBinaryTarget {
                row,
                value: targets[row].to_string(),
            });
        }
        if let Some(p) = probabilities.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(invalid(format!("probability {p} outside [0, 1]")));
        }
        Ok(ScoredSet {
            targets,
            probabilities,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.targets.iter().filter(|&&t| t == 1).count()
    }

    /// Indices sorted by descending probability, grouped into runs of equal score.
    fn descending_groups(&self) -> Vec<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.probabilities[b].total_cmp(&self.probabilities[a]));
        let mut groups = Vec::new();
        let mut i = 0;
        while i < order.len() {
            let score = self.probabilities[order[i]];
            let mut pos = 0;
            let mut neg = 0;
            while i < order.len() && self.probabilities[order[i]] == score {
                if self.targets[order[i]] == 1 {
                    pos += 1;
                } else {
                    neg += 1;
                }
                i += 1;
            }
            groups.push((pos, neg));
        }
        groups
    }
}

/// Mann–Whitney AUROC: (concordant + ½·tied positive/negative pairs) / (n₊·n₋).
pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let pos = s.positives();
    let neg = s.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    // twice the Mann–Whitney U, kept integral so ties cost no precision
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = neg as u128;
    for (p, n) in s.descending_groups() {
        neg_below -= n as u128;
        twice_u += 2 * p as u128 * neg_below + (p * n) as u128;
    }
    Ok((twice_u as f64 / 2.0) / (pos as f64 * neg as f64))
}

/// Step-sum average precision Σ (Rₙ − Rₙ₋₁)·Pₙ, one threshold per distinct score.
pub fn average_precision(s: &ScoredSet) -> Result<f64> {
    let total_pos = s.positives();
    if total_pos == 0 {
        return Err(invalid("average precision needs at least one positive"));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (p, n) in s.descending_groups() {
        tp += p;
        fp += n;
        if p > 0 {
            ap += (p as f64 / total_pos as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

pub fn brier(s: &ScoredSet) -> Result<f64> {
    if s.is_empty() {
        return Err(Error::NoRows);
    }
    Ok(per_sample_errors(s).iter().map(|e| e * e).sum::<f64>() / s.len() as f64)
}

/// |pᵢ − yᵢ| for every sample.
pub fn per_sample_errors(s: &ScoredSet) -> Vec<f64> {
    s.targets
        .iter()
        .zip(&s.probabilities)
        .map(|(&y, p)| (f64::from(y) - p).abs())
        .collect()
}

/// Share of positions where `a` is strictly below `b`.
pub fn fraction_improved(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::NoRows);
    }
    Ok(a.iter().zip(b).filter(|(x, y)| x < y).count() as f64 / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Alternative {
    Less,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    #[serde(with = "finite_or_string")]
    pub t_statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub alternative: Alternative,
    /// Differences had zero variance; p follows the limiting convention.
    pub degenerate: bool,
}

/// JSON has no infinities; write them as strings.
mod finite_or_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&v.to_string())
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// P(T ≤ t) for Student's t with `df` degrees of freedom.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return if t > 0.0 { 1.0 } else { 0.0 };
    }
    StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom").cdf(t)
}

/// One-sided paired t-test of H₁: mean(a − b) < 0.
pub fn paired_t_test_less(a: &[f64], b: &[f64]) -> Result<TTestResult> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(invalid("paired t-test needs at least two pairs"));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let df = n - 1;
    if var == 0.0 {
        let (t, p) = if mean == 0.0 {
            (0.0, 0.5)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 0.0)
        } else {
            (f64::INFINITY, 1.0)
        };
        return Ok(TTestResult {
            t_statistic: t,
            degrees_of_freedom: df,
            p_value: p,
            alternative: Alternative::Less,
            degenerate: true,
        });
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    Ok(TTestResult {
        t_statistic: t,
        degrees_of_freedom: df,
        p_value: student_t_cdf(t, df as f64).clamp(0.0, 1.0),
        alternative: Alternative::Less,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
    /// `None` for empty bins.
    pub mean_predicted: Option<f64>,
    pub fraction_positive: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub n_bins: usize,
    pub bins: Vec<CalibrationBin>,
}

/// Uniform-width bins on [0, 1]; each bin is [lo, hi) except the last, which is closed.
pub fn calibration_curve(s: &ScoredSet, n_bins: usize) -> Result<CalibrationCurve> {
    if n_bins < 2 {
        return Err(invalid("calibration needs at least two bins"));
    }
    let mut count = vec![0usize; n_bins];
    let mut sum_p = vec![0.0; n_bins];
    let mut sum_y = vec![0.0; n_bins];
    for (&y, &p) in s.targets.iter().zip(&s.probabilities) {
        let b = ((p * n_bins as f64).floor() as usize).min(n_bins - 1);
        count[b] += 1;
        sum_p[b] += p;
        sum_y[b] += f64::from(y);
    }
    let bins = (0..n_bins)
        .map(|b| {
            let c = count[b];
            CalibrationBin {
                lower: b as f64 / n_bins as f64,
                upper: (b + 1) as f64 / n_bins as f64,
                count: c,
                mean_predicted: (c > 0).then(|| sum_p[b] / c as f64),
                fraction_positive: (c > 0).then(|| sum_y[b] / c as f64),
            }
        })
        .collect();
    Ok(CalibrationCurve { n_bins, bins })
}

pub const PLATT_SLOPE_LIMIT: f64 = 1e3;
const PLATT_MAX_ITER: usize = 100;
const PLATT_TOL: f64 = 1e-8;

/// Sigmoid recalibration p ↦ σ(A·p + B).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlattMap {
    pub a: f64,
    pub b: f64,
    /// |A| hit the slope limit (separable scores).
    pub clamped: bool,
    pub iterations: usize,
}

impl PlattMap {
    pub fn apply(&self, p: f64) -> f64 {
        sigmoid(self.a * p + self.b)
    }

    pub fn is_monotone(&self) -> bool {
        self.a > 0.0
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// log(1 + e^z) without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean log-loss of σ(a·p + b).
pub fn platt_loss(s: &ScoredSet, a: f64, b: f64) -> f64 {
    s.targets
        .iter()
        .zip(&s.probabilities)
        .map(|(&y, &p)| {
            let z = a * p + b;
            if y == 1 { softplus(-z) } else { softplus(z) }
        })
        .sum::<f64>()
        / s.len() as f64
}

/// Gradient and Hessian of the mean log-loss in (a, b).
fn platt_derivatives(s: &ScoredSet, a: f64, b: f64) -> ([f64; 2], [[f64; 2]; 2]) {
    let mut g = [0.0; 2];
    let mut h = [[0.0; 2]; 2];
    for (&y, &p) in s.targets.iter().zip(&s.probabilities) {
        let q = sigmoid(a * p + b);
        let r = q - f64::from(y);
        let w = q * (1.0 - q);
        g[0] += r * p;
        g[1] += r;
        h[0][0] += w * p * p;
        h[0][1] += w * p;
        h[1][1] += w;
    }
    let n = s.len() as f64;
    h[1][0] = h[0][1];
    (
        [g[0] / n, g[1] / n],
        [[h[0][0] / n, h[0][1] / n], [h[1][0] / n, h[1][1] / n]],
    )
}

/// Newton's method on B alone with A held fixed.
fn fit_intercept(s: &ScoredSet, a: f64, mut b: f64) -> Result<(f64, usize)> {
    for it in 1..=PLATT_MAX_ITER {
        let (g, h) = platt_derivatives(s, a, b);
        let mut step = -g[1] / h[1][1].max(1e-300);
        let start = platt_loss(s, a, b);
        while platt_loss(s, a, b + step) > start && step.abs() > 1e-16 {
            step *= 0.5;
        }
        b += step;
        if step.abs() < PLATT_TOL {
            return Ok((b, it));
        }
    }
    Err(Error::NoConvergence("platt intercept".into()))
}

/// Fits σ(A·p + B) to the targets by log-loss minimization (damped Newton).
pub fn platt_calibrate(s: &ScoredSet) -> Result<PlattMap> {
    let pos = s.positives();
    if pos == 0 || pos == s.len() {
        return Err(Error::SingleClass);
    }
    let rate = pos as f64 / s.len() as f64;
    let b0 = (rate / (1.0 - rate)).ln();
    let first = s.probabilities[0];
    if s.probabilities.iter().all(|&p| p == first) {
        // slope is unidentifiable; only the base rate can be matched
        let (b, iterations) = fit_intercept(s, 0.0, b0)?;
        return Ok(PlattMap {
            a: 0.0,
            b,
            clamped: false,
            iterations,
        });
    }

    // strictly separable scores have no finite optimum: the slope runs off to ±∞
    let extreme = |class: u8, pick: fn(f64, f64) -> f64, init: f64| {
        s.targets
            .iter()
            .zip(&s.probabilities)
            .filter(|(t, _)| **t == class)
            .fold(init, |acc, (_, &p)| pick(acc, p))
    };
    let separated_up = extreme(0, f64::max, f64::NEG_INFINITY) < extreme(1, f64::min, f64::INFINITY);
    let separated_down = extreme(1, f64::max, f64::NEG_INFINITY) < extreme(0, f64::min, f64::INFINITY);
    if separated_up || separated_down {
        let (a, below, above) = if separated_up {
            (PLATT_SLOPE_LIMIT, 0, 1)
        } else {
            (-PLATT_SLOPE_LIMIT, 1, 0)
        };
        let mid = (extreme(below, f64::max, f64::NEG_INFINITY) + extreme(above, f64::min, f64::INFINITY)) / 2.0;
        let (b, iterations) = fit_intercept(s, a, -a * mid)?;
        return Ok(PlattMap {
            a,
            b,
            clamped: true,
            iterations,
        });
    }

    let (mut a, mut b) = (0.0, b0);
    for it in 1..=PLATT_MAX_ITER {
        let (g, h) = platt_derivatives(s, a, b);
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        let (mut da, mut db) = if det > 1e-300 {
            (
                -(h[1][1] * g[0] - h[0][1] * g[1]) / det,
                -(h[0][0] * g[1] - h[1][0] * g[0]) / det,
            )
        } else {
            (-g[0], -g[1])
        };
        let start = platt_loss(s, a, b);
        let mut shrinks = 0;
        while platt_loss(s, a + da, b + db) > start && shrinks < 60 {
            da *= 0.5;
            db *= 0.5;
            shrinks += 1;
        }
        a += da;
        b += db;
        if a.abs() > PLATT_SLOPE_LIMIT {
            a = a.clamp(-PLATT_SLOPE_LIMIT, PLATT_SLOPE_LIMIT);
            let (b, extra) = fit_intercept(s, a, b)?;
            return Ok(PlattMap {
                a,
                b,
                clamped: true,
                iterations: it + extra,
            });
        }
        if da.abs().max(db.abs()) < PLATT_TOL {
            return Ok(PlattMap {
                a,
                b,
                clamped: false,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence("platt scaling".into()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankSummary {
    pub label: String,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
}

/// Per-experiment ranks (1 = highest score, ties averaged) and their spread per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub labels: Vec<String>,
    pub experiments: Vec<String>,
    /// `ranks[e][l]`: rank of `labels[l]` in `experiments[e]`.
    pub ranks: Vec<Vec<f64>>,
    pub summary: Vec<RankSummary>,
}

/// Average ranks of `scores`, highest first.
pub fn fractional_ranks(scores: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Ranks every experiment's `(label, score)` list; all experiments must share one label set.
pub fn rank_experiments(experiments: &[(String, Vec<(String, f64)>)]) -> Result<RankTable> {
    let Some((_, first)) = experiments.first() else {
        return Err(invalid("no experiments to rank"));
    };
    let labels: Vec<String> = first.iter().map(|(l, _)| l.clone()).collect();
    let label_set: BTreeSet<&String> = labels.iter().collect();
    if label_set.len() != labels.len() {
        return Err(Error::DuplicateLabel("rank table".into()));
    }
    let mut ranks = Vec::with_capacity(experiments.len());
    for (name, scores) in experiments {
        let here: BTreeSet<&String> = scores.iter().map(|(l, _)| l).collect();
        if here != label_set || scores.len() != labels.len() {
            return Err(invalid(format!("experiment {name:?} has a different label set")));
        }
        let ordered: Vec<f64> = labels
            .iter()
            .map(|l| scores.iter().find(|(m, _)| m == l).map(|(_, s)| *s).unwrap())
            .collect();
        ranks.push(fractional_ranks(&ordered));
    }
    let summary = labels
        .iter()
        .enumerate()
        .map(|(j, label)| {
            let mut col: Vec<f64> = ranks.iter().map(|r| r[j]).collect();
            col.sort_by(f64::total_cmp);
            let (q1, q3) = (quantile(&col, 0.25), quantile(&col, 0.75));
            RankSummary {
                label: label.clone(),
                median: quantile(&col, 0.5),
                q1,
                q3,
                iqr: q3 - q1,
            }
        })
        .collect();
    Ok(RankTable {
        labels,
        experiments: experiments.iter().map(|(n, _)| n.clone()).collect(),
        ranks,
        summary,
    })
}

impl RankTable {
    /// Long-format CSV: experiment, label, rank.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["experiment", "label", "rank"])?;
        for (e, row) in self.experiments.iter().zip(&self.ranks) {
            for (l, r) in self.labels.iter().zip(row) {
                w.write_record([e.as_str(), l.as_str(), &r.to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Headline metrics of one scored set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub average_precision: f64,
    pub auroc: f64,
    pub brier: f64,
    pub n: usize,
}

pub fn summarize(s: &ScoredSet) -> Result<MetricSummary> {
    Ok(MetricSummary {
        average_precision: average_precision(s)?,
        auroc: auroc(s)?,
        brier: brier(s)?,
        n: s.len(),
    })
}
