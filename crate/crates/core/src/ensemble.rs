//! Missingness-aware dynamic ensemble weighting.
//!
//! A pool of imputer→classifier pipelines is fitted on stage-1 rows. Each
//! pipeline's absolute probability error on every stage-2 row is cached in an
//! [`ErrorMatrix`]. At prediction time a sample is imputed by each pipeline,
//! its k nearest stage-2 rows are found in that pipeline's own imputed
//! (standardized) stage-2 matrix, and the pipeline's competence is one minus
//! its mean cached error over those neighbors. Weights are the softmax of the
//! competences; the output is the weighted mean of the pipeline probabilities.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ScalerStats};
use crate::error::{invalid, Error, Result};
use crate::imputers::{fit_imputer, FittedImputer, ImputerSpec};
use crate::learners::{fit_gbm, fit_random_forest, Classifier, Task, TreeParams};
use crate::matrix::Matrix;
use crate::rng;

pub const DEFAULT_NEIGHBORS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    RandomForest,
    Gbm,
}

impl ClassifierKind {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "rf" | "random_forest" => Ok(ClassifierKind::RandomForest),
            "gbm" => Ok(ClassifierKind::Gbm),
            other => Err(invalid(format!("unknown classifier {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassifierKind::RandomForest => "rf",
            ClassifierKind::Gbm => "gbm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub kind: ClassifierKind,
    pub params: TreeParams,
}

/// One imputer→classifier composite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSpec {
    pub label: String,
    pub imputer: ImputerSpec,
    pub classifier: ClassifierSpec,
}

/// Cartesian product of imputers and classifiers, labelled `imputer+classifier`.
///
/// Imputer seeds depend only on the imputer, so pipelines sharing an imputer
/// share its fitted state; classifier seeds depend on the full label.
pub fn build_pool(
    imputers: &[ImputerSpec],
    classifiers: &[ClassifierSpec],
    seed: u64,
) -> Vec<PipelineSpec> {
    let mut out = Vec::with_capacity(imputers.len() * classifiers.len());
    for imp in imputers {
        let mut imputer = imp.clone();
        imputer.tree_params.seed = rng::derive(seed, &format!("imputer:{}", imp.name()));
        for clf in classifiers {
            let label = format!("{}+{}", imp.name(), clf.kind.name());
            let mut classifier = clf.clone();
            classifier.params.seed = rng::derive(seed, &format!("classifier:{label}"));
            out.push(PipelineSpec {
                label,
                imputer: imputer.clone(),
                classifier,
            });
        }
    }
    out
}

/// The four imputers {knn, ridge-iter, rf-iter, gbm-iter} × classifiers {rf, gbm}.
pub fn default_pool(seed: u64) -> Vec<PipelineSpec> {
    let imputers: Vec<ImputerSpec> = ["knn", "ridge-iter", "rf-iter", "gbm-iter"]
        .iter()
        .map(|n| ImputerSpec::from_name(n).expect("known imputer"))
        .collect();
    let classifiers = [ClassifierKind::RandomForest, ClassifierKind::Gbm].map(|kind| ClassifierSpec {
        kind,
        params: TreeParams::default(),
    });
    build_pool(&imputers, &classifiers, seed)
}

/// Standardized stage-2 rows as imputed by one pipeline; the neighbor search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Cache {
    pub scaler: ScalerStats,
    pub imputed: Matrix,
    pub row_ids: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPipeline {
    pub spec: PipelineSpec,
    pub imputer: FittedImputer,
    pub classifier: Classifier,
    pub stage2: Option<Stage2Cache>,
}

impl FittedPipeline {
    pub fn label(&self) -> &str {
        &self.spec.label
    }

    /// Imputed rows and positive-class probabilities for every row of `data`.
    pub fn impute_and_predict(&self, data: &Dataset) -> Result<(Matrix, Vec<f64>)> {
        let imputed = self.imputer.transform(data)?;
        let probs = imputed.rows_iter().map(|r| self.classifier.predict_proba(r)).collect();
        Ok((imputed, probs))
    }

    fn cache(&self) -> Result<&Stage2Cache> {
        self.stage2.as_ref().ok_or_else(|| Error::Unfitted(self.spec.label.clone()))
    }
}

pub fn fit_pipeline(spec: &PipelineSpec, stage1: &Dataset) -> Result<FittedPipeline> {
    let imputer = fit_imputer(&spec.imputer, stage1)?;
    let x = imputer.transform(stage1)?;
    fit_classifier(spec, imputer, &x, stage1)
}

fn fit_classifier(spec: &PipelineSpec, imputer: FittedImputer, x: &Matrix, stage1: &Dataset) -> Result<FittedPipeline> {
    let y: Vec<f64> = stage1.target().iter().map(|&t| f64::from(t)).collect();
    let classifier = match spec.classifier.kind {
        ClassifierKind::RandomForest => {
            Classifier::Forest(fit_random_forest(x, &y, &spec.classifier.params, Task::Classification)?)
        }
        ClassifierKind::Gbm => Classifier::Boosted(fit_gbm(x, &y, &spec.classifier.params, Task::Classification)?),
    };
    Ok(FittedPipeline {
        spec: spec.clone(),
        imputer,
        classifier,
        stage2: None,
    })
}

/// Fits every pipeline on the stage-1 rows; output order follows `specs`.
///
/// Each distinct imputer spec is fitted once and shared by the pipelines
/// using it. Imputers, then classifiers, are fitted in parallel.
pub fn fit_pool(specs: &[PipelineSpec], stage1: &Dataset) -> Result<Vec<FittedPipeline>> {
    if specs.is_empty() {
        return Err(Error::EmptyPool);
    }
    let mut labels = HashSet::new();
    for s in specs {
        if !labels.insert(s.label.as_str()) {
            return Err(Error::DuplicateLabel(s.label.clone()));
        }
    }
    if !stage1.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let mut distinct: Vec<&ImputerSpec> = Vec::new();
    let slot: Vec<usize> = specs
        .iter()
        .map(|s| match distinct.iter().position(|d| **d == s.imputer) {
            Some(i) => i,
            None => {
                distinct.push(&s.imputer);
                distinct.len() - 1
            }
        })
        .collect();
    let imputed: Vec<(FittedImputer, Matrix)> = distinct
        .par_iter()
        .map(|spec| {
            let fitted = fit_imputer(spec, stage1)?;
            let x = fitted.transform(stage1)?;
            Ok((fitted, x))
        })
        .collect::<Result<_>>()?;
    specs
        .par_iter()
        .zip(slot)
        .map(|(s, i)| fit_classifier(s, imputed[i].0.clone(), &imputed[i].1, stage1))
        .collect()
}

/// Absolute probability error of each pipeline (column) on each stage-2 row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorMatrix {
    pub labels: Vec<String>,
    pub row_ids: Vec<usize>,
    entries: Vec<f64>,
}

impl ErrorMatrix {
    pub fn new(labels: Vec<String>, row_ids: Vec<usize>, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != labels.len() * row_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len() * row_ids.len(),
                found: entries.len(),
            });
        }
        if let Some(e) = entries.iter().find(|e| !(0.0..=1.0).contains(*e)) {
            return Err(invalid(format!("error entry {e} outside [0, 1]")));
        }
        Ok(ErrorMatrix {
            labels,
            row_ids,
            entries,
        })
    }

    pub fn nrows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn npipelines(&self) -> usize {
        self.labels.len()
    }

    /// Stored entries; always `nrows() · npipelines()`.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    #[inline]
    pub fn get(&self, row: usize, pipeline: usize) -> f64 {
        self.entries[row * self.labels.len() + pipeline]
    }

    pub fn column(&self, pipeline: usize) -> Vec<f64> {
        (0..self.nrows()).map(|r| self.get(r, pipeline)).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        let mut header = vec!["row_id".to_string()];
        header.extend(self.labels.iter().cloned());
        w.write_record(&header)?;
        for (r, id) in self.row_ids.iter().enumerate() {
            let mut rec = vec![id.to_string()];
            rec.extend((0..self.npipelines()).map(|j| self.get(r, j).to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(file);
        let labels: Vec<String> = rdr.headers()?.iter().skip(1).map(str::to_string).collect();
        let mut row_ids = Vec::new();
        let mut entries = Vec::new();
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let parse = |col: usize| -> Result<f64> {
                rec[col].parse().map_err(|_| Error::Parse {
                    row,
                    column: col.to_string(),
                    value: rec[col].to_string(),
                })
            };
            row_ids.push(parse(0)? as usize);
            for j in 1..rec.len() {
                entries.push(parse(j)?);
            }
        }
        ErrorMatrix::new(labels, row_ids, entries)
    }
}

/// Records each pipeline's errors on `stage2` and caches its standardized
/// imputed stage-2 rows for neighbor search.
pub fn build_error_matrix(pipelines: &mut [FittedPipeline], stage2: &Dataset) -> Result<ErrorMatrix> {
    if pipelines.is_empty() {
        return Err(Error::EmptyPool);
    }
    if stage2.nrows() == 0 {
        return Err(Error::NoRows);
    }
    let per_pipeline: Vec<(Stage2Cache, Vec<f64>)> = pipelines
        .par_iter()
        .map(|p| {
            let (imputed, probs) = p.impute_and_predict(stage2)?;
            let scaler = ScalerStats::fit_matrix(&imputed)?;
            let errors = probs
                .iter()
                .zip(stage2.target())
                .map(|(p, &y)| (f64::from(y) - p).abs())
                .collect();
            let cache = Stage2Cache {
                imputed: scaler.transform_matrix(&imputed),
                scaler,
                row_ids: stage2.row_ids().to_vec(),
            };
            Ok((cache, errors))
        })
        .collect::<Result<_>>()?;

    let p = pipelines.len();
    let n = stage2.nrows();
    let mut entries = vec![0.0; n * p];
    for (j, (pipeline, (cache, errors))) in pipelines.iter_mut().zip(per_pipeline).enumerate() {
        for (i, e) in errors.into_iter().enumerate() {
            entries[i * p + j] = e;
        }
        pipeline.stage2 = Some(cache);
    }
    ErrorMatrix::new(
        pipelines.iter().map(|p| p.spec.label.clone()).collect(),
        stage2.row_ids().to_vec(),
        entries,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPrediction {
    pub probability: f64,
    pub weights: Vec<f64>,
    pub per_pipeline_probs: Vec<f64>,
    /// Stage-2 row ids used as neighbors, per pipeline (empty for uniform averaging).
    pub neighbor_ids: Vec<Vec<usize>>,
    pub competences: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mdew,
    Uma,
}

/// Numerically stable softmax with temperature 1.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Positions of the `k` stage-2 rows nearest to `query`; ties go to the smaller row id.
fn neighbors(cache: &Stage2Cache, query: &[f64], k: usize) -> Vec<usize> {
    let mut dist: Vec<(f64, usize, usize)> = cache
        .imputed
        .rows_iter()
        .enumerate()
        .map(|(pos, r)| {
            let d2: f64 = r.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d2, cache.row_ids[pos], pos)
        })
        .collect();
    let by = |a: &(f64, usize, usize), b: &(f64, usize, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < dist.len() {
        dist.select_nth_unstable_by(k - 1, by);
        dist.truncate(k);
    }
    dist.sort_unstable_by(by);
    dist.into_iter().map(|(_, _, pos)| pos).collect()
}

/// Weighted mean of `probs`, kept inside their range against rounding.
fn combine(weights: &[f64], probs: &[f64]) -> f64 {
    let lo = probs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    weights.iter().zip(probs).map(|(w, p)| w * p).sum::<f64>().clamp(lo, hi)
}

/// Uniform soft vote over already computed pipeline probabilities.
pub fn uniform_average(per_pipeline_probs: Vec<f64>) -> WeightedPrediction {
    let p = per_pipeline_probs.len();
    let probability = per_pipeline_probs.iter().sum::<f64>() / p as f64;
    let lo = per_pipeline_probs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = per_pipeline_probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    WeightedPrediction {
        probability: probability.clamp(lo, hi),
        weights: vec![1.0 / p as f64; p],
        per_pipeline_probs,
        neighbor_ids: Vec::new(),
        competences: Vec::new(),
    }
}

/// Competence-weighted combination for one sample, given each pipeline's
/// probability and standardized imputed row.
fn weigh_sample(
    pipelines: &[FittedPipeline],
    errors: &ErrorMatrix,
    k: usize,
    per_pipeline_probs: Vec<f64>,
    queries: &[&[f64]],
) -> Result<WeightedPrediction> {
    let mut competences = Vec::with_capacity(pipelines.len());
    let mut neighbor_ids = Vec::with_capacity(pipelines.len());
    for (j, (pipeline, query)) in pipelines.iter().zip(queries).enumerate() {
        let cache = pipeline.cache()?;
        let nb = neighbors(cache, query, k);
        let mean_err = nb.iter().map(|&r| errors.get(r, j)).sum::<f64>() / nb.len() as f64;
        competences.push(1.0 - mean_err);
        neighbor_ids.push(nb.iter().map(|&r| cache.row_ids[r]).collect());
    }
    let weights = softmax(&competences);
    Ok(WeightedPrediction {
        probability: combine(&weights, &per_pipeline_probs),
        weights,
        per_pipeline_probs,
        neighbor_ids,
        competences,
    })
}

fn check_context(pipelines: &[FittedPipeline], errors: &ErrorMatrix, k: usize) -> Result<()> {
    if pipelines.is_empty() {
        return Err(Error::EmptyPool);
    }
    if errors.npipelines() != pipelines.len() {
        return Err(Error::DimensionMismatch {
            expected: pipelines.len(),
            found: errors.npipelines(),
        });
    }
    for (p, label) in pipelines.iter().zip(&errors.labels) {
        if p.label() != label {
            return Err(invalid(format!(
                "error matrix column {label:?} does not match pipeline {:?}",
                p.label()
            )));
        }
        if p.cache()?.imputed.nrows() != errors.nrows() {
            return Err(Error::DimensionMismatch {
                expected: errors.nrows(),
                found: p.cache()?.imputed.nrows(),
            });
        }
    }
    if k == 0 || k > errors.nrows() {
        return Err(invalid(format!(
            "k = {k} must lie in [1, {}] (stage-2 size)",
            errors.nrows()
        )));
    }
    Ok(())
}

/// Predictions for every row of `samples`, in order.
///
/// Each pipeline imputes and scores the whole batch once; the per-row
/// combination step then runs in parallel. Every row is handled
/// independently, so a batch of one reproduces a single-row call exactly.
pub fn predict_batch(
    samples: &Dataset,
    pipelines: &[FittedPipeline],
    errors: &ErrorMatrix,
    k: usize,
    method: Method,
) -> Result<Vec<WeightedPrediction>> {
    if pipelines.is_empty() {
        return Err(Error::EmptyPool);
    }
    if method == Method::Mdew {
        check_context(pipelines, errors, k)?;
    }
    let scored: Vec<(Matrix, Vec<f64>)> = pipelines
        .par_iter()
        .map(|p| {
            let (imputed, probs) = p.impute_and_predict(samples)?;
            let z = match (method, &p.stage2) {
                (Method::Mdew, Some(cache)) => cache.scaler.transform_matrix(&imputed),
                _ => imputed,
            };
            Ok((z, probs))
        })
        .collect::<Result<_>>()?;

    (0..samples.nrows())
        .into_par_iter()
        .map(|i| {
            let probs: Vec<f64> = scored.iter().map(|(_, p)| p[i]).collect();
            match method {
                Method::Uma => Ok(uniform_average(probs)),
                Method::Mdew => {
                    let queries: Vec<&[f64]> = scored.iter().map(|(z, _)| z.row(i)).collect();
                    weigh_sample(pipelines, errors, k, probs, &queries)
                }
            }
        })
        .collect()
}

/// M-DEW prediction for row `row` of `samples`.
pub fn mdew_predict(
    samples: &Dataset,
    row: usize,
    pipelines: &[FittedPipeline],
    errors: &ErrorMatrix,
    k: usize,
) -> Result<WeightedPrediction> {
    let one = samples.select(&[row]);
    Ok(predict_batch(&one, pipelines, errors, k, Method::Mdew)?.remove(0))
}

/// Uniform model average for row `row` of `samples`.
pub fn uma_predict(samples: &Dataset, row: usize, pipelines: &[FittedPipeline]) -> Result<WeightedPrediction> {
    if pipelines.is_empty() {
        return Err(Error::EmptyPool);
    }
    let one = samples.select(&[row]);
    let probs = pipelines
        .iter()
        .map(|p| Ok(p.impute_and_predict(&one)?.1[0]))
        .collect::<Result<Vec<f64>>>()?;
    Ok(uniform_average(probs))
}

pub const CONTEXT_FORMAT_VERSION: u32 = 1;

/// Everything needed to predict in another process: the fitted pipelines
/// (with stage-2 caches) and their error matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionContext {
    pub column_names: Vec<String>,
    pub k: usize,
    pub pipelines: Vec<FittedPipeline>,
    pub errors: ErrorMatrix,
}

#[derive(Serialize, Deserialize)]
struct ContextFile {
    format_version: u32,
    column_names: Vec<String>,
    k: usize,
    pipelines: Vec<FittedPipeline>,
}

impl PredictionContext {
    /// Runs the two fitting phases: pool on `stage1`, then errors on `stage2`.
    pub fn fit(specs: &[PipelineSpec], stage1: &Dataset, stage2: &Dataset, k: usize) -> Result<Self> {
        let mut pipelines = fit_pool(specs, stage1)?;
        let errors = build_error_matrix(&mut pipelines, stage2)?;
        check_context(&pipelines, &errors, k)?;
        Ok(PredictionContext {
            column_names: stage1.column_names().to_vec(),
            k,
            pipelines,
            errors,
        })
    }

    pub fn predict(&self, samples: &Dataset, method: Method) -> Result<Vec<WeightedPrediction>> {
        if samples.column_names() != self.column_names.as_slice() {
            return Err(invalid("sample columns do not match the fitted context"));
        }
        predict_batch(samples, &self.pipelines, &self.errors, self.k, method)
    }

    /// Writes `pipelines.json` and `errors.csv` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let file = ContextFile {
            format_version: CONTEXT_FORMAT_VERSION,
            column_names: self.column_names.clone(),
            k: self.k,
            pipelines: self.pipelines.clone(),
        };
        let path = dir.join("pipelines.json");
        std::fs::write(&path, serde_json::to_string(&file)?).map_err(|e| Error::io(&path, e))?;
        self.errors.write_csv(&dir.join("errors.csv"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("pipelines.json");
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let file: ContextFile = serde_json::from_str(&text)?;
        if file.format_version != CONTEXT_FORMAT_VERSION {
            return Err(invalid(format!(
                "unsupported context format version {}",
                file.format_version
            )));
        }
        let errors = ErrorMatrix::read_csv(&dir.join("errors.csv"))?;
        check_context(&file.pipelines, &errors, file.k)?;
        Ok(PredictionContext {
            column_names: file.column_names,
            k: file.k,
            pipelines: file.pipelines,
            errors,
        })
    }
}
