//! Cross-validated experiments comparing M-DEW with uniform averaging and
//! with every base pipeline, plus grid execution and report emission.
//!
//! Protocol per experiment: load → ampute once on the full dataset (unless
//! the mechanism is `none` or per-fold amputation is requested) → stratified
//! folds → per fold: stage-1/stage-2 split of the training share, pool fit on
//! stage-1, error matrix on stage-2, prediction of the test fold → metrics on
//! the pooled test predictions.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, stratified_kfold, two_stage_split, Dataset, DEFAULT_MISSING_TOKENS};
use crate::ensemble::{self, build_error_matrix, build_pool, fit_pool, ClassifierKind, ClassifierSpec, PipelineSpec};
use crate::error::{Error, Result};
use crate::imputers::ImputerSpec;
use crate::learners::TreeParams;
use crate::metrics::{self, MetricSummary, RankTable, ScoredSet, TTestResult};
use crate::missingness::{ampute, AmputeParams, Mechanism};
use crate::rng;

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Short name used in report and directory names.
    pub name: String,
    pub path: PathBuf,
    pub target: String,
    #[serde(default = "default_tokens")]
    pub missing_tokens: Vec<String>,
}

fn default_tokens() -> Vec<String> {
    DEFAULT_MISSING_TOKENS.iter().map(|s| s.to_string()).collect()
}

/// `none` keeps whatever mask the data file already has.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechanismChoice {
    None,
    Mcar,
    Mar,
    Mnar,
}

impl MechanismChoice {
    pub fn mechanism(self) -> Option<Mechanism> {
        match self {
            MechanismChoice::None => None,
            MechanismChoice::Mcar => Some(Mechanism::Mcar),
            MechanismChoice::Mar => Some(Mechanism::Mar),
            MechanismChoice::Mnar => Some(Mechanism::Mnar),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MechanismChoice::None => "none",
            MechanismChoice::Mcar => "mcar",
            MechanismChoice::Mar => "mar",
            MechanismChoice::Mnar => "mnar",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmputationConfig {
    pub mechanism: MechanismChoice,
    pub rate: f64,
    pub column_fraction: f64,
    pub cause_fraction: f64,
    /// Draw a fresh mask for every fold instead of once for the whole dataset.
    pub per_fold: bool,
}

impl Default for AmputationConfig {
    fn default() -> Self {
        let p = AmputeParams::default();
        AmputationConfig {
            mechanism: MechanismChoice::Mcar,
            rate: p.rate,
            column_fraction: p.column_fraction,
            cause_fraction: p.cause_fraction,
            per_fold: false,
        }
    }
}

impl AmputationConfig {
    pub fn params(&self) -> AmputeParams {
        AmputeParams {
            column_fraction: self.column_fraction,
            rate: self.rate,
            cause_fraction: self.cause_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub folds: usize,
    /// Share of each fold's training rows held out to record pipeline errors.
    pub stage2_fraction: f64,
    pub k_neighbors: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            folds: 5,
            stage2_fraction: 0.2,
            k_neighbors: ensemble::DEFAULT_NEIGHBORS,
        }
    }
}

/// Settings shared by every imputer in the pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputerSettings {
    pub knn_k: usize,
    pub max_rounds: usize,
    pub tolerance: f64,
    /// Forest / boosting settings for the tree backbones.
    pub trees: TreeParams,
}

impl Default for ImputerSettings {
    fn default() -> Self {
        let base = ImputerSpec::mean();
        ImputerSettings {
            knn_k: 5,
            max_rounds: base.max_rounds,
            tolerance: base.tolerance,
            trees: TreeParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub imputers: Vec<String>,
    pub classifiers: Vec<String>,
    pub imputer: ImputerSettings,
    pub classifier: TreeParams,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            imputers: ["knn", "ridge-iter", "rf-iter", "gbm-iter"].map(String::from).to_vec(),
            classifiers: ["rf", "gbm"].map(String::from).to_vec(),
            imputer: ImputerSettings::default(),
            classifier: TreeParams::default(),
        }
    }
}

impl PoolConfig {
    pub fn specs(&self, seed: u64) -> Result<Vec<PipelineSpec>> {
        if self.imputers.is_empty() || self.classifiers.is_empty() {
            return Err(Error::EmptyPool);
        }
        let imputers = self
            .imputers
            .iter()
            .map(|name| {
                let mut spec = ImputerSpec::from_name(name).map_err(|e| config_err(e.to_string()))?;
                spec.k = self.imputer.knn_k;
                spec.max_rounds = self.imputer.max_rounds;
                spec.tolerance = self.imputer.tolerance;
                spec.tree_params = self.imputer.trees.clone();
                spec.validate().map_err(|e| config_err(e.to_string()))?;
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        self.classifier.validate().map_err(|e| config_err(e.to_string()))?;
        let classifiers = self
            .classifiers
            .iter()
            .map(|name| {
                Ok(ClassifierSpec {
                    kind: ClassifierKind::from_name(name).map_err(|e| config_err(e.to_string()))?,
                    params: self.classifier.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let specs = build_pool(&imputers, &classifiers, rng::derive(seed, "pool"));
        let mut seen = BTreeSet::new();
        for s in &specs {
            if !seen.insert(s.label.clone()) {
                return Err(Error::DuplicateLabel(s.label.clone()));
            }
        }
        Ok(specs)
    }
}

/// One experiment: a dataset, a missingness mechanism and the protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Defaults to `<dataset>-<mechanism>`.
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub amputation: AmputationConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub pool: PoolConfig,
}

fn in_open_unit(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(config_err(format!("{name} must lie in (0, 1), got {v}")))
    }
}

impl ExperimentConfig {
    pub fn name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}-{}", self.dataset.name, self.amputation.mechanism.name()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.amputation.mechanism != MechanismChoice::None {
            in_open_unit("amputation.rate", self.amputation.rate)?;
            in_open_unit("amputation.column_fraction", self.amputation.column_fraction)?;
            if !(0.0..1.0).contains(&self.amputation.cause_fraction) {
                return Err(config_err("amputation.cause_fraction must lie in [0, 1)"));
            }
        }
        in_open_unit("protocol.stage2_fraction", self.protocol.stage2_fraction)?;
        if self.protocol.folds < 2 {
            return Err(config_err("protocol.folds must be at least 2"));
        }
        if self.protocol.k_neighbors < 1 {
            return Err(config_err("protocol.k_neighbors must be at least 1"));
        }
        self.pool.specs(self.seed).map(|_| ())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve_paths(path.parent());
        Ok(cfg)
    }

    /// Interprets a relative dataset path against the config file's directory.
    fn resolve_paths(&mut self, base: Option<&Path>) {
        if let Some(base) = base {
            if self.dataset.path.is_relative() && !self.dataset.path.exists() {
                self.dataset.path = base.join(&self.dataset.path);
            }
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(e.to_string()))
    }
}

/// A grid: every dataset crossed with every mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub mechanisms: Vec<MechanismChoice>,
    pub datasets: Vec<DatasetConfig>,
    #[serde(default)]
    pub amputation: AmputationConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub pool: PoolConfig,
}

impl GridConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut grid: GridConfig = toml::from_str(&text).map_err(|e| config_err(e.to_string()))?;
        if let Some(base) = path.parent() {
            for d in &mut grid.datasets {
                if d.path.is_relative() && !d.path.exists() {
                    d.path = base.join(&d.path);
                }
            }
        }
        Ok(grid)
    }

    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        if self.mechanisms.is_empty() || self.datasets.is_empty() {
            return Err(config_err("a grid needs at least one dataset and one mechanism"));
        }
        let mut out = Vec::new();
        for d in &self.datasets {
            for &m in &self.mechanisms {
                let cfg = ExperimentConfig {
                    name: None,
                    seed: self.seed,
                    out: None,
                    dataset: d.clone(),
                    amputation: AmputationConfig {
                        mechanism: m,
                        ..self.amputation.clone()
                    },
                    protocol: self.protocol.clone(),
                    pool: self.pool.clone(),
                };
                cfg.validate()?;
                out.push(cfg);
            }
        }
        let names: BTreeSet<String> = out.iter().map(|c| c.name()).collect();
        if names.len() != out.len() {
            return Err(config_err("grid produces duplicate experiment names"));
        }
        Ok(out)
    }
}

/// Metrics of one method (M-DEW, UMA or a base pipeline).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub method: String,
    #[serde(flatten)]
    pub metrics: MetricSummary,
    /// Mean per-sample absolute probability error.
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub test_rows: usize,
    pub stage1_rows: usize,
    pub stage2_rows: usize,
    pub error_matrix_entries: usize,
    pub fraction_improved: f64,
    pub methods: Vec<MethodMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub rows: usize,
    pub columns: usize,
    pub positive_fraction: f64,
    /// Share of masked cells after amputation (whole dataset, or averaged over folds).
    pub missing_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub test: Vec<usize>,
    pub stage1: Vec<usize>,
    pub stage2: Vec<usize>,
}

/// One test-fold prediction, as written to `predictions.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub row_id: usize,
    pub fold: usize,
    pub target: u8,
    pub uma_prob: f64,
    pub mdew_prob: f64,
    pub pipeline_probs: Vec<f64>,
    pub weights: Vec<f64>,
}

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub name: String,
    pub seed: u64,
    pub mechanism: MechanismChoice,
    pub config: ExperimentConfig,
    pub pipelines: Vec<String>,
    pub dataset: DatasetSummary,
    /// Metrics over the concatenation of every fold's test predictions:
    /// M-DEW, UMA, then each pipeline.
    pub pooled: Vec<MethodMetrics>,
    /// Share of test samples whose M-DEW error is strictly below UMA's.
    pub fraction_improved: f64,
    /// One-sided paired t-test of M-DEW error < UMA error over all test samples.
    pub t_test: TTestResult,
    pub folds: Vec<FoldReport>,
    /// AUROC rank of every method (1 = best), ordered like `pooled`.
    pub ranks: Vec<f64>,
    #[serde(skip)]
    pub predictions: Vec<PredictionRow>,
    #[serde(skip)]
    pub splits: Vec<FoldSplit>,
    /// Excluded from `report.json` so reports stay byte-identical across runs.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    pub fn method(&self, name: &str) -> Option<&MethodMetrics> {
        self.pooled.iter().find(|m| m.method == name)
    }

    pub fn mdew_errors(&self) -> Vec<f64> {
        self.predictions
            .iter()
            .map(|p| (f64::from(p.target) - p.mdew_prob).abs())
            .collect()
    }

    pub fn uma_errors(&self) -> Vec<f64> {
        self.predictions
            .iter()
            .map(|p| (f64::from(p.target) - p.uma_prob).abs())
            .collect()
    }
}

pub fn load_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    let tokens: Vec<&str> = cfg.missing_tokens.iter().map(String::as_str).collect();
    data::load_csv(&cfg.path, &cfg.target, &tokens)
}

/// Loads the configured dataset and runs the experiment.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let data = load_dataset(&config.dataset)?;
    run_on_dataset(config, &data)
}

fn amputed(config: &ExperimentConfig, data: &Dataset, seed: u64) -> Result<Dataset> {
    match config.amputation.mechanism.mechanism() {
        None => Ok(data.clone()),
        Some(m) => Ok(ampute(data, m, &config.amputation.params(), seed)?.dataset),
    }
}

fn method_metrics(method: &str, targets: &[u8], probs: &[f64]) -> Result<MethodMetrics> {
    let s = ScoredSet::new(targets.to_vec(), probs.to_vec(), method)?;
    let errors = metrics::per_sample_errors(&s);
    Ok(MethodMetrics {
        method: method.to_string(),
        metrics: metrics::summarize(&s)?,
        mean_error: errors.iter().sum::<f64>() / errors.len() as f64,
    })
}

/// Metrics for M-DEW, UMA and each pipeline over `rows`.
fn all_methods(rows: &[&PredictionRow], labels: &[String]) -> Result<Vec<MethodMetrics>> {
    let targets: Vec<u8> = rows.iter().map(|r| r.target).collect();
    let mut out = vec![
        method_metrics("mdew", &targets, &rows.iter().map(|r| r.mdew_prob).collect::<Vec<_>>())?,
        method_metrics("uma", &targets, &rows.iter().map(|r| r.uma_prob).collect::<Vec<_>>())?,
    ];
    for (j, label) in labels.iter().enumerate() {
        let probs: Vec<f64> = rows.iter().map(|r| r.pipeline_probs[j]).collect();
        out.push(method_metrics(label, &targets, &probs)?);
    }
    Ok(out)
}

fn errors_of(rows: &[&PredictionRow]) -> (Vec<f64>, Vec<f64>) {
    rows.iter()
        .map(|r| {
            let y = f64::from(r.target);
            ((y - r.mdew_prob).abs(), (y - r.uma_prob).abs())
        })
        .unzip()
}

/// Structural guarantees every fold must satisfy; a violation is a bug, reported as a runtime error.
fn check_fold(
    fold: usize,
    train: &[usize],
    test: &[usize],
    stage1: &[usize],
    stage2: &[usize],
    stage2_fraction: f64,
    entries: usize,
    pipelines: usize,
) -> Result<()> {
    let fail = |msg: String| Err(Error::Invariant(format!("fold {fold}: {msg}")));
    let test_set: BTreeSet<usize> = test.iter().copied().collect();
    if stage1.iter().chain(stage2).any(|i| test_set.contains(i)) {
        return fail("test rows leaked into the training stages".into());
    }
    let s1: BTreeSet<usize> = stage1.iter().copied().collect();
    if stage2.iter().any(|i| s1.contains(i)) {
        return fail("stage-1 and stage-2 overlap".into());
    }
    let mut union: Vec<usize> = stage1.iter().chain(stage2).copied().collect();
    union.sort_unstable();
    if union != train {
        return fail("stages do not partition the training rows".into());
    }
    if entries != stage2.len() * pipelines {
        return fail(format!(
            "error matrix holds {entries} entries, expected {} x {pipelines}",
            stage2.len()
        ));
    }
    let expected = stage2_fraction * train.len() as f64;
    if (stage2.len() as f64 - expected).abs() > 1.0 {
        return fail(format!("stage-2 has {} rows, expected about {expected:.1}", stage2.len()));
    }
    Ok(())
}

struct FoldOutcome {
    split: FoldSplit,
    rows: Vec<PredictionRow>,
    entries: usize,
    missing_cells: usize,
}

/// Runs the full protocol on an in-memory dataset. `config.dataset` is only echoed.
pub fn run_on_dataset(config: &ExperimentConfig, data: &Dataset) -> Result<ExperimentReport> {
    let started = Instant::now();
    config.validate()?;
    let specs = config.pool.specs(config.seed)?;
    let labels: Vec<String> = specs.iter().map(|s| s.label.clone()).collect();
    let protocol = &config.protocol;

    let amputation_seed = rng::derive(config.seed, "amputation");
    let shared = if config.amputation.per_fold {
        None
    } else {
        Some(amputed(config, data, amputation_seed)?)
    };
    let plan = stratified_kfold(data, protocol.folds, rng::derive(config.seed, "folds"))?;

    let mut outcomes = Vec::with_capacity(protocol.folds);
    for fold in 0..protocol.folds {
        let masked = match &shared {
            Some(d) => d.clone(),
            None => amputed(config, data, rng::derive_index(amputation_seed, fold as u64))?,
        };
        let test = plan.test_indices(fold);
        let train = plan.train_indices(fold);
        let split_seed = rng::derive_index(rng::derive(config.seed, "stages"), fold as u64);
        let (stage1, stage2) = two_stage_split(&train, protocol.stage2_fraction, split_seed, masked.target())?;

        let stage1_data = masked.select(&stage1);
        let stage2_data = masked.select(&stage2);
        let test_data = masked.select(&test);
        let mut pipelines = fit_pool(&specs, &stage1_data)?;
        let errors = build_error_matrix(&mut pipelines, &stage2_data)?;
        check_fold(
            fold,
            &train,
            &test,
            &stage1,
            &stage2,
            protocol.stage2_fraction,
            errors.len(),
            pipelines.len(),
        )?;
        let mdew = ensemble::predict_batch(&test_data, &pipelines, &errors, protocol.k_neighbors, ensemble::Method::Mdew)?;
        let rows = test_data
            .row_ids()
            .iter()
            .zip(test_data.target())
            .zip(mdew)
            .map(|((&row_id, &target), m)| {
                let uma = ensemble::uniform_average(m.per_pipeline_probs.clone());
                PredictionRow {
                    row_id,
                    fold,
                    target,
                    uma_prob: uma.probability,
                    mdew_prob: m.probability,
                    pipeline_probs: m.per_pipeline_probs,
                    weights: m.weights,
                }
            })
            .collect();
        outcomes.push(FoldOutcome {
            split: FoldSplit {
                fold,
                test: test_data.row_ids().to_vec(),
                stage1: stage1_data.row_ids().to_vec(),
                stage2: stage2_data.row_ids().to_vec(),
            },
            rows,
            entries: errors.len(),
            missing_cells: masked.missing_count(),
        });
    }

    let mut folds = Vec::with_capacity(outcomes.len());
    for o in &outcomes {
        let rows: Vec<&PredictionRow> = o.rows.iter().collect();
        let (m, u) = errors_of(&rows);
        folds.push(FoldReport {
            fold: o.split.fold,
            test_rows: o.split.test.len(),
            stage1_rows: o.split.stage1.len(),
            stage2_rows: o.split.stage2.len(),
            error_matrix_entries: o.entries,
            fraction_improved: metrics::fraction_improved(&m, &u)?,
            methods: all_methods(&rows, &labels)?,
        });
    }

    let mut predictions: Vec<PredictionRow> = outcomes.iter().flat_map(|o| o.rows.iter().cloned()).collect();
    predictions.sort_by_key(|p| p.row_id);
    let rows: Vec<&PredictionRow> = predictions.iter().collect();
    let pooled = all_methods(&rows, &labels)?;
    let (mdew_err, uma_err) = errors_of(&rows);
    let ranks = metrics::fractional_ranks(&pooled.iter().map(|m| m.metrics.auroc).collect::<Vec<_>>());
    let cells = (data.nrows() * data.ncols()) as f64;
    let missing_fraction =
        outcomes.iter().map(|o| o.missing_cells as f64).sum::<f64>() / (outcomes.len() as f64 * cells);

    Ok(ExperimentReport {
        format_version: REPORT_FORMAT_VERSION,
        name: config.name(),
        seed: config.seed,
        mechanism: config.amputation.mechanism,
        // the output location is not part of the experiment
        config: ExperimentConfig {
            out: None,
            ..config.clone()
        },
        pipelines: labels,
        dataset: DatasetSummary {
            rows: data.nrows(),
            columns: data.ncols(),
            positive_fraction: data.positive_count() as f64 / data.nrows() as f64,
            missing_fraction,
        },
        pooled,
        fraction_improved: metrics::fraction_improved(&mdew_err, &uma_err)?,
        t_test: metrics::paired_t_test_less(&mdew_err, &uma_err)?,
        folds,
        ranks,
        predictions,
        splits: outcomes.into_iter().map(|o| o.split).collect(),
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the per-sample predictions with one probability and one weight column per pipeline.
pub fn write_predictions_csv(report: &ExperimentReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["row_id", "fold", "target", "uma_prob", "mdew_prob"]
        .map(String::from)
        .to_vec();
    header.extend(report.pipelines.iter().map(|l| format!("prob:{l}")));
    header.extend(report.pipelines.iter().map(|l| format!("weight:{l}")));
    w.write_record(&header)?;
    for p in &report.predictions {
        let mut rec = vec![
            p.row_id.to_string(),
            p.fold.to_string(),
            p.target.to_string(),
            p.uma_prob.to_string(),
            p.mdew_prob.to_string(),
        ];
        rec.extend(p.pipeline_probs.iter().map(f64::to_string));
        rec.extend(p.weights.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Reads back the per-sample predictions written by [`write_predictions_csv`].
pub fn read_predictions_csv(path: &Path) -> Result<(Vec<String>, Vec<PredictionRow>)> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
    let labels: Vec<String> = header
        .iter()
        .filter_map(|h| h.strip_prefix("prob:").map(String::from))
        .collect();
    let p = labels.len();
    if header.len() != 5 + 2 * p {
        return Err(Error::DimensionMismatch {
            expected: 5 + 2 * p,
            found: header.len(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |j: usize| -> Result<f64> {
            rec[j].parse().map_err(|_| Error::Parse {
                row: i,
                column: header[j].clone(),
                value: rec[j].to_string(),
            })
        };
        rows.push(PredictionRow {
            row_id: num(0)? as usize,
            fold: num(1)? as usize,
            target: num(2)? as u8,
            uma_prob: num(3)?,
            mdew_prob: num(4)?,
            pipeline_probs: (5..5 + p).map(num).collect::<Result<_>>()?,
            weights: (5 + p..5 + 2 * p).map(num).collect::<Result<_>>()?,
        });
    }
    Ok((labels, rows))
}

fn metrics_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("scope,method,average_precision,auroc,brier,mean_error,n\n");
    let mut push = |scope: &str, m: &MethodMetrics| {
        let _ = writeln!(
            s,
            "{scope},{},{},{},{},{},{}",
            m.method, m.metrics.average_precision, m.metrics.auroc, m.metrics.brier, m.mean_error, m.metrics.n
        );
    };
    for m in &report.pooled {
        push("pooled", m);
    }
    for f in &report.folds {
        for m in &f.methods {
            push(&format!("fold{}", f.fold), m);
        }
    }
    s
}

/// Writes `report.json`, `config.toml`, `predictions.csv`, `metrics.csv`,
/// `splits.json` and `timing.json` into `dir`. All but `timing.json` are
/// byte-identical for identical inputs.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(&dir.join("report.json"), &(serde_json::to_string_pretty(report)? + "\n"))?;
    write_file(&dir.join("config.toml"), &report.config.to_toml()?)?;
    write_predictions_csv(report, &dir.join("predictions.csv"))?;
    write_file(&dir.join("metrics.csv"), &metrics_csv(report))?;
    write_file(&dir.join("splits.json"), &(serde_json::to_string(&report.splits)? + "\n"))?;
    write_file(
        &dir.join("timing.json"),
        &serde_json::to_string(&serde_json::json!({ "wall_clock_seconds": report.wall_clock_seconds }))?,
    )
}

pub fn load_report(dir: &Path) -> Result<ExperimentReport> {
    let path = dir.join("report.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut report: ExperimentReport = serde_json::from_str(&text)?;
    let (_, rows) = read_predictions_csv(&dir.join("predictions.csv"))?;
    report.predictions = rows;
    Ok(report)
}

#[derive(Debug)]
pub struct GridOutcome {
    pub reports: Vec<ExperimentReport>,
    /// Experiments that failed, with their error; excluded from the rank table.
    pub failures: Vec<(String, Error)>,
    pub ranks: Option<RankTable>,
}

/// Runs independent experiments concurrently and ranks the successful ones.
pub fn run_grid(configs: &[ExperimentConfig]) -> GridOutcome {
    let results: Vec<(String, Result<ExperimentReport>)> = configs
        .par_iter()
        .map(|c| (c.name(), run_experiment(c)))
        .collect();
    collect_grid(results)
}

/// Like [`run_grid`] for configs paired with in-memory datasets.
pub fn run_grid_on(configs: &[(ExperimentConfig, Dataset)]) -> GridOutcome {
    let results = configs
        .par_iter()
        .map(|(c, d)| (c.name(), run_on_dataset(c, d)))
        .collect();
    collect_grid(results)
}

fn collect_grid(results: Vec<(String, Result<ExperimentReport>)>) -> GridOutcome {
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (name, r) in results {
        match r {
            Ok(r) => reports.push(r),
            Err(e) => failures.push((name, e)),
        }
    }
    let table: Vec<(String, Vec<(String, f64)>)> = reports
        .iter()
        .map(|r| {
            (
                r.name.clone(),
                r.pooled.iter().map(|m| (m.method.clone(), m.metrics.auroc)).collect(),
            )
        })
        .collect();
    let ranks = metrics::rank_experiments(&table).ok();
    GridOutcome {
        reports,
        failures,
        ranks,
    }
}

/// Writes each report into `dir/<name>/` plus `ranks.csv`, `rank_summary.csv` and `grid.json`.
pub fn emit_grid(outcome: &GridOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for r in &outcome.reports {
        emit_report(r, &dir.join(&r.name))?;
    }
    if let Some(t) = &outcome.ranks {
        t.write_csv(&dir.join("ranks.csv"))?;
        let mut s = String::from("label,median,q1,q3,iqr\n");
        for r in &t.summary {
            let _ = writeln!(s, "{},{},{},{},{}", r.label, r.median, r.q1, r.q3, r.iqr);
        }
        write_file(&dir.join("rank_summary.csv"), &s)?;
    }
    let summary = serde_json::json!({
        "experiments": outcome.reports.iter().map(|r| serde_json::json!({
            "name": r.name,
            "mechanism": r.mechanism,
            "mdew": r.method("mdew"),
            "uma": r.method("uma"),
            "fraction_improved": r.fraction_improved,
            "p_value": r.t_test.p_value,
        })).collect::<Vec<_>>(),
        "failures": outcome.failures.iter().map(|(n, e)| serde_json::json!({
            "name": n,
            "error": e.to_string(),
        })).collect::<Vec<_>>(),
    });
    write_file(&dir.join("grid.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))
}
