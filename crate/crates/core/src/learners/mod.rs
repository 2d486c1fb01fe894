//! Supervised learners used as imputation regressors and downstream classifiers.
//!
//! Every learner takes a complete matrix; missing values are handled upstream
//! by an imputer.

pub mod boosting;
pub mod forest;
pub mod knn;
pub mod linear;
pub mod tree;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use boosting::{fit_gbm, GradientBoosting};
pub use forest::{fit_random_forest, RandomForest};
pub use knn::{fit_knn_regressor, KnnRegressor};
pub use linear::{fit_bayes_ridge, LinearModel};
pub use tree::{best_split, Criterion, DecisionTree, Node, SplitCandidate, Task};

use crate::error::{invalid, Error, Result};
use crate::matrix::Matrix;

/// Candidate features examined at each forest split.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSubsample {
    Sqrt,
    Third,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Trees in a forest, or boosting rounds.
    pub n_trees: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
    /// `None` picks √d for classification forests and ⌈d/3⌉ for regression forests.
    pub feature_subsample: Option<FeatureSubsample>,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: 4,
            n_trees: 50,
            learning_rate: 0.3,
            min_samples_leaf: 1,
            feature_subsample: None,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl TreeParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth < 1 {
            return Err(invalid("max_depth must be at least 1"));
        }
        if self.n_trees < 1 {
            return Err(invalid("n_trees must be at least 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(invalid(format!(
                "learning_rate must lie in (0, 1], got {}",
                self.learning_rate
            )));
        }
        if self.min_samples_leaf < 1 {
            return Err(invalid("min_samples_leaf must be at least 1"));
        }
        Ok(())
    }
}

pub(crate) fn check_inputs(x: &Matrix, y: &[f64], task: Task) -> Result<()> {
    if x.nrows() == 0 {
        return Err(Error::NoRows);
    }
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch {
            expected: x.nrows(),
            found: y.len(),
        });
    }
    if x.as_slice().iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("learner inputs".into()));
    }
    if task == Task::Classification {
        if let Some(bad) = y.iter().find(|v| **v != 0.0 && **v != 1.0) {
            return Err(Error::NonBinaryTarget {
                row: y.iter().position(|v| v == bad).unwrap_or(0),
                value: bad.to_string(),
            });
        }
    }
    Ok(())
}

/// Single CART tree on all rows and all features.
pub fn fit_tree(x: &Matrix, y: &[f64], params: &TreeParams, task: Task) -> Result<DecisionTree> {
    params.validate()?;
    check_inputs(x, y, task)?;
    let mut rows: Vec<usize> = (0..x.nrows()).collect();
    Ok(tree::TreeBuilder {
        x,
        y,
        criterion: Criterion::for_task(task),
        max_depth: params.max_depth,
        min_samples_leaf: params.min_samples_leaf,
        max_features: None,
        rng: None,
    }
    .build(&mut rows, &tree::mean_of(y)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Regressor {
    BayesRidge(LinearModel),
    Knn(KnnRegressor),
    Tree(DecisionTree),
    Forest(RandomForest),
    Boosted(GradientBoosting),
}

impl Regressor {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Regressor::BayesRidge(m) => m.predict(x),
            Regressor::Knn(m) => m.predict(x),
            Regressor::Tree(m) => m.predict(x),
            Regressor::Forest(m) => m.predict(x),
            Regressor::Boosted(m) => m.predict(x),
        }
    }
}

/// Binary classifier exposing the probability of the positive class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "model", rename_all = "snake_case")]
pub enum Classifier {
    Knn(KnnRegressor),
    Tree(DecisionTree),
    Forest(RandomForest),
    Boosted(GradientBoosting),
}

impl Classifier {
    pub fn predict_proba(&self, x: &[f64]) -> f64 {
        let p = match self {
            Classifier::Knn(m) => m.predict(x),
            Classifier::Tree(m) => m.predict(x),
            Classifier::Forest(m) => m.predict(x),
            Classifier::Boosted(m) => m.predict(x),
        };
        p.clamp(0.0, 1.0)
    }
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    format_version: u32,
    model: T,
}

pub fn to_versioned_json<T: Serialize>(model: &T) -> Result<String> {
    Ok(serde_json::to_string(&Versioned {
        format_version: MODEL_FORMAT_VERSION,
        model,
    })?)
}

pub fn from_versioned_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let v: Versioned<T> = serde_json::from_str(text)?;
    if v.format_version != MODEL_FORMAT_VERSION {
        return Err(invalid(format!(
            "unsupported model format version {}",
            v.format_version
        )));
    }
    Ok(v.model)
}
