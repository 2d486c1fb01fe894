use rand::RngExt;
use serde::{Deserialize, Serialize};

use super::tree::{mean_of, Criterion, DecisionTree, Task, TreeBuilder};
use super::{check_inputs, FeatureSubsample, TreeParams};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::rng;

/// Bagged trees with per-split feature subsampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForest {
    pub task: Task,
    pub trees: Vec<DecisionTree>,
}

impl RandomForest {
    /// Mean tree output; for classification, the mean leaf positive fraction.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

pub(crate) fn features_per_split(subsample: FeatureSubsample, d: usize) -> usize {
    match subsample {
        FeatureSubsample::Sqrt => ((d as f64).sqrt().floor() as usize).max(1),
        FeatureSubsample::Third => d.div_ceil(3).max(1),
        FeatureSubsample::All => d,
    }
}

pub fn fit_random_forest(x: &Matrix, y: &[f64], params: &TreeParams, task: Task) -> Result<RandomForest> {
    params.validate()?;
    check_inputs(x, y, task)?;
    let n = x.nrows();
    let subsample = params.feature_subsample.unwrap_or(match task {
        Task::Classification => FeatureSubsample::Sqrt,
        Task::Regression => FeatureSubsample::Third,
    });
    let max_features = features_per_split(subsample, x.ncols());
    let leaf = mean_of(y);
    let trees = (0..params.n_trees)
        .map(|t| {
            let mut rng = rng::rng_from(rng::derive_index(params.seed, t as u64));
            let mut rows: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            TreeBuilder {
                x,
                y,
                criterion: Criterion::for_task(task),
                max_depth: params.max_depth,
                min_samples_leaf: params.min_samples_leaf,
                max_features: Some(max_features),
                rng: Some(&mut rng),
            }
            .build(&mut rows, &leaf)
        })
        .collect();
    Ok(RandomForest { task, trees })
}
