//! Gradient boosting over depth-limited regression trees.
//!
//! Regression fits squared-error residuals with leaf means. Classification
//! fits trees to the log-loss pseudo-residuals `y − σ(F)` and then replaces
//! each leaf with a Newton step `Σ r / Σ p(1 − p)`.

use serde::{Deserialize, Serialize};

use super::tree::{mean_of, Criterion, DecisionTree, Node, Task, TreeBuilder};
use super::{check_inputs, TreeParams};
use crate::error::Result;
use crate::matrix::Matrix;
use crate::missingness::sigmoid;

pub const PROBA_FLOOR: f64 = 1e-6;
const HESSIAN_FLOOR: f64 = 1e-12;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    pub task: Task,
    /// Initial raw score: the target mean, or the base-rate log-odds.
    pub base_score: f64,
    pub learning_rate: f64,
    pub trees: Vec<DecisionTree>,
    /// Set when a classifier was trained on a single class and is constant.
    pub degenerate: bool,
    /// Training loss (log-loss or MSE) before boosting and after each round.
    pub training_loss: Vec<f64>,
}

impl GradientBoosting {
    pub fn raw_score(&self, x: &[f64]) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.task {
            Task::Regression => self.raw_score(x),
            Task::Classification => clamp_proba(sigmoid(self.raw_score(x))),
        }
    }
}

fn clamp_proba(p: f64) -> f64 {
    p.clamp(PROBA_FLOOR, 1.0 - PROBA_FLOOR)
}

/// `ln(1 + e^f) − y·f`, evaluated without overflow.
#[inline]
pub(crate) fn log_loss_raw(y: f64, f: f64) -> f64 {
    let softplus = f.max(0.0) + (-f.abs()).exp().ln_1p();
    softplus - y * f
}

fn mean_loss(task: Task, y: &[f64], f: &[f64]) -> f64 {
    let total: f64 = match task {
        Task::Regression => y.iter().zip(f).map(|(y, f)| (y - f).powi(2)).sum(),
        Task::Classification => y.iter().zip(f).map(|(y, f)| log_loss_raw(*y, *f)).sum(),
    };
    total / y.len() as f64
}

pub fn fit_gbm(x: &Matrix, y: &[f64], params: &TreeParams, task: Task) -> Result<GradientBoosting> {
    params.validate()?;
    check_inputs(x, y, task)?;
    let n = x.nrows();
    let mean_y = y.iter().sum::<f64>() / n as f64;

    let base_score = match task {
        Task::Regression => mean_y,
        Task::Classification => {
            let p = clamp_proba(mean_y);
            if mean_y == 0.0 || mean_y == 1.0 {
                let f = vec![(p / (1.0 - p)).ln(); n];
                return Ok(GradientBoosting {
                    task,
                    base_score: f[0],
                    learning_rate: params.learning_rate,
                    trees: Vec::new(),
                    degenerate: true,
                    training_loss: vec![mean_loss(task, y, &f)],
                });
            }
            (p / (1.0 - p)).ln()
        }
    };

    let lr = params.learning_rate;
    let mut f = vec![base_score; n];
    let mut training_loss = vec![mean_loss(task, y, &f)];
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut residual = vec![0.0; n];
    for _ in 0..params.n_trees {
        for i in 0..n {
            residual[i] = match task {
                Task::Regression => y[i] - f[i],
                Task::Classification => y[i] - sigmoid(f[i]),
            };
        }
        let mut rows: Vec<usize> = (0..n).collect();
        let builder = TreeBuilder {
            x,
            y: &residual,
            criterion: Criterion::Variance,
            max_depth: params.max_depth,
            min_samples_leaf: params.min_samples_leaf,
            max_features: None,
            rng: None,
        };
        let tree = match task {
            Task::Regression => builder.build(&mut rows, &mean_of(&residual)),
            Task::Classification => {
                let newton = |rows: &[usize]| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for &i in rows {
                        let p = sigmoid(f[i]);
                        num += residual[i];
                        den += p * (1.0 - p);
                    }
                    num / den.max(HESSIAN_FLOOR)
                };
                let mut tree = builder.build(&mut rows, &newton);
                safeguard_leaves(&mut tree, x, y, &f, lr);
                tree
            }
        };
        for (i, fi) in f.iter_mut().enumerate() {
            *fi += lr * tree.predict(x.row(i));
        }
        training_loss.push(mean_loss(task, y, &f));
        trees.push(tree);
    }
    Ok(GradientBoosting {
        task,
        base_score,
        learning_rate: lr,
        trees,
        degenerate: false,
        training_loss,
    })
}

/// Halves any Newton leaf step that would raise the log-loss of the rows in
/// that leaf, so each round is a descent step.
fn safeguard_leaves(tree: &mut DecisionTree, x: &Matrix, y: &[f64], f: &[f64], lr: f64) {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); tree.nodes().len()];
    for i in 0..x.nrows() {
        members[tree.leaf_index(x.row(i))].push(i);
    }
    for (node, rows) in members.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let Node::Leaf { value } = tree.nodes()[node] else {
            continue;
        };
        let loss_at = |step: f64| rows.iter().map(|&i| log_loss_raw(y[i], f[i] + lr * step)).sum::<f64>();
        let before = loss_at(0.0);
        let mut step = value;
        let mut halvings = 0;
        while loss_at(step) > before {
            step *= 0.5;
            halvings += 1;
            if halvings == MAX_HALVINGS {
                step = 0.0;
                break;
            }
        }
        if step != value {
            tree.set_leaf_value(node, step);
        }
    }
}
