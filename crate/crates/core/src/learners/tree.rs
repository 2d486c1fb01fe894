//! Greedy CART trees with axis-aligned splits.

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::rng::StdRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Regression,
    Classification,
}

/// Impurity used to score candidate splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criterion {
    /// Sum of squared deviations from the node mean.
    Variance,
    /// Count-weighted binary Gini impurity, `n · 2p(1 − p)`.
    Gini,
}

impl Criterion {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Regression => Criterion::Variance,
            Task::Classification => Criterion::Gini,
        }
    }

    /// Impurity of a node holding `n` targets with sum `s` and sum of squares `ss`.
    #[inline]
    pub fn impurity(self, n: f64, s: f64, ss: f64) -> f64 {
        if n == 0.0 {
            return 0.0;
        }
        match self {
            Criterion::Variance => (ss - s * s / n).max(0.0),
            Criterion::Gini => {
                let p = s / n;
                n * 2.0 * p * (1.0 - p)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// A fitted tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

impl DecisionTree {
    /// A single leaf predicting `value` everywhere.
    pub fn constant(value: f64) -> Self {
        DecisionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if x[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Index of the leaf node `x` lands in.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut at = 0;
        while let Node::Split {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[at]
        {
            at = if x[feature] <= threshold { left } else { right };
        }
        at
    }

    pub(crate) fn set_leaf_value(&mut self, node: usize, v: f64) {
        if let Node::Leaf { value } = &mut self.nodes[node] {
            *value = v;
        }
    }

    /// Number of edges on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn root_split(&self) -> Option<(usize, f64)> {
        match self.nodes.first()? {
            Node::Split {
                feature, threshold, ..
            } => Some((*feature, *threshold)),
            Node::Leaf { .. } => None,
        }
    }
}

/// Best split found for a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Parent impurity minus the summed child impurities.
    pub gain: f64,
}

/// Exhaustive search over `features` for the split of `rows` with the largest
/// impurity decrease. Ties keep the earliest feature, then the lowest threshold.
pub fn best_split(
    x: &Matrix,
    y: &[f64],
    rows: &[usize],
    features: &[usize],
    criterion: Criterion,
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let n = rows.len();
    let min_leaf = min_samples_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let (s, ss) = rows.iter().fold((0.0, 0.0), |(s, ss), &i| (s + y[i], ss + y[i] * y[i]));
    let parent = criterion.impurity(n as f64, s, ss);

    let mut best: Option<SplitCandidate> = None;
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &f in features {
        pairs.clear();
        pairs.extend(rows.iter().map(|&i| (x.get(i, f), y[i])));
        pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let (mut ls, mut lss) = (0.0, 0.0);
        for k in 0..n - 1 {
            let (v, t) = pairs[k];
            ls += t;
            lss += t * t;
            let n_left = k + 1;
            let next = pairs[k + 1].0;
            if next <= v || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let children = criterion.impurity(n_left as f64, ls, lss)
                + criterion.impurity((n - n_left) as f64, s - ls, ss - lss);
            let gain = parent - children;
            if best.is_none_or(|b| gain > b.gain) {
                let mid = 0.5 * (v + next);
                let threshold = if mid < next { mid } else { v };
                best = Some(SplitCandidate {
                    feature: f,
                    threshold,
                    gain,
                });
            }
        }
    }
    best
}

pub(crate) struct TreeBuilder<'a> {
    pub x: &'a Matrix,
    pub y: &'a [f64],
    pub criterion: Criterion,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Features examined per split; `None` or `>= d` means all of them.
    pub max_features: Option<usize>,
    pub rng: Option<&'a mut StdRng>,
}

impl TreeBuilder<'_> {
    /// Grows a tree over `rows` (duplicates allowed, as in a bootstrap sample),
    /// filling leaves with `leaf_value` of the rows reaching them.
    pub fn build(mut self, rows: &mut [usize], leaf_value: &dyn Fn(&[usize]) -> f64) -> DecisionTree {
        let mut nodes = Vec::new();
        self.grow(rows, 0, leaf_value, &mut nodes);
        DecisionTree { nodes }
    }

    fn features(&mut self) -> Vec<usize> {
        let d = self.x.ncols();
        match (self.max_features, self.rng.as_deref_mut()) {
            (Some(m), Some(rng)) if m < d => {
                let mut f = index::sample(rng, d, m.max(1)).into_vec();
                f.sort_unstable();
                f
            }
            _ => (0..d).collect(),
        }
    }

    fn grow(
        &mut self,
        rows: &mut [usize],
        depth: usize,
        leaf_value: &dyn Fn(&[usize]) -> f64,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let id = nodes.len();
        nodes.push(Node::Leaf {
            value: leaf_value(rows),
        });
        let first = self.y[rows[0]];
        let pure = rows.iter().all(|&i| self.y[i] == first);
        if depth >= self.max_depth || pure {
            return id;
        }
        let features = self.features();
        let Some(split) = best_split(self.x, self.y, rows, &features, self.criterion, self.min_samples_leaf)
        else {
            return id;
        };
        let mut cut = 0;
        for k in 0..rows.len() {
            if self.x.get(rows[k], split.feature) <= split.threshold {
                rows.swap(k, cut);
                cut += 1;
            }
        }
        let (l, r) = rows.split_at_mut(cut);
        let left = self.grow(l, depth + 1, leaf_value, nodes);
        let right = self.grow(r, depth + 1, leaf_value, nodes);
        nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

pub(crate) fn mean_of(y: &[f64]) -> impl Fn(&[usize]) -> f64 + '_ {
    move |rows| rows.iter().map(|&i| y[i]).sum::<f64>() / rows.len() as f64
}
