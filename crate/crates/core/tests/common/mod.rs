#![allow(dead_code)]

use mdew::ensemble::{build_pool, ClassifierKind, ClassifierSpec, PipelineSpec};
use mdew::imputers::ImputerSpec;
use mdew::learners::TreeParams;
use mdew::runner::{DatasetConfig, ExperimentConfig, PoolConfig};
use mdew::{rng, Dataset, Matrix};
use rand::RngExt;
use rand_distr::StandardNormal;

pub fn normal(r: &mut rng::StdRng) -> f64 {
    r.sample(StandardNormal)
}

/// Equicorrelated Gaussian features (pairwise correlation `rho`) with a
/// logistic label on their sum.
pub fn correlated(n: usize, d: usize, rho: f64, seed: u64) -> Dataset {
    let mut r = rng::rng_from(seed);
    let mut values = Vec::with_capacity(n * d);
    let mut target = Vec::with_capacity(n);
    for _ in 0..n {
        let z = normal(&mut r);
        let row: Vec<f64> = (0..d)
            .map(|_| rho.sqrt() * z + (1.0 - rho).sqrt() * normal(&mut r))
            .collect();
        let logit = 1.5 * row.iter().sum::<f64>() / (d as f64).sqrt();
        let p = 1.0 / (1.0 + (-logit).exp());
        target.push(u8::from(r.random::<f64>() < p));
        values.extend(row);
    }
    Dataset::complete(Matrix::from_vec(n, d, values).unwrap(), target).unwrap()
}

/// Two regions of equal size, far apart in feature space. In the first,
/// features are noisy linear images of two latent factors and the label is the
/// sign of the first factor; in the second, rows sit around a few cluster
/// centers and the label is the cluster's parity.
pub fn heterogeneous(n: usize, seed: u64) -> Dataset {
    let d = 6;
    let mut r = rng::rng_from(seed);
    let loadings: Vec<(f64, f64)> = (0..d).map(|_| (normal(&mut r), 0.5 * normal(&mut r))).collect();
    let centers: Vec<Vec<f64>> = (0..6)
        .map(|_| (0..d).map(|_| 8.0 + r.random_range(-3.0..3.0)).collect())
        .collect();
    let mut values = Vec::with_capacity(n * d);
    let mut target = Vec::with_capacity(n);
    for i in 0..n {
        if i % 2 == 0 {
            let (u, v) = (normal(&mut r), normal(&mut r));
            values.extend(loadings.iter().map(|(a, b)| a * u + b * v + 0.1 * normal(&mut r)));
            target.push(u8::from(u + 0.3 * normal(&mut r) > 0.0));
        } else {
            let m = r.random_range(0..centers.len());
            values.extend(centers[m].iter().map(|c| c + 0.3 * normal(&mut r)));
            let flip = r.random::<f64>() < 0.05;
            target.push(u8::from((m % 2 == 1) != flip));
        }
    }
    Dataset::complete(Matrix::from_vec(n, d, values).unwrap(), target).unwrap()
}

pub fn small_trees(n_trees: usize) -> TreeParams {
    TreeParams {
        n_trees,
        ..TreeParams::default()
    }
}

/// Imputers `names` × {rf, gbm} with `n_trees` trees everywhere.
pub fn light_pool(names: &[&str], n_trees: usize, seed: u64) -> Vec<PipelineSpec> {
    let imputers: Vec<ImputerSpec> = names
        .iter()
        .map(|n| {
            let mut s = ImputerSpec::from_name(n).unwrap();
            s.tree_params = small_trees(n_trees);
            s
        })
        .collect();
    let classifiers = [ClassifierKind::RandomForest, ClassifierKind::Gbm].map(|kind| ClassifierSpec {
        kind,
        params: small_trees(n_trees),
    });
    build_pool(&imputers, &classifiers, seed)
}

pub fn light_pool_config(names: &[&str], n_trees: usize) -> PoolConfig {
    let mut pool = PoolConfig {
        imputers: names.iter().map(|s| s.to_string()).collect(),
        ..PoolConfig::default()
    };
    pool.imputer.trees = small_trees(n_trees);
    pool.classifier = small_trees(n_trees);
    pool
}

/// Config for an in-memory dataset; the dataset section is only echoed.
pub fn config(name: &str, seed: u64, pool: PoolConfig) -> ExperimentConfig {
    ExperimentConfig {
        name: None,
        seed,
        out: None,
        dataset: DatasetConfig {
            name: name.into(),
            path: format!("{name}.csv").into(),
            target: "y".into(),
            missing_tokens: vec![String::new()],
        },
        amputation: Default::default(),
        protocol: Default::default(),
        pool,
    }
}
