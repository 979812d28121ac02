//! Bagged classification trees with per-split feature subsampling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, weighted_mean, DecisionTree, TreeParams};
use super::{check_fit_inputs, Classifier, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomForestConfig {
    pub n_trees: usize,
    /// `None` grows trees until leaves are pure or unsplittable.
    pub max_depth: Option<usize>,
    /// Features tried per split; `None` means `floor(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
    pub rng_seed: u64,
}

impl Default for RandomForestConfig {
    fn default() -> Self {
        RandomForestConfig {
            n_trees: 100,
            max_depth: None,
            max_features: None,
            bootstrap: true,
            rng_seed: 2020,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub trees: Vec<DecisionTree>,
    n_features: usize,
}

pub fn fit_random_forest(x: &Matrix, y: &[u8], config: &RandomForestConfig) -> Result<RandomForestModel> {
    check_fit_inputs(x, y)?;
    if config.n_trees < 1 {
        return Err(Error::validation("random_forest.n_trees must be >= 1"));
    }
    let n = y.len();
    let d = x.n_cols();
    let max_features = config
        .max_features
        .unwrap_or_else(|| ((d as f64).sqrt().floor() as usize).max(1))
        .clamp(1, d.max(1));
    let params = TreeParams {
        max_depth: config.max_depth.unwrap_or(usize::MAX),
        max_features: Some(max_features),
    };
    let targets: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let trees = (0..config.n_trees)
        .map(|t| {
            // One independent stream per tree keeps trees reproducible in isolation.
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            rng.set_stream(t as u64);
            let rows: Vec<usize> = if config.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_tree(x, &targets, None, &rows, params, Some(&mut rng), &|r| {
                weighted_mean(&targets, None, r)
            })
        })
        .collect();
    Ok(RandomForestModel { trees, n_features: d })
}

impl Classifier for RandomForestModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    /// Fraction of trees voting for class 1.
    fn score(&self, row: &[f64]) -> f64 {
        let votes = self.trees.iter().filter(|t| t.leaf_value(row) >= 0.5).count();
        votes as f64 / self.trees.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::fit_decision_tree;

    fn data() -> (Matrix, Vec<u8>) {
        let rows: Vec<Vec<f64>> = (0..80)
            .map(|i| vec![i as f64, ((i * 31) % 17) as f64, ((i * 7) % 5) as f64])
            .collect();
        let y: Vec<u8> = (0..80).map(|i| ((i > 40) ^ (i % 9 == 0)) as u8).collect();
        (Matrix::from_rows(&rows).unwrap(), y)
    }

    #[test]
    fn single_tree_reduces_to_decision_tree() {
        let (x, y) = data();
        let cfg = RandomForestConfig {
            n_trees: 1,
            max_depth: Some(4),
            max_features: Some(3),
            bootstrap: false,
            rng_seed: 1,
        };
        let forest = fit_random_forest(&x, &y, &cfg).unwrap();
        let tree = fit_decision_tree(&x, &y, TreeParams { max_depth: 4, max_features: None }).unwrap();
        for r in x.rows() {
            assert_eq!(forest.predict(r).unwrap(), tree.predict(r).unwrap());
        }
    }

    #[test]
    fn vote_fraction_and_determinism() {
        let (x, y) = data();
        let cfg = RandomForestConfig { n_trees: 10, ..Default::default() };
        let a = fit_random_forest(&x, &y, &cfg).unwrap();
        assert_eq!(a, fit_random_forest(&x, &y, &cfg).unwrap());
        let p = a.predict_proba(x.row(3)).unwrap();
        assert!((p * 10.0 - (p * 10.0).round()).abs() < 1e-12);
        let hits = x.rows().zip(&y).filter(|(r, &l)| a.predict(r).unwrap() == l).count();
        assert!(hits >= 72);
    }
}
