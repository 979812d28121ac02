//! Discrete AdaBoost over depth-1 stumps.

use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, weighted_mean, DecisionTree, TreeParams};
use super::{check_fit_inputs, Classifier, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaBoostConfig {
    pub n_estimators: usize,
}

impl Default for AdaBoostConfig {
    fn default() -> Self {
        AdaBoostConfig { n_estimators: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostStage {
    pub stump: DecisionTree,
    pub alpha: f64,
    /// Weighted training error of the stump when it was fitted.
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaBoostModel {
    pub stages: Vec<AdaBoostStage>,
    /// Class-1 rate used when no stage was retained.
    pub fallback: f64,
    n_features: usize,
}

fn stump_vote(stump: &DecisionTree, row: &[f64]) -> u8 {
    u8::from(stump.leaf_value(row) >= 0.5)
}

/// Boosting halts when a stump's weighted error reaches 0.5 (stage dropped)
/// or 0 (stage kept with `alpha = 1` since the usual weight is infinite).
pub fn fit_adaboost(x: &Matrix, y: &[u8], config: &AdaBoostConfig) -> Result<AdaBoostModel> {
    check_fit_inputs(x, y)?;
    if config.n_estimators < 1 {
        return Err(Error::validation("adaboost.n_estimators must be >= 1"));
    }
    let n = y.len();
    let targets: Vec<f64> = y.iter().map(|&v| f64::from(v)).collect();
    let rows: Vec<usize> = (0..n).collect();
    let mut weights = vec![1.0 / n as f64; n];
    let params = TreeParams {
        max_depth: 1,
        max_features: None,
    };
    let mut stages = Vec::new();
    for _ in 0..config.n_estimators {
        let stump = {
            let w = &weights;
            fit_tree(x, &targets, Some(w), &rows, params, None, &|r| {
                weighted_mean(&targets, Some(w), r)
            })
        };
        let wrong: Vec<bool> = (0..n).map(|i| stump_vote(&stump, x.row(i)) != y[i]).collect();
        let total: f64 = weights.iter().sum();
        let error: f64 = weights
            .iter()
            .zip(&wrong)
            .filter(|(_, &w)| w)
            .map(|(w, _)| w)
            .sum::<f64>()
            / total;
        if error >= 0.5 {
            break;
        }
        if error <= 0.0 {
            stages.push(AdaBoostStage {
                stump,
                alpha: 1.0,
                error,
            });
            break;
        }
        let alpha = 0.5 * ((1.0 - error) / error).ln();
        for (w, &bad) in weights.iter_mut().zip(&wrong) {
            *w *= if bad { alpha.exp() } else { (-alpha).exp() };
        }
        let sum: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= sum);
        stages.push(AdaBoostStage { stump, alpha, error });
    }
    Ok(AdaBoostModel {
        stages,
        fallback: targets.iter().sum::<f64>() / n as f64,
        n_features: x.n_cols(),
    })
}

impl Classifier for AdaBoostModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    /// Alpha-weighted fraction of stages voting for class 1.
    fn score(&self, row: &[f64]) -> f64 {
        let total: f64 = self.stages.iter().map(|s| s.alpha).sum();
        if total <= 0.0 {
            return self.fallback;
        }
        let ones: f64 = self
            .stages
            .iter()
            .filter(|s| stump_vote(&s.stump, row) == 1)
            .map(|s| s.alpha)
            .sum();
        ones / total
    }
}
