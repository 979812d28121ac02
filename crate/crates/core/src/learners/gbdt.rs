//! Logistic-loss gradient boosting over regression trees.

use serde::{Deserialize, Serialize};

use super::tree::{fit_tree, DecisionTree, TreeParams};
use super::{check_fit_inputs, Classifier, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbdtConfig {
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    pub rng_seed: u64,
}

impl Default for GbdtConfig {
    fn default() -> Self {
        GbdtConfig {
            n_estimators: 100,
            learning_rate: 0.01,
            max_depth: 3,
            rng_seed: 2020,
        }
    }
}

impl GbdtConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.n_estimators < 1 {
            bad.push("gbdt.n_estimators must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push(format!("gbdt.learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.max_depth < 1 {
            bad.push("gbdt.max_depth must be >= 1".to_string());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoostStage {
    pub tree: DecisionTree,
    /// Shrinkage actually applied to this tree's leaf values.
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    /// Log-odds of the training base rate.
    pub init: f64,
    pub stages: Vec<BoostStage>,
    pub config: GbdtConfig,
    /// Mean training log-loss before the first tree and after each one.
    pub loss_curve: Vec<f64>,
    n_features: usize,
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Mean logistic loss of raw scores against 0/1 labels.
pub fn log_loss(scores: &[f64], y: &[u8]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(y)
        .map(|(&f, &l)| softplus(f) - f64::from(l) * f)
        .sum();
    total / scores.len() as f64
}

const MAX_HALVINGS: usize = 30;

/// Fits a boosted ensemble. Each round fits a depth-limited tree to the
/// residuals `y - p` and sets leaves by one Newton step `sum(r) / sum(p(1-p))`.
///
/// The shrunken step is halved until the training loss does not increase;
/// if no step size achieves that, boosting stops early.
pub fn fit_gbdt(x: &Matrix, y: &[u8], config: &GbdtConfig) -> Result<GbdtModel> {
    config.validate()?;
    check_fit_inputs(x, y)?;
    let n = y.len();
    let base = y.iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
    let mut model = GbdtModel::constant(base, x.n_cols(), config.clone());
    let mut scores = vec![model.init; n];
    let rows: Vec<usize> = (0..n).collect();
    let params = TreeParams {
        max_depth: config.max_depth,
        max_features: None,
    };
    let mut loss = log_loss(&scores, y);
    model.loss_curve.push(loss);
    let mut residual = vec![0.0; n];
    let mut hessian = vec![0.0; n];
    for _ in 0..config.n_estimators {
        for i in 0..n {
            let p = sigmoid(scores[i]);
            residual[i] = f64::from(y[i]) - p;
            hessian[i] = p * (1.0 - p);
        }
        let leaf = |r: &[usize]| {
            let g: f64 = r.iter().map(|&i| residual[i]).sum();
            let h: f64 = r.iter().map(|&i| hessian[i]).sum();
            if h > 1e-12 {
                g / h
            } else {
                0.0
            }
        };
        let tree = fit_tree(x, &residual, None, &rows, params, None, &leaf);
        let update: Vec<f64> = (0..n).map(|i| tree.leaf_value(x.row(i))).collect();
        let mut step = config.learning_rate;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial: Vec<f64> = scores.iter().zip(&update).map(|(s, u)| s + step * u).collect();
            let trial_loss = log_loss(&trial, y);
            if trial_loss <= loss {
                accepted = Some((trial, trial_loss));
                break;
            }
            step /= 2.0;
        }
        let Some((trial, trial_loss)) = accepted else {
            break;
        };
        scores = trial;
        loss = trial_loss;
        model.loss_curve.push(loss);
        model.stages.push(BoostStage { tree, step });
    }
    Ok(model)
}

impl GbdtModel {
    /// Zero-tree model predicting `base_rate` everywhere.
    pub fn constant(base_rate: f64, n_features: usize, config: GbdtConfig) -> Self {
        let p = base_rate.clamp(1e-12, 1.0 - 1e-12);
        GbdtModel {
            init: (p / (1.0 - p)).ln(),
            stages: Vec::new(),
            config,
            loss_curve: Vec::new(),
            n_features,
        }
    }

    pub fn raw_score(&self, row: &[f64]) -> f64 {
        self.init
            + self
                .stages
                .iter()
                .map(|s| s.step * s.tree.leaf_value(row))
                .sum::<f64>()
    }

    pub fn trees(&self) -> impl Iterator<Item = &DecisionTree> {
        self.stages.iter().map(|s| &s.tree)
    }
}

impl Classifier for GbdtModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, row: &[f64]) -> f64 {
        sigmoid(self.raw_score(row))
    }
}
