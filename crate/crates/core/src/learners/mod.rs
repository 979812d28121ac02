//! Classical single-objective learners and GBDT feature selection.
//!
//! All learners consume a dense row-major [`Matrix`] (post-imputation) and
//! binary labels. Each fitted model is immutable and implements [`Classifier`].

mod adaboost;
mod forest;
mod gbdt;
mod knn;
mod persist;
mod selection;
mod tree;

pub use adaboost::{fit_adaboost, AdaBoostConfig, AdaBoostModel, AdaBoostStage};
pub use forest::{fit_random_forest, RandomForestConfig, RandomForestModel};
pub use gbdt::{fit_gbdt, log_loss, sigmoid, GbdtConfig, GbdtModel};
pub use knn::{fit_knn, KnnConfig, KnnModel};
pub use persist::{load_model, save_model, BaselineKind, ModelArtifact, SavedModel, MODEL_FORMAT, MODEL_VERSION};
pub use selection::{
    feature_importance, select_features, select_top_k_union, write_importance_csv, FeatureSelection,
    ImportanceRanking,
};
pub use tree::{best_split, fit_decision_tree, fit_tree, DecisionTree, Node, SplitCandidate, TreeParams};

use serde::{Deserialize, Serialize};

use crate::cohort::Cohort;
use crate::error::{Error, Result};

/// Dense row-major matrix of features.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl Matrix {
    pub fn new(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if data.len() != n_rows * n_cols {
            return Err(Error::SchemaMismatch(format!(
                "matrix data length {} != {n_rows} x {n_cols}",
                data.len()
            )));
        }
        Ok(Matrix { data, n_rows, n_cols })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::SchemaMismatch("ragged rows".into()));
        }
        Ok(Matrix {
            data: rows.concat(),
            n_rows: rows.len(),
            n_cols,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.n_cols + col]
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.n_rows).map(move |i| self.row(i))
    }

    /// Copy keeping only `cols`, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.n_rows * cols.len());
        for r in self.rows() {
            data.extend(cols.iter().map(|&c| r[c]));
        }
        Matrix {
            data,
            n_rows: self.n_rows,
            n_cols: cols.len(),
        }
    }
}

/// The two prediction targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Severity,
    Outcome,
}

impl Target {
    pub const ALL: [Target; 2] = [Target::Severity, Target::Outcome];

    pub fn as_str(self) -> &'static str {
        match self {
            Target::Severity => "severity",
            Target::Outcome => "outcome",
        }
    }
}

/// Dense design matrix and both label vectors of a cohort, with columns in
/// the order of `features`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseData {
    pub features: Vec<String>,
    pub x: Matrix,
    pub severity: Vec<u8>,
    pub outcome: Vec<u8>,
}

impl DenseData {
    pub fn labels(&self, target: Target) -> &[u8] {
        match target {
            Target::Severity => &self.severity,
            Target::Outcome => &self.outcome,
        }
    }
}

/// Builds the design matrix. Fails if any requested value is missing.
pub fn dense_data(cohort: &Cohort, features: &[String]) -> Result<DenseData> {
    let mut data = Vec::with_capacity(cohort.len() * features.len());
    for s in cohort.samples() {
        for f in features {
            let v = s.value(f).ok_or_else(|| {
                Error::SchemaMismatch(format!(
                    "sample '{}' is missing '{f}'; impute before fitting",
                    s.sample_id
                ))
            })?;
            data.push(v);
        }
    }
    Ok(DenseData {
        features: features.to_vec(),
        x: Matrix::new(data, cohort.len(), features.len())?,
        severity: cohort.samples().iter().map(|s| s.severity.bit()).collect(),
        outcome: cohort.samples().iter().map(|s| s.outcome.bit()).collect(),
    })
}

/// A fitted binary classifier.
pub trait Classifier {
    fn n_features(&self) -> usize;

    /// Probability of class 1 for a row already known to have the right width.
    fn score(&self, row: &[f64]) -> f64;

    fn predict_proba(&self, row: &[f64]) -> Result<f64> {
        check_width(self.n_features(), row)?;
        Ok(self.score(row))
    }

    /// Class 1 iff the probability is at least 0.5.
    fn predict(&self, row: &[f64]) -> Result<u8> {
        Ok(u8::from(self.predict_proba(row)? >= 0.5))
    }
}

pub(crate) fn check_width(expected: usize, row: &[f64]) -> Result<()> {
    if row.len() != expected {
        return Err(Error::SchemaMismatch(format!(
            "expected {expected} features, got {}",
            row.len()
        )));
    }
    Ok(())
}

/// Both classes present and at least two samples.
pub(crate) fn check_fit_inputs(x: &Matrix, y: &[u8]) -> Result<()> {
    if x.n_rows() != y.len() {
        return Err(Error::SchemaMismatch(format!(
            "{} rows but {} labels",
            x.n_rows(),
            y.len()
        )));
    }
    if y.iter().any(|&v| v > 1) {
        return Err(Error::validation("labels must be 0 or 1"));
    }
    if y.len() < 2 {
        return Err(Error::DegenerateFit("need at least 2 samples".into()));
    }
    let ones = y.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == y.len() {
        return Err(Error::DegenerateFit("labels contain a single class".into()));
    }
    Ok(())
}
