//! k-nearest-neighbours on standardized features.

use serde::{Deserialize, Serialize};

use super::{check_fit_inputs, check_width, Classifier, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KnnConfig {
    pub k: usize,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig { k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub k: usize,
    means: Vec<f64>,
    sds: Vec<f64>,
    /// Features with non-zero training spread; the rest are ignored.
    active: Vec<usize>,
    points: Vec<Vec<f64>>,
    labels: Vec<u8>,
    n_features: usize,
}

pub fn fit_knn(x: &Matrix, y: &[u8], config: &KnnConfig) -> Result<KnnModel> {
    check_fit_inputs(x, y)?;
    if config.k < 1 || config.k > y.len() {
        return Err(Error::validation(format!(
            "knn.k must be in 1..={}, got {}",
            y.len(),
            config.k
        )));
    }
    let n = x.n_rows() as f64;
    let d = x.n_cols();
    let means: Vec<f64> = (0..d).map(|j| x.rows().map(|r| r[j]).sum::<f64>() / n).collect();
    let sds: Vec<f64> = (0..d)
        .map(|j| (x.rows().map(|r| (r[j] - means[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let active: Vec<usize> = (0..d).filter(|&j| sds[j] > 0.0).collect();
    let mut model = KnnModel {
        k: config.k,
        means,
        sds,
        active,
        points: Vec::new(),
        labels: y.to_vec(),
        n_features: d,
    };
    model.points = x.rows().map(|r| model.standardize(r)).collect();
    Ok(model)
}

impl KnnModel {
    fn standardize(&self, row: &[f64]) -> Vec<f64> {
        self.active
            .iter()
            .map(|&j| (row[j] - self.means[j]) / self.sds[j])
            .collect()
    }

    /// Labels of the k nearest training points. Equal distances order class 0
    /// first, so the result does not depend on training-set storage order.
    fn neighbour_labels(&self, row: &[f64]) -> Vec<u8> {
        let q = self.standardize(row);
        let mut dist: Vec<(f64, u8)> = self
            .points
            .iter()
            .zip(&self.labels)
            .map(|(p, &l)| (p.iter().zip(&q).map(|(a, b)| (a - b) * (a - b)).sum(), l))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        dist.into_iter().take(self.k).map(|(_, l)| l).collect()
    }
}

impl Classifier for KnnModel {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn score(&self, row: &[f64]) -> f64 {
        let labels = self.neighbour_labels(row);
        labels.iter().filter(|&&l| l == 1).count() as f64 / self.k as f64
    }

    /// Majority of the k neighbours; an even split goes to class 0.
    fn predict(&self, row: &[f64]) -> Result<u8> {
        check_width(self.n_features, row)?;
        let ones = self.neighbour_labels(row).iter().filter(|&&l| l == 1).count();
        Ok(u8::from(2 * ones > self.k))
    }
}
