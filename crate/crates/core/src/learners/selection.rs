//! Split-gain feature importance and the top-k union used as the shared feature set.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::gbdt::{fit_gbdt, GbdtConfig, GbdtModel};
use super::{dense_data, Target};
use crate::cohort::Cohort;
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    /// Importance per feature index; sums to 1 when `has_splits`.
    pub importance: Vec<f64>,
    /// Feature indices by descending importance, ties by lower index.
    pub order: Vec<usize>,
    /// False when the model contains no split at all; `importance` is then all zero.
    pub has_splits: bool,
    #[serde(default)]
    pub names: Vec<String>,
}

impl ImportanceRanking {
    fn from_raw(raw: Vec<f64>) -> Self {
        let total: f64 = raw.iter().sum();
        let has_splits = total > 0.0;
        let importance = if has_splits {
            raw.iter().map(|v| v / total).collect()
        } else {
            vec![0.0; raw.len()]
        };
        let mut order: Vec<usize> = (0..importance.len()).collect();
        order.sort_by(|&a, &b| importance[b].total_cmp(&importance[a]).then(a.cmp(&b)));
        ImportanceRanking {
            importance,
            order,
            has_splits,
            names: Vec::new(),
        }
    }

    pub fn with_names(mut self, names: &[String]) -> Self {
        self.names = names.to_vec();
        self
    }

    /// Indices of the `k` most important features with strictly positive importance.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        self.order
            .iter()
            .copied()
            .filter(|&i| self.importance[i] > 0.0)
            .take(k)
            .collect()
    }

    /// `(name, importance)` in ranking order.
    pub fn ranked(&self) -> Vec<(String, f64)> {
        self.order
            .iter()
            .map(|&i| {
                let name = self.names.get(i).cloned().unwrap_or_else(|| format!("f{i}"));
                (name, self.importance[i])
            })
            .collect()
    }
}

/// Sum of training-loss reduction over every split on each feature, normalized.
pub fn feature_importance(model: &GbdtModel) -> ImportanceRanking {
    let mut raw = vec![0.0; super::Classifier::n_features(model)];
    for tree in model.trees() {
        for (f, gain) in tree.split_gains() {
            raw[f] += gain;
        }
    }
    ImportanceRanking::from_raw(raw)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub severity: ImportanceRanking,
    pub outcome: ImportanceRanking,
    /// Union of both top-k sets, by descending max importance.
    pub union: Vec<String>,
}

impl FeatureSelection {
    pub fn ranking(&self, target: Target) -> &ImportanceRanking {
        match target {
            Target::Severity => &self.severity,
            Target::Outcome => &self.outcome,
        }
    }
}

/// Fits one GBDT per target on the dense `train` cohort and unions their top-k
/// features. Features with zero importance are never selected.
pub fn select_features(train: &Cohort, k: usize, config: &GbdtConfig) -> Result<FeatureSelection> {
    let names: Vec<String> = train.schema().names().into_iter().map(String::from).collect();
    let data = dense_data(train, &names)?;
    let mut rankings = Vec::new();
    for target in Target::ALL {
        let model = fit_gbdt(&data.x, data.labels(target), config)?;
        rankings.push(feature_importance(&model).with_names(&names));
    }
    let outcome = rankings.pop().unwrap();
    let severity = rankings.pop().unwrap();
    let mut chosen: Vec<usize> = severity.top_k(k);
    for i in outcome.top_k(k) {
        if !chosen.contains(&i) {
            chosen.push(i);
        }
    }
    let best = |i: usize| severity.importance[i].max(outcome.importance[i]);
    chosen.sort_by(|&a, &b| best(b).total_cmp(&best(a)).then(a.cmp(&b)));
    let union = chosen.into_iter().map(|i| names[i].clone()).collect();
    Ok(FeatureSelection {
        severity,
        outcome,
        union,
    })
}

pub fn select_top_k_union(train: &Cohort, k: usize) -> Result<Vec<String>> {
    Ok(select_features(train, k, &GbdtConfig::default())?.union)
}

/// `feature,importance` rows in ranking order.
pub fn write_importance_csv<W: Write>(ranking: &ImportanceRanking, writer: W, comments: &[String]) -> Result<()> {
    let mut writer = writer;
    for c in comments {
        writeln!(writer, "# {c}")?;
    }
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["feature", "importance"]).map_err(std::io::Error::from)?;
    for (name, imp) in ranking.ranked() {
        wtr.write_record([name, imp.to_string()]).map_err(std::io::Error::from)?;
    }
    wtr.flush()?;
    Ok(())
}
