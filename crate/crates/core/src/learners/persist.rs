//! Versioned JSON artifacts for fitted classical models.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adaboost::{fit_adaboost, AdaBoostConfig, AdaBoostModel};
use super::forest::{fit_random_forest, RandomForestConfig, RandomForestModel};
use super::gbdt::{fit_gbdt, GbdtConfig, GbdtModel};
use super::knn::{fit_knn, KnnConfig, KnnModel};
use super::tree::DecisionTree;
use super::{Classifier, Matrix, Target};
use crate::error::{Error, Result};

pub const MODEL_FORMAT: &str = "serolm-model";
pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    AdaBoost,
    Gbdt,
    RandomForest,
    Knn,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 4] = [
        BaselineKind::AdaBoost,
        BaselineKind::Gbdt,
        BaselineKind::RandomForest,
        BaselineKind::Knn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BaselineKind::AdaBoost => "adaboost",
            BaselineKind::Gbdt => "gbdt",
            BaselineKind::RandomForest => "random_forest",
            BaselineKind::Knn => "knn",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            BaselineKind::AdaBoost => "AdaBoost",
            BaselineKind::Gbdt => "GBDT",
            BaselineKind::RandomForest => "RandomForest",
            BaselineKind::Knn => "KNN",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == name)
    }

    pub fn fit(
        self,
        x: &Matrix,
        y: &[u8],
        adaboost: &AdaBoostConfig,
        gbdt: &GbdtConfig,
        forest: &RandomForestConfig,
        knn: &KnnConfig,
    ) -> Result<SavedModel> {
        Ok(match self {
            BaselineKind::AdaBoost => SavedModel::AdaBoost(fit_adaboost(x, y, adaboost)?),
            BaselineKind::Gbdt => SavedModel::Gbdt(fit_gbdt(x, y, gbdt)?),
            BaselineKind::RandomForest => SavedModel::RandomForest(fit_random_forest(x, y, forest)?),
            BaselineKind::Knn => SavedModel::Knn(fit_knn(x, y, knn)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SavedModel {
    Tree(DecisionTree),
    Gbdt(GbdtModel),
    AdaBoost(AdaBoostModel),
    RandomForest(RandomForestModel),
    Knn(KnnModel),
}

impl SavedModel {
    pub fn as_classifier(&self) -> &dyn Classifier {
        match self {
            SavedModel::Tree(m) => m,
            SavedModel::Gbdt(m) => m,
            SavedModel::AdaBoost(m) => m,
            SavedModel::RandomForest(m) => m,
            SavedModel::Knn(m) => m,
        }
    }
}

/// Self-describing model file: format tag, version, feature order and target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelArtifact {
    pub format: String,
    pub version: u32,
    pub features: Vec<String>,
    pub target: Target,
    #[serde(default)]
    pub config_hash: String,
    #[serde(default)]
    pub seed: u64,
    pub model: SavedModel,
}

impl ModelArtifact {
    pub fn new(features: Vec<String>, target: Target, model: SavedModel) -> Self {
        ModelArtifact {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            features,
            target,
            config_hash: String::new(),
            seed: 0,
            model,
        }
    }
}

pub fn save_model(artifact: &ModelArtifact, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_vec(artifact)?)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let artifact: ModelArtifact = serde_json::from_slice(&std::fs::read(path)?)?;
    if artifact.format != MODEL_FORMAT || artifact.version != MODEL_VERSION {
        return Err(Error::Format(format!(
            "expected {MODEL_FORMAT} v{MODEL_VERSION}, found {} v{}",
            artifact.format, artifact.version
        )));
    }
    Ok(artifact)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_preserves_predictions() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 * 0.37, ((i * 7) % 9) as f64]).collect();
        let y: Vec<u8> = (0..40).map(|i| (i % 3 == 0 || i > 30) as u8).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for kind in BaselineKind::ALL {
            let model = kind
                .fit(
                    &x,
                    &y,
                    &AdaBoostConfig::default(),
                    &GbdtConfig::default(),
                    &RandomForestConfig { n_trees: 5, ..Default::default() },
                    &KnnConfig::default(),
                )
                .unwrap();
            let art = ModelArtifact::new(vec!["a".into(), "b".into()], Target::Outcome, model);
            let path = dir.path().join(format!("{}.json", kind.as_str()));
            save_model(&art, &path).unwrap();
            let back = load_model(&path).unwrap();
            assert_eq!(back, art);
            for r in x.rows() {
                assert_eq!(
                    back.model.as_classifier().predict_proba(r).unwrap().to_bits(),
                    art.model.as_classifier().predict_proba(r).unwrap().to_bits()
                );
            }
        }
    }
}
