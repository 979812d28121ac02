#![allow(dead_code)]

use std::path::Path;

use serolm::cohort::CohortSpec;
use serolm::learners::{GbdtConfig, RandomForestConfig};
use serolm::pipeline::{CohortSource, PipelineConfig};
use serolm::preprocess::PreprocessConfig;
use serolm::seqmodel::SeqModelConfig;

/// A planted cohort small enough for a full run in a few seconds.
pub fn small_config(out: &Path) -> PipelineConfig {
    let mut spec = CohortSpec::planted();
    spec.n_patients = 120;
    PipelineConfig {
        output_dir: out.to_path_buf(),
        n_bins: 8,
        cohort: CohortSource::Synthetic { spec },
        preprocess: PreprocessConfig {
            missing_threshold: 0.2,
            ..Default::default()
        },
        gbdt: GbdtConfig {
            n_estimators: 30,
            ..Default::default()
        },
        random_forest: RandomForestConfig {
            n_trees: 8,
            ..Default::default()
        },
        seqmodel: SeqModelConfig {
            embed_dim: 16,
            ffn_dim: 32,
            epochs: 3,
            ..Default::default()
        },
        ..Default::default()
    }
}
