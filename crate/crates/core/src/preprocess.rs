//! Missingness filter, patient-level split and imputation for the classical learners.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, SampleRecord};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImputeStrategy {
    #[default]
    Mean,
    Median,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Features missing in strictly more than this fraction of samples are dropped.
    pub missing_threshold: f64,
    /// Fraction of patients assigned to training.
    pub split_ratio: f64,
    pub rng_seed: u64,
    pub impute_strategy: ImputeStrategy,
    /// Keep at most this many samples per patient after the split.
    pub max_samples_per_patient: Option<usize>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            missing_threshold: 0.10,
            split_ratio: 0.70,
            rng_seed: 2020,
            impute_strategy: ImputeStrategy::Mean,
            max_samples_per_patient: Some(2),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.missing_threshold > 0.0 && self.missing_threshold < 1.0) {
            bad.push(format!(
                "preprocess.missing_threshold must be in (0,1), got {}",
                self.missing_threshold
            ));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            bad.push(format!(
                "preprocess.split_ratio must be in (0,1), got {}",
                self.split_ratio
            ));
        }
        if self.max_samples_per_patient == Some(0) {
            bad.push("preprocess.max_samples_per_patient must be >= 1".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

/// Drops every feature whose missing fraction is strictly greater than `threshold`.
pub fn drop_high_missing_features(cohort: &Cohort, threshold: f64) -> Result<(Cohort, Vec<String>)> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::validation(format!(
            "missing threshold must be in (0,1), got {threshold}"
        )));
    }
    let (dropped, kept): (Vec<String>, Vec<String>) = cohort
        .schema()
        .names()
        .into_iter()
        .map(String::from)
        .partition(|name| cohort.missing_fraction(name) > threshold);
    Ok((cohort.restrict(&kept)?, dropped))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitResult {
    pub train: Cohort,
    pub test: Cohort,
    pub train_patient_ids: BTreeSet<String>,
    pub test_patient_ids: BTreeSet<String>,
}

/// Number of training patients for `n` patients at `ratio`: the ceiling of
/// `ratio * n`, kept within `1..n` so both sides are non-empty.
pub fn train_patient_count(n: usize, ratio: f64) -> usize {
    // The epsilon absorbs representation error such as 0.7 * 10 = 7.000...01.
    let raw = (ratio * n as f64 - 1e-9).ceil() as usize;
    raw.clamp(1, n - 1)
}

fn subset(cohort: &Cohort, patients: &BTreeSet<String>) -> Result<Cohort> {
    let samples = cohort
        .samples()
        .iter()
        .filter(|s| patients.contains(&s.patient_id))
        .cloned()
        .collect();
    Cohort::new(cohort.schema().clone(), samples)
}

/// Shuffles patients with `rng_seed` and sends the first `ceil(ratio * P)` to
/// training. Samples always follow their patient.
pub fn patient_split(cohort: &Cohort, ratio: f64, rng_seed: u64) -> Result<SplitResult> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::validation(format!("split ratio must be in (0,1), got {ratio}")));
    }
    // Sorted ids make the split independent of sample storage order.
    let mut ids: Vec<String> = cohort
        .patient_ids()
        .into_iter()
        .map(String::from)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if ids.len() < 2 {
        return Err(Error::validation(format!(
            "patient split needs at least 2 patients, got {}",
            ids.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    ids.shuffle(&mut rng);
    let n_train = train_patient_count(ids.len(), ratio);
    let test_ids: BTreeSet<String> = ids.split_off(n_train).into_iter().collect();
    let train_ids: BTreeSet<String> = ids.into_iter().collect();
    Ok(SplitResult {
        train: subset(cohort, &train_ids)?,
        test: subset(cohort, &test_ids)?,
        train_patient_ids: train_ids,
        test_patient_ids: test_ids,
    })
}

/// Keeps at most `max` samples per patient, chosen with `rng_seed`, preserving
/// the original sample order.
pub fn subsample_per_patient(cohort: &Cohort, max: usize, rng_seed: u64) -> Result<Cohort> {
    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, s) in cohort.samples().iter().enumerate() {
        by_patient.entry(&s.patient_id).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut keep = BTreeSet::new();
    for (_, mut idx) in by_patient {
        if idx.len() > max {
            idx.shuffle(&mut rng);
            idx.truncate(max);
        }
        keep.extend(idx);
    }
    let samples = keep
        .into_iter()
        .map(|i| cohort.samples()[i].clone())
        .collect();
    Cohort::new(cohort.schema().clone(), samples)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputeModel {
    pub strategy: ImputeStrategy,
    /// Fill value per feature, learned from the training split.
    pub fills: BTreeMap<String, f64>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

pub fn fit_impute(train: &Cohort, strategy: ImputeStrategy) -> Result<ImputeModel> {
    let mut fills = BTreeMap::new();
    for name in train.schema().names() {
        let mut observed: Vec<f64> = train.samples().iter().filter_map(|s| s.value(name)).collect();
        if observed.is_empty() {
            return Err(Error::UnfittableFeature(name.to_string()));
        }
        let fill = match strategy {
            ImputeStrategy::Mean => observed.iter().sum::<f64>() / observed.len() as f64,
            ImputeStrategy::Median => {
                observed.sort_by(f64::total_cmp);
                median(&observed)
            }
        };
        fills.insert(name.to_string(), fill);
    }
    Ok(ImputeModel { strategy, fills })
}

impl ImputeModel {
    /// Fills the absent values of a single record.
    pub fn fill_values(&self, names: &[&str], values: &BTreeMap<String, f64>) -> Result<BTreeMap<String, f64>> {
        let mut out = values.clone();
        for name in names {
            let fill = self
                .fills
                .get(*name)
                .ok_or_else(|| Error::SchemaMismatch(format!("no imputation value for '{name}'")))?;
            out.entry(name.to_string()).or_insert(*fill);
        }
        Ok(out)
    }
}

/// Replaces every missing value with the model's fill. Observed values are untouched.
pub fn apply_impute(model: &ImputeModel, cohort: &Cohort) -> Result<Cohort> {
    let names = cohort.schema().names();
    let samples = cohort
        .samples()
        .iter()
        .map(|s| {
            Ok(SampleRecord {
                values: model.fill_values(&names, &s.values)?,
                ..s.clone()
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(cohort.schema().clone(), samples)
}
