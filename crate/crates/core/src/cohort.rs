//! Patient cohorts: feature catalog, per-sample records, synthesis and CSV I/O.
//!
//! Labels live on the patient. Every sample of one patient carries the same
//! severity and outcome, and constructors reject cohorts that violate this.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PATIENT_ID: &str = "patient_id";
pub const SAMPLE_ID: &str = "sample_id";
pub const SEVERITY: &str = "severity";
pub const OUTCOME: &str = "outcome";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Mild,
    Severe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Survive,
    Death,
}

impl Severity {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Severity::Mild),
            1 => Some(Severity::Severe),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Severity::Mild => "mild",
            Severity::Severe => "severe",
        }
    }
}

impl Outcome {
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Outcome::Survive),
            1 => Some(Outcome::Death),
            _ => None,
        }
    }

    pub fn bit(self) -> u8 {
        self as u8
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Survive => "survive",
            Outcome::Death => "death",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Continuous,
    Binary,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub label: String,
    pub kind: FeatureKind,
    pub display_order: usize,
}

impl FeatureDef {
    pub fn new(name: &str, label: &str, kind: FeatureKind, display_order: usize) -> Self {
        Self {
            name: name.to_string(),
            label: label.to_string(),
            kind,
            display_order,
        }
    }
}

/// Ordered catalog of features. Columns, prompt lines and vocabulary all
/// follow `display_order`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FeatureDef>", into = "Vec<FeatureDef>")]
pub struct FeatureSchema {
    features: Vec<FeatureDef>,
}

impl TryFrom<Vec<FeatureDef>> for FeatureSchema {
    type Error = Error;

    fn try_from(features: Vec<FeatureDef>) -> Result<Self> {
        FeatureSchema::new(features)
    }
}

impl From<FeatureSchema> for Vec<FeatureDef> {
    fn from(schema: FeatureSchema) -> Self {
        schema.features
    }
}

impl Default for FeatureSchema {
    /// The nine-feature importance union plus Sex and DM.
    fn default() -> Self {
        use FeatureKind::*;
        let defs = [
            ("Age", "Age", Continuous),
            ("Sex", "Sex", Binary),
            ("HBP", "HBP", Binary),
            ("DM", "DM", Binary),
            ("LYMPH%", "LYMPH%", Continuous),
            ("Neu%", "Neu%", Continuous),
            ("hs-CRP", "hs-CRP", Continuous),
            ("D-Dimer", "D-Dimer", Continuous),
            ("Cre", "Cre", Continuous),
            ("ALB", "ALB", Continuous),
            // Direct bilirubin.
            ("BC", "BC", Continuous),
        ];
        let features = defs
            .iter()
            .enumerate()
            .map(|(i, (n, l, k))| FeatureDef::new(n, l, *k, i))
            .collect();
        FeatureSchema { features }
    }
}

impl FeatureSchema {
    pub fn new(mut features: Vec<FeatureDef>) -> Result<Self> {
        let mut problems = Vec::new();
        let mut names = BTreeSet::new();
        for f in &features {
            if f.name.trim().is_empty() {
                problems.push("feature name must be non-empty".to_string());
            } else if !names.insert(f.name.clone()) {
                problems.push(format!("duplicate feature name '{}'", f.name));
            }
            if [PATIENT_ID, SAMPLE_ID, SEVERITY, OUTCOME].contains(&f.name.as_str()) {
                problems.push(format!("feature name '{}' is reserved", f.name));
            }
        }
        let mut orders: Vec<usize> = features.iter().map(|f| f.display_order).collect();
        orders.sort_unstable();
        if orders.iter().enumerate().any(|(i, &o)| i != o) {
            problems.push("display_order must be a permutation of 0..len".to_string());
        }
        if !problems.is_empty() {
            return Err(Error::Validation(problems));
        }
        features.sort_by_key(|f| f.display_order);
        Ok(FeatureSchema { features })
    }

    /// Features sorted by display order.
    pub fn features(&self) -> &[FeatureDef] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.features.iter().map(|f| f.name.as_str()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureDef> {
        self.features.iter().find(|f| f.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    /// Sub-schema keeping only `keep`, in this schema's display order.
    pub fn retain(&self, keep: &[String]) -> Result<FeatureSchema> {
        for name in keep {
            if !self.contains(name) {
                return Err(Error::SchemaMismatch(format!("unknown feature '{name}'")));
            }
        }
        let features = self
            .features
            .iter()
            .filter(|f| keep.contains(&f.name))
            .enumerate()
            .map(|(i, f)| FeatureDef {
                display_order: i,
                ..f.clone()
            })
            .collect();
        Ok(FeatureSchema { features })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub patient_id: String,
    pub sample_id: String,
    /// Observed values only; an absent key is a missing value.
    pub values: BTreeMap<String, f64>,
    pub severity: Severity,
    pub outcome: Outcome,
}

impl SampleRecord {
    pub fn value(&self, feature: &str) -> Option<f64> {
        self.values.get(feature).copied()
    }
}

/// Immutable, validated collection of samples under one schema.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    schema: FeatureSchema,
    samples: Vec<SampleRecord>,
}

impl Cohort {
    pub fn new(schema: FeatureSchema, samples: Vec<SampleRecord>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut labels: HashMap<&str, (Severity, Outcome)> = HashMap::new();
        for s in &samples {
            if !seen.insert(s.sample_id.as_str()) {
                return Err(Error::validation(format!(
                    "duplicate sample_id '{}'",
                    s.sample_id
                )));
            }
            for (name, &v) in &s.values {
                let def = schema.get(name).ok_or_else(|| {
                    Error::SchemaMismatch(format!(
                        "sample '{}' has unknown feature '{}'",
                        s.sample_id, name
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::validation(format!(
                        "sample '{}' feature '{}' is not finite",
                        s.sample_id, name
                    )));
                }
                if def.kind == FeatureKind::Binary && v != 0.0 && v != 1.0 {
                    return Err(Error::validation(format!(
                        "sample '{}' binary feature '{}' has value {}",
                        s.sample_id, name, v
                    )));
                }
            }
            let pair = (s.severity, s.outcome);
            match labels.get(s.patient_id.as_str()) {
                Some(&existing) if existing != pair => {
                    return Err(Error::ConflictingLabels {
                        patient_id: s.patient_id.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    labels.insert(&s.patient_id, pair);
                }
            }
        }
        Ok(Cohort { schema, samples })
    }

    /// Same samples limited to the features in `keep`, schema order preserved.
    pub fn restrict(&self, keep: &[String]) -> Result<Cohort> {
        let schema = self.schema.retain(keep)?;
        let samples = self
            .samples
            .iter()
            .map(|s| SampleRecord {
                values: s
                    .values
                    .iter()
                    .filter(|(k, _)| schema.contains(k))
                    .map(|(k, v)| (k.clone(), *v))
                    .collect(),
                ..s.clone()
            })
            .collect();
        Ok(Cohort { schema, samples })
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn samples(&self) -> &[SampleRecord] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Distinct patient ids in order of first appearance.
    pub fn patient_ids(&self) -> Vec<&str> {
        let mut seen = BTreeSet::new();
        self.samples
            .iter()
            .filter(|s| seen.insert(s.patient_id.as_str()))
            .map(|s| s.patient_id.as_str())
            .collect()
    }

    /// Fraction of samples in which `feature` is absent.
    pub fn missing_fraction(&self, feature: &str) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let missing = self
            .samples
            .iter()
            .filter(|s| !s.values.contains_key(feature))
            .count();
        missing as f64 / self.samples.len() as f64
    }

    pub fn into_parts(self) -> (FeatureSchema, Vec<SampleRecord>) {
        (self.schema, self.samples)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleCountRange {
    pub min: usize,
    pub max: usize,
}

/// Location/scale of a synthesized feature. For binary features `loc` is the
/// prevalence; for `log` features the draw is `exp(loc + scale * z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub loc: f64,
    pub scale: f64,
    #[serde(default)]
    pub log: bool,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl Marginal {
    fn normal(loc: f64, scale: f64) -> Self {
        Marginal {
            loc,
            scale,
            log: false,
            min: None,
            max: None,
        }
    }

    fn log_normal(loc: f64, scale: f64) -> Self {
        Marginal {
            log: true,
            ..Marginal::normal(loc, scale)
        }
    }

    fn prevalence(p: f64) -> Self {
        Marginal::normal(p, 0.0)
    }

    fn clamped(mut self, min: f64, max: f64) -> Self {
        self.min = Some(min);
        self.max = Some(max);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EffectWeight {
    #[serde(default)]
    pub severity: f64,
    #[serde(default)]
    pub outcome: f64,
}

/// Parameters of the synthetic cohort generator. The defaults reproduce the
/// published cohort shape: 616 patients, 40.2% severe, 7.4% death, age 61 (14.5).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub samples_per_patient: SampleCountRange,
    pub severe_rate: f64,
    pub death_given_severe: f64,
    pub death_given_mild: f64,
    pub age_mean: f64,
    pub age_sd: f64,
    pub male_rate: f64,
    /// Standard deviation of the gaussian term added to each latent risk.
    pub risk_noise_sd: f64,
    /// Per-sample jitter around the patient level, in standardized units.
    pub within_patient_sd: f64,
    /// Decimal places kept in synthesized lab values.
    pub decimals: u32,
    pub feature_marginals: BTreeMap<String, Marginal>,
    pub effect_weights: BTreeMap<String, EffectWeight>,
    pub missing_rate: BTreeMap<String, f64>,
    pub rng_seed: u64,
    pub schema: FeatureSchema,
}

pub const AGE: &str = "Age";
pub const SEX: &str = "Sex";

impl Default for CohortSpec {
    fn default() -> Self {
        let marginals = [
            ("HBP", Marginal::prevalence(0.30)),
            ("DM", Marginal::prevalence(0.15)),
            ("LYMPH%", Marginal::log_normal(2.8, 0.55).clamped(0.5, 70.0)),
            ("Neu%", Marginal::normal(72.0, 12.0).clamped(20.0, 99.0)),
            ("hs-CRP", Marginal::log_normal(2.9, 1.2).clamped(0.1, 320.0)),
            ("D-Dimer", Marginal::log_normal(-0.2, 1.1).clamped(0.01, 21.0)),
            ("Cre", Marginal::log_normal(4.3, 0.35)),
            ("ALB", Marginal::normal(35.0, 5.0).clamped(15.0, 55.0)),
            ("BC", Marginal::log_normal(1.4, 0.6)),
        ];
        let effects = [
            ("Age", 0.3, 0.6),
            ("HBP", 0.0, 0.4),
            ("LYMPH%", -0.7, -0.8),
            ("Neu%", 0.3, 0.6),
            ("hs-CRP", 0.4, 0.7),
            ("D-Dimer", 0.8, 0.0),
            ("Cre", 0.5, 0.0),
            ("ALB", -0.5, 0.0),
            ("BC", 0.4, 0.0),
        ];
        let lab_missing = [
            "LYMPH%", "Neu%", "hs-CRP", "D-Dimer", "Cre", "ALB", "BC",
        ];
        CohortSpec {
            n_patients: 616,
            samples_per_patient: SampleCountRange { min: 1, max: 20 },
            severe_rate: 0.402,
            death_given_severe: 46.0 / 248.0,
            death_given_mild: 0.0,
            age_mean: 61.0,
            age_sd: 14.5,
            male_rate: 0.485,
            risk_noise_sd: 1.0,
            within_patient_sd: 0.25,
            decimals: 2,
            feature_marginals: marginals
                .into_iter()
                .map(|(n, m)| (n.to_string(), m))
                .collect(),
            effect_weights: effects
                .into_iter()
                .map(|(n, s, o)| {
                    (
                        n.to_string(),
                        EffectWeight {
                            severity: s,
                            outcome: o,
                        },
                    )
                })
                .collect(),
            missing_rate: lab_missing
                .into_iter()
                .map(|n| (n.to_string(), 0.05))
                .collect(),
            rng_seed: 2020,
            schema: FeatureSchema::default(),
        }
    }
}

/// Lab features carrying signal in [`CohortSpec::planted`].
pub const PLANTED_FEATURES: [&str; 4] = ["LYMPH%", "hs-CRP", "D-Dimer", "ALB"];

impl CohortSpec {
    /// 600 patients, 9 features, signal in exactly [`PLANTED_FEATURES`] and
    /// 10% MCAR missingness on every lab value.
    pub fn planted() -> Self {
        let base = CohortSpec::default();
        let keep: Vec<String> = ["Age", "Sex", "LYMPH%", "Neu%", "hs-CRP", "D-Dimer", "Cre", "ALB", "BC"]
            .into_iter()
            .map(String::from)
            .collect();
        let schema = base.schema.retain(&keep).expect("planted features are in the default schema");
        let weights = [(-1.0, -0.9), (0.9, 1.0), (1.0, 0.6), (-0.8, -0.8)];
        CohortSpec {
            n_patients: 600,
            samples_per_patient: SampleCountRange { min: 1, max: 3 },
            death_given_severe: 0.35,
            risk_noise_sd: 0.5,
            feature_marginals: base
                .feature_marginals
                .into_iter()
                .filter(|(k, _)| schema.contains(k))
                .collect(),
            effect_weights: PLANTED_FEATURES
                .iter()
                .zip(weights)
                .map(|(n, (s, o))| (n.to_string(), EffectWeight { severity: s, outcome: o }))
                .collect(),
            missing_rate: keep[2..].iter().map(|n| (n.clone(), 0.10)).collect(),
            schema,
            ..base
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: CohortSpec =
            toml::from_str(text).map_err(|e| Error::validation(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("cohort spec serializes")
    }

    /// Checks every field and reports all offenders at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let rate = |name: &str, v: f64, bad: &mut Vec<String>| {
            if !(0.0..=1.0).contains(&v) {
                bad.push(format!("{name} must be in [0,1], got {v}"));
            }
        };
        if self.n_patients < 1 {
            bad.push("n_patients must be >= 1".into());
        }
        let range = &self.samples_per_patient;
        if range.min < 1 || range.min > range.max {
            bad.push(format!(
                "samples_per_patient must satisfy 1 <= min <= max, got {}..{}",
                range.min, range.max
            ));
        }
        rate("severe_rate", self.severe_rate, &mut bad);
        rate("death_given_severe", self.death_given_severe, &mut bad);
        rate("death_given_mild", self.death_given_mild, &mut bad);
        rate("male_rate", self.male_rate, &mut bad);
        for (what, v) in [
            ("age_sd", self.age_sd),
            ("risk_noise_sd", self.risk_noise_sd),
            ("within_patient_sd", self.within_patient_sd),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                bad.push(format!("{what} must be finite and >= 0, got {v}"));
            }
        }
        for (name, r) in &self.missing_rate {
            rate(&format!("missing_rate.{name}"), *r, &mut bad);
        }
        let known = |name: &String, table: &str, bad: &mut Vec<String>| {
            if !self.schema.contains(name) {
                bad.push(format!("{table}.{name}: feature not in schema"));
            }
        };
        for name in self.feature_marginals.keys() {
            known(name, "feature_marginals", &mut bad);
        }
        for name in self.effect_weights.keys() {
            known(name, "effect_weights", &mut bad);
        }
        for name in self.missing_rate.keys() {
            known(name, "missing_rate", &mut bad);
        }
        for f in self.schema.features() {
            if f.name == AGE || f.name == SEX {
                continue;
            }
            match self.feature_marginals.get(&f.name) {
                None => bad.push(format!("feature_marginals.{}: missing", f.name)),
                Some(m) if f.kind == FeatureKind::Binary && !(0.0..=1.0).contains(&m.loc) => {
                    bad.push(format!(
                        "feature_marginals.{}: binary prevalence must be in [0,1]",
                        f.name
                    ))
                }
                Some(m) if !(m.scale >= 0.0 && m.loc.is_finite()) => bad.push(format!(
                    "feature_marginals.{}: loc must be finite and scale >= 0",
                    f.name
                )),
                _ => {}
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }
}

fn round_to(v: f64, decimals: u32) -> f64 {
    let scale = 10f64.powi(decimals as i32);
    (v * scale).round() / scale
}

/// Indices of the `count` largest risks. Ties go to the earlier index.
fn top_by_risk(indices: &[usize], risk: &[f64], count: usize) -> BTreeSet<usize> {
    let mut order = indices.to_vec();
    order.sort_by(|&a, &b| risk[b].total_cmp(&risk[a]).then(a.cmp(&b)));
    order.into_iter().take(count).collect()
}

/// Synthesizes a cohort from `spec`.
///
/// Each patient gets a standardized draw `z_f` per feature. Severity goes to the
/// `round(severe_rate * n)` patients with the highest latent risk
/// `sum_f w_f z_f + noise`; death is assigned the same way within the severe
/// and mild groups using the outcome weights. Samples jitter around the
/// patient level, then MCAR masking removes values. Labels are never masked.
pub fn generate_cohort(spec: &CohortSpec) -> Result<Cohort> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let schema = &spec.schema;
    let n = spec.n_patients;
    let nf = schema.len();

    // Patient-level standardized draws and raw patient-level binary values.
    let mut z = vec![vec![0.0; nf]; n];
    let mut binary_value = vec![vec![0.0; nf]; n];
    let mut sev_risk = vec![0.0; n];
    let mut out_risk = vec![0.0; n];
    for p in 0..n {
        for (j, f) in schema.features().iter().enumerate() {
            let prevalence = match (f.name.as_str(), f.kind) {
                (SEX, _) => Some(spec.male_rate),
                (_, FeatureKind::Binary) => Some(spec.feature_marginals[&f.name].loc),
                _ => None,
            };
            z[p][j] = match prevalence {
                Some(prev) => {
                    let bit = rng.random_bool(prev);
                    binary_value[p][j] = if bit { 1.0 } else { 0.0 };
                    let sd = (prev * (1.0 - prev)).sqrt();
                    if sd > 0.0 {
                        (binary_value[p][j] - prev) / sd
                    } else {
                        0.0
                    }
                }
                None => rng.sample(StandardNormal),
            };
        }
        let e_sev: f64 = rng.sample(StandardNormal);
        let e_out: f64 = rng.sample(StandardNormal);
        sev_risk[p] = e_sev * spec.risk_noise_sd;
        out_risk[p] = e_out * spec.risk_noise_sd;
        for (j, f) in schema.features().iter().enumerate() {
            if let Some(w) = spec.effect_weights.get(&f.name) {
                sev_risk[p] += w.severity * z[p][j];
                out_risk[p] += w.outcome * z[p][j];
            }
        }
    }

    let all: Vec<usize> = (0..n).collect();
    let n_severe = (spec.severe_rate * n as f64).round() as usize;
    let severe = top_by_risk(&all, &sev_risk, n_severe);
    let (severe_idx, mild_idx): (Vec<usize>, Vec<usize>) =
        all.iter().partition(|p| severe.contains(p));
    let deaths_severe = (spec.death_given_severe * severe_idx.len() as f64).round() as usize;
    let deaths_mild = (spec.death_given_mild * mild_idx.len() as f64).round() as usize;
    let mut dead = top_by_risk(&severe_idx, &out_risk, deaths_severe);
    dead.extend(top_by_risk(&mild_idx, &out_risk, deaths_mild));

    let width = n.to_string().len().max(4);
    let mut samples = Vec::new();
    for p in 0..n {
        let patient_id = format!("P{:0width$}", p + 1, width = width);
        let severity = if severe.contains(&p) {
            Severity::Severe
        } else {
            Severity::Mild
        };
        let outcome = if dead.contains(&p) {
            Outcome::Death
        } else {
            Outcome::Survive
        };
        let count = rng.random_range(spec.samples_per_patient.min..=spec.samples_per_patient.max);
        for s in 0..count {
            let mut values = BTreeMap::new();
            for (j, f) in schema.features().iter().enumerate() {
                let value = if f.name == AGE {
                    (spec.age_mean + spec.age_sd * z[p][j]).round().clamp(18.0, 100.0)
                } else if f.kind == FeatureKind::Binary || f.name == SEX {
                    binary_value[p][j]
                } else {
                    let m = &spec.feature_marginals[&f.name];
                    let jitter: f64 = rng.sample(StandardNormal);
                    let std = z[p][j] + spec.within_patient_sd * jitter;
                    let raw = if m.log {
                        (m.loc + m.scale * std).exp()
                    } else {
                        m.loc + m.scale * std
                    };
                    let clamped = raw
                        .max(m.min.unwrap_or(f64::NEG_INFINITY))
                        .min(m.max.unwrap_or(f64::INFINITY));
                    round_to(clamped, spec.decimals)
                };
                let rate = spec.missing_rate.get(&f.name).copied().unwrap_or(0.0);
                let missing = rate > 0.0 && rng.random_bool(rate);
                if !missing {
                    values.insert(f.name.clone(), value);
                }
            }
            samples.push(SampleRecord {
                patient_id: patient_id.clone(),
                sample_id: format!("{patient_id}-S{:02}", s + 1),
                values,
                severity,
                outcome,
            });
        }
    }
    Cohort::new(schema.clone(), samples)
}

fn csv_error(path: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_string(),
        line,
        message: message.into(),
    }
}

/// Reads a cohort from CSV. Lines starting with `#` are comments; extra
/// columns not named by the schema are ignored.
pub fn read_cohort_csv<R: Read>(reader: R, schema: &FeatureSchema, origin: &str) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| csv_error(origin, 1, e.to_string()))?
        .clone();
    let column = |name: &str| headers.iter().position(|h| h == name);
    let mut missing_cols = Vec::new();
    for required in [PATIENT_ID, SAMPLE_ID, SEVERITY, OUTCOME] {
        if column(required).is_none() {
            missing_cols.push(format!("missing required column '{required}'"));
        }
    }
    for f in schema.features() {
        if column(&f.name).is_none() {
            missing_cols.push(format!("missing feature column '{}'", f.name));
        }
    }
    if !missing_cols.is_empty() {
        return Err(Error::Validation(missing_cols));
    }
    let pid_col = column(PATIENT_ID).unwrap();
    let sid_col = column(SAMPLE_ID).unwrap();
    let sev_col = column(SEVERITY).unwrap();
    let out_col = column(OUTCOME).unwrap();
    let feature_cols: Vec<(String, usize)> = schema
        .features()
        .iter()
        .map(|f| (f.name.clone(), column(&f.name).unwrap()))
        .collect();

    let mut samples = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_error(origin, line, e.to_string())
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let label = |col: usize, name: &str| -> Result<u8> {
            match row.get(col).unwrap_or("") {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(csv_error(
                    origin,
                    line,
                    format!("{name} must be 0 or 1, got {other:?}"),
                )),
            }
        };
        let severity = Severity::from_bit(label(sev_col, SEVERITY)?).unwrap();
        let outcome = Outcome::from_bit(label(out_col, OUTCOME)?).unwrap();
        let mut values = BTreeMap::new();
        for (name, col) in &feature_cols {
            let cell = row.get(*col).unwrap_or("");
            if cell.is_empty() {
                continue;
            }
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| {
                    csv_error(origin, line, format!("non-numeric value {cell:?} in column '{name}'"))
                })?;
            values.insert(name.clone(), v);
        }
        samples.push(SampleRecord {
            patient_id: row.get(pid_col).unwrap_or("").to_string(),
            sample_id: row.get(sid_col).unwrap_or("").to_string(),
            values,
            severity,
            outcome,
        });
    }
    Cohort::new(schema.clone(), samples)
}

pub fn load_cohort_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Cohort> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    read_cohort_csv(file, schema, &path.display().to_string())
}

/// Writes `cohort` as CSV, optionally preceded by `#` comment lines.
pub fn write_cohort_csv<W: Write>(cohort: &Cohort, mut writer: W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(writer, "# {c}")?;
    }
    let mut wtr = csv::Writer::from_writer(writer);
    let names = cohort.schema().names();
    let mut header = vec![PATIENT_ID, SAMPLE_ID, SEVERITY, OUTCOME];
    header.extend(names.iter().copied());
    wtr.write_record(&header).map_err(std::io::Error::from)?;
    for s in cohort.samples() {
        let mut row = vec![
            s.patient_id.clone(),
            s.sample_id.clone(),
            s.severity.bit().to_string(),
            s.outcome.bit().to_string(),
        ];
        // `Display` for f64 is the shortest representation that parses back exactly.
        row.extend(
            names
                .iter()
                .map(|n| s.value(n).map(|v| v.to_string()).unwrap_or_default()),
        );
        wtr.write_record(&row).map_err(std::io::Error::from)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn save_cohort_csv(cohort: &Cohort, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_cohort_csv(cohort, std::io::BufWriter::new(file), &[])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n_patients: usize,
    pub n_samples: usize,
    pub n_severe: usize,
    pub n_death: usize,
    /// Per patient.
    pub severe_rate: f64,
    /// Per patient.
    pub death_rate: f64,
    pub male_rate: Option<f64>,
    pub age_mean: Option<f64>,
    pub age_sd: Option<f64>,
    /// Per sample, in display order.
    pub missing_fraction: Vec<(String, f64)>,
}

pub fn cohort_summary(cohort: &Cohort) -> Result<CohortSummary> {
    if cohort.is_empty() {
        return Err(Error::validation("cannot summarize an empty cohort"));
    }
    // First sample of each patient carries the patient's labels; for Age and Sex
    // use the first observed value across the patient's samples.
    let mut patients: BTreeMap<&str, (Severity, Outcome, Option<f64>, Option<f64>)> =
        BTreeMap::new();
    for s in cohort.samples() {
        let entry = patients
            .entry(&s.patient_id)
            .or_insert((s.severity, s.outcome, None, None));
        if entry.2.is_none() {
            entry.2 = s.value(AGE);
        }
        if entry.3.is_none() {
            entry.3 = s.value(SEX);
        }
    }
    let n = patients.len();
    let n_severe = patients.values().filter(|p| p.0 == Severity::Severe).count();
    let n_death = patients.values().filter(|p| p.1 == Outcome::Death).count();
    let ages: Vec<f64> = patients.values().filter_map(|p| p.2).collect();
    let sexes: Vec<f64> = patients.values().filter_map(|p| p.3).collect();
    let (age_mean, age_sd) = if cohort.schema().contains(AGE) && !ages.is_empty() {
        let m = ages.iter().sum::<f64>() / ages.len() as f64;
        let sd = if ages.len() > 1 {
            (ages.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (ages.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        (Some(m), Some(sd))
    } else {
        (None, None)
    };
    let male_rate = (cohort.schema().contains(SEX) && !sexes.is_empty())
        .then(|| sexes.iter().sum::<f64>() / sexes.len() as f64);
    Ok(CohortSummary {
        n_patients: n,
        n_samples: cohort.len(),
        n_severe,
        n_death,
        severe_rate: n_severe as f64 / n as f64,
        death_rate: n_death as f64 / n as f64,
        male_rate,
        age_mean,
        age_sd,
        missing_fraction: cohort
            .schema()
            .names()
            .into_iter()
            .map(|n| (n.to_string(), cohort.missing_fraction(n)))
            .collect(),
    })
}
