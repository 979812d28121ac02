//! Staged, file-backed experiment runner.
//!
//! Each stage reads the artifacts of earlier stages from a run directory named
//! after the config hash and seed, and writes its own. Every artifact carries
//! the config hash and seed, and nothing time-dependent is written, so a rerun
//! with the same config overwrites files with identical bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{
    cohort_summary, generate_cohort, load_cohort_csv, read_cohort_csv, write_cohort_csv, Cohort, CohortSpec,
    FeatureSchema, Outcome, Severity,
};
use crate::error::{Error, Result};
use crate::learners::{
    dense_data, fit_gbdt, load_model, save_model, select_features, write_importance_csv, AdaBoostConfig,
    BaselineKind, Classifier, FeatureSelection, GbdtConfig, KnnConfig, ModelArtifact, RandomForestConfig, Target,
};
use crate::metrics::{full_report, table_header, MetricsReport};
use crate::preprocess::{
    apply_impute, drop_high_missing_features, fit_impute, patient_split, subsample_per_patient, ImputeModel,
    ImputeStrategy, PreprocessConfig,
};
use crate::promptify::{fit_binning, serialize_prompt, BinningModel, Tokenizer};
use crate::seqmodel::{
    decode_constrained, decode_unconstrained, load_checkpoint, save_checkpoint, train_with_vocab,
    write_loss_curve_csv, SeqModel, SeqModelConfig, TrainExample,
};

/// Version stamped into every JSON artifact.
pub const ARTIFACT_VERSION: u32 = 1;

pub mod files {
    pub const COHORT: &str = "cohort.csv";
    pub const SCHEMA: &str = "schema.json";
    pub const SUMMARY: &str = "cohort_summary.json";
    pub const SPLIT: &str = "split.json";
    pub const TRAIN: &str = "train.csv";
    pub const TEST: &str = "test.csv";
    pub const IMPUTE: &str = "impute.json";
    pub const TRAIN_IMPUTED: &str = "train_imputed.csv";
    pub const TEST_IMPUTED: &str = "test_imputed.csv";
    pub const SELECTION: &str = "selection.json";
    pub const IMPORTANCE_SEVERITY: &str = "importance_severity.csv";
    pub const IMPORTANCE_OUTCOME: &str = "importance_outcome.csv";
    pub const MODELS: &str = "models";
    pub const BINNING: &str = "binning.json";
    pub const VOCAB: &str = "vocab.csv";
    pub const PROMPTS_TRAIN: &str = "prompts_train.jsonl";
    pub const PROMPTS_TEST: &str = "prompts_test.jsonl";
    pub const CHECKPOINT: &str = "seqmodel.ckpt";
    pub const LOSS_CURVE: &str = "loss_curve.csv";
    pub const METRICS: &str = "metrics.json";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const CONFUSION: &str = "confusion";
    pub const REPORT: &str = "report.txt";
    pub const ABLATION: &str = "ablation.csv";
    pub const MISSING_JSON: &str = "missing_experiment.json";
    pub const MISSING_TXT: &str = "missing_experiment.txt";
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum CohortSource {
    Synthetic {
        #[serde(default)]
        spec: CohortSpec,
    },
    Csv {
        path: PathBuf,
        /// Defaults to the built-in schema.
        #[serde(default)]
        schema: Option<FeatureSchema>,
    },
}

impl Default for CohortSource {
    fn default() -> Self {
        CohortSource::Synthetic {
            spec: CohortSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissingExperimentConfig {
    /// Run as part of `run-all`.
    pub enabled: bool,
    pub low_rate: f64,
    pub high_rate: f64,
    /// Features whose missing rate is varied; empty means every feature with
    /// a non-zero effect weight.
    pub features: Vec<String>,
}

impl Default for MissingExperimentConfig {
    fn default() -> Self {
        MissingExperimentConfig {
            enabled: false,
            low_rate: 0.10,
            high_rate: 0.40,
            features: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Copied into every component seed.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub top_k: usize,
    pub n_bins: usize,
    pub cohort: CohortSource,
    pub preprocess: PreprocessConfig,
    pub gbdt: GbdtConfig,
    pub adaboost: AdaBoostConfig,
    pub random_forest: RandomForestConfig,
    pub knn: KnnConfig,
    pub seqmodel: SeqModelConfig,
    pub missing_experiment: MissingExperimentConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 2020,
            output_dir: PathBuf::from("runs"),
            top_k: 5,
            n_bins: crate::promptify::DEFAULT_BINS,
            cohort: CohortSource::default(),
            preprocess: PreprocessConfig::default(),
            gbdt: GbdtConfig::default(),
            adaboost: AdaBoostConfig::default(),
            random_forest: RandomForestConfig::default(),
            knn: KnnConfig::default(),
            seqmodel: SeqModelConfig::default(),
            missing_experiment: MissingExperimentConfig::default(),
        }
    }
}

impl PipelineConfig {
    /// The planted-feature cohort: four informative lab features at 10% MCAR
    /// missingness, with the missing-value experiment enabled. The filter
    /// threshold sits above the sampled missing fractions so no planted
    /// feature is dropped, and the sequence model is regularized for a
    /// cohort of this size.
    pub fn planted() -> Self {
        PipelineConfig {
            n_bins: 8,
            cohort: CohortSource::Synthetic {
                spec: CohortSpec::planted(),
            },
            preprocess: PreprocessConfig {
                missing_threshold: 0.15,
                ..Default::default()
            },
            seqmodel: SeqModelConfig {
                dropout: 0.1,
                epochs: 10,
                ..Default::default()
            },
            missing_experiment: MissingExperimentConfig {
                enabled: true,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("config: {}", e.message())))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("pipeline config serializes")
    }

    /// Pushes `seed` into every component.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let CohortSource::Synthetic { spec } = &mut self.cohort {
            spec.rng_seed = seed;
        }
        self.preprocess.rng_seed = seed;
        self.gbdt.rng_seed = seed;
        self.random_forest.rng_seed = seed;
        self.seqmodel.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let mut collect = |r: Result<()>| {
            if let Err(e) = r {
                match e {
                    Error::Validation(v) => bad.extend(v),
                    other => bad.push(other.to_string()),
                }
            }
        };
        if self.top_k < 1 {
            collect(Err(Error::validation("top_k must be >= 1")));
        }
        if self.n_bins < 2 {
            collect(Err(Error::validation("n_bins must be >= 2")));
        }
        match &self.cohort {
            CohortSource::Synthetic { spec } => collect(spec.validate()),
            CohortSource::Csv { path, .. } => {
                if !path.exists() {
                    collect(Err(Error::validation(format!(
                        "cohort csv {} does not exist",
                        path.display()
                    ))));
                }
            }
        }
        collect(self.preprocess.validate());
        collect(self.gbdt.validate());
        collect(self.seqmodel.validate());
        let m = &self.missing_experiment;
        if !(0.0..1.0).contains(&m.low_rate) || !(0.0..1.0).contains(&m.high_rate) {
            collect(Err(Error::validation("missing_experiment rates must be in [0, 1)")));
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    /// SHA-256 of the canonical JSON form, excluding `output_dir`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Process exit status for an error: 1 validation, 2 missing artifact, 3 other.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Csv { .. } | Error::ConflictingLabels { .. } => 1,
        Error::MissingArtifact { .. } => 2,
        _ => 3,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Generate,
    Preprocess,
    Select,
    TrainBaselines,
    TrainSeq,
    Evaluate,
    Report,
    MissingExperiment,
    RunAll,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Generate,
        Stage::Preprocess,
        Stage::Select,
        Stage::TrainBaselines,
        Stage::TrainSeq,
        Stage::Evaluate,
        Stage::Report,
        Stage::MissingExperiment,
        Stage::RunAll,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Preprocess => "preprocess",
            Stage::Select => "select",
            Stage::TrainBaselines => "train-baselines",
            Stage::TrainSeq => "train-seq",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
            Stage::MissingExperiment => "missing-experiment",
            Stage::RunAll => "run-all",
        }
    }

    pub fn parse(s: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|st| st.as_str() == s)
    }
}

#[derive(Serialize, Deserialize)]
struct Stamped<T> {
    version: u32,
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    body: T,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dropped_features: Vec<String>,
    pub missing_fraction: BTreeMap<String, f64>,
    pub schema: FeatureSchema,
    pub train_patients: Vec<String>,
    pub test_patients: Vec<String>,
    pub n_train_samples: usize,
    pub n_test_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub model: String,
    pub target: Target,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// `baselines`, `seqmodel-unconstrained` or `seqmodel-constrained`.
    pub arm: String,
    pub model: String,
    pub severity_accuracy: f64,
    pub outcome_accuracy: f64,
    pub joint_accuracy: f64,
    pub mild_death_count: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_test: usize,
    pub features: Vec<String>,
    pub entries: Vec<EvalEntry>,
    pub ablation: Vec<AblationRow>,
}

impl EvaluationReport {
    pub fn entry(&self, model: &str, target: Target) -> Option<&EvalEntry> {
        self.entries.iter().find(|e| e.model == model && e.target == target)
    }

    pub fn ablation_row(&self, arm: &str, model: &str) -> Option<&AblationRow> {
        self.ablation.iter().find(|r| r.arm == arm && r.model == model)
    }
}

pub const SEQ_CONSTRAINED: &str = "SeqModel";
pub const SEQ_UNCONSTRAINED: &str = "SeqModel-unconstrained";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Accuracies {
    pub severity: f64,
    pub outcome: f64,
    pub joint: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingArm {
    pub rate: f64,
    pub observed_missing_fraction: f64,
    pub seqmodel: Accuracies,
    pub gbdt: Accuracies,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingExperimentReport {
    pub features: Vec<String>,
    pub low: MissingArm,
    pub high: MissingArm,
    /// Joint-accuracy drop from the low to the high rate, in percentage points.
    pub seqmodel_degradation_pts: f64,
    pub gbdt_degradation_pts: f64,
}

/// Joint accuracy and per-target accuracy of paired predictions.
pub fn accuracies(truth: &[(u8, u8)], pred: &[(u8, u8)]) -> Accuracies {
    let n = truth.len() as f64;
    let count = |f: &dyn Fn(&(u8, u8), &(u8, u8)) -> bool| truth.iter().zip(pred).filter(|(t, p)| f(t, p)).count() as f64 / n;
    Accuracies {
        severity: count(&|t, p| t.0 == p.0),
        outcome: count(&|t, p| t.1 == p.1),
        joint: count(&|t, p| t == p),
    }
}

/// Tokenized training examples for every sample, using only the tokenizer's features.
pub fn seq_examples(cohort: &Cohort, tokenizer: &Tokenizer) -> Result<Vec<TrainExample>> {
    cohort
        .samples()
        .iter()
        .map(|s| {
            let values = s
                .values
                .iter()
                .filter(|(k, _)| tokenizer.schema().contains(k))
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            Ok(TrainExample {
                tokens: tokenizer.tokenize_values(&values)?,
                severity: s.severity,
                outcome: s.outcome,
            })
        })
        .collect()
}

fn label_pairs(cohort: &Cohort) -> Vec<(u8, u8)> {
    cohort
        .samples()
        .iter()
        .map(|s| (s.severity.bit(), s.outcome.bit()))
        .collect()
}

/// Fits the tokenizer and sequence model on raw `train` (features as in its schema).
pub fn fit_seqmodel(train: &Cohort, n_bins: usize, config: &SeqModelConfig) -> Result<(Tokenizer, SeqModel)> {
    let binning = fit_binning(train, n_bins)?;
    let tokenizer = Tokenizer::new(train.schema().clone(), binning);
    let examples = seq_examples(train, &tokenizer)?;
    let model = train_with_vocab(&examples, config, tokenizer.vocab())?;
    Ok((tokenizer, model))
}

/// Handle on one run directory.
#[derive(Clone, Debug)]
pub struct Pipeline {
    config: PipelineConfig,
    hash: String,
    dir: PathBuf,
}

impl Pipeline {
    /// Applies `config.seed` to every component and validates.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        let seed = config.seed;
        let config = config.with_seed(seed);
        config.validate()?;
        let hash = config.hash();
        let dir = config.output_dir.join(format!("run-{}-seed{}", &hash[..12], config.seed));
        Ok(Pipeline { config, hash, dir })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn run_dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn comments(&self) -> Vec<String> {
        vec![format!("config_hash={}", self.hash), format!("seed={}", self.config.seed)]
    }

    fn require(&self, stage: &'static str, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact { stage, path: p })
        }
    }

    fn write_json<T: Serialize>(&self, name: &str, body: T) -> Result<()> {
        let stamped = Stamped {
            version: ARTIFACT_VERSION,
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            body,
        };
        let mut bytes = serde_json::to_vec_pretty(&stamped)?;
        bytes.push(b'\n');
        fs::write(self.path(name), bytes)?;
        Ok(())
    }

    fn read_json<T: DeserializeOwned>(&self, stage: &'static str, name: &str) -> Result<T> {
        let p = self.require(stage, name)?;
        let stamped: Stamped<T> = serde_json::from_slice(&fs::read(&p)?)?;
        if stamped.config_hash != self.hash {
            return Err(Error::Format(format!(
                "{} was produced by config {}, not {}",
                p.display(),
                stamped.config_hash,
                self.hash
            )));
        }
        Ok(stamped.body)
    }

    fn write_cohort(&self, name: &str, cohort: &Cohort) -> Result<()> {
        let mut buf = Vec::new();
        write_cohort_csv(cohort, &mut buf, &self.comments())?;
        fs::write(self.path(name), buf)?;
        Ok(())
    }

    fn read_cohort(&self, stage: &'static str, name: &str, schema: &FeatureSchema) -> Result<Cohort> {
        load_cohort_csv(self.require(stage, name)?, schema)
    }

    pub fn run(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Generate => self.generate(),
            Stage::Preprocess => self.preprocess(),
            Stage::Select => self.select(),
            Stage::TrainBaselines => self.train_baselines(),
            Stage::TrainSeq => self.train_seq(),
            Stage::Evaluate => self.evaluate(),
            Stage::Report => self.report(),
            Stage::MissingExperiment => self.missing_experiment().map(|_| ()),
            Stage::RunAll => self.run_all(),
        }
    }

    /// Synthesizes or ingests the cohort.
    pub fn generate(&self) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        let cohort = match &self.config.cohort {
            CohortSource::Synthetic { spec } => generate_cohort(spec)?,
            CohortSource::Csv { path, schema } => {
                let schema = schema.clone().unwrap_or_default();
                let file = fs::File::open(path)?;
                read_cohort_csv(file, &schema, &path.display().to_string())?
            }
        };
        self.write_cohort(files::COHORT, &cohort)?;
        self.write_json(files::SCHEMA, BTreeMap::from([("schema", cohort.schema())]))?;
        self.write_json(files::SUMMARY, cohort_summary(&cohort)?)?;
        Ok(())
    }

    fn schema(&self, stage: &'static str) -> Result<FeatureSchema> {
        let mut m: BTreeMap<String, FeatureSchema> = self.read_json(stage, files::SCHEMA)?;
        m.remove("schema").ok_or_else(|| Error::Format("schema.json has no schema".into()))
    }

    /// Missingness filter, patient split, per-patient subsampling, imputation.
    pub fn preprocess(&self) -> Result<()> {
        const STAGE: &str = "generate";
        let cfg = &self.config.preprocess;
        let schema = self.schema(STAGE)?;
        let cohort = self.read_cohort(STAGE, files::COHORT, &schema)?;
        let missing_fraction = schema
            .names()
            .into_iter()
            .map(|n| (n.to_string(), cohort.missing_fraction(n)))
            .collect();
        let (kept, dropped) = drop_high_missing_features(&cohort, cfg.missing_threshold)?;
        let split = patient_split(&kept, cfg.split_ratio, cfg.rng_seed)?;
        let (train, test) = match cfg.max_samples_per_patient {
            Some(m) => (
                subsample_per_patient(&split.train, m, cfg.rng_seed)?,
                subsample_per_patient(&split.test, m, cfg.rng_seed.wrapping_add(1))?,
            ),
            None => (split.train, split.test),
        };
        let impute = fit_impute(&train, cfg.impute_strategy)?;
        self.write_cohort(files::TRAIN, &train)?;
        self.write_cohort(files::TEST, &test)?;
        self.write_cohort(files::TRAIN_IMPUTED, &apply_impute(&impute, &train)?)?;
        self.write_cohort(files::TEST_IMPUTED, &apply_impute(&impute, &test)?)?;
        self.write_json(files::IMPUTE, &impute)?;
        self.write_json(
            files::SPLIT,
            SplitManifest {
                dropped_features: dropped,
                missing_fraction,
                schema: kept.schema().clone(),
                train_patients: split.train_patient_ids.into_iter().collect(),
                test_patients: split.test_patient_ids.into_iter().collect(),
                n_train_samples: train.len(),
                n_test_samples: test.len(),
            },
        )
    }

    pub fn split_manifest(&self) -> Result<SplitManifest> {
        self.read_json("preprocess", files::SPLIT)
    }

    /// GBDT importance per target and the top-k union.
    pub fn select(&self) -> Result<()> {
        let manifest = self.split_manifest()?;
        let train = self.read_cohort("preprocess", files::TRAIN_IMPUTED, &manifest.schema)?;
        let sel = select_features(&train, self.config.top_k, &self.config.gbdt)?;
        for (name, ranking) in [
            (files::IMPORTANCE_SEVERITY, &sel.severity),
            (files::IMPORTANCE_OUTCOME, &sel.outcome),
        ] {
            let mut buf = Vec::new();
            write_importance_csv(ranking, &mut buf, &self.comments())?;
            fs::write(self.path(name), buf)?;
        }
        self.write_json(files::SELECTION, &sel)
    }

    pub fn selection(&self) -> Result<FeatureSelection> {
        self.read_json("select", files::SELECTION)
    }

    fn model_path(&self, kind: BaselineKind, target: Target) -> PathBuf {
        self.path(files::MODELS)
            .join(format!("{}_{}.json", kind.as_str(), target.as_str()))
    }

    /// Four learners per target on the imputed union features.
    pub fn train_baselines(&self) -> Result<()> {
        let manifest = self.split_manifest()?;
        let sel = self.selection()?;
        let train = self.read_cohort("preprocess", files::TRAIN_IMPUTED, &manifest.schema)?;
        let data = dense_data(&train, &sel.union)?;
        fs::create_dir_all(self.path(files::MODELS))?;
        let c = &self.config;
        for kind in BaselineKind::ALL {
            for target in Target::ALL {
                let model = kind.fit(&data.x, data.labels(target), &c.adaboost, &c.gbdt, &c.random_forest, &c.knn)?;
                let mut art = ModelArtifact::new(sel.union.clone(), target, model);
                art.config_hash = self.hash.clone();
                art.seed = c.seed;
                save_model(&art, self.model_path(kind, target))?;
            }
        }
        Ok(())
    }

    /// Raw (unimputed) cohorts limited to the selected features.
    fn raw_union(&self, stage: &'static str, name: &str) -> Result<Cohort> {
        let manifest = self.split_manifest()?;
        let sel = self.selection()?;
        self.read_cohort(stage, name, &manifest.schema)?.restrict(&sel.union)
    }

    /// Prompts, binning, vocabulary and the sequence model.
    pub fn train_seq(&self) -> Result<()> {
        let train = self.raw_union("preprocess", files::TRAIN)?;
        let test = self.raw_union("preprocess", files::TEST)?;
        for (name, cohort) in [(files::PROMPTS_TRAIN, &train), (files::PROMPTS_TEST, &test)] {
            let mut out = Vec::new();
            for s in cohort.samples() {
                let doc = serialize_prompt(s, cohort.schema())?;
                let line = serde_json::json!({
                    "config_hash": self.hash,
                    "seed": self.config.seed,
                    "sample_id": doc.sample_id,
                    "prompt": doc.text(),
                    "target": doc.target_text,
                });
                serde_json::to_writer(&mut out, &line)?;
                out.push(b'\n');
            }
            fs::write(self.path(name), out)?;
        }
        let (tokenizer, model) = fit_seqmodel(&train, self.config.n_bins, &self.config.seqmodel)?;
        self.write_json(files::BINNING, tokenizer.binning())?;
        let mut vocab = self.comments().iter().map(|c| format!("# {c}\n")).collect::<String>();
        vocab.push_str(&tokenizer.vocab().manifest_csv());
        fs::write(self.path(files::VOCAB), vocab)?;
        save_checkpoint(&model, self.path(files::CHECKPOINT), &self.hash)?;
        let mut curve = Vec::new();
        write_loss_curve_csv(&model, &mut curve, &self.comments())?;
        fs::write(self.path(files::LOSS_CURVE), curve)?;
        Ok(())
    }

    /// Tokenizer rebuilt from the run's schema, selection and binning.
    pub fn tokenizer(&self) -> Result<Tokenizer> {
        let manifest = self.split_manifest()?;
        let sel = self.selection()?;
        let binning: BinningModel = self.read_json("train-seq", files::BINNING)?;
        Ok(Tokenizer::new(manifest.schema.retain(&sel.union)?, binning))
    }

    pub fn seqmodel(&self, tokenizer: &Tokenizer) -> Result<SeqModel> {
        let path = self.require("train-seq", files::CHECKPOINT)?;
        load_checkpoint(path, Some(&tokenizer.vocab().hash()))
    }

    pub fn baseline(&self, kind: BaselineKind, target: Target) -> Result<ModelArtifact> {
        let p = self.model_path(kind, target);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                stage: "train-baselines",
                path: p,
            });
        }
        load_model(p)
    }

    pub fn impute_model(&self) -> Result<ImputeModel> {
        self.read_json("preprocess", files::IMPUTE)
    }

    /// Scores every model on the test split.
    pub fn evaluate(&self) -> Result<()> {
        let sel = self.selection()?;
        let manifest = self.split_manifest()?;
        let tokenizer = self.tokenizer()?;
        let seq = self.seqmodel(&tokenizer)?;
        let mut baselines = Vec::new();
        for kind in BaselineKind::ALL {
            let sev = self.baseline(kind, Target::Severity)?;
            let out = self.baseline(kind, Target::Outcome)?;
            baselines.push((kind, sev, out));
        }
        let test_imp = self.read_cohort("preprocess", files::TEST_IMPUTED, &manifest.schema)?;
        let test_raw = self.raw_union("preprocess", files::TEST)?;
        let data = dense_data(&test_imp, &sel.union)?;
        let truth = label_pairs(&test_raw);
        let y_sev: Vec<u8> = truth.iter().map(|t| t.0).collect();
        let y_out: Vec<u8> = truth.iter().map(|t| t.1).collect();

        let mut entries = Vec::new();
        let mut ablation = Vec::new();
        let mut columns: Vec<(String, Vec<(u8, u8)>)> = Vec::new();
        let mut push_model = |model: &str, arm: &str, pred: Vec<(u8, u8)>, entries: &mut Vec<EvalEntry>| -> Result<()> {
            let ps: Vec<u8> = pred.iter().map(|p| p.0).collect();
            let po: Vec<u8> = pred.iter().map(|p| p.1).collect();
            entries.push(EvalEntry {
                model: model.to_string(),
                target: Target::Severity,
                report: full_report(&y_sev, &ps)?,
            });
            entries.push(EvalEntry {
                model: model.to_string(),
                target: Target::Outcome,
                report: full_report(&y_out, &po)?,
            });
            let acc = accuracies(&truth, &pred);
            ablation.push(AblationRow {
                arm: arm.to_string(),
                model: model.to_string(),
                severity_accuracy: acc.severity,
                outcome_accuracy: acc.outcome,
                joint_accuracy: acc.joint,
                mild_death_count: pred.iter().filter(|p| **p == (0, 1)).count() as u64,
            });
            columns.push((model.to_string(), pred));
            Ok(())
        };

        for (kind, sev, out) in &baselines {
            let mut pred = Vec::with_capacity(data.x.n_rows());
            for row in data.x.rows() {
                pred.push((
                    sev.model.as_classifier().predict(row)?,
                    out.model.as_classifier().predict(row)?,
                ));
            }
            push_model(kind.display_name(), "baselines", pred, &mut entries)?;
        }
        let examples = seq_examples(&test_raw, &tokenizer)?;
        let mut constrained = Vec::new();
        let mut unconstrained = Vec::new();
        for ex in &examples {
            let c = decode_constrained(&seq, &ex.tokens)?;
            constrained.push((c.label.severity().bit(), c.label.outcome().bit()));
            let u = decode_unconstrained(&seq, &ex.tokens)?;
            unconstrained.push((u.severity.bit(), u.outcome.bit()));
        }
        push_model(SEQ_UNCONSTRAINED, "seqmodel-unconstrained", unconstrained, &mut entries)?;
        push_model(SEQ_CONSTRAINED, "seqmodel-constrained", constrained, &mut entries)?;

        fs::create_dir_all(self.path(files::CONFUSION))?;
        for e in &entries {
            let name = format!("{}_{}.csv", e.model, e.target.as_str());
            let mut text = self.comments().iter().map(|c| format!("# {c}\n")).collect::<String>();
            text.push_str(&e.report.confusion_csv());
            fs::write(self.path(files::CONFUSION).join(name), text)?;
        }
        let mut pred_csv = self.comments().iter().map(|c| format!("# {c}\n")).collect::<String>();
        pred_csv.push_str("sample_id,severity,outcome");
        for (m, _) in &columns {
            let _ = write!(pred_csv, ",{m}_severity,{m}_outcome");
        }
        pred_csv.push('\n');
        for (i, s) in test_raw.samples().iter().enumerate() {
            let _ = write!(pred_csv, "{},{},{}", s.sample_id, s.severity.bit(), s.outcome.bit());
            for (_, p) in &columns {
                let _ = write!(pred_csv, ",{},{}", p[i].0, p[i].1);
            }
            pred_csv.push('\n');
        }
        fs::write(self.path(files::PREDICTIONS), pred_csv)?;
        self.write_json(
            files::METRICS,
            EvaluationReport {
                n_test: test_raw.len(),
                features: sel.union,
                entries,
                ablation,
            },
        )
    }

    pub fn evaluation(&self) -> Result<EvaluationReport> {
        self.read_json("evaluate", files::METRICS)
    }

    /// Plain-text tables and the ablation CSV.
    pub fn report(&self) -> Result<()> {
        let eval = self.evaluation()?;
        let mut text = String::new();
        let _ = writeln!(text, "config_hash={} seed={}", self.hash, self.config.seed);
        let _ = writeln!(text, "test samples: {}", eval.n_test);
        let _ = writeln!(text, "features: {}", eval.features.join(", "));
        for (title, target) in [("Severity", Target::Severity), ("Outcome", Target::Outcome)] {
            let _ = writeln!(text, "\n{title}");
            text.push_str(&table_header());
            for e in eval.entries.iter().filter(|e| e.target == target) {
                text.push_str(&e.report.table_rows(&e.model));
            }
        }
        let _ = writeln!(text, "\nAblation");
        let _ = writeln!(
            text,
            "{:<24} {:<24} {:>9} {:>9} {:>9} {:>11}",
            "Arm", "Model", "Severity", "Outcome", "Joint", "mild+death"
        );
        let mut csv = self.comments().iter().map(|c| format!("# {c}\n")).collect::<String>();
        csv.push_str("arm,model,severity_accuracy,outcome_accuracy,joint_accuracy,mild_death_count\n");
        for r in &eval.ablation {
            let _ = writeln!(
                text,
                "{:<24} {:<24} {:>9.4} {:>9.4} {:>9.4} {:>11}",
                r.arm, r.model, r.severity_accuracy, r.outcome_accuracy, r.joint_accuracy, r.mild_death_count
            );
            let _ = writeln!(
                csv,
                "{},{},{:.4},{:.4},{:.4},{}",
                r.arm, r.model, r.severity_accuracy, r.outcome_accuracy, r.joint_accuracy, r.mild_death_count
            );
        }
        text.push_str("\n* degenerate: a zero denominator was reported as 0\n");
        fs::write(self.path(files::REPORT), text)?;
        fs::write(self.path(files::ABLATION), csv)?;
        Ok(())
    }

    /// Every stage in order, plus the missing-value experiment when enabled.
    pub fn run_all(&self) -> Result<()> {
        self.generate()?;
        self.preprocess()?;
        self.select()?;
        self.train_baselines()?;
        self.train_seq()?;
        self.evaluate()?;
        self.report()?;
        if self.config.missing_experiment.enabled {
            self.missing_experiment()?;
        }
        Ok(())
    }

    /// Raises MCAR missingness on informative features from the low to the
    /// high rate and compares the marker-based sequence model against
    /// mean-imputed GBDT. The missingness filter is skipped so the affected
    /// features stay in play.
    pub fn missing_experiment(&self) -> Result<MissingExperimentReport> {
        let spec = match &self.config.cohort {
            CohortSource::Synthetic { spec } => spec,
            CohortSource::Csv { .. } => {
                return Err(Error::validation("missing-value experiment needs a synthetic cohort"))
            }
        };
        let mx = &self.config.missing_experiment;
        let features: Vec<String> = if mx.features.is_empty() {
            spec.effect_weights
                .iter()
                .filter(|(_, w)| w.severity != 0.0 || w.outcome != 0.0)
                .map(|(k, _)| k.clone())
                .filter(|k| spec.schema.get(k).is_some_and(|f| f.name != crate::cohort::AGE && f.name != crate::cohort::SEX))
                .collect()
        } else {
            mx.features.clone()
        };
        fs::create_dir_all(&self.dir)?;
        let low = self.missing_arm(spec, &features, mx.low_rate)?;
        let high = self.missing_arm(spec, &features, mx.high_rate)?;
        let report = MissingExperimentReport {
            features,
            seqmodel_degradation_pts: 100.0 * (low.seqmodel.joint - high.seqmodel.joint),
            gbdt_degradation_pts: 100.0 * (low.gbdt.joint - high.gbdt.joint),
            low,
            high,
        };
        self.write_json(files::MISSING_JSON, &report)?;
        let mut text = String::new();
        let _ = writeln!(text, "config_hash={} seed={}", self.hash, self.config.seed);
        let _ = writeln!(text, "varied features: {}", report.features.join(", "));
        let _ = writeln!(
            text,
            "{:<10} {:>8} {:<10} {:>9} {:>9} {:>9}",
            "rate", "missing", "model", "Severity", "Outcome", "Joint"
        );
        for arm in [&report.low, &report.high] {
            for (name, a) in [("SeqModel", arm.seqmodel), ("GBDT", arm.gbdt)] {
                let _ = writeln!(
                    text,
                    "{:<10.2} {:>8.4} {:<10} {:>9.4} {:>9.4} {:>9.4}",
                    arm.rate, arm.observed_missing_fraction, name, a.severity, a.outcome, a.joint
                );
            }
        }
        let _ = writeln!(
            text,
            "joint accuracy drop (points): SeqModel {:.2}, GBDT {:.2}",
            report.seqmodel_degradation_pts, report.gbdt_degradation_pts
        );
        fs::write(self.path(files::MISSING_TXT), text)?;
        Ok(report)
    }

    fn missing_arm(&self, spec: &CohortSpec, features: &[String], rate: f64) -> Result<MissingArm> {
        let mut spec = spec.clone();
        for f in features {
            spec.missing_rate.insert(f.clone(), rate);
        }
        let cohort = generate_cohort(&spec)?;
        let observed_missing_fraction =
            features.iter().map(|f| cohort.missing_fraction(f)).sum::<f64>() / features.len().max(1) as f64;
        let cfg = &self.config.preprocess;
        let split = patient_split(&cohort, cfg.split_ratio, cfg.rng_seed)?;
        let (train, test) = match cfg.max_samples_per_patient {
            Some(m) => (
                subsample_per_patient(&split.train, m, cfg.rng_seed)?,
                subsample_per_patient(&split.test, m, cfg.rng_seed.wrapping_add(1))?,
            ),
            None => (split.train, split.test),
        };
        let truth = label_pairs(&test);

        let impute = fit_impute(&train, ImputeStrategy::Mean)?;
        let names: Vec<String> = train.schema().names().into_iter().map(String::from).collect();
        let tr = dense_data(&apply_impute(&impute, &train)?, &names)?;
        let te = dense_data(&apply_impute(&impute, &test)?, &names)?;
        let sev = fit_gbdt(&tr.x, tr.labels(Target::Severity), &self.config.gbdt)?;
        let out = fit_gbdt(&tr.x, tr.labels(Target::Outcome), &self.config.gbdt)?;
        let mut gbdt_pred = Vec::new();
        for row in te.x.rows() {
            gbdt_pred.push((sev.predict(row)?, out.predict(row)?));
        }

        let (tokenizer, model) = fit_seqmodel(&train, self.config.n_bins, &self.config.seqmodel)?;
        let mut seq_pred = Vec::new();
        for ex in seq_examples(&test, &tokenizer)? {
            let r = decode_constrained(&model, &ex.tokens)?;
            seq_pred.push((r.label.severity().bit(), r.label.outcome().bit()));
        }
        Ok(MissingArm {
            rate,
            observed_missing_fraction,
            seqmodel: accuracies(&truth, &seq_pred),
            gbdt: accuracies(&truth, &gbdt_pred),
        })
    }
}

/// Label names for a predicted bit pair.
pub fn label_names(pair: (u8, u8)) -> (&'static str, &'static str) {
    (
        Severity::from_bit(pair.0).map_or("?", Severity::as_str),
        Outcome::from_bit(pair.1).map_or("?", Outcome::as_str),
    )
}

pub fn cmd_generate(config: PipelineConfig) -> Result<PathBuf> {
    run_stage(config, Stage::Generate)
}

pub fn cmd_preprocess(config: PipelineConfig) -> Result<PathBuf> {
    run_stage(config, Stage::Preprocess)
}

pub fn cmd_select(config: PipelineConfig) -> Result<PathBuf> {
    run_stage(config, Stage::Select)
}

pub fn cmd_train_baselines(config: PipelineConfig) -> Result<PathBuf> {
    run_stage(config, Stage::TrainBaselines)
}

pub fn cmd_train_seq(config: PipelineConfig) -> Result<PathBuf> {
    run_stage(config, Stage::TrainSeq)
}

pub fn cmd_evaluate(config: PipelineConfig) -> Result<PathBuf> {
    run_stage(config, Stage::Evaluate)
}

pub fn cmd_report(config: PipelineConfig) -> Result<PathBuf> {
    run_stage(config, Stage::Report)
}

pub fn cmd_run_all(config: PipelineConfig) -> Result<PathBuf> {
    run_stage(config, Stage::RunAll)
}

/// Runs one stage and returns the run directory.
pub fn run_stage(config: PipelineConfig, stage: Stage) -> Result<PathBuf> {
    let p = Pipeline::new(config)?;
    p.run(stage)?;
    Ok(p.run_dir().to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config(out: &Path) -> PipelineConfig {
        let mut spec = CohortSpec::planted();
        spec.n_patients = 80;
        PipelineConfig {
            output_dir: out.to_path_buf(),
            cohort: CohortSource::Synthetic { spec },
            preprocess: PreprocessConfig {
                missing_threshold: 0.2,
                ..Default::default()
            },
            gbdt: GbdtConfig {
                n_estimators: 20,
                ..Default::default()
            },
            random_forest: RandomForestConfig {
                n_trees: 5,
                ..Default::default()
            },
            seqmodel: SeqModelConfig {
                embed_dim: 8,
                ffn_dim: 8,
                n_layers: 1,
                epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn config_toml_round_trip_and_seed() {
        let c = PipelineConfig::default();
        let back = PipelineConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
        let a = c.clone().with_seed(7);
        assert_eq!(a.seqmodel.rng_seed, 7);
        assert_ne!(a.hash(), c.hash());
        let mut moved = c.clone();
        moved.output_dir = PathBuf::from("elsewhere");
        assert_eq!(moved.hash(), c.hash());
        assert!(matches!(
            PipelineConfig::from_toml_str("top_k = 0\nbogus = 1"),
            Err(Error::Validation(_))
        ));
        let bad = PipelineConfig {
            top_k: 0,
            ..Default::default()
        };
        assert!(matches!(Pipeline::new(bad), Err(e) if exit_code(&e) == 1));
    }

    #[test]
    fn stages_require_upstream_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::new(small_config(dir.path())).unwrap();
        let err = p.evaluate().unwrap_err();
        assert_eq!(exit_code(&err), 2);
        p.generate().unwrap();
        p.preprocess().unwrap();
        p.select().unwrap();
        p.train_baselines().unwrap();
        match p.evaluate().unwrap_err() {
            Error::MissingArtifact { stage, .. } => assert_eq!(stage, "train-seq"),
            other => panic!("unexpected {other:?}"),
        }
        p.train_seq().unwrap();
        p.evaluate().unwrap();
        p.report().unwrap();
        let eval = p.evaluation().unwrap();
        let arms: Vec<&str> = eval.ablation.iter().map(|r| r.arm.as_str()).collect();
        for arm in ["baselines", "seqmodel-unconstrained", "seqmodel-constrained"] {
            assert!(arms.contains(&arm));
        }
        assert_eq!(eval.ablation_row("seqmodel-constrained", SEQ_CONSTRAINED).unwrap().mild_death_count, 0);
        let report = fs::read_to_string(p.path(files::REPORT)).unwrap();
        assert!(report.contains(p.config_hash()));
        for name in [files::COHORT, files::TRAIN, files::VOCAB, files::LOSS_CURVE, files::ABLATION] {
            let text = fs::read_to_string(p.path(name)).unwrap();
            assert!(text.starts_with(&format!("# config_hash={}", p.config_hash())), "{name}");
        }
        let split = p.split_manifest().unwrap();
        assert!(split.train_patients.iter().all(|id| !split.test_patients.contains(id)));
    }
}
