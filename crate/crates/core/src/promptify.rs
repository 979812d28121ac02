//! Prompt text, closed-vocabulary tokenization and answer parsing.
//!
//! A prompt is an instruction followed by one `<label>: <value>` line per
//! feature in display order. Absent values are written as a fixed sentence
//! rather than imputed. For the sequence model the same content is encoded as
//! `[INSTR] (name value SEP)* BEGIN_ANSWER`, where `value` is a quantile bin
//! token or the shared `MISSING` token.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cohort::{Cohort, FeatureKind, FeatureSchema, Outcome, SampleRecord, Severity};
use crate::error::{Error, Result};

pub const INSTRUCTION: &str = "As an experienced clinical medicine expert, predict COVID-19 severity \
(severe/mild) and predict clinical outcome (survive/death) based on serum report. \
The serum report is as follows.";

pub const MISSING_MARKER: &str = "This feature's value is missing";

pub const DEFAULT_BINS: usize = 16;

/// A joint prediction. `(mild, death)` cannot be constructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawPair", into = "RawPair")]
pub struct LabelPair {
    severity: Severity,
    outcome: Outcome,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct RawPair {
    severity: Severity,
    outcome: Outcome,
}

impl TryFrom<RawPair> for LabelPair {
    type Error = Error;

    fn try_from(raw: RawPair) -> Result<Self> {
        LabelPair::new(raw.severity, raw.outcome)
    }
}

impl From<LabelPair> for RawPair {
    fn from(p: LabelPair) -> Self {
        RawPair {
            severity: p.severity,
            outcome: p.outcome,
        }
    }
}

impl LabelPair {
    pub const LEGAL: [LabelPair; 3] = [
        LabelPair {
            severity: Severity::Mild,
            outcome: Outcome::Survive,
        },
        LabelPair {
            severity: Severity::Severe,
            outcome: Outcome::Survive,
        },
        LabelPair {
            severity: Severity::Severe,
            outcome: Outcome::Death,
        },
    ];

    pub fn new(severity: Severity, outcome: Outcome) -> Result<Self> {
        if severity == Severity::Mild && outcome == Outcome::Death {
            return Err(Error::ConstraintViolation);
        }
        Ok(LabelPair { severity, outcome })
    }

    pub fn severity(&self) -> Severity {
        self.severity
    }

    pub fn outcome(&self) -> Outcome {
        self.outcome
    }
}

/// `"<severity> and <outcome>"`. Accepts the excluded pair so adversarial
/// inputs can be produced.
pub fn render_target(severity: Severity, outcome: Outcome) -> String {
    format!("{} and {}", severity.as_str(), outcome.as_str())
}

/// Parses one of the four answer phrases, ignoring surrounding whitespace and case.
pub fn parse_output(text: &str) -> Result<LabelPair> {
    let norm = text.trim().to_lowercase();
    for severity in [Severity::Mild, Severity::Severe] {
        for outcome in [Outcome::Survive, Outcome::Death] {
            if norm == render_target(severity, outcome) {
                return LabelPair::new(severity, outcome);
            }
        }
    }
    Err(Error::UnrecognizedOutput(text.to_string()))
}

/// Shortest decimal text that parses back to the same value.
pub fn format_value(v: f64) -> String {
    v.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptDoc {
    pub sample_id: String,
    pub instruction: String,
    /// `(feature label, rendered value)` in display order.
    pub feature_lines: Vec<(String, String)>,
    pub target_text: Option<String>,
}

impl PromptDoc {
    /// Instruction, then one `label: value` line per feature.
    pub fn text(&self) -> String {
        let mut out = self.instruction.clone();
        for (label, value) in &self.feature_lines {
            out.push('\n');
            out.push_str(label);
            out.push_str(": ");
            out.push_str(value);
        }
        out
    }

    /// Inverse of [`PromptDoc::text`].
    pub fn from_text(sample_id: &str, text: &str) -> Result<Self> {
        let mut lines = text.split('\n');
        let instruction = lines.next().unwrap_or_default().to_string();
        let feature_lines = lines
            .map(|line| {
                line.split_once(": ")
                    .map(|(l, v)| (l.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Format(format!("malformed prompt line {line:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PromptDoc {
            sample_id: sample_id.to_string(),
            instruction,
            feature_lines,
            target_text: None,
        })
    }
}

/// Prompt for a bare value map (no labels known).
pub fn prompt_for_values(
    sample_id: &str,
    values: &BTreeMap<String, f64>,
    schema: &FeatureSchema,
) -> Result<PromptDoc> {
    if let Some(unknown) = values.keys().find(|k| !schema.contains(k)) {
        return Err(Error::SchemaMismatch(format!("unknown feature '{unknown}'")));
    }
    let feature_lines = schema
        .features()
        .iter()
        .map(|f| {
            let value = values
                .get(&f.name)
                .map(|&v| format_value(v))
                .unwrap_or_else(|| MISSING_MARKER.to_string());
            (f.label.clone(), value)
        })
        .collect();
    Ok(PromptDoc {
        sample_id: sample_id.to_string(),
        instruction: INSTRUCTION.to_string(),
        feature_lines,
        target_text: None,
    })
}

pub fn serialize_prompt(record: &SampleRecord, schema: &FeatureSchema) -> Result<PromptDoc> {
    let mut doc = prompt_for_values(&record.sample_id, &record.values, schema)?;
    doc.target_text = Some(render_target(record.severity, record.outcome));
    Ok(doc)
}

#[derive(Serialize)]
struct PromptLine<'a> {
    sample_id: &'a str,
    prompt: String,
    target: Option<&'a str>,
}

/// One JSON object per line: `{"sample_id", "prompt", "target"}`.
pub fn write_prompts_jsonl<W: Write>(docs: &[PromptDoc], mut writer: W) -> Result<()> {
    for d in docs {
        let line = PromptLine {
            sample_id: &d.sample_id,
            prompt: d.text(),
            target: d.target_text.as_deref(),
        };
        serde_json::to_writer(&mut writer, &line)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureBins {
    pub name: String,
    pub kind: FeatureKind,
    /// Strictly increasing interior cut points, all below `max`.
    pub cuts: Vec<f64>,
    /// Largest observed training value.
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinningModel {
    pub n_bins: usize,
    pub features: Vec<FeatureBins>,
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Learns bins from observed training values. Continuous features get up to
/// `n_bins - 2` interior cuts at quantiles `j / (n_bins - 1)`; binary features
/// get two bins. Features never observed in `train` are left unfitted.
pub fn fit_binning(train: &Cohort, n_bins: usize) -> Result<BinningModel> {
    if n_bins < 2 {
        return Err(Error::validation(format!("n_bins must be >= 2, got {n_bins}")));
    }
    let mut features = Vec::new();
    for f in train.schema().features() {
        let mut observed: Vec<f64> = train.samples().iter().filter_map(|s| s.value(&f.name)).collect();
        if observed.is_empty() {
            continue;
        }
        observed.sort_by(f64::total_cmp);
        let max = *observed.last().unwrap();
        let cuts = match f.kind {
            FeatureKind::Binary => Vec::new(),
            FeatureKind::Continuous => {
                let mut cuts: Vec<f64> = (1..n_bins - 1)
                    .map(|j| quantile(&observed, j as f64 / (n_bins - 1) as f64))
                    .filter(|&c| c < max)
                    .collect();
                cuts.dedup();
                cuts
            }
        };
        features.push(FeatureBins {
            name: f.name.clone(),
            kind: f.kind,
            cuts,
            max,
        });
    }
    Ok(BinningModel { n_bins, features })
}

impl BinningModel {
    pub fn feature(&self, name: &str) -> Option<&FeatureBins> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Bins available to `kind`.
    pub fn bins_for(&self, kind: FeatureKind) -> usize {
        match kind {
            FeatureKind::Binary => 2,
            FeatureKind::Continuous => self.n_bins,
        }
    }

    /// Number of cut points strictly below `v`; values at or above the training
    /// maximum land in the top bin.
    pub fn bin(&self, name: &str, v: f64) -> Result<usize> {
        let f = self
            .feature(name)
            .ok_or_else(|| Error::UnfittableFeature(name.to_string()))?;
        Ok(match f.kind {
            FeatureKind::Binary => usize::from(v >= 0.5),
            FeatureKind::Continuous if v >= f.max => self.n_bins - 1,
            FeatureKind::Continuous => f.cuts.partition_point(|&c| c < v),
        })
    }
}

pub mod token {
    pub const INSTR: u32 = 0;
    pub const SEP: u32 = 1;
    pub const MISSING: u32 = 2;
    pub const BEGIN_ANSWER: u32 = 3;
    pub const SEV_MILD: u32 = 4;
    pub const SEV_SEVERE: u32 = 5;
    pub const OUT_SURVIVE: u32 = 6;
    pub const OUT_DEATH: u32 = 7;
    pub const END: u32 = 8;
    pub const N_SPECIAL: u32 = 9;

    pub const SPECIAL_NAMES: [&str; N_SPECIAL as usize] = [
        "<instr>", "<sep>", "<missing>", "<answer>", "mild", "severe", "survive", "death", "<end>",
    ];

    pub fn is_answer(id: u32) -> bool {
        (SEV_MILD..=OUT_DEATH).contains(&id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ends_with_answer_start(&self) -> bool {
        self.ids.last() == Some(&token::BEGIN_ANSWER)
    }
}

/// Token ids for one schema: special tokens, then per feature a name token
/// followed by its value-bin tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    names: Vec<String>,
    name_token: Vec<u32>,
    bin_base: Vec<u32>,
    surface: Vec<String>,
}

impl Vocabulary {
    pub fn new(schema: &FeatureSchema, binning: &BinningModel) -> Self {
        let mut surface: Vec<String> = token::SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        let mut names = Vec::new();
        let mut name_token = Vec::new();
        let mut bin_base = Vec::new();
        for f in schema.features() {
            names.push(f.name.clone());
            name_token.push(surface.len() as u32);
            surface.push(format!("{}:", f.name));
            bin_base.push(surface.len() as u32);
            for b in 0..binning.bins_for(f.kind) {
                surface.push(format!("{}#{}", f.name, b));
            }
        }
        Vocabulary {
            names,
            name_token,
            bin_base,
            surface,
        }
    }

    pub fn size(&self) -> usize {
        self.surface.len()
    }

    /// Token id range of each feature's value bins, in schema order.
    pub fn value_ranges(&self) -> Vec<std::ops::Range<u32>> {
        let ends = self.name_token.iter().skip(1).copied().chain([self.surface.len() as u32]);
        self.bin_base.iter().zip(ends).map(|(&b, e)| b..e).collect()
    }

    pub fn surface(&self, id: u32) -> Option<&str> {
        self.surface.get(id as usize).map(String::as_str)
    }

    /// `id,token` rows.
    pub fn manifest_csv(&self) -> String {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["id", "token"]).unwrap();
        for (i, s) in self.surface.iter().enumerate() {
            wtr.write_record([i.to_string(), s.clone()]).unwrap();
        }
        String::from_utf8(wtr.into_inner().unwrap()).unwrap()
    }

    /// SHA-256 of the manifest, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.manifest_csv().as_bytes()))
    }
}

/// Maps prompts or raw value maps to token sequences.
#[derive(Clone, Debug)]
pub struct Tokenizer {
    schema: FeatureSchema,
    binning: BinningModel,
    vocab: Vocabulary,
}

impl Tokenizer {
    pub fn new(schema: FeatureSchema, binning: BinningModel) -> Self {
        let vocab = Vocabulary::new(&schema, &binning);
        Tokenizer {
            schema,
            binning,
            vocab,
        }
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn binning(&self) -> &BinningModel {
        &self.binning
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn encode(&self, mut value_of: impl FnMut(usize, &str) -> Result<Option<f64>>) -> Result<TokenSeq> {
        let mut ids = vec![token::INSTR];
        for (i, f) in self.schema.features().iter().enumerate() {
            ids.push(self.vocab.name_token[i]);
            match value_of(i, &f.name)? {
                None => ids.push(token::MISSING),
                Some(v) => {
                    let b = self.binning.bin(&f.name, v)?;
                    ids.push(self.vocab.bin_base[i] + b as u32);
                }
            }
            ids.push(token::SEP);
        }
        ids.push(token::BEGIN_ANSWER);
        Ok(TokenSeq { ids })
    }

    pub fn tokenize_values(&self, values: &BTreeMap<String, f64>) -> Result<TokenSeq> {
        if let Some(unknown) = values.keys().find(|k| !self.schema.contains(k)) {
            return Err(Error::SchemaMismatch(format!("unknown feature '{unknown}'")));
        }
        self.encode(|_, name| Ok(values.get(name).copied()))
    }

    /// Tokenizes the prompt text content; lines must follow the schema.
    pub fn tokenize(&self, doc: &PromptDoc) -> Result<TokenSeq> {
        if doc.feature_lines.len() != self.schema.len() {
            return Err(Error::SchemaMismatch(format!(
                "prompt has {} feature lines, schema has {}",
                doc.feature_lines.len(),
                self.schema.len()
            )));
        }
        self.encode(|i, _| {
            let (label, text) = &doc.feature_lines[i];
            let expected = &self.schema.features()[i].label;
            if label != expected {
                return Err(Error::SchemaMismatch(format!(
                    "prompt line {i} is '{label}', expected '{expected}'"
                )));
            }
            if text == MISSING_MARKER {
                return Ok(None);
            }
            text.parse::<f64>()
                .map(Some)
                .map_err(|_| Error::Format(format!("cannot parse value {text:?} for '{label}'")))
        })
    }

    /// Feature name owning `id`, if it is a name or bin token.
    pub fn feature_of(&self, id: u32) -> Option<&str> {
        let idx = self.vocab.name_token.iter().rposition(|&t| t <= id)?;
        Some(&self.vocab.names[idx])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::FeatureDef;
    use proptest::prelude::*;

    fn record(values: &[(&str, f64)]) -> SampleRecord {
        SampleRecord {
            patient_id: "P1".into(),
            sample_id: "S1".into(),
            values: values.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            severity: Severity::Severe,
            outcome: Outcome::Death,
        }
    }

    fn uniform_cohort(values: impl Iterator<Item = f64>) -> Cohort {
        let schema = FeatureSchema::new(vec![FeatureDef::new("X", "X", FeatureKind::Continuous, 0)]).unwrap();
        let samples = values
            .enumerate()
            .map(|(i, v)| SampleRecord {
                patient_id: format!("P{i}"),
                sample_id: format!("S{i}"),
                values: [("X".to_string(), v)].into(),
                severity: Severity::Mild,
                outcome: Outcome::Survive,
            })
            .collect();
        Cohort::new(schema, samples).unwrap()
    }

    #[test]
    fn prompt_lines_and_marker() {
        let schema = FeatureSchema::default();
        let doc = serialize_prompt(&record(&[("Age", 61.0), ("ALB", 35.25)]), &schema).unwrap();
        let text = doc.text();
        assert!(text.starts_with(INSTRUCTION));
        assert!(text.contains("\nAge: 61\n"));
        assert!(text.contains("\nLYMPH%: This feature's value is missing\n"));
        assert!(text.contains("\nALB: 35.25\n"));
        assert_eq!(doc.feature_lines.len(), schema.len());
        assert_eq!(doc.target_text.as_deref(), Some("severe and death"));
        let back = PromptDoc::from_text("S1", &text).unwrap();
        assert_eq!(back.feature_lines, doc.feature_lines);
        assert_eq!(back.instruction, INSTRUCTION);
    }

    #[test]
    fn all_missing_and_determinism() {
        let schema = FeatureSchema::default();
        let doc = serialize_prompt(&record(&[]), &schema).unwrap();
        assert!(doc.feature_lines.iter().all(|(_, v)| v == MISSING_MARKER));
        let a = serialize_prompt(&record(&[("Age", 50.0)]), &schema).unwrap();
        let b = serialize_prompt(&record(&[("Age", 50.0)]), &schema).unwrap();
        assert_eq!(a.text(), b.text());
        assert!(serialize_prompt(&record(&[("Foo", 1.0)]), &schema).is_err());
    }

    #[test]
    fn target_round_trip_and_errors() {
        for p in LabelPair::LEGAL {
            assert_eq!(parse_output(&render_target(p.severity(), p.outcome())).unwrap(), p);
        }
        let sd = parse_output("severe and death").unwrap();
        assert_eq!((sd.severity(), sd.outcome()), (Severity::Severe, Outcome::Death));
        let ms = parse_output("  Mild and Survive ").unwrap();
        assert_eq!((ms.severity(), ms.outcome()), (Severity::Mild, Outcome::Survive));
        assert!(matches!(parse_output("banana"), Err(Error::UnrecognizedOutput(raw)) if raw == "banana"));
        assert!(matches!(parse_output("mild and death"), Err(Error::ConstraintViolation)));
        assert!(LabelPair::new(Severity::Mild, Outcome::Death).is_err());
        assert!(serde_json::from_str::<LabelPair>(r#"{"severity":"mild","outcome":"death"}"#).is_err());
    }

    #[test]
    fn binning_clamps_and_median() {
        let c = uniform_cohort((1..=100).map(f64::from));
        let b = fit_binning(&c, 16).unwrap();
        assert_eq!(b.bin("X", 1.0).unwrap(), 0);
        assert_eq!(b.bin("X", -5.0).unwrap(), 0);
        assert_eq!(b.bin("X", 100.0).unwrap(), 15);
        assert_eq!(b.bin("X", 1e6).unwrap(), 15);
        // Oracle: cuts below 50.5 are quantiles j/15 with 1 + 99 j / 15 < 50.5, i.e. j <= 7.
        let oracle = (1..15).filter(|&j| 1.0 + 99.0 * j as f64 / 15.0 < 50.5).count();
        assert_eq!(oracle, 7);
        assert_eq!(b.bin("X", 50.5).unwrap(), oracle);
        let f = b.feature("X").unwrap();
        assert!(f.cuts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn tokenization_layout() {
        let schema = FeatureSchema::default();
        let c = Cohort::new(schema.clone(), vec![record(&[("Age", 61.0), ("Sex", 1.0)])]).unwrap();
        let tok = Tokenizer::new(schema.clone(), fit_binning(&c, 16).unwrap());
        let doc = serialize_prompt(&record(&[("Age", 61.0)]), &schema).unwrap();
        let seq = tok.tokenize(&doc).unwrap();
        assert_eq!(seq.len(), 2 + 3 * schema.len());
        assert!(seq.ends_with_answer_start());
        assert_eq!(seq.ids[0], token::INSTR);
        // Sex is missing: (name, MISSING) pair.
        assert_eq!(seq.ids[5], token::MISSING);
        assert_eq!(tok.feature_of(seq.ids[4]), Some("Sex"));
        assert!(seq.ids.iter().all(|&id| (id as usize) < tok.vocab().size()));
        assert_eq!(seq, tok.tokenize_values(&record(&[("Age", 61.0)]).values).unwrap());
        // HBP never observed in training: observed value cannot be binned.
        assert!(matches!(
            tok.tokenize_values(&record(&[("HBP", 1.0)]).values),
            Err(Error::UnfittableFeature(_))
        ));
    }

    #[test]
    fn vocabulary_manifest() {
        let schema = FeatureSchema::default();
        let c = Cohort::new(schema.clone(), vec![record(&[("Age", 61.0)])]).unwrap();
        let v = Vocabulary::new(&schema, &fit_binning(&c, 4).unwrap());
        let csv = v.manifest_csv();
        assert!(csv.starts_with("id,token\n0,<instr>\n"));
        assert_eq!(csv.lines().count(), v.size() + 1);
        assert_eq!(v.hash().len(), 64);
        let ranges = v.value_ranges();
        assert_eq!(ranges.len(), schema.len());
        for (r, f) in ranges.iter().zip(schema.features()) {
            assert_eq!(v.surface(r.start - 1), Some(format!("{}:", f.name).as_str()));
            assert_eq!(r.len(), fit_binning(&c, 4).unwrap().bins_for(f.kind));
        }
        assert_eq!(ranges.last().unwrap().end as usize, v.size());
    }

    proptest! {
        #[test]
        fn binning_is_monotone(train in prop::collection::vec(-100f64..100.0, 2..60), a in -200f64..200.0, b in -200f64..200.0) {
            let bins = fit_binning(&uniform_cohort(train.into_iter()), 16).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (bl, bh) = (bins.bin("X", lo).unwrap(), bins.bin("X", hi).unwrap());
            prop_assert!(bl <= bh);
            prop_assert!(bh < 16);
        }

        #[test]
        fn prompt_has_one_line_per_feature(mask in prop::collection::vec(any::<bool>(), 11), v in 0f64..100.0) {
            let schema = FeatureSchema::default();
            let values: Vec<(&str, f64)> = schema
                .features()
                .iter()
                .zip(&mask)
                .filter(|(_, &keep)| keep)
                .map(|(f, _)| (f.name.as_str(), if f.kind == FeatureKind::Binary { 1.0 } else { v }))
                .collect();
            let doc = serialize_prompt(&record(&values), &schema).unwrap();
            prop_assert_eq!(doc.feature_lines.len(), schema.len());
            let missing = doc.feature_lines.iter().filter(|(_, t)| t == MISSING_MARKER).count();
            prop_assert_eq!(missing, mask.iter().filter(|m| !**m).count());
        }
    }
}
