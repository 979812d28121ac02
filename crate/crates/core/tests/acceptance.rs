//! End-to-end acceptance checks. Each criterion is its own test and prints a
//! single `[PASS]`/`[FAIL]` line; run with `--nocapture` to see them all.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tower::ServiceExt;

use serolm::cohort::{generate_cohort, load_cohort_csv, CohortSpec, Outcome, Severity, PLANTED_FEATURES};
use serolm::learners::{best_split, dense_data, fit_gbdt, BaselineKind, GbdtConfig, Matrix, Target};
use serolm::metrics::{compute_metrics, confusion, f1_score};
use serolm::pipeline::{files, Pipeline, PipelineConfig, MissingExperimentReport, SEQ_CONSTRAINED};
use serolm::preprocess::patient_split;
use serolm::promptify::{fit_binning, token, TokenSeq, Tokenizer};
use serolm::seqmodel::{
    decode_constrained, decode_unconstrained, gradient_check, SeqModel, SeqModelConfig, TrainExample, TuningMode,
};
use serolm::service::{router, ModelChoice, PredictResponse, ScoringPipeline};

/// Criterion 1 wall-clock budget.
const METRICS_BUDGET: Duration = Duration::from_secs(10);
/// Criterion 2 tolerance on reproduced F1 values.
const F1_TOL: f64 = 5e-4;
/// Criterion 6 bound on the relative gradient error.
const GRAD_TOL: f64 = 1e-4;
/// Criterion 7 wall-clock budget and allowed shortfall against the oracle.
const RUN_BUDGET: Duration = Duration::from_secs(15 * 60);
const ORACLE_MARGIN: f64 = 0.05;
/// Criterion 8: degradation (points) measured on the first audited run of the
/// planted config, as (sequence model, GBDT), and the allowed drift.
const PINNED_DEGRADATION: Option<(f64, f64)> = Some((9.43, 3.37));
const PIN_TOL_PTS: f64 = 2.0;

fn report(n: u32, name: &str, ok: bool, detail: String) {
    println!("[{}] criterion {n:>2}: {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

struct PlantedRun {
    pipeline: Pipeline,
    elapsed: Duration,
}

fn planted_config(out: PathBuf) -> PipelineConfig {
    PipelineConfig {
        output_dir: out,
        ..PipelineConfig::planted()
    }
}

/// The planted run, executed once and shared by criteria 7 to 10.
fn planted() -> &'static PlantedRun {
    static RUN: OnceLock<PlantedRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-a");
        let _ = std::fs::remove_dir_all(&out);
        let pipeline = Pipeline::new(planted_config(out)).unwrap();
        let start = Instant::now();
        pipeline.run_all().unwrap();
        PlantedRun {
            pipeline,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_01_metrics_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let mut mismatches = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=10_000);
        let t: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let p: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
        for positive in [0u8, 1] {
            let (mut tp, mut fp, mut tn, mut fn_) = (0u64, 0u64, 0u64, 0u64);
            for i in 0..n {
                if p[i] == positive && t[i] == positive {
                    tp += 1;
                } else if p[i] == positive {
                    fp += 1;
                } else if t[i] == positive {
                    fn_ += 1;
                } else {
                    tn += 1;
                }
            }
            let c = confusion(&t, &p, positive).unwrap();
            let m = compute_metrics(&c).unwrap();
            let precision = if tp + fp == 0 { 0.0 } else { tp as f64 / (tp + fp) as f64 };
            let recall = if tp + fn_ == 0 { 0.0 } else { tp as f64 / (tp + fn_) as f64 };
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            let accuracy = (tp + tn) as f64 / n as f64;
            if (c.tp, c.fp, c.tn, c.fn_) != (tp, fp, tn, fn_)
                || m.precision != precision
                || m.recall != recall
                || m.f1 != f1
                || m.accuracy != accuracy
            {
                mismatches += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    report(
        1,
        "metrics oracle",
        mismatches == 0 && elapsed < METRICS_BUDGET,
        format!("{mismatches} mismatches over 2000 class views, {:.2}s", elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_02_published_f1() {
    let sev = f1_score(0.6610, 0.6500).unwrap();
    let out = f1_score(0.9444, 0.9401).unwrap();
    let ok = (sev - 0.6555).abs() < F1_TOL && (out - 0.9423).abs() < F1_TOL;
    report(2, "published F1 consistency", ok, format!("severity {sev:.5}, outcome {out:.5}"));
}

#[test]
fn criterion_03_constraint() {
    let mut spec = CohortSpec::default();
    spec.n_patients = 200;
    let cohort = generate_cohort(&spec).unwrap();
    let tokenizer = Tokenizer::new(cohort.schema().clone(), fit_binning(&cohort, 16).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut decodes = 0;
    let mut violations = 0;
    let mut unconstrained_violations = 0;
    let mut last = None;
    for m in 0..100u64 {
        let cfg = SeqModelConfig {
            embed_dim: 8,
            ffn_dim: 16,
            n_layers: 1,
            max_seq_len: 48,
            rng_seed: m,
            ..Default::default()
        };
        let mut model = SeqModel::new(&cfg, tokenizer.vocab().size(), "").unwrap();
        model.set_output_bias(std::array::from_fn(|_| rng.random_range(-4.0..4.0)));
        for _ in 0..100 {
            let s = &cohort.samples()[rng.random_range(0..cohort.len())];
            let values: BTreeMap<String, f64> = s
                .values
                .iter()
                .filter(|_| rng.random_bool(0.7))
                .map(|(k, v)| (k.clone(), *v))
                .collect();
            let tokens = tokenizer.tokenize_values(&values).unwrap();
            let r = decode_constrained(&model, &tokens).unwrap();
            decodes += 1;
            if r.label.severity() == Severity::Mild && r.label.outcome() == Outcome::Death {
                violations += 1;
            }
            let u = decode_unconstrained(&model, &tokens).unwrap();
            if u.severity == Severity::Mild && u.outcome == Outcome::Death {
                unconstrained_violations += 1;
            }
            last = Some(tokens);
        }
    }
    // Adversarial head: mild and death dominate regardless of the input.
    let cfg = SeqModelConfig {
        embed_dim: 8,
        ffn_dim: 16,
        max_seq_len: 48,
        ..Default::default()
    };
    let mut adversarial = SeqModel::new(&cfg, tokenizer.vocab().size(), "").unwrap();
    adversarial.zero_output_weights();
    adversarial.set_output_bias([5.0, -5.0, -5.0, 5.0]);
    let tokens = last.unwrap();
    let u = decode_unconstrained(&adversarial, &tokens).unwrap();
    let c = decode_constrained(&adversarial, &tokens).unwrap();
    let unmasked = u.severity == Severity::Mild && u.outcome == Outcome::Death;
    let masked = c.label.outcome() == Outcome::Survive;
    report(
        3,
        "constrained decoding",
        decodes >= 10_000 && violations == 0 && unmasked && masked,
        format!(
            "{decodes} decodes, {violations} (mild, death) constrained, {unconstrained_violations} unconstrained; adversarial head unconstrained={:?}/{:?}",
            u.severity, u.outcome
        ),
    );
}

#[test]
fn criterion_04_split_hygiene() {
    let mut spec = CohortSpec::default();
    spec.n_patients = 150;
    let cohort = generate_cohort(&spec).unwrap();
    let all: BTreeSet<String> = cohort.patient_ids().into_iter().map(String::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut bad = 0;
    for _ in 0..1000 {
        let ratio = rng.random_range(0.05..0.95);
        let split = patient_split(&cohort, ratio, rng.random()).unwrap();
        let train: BTreeSet<&str> = split.train.patient_ids().into_iter().collect();
        let test: BTreeSet<&str> = split.test.patient_ids().into_iter().collect();
        let covered = train.len() + test.len() == all.len();
        if !train.is_disjoint(&test) || !covered || split.train.len() + split.test.len() != cohort.len() {
            bad += 1;
        }
    }
    report(4, "patient split hygiene", bad == 0, format!("{bad} of 1000 splits leaked or lost patients"));
}

/// Squared-error reduction by direct recomputation of each side's SSE.
fn sse(vals: &[f64]) -> f64 {
    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
    vals.iter().map(|v| (v - mean).powi(2)).sum()
}

#[test]
fn criterion_05_tree_split_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut split_mismatch = 0;
    let mut loss_increase = 0;
    for _ in 0..200 {
        let n = rng.random_range(4..=50);
        let d = rng.random_range(1..=4);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(0..12) as f64).collect())
            .collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let idx: Vec<usize> = (0..n).collect();

        let parent = sse(&targets);
        let mut best_gain = f64::NEG_INFINITY;
        let mut argmax: Vec<(usize, f64)> = Vec::new();
        for f in 0..d {
            let mut distinct: Vec<f64> = rows.iter().map(|r| r[f]).collect();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            for w in distinct.windows(2) {
                let thr = (w[0] + w[1]) / 2.0;
                let (l, r): (Vec<f64>, Vec<f64>) = {
                    let mut l = Vec::new();
                    let mut r = Vec::new();
                    for (row, &t) in rows.iter().zip(&targets) {
                        if row[f] <= thr { l.push(t) } else { r.push(t) }
                    }
                    (l, r)
                };
                let gain = parent - sse(&l) - sse(&r);
                if gain > best_gain + 1e-9 {
                    best_gain = gain;
                    argmax = vec![(f, thr)];
                } else if (gain - best_gain).abs() <= 1e-9 {
                    argmax.push((f, thr));
                }
            }
        }
        let chosen = best_split(&x, &targets, None, &idx, &(0..d).collect::<Vec<_>>());
        let agrees = match chosen {
            None => argmax.is_empty(),
            Some(c) => {
                (c.gain - best_gain).abs() <= 1e-9 * best_gain.abs().max(1.0)
                    && argmax.iter().any(|&(f, t)| f == c.feature && t == c.threshold)
            }
        };
        if !agrees {
            split_mismatch += 1;
        }

        let y: Vec<u8> = targets.iter().map(|&t| u8::from(t >= 3.0)).collect();
        if y.iter().all(|&v| v == y[0]) {
            continue;
        }
        let m = fit_gbdt(&x, &y, &GbdtConfig { n_estimators: 100, learning_rate: 0.3, ..Default::default() }).unwrap();
        if m.loss_curve.windows(2).any(|w| w[1] > w[0]) {
            loss_increase += 1;
        }
    }
    report(
        5,
        "tree split oracle and GBDT loss",
        split_mismatch == 0 && loss_increase == 0,
        format!("{split_mismatch} split mismatches, {loss_increase} models with a loss increase"),
    );
}

#[test]
fn criterion_06_gradient_check() {
    let prompt = |bins: &[u32]| {
        let mut ids = vec![token::INSTR];
        for (i, &b) in bins.iter().enumerate() {
            ids.extend([token::N_SPECIAL + 5 * i as u32, b, token::SEP]);
        }
        ids.push(token::BEGIN_ANSWER);
        TokenSeq { ids }
    };
    let b = token::N_SPECIAL + 1;
    let batch = vec![
        TrainExample { tokens: prompt(&[b, b + 2]), severity: Severity::Mild, outcome: Outcome::Survive },
        TrainExample { tokens: prompt(&[b + 3, token::MISSING]), severity: Severity::Severe, outcome: Outcome::Death },
        TrainExample { tokens: prompt(&[token::MISSING, b + 1]), severity: Severity::Severe, outcome: Outcome::Survive },
    ];
    let mut worst: f64 = 0.0;
    for mode in [TuningMode::Full, TuningMode::Prefix] {
        let cfg = SeqModelConfig {
            embed_dim: 16,
            n_heads: 2,
            ffn_dim: 24,
            max_seq_len: 12,
            tuning_mode: mode,
            prefix_len: 2,
            ..Default::default()
        };
        worst = worst.max(gradient_check(&cfg, token::N_SPECIAL as usize + 12, &batch).unwrap());
    }
    report(6, "gradient check", worst < GRAD_TOL, format!("max relative error {worst:.2e}"));
}

fn logistic_fit(x: &[Vec<f64>], y: &[u8]) -> Vec<f64> {
    let d = x[0].len();
    let mut w = vec![0.0; d + 1];
    for _ in 0..3000 {
        let mut g = vec![0.0; d + 1];
        for (r, &t) in x.iter().zip(y) {
            let z = w[d] + r.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let err = 1.0 / (1.0 + (-z).exp()) - f64::from(t);
            for j in 0..d {
                g[j] += err * r[j];
            }
            g[d] += err;
        }
        for j in 0..=d {
            w[j] -= 0.5 * g[j] / x.len() as f64;
        }
    }
    w
}

/// Joint test accuracy of two logistic regressions on standardized imputed features.
fn logistic_oracle(p: &Pipeline) -> f64 {
    let m = p.split_manifest().unwrap();
    let names: Vec<String> = m.schema.names().into_iter().map(String::from).collect();
    let tr = dense_data(&load_cohort_csv(p.path(files::TRAIN_IMPUTED), &m.schema).unwrap(), &names).unwrap();
    let te = dense_data(&load_cohort_csv(p.path(files::TEST_IMPUTED), &m.schema).unwrap(), &names).unwrap();
    let d = names.len();
    let n = tr.x.n_rows() as f64;
    let mean: Vec<f64> = (0..d).map(|j| tr.x.rows().map(|r| r[j]).sum::<f64>() / n).collect();
    let sd: Vec<f64> = (0..d)
        .map(|j| (tr.x.rows().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt().max(1e-9))
        .collect();
    let standardize = |x: &Matrix| -> Vec<Vec<f64>> {
        x.rows().map(|r| (0..d).map(|j| (r[j] - mean[j]) / sd[j]).collect()).collect()
    };
    let (xtr, xte) = (standardize(&tr.x), standardize(&te.x));
    let ws = logistic_fit(&xtr, tr.labels(Target::Severity));
    let wo = logistic_fit(&xtr, tr.labels(Target::Outcome));
    let predict = |w: &[f64], r: &[f64]| u8::from(w[d] + r.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() > 0.0);
    let hits = xte
        .iter()
        .enumerate()
        .filter(|(i, r)| predict(&ws, r) == te.severity[*i] && predict(&wo, r) == te.outcome[*i])
        .count();
    hits as f64 / xte.len() as f64
}

#[test]
fn criterion_07_learnability() {
    let run = planted();
    let p = &run.pipeline;
    let union = p.selection().unwrap().union;
    let missing: Vec<&str> = PLANTED_FEATURES.iter().copied().filter(|f| !union.iter().any(|u| u == f)).collect();
    let joint = p
        .evaluation()
        .unwrap()
        .ablation_row("seqmodel-constrained", SEQ_CONSTRAINED)
        .unwrap()
        .joint_accuracy;
    let oracle = logistic_oracle(p);
    let ok = run.elapsed < RUN_BUDGET && missing.is_empty() && joint >= oracle - ORACLE_MARGIN;
    report(
        7,
        "planted learnability",
        ok,
        format!(
            "run_all {:.1}s, union {:?}, unrecovered {:?}, seqmodel joint {joint:.4} vs oracle {oracle:.4} - {ORACLE_MARGIN}",
            run.elapsed.as_secs_f64(),
            union,
            missing
        ),
    );
}

#[test]
fn criterion_08_missing_experiment() {
    let p = &planted().pipeline;
    let bytes = std::fs::read(p.path(files::MISSING_JSON)).unwrap();
    let stamped: serde_json::Value = serde_json::from_slice(&bytes).unwrap();
    let r: MissingExperimentReport = serde_json::from_value(stamped).unwrap();
    let text_written = p.path(files::MISSING_TXT).exists();
    let (seq, gbdt) = (r.seqmodel_degradation_pts, r.gbdt_degradation_pts);
    let (ok, pin) = match PINNED_DEGRADATION {
        Some((ps, pg)) => (
            text_written && (seq - ps).abs() <= PIN_TOL_PTS && (gbdt - pg).abs() <= PIN_TOL_PTS,
            format!("pinned ({ps:.2}, {pg:.2}) ± {PIN_TOL_PTS}"),
        ),
        None => (false, "not yet pinned".to_string()),
    };
    report(
        8,
        "missing-value experiment",
        ok,
        format!("joint drop SeqModel {seq:.2} pts, GBDT {gbdt:.2} pts; {pin}"),
    );
}

#[test]
fn criterion_09_determinism() {
    let a = &planted().pipeline;
    let out = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance-b");
    let _ = std::fs::remove_dir_all(&out);
    let b = Pipeline::new(planted_config(out)).unwrap();
    b.run_all().unwrap();
    let names = [files::REPORT, files::METRICS, files::ABLATION, files::PREDICTIONS, files::MISSING_JSON, files::MISSING_TXT];
    let differing: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| std::fs::read(a.path(n)).unwrap() != std::fs::read(b.path(n)).unwrap())
        .collect();
    report(
        9,
        "determinism",
        differing.is_empty(),
        format!("{} report files compared, differing: {differing:?}", names.len()),
    );
}

#[test]
fn criterion_10_service_equivalence() {
    let p = &planted().pipeline;
    let scoring = Arc::new(ScoringPipeline::load(p).unwrap());
    let test = load_cohort_csv(p.path(files::TEST), &p.split_manifest().unwrap().schema).unwrap();
    let names: Vec<String> = scoring.schema().names().into_iter().map(String::from).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let choices: Vec<ModelChoice> = std::iter::once(ModelChoice::SeqModel)
        .chain(BaselineKind::ALL.into_iter().map(ModelChoice::Baseline))
        .collect();
    let rt = tokio::runtime::Builder::new_current_thread().build().unwrap();
    let mut mismatches = 0;
    for i in 0..100 {
        let s = &test.samples()[rng.random_range(0..test.len())];
        let mut record: BTreeMap<String, Option<f64>> = BTreeMap::new();
        for n in &names {
            let v = if rng.random_bool(0.25) {
                None
            } else {
                s.value(n).map(|v| v * rng.random_range(0.8..1.2))
            };
            if v.is_some() || rng.random_bool(0.5) {
                record.insert(n.clone(), v);
            }
        }
        let choice = if i < 60 { ModelChoice::SeqModel } else { choices[i % choices.len()] };
        let query = match choice {
            ModelChoice::SeqModel => "seqmodel".to_string(),
            ModelChoice::Baseline(k) => k.as_str().to_string(),
        };
        let library = scoring.predict(&record, choice).unwrap();
        let body = serde_json::to_string(&record).unwrap();
        let served: PredictResponse = rt.block_on(async {
            let req = Request::post(format!("/predict?model={query}"))
                .header("content-type", "application/json")
                .body(Body::from(body))
                .unwrap();
            let resp = router(scoring.clone()).oneshot(req).await.unwrap();
            assert_eq!(resp.status(), StatusCode::OK);
            serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap()
        });
        let bits = |r: &PredictResponse| {
            [r.severity_probs, r.outcome_probs].concat().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        if served != library || bits(&served) != bits(&library) {
            mismatches += 1;
        }
    }
    report(
        10,
        "service equivalence",
        mismatches == 0,
        format!("{mismatches} of 100 served predictions differ from the library"),
    );
}
