use super::*;
use proptest::prelude::*;

const VOCAB: usize = 30;
const NAME: u32 = token::N_SPECIAL;
const BIN0: u32 = token::N_SPECIAL + 1;

fn tiny(mode: TuningMode) -> SeqModelConfig {
    SeqModelConfig {
        embed_dim: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_dim: 12,
        max_seq_len: 12,
        tuning_mode: mode,
        prefix_len: 3,
        ..Default::default()
    }
}

fn prompt(bins: &[u32]) -> TokenSeq {
    let mut ids = vec![token::INSTR];
    for (i, &b) in bins.iter().enumerate() {
        ids.push(NAME + 8 * i as u32 + 1);
        ids.push(b);
        ids.push(token::SEP);
    }
    ids.push(token::BEGIN_ANSWER);
    TokenSeq { ids }
}

fn example(bins: &[u32], sev: Severity, out: Outcome) -> TrainExample {
    TrainExample {
        tokens: prompt(bins),
        severity: sev,
        outcome: out,
    }
}

fn batch4() -> Vec<TrainExample> {
    vec![
        example(&[BIN0, BIN0 + 3], Severity::Mild, Outcome::Survive),
        example(&[BIN0 + 5, token::MISSING], Severity::Severe, Outcome::Death),
        example(&[BIN0 + 2, BIN0 + 7], Severity::Severe, Outcome::Survive),
        example(&[token::MISSING, BIN0 + 1], Severity::Mild, Outcome::Death),
    ]
}

#[test]
fn gradient_check_full_mode() {
    let err = gradient_check(&tiny(TuningMode::Full), VOCAB, &batch4()).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn gradient_check_prefix_mode_both_phases() {
    let cfg = tiny(TuningMode::Prefix);
    assert!(gradient_check(&cfg, VOCAB, &batch4()).unwrap() < 1e-4);
    let model = SeqModel::new(&cfg, VOCAB, "").unwrap();
    assert!(gradient_check_model(&model, &batch4(), Phase::All).unwrap() < 1e-4);
}

#[test]
fn frozen_backbone_gradients_are_zero() {
    let model = SeqModel::new(&tiny(TuningMode::Prefix), VOCAB, "").unwrap();
    let (_, grad) = model.loss_and_gradient(&batch4(), Phase::PrefixOnly).unwrap();
    let mask = model.trainable_mask(Phase::PrefixOnly);
    assert!(grad.iter().zip(&mask).filter(|(_, &m)| !m).all(|(&g, _)| g == 0.0));
    assert!(grad.iter().zip(&mask).any(|(&g, &m)| m && g != 0.0));
}

#[test]
fn zero_output_projection_gives_ln2() {
    let mut model = SeqModel::new(&tiny(TuningMode::Full), VOCAB, "").unwrap();
    model.zero_output_weights();
    let loss = model.mean_loss(&batch4()).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn zero_epochs_keeps_initial_loss() {
    let cfg = SeqModelConfig {
        epochs: 0,
        ..tiny(TuningMode::Full)
    };
    let m = train_examples(&batch4(), &cfg, VOCAB, "").unwrap();
    assert_eq!(m.loss_curve.len(), 1);
    let fresh = SeqModel::new(&cfg, VOCAB, "").unwrap();
    assert_eq!(m.final_loss().unwrap(), fresh.mean_loss(&batch4()).unwrap());
}

#[test]
fn training_is_deterministic() {
    let cfg = SeqModelConfig {
        epochs: 3,
        batch_size: 2,
        dropout: 0.1,
        ..tiny(TuningMode::Full)
    };
    let a = train_examples(&batch4(), &cfg, VOCAB, "").unwrap();
    let b = train_examples(&batch4(), &cfg, VOCAB, "").unwrap();
    assert_eq!(a.final_loss().unwrap().to_bits(), b.final_loss().unwrap().to_bits());
    assert_eq!(a.params(), b.params());
}

fn separable16() -> Vec<TrainExample> {
    (0..16)
        .map(|k| {
            let (s, o) = match k {
                0..=5 => (Severity::Mild, Outcome::Survive),
                6..=10 => (Severity::Severe, Outcome::Survive),
                _ => (Severity::Severe, Outcome::Death),
            };
            example(&[BIN0 + k], s, o)
        })
        .collect()
}

#[test]
fn memorizes_sixteen_separable_samples() {
    let data = separable16();
    let cfg = SeqModelConfig {
        embed_dim: 16,
        ffn_dim: 32,
        max_seq_len: 8,
        batch_size: 16,
        epochs: 500,
        learning_rate: 3e-3,
        ..Default::default()
    };
    let m = train_examples(&data, &cfg, VOCAB, "").unwrap();
    let correct = data
        .iter()
        .filter(|ex| {
            let r = decode_constrained(&m, &ex.tokens).unwrap();
            r.label.severity() == ex.severity && r.label.outcome() == ex.outcome
        })
        .count();
    assert_eq!(correct, 16);
}

#[test]
fn first_epoch_reduces_loss() {
    let data = separable16();
    let cfg = SeqModelConfig {
        epochs: 1,
        batch_size: 4,
        learning_rate: 1e-2,
        ..tiny(TuningMode::Full)
    };
    let m = train_examples(&data, &cfg, VOCAB, "").unwrap();
    assert!(m.mean_loss(&data).unwrap() < m.loss_curve[0]);
}

#[test]
fn prefix_training_freezes_backbone_after_warmup() {
    let cfg = SeqModelConfig {
        epochs: 2,
        warmup_fraction: 0.0,
        learning_rate: 1e-2,
        ..tiny(TuningMode::Prefix)
    };
    let init = SeqModel::new(&cfg, VOCAB, "").unwrap();
    let trained = train_examples(&batch4(), &cfg, VOCAB, "").unwrap();
    let mask = init.trainable_mask(Phase::PrefixOnly);
    for ((a, b), m) in init.params().iter().zip(trained.params()).zip(&mask) {
        if !m {
            assert_eq!(a, b);
        }
    }
    assert_ne!(init.params(), trained.params());
    let full = SeqModel::new(&tiny(TuningMode::Full), VOCAB, "").unwrap();
    assert!(trained.trainable_parameter_count() < full.trainable_parameter_count());
}

#[test]
fn mask_flips_mild_death_to_survive() {
    let mut m = SeqModel::new(&tiny(TuningMode::Full), VOCAB, "").unwrap();
    m.zero_output_weights();
    m.set_output_bias([3.0, 0.0, 0.0, 4.0]);
    let p = prompt(&[BIN0]);
    let c = decode_constrained(&m, &p).unwrap();
    assert_eq!((c.label.severity(), c.label.outcome()), (Severity::Mild, Outcome::Survive));
    assert_eq!(c.outcome_probs, [1.0, 0.0]);
    let u = decode_unconstrained(&m, &p).unwrap();
    assert_eq!((u.severity, u.outcome), (Severity::Mild, Outcome::Death));
    assert!(u.outcome_probs[1] > 0.9);
}

#[test]
fn severe_path_is_unmasked() {
    let mut m = SeqModel::new(&tiny(TuningMode::Full), VOCAB, "").unwrap();
    m.zero_output_weights();
    m.set_output_bias([0.0, 2.0, 0.0, 1.0]);
    let p = prompt(&[BIN0]);
    let c = decode_constrained(&m, &p).unwrap();
    let u = decode_unconstrained(&m, &p).unwrap();
    assert_eq!((c.label.severity(), c.label.outcome()), (Severity::Severe, Outcome::Death));
    assert_eq!((u.severity, u.outcome), (Severity::Severe, Outcome::Death));
    assert_eq!(c.outcome_probs, u.outcome_probs);
}

#[test]
fn exact_ties_pick_lower_index() {
    let mut m = SeqModel::new(&tiny(TuningMode::Full), VOCAB, "").unwrap();
    m.zero_output_weights();
    let r = decode_unconstrained(&m, &prompt(&[BIN0])).unwrap();
    assert_eq!((r.severity, r.outcome), (Severity::Mild, Outcome::Survive));
    assert_eq!(r.severity_probs, [0.5, 0.5]);
}

#[test]
fn input_validation() {
    let m = SeqModel::new(&tiny(TuningMode::Full), VOCAB, "").unwrap();
    let no_marker = TokenSeq { ids: vec![token::INSTR, NAME] };
    assert!(matches!(decode_constrained(&m, &no_marker), Err(Error::InvalidInput(_))));
    let long = prompt(&[BIN0, BIN0, BIN0, BIN0]);
    assert!(matches!(decode_constrained(&m, &long), Err(Error::SequenceOverflow { .. })));
    let oov = TokenSeq { ids: vec![VOCAB as u32, token::BEGIN_ANSWER] };
    assert!(decode_constrained(&m, &oov).is_err());
    assert!(train_examples(&[], &tiny(TuningMode::Full), VOCAB, "").is_err());
    let bad = SeqModelConfig { embed_dim: 9, ..tiny(TuningMode::Full) };
    assert!(bad.validate().is_err());
}

#[test]
fn checkpoint_round_trip() {
    let cfg = SeqModelConfig { epochs: 1, ..tiny(TuningMode::Prefix) };
    let m = train_examples(&batch4(), &cfg, VOCAB, "abc").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&m, &path, "cfg").unwrap();
    let back = load_checkpoint(&path, Some("abc")).unwrap();
    assert_eq!(back, m);
    assert!(matches!(load_checkpoint(&path, Some("other")), Err(Error::SchemaMismatch(_))));
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_checkpoint(&path, None), Err(Error::Format(_))));
    bytes[0] = b'S';
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&path, &bytes).unwrap();
    assert!(load_checkpoint(&path, None).is_err());
}

#[test]
fn attention_rows_are_distributions() {
    let m = SeqModel::new(&tiny(TuningMode::Prefix), VOCAB, "").unwrap();
    let p = prompt(&[BIN0 + 1, BIN0 + 4]);
    for t in 0..p.len() {
        let row = m.attention_row(&p.ids, 1, 1, t).unwrap();
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        // Prefix slots, then positions 0..=t; later positions get nothing.
        assert!(row[3 + t + 1..].iter().all(|&v| v == 0.0));
    }
}

#[test]
fn missing_marker_changes_encoding() {
    let m = SeqModel::new(&tiny(TuningMode::Full), VOCAB, "").unwrap();
    let observed = m.forward_logits(&prompt(&[BIN0 + 2, BIN0]).ids).unwrap();
    let missing = m.forward_logits(&prompt(&[token::MISSING, BIN0]).ids).unwrap();
    assert_ne!(observed.last(), missing.last());
    let again = m.forward_logits(&prompt(&[token::MISSING, BIN0]).ids).unwrap();
    assert_eq!(missing, again);
}

#[test]
fn ordinal_init_is_a_linear_ramp() {
    let cfg = tiny(TuningMode::Full);
    let plain = SeqModel::new(&cfg, VOCAB, "").unwrap();
    let mut ramped = plain.clone();
    ramped.init_ordinal_embeddings(&[BIN0..BIN0 + 5], 0.5);
    let d = cfg.embed_dim;
    let delta = |id: u32| -> Vec<f64> {
        let r = id as usize * d..(id as usize + 1) * d;
        plain.params[r.clone()].iter().zip(&ramped.params[r]).map(|(a, b)| b - a).collect()
    };
    assert!(delta(NAME).iter().all(|&v| v == 0.0));
    assert!(delta(BIN0 + 2).iter().all(|&v| v.abs() < 1e-15));
    let (lo, hi) = (delta(BIN0), delta(BIN0 + 4));
    for j in 0..d {
        assert!((lo[j] + hi[j]).abs() < 1e-12);
        assert!((delta(BIN0 + 1)[j] - 0.5 * lo[j]).abs() < 1e-12);
    }
    assert!(lo.iter().any(|&v| v != 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn logits_are_causal(seed in 0u64..1000, ids in prop::collection::vec(0u32..VOCAB as u32, 3..12), t in 0usize..10, repl in 0u32..VOCAB as u32) {
        let t = t % (ids.len() - 1);
        let cfg = SeqModelConfig { rng_seed: seed, ..tiny(TuningMode::Prefix) };
        let m = SeqModel::new(&cfg, VOCAB, "").unwrap();
        let before = m.forward_logits(&ids).unwrap();
        let mut changed = ids.clone();
        for id in changed.iter_mut().skip(t + 1) {
            *id = (*id + repl) % VOCAB as u32;
        }
        let after = m.forward_logits(&changed).unwrap();
        prop_assert_eq!(&before[..=t], &after[..=t]);
    }

    #[test]
    fn constrained_never_emits_mild_death(seed in 0u64..10_000, bins in prop::collection::vec(0u32..8, 1..4), bias in prop::array::uniform4(-5f64..5.0)) {
        let cfg = SeqModelConfig { rng_seed: seed, max_seq_len: 16, ..tiny(TuningMode::Full) };
        let mut m = SeqModel::new(&cfg, VOCAB, "").unwrap();
        m.set_output_bias(bias);
        let p = prompt(&bins.iter().map(|b| BIN0 + b).collect::<Vec<_>>());
        let r = decode_constrained(&m, &p).unwrap();
        prop_assert!(!(r.label.severity() == Severity::Mild && r.label.outcome() == Outcome::Death));
        for pair in [r.severity_probs, r.outcome_probs] {
            prop_assert!(pair.iter().all(|&v| v >= 0.0));
            prop_assert!((pair[0] + pair[1] - 1.0).abs() < 1e-12);
        }
        let u = decode_unconstrained(&m, &p).unwrap();
        prop_assert_eq!(u.severity, r.label.severity());
        if u.severity == Severity::Severe {
            prop_assert_eq!(u.outcome, r.label.outcome());
        }
    }
}

