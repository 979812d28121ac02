//! Two-token autoregressive classifier over prompt token sequences.
//!
//! A small pre-norm causal transformer reads `[INSTR] (name value SEP)*
//! BEGIN_ANSWER`, predicts severity at the answer position, then predicts
//! outcome one step later with the severity token in context. In
//! [`TuningMode::Prefix`] every layer additionally attends to learnable
//! prefix key/value vectors; after a full warm-up only those vectors and the
//! output projection keep training.

mod checkpoint;
mod net;

use rand::seq::SliceRandom;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, write_loss_curve_csv, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use net::Group;

use crate::cohort::{Outcome, Severity};
use crate::error::{Error, Result};
use crate::promptify::{token, LabelPair, TokenSeq, Vocabulary};
use net::{backward, binary_ce, forward, softmax, Cache, Dims, Layout, N_ANSWER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TuningMode {
    Full,
    Prefix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeqModelConfig {
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
    pub tuning_mode: TuningMode,
    pub prefix_len: usize,
    /// Fraction of optimization steps in prefix mode that update every parameter.
    pub warmup_fraction: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Decoupled weight decay on embedding and weight matrices.
    pub weight_decay: f64,
    /// Scale of a per-feature linear ramp added to value-bin embeddings at
    /// initialization, so adjacent bins start close together. 0 disables it.
    pub ordinal_embed_scale: f64,
}

impl Default for SeqModelConfig {
    fn default() -> Self {
        SeqModelConfig {
            embed_dim: 64,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 128,
            max_seq_len: 64,
            dropout: 0.0,
            learning_rate: 3e-4,
            batch_size: 32,
            epochs: 30,
            rng_seed: 2020,
            tuning_mode: TuningMode::Full,
            prefix_len: 8,
            warmup_fraction: 0.2,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            ordinal_embed_scale: 0.0,
        }
    }
}

impl SeqModelConfig {
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if self.embed_dim == 0 || self.n_heads == 0 || self.embed_dim % self.n_heads != 0 {
            bad.push(format!(
                "seqmodel.embed_dim ({}) must be a positive multiple of n_heads ({})",
                self.embed_dim, self.n_heads
            ));
        }
        if self.n_layers == 0 {
            bad.push("seqmodel.n_layers must be >= 1".into());
        }
        if self.ffn_dim == 0 {
            bad.push("seqmodel.ffn_dim must be >= 1".into());
        }
        if self.max_seq_len < 2 {
            bad.push("seqmodel.max_seq_len must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            bad.push(format!("seqmodel.dropout must be in [0, 1), got {}", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            bad.push(format!("seqmodel.learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            bad.push("seqmodel.batch_size must be >= 1".into());
        }
        if self.tuning_mode == TuningMode::Prefix && self.prefix_len == 0 {
            bad.push("seqmodel.prefix_len must be >= 1 in prefix mode".into());
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            bad.push(format!("seqmodel.warmup_fraction must be in [0, 1], got {}", self.warmup_fraction));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            bad.push("seqmodel.adam_beta1 and adam_beta2 must be in [0, 1)".into());
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            bad.push(format!("seqmodel.weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(self.ordinal_embed_scale >= 0.0 && self.ordinal_embed_scale.is_finite()) {
            bad.push(format!(
                "seqmodel.ordinal_embed_scale must be >= 0, got {}",
                self.ordinal_embed_scale
            ));
        }
        if !(self.adam_eps > 0.0) {
            bad.push("seqmodel.adam_eps must be > 0".into());
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(bad))
        }
    }

    fn dims(&self, vocab: usize) -> Dims {
        Dims {
            vocab,
            max_len: self.max_seq_len,
            d: self.embed_dim,
            heads: self.n_heads,
            ffn: self.ffn_dim,
            layers: self.n_layers,
            prefix: match self.tuning_mode {
                TuningMode::Full => 0,
                TuningMode::Prefix => self.prefix_len,
            },
        }
    }
}

/// Which parameters an optimization step may change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Every parameter.
    All,
    /// Prefix vectors and output projection only.
    PrefixOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeqModel {
    config: SeqModelConfig,
    vocab_hash: String,
    layout: Layout,
    params: Vec<f64>,
    /// Mean training loss before the first step, then one entry per epoch.
    pub loss_curve: Vec<f64>,
}

/// One training sequence: a prompt ending in `BEGIN_ANSWER` and its labels.
/// Labels are raw so cohorts containing the excluded pair still train.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainExample {
    pub tokens: TokenSeq,
    pub severity: Severity,
    pub outcome: Outcome,
}

impl From<(TokenSeq, LabelPair)> for TrainExample {
    fn from((tokens, pair): (TokenSeq, LabelPair)) -> Self {
        TrainExample {
            tokens,
            severity: pair.severity(),
            outcome: pair.outcome(),
        }
    }
}

fn sev_token(s: Severity) -> u32 {
    match s {
        Severity::Mild => token::SEV_MILD,
        Severity::Severe => token::SEV_SEVERE,
    }
}

impl SeqModel {
    /// Freshly initialized model for a vocabulary of `vocab_size` tokens.
    pub fn new(config: &SeqModelConfig, vocab_size: usize, vocab_hash: &str) -> Result<Self> {
        config.validate()?;
        if vocab_size <= token::N_SPECIAL as usize {
            return Err(Error::validation(format!("vocabulary of {vocab_size} tokens has no feature tokens")));
        }
        let layout = Layout::new(config.dims(vocab_size));
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let params = layout.init(&mut rng);
        Ok(SeqModel {
            config: config.clone(),
            vocab_hash: vocab_hash.to_string(),
            layout,
            params,
            loss_curve: Vec::new(),
        })
    }

    /// Adds `scale * (2b/(n-1) - 1) * u_f` to the embedding of bin `b` of each
    /// range, with one random direction `u_f ~ N(0, I)` per range.
    pub fn init_ordinal_embeddings(&mut self, ranges: &[Range<u32>], scale: f64) {
        let d = self.config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        rng.set_stream(2);
        let emb = &mut self.params[self.layout.tok_emb.range()];
        for r in ranges {
            let n = r.len();
            if n < 2 || r.end as usize > self.layout.dims.vocab {
                continue;
            }
            let u: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            for (b, id) in r.clone().enumerate() {
                let t = scale * (2.0 * b as f64 / (n - 1) as f64 - 1.0);
                let row = &mut emb[id as usize * d..(id as usize + 1) * d];
                row.iter_mut().zip(&u).for_each(|(e, ui)| *e += t * ui);
            }
        }
    }

    pub fn config(&self) -> &SeqModelConfig {
        &self.config
    }

    pub fn vocab_size(&self) -> usize {
        self.layout.dims.vocab
    }

    pub fn vocab_hash(&self) -> &str {
        &self.vocab_hash
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    /// `(name, rows, cols)` for every tensor in storage order.
    pub fn tensor_shapes(&self) -> Vec<(String, usize, usize)> {
        self.layout.named().into_iter().map(|(n, t, _)| (n, t.rows, t.cols)).collect()
    }

    /// Mutable view of a named tensor.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let (_, t, _) = self.layout.named().into_iter().find(|(n, _, _)| n == name)?;
        Some(&mut self.params[t.range()])
    }

    /// Sets the four output biases (mild, severe, survive, death).
    pub fn set_output_bias(&mut self, bias: [f64; N_ANSWER]) {
        self.params[self.layout.b_out.range()].copy_from_slice(&bias);
    }

    /// Zeroes the output weight matrix, making logits equal to the bias.
    pub fn zero_output_weights(&mut self) {
        self.params[self.layout.w_out.range()].fill(0.0);
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_curve.last().copied()
    }

    fn phase_groups(&self, phase: Phase) -> &'static [Group] {
        match phase {
            Phase::All => &[Group::Backbone, Group::Prefix, Group::Head],
            Phase::PrefixOnly => &[Group::Prefix, Group::Head],
        }
    }

    /// Parameters updated in `phase`.
    pub fn trainable_mask(&self, phase: Phase) -> Vec<bool> {
        self.layout.mask(self.phase_groups(phase))
    }

    /// Parameters updated once training has settled: everything in full mode,
    /// prefix vectors plus output projection in prefix mode.
    pub fn trainable_parameter_count(&self) -> usize {
        let phase = match self.config.tuning_mode {
            TuningMode::Full => Phase::All,
            TuningMode::Prefix => Phase::PrefixOnly,
        };
        self.trainable_mask(phase).iter().filter(|&&b| b).count()
    }

    fn check_tokens(&self, ids: &[u32], extra: usize) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::InvalidInput("empty token sequence".into()));
        }
        if ids.len() + extra > self.config.max_seq_len {
            return Err(Error::SequenceOverflow {
                len: ids.len() + extra,
                max: self.config.max_seq_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id as usize >= self.vocab_size()) {
            return Err(Error::InvalidInput(format!(
                "token id {bad} outside vocabulary of {}",
                self.vocab_size()
            )));
        }
        Ok(())
    }

    fn check_prompt(&self, tokens: &TokenSeq) -> Result<()> {
        if !tokens.ends_with_answer_start() {
            return Err(Error::InvalidInput("token sequence must end at the answer marker".into()));
        }
        self.check_tokens(&tokens.ids, 1)?;
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("model parameters are not finite".into()));
        }
        Ok(())
    }

    /// Answer logits (mild, severe, survive, death) at every position.
    pub fn forward_logits(&self, ids: &[u32]) -> Result<Vec<[f64; N_ANSWER]>> {
        self.check_tokens(ids, 0)?;
        let cache = forward(&self.params, &self.layout, ids, None);
        Ok((0..ids.len())
            .map(|t| cache.logits_at(t).try_into().unwrap())
            .collect())
    }

    /// Attention probabilities of one layer and head at query position `t`
    /// (prefix slots first, then positions `0..=t`, then zeros).
    pub fn attention_row(&self, ids: &[u32], layer: usize, head: usize, t: usize) -> Result<Vec<f64>> {
        self.check_tokens(ids, 0)?;
        if layer >= self.config.n_layers || head >= self.config.n_heads || t >= ids.len() {
            return Err(Error::InvalidInput("attention index out of range".into()));
        }
        let cache = forward(&self.params, &self.layout, ids, None);
        Ok(cache.attention_row(layer, head, t).to_vec())
    }

    /// Both answer steps for a given severity token, from one forward pass.
    fn answer_logits(&self, prompt: &[u32], severity: Severity) -> ([f64; 2], [f64; 2]) {
        let mut ids = prompt.to_vec();
        ids.push(sev_token(severity));
        let cache = forward(&self.params, &self.layout, &ids, None);
        let n = ids.len();
        let s = cache.logits_at(n - 2);
        let o = cache.logits_at(n - 1);
        ([s[0], s[1]], [o[2], o[3]])
    }

    fn decode(&self, tokens: &TokenSeq, constrained: bool) -> Result<RawDecode> {
        self.check_prompt(tokens)?;
        // Severity logits at the answer marker do not depend on the appended
        // token, so the mild pass serves both steps when mild wins.
        let (sev_logits, mild_out) = self.answer_logits(&tokens.ids, Severity::Mild);
        let severity = if sev_logits[1] > sev_logits[0] {
            Severity::Severe
        } else {
            Severity::Mild
        };
        let mut out_logits = match severity {
            Severity::Mild => mild_out,
            Severity::Severe => self.answer_logits(&tokens.ids, Severity::Severe).1,
        };
        if constrained && severity == Severity::Mild {
            out_logits[1] = f64::NEG_INFINITY;
        }
        let outcome = if out_logits[1] > out_logits[0] {
            Outcome::Death
        } else {
            Outcome::Survive
        };
        let sp = softmax(&sev_logits);
        let op = softmax(&out_logits);
        Ok(RawDecode {
            severity,
            outcome,
            severity_probs: [sp[0], sp[1]],
            outcome_probs: [op[0], op[1]],
        })
    }

    /// Teacher-forced loss of one example and, optionally, its gradient.
    fn example_loss(&self, ex: &TrainExample, grad: Option<(&mut [f64], f64)>, dropout: Option<&mut ChaCha8Rng>) -> f64 {
        let mut ids = ex.tokens.ids.clone();
        ids.push(sev_token(ex.severity));
        let drop = dropout.map(|rng| (self.config.dropout, rng));
        let cache = forward(&self.params, &self.layout, &ids, drop);
        let (loss, dlogits) = answer_loss(&cache, ex);
        if let Some((g, scale)) = grad {
            let scaled: Vec<f64> = dlogits.iter().map(|v| v * scale).collect();
            backward(&self.params, &self.layout, &cache, &scaled, g);
        }
        loss
    }

    /// Mean loss per answer position over `examples`.
    pub fn mean_loss(&self, examples: &[TrainExample]) -> Result<f64> {
        validate_examples(self, examples)?;
        let total: f64 = examples.iter().map(|ex| self.example_loss(ex, None, None)).sum();
        Ok(total / examples.len() as f64)
    }

    /// Mean loss and its gradient over `batch`, with no dropout. Gradients of
    /// parameters outside `phase` are zero.
    pub fn loss_and_gradient(&self, batch: &[TrainExample], phase: Phase) -> Result<(f64, Vec<f64>)> {
        validate_examples(self, batch)?;
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for ex in batch {
            loss += self.example_loss(ex, Some((&mut grad, scale)), None);
        }
        freeze(&mut grad, &self.trainable_mask(phase));
        Ok((loss * scale, grad))
    }
}

/// Loss averaged over the two answer positions and the logit gradient.
fn answer_loss(cache: &Cache, ex: &TrainExample) -> (f64, Vec<f64>) {
    let n = cache.len();
    let mut dlogits = vec![0.0; n * N_ANSWER];
    let s = cache.logits_at(n - 2);
    let (ls, gs) = binary_ce(s[0], s[1], ex.severity.bit() as usize);
    let o = cache.logits_at(n - 1);
    let (lo, go) = binary_ce(o[2], o[3], ex.outcome.bit() as usize);
    dlogits[(n - 2) * N_ANSWER] = 0.5 * gs[0];
    dlogits[(n - 2) * N_ANSWER + 1] = 0.5 * gs[1];
    dlogits[(n - 1) * N_ANSWER + 2] = 0.5 * go[0];
    dlogits[(n - 1) * N_ANSWER + 3] = 0.5 * go[1];
    (0.5 * (ls + lo), dlogits)
}

fn freeze(grad: &mut [f64], trainable: &[bool]) {
    grad.iter_mut().zip(trainable).filter(|(_, &t)| !t).for_each(|(g, _)| *g = 0.0);
}

fn validate_examples(model: &SeqModel, examples: &[TrainExample]) -> Result<()> {
    if examples.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    for ex in examples {
        model.check_prompt(&ex.tokens)?;
    }
    Ok(())
}

/// Labels and probabilities from two greedy steps; the pair is unchecked.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawDecode {
    pub severity: Severity,
    pub outcome: Outcome,
    pub severity_probs: [f64; 2],
    pub outcome_probs: [f64; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub label: LabelPair,
    /// Over (mild, severe).
    pub severity_probs: [f64; 2],
    /// Over (survive, death), after masking.
    pub outcome_probs: [f64; 2],
}

/// Greedy severity, then greedy outcome with death masked out after mild.
/// Exact ties pick mild and survive.
pub fn decode_constrained(model: &SeqModel, tokens: &TokenSeq) -> Result<DecodeResult> {
    let raw = model.decode(tokens, true)?;
    Ok(DecodeResult {
        label: LabelPair::new(raw.severity, raw.outcome)?,
        severity_probs: raw.severity_probs,
        outcome_probs: raw.outcome_probs,
    })
}

/// Same two steps without the mask; may return (mild, death).
pub fn decode_unconstrained(model: &SeqModel, tokens: &TokenSeq) -> Result<RawDecode> {
    model.decode(tokens, false)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], trainable: &[bool], decay: &[bool], cfg: &SeqModelConfig) {
        self.t += 1;
        let (b1, b2) = (cfg.adam_beta1, cfg.adam_beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        for i in 0..params.len() {
            if !trainable[i] {
                continue;
            }
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * grad[i];
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            if decay[i] {
                params[i] -= cfg.learning_rate * cfg.weight_decay * params[i];
            }
            params[i] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains on `(tokens, label)` pairs.
pub fn train_seqmodel(
    examples: &[(TokenSeq, LabelPair)],
    config: &SeqModelConfig,
    vocab: &Vocabulary,
) -> Result<SeqModel> {
    let examples: Vec<TrainExample> = examples.iter().cloned().map(TrainExample::from).collect();
    train_with_vocab(&examples, config, vocab)
}

/// [`train_examples`] with ordinal bin-embedding initialization taken from `vocab`.
pub fn train_with_vocab(examples: &[TrainExample], config: &SeqModelConfig, vocab: &Vocabulary) -> Result<SeqModel> {
    let mut model = SeqModel::new(config, vocab.size(), &vocab.hash())?;
    if config.ordinal_embed_scale > 0.0 {
        model.init_ordinal_embeddings(&vocab.value_ranges(), config.ordinal_embed_scale);
    }
    fit(model, examples)
}

/// Mini-batch Adam on the teacher-forced two-position loss. Batches are drawn
/// from a per-epoch shuffle seeded by `config.rng_seed`.
pub fn train_examples(
    examples: &[TrainExample],
    config: &SeqModelConfig,
    vocab_size: usize,
    vocab_hash: &str,
) -> Result<SeqModel> {
    fit(SeqModel::new(config, vocab_size, vocab_hash)?, examples)
}

fn fit(mut model: SeqModel, examples: &[TrainExample]) -> Result<SeqModel> {
    let config = &model.config.clone();
    validate_examples(&model, examples)?;
    model.loss_curve.push(model.mean_loss(examples)?);

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    rng.set_stream(1);
    let n_batches = examples.len().div_ceil(config.batch_size);
    let total_steps = config.epochs * n_batches;
    let warmup_steps = match config.tuning_mode {
        TuningMode::Full => total_steps,
        TuningMode::Prefix => (config.warmup_fraction * total_steps as f64).ceil() as usize,
    };
    let all = model.trainable_mask(Phase::All);
    let prefix_only = model.trainable_mask(Phase::PrefixOnly);
    let decay = model.layout.decay_mask();
    let mut adam = Adam::new(model.params.len());
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let trainable = if step < warmup_steps { &all } else { &prefix_only };
            let mut grad = vec![0.0; model.params.len()];
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let drop = (config.dropout > 0.0).then_some(&mut rng);
                epoch_loss += model.example_loss(&examples[i], Some((&mut grad, scale)), drop);
            }
            freeze(&mut grad, trainable);
            adam.step(&mut model.params, &grad, trainable, &decay, config);
            step += 1;
        }
        model.loss_curve.push(epoch_loss / examples.len() as f64);
    }
    if model.params.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateFit("sequence model parameters diverged".into()));
    }
    Ok(model)
}

/// Relative error used by [`gradient_check`]: `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central-difference check (step 1e-5) of every parameter trainable in `phase`.
/// Returns the maximum relative error.
pub fn gradient_check_model(model: &SeqModel, batch: &[TrainExample], phase: Phase) -> Result<f64> {
    let (_, grad) = model.loss_and_gradient(batch, phase)?;
    let mask = model.trainable_mask(phase);
    let h = 1e-5;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for i in (0..grad.len()).filter(|&i| mask[i]) {
        let orig = probe.params[i];
        probe.params[i] = orig + h;
        let up = probe.mean_loss(batch)?;
        probe.params[i] = orig - h;
        let down = probe.mean_loss(batch)?;
        probe.params[i] = orig;
        worst = worst.max(relative_error(grad[i], (up - down) / (2.0 * h)));
    }
    Ok(worst)
}

/// Gradient check of a freshly initialized model built from `config`. In
/// prefix mode the post-warm-up trainable set is checked.
pub fn gradient_check(config: &SeqModelConfig, vocab_size: usize, batch: &[TrainExample]) -> Result<f64> {
    let model = SeqModel::new(config, vocab_size, "")?;
    let phase = match config.tuning_mode {
        TuningMode::Full => Phase::All,
        TuningMode::Prefix => Phase::PrefixOnly,
    };
    gradient_check_model(&model, batch, phase)
}

#[cfg(test)]
mod tests;
