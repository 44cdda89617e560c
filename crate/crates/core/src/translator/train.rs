use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tactile_nn::optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
use tactile_nn::{Graph, Var};

use super::{bleu, InteractionPair, Padded, Translator, TranslatorError};
use crate::classifier::cosine_lr;
use crate::sim::mix;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslatorEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Teacher-forced next-token accuracy over the epoch's batches.
    pub token_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TranslatorEval {
    pub pairs: usize,
    /// Corpus BLEU for n = 1..=4.
    pub bleu: [f64; 4],
    /// Fraction of pairs whose decoded last word equals the reference last word.
    pub last_word_accuracy: f64,
    pub exact_match: f64,
}

struct Batch {
    src: Padded,
    tgt_in: Padded,
    targets: Vec<Option<usize>>,
}

fn make_batch(pairs: &[&InteractionPair]) -> Batch {
    let src = Padded::new(pairs.iter().map(|p| p.source.tokens()));
    let tgt_in = Padded::new(pairs.iter().map(|p| &p.target.tokens()[..p.target.len() - 1]));
    let mut targets = Vec::with_capacity(tgt_in.n * tgt_in.len);
    for p in pairs {
        let out = &p.target.tokens()[1..];
        targets.extend((0..tgt_in.len).map(|i| out.get(i).copied()));
    }
    Batch { src, tgt_in, targets }
}

/// Forward pass of one batch: graph, loss node, correct predictions and
/// counted positions.
fn forward_batch(model: &Translator, batch: &Batch) -> Result<(Graph<f32>, Var, usize, usize), TranslatorError> {
    let mut g = Graph::new();
    let memory = model.encode(&mut g, &batch.src)?;
    let (logits, _) = model.decode(&mut g, memory, &batch.src, &batch.tgt_in)?;
    let loss = g.cross_entropy(logits, &batch.targets)?;
    let preds = g.value(logits).argmax_rows();
    let (mut correct, mut count) = (0, 0);
    for (p, t) in preds.iter().zip(&batch.targets) {
        if let Some(t) = t {
            count += 1;
            correct += usize::from(p == t);
        }
    }
    Ok((g, loss, correct, count))
}

fn check_lengths(model: &Translator, pairs: &[InteractionPair]) -> Result<(), TranslatorError> {
    let max = model.config.max_len;
    match pairs.iter().find(|p| p.source.len() > max || p.target.len() > max) {
        Some(p) => Err(TranslatorError::Length(p.source.len().max(p.target.len()))),
        None => Ok(()),
    }
}

/// Teacher-forced cross-entropy training with Adam and a cosine schedule.
pub fn train_translator(
    model: &mut Translator,
    pairs: &[InteractionPair],
    mut on_epoch: impl FnMut(&TranslatorEpoch),
) -> Result<Vec<TranslatorEpoch>, TranslatorError> {
    if pairs.is_empty() {
        return Err(TranslatorError::Usage("training corpus is empty".into()));
    }
    check_lengths(model, pairs)?;
    let cfg = model.config.clone();
    let total = pairs.len().div_ceil(cfg.batch_size) * cfg.epochs;
    let mut adam = AdamState::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        beta2: 0.98,
        ..AdamConfig::default()
    });
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed ^ 0x7A45));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut count) = (0.0, 0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch_pairs: Vec<&InteractionPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            let batch = make_batch(&batch_pairs);
            let (g, loss_var, c, k) = forward_batch(model, &batch)?;
            let loss = g.value(loss_var).item() as f64;
            let store = model.params_mut();
            store.zero_grad();
            g.backward(loss_var, store)?;
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(store, cfg.grad_clip);
            }
            adam.config.learning_rate = cosine_lr(cfg.learning_rate, cfg.final_lr_fraction, step, total);
            adam_step(store, &mut adam)?;
            step += 1;
            loss_sum += loss * k as f64;
            correct += c;
            count += k;
        }
        let stats = TranslatorEpoch {
            epoch: epoch + 1,
            mean_loss: loss_sum / count.max(1) as f64,
            token_accuracy: correct as f64 / count.max(1) as f64,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {}/{}: loss {:.4}, token accuracy {:.3}, {:.1}s",
            stats.epoch,
            cfg.epochs,
            stats.mean_loss,
            stats.token_accuracy,
            stats.seconds
        );
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(history)
}

/// Teacher-forced next-token accuracy without updating the model.
pub fn teacher_forced_accuracy(model: &Translator, pairs: &[InteractionPair]) -> Result<f64, TranslatorError> {
    check_lengths(model, pairs)?;
    let (mut correct, mut count) = (0, 0);
    for chunk in pairs.chunks(64) {
        let refs: Vec<&InteractionPair> = chunk.iter().collect();
        let (_, _, c, k) = forward_batch(model, &make_batch(&refs))?;
        correct += c;
        count += k;
    }
    Ok(correct as f64 / count.max(1) as f64)
}

/// Greedy-decodes every source and scores it against its reference.
pub fn evaluate_translator(model: &Translator, pairs: &[InteractionPair]) -> Result<TranslatorEval, TranslatorError> {
    if pairs.is_empty() {
        return Err(TranslatorError::Usage("evaluation corpus is empty".into()));
    }
    let mut cands = Vec::with_capacity(pairs.len());
    let mut refs = Vec::with_capacity(pairs.len());
    let (mut last, mut exact) = (0, 0);
    for p in pairs {
        let out = model.translate(&p.source)?.sentence;
        last += usize::from(out.content().last() == p.target.content().last());
        exact += usize::from(out == p.target);
        cands.push(out.content().to_vec());
        refs.push(p.target.content().to_vec());
    }
    let mut scores = [0.0; 4];
    for (n, s) in scores.iter_mut().enumerate() {
        *s = bleu(&cands, &refs, n + 1)?;
    }
    Ok(TranslatorEval {
        pairs: pairs.len(),
        bleu: scores,
        last_word_accuracy: last as f64 / pairs.len() as f64,
        exact_match: exact as f64 / pairs.len() as f64,
    })
}
