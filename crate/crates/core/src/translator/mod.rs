//! Encoder-decoder Transformer from gesture sentences to action sentences.

mod bleu;
mod corpus;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tactile_nn::checkpoint::{decode_checkpoint, encode_checkpoint};
use tactile_nn::layers::{Embedding, LayerNorm, Linear, MultiHeadAttention};
use tactile_nn::{AttentionMask, Graph, NnError, ParamStore, Tensor, Var};
use thiserror::Error;

use crate::taxonomy::{ActionId, ClassId, Taxonomy, Vocabulary, BOS, EOS, PAD};

pub use bleu::{bleu, modified_precision};
pub use corpus::{
    generate_corpus, make_pair_dataset, read_corpus, write_corpus, Grammar, GrammarConfig, InteractionPair, Sentence,
    MAX_CONTENT_LEN, MAX_SENTENCE_LEN,
};
pub use train::{evaluate_translator, teacher_forced_accuracy, train_translator, TranslatorEpoch, TranslatorEval};

const CHECKPOINT_KIND: &str = "gesture-translator";

#[derive(Debug, Error)]
pub enum TranslatorError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("usage: {0}")]
    Usage(String),
    #[error("line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("{0}")]
    Token(String),
    #[error("sentence of {0} tokens exceeds the maximum of 20")]
    Length(usize),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TranslatorConfig {
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub final_lr_fraction: f64,
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            encoder_layers: 2,
            decoder_layers: 2,
            heads: 4,
            model_dim: 64,
            ff_dim: 128,
            max_len: MAX_SENTENCE_LEN,
            epochs: 80,
            batch_size: 16,
            learning_rate: 2e-3,
            final_lr_fraction: 0.05,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TranslatorConfig {
    pub fn validate(&self) -> Result<(), TranslatorError> {
        let fail = |m: &str| Err(TranslatorError::Config(m.into()));
        if self.heads == 0 || !self.model_dim.is_multiple_of(self.heads) {
            return fail("model_dim must be divisible by heads");
        }
        if !self.model_dim.is_multiple_of(2) || self.ff_dim == 0 {
            return fail("model_dim must be even and ff_dim positive");
        }
        if !(3..=MAX_SENTENCE_LEN).contains(&self.max_len) {
            return fail("max_len must lie in 3..=20");
        }
        if self.batch_size == 0 || !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return fail("batch size and learning rate must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

impl FeedForward {
    fn new(
        store: &mut ParamStore<f32>,
        name: &str,
        dim: usize,
        ff: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        Ok(Self {
            up: Linear::new(store, &format!("{name}.up"), dim, ff, true, rng)?,
            down: Linear::new(store, &format!("{name}.down"), ff, dim, true, rng)?,
        })
    }

    fn forward(&self, g: &mut Graph<f32>, s: &ParamStore<f32>, x: Var) -> Result<Var, NnError> {
        let h = self.up.forward(g, s, x)?;
        let h = g.relu(h);
        self.down.forward(g, s, h)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    ff_norm: LayerNorm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_norm: LayerNorm,
    self_attn: MultiHeadAttention,
    cross_norm: LayerNorm,
    cross_attn: MultiHeadAttention,
    ff_norm: LayerNorm,
    ff: FeedForward,
}

/// A batch of right-padded sentences.
pub(crate) struct Padded {
    pub ids: Vec<usize>,
    pub pad: Vec<bool>,
    pub n: usize,
    pub len: usize,
}

impl Padded {
    pub fn new<'a>(rows: impl IntoIterator<Item = &'a [usize]>) -> Self {
        let rows: Vec<&[usize]> = rows.into_iter().collect();
        let len = rows.iter().map(|r| r.len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(rows.len() * len);
        let mut pad = Vec::with_capacity(rows.len() * len);
        for r in &rows {
            for i in 0..len {
                ids.push(r.get(i).copied().unwrap_or(PAD));
                pad.push(i >= r.len());
            }
        }
        Self {
            ids,
            pad,
            n: rows.len(),
            len,
        }
    }
}

/// Greedy decode of one source.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub sentence: Sentence,
    /// Cross-attention weights of the last decoder layer at the final step,
    /// `heads x target_len x source_len`.
    pub cross_attention: Vec<f32>,
    pub source_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPrediction {
    pub action: ActionId,
    /// Set when the decode held no action word and the fallback was used.
    pub fallback: bool,
    pub source: Sentence,
    pub decoded: Sentence,
}

#[derive(Debug, Clone)]
pub struct Translator {
    config: TranslatorConfig,
    store: ParamStore<f32>,
    src_embed: Embedding,
    tgt_embed: Embedding,
    encoder: Vec<EncoderLayer>,
    encoder_norm: LayerNorm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: LayerNorm,
    output: Linear,
    positions: Vec<f32>,
    target_vocab: usize,
    action_vocab: Vocabulary,
}

fn sinusoid_table(len: usize, dim: usize) -> Vec<f32> {
    let mut t = vec![0.0f32; len * dim];
    for pos in 0..len {
        for i in (0..dim).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / dim as f64);
            t[pos * dim + i] = angle.sin() as f32;
            t[pos * dim + i + 1] = angle.cos() as f32;
        }
    }
    t
}

impl Translator {
    pub fn build(config: TranslatorConfig, taxonomy: &Taxonomy) -> Result<Self, TranslatorError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let (d, ff) = (config.model_dim, config.ff_dim);
        let sv = taxonomy.gesture_vocab().len();
        let tv = taxonomy.action_vocab().len();
        let s = &mut store;
        let src_embed = Embedding::new(s, "src_embed", sv, d, &mut rng)?;
        let tgt_embed = Embedding::new(s, "tgt_embed", tv, d, &mut rng)?;
        let mut encoder = Vec::new();
        for l in 0..config.encoder_layers {
            let p = format!("encoder{l}");
            encoder.push(EncoderLayer {
                attn_norm: LayerNorm::new(s, &format!("{p}.attn_norm"), d)?,
                attn: MultiHeadAttention::new(s, &format!("{p}.attn"), d, config.heads, &mut rng)?,
                ff_norm: LayerNorm::new(s, &format!("{p}.ff_norm"), d)?,
                ff: FeedForward::new(s, &format!("{p}.ff"), d, ff, &mut rng)?,
            });
        }
        let encoder_norm = LayerNorm::new(s, "encoder_norm", d)?;
        let mut decoder = Vec::new();
        for l in 0..config.decoder_layers {
            let p = format!("decoder{l}");
            decoder.push(DecoderLayer {
                self_norm: LayerNorm::new(s, &format!("{p}.self_norm"), d)?,
                self_attn: MultiHeadAttention::new(s, &format!("{p}.self_attn"), d, config.heads, &mut rng)?,
                cross_norm: LayerNorm::new(s, &format!("{p}.cross_norm"), d)?,
                cross_attn: MultiHeadAttention::new(s, &format!("{p}.cross_attn"), d, config.heads, &mut rng)?,
                ff_norm: LayerNorm::new(s, &format!("{p}.ff_norm"), d)?,
                ff: FeedForward::new(s, &format!("{p}.ff"), d, ff, &mut rng)?,
            });
        }
        let decoder_norm = LayerNorm::new(s, "decoder_norm", d)?;
        let output = Linear::new(s, "output", d, tv, true, &mut rng)?;
        let positions = sinusoid_table(config.max_len, d);
        Ok(Self {
            config,
            store,
            src_embed,
            tgt_embed,
            encoder,
            encoder_norm,
            decoder,
            decoder_norm,
            output,
            positions,
            target_vocab: tv,
            action_vocab: taxonomy.action_vocab().clone(),
        })
    }

    pub fn config(&self) -> &TranslatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    fn embed(&self, g: &mut Graph<f32>, table: &Embedding, batch: &Padded) -> Result<Var, TranslatorError> {
        if batch.len > self.config.max_len {
            return Err(TranslatorError::Length(batch.len));
        }
        let d = self.config.model_dim;
        let e = table.forward(g, &self.store, &batch.ids, &[batch.n, batch.len])?;
        let e = g.scale(e, (d as f32).sqrt());
        let mut pos = Vec::with_capacity(batch.n * batch.len * d);
        for _ in 0..batch.n {
            pos.extend_from_slice(&self.positions[..batch.len * d]);
        }
        let p = g.input(Tensor::new(vec![batch.n, batch.len, d], pos)?);
        Ok(g.add(e, p)?)
    }

    /// Encoder output, `N x Ls x D`.
    pub(crate) fn encode(&self, g: &mut Graph<f32>, src: &Padded) -> Result<Var, TranslatorError> {
        let s = &self.store;
        let mask = AttentionMask {
            causal: false,
            key_padding: Some(src.pad.clone()),
        };
        let mut x = self.embed(g, &self.src_embed, src)?;
        for layer in &self.encoder {
            let h = layer.attn_norm.forward(g, s, x)?;
            let a = layer.attn.forward(g, s, h, h, h, &mask)?;
            x = g.add(x, a.output)?;
            let h = layer.ff_norm.forward(g, s, x)?;
            let f = layer.ff.forward(g, s, h)?;
            x = g.add(x, f)?;
        }
        Ok(self.encoder_norm.forward(g, s, x)?)
    }

    /// Decoder logits `(N * Lt) x V` and the last cross-attention core.
    pub(crate) fn decode(
        &self,
        g: &mut Graph<f32>,
        memory: Var,
        src: &Padded,
        tgt: &Padded,
    ) -> Result<(Var, Option<Var>), TranslatorError> {
        let s = &self.store;
        let self_mask = AttentionMask {
            causal: true,
            key_padding: Some(tgt.pad.clone()),
        };
        let cross_mask = AttentionMask {
            causal: false,
            key_padding: Some(src.pad.clone()),
        };
        let mut x = self.embed(g, &self.tgt_embed, tgt)?;
        let mut core = None;
        for layer in &self.decoder {
            let h = layer.self_norm.forward(g, s, x)?;
            let a = layer.self_attn.forward(g, s, h, h, h, &self_mask)?;
            x = g.add(x, a.output)?;
            let h = layer.cross_norm.forward(g, s, x)?;
            let c = layer.cross_attn.forward(g, s, h, memory, memory, &cross_mask)?;
            core = Some(c.core);
            x = g.add(x, c.output)?;
            let h = layer.ff_norm.forward(g, s, x)?;
            let f = layer.ff.forward(g, s, h)?;
            x = g.add(x, f)?;
        }
        let x = self.decoder_norm.forward(g, s, x)?;
        let logits = self.output.forward(g, s, x)?;
        let logits = g.reshape(logits, vec![tgt.n * tgt.len, self.target_vocab])?;
        Ok((logits, core))
    }

    /// Greedy decoding from BOS. PAD and BOS are never emitted; the
    /// sentence is closed with EOS at the length limit.
    pub fn translate(&self, source: &Sentence) -> Result<Decoded, TranslatorError> {
        let src = Padded::new([source.tokens()]);
        let mut g = Graph::new();
        let memory = self.encode(&mut g, &src)?;
        let mut out = vec![BOS];
        let mut attention = Vec::new();
        loop {
            if out.len() == self.config.max_len - 1 {
                break;
            }
            let tgt = Padded::new([out.as_slice()]);
            let (logits, core) = self.decode(&mut g, memory, &src, &tgt)?;
            if let Some(c) = core {
                attention = g.attention_weights(c).map(<[f32]>::to_vec).unwrap_or_default();
            }
            let v = self.target_vocab;
            let row = &g.value(logits).data()[(tgt.len - 1) * v..tgt.len * v];
            let mut best = EOS;
            for (i, &x) in row.iter().enumerate() {
                if i != PAD && i != BOS && (x > row[best] || (x == row[best] && i < best)) {
                    best = i;
                }
            }
            if best == EOS {
                break;
            }
            out.push(best);
        }
        let sentence = Sentence::from_content(&out[1..], &self.action_vocab)?;
        Ok(Decoded {
            sentence,
            cross_attention: attention,
            source_len: source.len(),
        })
    }

    /// Translates the most recent (at most 18) gestures and returns the
    /// last action word, or the fallback action when there is none.
    pub fn predict_action(
        &self,
        history: &[ClassId],
        taxonomy: &Taxonomy,
    ) -> Result<ActionPrediction, TranslatorError> {
        if history.is_empty() {
            return Err(TranslatorError::Usage("empty gesture history".into()));
        }
        let recent = &history[history.len().saturating_sub(MAX_CONTENT_LEN)..];
        let ids: Vec<usize> = recent.iter().map(|&c| taxonomy.class_token_id(c)).collect();
        let source = Sentence::from_content(&ids, taxonomy.gesture_vocab())?;
        let decoded = self.translate(&source)?.sentence;
        let last = decoded.content().last().and_then(|&t| taxonomy.action_of_token(t));
        let (action, fallback) = match last {
            Some(a) => (a, false),
            None => {
                log::warn!("translation produced no action word; falling back");
                (taxonomy.fallback_action(), true)
            }
        };
        Ok(ActionPrediction {
            action,
            fallback,
            source,
            decoded,
        })
    }

    pub fn to_bytes(&self, taxonomy: &Taxonomy) -> Vec<u8> {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            taxonomy: taxonomy.vocabulary_fingerprint(),
            config: self.config.clone(),
        };
        encode_checkpoint(&self.store, &toml::to_string(&meta).expect("meta serializes"))
    }

    pub fn save(&self, path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<(), TranslatorError> {
        std::fs::write(path, self.to_bytes(taxonomy))?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8], taxonomy: &Taxonomy) -> Result<Self, TranslatorError> {
        let ckpt = decode_checkpoint(bytes)?;
        let meta: CheckpointMeta =
            toml::from_str(&ckpt.meta).map_err(|e| TranslatorError::Checkpoint(format!("metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(TranslatorError::Checkpoint(format!(
                "not a translator checkpoint ({})",
                meta.kind
            )));
        }
        if meta.taxonomy != taxonomy.vocabulary_fingerprint() {
            return Err(TranslatorError::Checkpoint("trained for a different taxonomy".into()));
        }
        let mut model = Self::build(meta.config, taxonomy)?;
        ckpt.load_into(&mut model.store)?;
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>, taxonomy: &Taxonomy) -> Result<Self, TranslatorError> {
        Self::from_bytes(&std::fs::read(path)?, taxonomy)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    taxonomy: u32,
    config: TranslatorConfig,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TranslatorConfig {
        TranslatorConfig {
            model_dim: 16,
            ff_dim: 32,
            heads: 2,
            ..TranslatorConfig::default()
        }
    }

    fn source(t: &Taxonomy, words: &[&str]) -> Sentence {
        Sentence::from_words(words, t.gesture_vocab()).unwrap()
    }

    #[test]
    fn heads_must_divide_dim() {
        let t = Taxonomy::load_default();
        let cfg = TranslatorConfig { heads: 3, ..small() };
        assert!(matches!(Translator::build(cfg, &t), Err(TranslatorError::Config(_))));
    }

    #[test]
    fn decoding_contract() {
        let t = Taxonomy::load_default();
        for seed in 0..4 {
            let m = Translator::build(TranslatorConfig { seed, ..small() }, &t).unwrap();
            let s = source(&t, &["stroke_head", "scratch_chin"]);
            let a = m.translate(&s).unwrap();
            assert_eq!(a.sentence.tokens()[0], BOS);
            assert_eq!(*a.sentence.tokens().last().unwrap(), EOS);
            assert!(a.sentence.len() <= MAX_SENTENCE_LEN);
            assert_eq!(a, m.translate(&s).unwrap());
        }
    }

    #[test]
    fn decoder_is_causal() {
        let t = Taxonomy::load_default();
        let m = Translator::build(small(), &t).unwrap();
        let src = Padded::new([source(&t, &["rub_neck", "poke_hips", "tickle_chin"]).tokens()]);
        let logits_for = |tgt: &[usize]| {
            let mut g = Graph::new();
            let mem = m.encode(&mut g, &src).unwrap();
            let tgt = Padded::new([tgt]);
            let (l, _) = m.decode(&mut g, mem, &src, &tgt).unwrap();
            g.value(l).data().to_vec()
        };
        let v = t.action_vocab().len();
        let a = logits_for(&[BOS, 5, 9, 12]);
        let b = logits_for(&[BOS, 5, 30, 7]);
        assert_eq!(a[..2 * v], b[..2 * v]);
        assert_ne!(a[2 * v..3 * v], b[2 * v..3 * v]);
    }

    #[test]
    fn immediate_eos_falls_back() {
        let t = Taxonomy::load_default();
        let mut m = Translator::build(small(), &t).unwrap();
        let bias = m.store.find("output.bias").unwrap();
        m.store.get_mut(bias).tensor.data_mut()[EOS] = 1e4;
        let p = m.predict_action(&[ClassId(5)], &t).unwrap();
        assert!(p.fallback);
        assert!(p.decoded.is_empty());
        assert_eq!(p.action, t.fallback_action());
        assert!(m.predict_action(&[], &t).is_err());
    }

    #[test]
    fn history_truncated_to_18() {
        let t = Taxonomy::load_default();
        let m = Translator::build(small(), &t).unwrap();
        let history: Vec<ClassId> = (1..=25).map(ClassId).collect();
        let p = m.predict_action(&history, &t).unwrap();
        assert_eq!(p.source.len(), MAX_SENTENCE_LEN);
        assert_eq!(p.source.content()[0], t.class_token_id(ClassId(8)));
        let d = m.translate(&p.source).unwrap();
        let steps = d.sentence.len() - 1;
        let lq = steps.min(m.config.max_len - 2);
        assert_eq!(d.cross_attention.len(), 2 * lq * 20);
    }

    #[test]
    fn checkpoint_round_trip() {
        let t = Taxonomy::load_default();
        let m = Translator::build(small(), &t).unwrap();
        let back = Translator::from_bytes(&m.to_bytes(&t), &t).unwrap();
        assert_eq!(back.params(), m.params());
        let s = source(&t, &["squeeze_left_forelimb"]);
        assert_eq!(back.translate(&s).unwrap(), m.translate(&s).unwrap());
    }

    #[test]
    fn zero_epochs_keeps_initialization() {
        let t = Taxonomy::load_default();
        let mut m = Translator::build(TranslatorConfig { epochs: 0, ..small() }, &t).unwrap();
        let before = m.params().clone();
        let pairs = generate_corpus(
            &t,
            &GrammarConfig {
                pairs: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(train_translator(&mut m, &pairs, |_| {}).unwrap().is_empty());
        assert_eq!(m.params(), &before);
        assert!(train_translator(&mut m, &[], |_| {}).is_err());
    }
}
