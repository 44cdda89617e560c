use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TranslatorError;
use crate::sim::{mix, Fraction};
use crate::taxonomy::{Taxonomy, Vocabulary, BOS, EOS};

/// Longest sentence, counting BOS and EOS.
pub const MAX_SENTENCE_LEN: usize = 20;
/// Longest run of content words that fits a sentence.
pub const MAX_CONTENT_LEN: usize = MAX_SENTENCE_LEN - 2;

/// `BOS word* EOS` over one vocabulary, as token ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Sentence {
    tokens: Vec<usize>,
}

impl Sentence {
    /// Wraps content token ids in BOS/EOS, checking them against `vocab`.
    pub fn from_content(content: &[usize], vocab: &Vocabulary) -> Result<Self, TranslatorError> {
        if content.len() > MAX_CONTENT_LEN {
            return Err(TranslatorError::Length(content.len() + 2));
        }
        if let Some(&bad) = content.iter().find(|&&t| Vocabulary::is_special(t) || t >= vocab.len()) {
            return Err(TranslatorError::Token(format!("token id {bad} is not a content word")));
        }
        let mut tokens = Vec::with_capacity(content.len() + 2);
        tokens.push(BOS);
        tokens.extend_from_slice(content);
        tokens.push(EOS);
        Ok(Self { tokens })
    }

    pub fn from_words<S: AsRef<str>>(words: &[S], vocab: &Vocabulary) -> Result<Self, TranslatorError> {
        let ids = words
            .iter()
            .map(|w| {
                vocab
                    .encode(w.as_ref())
                    .map_err(|e| TranslatorError::Token(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::from_content(&ids, vocab)
    }

    /// Full token list, BOS through EOS.
    pub fn tokens(&self) -> &[usize] {
        &self.tokens
    }

    pub fn content(&self) -> &[usize] {
        &self.tokens[1..self.tokens.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.content().is_empty()
    }

    pub fn words<'v>(&self, vocab: &'v Vocabulary) -> Vec<&'v str> {
        self.content()
            .iter()
            .map(|&t| vocab.decode(t).expect("validated token"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InteractionPair {
    pub source: Sentence,
    pub target: Sentence,
}

/// Reads `source words<TAB>target words` lines. Blank lines and lines
/// starting with `#` are skipped. Every line is validated before returning.
pub fn read_corpus(reader: impl BufRead, taxonomy: &Taxonomy) -> Result<Vec<InteractionPair>, TranslatorError> {
    let mut pairs = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let at = |e: TranslatorError| TranslatorError::Corpus {
            line: i + 1,
            message: e.to_string(),
        };
        let trimmed = line.trim_end_matches('\r');
        if trimmed.trim().is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (src, tgt) = trimmed.split_once('\t').ok_or_else(|| TranslatorError::Corpus {
            line: i + 1,
            message: "expected a tab between source and target".into(),
        })?;
        let src: Vec<&str> = src.split_whitespace().collect();
        let tgt: Vec<&str> = tgt.split_whitespace().collect();
        let source = Sentence::from_words(&src, taxonomy.gesture_vocab()).map_err(at)?;
        let target = Sentence::from_words(&tgt, taxonomy.action_vocab()).map_err(at)?;
        pairs.push(InteractionPair { source, target });
    }
    Ok(pairs)
}

pub fn write_corpus(mut w: impl Write, pairs: &[InteractionPair], taxonomy: &Taxonomy) -> std::io::Result<()> {
    for p in pairs {
        writeln!(
            w,
            "{}\t{}",
            p.source.words(taxonomy.gesture_vocab()).join(" "),
            p.target.words(taxonomy.action_vocab()).join(" ")
        )?;
    }
    Ok(())
}

/// Deterministic split keeping `floor(n * fraction)` pairs for training.
pub fn make_pair_dataset(
    pairs: &[InteractionPair],
    train_fraction: Fraction,
    seed: u64,
) -> (Vec<InteractionPair>, Vec<InteractionPair>) {
    let mut idx: Vec<usize> = (0..pairs.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(mix(seed ^ 0xC0_4B05)));
    let k = train_fraction.of(pairs.len());
    let pick = |ids: &[usize]| ids.iter().map(|&i| pairs[i].clone()).collect();
    (pick(&idx[..k]), pick(&idx[k..]))
}

/// Parameters of the synthetic interaction grammar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrammarConfig {
    pub pairs: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Fraction of gestures that also have a secondary action, chosen 20% of the time.
    pub noise: f64,
    pub seed: u64,
}

impl Default for GrammarConfig {
    fn default() -> Self {
        Self {
            pairs: 1212,
            min_len: 1,
            max_len: 12,
            noise: 0.0,
            seed: 0,
        }
    }
}

/// Seeded gesture-to-action lookup behind the synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Grammar {
    /// Gesture token id -> (primary, optional secondary) action token id.
    table: Vec<Option<(usize, Option<usize>)>>,
    sources: Vec<usize>,
}

impl Grammar {
    pub fn new(taxonomy: &Taxonomy, config: &GrammarConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed ^ 0x6EA2));
        let actions: Vec<usize> = (0..taxonomy.action_vocab().content_tokens().len())
            .map(|i| i + 3)
            .collect();
        let none = taxonomy.class_token_id(taxonomy.none_class());
        let mut table = vec![None; taxonomy.gesture_vocab().len()];
        let mut sources = Vec::new();
        for c in taxonomy.classes() {
            let tok = taxonomy.class_token_id(c.id);
            if tok == none {
                continue;
            }
            let primary = *actions.choose(&mut rng).expect("action vocabulary is non-empty");
            let secondary = rng.gen_bool(config.noise.clamp(0.0, 1.0)).then(|| loop {
                let a = *actions.choose(&mut rng).expect("non-empty");
                if a != primary || actions.len() == 1 {
                    break a;
                }
            });
            table[tok] = Some((primary, secondary));
            sources.push(tok);
        }
        Self { table, sources }
    }

    /// Primary action token of a gesture token.
    pub fn primary(&self, gesture_token: usize) -> Option<usize> {
        self.table.get(gesture_token).copied().flatten().map(|(p, _)| p)
    }

    /// Gesture tokens that appear in generated sources (every class but "none").
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    fn react(&self, gesture: usize, rng: &mut impl Rng) -> usize {
        let (p, s) = self.table[gesture].expect("sampled from sources");
        match s {
            Some(s) if rng.gen_bool(0.2) => s,
            _ => p,
        }
    }
}

/// Pairs whose target reacts to each source gesture in turn.
pub fn generate_corpus(taxonomy: &Taxonomy, config: &GrammarConfig) -> Result<Vec<InteractionPair>, TranslatorError> {
    if config.min_len == 0 || config.min_len > config.max_len || config.max_len > MAX_CONTENT_LEN {
        return Err(TranslatorError::Config(format!(
            "sentence lengths must satisfy 1 <= min_len <= max_len <= {MAX_CONTENT_LEN}"
        )));
    }
    let grammar = Grammar::new(taxonomy, config);
    let mut rng = ChaCha8Rng::seed_from_u64(mix(config.seed ^ 0xC0_2F05));
    let mut pairs = Vec::with_capacity(config.pairs);
    for _ in 0..config.pairs {
        let len = rng.gen_range(config.min_len..=config.max_len);
        let src: Vec<usize> = (0..len)
            .map(|_| *grammar.sources().choose(&mut rng).expect("non-empty"))
            .collect();
        let tgt: Vec<usize> = src.iter().map(|&g| grammar.react(g, &mut rng)).collect();
        pairs.push(InteractionPair {
            source: Sentence::from_content(&src, taxonomy.gesture_vocab())?,
            target: Sentence::from_content(&tgt, taxonomy.action_vocab())?,
        });
    }
    Ok(pairs)
}
