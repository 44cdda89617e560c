use std::collections::HashMap;
use std::hash::Hash;

use super::TranslatorError;

/// Clipped n-gram matches and candidate n-gram count summed over a corpus.
pub fn modified_precision<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], n: usize) -> (usize, usize) {
    let (mut matched, mut total) = (0, 0);
    for (c, r) in candidates.iter().zip(references) {
        let cand = ngram_counts(c, n);
        let refs = ngram_counts(r, n);
        for (g, &k) in &cand {
            matched += k.min(refs.get(g).copied().unwrap_or(0));
            total += k;
        }
    }
    (matched, total)
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Corpus BLEU with uniform weights over `1..=max_n` and the brevity
/// penalty `exp(1 - r/c)` when the candidates are shorter. Inputs must
/// already exclude special tokens. An empty candidate corpus scores 0.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<f64, TranslatorError> {
    if candidates.is_empty() || references.is_empty() {
        return Err(TranslatorError::Usage("BLEU of an empty corpus".into()));
    }
    if candidates.len() != references.len() {
        return Err(TranslatorError::Usage(format!(
            "{} candidates for {} references",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(TranslatorError::Usage("max_n must be at least 1".into()));
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = modified_precision(candidates, references, n);
        if m == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok(bp * (log_sum / max_n as f64).exp())
}
