//! Corpus BLEU, a frozen-embedding sentence similarity proxy, and
//! position-wise word accuracy.

use std::collections::HashMap;
use std::hash::Hash;

use crate::corpus::PAD;
use crate::error::MetricsError;
use crate::nn::Tensor;

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// `(clipped matches, candidate n-grams)` for one sentence pair.
fn clipped<T: Eq + Hash>(cand: &[T], refr: &[T], n: usize) -> (usize, usize) {
    let rc = ngram_counts(refr, n);
    let cc = ngram_counts(cand, n);
    let matched = cc.iter().map(|(g, &c)| c.min(rc.get(g).copied().unwrap_or(0))).sum();
    (matched, cand.len().saturating_sub(n - 1))
}

fn check<T>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<(), MetricsError> {
    if !(1..=2).contains(&max_n) {
        return Err(MetricsError::BadOrder(max_n));
    }
    if candidates.len() != references.len() {
        return Err(MetricsError::LengthMismatch { candidates: candidates.len(), references: references.len() });
    }
    if candidates.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn brevity_penalty(cand_len: usize, ref_len: usize) -> f64 {
    if cand_len == 0 {
        0.0
    } else if cand_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / cand_len as f64).exp()
    }
}

/// Corpus BLEU with uniform weights over orders `1..=max_n` (1 or 2):
/// clipped counts pooled over the corpus, geometric mean of the
/// precisions, times the brevity penalty. Any zero precision gives 0.
pub fn bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<f64, MetricsError> {
    check(candidates, references, max_n)?;
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let (m, t) = candidates
            .iter()
            .zip(references)
            .map(|(c, r)| clipped(c, r, n))
            .fold((0, 0), |(a, b), (m, t)| (a + m, b + t));
        if m == 0 || t == 0 {
            return Ok(0.0);
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    Ok(brevity_penalty(c, r) * (log_sum / max_n as f64).exp())
}

/// Single-pair BLEU with add-one smoothing on every order, for diagnostics.
pub fn sentence_bleu_smoothed<T: Eq + Hash>(candidate: &[T], reference: &[T], max_n: usize) -> Result<f64, MetricsError> {
    if !(1..=2).contains(&max_n) {
        return Err(MetricsError::BadOrder(max_n));
    }
    let log_sum: f64 = (1..=max_n)
        .map(|n| {
            let (m, t) = clipped(candidate, reference, n);
            ((m + 1) as f64 / (t + 1) as f64).ln()
        })
        .sum();
    Ok(brevity_penalty(candidate.len(), reference.len()) * (log_sum / max_n as f64).exp())
}

/// Mean of [`sentence_bleu_smoothed`] over aligned pairs.
pub fn mean_sentence_bleu<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>], max_n: usize) -> Result<f64, MetricsError> {
    check(candidates, references, max_n)?;
    let mut total = 0.0;
    for (c, r) in candidates.iter().zip(references) {
        total += sentence_bleu_smoothed(c, r, max_n)?;
    }
    Ok(total / candidates.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub score: f64,
    /// True when either side had no non-pad tokens; the score is then 0.
    pub empty: bool,
}

/// Proxy for semantic similarity: cosine of the mean-pooled rows of a frozen
/// `[V×D]` embedding table, mapped to `[0, 1]` by `(1 + cos) / 2`.
/// Word order does not affect the score.
pub fn sentence_similarity(candidate: &[usize], reference: &[usize], table: &Tensor) -> Similarity {
    let (v, d) = (table.shape()[0], table.shape()[1]);
    let pool = |ids: &[usize]| {
        let mut acc = vec![0f64; d];
        let mut n = 0usize;
        for &id in ids.iter().filter(|&&i| i != PAD && i < v) {
            for (a, &x) in acc.iter_mut().zip(&table.data()[id * d..(id + 1) * d]) {
                *a += x as f64;
            }
            n += 1;
        }
        (n > 0).then(|| acc.into_iter().map(|a| a / n as f64).collect::<Vec<f64>>())
    };
    let (Some(a), Some(b)) = (pool(candidate), pool(reference)) else {
        return Similarity { score: 0.0, empty: true };
    };
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let cos = if na == 0.0 || nb == 0.0 { 0.0 } else { (dot / (na * nb)).clamp(-1.0, 1.0) };
    Similarity { score: (1.0 + cos) / 2.0, empty: false }
}

/// Position-wise matches over the reference token count, pooled over the
/// corpus. A corpus without reference tokens scores 1.
pub fn word_accuracy<T: PartialEq>(candidates: &[Vec<T>], references: &[Vec<T>]) -> f64 {
    let mut matched = 0usize;
    let mut total = 0usize;
    for (c, r) in candidates.iter().zip(references) {
        matched += c.iter().zip(r).filter(|(a, b)| a == b).count();
        total += r.len();
    }
    if total == 0 {
        1.0
    } else {
        matched as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub bleu1: f64,
    pub bleu2: f64,
    /// Mean of [`sentence_similarity`] over pairs.
    pub sentence_similarity_proxy: f64,
    pub word_accuracy: f64,
    pub sentences: usize,
    pub tokens: usize,
}

impl MetricsReport {
    pub fn compute(candidates: &[Vec<usize>], references: &[Vec<usize>], table: &Tensor) -> Result<Self, MetricsError> {
        let bleu1 = bleu(candidates, references, 1)?;
        let bleu2 = bleu(candidates, references, 2)?;
        let sim: f64 = candidates.iter().zip(references).map(|(c, r)| sentence_similarity(c, r, table).score).sum();
        Ok(Self {
            bleu1,
            bleu2,
            sentence_similarity_proxy: sim / candidates.len() as f64,
            word_accuracy: word_accuracy(candidates, references),
            sentences: references.len(),
            tokens: references.iter().map(Vec::len).sum(),
        })
    }
}
