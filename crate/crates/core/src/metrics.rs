//! Corpus BLEU-4 and entity accuracy.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::KnowledgeGraph;
use crate::linearize::tokenize;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("no hypotheses to score")]
    EmptyInput,
    #[error("{hypotheses} hypotheses but {references} reference sets")]
    LengthMismatch { hypotheses: usize, references: usize },
    #[error("hypothesis {0} has no references")]
    NoReference(usize),
}

/// Sufficient statistics of corpus BLEU.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

impl BleuStats {
    /// Adds one segment. Counts are clipped by the maximum count over the
    /// references; the reference length is the closest one (shorter on ties).
    pub fn add(&mut self, hyp: &[String], refs: &[Vec<String>]) {
        self.hyp_len += hyp.len();
        let closest = refs
            .iter()
            .map(Vec::len)
            .min_by_key(|&l| (l.abs_diff(hyp.len()), l))
            .unwrap_or(0);
        self.ref_len += closest;
        for n in 1..=MAX_ORDER {
            let hyp_counts = ngram_counts(hyp, n);
            let mut max_ref: HashMap<&[String], usize> = HashMap::new();
            for r in refs {
                for (g, c) in ngram_counts(r, n) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            self.matches[n - 1] += hyp_counts
                .iter()
                .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
                .sum::<usize>();
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1);
        }
    }

    /// BLEU in `[0, 100]`. Unigram precision is never smoothed; when some
    /// higher order has no matches (short corpora), orders 2..4 use add-one
    /// smoothing `(m + 1) / (t + 1)`.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 || self.matches[0] == 0 {
            return 0.0;
        }
        let smooth = self.matches[1..].contains(&0);
        let mut log_sum = (self.matches[0] as f64 / self.totals[0] as f64).ln();
        for n in 1..MAX_ORDER {
            let (m, t) = (self.matches[n] as f64, self.totals[n] as f64);
            let p = if smooth { (m + 1.0) / (t + 1.0) } else { m / t };
            log_sum += p.ln();
        }
        let bp = if self.hyp_len > self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        (100.0 * bp * (log_sum / MAX_ORDER as f64).exp()).clamp(0.0, 100.0)
    }
}

/// Corpus BLEU-4 over tokenized segments; each hypothesis may have several
/// references.
pub fn bleu_tokens(hypotheses: &[Vec<String>], references: &[Vec<Vec<String>>]) -> Result<f64, MetricError> {
    if hypotheses.is_empty() {
        return Err(MetricError::EmptyInput);
    }
    if hypotheses.len() != references.len() {
        return Err(MetricError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut stats = BleuStats::default();
    for (i, (h, r)) in hypotheses.iter().zip(references).enumerate() {
        if r.is_empty() {
            return Err(MetricError::NoReference(i));
        }
        stats.add(h, r);
    }
    Ok(stats.score())
}

/// Corpus BLEU-4 over raw strings, tokenized like the rest of the pipeline.
pub fn bleu<S: AsRef<str>, R: AsRef<str>>(hypotheses: &[S], references: &[Vec<R>]) -> Result<f64, MetricError> {
    let hyps: Vec<Vec<String>> = hypotheses.iter().map(|h| tokenize(h.as_ref())).collect();
    let refs: Vec<Vec<Vec<String>>> = references
        .iter()
        .map(|rs| rs.iter().map(|r| tokenize(r.as_ref())).collect())
        .collect();
    bleu_tokens(&hyps, &refs)
}

fn contains_run(haystack: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Number of KG entities whose full lowercased label occurs as a contiguous
/// token run in `text`.
pub fn entities_mentioned(kg: &KnowledgeGraph, text: &str) -> usize {
    let tokens = tokenize(text);
    kg.entities
        .iter()
        .filter(|e| contains_run(&tokens, &tokenize(&e.label)))
        .count()
}

/// `100 · mentioned(hypothesis) / mentioned(reference)`, or `None` when the
/// reference mentions no entity. Not clipped at 100.
pub fn entity_accuracy(kg: &KnowledgeGraph, hypothesis: &str, reference: &str) -> Option<f64> {
    let denom = entities_mentioned(kg, reference);
    if denom == 0 {
        return None;
    }
    Some(100.0 * entities_mentioned(kg, hypothesis) as f64 / denom as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu: f64,
    /// Mean over examples whose accuracy is defined.
    pub entity_accuracy: Option<f64>,
    pub entity_accuracy_defined: usize,
    pub examples: usize,
}

impl EvalReport {
    pub fn new(bleu: f64, per_example: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = per_example.iter().flatten().copied().collect();
        let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        Self {
            bleu,
            entity_accuracy: mean,
            entity_accuracy_defined: defined.len(),
            examples: per_example.len(),
        }
    }
}
