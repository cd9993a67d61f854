//! Greedy and beam-search decoding.
//!
//! Hypotheses are scored with a GNMT-style length normalization
//! `log p / ((5 + len) / 6)^alpha`, where `len` counts generated tokens
//! including EOS. Ties are broken toward the lexicographically smaller token
//! sequence.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::linearize::{BOS, EOS};
use crate::model::{Model, ModelError};
use crate::tensor::Matrix;

/// Anything that yields next-token log-probabilities for a prefix.
pub trait StepScorer {
    /// `prefix` starts with BOS.
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, ModelError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    pub max_len: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam_size: 5,
            length_penalty: 1.0,
            max_len: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, without BOS, ending in EOS when finished.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated tokens without the trailing EOS.
    pub fn content(&self) -> &[u32] {
        match self.tokens.last() {
            Some(&EOS) => &self.tokens[..self.tokens.len() - 1],
            _ => &self.tokens,
        }
    }
}

pub fn length_normalizer(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

pub fn normalized_score(log_prob: f64, len: usize, alpha: f64) -> f64 {
    log_prob / length_normalizer(len, alpha)
}

/// Descending score, then ascending token sequence.
fn rank(a_score: f64, a_tokens: &[u32], b_score: f64, b_tokens: &[u32]) -> Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_tokens.cmp(b_tokens))
}

fn best_of(hyps: Vec<Hypothesis>) -> Option<Hypothesis> {
    hyps.into_iter()
        .min_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens))
}

pub fn beam_search<S: StepScorer + ?Sized>(scorer: &S, cfg: &BeamConfig) -> Result<Hypothesis, ModelError> {
    let beam = cfg.beam_size.max(1);
    let max_len = cfg.max_len.max(1);
    let alpha = cfg.length_penalty;

    let mut live: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let mut prefix = Vec::with_capacity(max_len + 1);

    for _ in 0..max_len {
        let mut candidates: Vec<(Vec<u32>, f64)> = Vec::new();
        for (tokens, lp) in &live {
            prefix.clear();
            prefix.push(BOS);
            prefix.extend_from_slice(tokens);
            let scores = scorer.log_probs(&prefix)?;
            // only the top `beam` continuations of a beam can survive pruning
            let mut order: Vec<usize> = (0..scores.len()).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(beam) {
                let mut next = tokens.clone();
                next.push(tok as u32);
                candidates.push((next, lp + scores[tok]));
            }
        }
        candidates.sort_by(|a, b| rank(a.1, &a.0, b.1, &b.0));
        candidates.truncate(beam);

        live.clear();
        for (tokens, lp) in candidates {
            if tokens.last() == Some(&EOS) {
                let score = normalized_score(lp, tokens.len(), alpha);
                finished.push(Hypothesis {
                    tokens,
                    log_prob: lp,
                    score,
                    finished: true,
                });
            } else {
                live.push((tokens, lp));
            }
        }
        if live.is_empty() {
            break;
        }
        // Live log-probabilities only decrease and the normalizer is largest
        // at max_len, so lp / normalizer(max_len) bounds any live extension.
        if let Some(best) = best_of(finished.clone()) {
            let bound = live
                .iter()
                .map(|(_, lp)| lp / length_normalizer(max_len, alpha))
                .fold(f64::NEG_INFINITY, f64::max);
            if alpha >= 0.0 && best.score > bound {
                break;
            }
        }
    }
    if let Some(best) = best_of(finished) {
        return Ok(best);
    }
    let unfinished = live
        .into_iter()
        .map(|(tokens, lp)| Hypothesis {
            score: normalized_score(lp, tokens.len(), alpha),
            tokens,
            log_prob: lp,
            finished: false,
        })
        .collect();
    Ok(best_of(unfinished).expect("beam is never empty"))
}

/// Picks the argmax token each step (lowest id on ties).
pub fn greedy<S: StepScorer + ?Sized>(scorer: &S, max_len: usize, alpha: f64) -> Result<Hypothesis, ModelError> {
    let mut tokens = Vec::new();
    let mut lp = 0.0;
    let mut prefix = vec![BOS];
    for _ in 0..max_len.max(1) {
        let scores = scorer.log_probs(&prefix)?;
        let (tok, s) = scores
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &s)| if s > best.1 { (i, s) } else { best });
        tokens.push(tok as u32);
        prefix.push(tok as u32);
        lp += s;
        if tok as u32 == EOS {
            break;
        }
    }
    let finished = tokens.last() == Some(&EOS);
    Ok(Hypothesis {
        score: normalized_score(lp, tokens.len(), alpha),
        tokens,
        log_prob: lp,
        finished,
    })
}

/// Scores prefixes with a model against fixed encoder states.
pub struct ModelScorer<'m> {
    pub model: &'m Model,
    pub encoder_states: Matrix,
}

impl StepScorer for ModelScorer<'_> {
    fn log_probs(&self, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        self.model.next_log_probs(&self.encoder_states, prefix)
    }
}
