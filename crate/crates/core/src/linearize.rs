//! Word-level vocabulary and graph linearization.
//!
//! A graph becomes `<H> head <R> relation <T> tail` for every triple in input
//! order. Each label occurrence is recorded as a half-open token span mapped to
//! its component row, so pooling and gather can move between token and
//! component representations. Separator tokens belong to no span.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use thiserror::Error;

use crate::kg::{component_index, ComponentTable, KnowledgeGraph};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const H_SEP: u32 = 4;
pub const R_SEP: u32 = 5;
pub const T_SEP: u32 = 6;

/// Surface forms of the special tokens, indexed by id.
pub const SPECIAL_TOKENS: [&str; 7] = ["<pad>", "<s>", "</s>", "<unk>", "<H>", "<R>", "<T>"];

#[derive(Debug, Error)]
pub enum VocabError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("vocabulary line {line}: expected special token `{expected}`, found `{found}`")]
    BadSpecial {
        line: usize,
        expected: &'static str,
        found: String,
    },
    #[error("vocabulary line {line}: duplicate token `{token}`")]
    Duplicate { line: usize, token: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LinearizeError {
    #[error("label `{0}` produces no tokens")]
    TokenizationEmpty(String),
}

/// Lowercased whitespace tokenization shared by labels and reference text.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn is_special(id: u32) -> bool {
        (id as usize) < SPECIAL_TOKENS.len()
    }

    pub fn encode_words(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|w| self.id(w)).collect()
    }

    /// Joins non-special tokens with single spaces. UNK is kept as `<unk>`.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut out = String::new();
        for &id in ids {
            if Self::is_special(id) && id != UNK {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(self.token(id).unwrap_or(SPECIAL_TOKENS[UNK as usize]));
        }
        out
    }

    /// One token per line; the line number (from 0) is the id.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        for t in &self.tokens {
            writeln!(w, "{t}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            let _ = writeln!(s, "{t}");
        }
        s
    }

    pub fn read_from(r: impl BufRead) -> Result<Self, VocabError> {
        let mut tokens = Vec::new();
        let mut seen = HashMap::new();
        for (line, tok) in r.lines().enumerate() {
            let tok = tok?;
            if let Some(&expected) = SPECIAL_TOKENS.get(line) {
                if tok != expected {
                    return Err(VocabError::BadSpecial {
                        line: line + 1,
                        expected,
                        found: tok,
                    });
                }
            }
            if seen.insert(tok.clone(), line).is_some() {
                return Err(VocabError::Duplicate { line: line + 1, token: tok });
            }
            tokens.push(tok);
        }
        if tokens.len() < SPECIAL_TOKENS.len() {
            return Err(VocabError::BadSpecial {
                line: tokens.len() + 1,
                expected: SPECIAL_TOKENS[tokens.len()],
                found: String::new(),
            });
        }
        Ok(Self::from_tokens(tokens))
    }
}

/// Builds a vocabulary over every label and reference of the corpus. Tokens
/// seen fewer than `min_freq` times are left out (they encode as UNK). Ids are
/// assigned in sorted token order, so corpus order does not matter.
pub fn build_vocab<'a, I, R>(corpus: I, min_freq: usize) -> Result<Vocabulary, VocabError>
where
    I: IntoIterator<Item = (&'a KnowledgeGraph, R)>,
    R: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut any = false;
    for (kg, refs) in corpus {
        any = true;
        let labels = kg
            .entities
            .iter()
            .map(|e| e.label.as_str())
            .chain(kg.relations.iter().map(|r| r.label.as_str()));
        for text in labels.chain(refs) {
            for tok in tokenize(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    if !any {
        return Err(VocabError::EmptyCorpus);
    }
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        counts
            .into_iter()
            .filter(|(tok, c)| *c >= min_freq.max(1) && !SPECIAL_TOKENS.contains(&tok.as_str()))
            .map(|(tok, _)| tok),
    );
    Ok(Vocabulary::from_tokens(tokens))
}

/// Token sequence of a graph plus the component span map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinearizedGraph {
    pub token_ids: Vec<u32>,
    /// `spans[c]` lists the half-open token ranges of component `c`.
    pub spans: Vec<Vec<(usize, usize)>>,
}

impl LinearizedGraph {
    pub fn n(&self) -> usize {
        self.token_ids.len()
    }

    pub fn num_components(&self) -> usize {
        self.spans.len()
    }

    /// Owning component of every token; `None` for separators.
    pub fn token_components(&self) -> Vec<Option<usize>> {
        let mut owner = vec![None; self.n()];
        for (c, spans) in self.spans.iter().enumerate() {
            for &(s, e) in spans {
                for slot in &mut owner[s..e] {
                    *slot = Some(c);
                }
            }
        }
        owner
    }
}

/// Linearizes `kg` (assumed validated) and returns the sequence together with
/// its component table.
pub fn linearize(kg: &KnowledgeGraph, vocab: &Vocabulary) -> Result<(LinearizedGraph, ComponentTable), LinearizeError> {
    let table = component_index(kg);
    let entity_words: Vec<Vec<u32>> = kg
        .entities
        .iter()
        .map(|e| label_ids(&e.label, vocab))
        .collect::<Result<_, _>>()?;
    let relation_words: Vec<Vec<u32>> = kg
        .relations
        .iter()
        .map(|r| label_ids(&r.label, vocab))
        .collect::<Result<_, _>>()?;

    let mut token_ids = Vec::new();
    let mut spans = vec![Vec::new(); table.len()];
    let mut push = |sep: u32, words: &[u32], component: usize, token_ids: &mut Vec<u32>| {
        token_ids.push(sep);
        let start = token_ids.len();
        token_ids.extend_from_slice(words);
        spans[component].push((start, token_ids.len()));
    };
    for (t, triple) in kg.triples.iter().enumerate() {
        let (head, tail) = table.triple_endpoints(t);
        let rel = kg.relation_index(&triple.relation).expect("validated graph");
        push(H_SEP, &entity_words[head], head, &mut token_ids);
        push(R_SEP, &relation_words[rel], table.relation_component(t), &mut token_ids);
        push(T_SEP, &entity_words[tail], tail, &mut token_ids);
    }
    Ok((LinearizedGraph { token_ids, spans }, table))
}

fn label_ids(label: &str, vocab: &Vocabulary) -> Result<Vec<u32>, LinearizeError> {
    let ids = vocab.encode_words(label);
    if ids.is_empty() {
        return Err(LinearizeError::TokenizationEmpty(label.to_string()));
    }
    Ok(ids)
}

/// `BOS tokens EOS`, truncated to at most `max_len` ids with EOS kept last.
pub fn encode_target(text: &str, vocab: &Vocabulary, max_len: usize) -> Vec<u32> {
    let max_len = max_len.max(2);
    let mut ids = Vec::with_capacity(max_len);
    ids.push(BOS);
    ids.extend(vocab.encode_words(text).into_iter().take(max_len - 2));
    ids.push(EOS);
    ids
}
