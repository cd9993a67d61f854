//! Loss, Adam, warmup schedule and the training loop.

use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{cross_entropy_forward, Gradients, ParamId, ParamStore};
use crate::decode::{beam_search, greedy, BeamConfig, ModelScorer};
use crate::kg::KnowledgeGraph;
use crate::linearize::{encode_target, Vocabulary};
use crate::metrics::{bleu, entity_accuracy, EvalReport, MetricError};
use crate::model::{EncodedGraph, Model, ModelError};
use crate::tensor::Matrix;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("every target position is padding")]
    AllPadTarget,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Decoder used when scoring a split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DecodeStrategy {
    Greedy { max_len: usize },
    Beam(BeamConfig),
}

impl DecodeStrategy {
    pub fn max_len(&self) -> usize {
        match self {
            DecodeStrategy::Greedy { max_len } => *max_len,
            DecodeStrategy::Beam(b) => b.max_len,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub warmup_steps: u64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Evaluate every this many optimizer steps (and after the last step).
    pub eval_period: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub data_proportion: f64,
    pub max_target_len: usize,
    pub decode: DecodeStrategy,
    /// Stop once validation BLEU reaches this value.
    pub target_bleu: Option<f64>,
    /// Worker threads for per-example gradients; `None` uses rayon's default.
    pub threads: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-5,
            warmup_steps: 1600,
            batch_size: 16,
            epochs: 10,
            eval_period: 500,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 42,
            data_proportion: 1.0,
            max_target_len: 512,
            decode: DecodeStrategy::Beam(BeamConfig::default()),
            target_bleu: None,
            threads: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 || self.epochs == 0 || self.eval_period == 0 {
            return bad("batch_size, epochs and eval_period must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if !(self.data_proportion > 0.0 && self.data_proportion <= 1.0) {
            return bad("data_proportion must lie in (0, 1]");
        }
        if self.max_target_len < 2 || self.decode.max_len() == 0 {
            return bad("length limits too small");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        Ok(())
    }
}

/// Mean token NLL over non-pad positions and its gradient w.r.t. `logits`.
pub fn cross_entropy_loss(logits: &Matrix, targets: &[u32], pad: u32) -> Result<(f64, Matrix), TrainError> {
    if targets.iter().all(|&t| t == pad) {
        return Err(TrainError::AllPadTarget);
    }
    let (loss, mut grad, count) = cross_entropy_forward(logits, targets, pad);
    let inv = 1.0 / count as f64;
    for (i, &y) in targets.iter().enumerate() {
        let row = grad.row_mut(i);
        if y == pad {
            row.fill(0.0);
            continue;
        }
        row[y as usize] -= 1.0;
        row.iter_mut().for_each(|g| *g *= inv);
    }
    Ok((loss, grad))
}

/// Linear warmup from 0 to the base rate over `warmup_steps`, then constant.
pub fn lr_at(step: u64, cfg: &TrainConfig) -> f64 {
    if cfg.warmup_steps == 0 || step >= cfg.warmup_steps {
        cfg.learning_rate
    } else {
        cfg.learning_rate * step as f64 / cfg.warmup_steps as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<&TrainConfig> for AdamHyper {
    fn from(c: &TrainConfig) -> Self {
        Self {
            beta1: c.beta1,
            beta2: c.beta2,
            epsilon: c.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, p)| Matrix::zeros(p.rows, p.cols))
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Entries listed in `frozen` are skipped
/// entirely: neither the parameter nor its moments change.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &Gradients,
    state: &mut OptimizerState,
    lr: f64,
    hp: AdamHyper,
    frozen: &[(ParamId, Range<usize>)],
) {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let ids: Vec<ParamId> = params.ids().collect();
    for id in ids {
        let Some(g) = grads.get(id) else { continue };
        let skip: Vec<&Range<usize>> = frozen.iter().filter(|(f, _)| *f == id).map(|(_, r)| r).collect();
        let p = params.get_mut(id);
        let (m, v) = (&mut state.m[id.0], &mut state.v[id.0]);
        for k in 0..p.data.len() {
            if skip.iter().any(|r| r.contains(&k)) {
                continue;
            }
            let gk = g.data[k];
            m.data[k] = hp.beta1 * m.data[k] + (1.0 - hp.beta1) * gk;
            v.data[k] = hp.beta2 * v.data[k] + (1.0 - hp.beta2) * gk * gk;
            let mh = m.data[k] / bc1;
            let vh = v.data[k] / bc2;
            p.data[k] -= lr * mh / (vh.sqrt() + hp.epsilon);
        }
    }
}

/// Seeded shuffle, then the first `ceil(proportion · N)` items (at least one).
pub fn few_shot_subsample<T: Clone>(items: &[T], proportion: f64, seed: u64) -> Vec<T> {
    if items.is_empty() {
        return Vec::new();
    }
    let n = ((proportion * items.len() as f64).ceil() as usize).clamp(1, items.len());
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order[..n].iter().map(|&i| items[i].clone()).collect()
}

/// A graph-text pair ready for the model.
#[derive(Debug, Clone)]
pub struct Example {
    pub id: String,
    pub kg: KnowledgeGraph,
    pub references: Vec<String>,
    pub graph: EncodedGraph,
    /// First reference encoded as `BOS ... EOS`.
    pub target: Vec<u32>,
}

impl Example {
    pub fn new(
        id: impl Into<String>,
        kg: KnowledgeGraph,
        references: Vec<String>,
        model: &Model,
        vocab: &Vocabulary,
        max_target_len: usize,
    ) -> Result<Self, ModelError> {
        let graph = model.prepare(&kg, vocab)?;
        let target = encode_target(references.first().map_or("", String::as_str), vocab, max_target_len);
        Ok(Self {
            id: id.into(),
            kg,
            references,
            graph,
            target,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub split: String,
    pub bleu: Option<f64>,
    pub loss: Option<f64>,
}

impl MetricRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub example_id: String,
    pub hypothesis: String,
    pub reference: String,
    pub entity_accuracy: Option<f64>,
}

pub fn decode_example(model: &Model, example: &Example, strategy: &DecodeStrategy) -> Result<Vec<u32>, ModelError> {
    let (states, _) = model.encode(&example.graph)?;
    let scorer = ModelScorer {
        model,
        encoder_states: states,
    };
    let hyp = match strategy {
        DecodeStrategy::Greedy { max_len } => greedy(&scorer, *max_len, 0.0)?,
        DecodeStrategy::Beam(cfg) => beam_search(&scorer, cfg)?,
    };
    Ok(hyp.content().to_vec())
}

/// Decodes every example (in parallel, order preserved) and scores the split.
pub fn evaluate(
    model: &Model,
    examples: &[Example],
    vocab: &Vocabulary,
    strategy: &DecodeStrategy,
) -> Result<(EvalReport, Vec<Prediction>), TrainError> {
    let hyps: Vec<String> = examples
        .par_iter()
        .map(|ex| decode_example(model, ex, strategy).map(|ids| vocab.decode(&ids)))
        .collect::<Result<_, _>>()?;
    let refs: Vec<Vec<&str>> = examples
        .iter()
        .map(|e| e.references.iter().map(String::as_str).collect())
        .collect();
    let score = bleu(&hyps, &refs)?;
    let preds: Vec<Prediction> = examples
        .iter()
        .zip(hyps)
        .map(|(ex, hypothesis)| {
            let reference = ex.references.first().cloned().unwrap_or_default();
            Prediction {
                example_id: ex.id.clone(),
                entity_accuracy: entity_accuracy(&ex.kg, &hypothesis, &reference),
                hypothesis,
                reference,
            }
        })
        .collect();
    let acc: Vec<Option<f64>> = preds.iter().map(|p| p.entity_accuracy).collect();
    Ok((EvalReport::new(score, &acc), preds))
}

pub fn mean_loss(model: &Model, examples: &[Example]) -> Result<f64, TrainError> {
    let losses: Vec<f64> = examples
        .par_iter()
        .map(|ex| model.loss(&ex.graph, &ex.target))
        .collect::<Result<_, _>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mean loss and mean gradient of a batch. Per-example work runs in
/// parallel; results are reduced in batch order, so the sum does not depend
/// on the thread count.
pub fn batch_gradients(model: &Model, batch: &[&Example]) -> Result<(f64, Gradients), TrainError> {
    let parts: Vec<(f64, Gradients)> = batch
        .par_iter()
        .map(|ex| model.loss_and_grads(&ex.graph, &ex.target))
        .collect::<Result<_, _>>()?;
    let mut total = Gradients::new(model.params.len());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.merge(g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub log: Vec<MetricRecord>,
    pub best_step: u64,
    pub best_bleu: f64,
    /// Parameters at the best validation BLEU.
    pub best_params: ParamStore,
    pub steps: u64,
    /// Mean training loss of each optimizer step.
    pub step_losses: Vec<f64>,
}

/// Trains `model` in place. Every `eval_period` steps (and after the final
/// step) the validation split is decoded and scored; the best-BLEU parameters
/// are kept. `on_record` sees each metric record as it is produced.
pub fn train(
    model: &mut Model,
    train_set: &[Example],
    valid_set: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    on_record: &mut (dyn FnMut(&MetricRecord) + Send),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    match cfg.threads {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| TrainError::Config(e.to_string()))?;
            pool.install(|| train_inner(model, train_set, valid_set, vocab, cfg, on_record))
        }
        None => train_inner(model, train_set, valid_set, vocab, cfg, on_record),
    }
}

fn train_inner(
    model: &mut Model,
    train_set: &[Example],
    valid_set: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    on_record: &mut (dyn FnMut(&MetricRecord) + Send),
) -> Result<TrainOutcome, TrainError> {
    let subset = few_shot_subsample(train_set, cfg.data_proportion, cfg.seed);
    if subset.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let hp = AdamHyper::from(cfg);
    let frozen = model.frozen_entries();
    let mut state = OptimizerState::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005E_ED0F_0DE5);
    let mut log = Vec::new();
    let mut step_losses = Vec::new();
    let mut best = (0u64, f64::NEG_INFINITY, model.params.clone());
    let mut window = Vec::new();
    let mut step = 0u64;
    let mut emit = |rec: MetricRecord, log: &mut Vec<MetricRecord>| {
        on_record(&rec);
        log.push(rec);
    };

    let mut order: Vec<usize> = (0..subset.len()).collect();
    'epochs: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &subset[i]).collect();
            let (loss, grads) = batch_gradients(model, &batch)?;
            step += 1;
            adam_step(&mut model.params, &grads, &mut state, lr_at(step, cfg), hp, &frozen);
            step_losses.push(loss);
            window.push(loss);

            if step.is_multiple_of(cfg.eval_period) {
                let done = eval_point(model, valid_set, vocab, cfg, step, &mut window, &mut best, &mut log, &mut emit)?;
                if done {
                    break 'epochs;
                }
            }
        }
    }
    if !step.is_multiple_of(cfg.eval_period) {
        eval_point(model, valid_set, vocab, cfg, step, &mut window, &mut best, &mut log, &mut emit)?;
    }
    Ok(TrainOutcome {
        log,
        best_step: best.0,
        best_bleu: best.1,
        best_params: best.2,
        steps: step,
        step_losses,
    })
}

/// Logs the training window and validation metrics; returns true when the
/// target BLEU is reached.
#[allow(clippy::too_many_arguments)]
fn eval_point(
    model: &Model,
    valid_set: &[Example],
    vocab: &Vocabulary,
    cfg: &TrainConfig,
    step: u64,
    window: &mut Vec<f64>,
    best: &mut (u64, f64, ParamStore),
    log: &mut Vec<MetricRecord>,
    emit: &mut dyn FnMut(MetricRecord, &mut Vec<MetricRecord>),
) -> Result<bool, TrainError> {
    let train_loss = window.iter().sum::<f64>() / window.len().max(1) as f64;
    window.clear();
    emit(
        MetricRecord {
            step,
            split: "train".into(),
            bleu: None,
            loss: Some(train_loss),
        },
        log,
    );
    if valid_set.is_empty() {
        if best.1 == f64::NEG_INFINITY || step > best.0 {
            *best = (step, f64::NEG_INFINITY, model.params.clone());
        }
        return Ok(false);
    }
    let (report, _) = evaluate(model, valid_set, vocab, &cfg.decode)?;
    let valid_loss = mean_loss(model, valid_set)?;
    emit(
        MetricRecord {
            step,
            split: "valid".into(),
            bleu: Some(report.bleu),
            loss: Some(valid_loss),
        },
        log,
    );
    if report.bleu > best.1 {
        *best = (step, report.bleu, model.params.clone());
    }
    Ok(cfg.target_bleu.is_some_and(|t| report.bleu >= t))
}
