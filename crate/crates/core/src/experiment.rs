//! Run configuration and experiment orchestration.
//!
//! Every run writes a self-describing directory:
//!
//! ```text
//! config.json        {"version", "seed", "config"} snapshot
//! vocab.txt          one token per line, id = line index
//! metrics.jsonl      {"step","split","bleu","loss"} per evaluation point
//! best.ckpt          parameters with the best validation BLEU
//! predictions.jsonl  {"example_id","hypothesis","reference","entity_accuracy"}
//! report.json        EvalReport of the best checkpoint on the test split
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::dataset::{load_dataset, DatasetError, Pair};
use crate::kg::SlotBudget;
use crate::linearize::{build_vocab, VocabError, Vocabulary};
use crate::metrics::{bleu, EvalReport, MetricError};
use crate::model::{Model, ModelConfig, ModelError};
use crate::topology::{MaskScheme, TopologyError};
use crate::train::{evaluate, train, DecodeStrategy, Example, MetricRecord, Prediction, TrainConfig, TrainError};

pub const OUTPUT_ROOT_ENV: &str = "GAP_OUTPUT_ROOT";
pub const FEW_SHOT_PROPORTIONS: [f64; 4] = [0.005, 0.01, 0.05, 0.1];

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid run configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Dataset { path: PathBuf, source: DatasetError },
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// One of `er_er`, `er_e`, `er_none`, `e_e`.
    pub scheme: String,
    pub type_encoding: bool,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub n_layers: usize,
    pub max_positions: usize,
    pub num_nodes: usize,
    pub num_relations: usize,
    pub min_freq: usize,
    pub train: TrainConfig,
    pub train_path: Option<PathBuf>,
    /// Defaults to the training split.
    pub valid_path: Option<PathBuf>,
    /// Defaults to the validation split.
    pub test_path: Option<PathBuf>,
    /// Reuse a vocabulary instead of building one from the training split.
    pub vocab_path: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let slots = SlotBudget::default();
        Self {
            scheme: MaskScheme::ER_E.name(),
            type_encoding: false,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            n_layers: 2,
            max_positions: 512,
            num_nodes: slots.num_nodes,
            num_relations: slots.num_relations,
            min_freq: 1,
            train: TrainConfig::default(),
            train_path: None,
            valid_path: None,
            test_path: None,
            vocab_path: None,
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl RunConfig {
    pub fn mask_scheme(&self) -> Result<MaskScheme, ExperimentError> {
        let scheme = self.scheme.parse::<MaskScheme>()?;
        if !MaskScheme::NAMED.contains(&scheme) {
            return Err(ExperimentError::Config(format!(
                "scheme `{}` is not one of er_er, er_e, er_none, e_e",
                self.scheme
            )));
        }
        Ok(scheme)
    }

    pub fn slots(&self) -> SlotBudget {
        SlotBudget::new(self.num_nodes, self.num_relations)
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig, ExperimentError> {
        let mut cfg = ModelConfig::new(vocab_size);
        cfg.d_model = self.d_model;
        cfg.n_heads = self.n_heads;
        cfg.d_ff = self.d_ff;
        cfg.n_layers = self.n_layers;
        cfg.n_dec_layers = self.n_layers;
        cfg.max_positions = self.max_positions;
        cfg.slots = self.slots();
        cfg.scheme = self.mask_scheme()?;
        cfg.type_encoding = self.type_encoding;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        self.mask_scheme()?;
        self.train.validate()?;
        if self.min_freq == 0 {
            return Err(ExperimentError::Config("min_freq must be positive".into()));
        }
        Ok(())
    }
}

/// Resolves `dir` against `$GAP_OUTPUT_ROOT` when it is relative and the
/// variable is set.
pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => Path::new(&root).join(dir),
        _ => dir.to_path_buf(),
    }
}

/// Train, validation and test splits of one run.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: Vec<Pair>,
    pub valid: Vec<Pair>,
    pub test: Vec<Pair>,
}

impl Splits {
    /// Validation and test both fall back to the training split.
    pub fn train_only(train: Vec<Pair>) -> Self {
        Self {
            valid: train.clone(),
            test: train.clone(),
            train,
        }
    }
}

fn load(path: &Path, slots: SlotBudget) -> Result<Vec<Pair>, ExperimentError> {
    load_dataset(path, slots).map_err(|source| ExperimentError::Dataset {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_splits(cfg: &RunConfig) -> Result<Splits, ExperimentError> {
    let slots = cfg.slots();
    let train_path = cfg
        .train_path
        .as_deref()
        .ok_or_else(|| ExperimentError::Config("no training data path".into()))?;
    let train = load(train_path, slots)?;
    let valid = match &cfg.valid_path {
        Some(p) => load(p, slots)?,
        None => train.clone(),
    };
    let test = match &cfg.test_path {
        Some(p) => load(p, slots)?,
        None => valid.clone(),
    };
    Ok(Splits { train, valid, test })
}

pub fn vocab_for(pairs: &[Pair], min_freq: usize) -> Result<Vocabulary, VocabError> {
    build_vocab(
        pairs.iter().map(|p| (&p.kg, p.references.iter().map(String::as_str))),
        min_freq,
    )
}

pub fn to_examples(
    pairs: &[Pair],
    model: &Model,
    vocab: &Vocabulary,
    max_target_len: usize,
) -> Result<Vec<Example>, ModelError> {
    pairs
        .iter()
        .map(|p| Example::new(p.id.clone(), p.kg.clone(), p.references.clone(), model, vocab, max_target_len))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigSnapshot {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub output_dir: PathBuf,
    pub train_examples: usize,
    pub best_step: u64,
    pub best_valid_bleu: f64,
    pub steps: u64,
    pub report: EvalReport,
}

#[derive(Serialize)]
struct PredictionRecord<'a> {
    example_id: &'a str,
    hypothesis: &'a str,
    reference: &'a str,
    entity_accuracy: Option<f64>,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), ExperimentError> {
    let mut f = io::BufWriter::new(fs::File::create(path)?);
    for p in preds {
        let rec = PredictionRecord {
            example_id: &p.example_id,
            hypothesis: &p.hypothesis,
            reference: &p.reference,
            entity_accuracy: p.entity_accuracy,
        };
        serde_json::to_writer(&mut f, &rec)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Loads the splits named in `cfg` and runs them.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary, ExperimentError> {
    let splits = load_splits(cfg)?;
    run_on_splits(cfg, &splits)
}

/// Trains, selects the best checkpoint by validation BLEU, evaluates it on
/// the test split and writes every artifact to `cfg.output_dir`.
pub fn run_on_splits(cfg: &RunConfig, splits: &Splits) -> Result<RunSummary, ExperimentError> {
    cfg.validate()?;
    let out = &cfg.output_dir;
    fs::create_dir_all(out)?;
    write_json(
        &out.join("config.json"),
        &ConfigSnapshot {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.train.seed,
            config: cfg.clone(),
        },
    )?;

    let vocab = match &cfg.vocab_path {
        Some(p) => Vocabulary::read_from(io::BufReader::new(fs::File::open(p)?))?,
        None => vocab_for(&splits.train, cfg.min_freq)?,
    };
    fs::write(out.join("vocab.txt"), vocab.to_text())?;

    let mut model = Model::new(cfg.model_config(vocab.len())?, cfg.train.seed)?;
    let max_t = cfg.train.max_target_len;
    let train_ex = to_examples(&splits.train, &model, &vocab, max_t)?;
    let valid_ex = to_examples(&splits.valid, &model, &vocab, max_t)?;
    let test_ex = to_examples(&splits.test, &model, &vocab, max_t)?;

    let mut log = io::BufWriter::new(fs::File::create(out.join("metrics.jsonl"))?);
    let mut log_err: Option<io::Error> = None;
    let outcome = train(&mut model, &train_ex, &valid_ex, &vocab, &cfg.train, &mut |rec: &MetricRecord| {
        if log_err.is_none() {
            if let Err(e) = writeln!(log, "{}", rec.to_json_line()) {
                log_err = Some(e);
            }
        }
    })?;
    if let Some(e) = log_err {
        return Err(e.into());
    }
    log.flush()?;

    model.params = outcome.best_params.clone();
    checkpoint::save(&model, &out.join("best.ckpt"))?;
    let (report, preds) = evaluate(&model, &test_ex, &vocab, &cfg.train.decode)?;
    write_predictions(&out.join("predictions.jsonl"), &preds)?;
    write_json(&out.join("report.json"), &report)?;

    Ok(RunSummary {
        output_dir: out.clone(),
        train_examples: crate::train::few_shot_subsample(&train_ex, cfg.train.data_proportion, cfg.train.seed).len(),
        best_step: outcome.best_step,
        best_valid_bleu: outcome.best_bleu,
        steps: outcome.steps,
        report,
    })
}

/// Loads a run directory's checkpoint and vocabulary.
pub fn load_run(dir: &Path) -> Result<(Model, Vocabulary), ExperimentError> {
    let model = checkpoint::load(&dir.join("best.ckpt"))?;
    let vocab = Vocabulary::read_from(io::BufReader::new(fs::File::open(dir.join("vocab.txt"))?))?;
    Ok((model, vocab))
}

/// Decodes and scores `pairs` with a trained model.
pub fn evaluate_pairs(
    model: &Model,
    vocab: &Vocabulary,
    pairs: &[Pair],
    strategy: &DecodeStrategy,
    max_target_len: usize,
) -> Result<(EvalReport, Vec<Prediction>), ExperimentError> {
    let ex = to_examples(pairs, model, vocab, max_target_len)?;
    Ok(evaluate(model, &ex, vocab, strategy)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub scheme: String,
    pub notation: String,
    pub type_encoding: bool,
    pub bleu: f64,
    pub output_dir: PathBuf,
}

/// Every mask scheme with and without type encoding, scheme-major: exactly
/// 8 cells.
pub fn ablation_cells() -> Vec<(MaskScheme, bool)> {
    MaskScheme::NAMED
        .iter()
        .flat_map(|&s| [(s, false), (s, true)])
        .collect()
}

pub fn run_ablation_grid(base: &RunConfig, splits: &Splits) -> Result<Vec<AblationCell>, ExperimentError> {
    let root = base.output_dir.clone();
    let mut cells = Vec::new();
    for (scheme, typed) in ablation_cells() {
        let tag = if typed { "typed" } else { "untyped" };
        let cfg = RunConfig {
            scheme: scheme.name(),
            type_encoding: typed,
            output_dir: root.join(format!("{}_{tag}", scheme.name())),
            ..base.clone()
        };
        let summary = run_on_splits(&cfg, splits)?;
        cells.push(AblationCell {
            scheme: scheme.name(),
            notation: scheme.notation(),
            type_encoding: typed,
            bleu: summary.report.bleu,
            output_dir: summary.output_dir,
        });
    }
    fs::create_dir_all(&root)?;
    write_json(&root.join("ablation.json"), &cells)?;
    fs::write(root.join("ablation.md"), ablation_table(&cells))?;
    Ok(cells)
}

/// Markdown table: one row per scheme, BLEU without and with type encoding.
pub fn ablation_table(cells: &[AblationCell]) -> String {
    let mut s = String::from("| mask | scheme | BLEU | BLEU (+type) |\n|---|---|---|---|\n");
    let fmt = |c: Option<&AblationCell>| c.map_or_else(|| "-".to_string(), |c| format!("{:.2}", c.bleu));
    for scheme in MaskScheme::NAMED {
        let find = |typed: bool| cells.iter().find(|c| c.scheme == scheme.name() && c.type_encoding == typed);
        s.push_str(&format!(
            "| {} | {} | {} | {} |\n",
            scheme.notation(),
            scheme.name(),
            fmt(find(false)),
            fmt(find(true))
        ));
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotRow {
    pub proportion: f64,
    pub train_examples: usize,
    pub bleu: f64,
    pub output_dir: PathBuf,
}

pub fn run_few_shot(base: &RunConfig, splits: &Splits, proportions: &[f64]) -> Result<Vec<FewShotRow>, ExperimentError> {
    let root = base.output_dir.clone();
    let mut rows = Vec::new();
    for &p in proportions {
        let mut cfg = RunConfig {
            output_dir: root.join(format!("p{p}")),
            ..base.clone()
        };
        cfg.train.data_proportion = p;
        let summary = run_on_splits(&cfg, splits)?;
        rows.push(FewShotRow {
            proportion: p,
            train_examples: summary.train_examples,
            bleu: summary.report.bleu,
            output_dir: summary.output_dir,
        });
    }
    fs::create_dir_all(&root)?;
    write_json(&root.join("few_shot.json"), &rows)?;
    let mut table = String::from("| proportion | examples | BLEU |\n|---|---|---|\n");
    for r in &rows {
        table.push_str(&format!("| {}% | {} | {:.2} |\n", r.proportion * 100.0, r.train_examples, r.bleu));
    }
    fs::write(root.join("few_shot.md"), table)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SizeBucket {
    pub min_triples: usize,
    /// Inclusive; `None` means unbounded.
    pub max_triples: Option<usize>,
}

impl SizeBucket {
    pub fn contains(&self, n: usize) -> bool {
        n >= self.min_triples && self.max_triples.is_none_or(|m| n <= m)
    }

    pub fn label(&self) -> String {
        match self.max_triples {
            Some(m) => format!("{}-{m}", self.min_triples),
            None => format!("{}+", self.min_triples),
        }
    }
}

pub const DEFAULT_BUCKETS: [SizeBucket; 3] = [
    SizeBucket {
        min_triples: 1,
        max_triples: Some(3),
    },
    SizeBucket {
        min_triples: 4,
        max_triples: Some(7),
    },
    SizeBucket {
        min_triples: 8,
        max_triples: None,
    },
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketScore {
    pub bucket: String,
    pub examples: usize,
    /// `None` for an empty bucket.
    pub bleu: Option<f64>,
}

/// Corpus BLEU of already-decoded predictions, grouped by triple count.
pub fn bucket_scores(pairs: &[Pair], preds: &[Prediction], buckets: &[SizeBucket]) -> Result<Vec<BucketScore>, MetricError> {
    buckets
        .iter()
        .map(|b| {
            let idx: Vec<usize> = (0..pairs.len()).filter(|&i| b.contains(pairs[i].kg.triples.len())).collect();
            let bleu = if idx.is_empty() {
                None
            } else {
                let hyps: Vec<&str> = idx.iter().map(|&i| preds[i].hypothesis.as_str()).collect();
                let refs: Vec<Vec<&str>> = idx
                    .iter()
                    .map(|&i| pairs[i].references.iter().map(String::as_str).collect())
                    .collect();
                Some(bleu(&hyps, &refs)?)
            };
            Ok(BucketScore {
                bucket: b.label(),
                examples: idx.len(),
                bleu,
            })
        })
        .collect()
}

pub fn run_size_buckets(
    model: &Model,
    vocab: &Vocabulary,
    pairs: &[Pair],
    strategy: &DecodeStrategy,
    buckets: &[SizeBucket],
    max_target_len: usize,
) -> Result<Vec<BucketScore>, ExperimentError> {
    let (_, preds) = evaluate_pairs(model, vocab, pairs, strategy, max_target_len)?;
    Ok(bucket_scores(pairs, &preds, buckets)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_eight_distinct_cells() {
        let cells = ablation_cells();
        assert_eq!(cells.len(), 8);
        for (i, a) in cells.iter().enumerate() {
            assert!(cells[i + 1..].iter().all(|b| b != a));
        }
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in MaskScheme::NAMED {
            let cfg = RunConfig {
                scheme: s.name(),
                ..RunConfig::default()
            };
            assert_eq!(cfg.mask_scheme().unwrap(), s);
        }
        let bad = RunConfig {
            scheme: "er_r".into(),
            ..RunConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn buckets_partition_sizes() {
        for n in 1..20 {
            assert_eq!(DEFAULT_BUCKETS.iter().filter(|b| b.contains(n)).count(), 1);
        }
        assert_eq!(DEFAULT_BUCKETS.map(|b| b.label()), ["1-3", "4-7", "8+"]);
    }

    #[test]
    fn bucket_scores_split_the_corpus() {
        let pairs = crate::synth::synthetic_corpus(20, 4);
        let preds: Vec<Prediction> = pairs
            .iter()
            .map(|p| Prediction {
                example_id: p.id.clone(),
                hypothesis: p.references[0].clone(),
                reference: p.references[0].clone(),
                entity_accuracy: None,
            })
            .collect();
        let scores = bucket_scores(&pairs, &preds, &DEFAULT_BUCKETS).unwrap();
        assert_eq!(scores.iter().map(|s| s.examples).sum::<usize>(), 20);
        for s in &scores {
            assert_eq!(s.bleu, Some(100.0));
        }
    }

    #[test]
    fn table_lists_every_scheme() {
        let t = ablation_table(&[]);
        assert_eq!(t.lines().count(), 6);
        assert!(t.contains("er_none"));
    }
}
