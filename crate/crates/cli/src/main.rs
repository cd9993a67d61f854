use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use gap_core::dataset::{load_dataset, write_dataset, Pair};
use gap_core::decode::BeamConfig;
use gap_core::experiment::{
    bucket_scores, evaluate_pairs, load_run, load_splits, resolve_output_dir, run_ablation_grid, run_experiment,
    run_few_shot, vocab_for, write_json, write_predictions, RunConfig, DEFAULT_BUCKETS, FEW_SHOT_PROPORTIONS,
};
use gap_core::kg::SlotBudget;
use gap_core::synth::synthetic_corpus;
use gap_core::trace::{export_trace, render_heatmap, HeatmapFormat, TraceExport};
use gap_core::train::DecodeStrategy;

#[derive(Parser)]
#[command(name = "gap", version, about = "Graph-aware encoder-decoder for knowledge-graph-to-text generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a vocabulary file from a dataset.
    PrepareVocab {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_freq: usize,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        slots: SlotArgs,
    },
    /// Train one model and write a run directory.
    Train(RunArgs),
    /// Decode a dataset with a trained run and score it.
    Evaluate {
        /// Run directory containing best.ckpt and vocab.txt.
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Where to write predictions.jsonl, report.json and buckets.json.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long, default_value_t = 512)]
        max_target_len: usize,
    },
    /// Train all 8 mask-scheme x type-encoding variants.
    Ablate(RunArgs),
    /// Train on growing fractions of the training split.
    FewShot {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated fractions of the training split.
        #[arg(long, value_delimiter = ',', default_values_t = FEW_SHOT_PROPORTIONS.to_vec())]
        proportions: Vec<f64>,
    },
    /// Export graph-attention weights of one dataset record.
    Trace {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Record id; defaults to the first record.
        #[arg(long)]
        id: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one layer of a trace file as a heatmap.
    Render {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 0)]
        layer: usize,
        /// `text` or `svg`.
        #[arg(long, default_value = "text")]
        format: HeatmapFormat,
        /// Defaults to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the bundled synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone)]
struct SlotArgs {
    #[arg(long, default_value_t = SlotBudget::default().num_nodes)]
    num_nodes: usize,
    #[arg(long, default_value_t = SlotBudget::default().num_relations)]
    num_relations: usize,
}

#[derive(Args, Clone)]
struct DecodeArgs {
    /// Beam width; 1 decodes greedily.
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    length_penalty: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
}

impl DecodeArgs {
    fn apply(&self, base: DecodeStrategy) -> DecodeStrategy {
        let (mut beam, mut alpha, mut max_len) = match base {
            DecodeStrategy::Greedy { max_len } => (1, 0.0, max_len),
            DecodeStrategy::Beam(b) => (b.beam_size, b.length_penalty, b.max_len),
        };
        beam = self.beam.unwrap_or(beam);
        alpha = self.length_penalty.unwrap_or(alpha);
        max_len = self.max_len.unwrap_or(max_len);
        if beam <= 1 {
            DecodeStrategy::Greedy { max_len }
        } else {
            DecodeStrategy::Beam(BeamConfig {
                beam_size: beam,
                length_penalty: alpha,
                max_len,
            })
        }
    }
}

/// Flags override values from `--config`, which override the defaults.
#[derive(Args, Clone)]
struct RunArgs {
    /// JSON RunConfig to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    train: Option<PathBuf>,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<PathBuf>,
    /// Relative paths are placed under $GAP_OUTPUT_ROOT when it is set.
    #[arg(long)]
    out: Option<PathBuf>,
    /// er_er, er_e, er_none or e_e.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long)]
    type_encoding: Option<bool>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    max_positions: Option<usize>,
    #[arg(long)]
    num_nodes: Option<usize>,
    #[arg(long)]
    num_relations: Option<usize>,
    #[arg(long)]
    min_freq: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    eval_period: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    data_proportion: Option<f64>,
    #[arg(long)]
    max_target_len: Option<usize>,
    /// Stop once validation BLEU reaches this value.
    #[arg(long)]
    target_bleu: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    #[command(flatten)]
    decode: DecodeArgs,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
                .with_context(|| format!("parsing {}", p.display()))?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $flag:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(c.scheme, self.scheme);
        set!(c.type_encoding, self.type_encoding);
        set!(c.d_model, self.d_model);
        set!(c.n_heads, self.heads);
        if self.d_model.is_some() && self.d_ff.is_none() && self.config.is_none() {
            c.d_ff = 4 * c.d_model;
        }
        set!(c.d_ff, self.d_ff);
        set!(c.n_layers, self.layers);
        set!(c.max_positions, self.max_positions);
        set!(c.num_nodes, self.num_nodes);
        set!(c.num_relations, self.num_relations);
        set!(c.min_freq, self.min_freq);
        set!(c.train.learning_rate, self.lr);
        set!(c.train.warmup_steps, self.warmup);
        set!(c.train.batch_size, self.batch_size);
        set!(c.train.epochs, self.epochs);
        set!(c.train.eval_period, self.eval_period);
        set!(c.train.seed, self.seed);
        set!(c.train.data_proportion, self.data_proportion);
        set!(c.train.max_target_len, self.max_target_len);
        if self.target_bleu.is_some() {
            c.train.target_bleu = self.target_bleu;
        }
        if self.threads.is_some() {
            c.train.threads = self.threads;
        }
        c.train.decode = self.decode.apply(c.train.decode);
        if self.train.is_some() {
            c.train_path = self.train.clone();
        }
        if self.valid.is_some() {
            c.valid_path = self.valid.clone();
        }
        if self.test.is_some() {
            c.test_path = self.test.clone();
        }
        if self.vocab.is_some() {
            c.vocab_path = self.vocab.clone();
        }
        set!(c.output_dir, self.out);
        c.output_dir = resolve_output_dir(&c.output_dir);
        c.validate()?;
        Ok(c)
    }
}

fn find_record<'p>(pairs: &'p [Pair], id: Option<&str>) -> Result<&'p Pair> {
    match id {
        Some(id) => pairs.iter().find(|p| p.id == id).ok_or_else(|| anyhow!("no record with id `{id}`")),
        None => pairs.first().ok_or_else(|| anyhow!("dataset is empty")),
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::PrepareVocab {
            data,
            min_freq,
            out: path,
            slots,
        } => {
            let pairs = load_dataset(&data, SlotBudget::new(slots.num_nodes, slots.num_relations))
                .with_context(|| format!("loading {}", data.display()))?;
            let vocab = vocab_for(&pairs, min_freq)?;
            fs::write(&path, vocab.to_text())?;
            writeln!(out, "wrote {} tokens to {}", vocab.len(), path.display())?;
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let s = run_experiment(&cfg)?;
            writeln!(
                out,
                "best valid BLEU {:.2} at step {} of {}; test BLEU {:.2}; artifacts in {}",
                s.best_valid_bleu,
                s.best_step,
                s.steps,
                s.report.bleu,
                s.output_dir.display()
            )?;
        }
        Command::Evaluate {
            run,
            data,
            out: dir,
            decode,
            max_target_len,
        } => {
            let (model, vocab) = load_run(&run)?;
            let strategy = decode.apply(DecodeStrategy::Beam(BeamConfig::default()));
            let pairs = load_dataset(&data, model.config.slots).with_context(|| format!("loading {}", data.display()))?;
            let (report, preds) = evaluate_pairs(&model, &vocab, &pairs, &strategy, max_target_len)?;
            let buckets = bucket_scores(&pairs, &preds, &DEFAULT_BUCKETS)?;
            let dir = resolve_output_dir(&dir);
            fs::create_dir_all(&dir)?;
            write_predictions(&dir.join("predictions.jsonl"), &preds)?;
            write_json(&dir.join("report.json"), &report)?;
            write_json(&dir.join("buckets.json"), &buckets)?;
            writeln!(out, "BLEU {:.2} over {} examples", report.bleu, report.examples)?;
            if let Some(acc) = report.entity_accuracy {
                writeln!(out, "entity accuracy {acc:.2} ({} defined)", report.entity_accuracy_defined)?;
            }
            for b in &buckets {
                let bleu = b.bleu.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
                writeln!(out, "  {:>4} triples: {} examples, BLEU {bleu}", b.bucket, b.examples)?;
            }
        }
        Command::Ablate(args) => {
            let cfg = args.resolve()?;
            let splits = load_splits(&cfg)?;
            let cells = run_ablation_grid(&cfg, &splits)?;
            write!(out, "{}", gap_core::experiment::ablation_table(&cells))?;
        }
        Command::FewShot { run, proportions } => {
            let cfg = run.resolve()?;
            if proportions.is_empty() {
                bail!("no proportions given");
            }
            let splits = load_splits(&cfg)?;
            for r in run_few_shot(&cfg, &splits, &proportions)? {
                writeln!(
                    out,
                    "{:>6}%  {:>5} examples  BLEU {:.2}",
                    r.proportion * 100.0,
                    r.train_examples,
                    r.bleu
                )?;
            }
        }
        Command::Trace {
            run,
            data,
            id,
            out: path,
        } => {
            let (model, vocab) = load_run(&run)?;
            let pairs = load_dataset(&data, model.config.slots).with_context(|| format!("loading {}", data.display()))?;
            let pair = find_record(&pairs, id.as_deref())?;
            let trace = export_trace(&model, &vocab, &pair.kg)?;
            fs::write(&path, trace.to_json())?;
            writeln!(
                out,
                "wrote {} layers x {} components to {}",
                trace.layers.len(),
                trace.labels.len(),
                path.display()
            )?;
        }
        Command::Render {
            trace,
            layer,
            format,
            out: path,
        } => {
            let t: TraceExport = serde_json::from_reader(BufReader::new(
                fs::File::open(&trace).with_context(|| format!("opening {}", trace.display()))?,
            ))?;
            let rendered = render_heatmap(&t, layer, format).map_err(|e| anyhow!(e))?;
            match path {
                Some(p) => fs::write(p, rendered)?,
                None => write!(out, "{rendered}")?,
            }
        }
        Command::Synth { n, seed, out: path } => {
            write_pairs(&path, &synthetic_corpus(n, seed))?;
            writeln!(out, "wrote {n} records to {}", path.display())?;
        }
    }
    Ok(())
}

fn write_pairs(path: &Path, pairs: &[Pair]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_dataset(path, pairs).with_context(|| format!("writing {}", path.display()))
}
