//! Graph-aware encoder-decoder.
//!
//! Each encoder layer pairs global self-attention over the linearized tokens
//! with a graph-aware attention over pooled component vectors:
//!
//! ```text
//! a   = x + MHA(x)                                   global attention
//! a'  = a + gather(MHA_g(pool(a), bias = M + γ(T)))  graph-aware attention
//! h   = LN(a')
//! out = LN(h + FFN(h))
//! ```
//!
//! The graph-aware update joins the global residual stream before its layer
//! norm, so a layer whose mask blocks every component reduces exactly to a
//! vanilla post-norm transformer encoder layer. The decoder is a standard
//! causal post-norm decoder with cross-attention and an output projection
//! tied to the token embeddings.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::kg::{ComponentTable, KnowledgeGraph, SlotBudget};
use crate::linearize::{linearize, LinearizeError, LinearizedGraph, Vocabulary, PAD};
use crate::ops::NUM_TYPES;
use crate::tensor::Matrix;
use crate::topology::{build_mask, build_type_matrix, MaskMatrix, MaskScheme, TopologyError, TypeMatrix, BLOCKED};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model configuration: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds {max} positions")]
    LengthOverflow { len: usize, max: usize },
    #[error("target needs at least BOS and one more token")]
    TargetTooShort,
    #[error("target has only padding")]
    AllPadTarget,
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    /// Paired (global + graph-aware) encoder layers.
    pub n_layers: usize,
    pub n_dec_layers: usize,
    pub max_positions: usize,
    pub slots: SlotBudget,
    pub scheme: MaskScheme,
    pub type_encoding: bool,
    pub init_std: f64,
}

impl ModelConfig {
    /// Desk-scale defaults: d = 128, 4 heads, d_ff = 4d, two paired layers.
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            d_model: 128,
            n_heads: 4,
            d_ff: 512,
            n_layers: 2,
            n_dec_layers: 2,
            max_positions: 512,
            slots: SlotBudget::default(),
            scheme: MaskScheme::ER_E,
            type_encoding: false,
            init_std: 0.02,
        }
    }

    pub fn with_dims(mut self, d_model: usize, n_heads: usize, n_layers: usize) -> Self {
        self.d_model = d_model;
        self.n_heads = n_heads;
        self.d_ff = 4 * d_model;
        self.n_layers = n_layers;
        self.n_dec_layers = n_layers;
        self
    }

    pub fn m_slots(&self) -> usize {
        self.slots.m_slots()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let err = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return err("dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return err("d_model must be divisible by n_heads");
        }
        if self.vocab_size < crate::linearize::SPECIAL_TOKENS.len() {
            return err("vocabulary smaller than the special tokens");
        }
        if self.max_positions == 0 {
            return err("max_positions must be positive");
        }
        if !(self.init_std.is_finite() && self.init_std > 0.0) {
            return err("init_std must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttnIds {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct NormIds {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct FfnIds {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct EncoderLayerIds {
    pub global: AttnIds,
    pub graph: AttnIds,
    /// `1 x 5` type-bias table; entry 0 is never read or updated.
    pub gamma: ParamId,
    pub norm_attn: NormIds,
    pub ffn: FfnIds,
    pub norm_ffn: NormIds,
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderLayerIds {
    pub self_attn: AttnIds,
    pub norm_self: NormIds,
    pub cross: AttnIds,
    pub norm_cross: NormIds,
    pub ffn: FfnIds,
    pub norm_ffn: NormIds,
}

/// Model hyperparameters plus every learnable tensor.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub tok_embed: ParamId,
    pub pos_embed: ParamId,
    pub encoder: Vec<EncoderLayerIds>,
    pub decoder: Vec<DecoderLayerIds>,
    positions: Vec<u32>,
}

struct Init<'s> {
    store: &'s mut ParamStore,
    rng: ChaCha8Rng,
    std: f64,
}

impl Init<'_> {
    fn normal(&mut self, name: String, rows: usize, cols: usize) -> ParamId {
        let m = Matrix::randn(rows, cols, self.std, &mut self.rng);
        self.store.add(name, m)
    }

    fn fill(&mut self, name: String, rows: usize, cols: usize, v: f64) -> ParamId {
        self.store.add(name, Matrix::filled(rows, cols, v))
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIds {
        AttnIds {
            wq: self.normal(format!("{prefix}.wq"), d, d),
            wk: self.normal(format!("{prefix}.wk"), d, d),
            wv: self.normal(format!("{prefix}.wv"), d, d),
            wo: self.normal(format!("{prefix}.wo"), d, d),
        }
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIds {
        NormIds {
            gain: self.fill(format!("{prefix}.gain"), 1, d, 1.0),
            bias: self.fill(format!("{prefix}.bias"), 1, d, 0.0),
        }
    }

    fn ffn(&mut self, prefix: &str, d: usize, d_ff: usize) -> FfnIds {
        FfnIds {
            w1: self.normal(format!("{prefix}.w1"), d, d_ff),
            b1: self.fill(format!("{prefix}.b1"), 1, d_ff, 0.0),
            w2: self.normal(format!("{prefix}.w2"), d_ff, d),
            b2: self.fill(format!("{prefix}.b2"), 1, d, 0.0),
        }
    }
}

impl Model {
    /// Fresh model with N(0, init_std²) weights, unit layer-norm gains and
    /// zero biases, zero type tables and a zero PAD embedding row.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.d_model;
        let mut store = ParamStore::new();
        let mut init = Init {
            store: &mut store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: config.init_std,
        };
        let tok_embed = init.normal("embed.tokens".into(), config.vocab_size, d);
        let pos_embed = init.normal("embed.positions".into(), config.max_positions, d);
        let encoder = (0..config.n_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayerIds {
                    global: init.attn(&format!("{p}.global"), d),
                    graph: init.attn(&format!("{p}.graph"), d),
                    gamma: init.fill(format!("{p}.graph.gamma"), 1, NUM_TYPES, 0.0),
                    norm_attn: init.norm(&format!("{p}.norm_attn"), d),
                    ffn: init.ffn(&format!("{p}.ffn"), d, config.d_ff),
                    norm_ffn: init.norm(&format!("{p}.norm_ffn"), d),
                }
            })
            .collect();
        let decoder = (0..config.n_dec_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayerIds {
                    self_attn: init.attn(&format!("{p}.self"), d),
                    norm_self: init.norm(&format!("{p}.norm_self"), d),
                    cross: init.attn(&format!("{p}.cross"), d),
                    norm_cross: init.norm(&format!("{p}.norm_cross"), d),
                    ffn: init.ffn(&format!("{p}.ffn"), d, config.d_ff),
                    norm_ffn: init.norm(&format!("{p}.norm_ffn"), d),
                }
            })
            .collect();
        store.get_mut(tok_embed).row_mut(PAD as usize).fill(0.0);
        let positions = (0..config.max_positions as u32).collect();
        Ok(Self {
            config,
            params: store,
            tok_embed,
            pos_embed,
            encoder,
            decoder,
            positions,
        })
    }

    /// Rebuilds a model around a loaded parameter store; names and shapes must
    /// match what [`Model::new`] would create for `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self, ModelError> {
        let mut model = Model::new(config, 0)?;
        if params.len() != model.params.len() {
            return Err(ModelError::Config(format!(
                "expected {} tensors, found {}",
                model.params.len(),
                params.len()
            )));
        }
        let mut ordered = ParamStore::new();
        for (_, name, value) in model.params.iter() {
            let loaded = params
                .id(name)
                .map(|i| params.get(i))
                .ok_or_else(|| ModelError::Config(format!("missing tensor `{name}`")))?;
            if loaded.shape() != value.shape() {
                return Err(ModelError::Config(format!("tensor `{name}` has wrong shape")));
            }
            ordered.add(name, loaded.clone());
        }
        model.params = ordered;
        Ok(model)
    }

    /// Parameters the optimizer must leave untouched: the PAD embedding row
    /// and entry 0 of every type table, as `(param, flat index range)`.
    pub fn frozen_entries(&self) -> Vec<(ParamId, std::ops::Range<usize>)> {
        let d = self.config.d_model;
        let pad = PAD as usize;
        let mut out = vec![(self.tok_embed, pad * d..(pad + 1) * d)];
        out.extend(self.encoder.iter().map(|l| (l.gamma, 0..1)));
        out
    }

    pub fn prepare(&self, kg: &KnowledgeGraph, vocab: &Vocabulary) -> Result<EncodedGraph, ModelError> {
        EncodedGraph::new(kg, vocab, self.config.scheme, self.config.m_slots())
    }

    fn check_len(&self, len: usize) -> Result<(), ModelError> {
        if len > self.config.max_positions {
            return Err(ModelError::LengthOverflow {
                len,
                max: self.config.max_positions,
            });
        }
        Ok(())
    }

    /// Encoder states for `graph` plus the graph-attention trace.
    pub fn encode(&self, graph: &EncodedGraph) -> Result<(Matrix, AttentionTrace), ModelError> {
        let mut tape = Tape::new(&self.params);
        let enc = encode(&mut tape, self, graph)?;
        let trace = enc.trace(&tape, self, graph);
        Ok((tape.value(enc.states).clone(), trace))
    }

    /// Decoder logits (`len(inputs) x vocab`) given fixed encoder states.
    pub fn decoder_logits(&self, encoder_states: &Matrix, inputs: &[u32]) -> Result<Matrix, ModelError> {
        let mut tape = Tape::new(&self.params);
        let enc = tape.constant(encoder_states.clone());
        let logits = decoder_forward(&mut tape, self, inputs, enc)?;
        Ok(tape.value(logits).clone())
    }

    /// Log-probabilities of the token following `prefix`.
    pub fn next_log_probs(&self, encoder_states: &Matrix, prefix: &[u32]) -> Result<Vec<f64>, ModelError> {
        let logits = self.decoder_logits(encoder_states, prefix)?;
        let last = logits.row(logits.rows - 1);
        let max = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + last.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        Ok(last.iter().map(|v| v - lse).collect())
    }

    /// Teacher-forced loss of `target` (BOS ... EOS) and its gradients.
    pub fn loss_and_grads(&self, graph: &EncodedGraph, target: &[u32]) -> Result<(f64, Gradients), ModelError> {
        let mut tape = Tape::new(&self.params);
        let loss = example_loss(&mut tape, self, graph, target)?;
        Ok((tape.value(loss).data[0], tape.backward(loss, 1.0)))
    }

    pub fn loss(&self, graph: &EncodedGraph, target: &[u32]) -> Result<f64, ModelError> {
        let mut tape = Tape::new(&self.params);
        let loss = example_loss(&mut tape, self, graph, target)?;
        Ok(tape.value(loss).data[0])
    }
}

/// Everything the encoder needs about one graph, precomputed once.
#[derive(Debug, Clone)]
pub struct EncodedGraph {
    pub lin: LinearizedGraph,
    pub table: ComponentTable,
    pub owners: Vec<Option<usize>>,
    pub mask: MaskMatrix,
    pub mask_bias: Matrix,
    pub types: TypeMatrix,
    pub labels: Vec<String>,
}

impl EncodedGraph {
    pub fn new(kg: &KnowledgeGraph, vocab: &Vocabulary, scheme: MaskScheme, m_slots: usize) -> Result<Self, ModelError> {
        let (lin, table) = linearize(kg, vocab)?;
        let mask = build_mask(&table, scheme, m_slots)?;
        let types = build_type_matrix(&table, m_slots)?;
        Ok(Self::from_parts(kg, lin, table, mask, types))
    }

    pub fn from_parts(
        kg: &KnowledgeGraph,
        lin: LinearizedGraph,
        table: ComponentTable,
        mask: MaskMatrix,
        types: TypeMatrix,
    ) -> Self {
        let owners = lin.token_components();
        let mask_bias = Matrix::from_vec(mask.m_slots, mask.m_slots, mask.values.clone());
        let labels = (0..table.len()).map(|i| table.label(kg, i).to_string()).collect();
        Self {
            lin,
            table,
            owners,
            mask,
            mask_bias,
            types,
            labels,
        }
    }

    pub fn active(&self) -> usize {
        self.table.len()
    }
}

/// Head-averaged graph-attention weights of every encoder layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub scheme: MaskScheme,
    pub type_encoding: bool,
    pub active: usize,
    pub labels: Vec<String>,
    /// `m_slots x m_slots` per layer, row-major.
    pub layers: Vec<Vec<Vec<f64>>>,
    /// Rows with every key blocked.
    pub blocked_rows: Vec<usize>,
}

impl AttentionTrace {
    /// Active `active x active` block of layer `l`.
    pub fn active_block(&self, l: usize) -> Vec<Vec<f64>> {
        self.layers[l][..self.active]
            .iter()
            .map(|r| r[..self.active].to_vec())
            .collect()
    }
}

pub struct EncoderOutput {
    pub states: Var,
    /// Softmax weights per layer, per head.
    pub graph_probs: Vec<Vec<Var>>,
}

impl EncoderOutput {
    pub fn trace(&self, tape: &Tape<'_>, model: &Model, graph: &EncodedGraph) -> AttentionTrace {
        let layers = self
            .graph_probs
            .iter()
            .map(|heads| {
                let mut avg = tape.value(heads[0]).clone();
                for &h in &heads[1..] {
                    avg.add_assign(tape.value(h));
                }
                avg.scale_assign(1.0 / heads.len() as f64);
                (0..avg.rows).map(|i| avg.row(i).to_vec()).collect()
            })
            .collect();
        AttentionTrace {
            scheme: model.config.scheme,
            type_encoding: model.config.type_encoding,
            active: graph.active(),
            labels: graph.labels.clone(),
            layers,
            blocked_rows: (0..graph.mask.m_slots).filter(|&i| graph.mask.row_blocked(i)).collect(),
        }
    }
}

/// Multi-head attention from `xq` over `xkv`. The same additive `bias` is
/// applied in every head. Per-head softmax nodes are appended to `probs`.
pub fn multi_head<'a>(
    tape: &mut Tape<'a>,
    ids: &AttnIds,
    n_heads: usize,
    xq: Var,
    xkv: Var,
    bias: Option<Var>,
    mut probs: Option<&mut Vec<Var>>,
) -> Var {
    let (wq, wk, wv, wo) = (tape.param(ids.wq), tape.param(ids.wk), tape.param(ids.wv), tape.param(ids.wo));
    let q = tape.matmul(xq, wq);
    let k = tape.matmul(xkv, wk);
    let v = tape.matmul(xkv, wv);
    let d = tape.value(q).cols;
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = tape.slice_cols(q, h * dk, dk);
        let kh = tape.slice_cols(k, h * dk, dk);
        let vh = tape.slice_cols(v, h * dk, dk);
        let s = tape.matmul_nt(qh, kh);
        let mut s = tape.scale(s, scale);
        if let Some(b) = bias {
            s = tape.add(s, b);
        }
        let p = tape.softmax(s);
        if let Some(ps) = probs.as_deref_mut() {
            ps.push(p);
        }
        heads.push(tape.matmul(p, vh));
    }
    let cat = if n_heads == 1 { heads[0] } else { tape.concat_cols(&heads) };
    tape.matmul(cat, wo)
}

fn norm<'a>(tape: &mut Tape<'a>, ids: &NormIds, x: Var) -> Var {
    let g = tape.param(ids.gain);
    let b = tape.param(ids.bias);
    tape.layer_norm(x, g, b)
}

fn ffn<'a>(tape: &mut Tape<'a>, ids: &FfnIds, x: Var) -> Var {
    let (w1, b1, w2, b2) = (tape.param(ids.w1), tape.param(ids.b1), tape.param(ids.w2), tape.param(ids.b2));
    let h = tape.matmul(x, w1);
    let h = tape.add_row(h, b1);
    let h = tape.gelu(h);
    let o = tape.matmul(h, w2);
    tape.add_row(o, b2)
}

/// One paired encoder layer. `mask` is the constant `M` node; when type
/// encoding is on, `γ(T)` is added to it.
#[allow(clippy::too_many_arguments)]
pub fn encoder_layer_forward<'a>(
    tape: &mut Tape<'a>,
    model: &Model,
    layer: &EncoderLayerIds,
    x: Var,
    graph: &'a EncodedGraph,
    mask: Var,
    probs: &mut Vec<Var>,
) -> Var {
    let heads = model.config.n_heads;
    let global = multi_head(tape, &layer.global, heads, x, x, None, None);
    let a = tape.add(x, global);

    let bias = if model.config.type_encoding {
        let gamma = tape.param(layer.gamma);
        let tb = tape.type_bias(gamma, &graph.types);
        tape.add(mask, tb)
    } else {
        mask
    };
    let pooled = tape.pool(a, &graph.lin.spans, model.config.m_slots());
    let updated = multi_head(tape, &layer.graph, heads, pooled, pooled, Some(bias), Some(probs));
    let gathered = tape.gather(updated, &graph.owners);
    let a = tape.add(a, gathered);

    let h = norm(tape, &layer.norm_attn, a);
    let f = ffn(tape, &layer.ffn, h);
    let r = tape.add(h, f);
    norm(tape, &layer.norm_ffn, r)
}

fn embed<'a>(tape: &mut Tape<'a>, model: &'a Model, ids: &'a [u32]) -> Result<Var, ModelError> {
    model.check_len(ids.len())?;
    let table = tape.param(model.tok_embed);
    let pos = tape.param(model.pos_embed);
    let tok = tape.rows(table, ids);
    let p = tape.rows(pos, &model.positions[..ids.len()]);
    Ok(tape.add(tok, p))
}

pub fn encode<'a>(tape: &mut Tape<'a>, model: &'a Model, graph: &'a EncodedGraph) -> Result<EncoderOutput, ModelError> {
    if graph.mask.m_slots != model.config.m_slots() {
        return Err(ModelError::Config(format!(
            "graph prepared for {} slots, model expects {}",
            graph.mask.m_slots,
            model.config.m_slots()
        )));
    }
    let mut x = embed(tape, model, &graph.lin.token_ids)?;
    let mask = tape.constant(graph.mask_bias.clone());
    let mut graph_probs = Vec::with_capacity(model.encoder.len());
    for layer in &model.encoder {
        let mut probs = Vec::with_capacity(model.config.n_heads);
        x = encoder_layer_forward(tape, model, layer, x, graph, mask, &mut probs);
        graph_probs.push(probs);
    }
    Ok(EncoderOutput { states: x, graph_probs })
}

fn causal_mask(len: usize) -> Matrix {
    Matrix::from_fn(len, len, |i, j| if j > i { BLOCKED } else { 0.0 })
}

/// Logits for every decoder input position (`len(inputs) x vocab`).
pub fn decoder_forward<'a>(tape: &mut Tape<'a>, model: &'a Model, inputs: &'a [u32], encoder_states: Var) -> Result<Var, ModelError> {
    let heads = model.config.n_heads;
    let mut y = embed(tape, model, inputs)?;
    let causal = tape.constant(causal_mask(inputs.len()));
    for layer in &model.decoder {
        let s = multi_head(tape, &layer.self_attn, heads, y, y, Some(causal), None);
        let s = tape.add(y, s);
        let a = norm(tape, &layer.norm_self, s);
        let c = multi_head(tape, &layer.cross, heads, a, encoder_states, None, None);
        let c = tape.add(a, c);
        let b = norm(tape, &layer.norm_cross, c);
        let f = ffn(tape, &layer.ffn, b);
        let f = tape.add(b, f);
        y = norm(tape, &layer.norm_ffn, f);
    }
    let table = tape.param(model.tok_embed);
    Ok(tape.matmul_nt(y, table))
}

/// Teacher-forced mean token NLL of `target` (BOS ... EOS) as a 1x1 node.
pub fn example_loss<'a>(tape: &mut Tape<'a>, model: &'a Model, graph: &'a EncodedGraph, target: &'a [u32]) -> Result<Var, ModelError> {
    if target.len() < 2 {
        return Err(ModelError::TargetTooShort);
    }
    let labels = &target[1..];
    if labels.iter().all(|&t| t == PAD) {
        return Err(ModelError::AllPadTarget);
    }
    let enc = encode(tape, model, graph)?;
    let logits = decoder_forward(tape, model, &target[..target.len() - 1], enc.states)?;
    Ok(tape.cross_entropy(logits, labels, PAD))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::build_vocab;

    fn setup(scheme: MaskScheme, type_encoding: bool) -> (Model, EncodedGraph, Vec<u32>) {
        let kg = KnowledgeGraph::from_label_triples(&[("alpha", "likes", "beta"), ("beta", "owns", "gamma")]);
        let vocab = build_vocab([(&kg, ["alpha likes beta who owns gamma"])], 1).unwrap();
        let mut cfg = ModelConfig::new(vocab.len()).with_dims(16, 2, 2);
        cfg.slots = SlotBudget::new(4, 4);
        cfg.max_positions = 32;
        cfg.scheme = scheme;
        cfg.type_encoding = type_encoding;
        let model = Model::new(cfg, 5).unwrap();
        let g = model.prepare(&kg, &vocab).unwrap();
        let target = crate::linearize::encode_target("alpha likes beta who owns gamma", &vocab, 32);
        (model, g, target)
    }

    #[test]
    fn rejects_indivisible_heads() {
        let cfg = ModelConfig::new(20).with_dims(10, 3, 1);
        assert!(matches!(Model::new(cfg, 0), Err(ModelError::Config(_))));
    }

    #[test]
    fn encoder_preserves_shape() {
        let (model, g, _) = setup(MaskScheme::ER_ER, true);
        let (states, trace) = model.encode(&g).unwrap();
        assert_eq!(states.shape(), (g.lin.n(), 16));
        assert_eq!(trace.layers.len(), 2);
        assert_eq!(trace.layers[0].len(), 8);
    }

    #[test]
    fn single_token_target_logits_shape() {
        let (model, g, _) = setup(MaskScheme::ER_E, false);
        let (states, _) = model.encode(&g).unwrap();
        let logits = model.decoder_logits(&states, &[crate::linearize::BOS]).unwrap();
        assert_eq!(logits.shape(), (1, model.config.vocab_size));
    }

    #[test]
    fn decoder_is_causal() {
        let (model, g, target) = setup(MaskScheme::ER_E, false);
        let (states, _) = model.encode(&g).unwrap();
        let base = model.decoder_logits(&states, &target).unwrap();
        for t in 1..target.len() {
            let mut changed = target.clone();
            changed[t] = if changed[t] == 7 { 8 } else { 7 };
            let other = model.decoder_logits(&states, &changed).unwrap();
            for pos in 0..t {
                assert_eq!(base.row(pos), other.row(pos), "position {pos} saw change at {t}");
            }
            assert_ne!(base.row(t), other.row(t));
        }
    }

    #[test]
    fn length_overflow() {
        let (model, g, _) = setup(MaskScheme::ER_E, false);
        let (states, _) = model.encode(&g).unwrap();
        let long = vec![7u32; 33];
        assert!(matches!(
            model.decoder_logits(&states, &long),
            Err(ModelError::LengthOverflow { len: 33, max: 32 })
        ));
    }

    #[test]
    fn loss_rejects_degenerate_targets() {
        let (model, g, _) = setup(MaskScheme::ER_E, false);
        assert!(matches!(model.loss(&g, &[1]), Err(ModelError::TargetTooShort)));
        assert!(matches!(model.loss(&g, &[1, PAD, PAD]), Err(ModelError::AllPadTarget)));
    }

    #[test]
    fn frozen_entries_cover_pad_row_and_type_zero() {
        let (model, _, _) = setup(MaskScheme::ER_E, true);
        let frozen = model.frozen_entries();
        assert_eq!(frozen.len(), 1 + model.encoder.len());
        assert!(model.params.get(model.tok_embed).row(PAD as usize).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn from_params_round_trip_and_shape_check() {
        let (model, _, _) = setup(MaskScheme::ER_E, true);
        let again = Model::from_params(model.config.clone(), model.params.clone()).unwrap();
        assert_eq!(again.params, model.params);
        let mut cfg = model.config.clone();
        cfg.d_ff += 1;
        assert!(Model::from_params(cfg, model.params.clone()).is_err());
    }
}
