//! A small reverse-mode tape over dense matrices.
//!
//! Forward calls record a node per operation; [`Tape::backward`] walks the
//! nodes in reverse and accumulates parameter gradients into [`Gradients`].
//! Parameter nodes borrow their values from the [`ParamStore`], so building
//! a tape never copies weights.

use std::collections::HashMap;

use crate::ops;
use crate::tensor::Matrix;
use crate::topology::TypeMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.by_name.contains_key(&name), "duplicate parameter `{name}`");
        let id = ParamId(self.values.len());
        self.by_name.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v))
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }
}

/// Per-parameter gradient accumulators, aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn new(num_params: usize) -> Self {
        Self {
            grads: vec![None; num_params],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads[id.0].as_ref()
    }

    /// Gradient of `id`, or zeros of the parameter's shape when it received none.
    pub fn get_or_zeros(&self, id: ParamId, store: &ParamStore) -> Matrix {
        self.get(id).cloned().unwrap_or_else(|| {
            let p = store.get(id);
            Matrix::zeros(p.rows, p.cols)
        })
    }

    fn accumulate(&mut self, id: ParamId, g: Matrix) {
        match &mut self.grads[id.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    /// Adds `other` into `self`.
    pub fn merge(&mut self, other: &Gradients) {
        for (i, g) in other.grads.iter().enumerate() {
            if let Some(g) = g {
                self.accumulate(ParamId(i), g.clone());
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.scale_assign(s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<'a> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Softmax(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        norm: Matrix,
        inv_std: Vec<f64>,
    },
    Rows(Var, &'a [u32]),
    Pool(Var, &'a [Vec<(usize, usize)>]),
    Gather(Var, &'a [Option<usize>]),
    TypeBias(Var, &'a TypeMatrix),
    CrossEntropy {
        logits: Var,
        targets: &'a [u32],
        pad: u32,
        probs: Matrix,
        count: usize,
    },
}

struct Node<'a> {
    value: Option<Matrix>,
    op: Op<'a>,
}

pub struct Tape<'a> {
    params: &'a ParamStore,
    nodes: Vec<Node<'a>>,
}

impl<'a> Tape<'a> {
    pub fn new(params: &'a ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn value(&self, v: Var) -> &Matrix {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id),
            _ => node.value.as_ref().expect("non-parameter node holds a value"),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op<'a>) -> Var {
        debug_assert!(value.is_finite(), "non-finite forward value");
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_nt(self.value(b));
        self.push(v, Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 x cols` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_row_assign(self.value(b));
        self.push(v, Op::AddRow(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scaled(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a).slice_cols(start, width);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let mats: Vec<&Matrix> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Matrix::concat_cols(&mats);
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row softmax with the all-blocked-row-is-zero rule.
    pub fn softmax(&mut self, a: Var) -> Var {
        let v = ops::softmax_rows(self.value(a));
        self.push(v, Op::Softmax(a))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        v.data.iter_mut().for_each(|x| *x = ops::gelu(*x));
        self.push(v, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (out, norm, inv_std) = ops::layer_norm(self.value(x), self.value(gain), self.value(bias));
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                norm,
                inv_std,
            },
        )
    }

    /// Selects rows `ids` of `table` (embedding lookup).
    pub fn rows(&mut self, table: Var, ids: &'a [u32]) -> Var {
        let t = self.value(table);
        let mut v = Matrix::zeros(ids.len(), t.cols);
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(id as usize));
        }
        self.push(v, Op::Rows(table, ids))
    }

    pub fn pool(&mut self, tokens: Var, spans: &'a [Vec<(usize, usize)>], m_slots: usize) -> Var {
        let v = ops::pool_components(self.value(tokens), spans, m_slots).expect("spans validated by linearizer");
        self.push(v, Op::Pool(tokens, spans))
    }

    pub fn gather(&mut self, graph: Var, owners: &'a [Option<usize>]) -> Var {
        let v = ops::gather(self.value(graph), owners);
        self.push(v, Op::Gather(graph, owners))
    }

    /// `gamma[T_ij]` per cell, with type 0 fixed at zero.
    pub fn type_bias(&mut self, gamma: Var, types: &'a TypeMatrix) -> Var {
        let v = ops::type_bias(&self.value(gamma).data, types).expect("type matrix entries in 0..=4");
        self.push(v, Op::TypeBias(gamma, types))
    }

    /// Mean token negative log-likelihood over non-`pad` targets (1 x 1).
    pub fn cross_entropy(&mut self, logits: Var, targets: &'a [u32], pad: u32) -> Var {
        let (loss, probs, count) = cross_entropy_forward(self.value(logits), targets, pad);
        self.push(
            Matrix::from_vec(1, 1, vec![loss]),
            Op::CrossEntropy {
                logits,
                targets,
                pad,
                probs,
                count,
            },
        )
    }

    /// Backpropagates `seed · d(output)` and returns parameter gradients.
    /// `output` must be a 1x1 node.
    pub fn backward(&self, output: Var, seed: f64) -> Gradients {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Matrix::from_vec(1, 1, vec![seed]));
        let mut out = Gradients::new(self.params.len());

        fn acc(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, g),
                Op::MatMul(a, b) => {
                    let da = g.matmul_nt(self.value(*b));
                    let db = self.value(*a).matmul_tn(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::MatMulNT(a, b) => {
                    let da = g.matmul(self.value(*b));
                    let db = g.matmul_tn(self.value(*a));
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::AddRow(a, b) => {
                    acc(&mut grads, *b, g.column_sums());
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scaled(*s)),
                Op::SliceCols(a, start) => {
                    let src = self.value(*a);
                    let mut da = Matrix::zeros(src.rows, src.cols);
                    for i in 0..g.rows {
                        da.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *a, da);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        acc(&mut grads, p, g.slice_cols(at, w));
                        at += w;
                    }
                }
                Op::Softmax(a) => {
                    let p = self.nodes[idx].value.as_ref().unwrap();
                    let mut da = Matrix::zeros(p.rows, p.cols);
                    for i in 0..p.rows {
                        let (pr, gr) = (p.row(i), g.row(i));
                        let dot: f64 = pr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (d, (pv, gv)) in da.row_mut(i).iter_mut().zip(pr.iter().zip(gr)) {
                            *d = pv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, da);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut da = g;
                    for (d, &xv) in da.data.iter_mut().zip(&x.data) {
                        *d *= ops::gelu_grad(xv);
                    }
                    acc(&mut grads, *a, da);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    norm,
                    inv_std,
                } => {
                    let gv = self.value(*gain);
                    let cols = norm.cols;
                    let d = cols as f64;
                    let mut dgain = Matrix::zeros(1, cols);
                    let dbias = g.column_sums();
                    let mut dx = Matrix::zeros(norm.rows, cols);
                    let mut dn = vec![0.0; cols];
                    for (i, &inv) in inv_std.iter().enumerate().take(norm.rows) {
                        let (nr, gr) = (norm.row(i), g.row(i));
                        for j in 0..cols {
                            dgain.data[j] += gr[j] * nr[j];
                            dn[j] = gr[j] * gv.data[j];
                        }
                        let mean_dn = dn.iter().sum::<f64>() / d;
                        let mean_dn_n = dn.iter().zip(nr).map(|(a, b)| a * b).sum::<f64>() / d;
                        for (j, dxv) in dx.row_mut(i).iter_mut().enumerate() {
                            *dxv = inv * (dn[j] - mean_dn - nr[j] * mean_dn_n);
                        }
                    }
                    acc(&mut grads, *gain, dgain);
                    acc(&mut grads, *bias, dbias);
                    acc(&mut grads, *x, dx);
                }
                Op::Rows(table, ids) => {
                    let t = self.value(*table);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (i, &id) in ids.iter().enumerate() {
                        for (d, v) in dt.row_mut(id as usize).iter_mut().zip(g.row(i)) {
                            *d += v;
                        }
                    }
                    acc(&mut grads, *table, dt);
                }
                Op::Pool(tokens, spans) => {
                    let t = self.value(*tokens);
                    let mut dt = Matrix::zeros(t.rows, t.cols);
                    for (c, ranges) in spans.iter().enumerate() {
                        let count: usize = ranges.iter().map(|(s, e)| e - s).sum();
                        let inv = 1.0 / count as f64;
                        for &(s, e) in ranges {
                            for row in s..e {
                                for (d, v) in dt.row_mut(row).iter_mut().zip(g.row(c)) {
                                    *d += v * inv;
                                }
                            }
                        }
                    }
                    acc(&mut grads, *tokens, dt);
                }
                Op::Gather(graph, owners) => {
                    let gs = self.value(*graph);
                    let mut dg = Matrix::zeros(gs.rows, gs.cols);
                    for (t, owner) in owners.iter().enumerate() {
                        if let Some(c) = owner {
                            for (d, v) in dg.row_mut(*c).iter_mut().zip(g.row(t)) {
                                *d += v;
                            }
                        }
                    }
                    acc(&mut grads, *graph, dg);
                }
                Op::TypeBias(gamma, types) => {
                    let mut dgamma = Matrix::zeros(1, ops::NUM_TYPES);
                    for (&t, &v) in types.values.iter().zip(&g.data) {
                        if t != 0 {
                            dgamma.data[t as usize] += v;
                        }
                    }
                    acc(&mut grads, *gamma, dgamma);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    pad,
                    probs,
                    count,
                } => {
                    let scale = g.data[0] / *count as f64;
                    let mut dl = Matrix::zeros(probs.rows, probs.cols);
                    for (i, &y) in targets.iter().enumerate() {
                        if y == *pad {
                            continue;
                        }
                        for (d, p) in dl.row_mut(i).iter_mut().zip(probs.row(i)) {
                            *d = p * scale;
                        }
                        dl.data[i * probs.cols + y as usize] -= scale;
                    }
                    acc(&mut grads, *logits, dl);
                }
            }
        }
        out
    }
}

/// Returns `(mean loss, row softmax, non-pad count)`. Panics when every
/// target is padding; callers check that first.
pub fn cross_entropy_forward(logits: &Matrix, targets: &[u32], pad: u32) -> (f64, Matrix, usize) {
    assert_eq!(logits.rows, targets.len(), "one target per logits row");
    let mut probs = Matrix::zeros(logits.rows, logits.cols);
    let mut total = 0.0;
    let mut count = 0;
    for (i, &y) in targets.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        for (p, v) in probs.row_mut(i).iter_mut().zip(row) {
            *p = (v - lse).exp();
        }
        if y != pad {
            total += lse - row[y as usize];
            count += 1;
        }
    }
    assert!(count > 0, "all targets are padding");
    (total / count as f64, probs, count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Central-difference check of d(sum(w ⊙ f(x)))/dx for a tape function.
    fn check<F>(inputs: Vec<Matrix>, f: F)
    where
        F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
    {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let ids: Vec<ParamId> = inputs
            .into_iter()
            .enumerate()
            .map(|(i, m)| store.add(format!("p{i}"), m))
            .collect();
        let probe = {
            let mut tape = Tape::new(&store);
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
            let out = f(&mut tape, &vars);
            let v = tape.value(out);
            Matrix::randn(v.rows, v.cols, 1.0, &mut rng)
        };
        let loss = |store: &ParamStore| -> (f64, Gradients) {
            let mut tape = Tape::new(store);
            let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
            let out = f(&mut tape, &vars);
            let total = weighted_sum(&mut tape, out, &probe);
            (tape.value(total).data[0], tape.backward(total, 1.0))
        };
        let (_, grads) = loss(&store);
        let h = 1e-6;
        for &id in &ids {
            let analytic = grads.get_or_zeros(id, &store);
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data[k];
                store.get_mut(id).data[k] = orig + h;
                let up = loss(&store).0;
                store.get_mut(id).data[k] = orig - h;
                let down = loss(&store).0;
                store.get_mut(id).data[k] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic.data[k];
                assert!(
                    (fd - a).abs() <= 1e-6 * (1.0 + fd.abs().max(a.abs())),
                    "param {} elem {k}: fd {fd} vs analytic {a}",
                    store.name(id)
                );
            }
        }
    }

    fn weighted_sum<'a>(tape: &mut Tape<'a>, out: Var, w: &Matrix) -> Var {
        // sum_ij out_ij * w_ij as a 1x1 node, built from tape ops only
        let rows = tape.value(out).rows;
        let mut total: Option<Var> = None;
        for i in 0..rows {
            let sel = tape.constant(Matrix::from_fn(1, rows, |_, j| f64::from(u8::from(i == j))));
            let row = tape.matmul(sel, out);
            let wr = tape.constant(Matrix::from_vec(1, w.cols, w.row(i).to_vec()));
            let dot = tape.matmul_nt(row, wr);
            total = Some(match total {
                Some(t) => tape.add(t, dot),
                None => dot,
            });
        }
        total.unwrap()
    }

    fn rand(r: usize, c: usize, seed: u64) -> Matrix {
        Matrix::randn(r, c, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn matmul_and_add_gradients() {
        check(vec![rand(3, 4, 1), rand(4, 2, 2), rand(1, 2, 3)], |t, v| {
            let m = t.matmul(v[0], v[1]);
            t.add_row(m, v[2])
        });
        check(vec![rand(3, 4, 4), rand(5, 4, 5)], |t, v| {
            let m = t.matmul_nt(v[0], v[1]);
            t.scale(m, 0.7)
        });
    }

    #[test]
    fn softmax_slice_concat_gradients() {
        check(vec![rand(3, 6, 6)], |t, v| {
            let a = t.slice_cols(v[0], 0, 2);
            let b = t.slice_cols(v[0], 2, 4);
            let sb = t.softmax(b);
            t.concat_cols(&[sb, a])
        });
    }

    #[test]
    fn layer_norm_and_gelu_gradients() {
        check(vec![rand(3, 5, 7), rand(1, 5, 8), rand(1, 5, 9)], |t, v| {
            let n = t.layer_norm(v[0], v[1], v[2]);
            t.gelu(n)
        });
    }

    #[test]
    fn pool_gather_rows_gradients() {
        let spans: &'static [Vec<(usize, usize)>] = Box::leak(Box::new(vec![vec![(0, 2), (4, 5)], vec![(2, 3)]]));
        let owners: &'static [Option<usize>] = Box::leak(Box::new(vec![Some(0), Some(0), Some(1), None, Some(0)]));
        let ids: &'static [u32] = Box::leak(Box::new(vec![2, 0, 2, 1, 3]));
        check(vec![rand(4, 3, 10)], move |t, v| {
            let x = t.rows(v[0], ids);
            let p = t.pool(x, spans, 3);
            let g = t.gather(p, owners);
            t.add(g, x)
        });
    }

    #[test]
    fn type_bias_gradient_skips_type_zero() {
        let types: &'static TypeMatrix = Box::leak(Box::new(TypeMatrix {
            m_slots: 3,
            values: vec![0, 1, 2, 1, 0, 4, 3, 4, 0],
        }));
        check(vec![rand(1, 5, 11), rand(3, 3, 12)], move |t, v| {
            let b = t.type_bias(v[0], types);
            let s = t.add(v[1], b);
            t.softmax(s)
        });
    }

    #[test]
    fn cross_entropy_gradient() {
        let targets: &'static [u32] = Box::leak(Box::new(vec![1, 0, 3]));
        check(vec![rand(3, 4, 13)], move |t, v| t.cross_entropy(v[0], targets, 0));
    }
}
