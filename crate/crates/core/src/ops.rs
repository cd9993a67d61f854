//! Forward kernels of the encoder: scaled dot-product attention with an
//! additive bias, component pooling, type-bias lookup and gather-residual.
//!
//! The autodiff tape calls these same functions for its forward values.

use thiserror::Error;

use crate::tensor::Matrix;
use crate::topology::{TypeMatrix, BLOCKED_THRESHOLD};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Number of connection types, including the "no connection" type 0.
pub const NUM_TYPES: usize = 5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("component {0} has no token spans")]
    EmptySpans(usize),
    #[error("unknown connection type {0}")]
    UnknownType(u8),
}

fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> OpError {
    OpError::ShapeMismatch(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}

/// Row-wise softmax. A row whose every entry is at or below the blocked
/// threshold produces all zeros.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let row = x.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max <= BLOCKED_THRESHOLD {
            continue;
        }
        let dst = out.row_mut(i);
        let mut sum = 0.0;
        for (d, &v) in dst.iter_mut().zip(row) {
            *d = (v - max).exp();
            sum += *d;
        }
        let inv = 1.0 / sum;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    out
}

/// Attention probabilities `softmax(QKᵀ/√d_k + bias)`.
pub fn attention_weights(q: &Matrix, k: &Matrix, bias: Option<&Matrix>) -> Result<Matrix, OpError> {
    if q.cols != k.cols {
        return Err(shape_err("query/key width", q.shape(), k.shape()));
    }
    let mut scores = q.matmul_nt(k);
    scores.scale_assign(1.0 / (q.cols as f64).sqrt());
    if let Some(b) = bias {
        if b.shape() != scores.shape() {
            return Err(shape_err("bias", b.shape(), scores.shape()));
        }
        scores.add_assign(b);
    }
    Ok(softmax_rows(&scores))
}

/// Single-head `softmax(QKᵀ/√d_k + bias)·V`; fully blocked rows return zero.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix, bias: Option<&Matrix>) -> Result<Matrix, OpError> {
    if k.rows != v.rows {
        return Err(shape_err("key/value rows", k.shape(), v.shape()));
    }
    Ok(attention_weights(q, k, bias)?.matmul(v))
}

/// Averages the token rows of each component's spans into an `m_slots x d`
/// matrix. Rows beyond the live components are zero.
pub fn pool_components(tokens: &Matrix, spans: &[Vec<(usize, usize)>], m_slots: usize) -> Result<Matrix, OpError> {
    if spans.len() > m_slots {
        return Err(OpError::ShapeMismatch(format!(
            "{} components exceed {m_slots} slots",
            spans.len()
        )));
    }
    let mut out = Matrix::zeros(m_slots, tokens.cols);
    for (c, ranges) in spans.iter().enumerate() {
        let count: usize = ranges.iter().map(|(s, e)| e - s).sum();
        if count == 0 {
            return Err(OpError::EmptySpans(c));
        }
        let dst = out.row_mut(c);
        for &(s, e) in ranges {
            if e > tokens.rows || s > e {
                return Err(OpError::ShapeMismatch(format!(
                    "span {s}..{e} outside {} tokens",
                    tokens.rows
                )));
            }
            for t in s..e {
                for (d, v) in dst.iter_mut().zip(tokens.row(t)) {
                    *d += v;
                }
            }
        }
        let inv = 1.0 / count as f64;
        dst.iter_mut().for_each(|d| *d *= inv);
    }
    Ok(out)
}

/// Looks up `gamma[T_ij]` for every cell; type 0 always yields exactly 0.
pub fn type_bias(gamma: &[f64], types: &TypeMatrix) -> Result<Matrix, OpError> {
    if gamma.len() != NUM_TYPES {
        return Err(OpError::ShapeMismatch(format!(
            "type table has {} entries, expected {NUM_TYPES}",
            gamma.len()
        )));
    }
    let m = types.m_slots;
    let mut out = Matrix::zeros(m, m);
    for (o, &t) in out.data.iter_mut().zip(&types.values) {
        match t {
            0 => {}
            1..=4 => *o = gamma[t as usize],
            other => return Err(OpError::UnknownType(other)),
        }
    }
    Ok(out)
}

/// Scatters component rows back to their tokens; tokens outside every span
/// receive zeros.
pub fn gather(graph_states: &Matrix, owners: &[Option<usize>]) -> Matrix {
    let mut out = Matrix::zeros(owners.len(), graph_states.cols);
    for (t, owner) in owners.iter().enumerate() {
        if let Some(c) = owner {
            out.row_mut(t).copy_from_slice(graph_states.row(*c));
        }
    }
    out
}

/// `gather(graph_states) + token_states`.
pub fn gather_residual(
    graph_states: &Matrix,
    spans: &[Vec<(usize, usize)>],
    token_states: &Matrix,
) -> Result<Matrix, OpError> {
    if graph_states.cols != token_states.cols {
        return Err(shape_err("state width", graph_states.shape(), token_states.shape()));
    }
    if spans.len() > graph_states.rows {
        return Err(OpError::ShapeMismatch(format!(
            "{} components but {} graph rows",
            spans.len(),
            graph_states.rows
        )));
    }
    let mut owners = vec![None; token_states.rows];
    for (c, ranges) in spans.iter().enumerate() {
        for &(s, e) in ranges {
            if e > token_states.rows || s > e {
                return Err(OpError::ShapeMismatch(format!(
                    "span {s}..{e} outside {} tokens",
                    token_states.rows
                )));
            }
            owners[s..e].iter_mut().for_each(|o| *o = Some(c));
        }
    }
    let mut out = gather(graph_states, &owners);
    out.add_assign(token_states);
    Ok(out)
}

/// Normalizes each row; returns `(output, normalized, inverse std per row)`.
pub fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, Matrix, Vec<f64>) {
    let d = x.cols as f64;
    let mut norm = Matrix::zeros(x.rows, x.cols);
    let mut out = Matrix::zeros(x.rows, x.cols);
    let mut inv_std = Vec::with_capacity(x.rows);
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        let n = norm.row_mut(i);
        for (nv, v) in n.iter_mut().zip(row) {
            *nv = (v - mean) * inv;
        }
        let o = &mut out.data[i * x.cols..(i + 1) * x.cols];
        for (j, ov) in o.iter_mut().enumerate() {
            *ov = norm.data[i * x.cols + j] * gain.data[j] + bias.data[j];
        }
    }
    (out, norm, inv_std)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh approximation of GELU.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::BLOCKED;

    #[test]
    fn singleton_key_returns_value_row() {
        let q = Matrix::from_rows(&[vec![0.3, -2.0], vec![5.0, 1.0]]);
        let k = Matrix::from_rows(&[vec![1.0, 1.0]]);
        let v = Matrix::from_rows(&[vec![4.0, -1.0, 2.0]]);
        let out = attention(&q, &k, &v, None).unwrap();
        for i in 0..2 {
            assert_eq!(out.row(i), v.row(0));
        }
    }

    #[test]
    fn fully_blocked_row_is_zero() {
        let q = Matrix::from_rows(&[vec![1.0], vec![2.0]]);
        let k = Matrix::from_rows(&[vec![1.0], vec![-1.0]]);
        let v = Matrix::from_rows(&[vec![3.0], vec![5.0]]);
        let bias = Matrix::from_rows(&[vec![BLOCKED, BLOCKED], vec![0.0, BLOCKED]]);
        let out = attention(&q, &k, &v, Some(&bias)).unwrap();
        assert_eq!(out.row(0), &[0.0]);
        assert_eq!(out.row(1), &[3.0]);
    }

    #[test]
    fn attention_shape_errors() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 4);
        assert!(matches!(attention(&a, &b, &b, None), Err(OpError::ShapeMismatch(_))));
        assert!(matches!(
            attention(&a, &a, &Matrix::zeros(3, 1), None),
            Err(OpError::ShapeMismatch(_))
        ));
        assert!(matches!(
            attention(&a, &a, &a, Some(&Matrix::zeros(3, 3))),
            Err(OpError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn pooling_averages_all_spans() {
        let tokens = Matrix::from_fn(8, 2, |i, j| (i * 10 + j) as f64);
        let spans = vec![vec![(2, 4), (7, 8)], vec![(0, 1)]];
        let out = pool_components(&tokens, &spans, 4).unwrap();
        let expect = |j: usize| (tokens.get(2, j) + tokens.get(3, j) + tokens.get(7, j)) / 3.0;
        assert_eq!(out.row(0), &[expect(0), expect(1)]);
        assert_eq!(out.row(1), tokens.row(0));
        assert_eq!(out.row(2), &[0.0, 0.0]);
        assert_eq!(out.row(3), &[0.0, 0.0]);
    }

    #[test]
    fn pooling_rejects_empty_spans() {
        let tokens = Matrix::zeros(3, 2);
        assert_eq!(
            pool_components(&tokens, &[vec![(0, 1)], vec![]], 3),
            Err(OpError::EmptySpans(1))
        );
    }

    #[test]
    fn pooling_constant_rows() {
        let tokens = Matrix::filled(6, 3, 0.25);
        let out = pool_components(&tokens, &[vec![(1, 2)], vec![(3, 6)]], 2).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.25));
    }

    #[test]
    fn type_bias_lookup() {
        let gamma = [0.0, 0.1, 0.2, 0.3, 0.4];
        let types = TypeMatrix {
            m_slots: 2,
            values: vec![0, 2, 3, 0],
        };
        let b = type_bias(&gamma, &types).unwrap();
        assert_eq!(b.data, vec![0.0, 0.2, 0.3, 0.0]);
        let zero = TypeMatrix {
            m_slots: 2,
            values: vec![0; 4],
        };
        assert!(type_bias(&[9.0; 5], &zero).unwrap().data.iter().all(|&v| v == 0.0));
        let bad = TypeMatrix {
            m_slots: 1,
            values: vec![7],
        };
        assert_eq!(type_bias(&gamma, &bad), Err(OpError::UnknownType(7)));
    }

    #[test]
    fn gather_residual_identity_and_shift() {
        let tokens = Matrix::from_fn(5, 2, |i, j| (i + j) as f64);
        let spans = vec![vec![(1, 3)]];
        let zero = Matrix::zeros(3, 2);
        assert_eq!(gather_residual(&zero, &spans, &tokens).unwrap(), tokens);
        let mut g = Matrix::zeros(3, 2);
        g.row_mut(0).copy_from_slice(&[1.0, -1.0]);
        let out = gather_residual(&g, &spans, &tokens).unwrap();
        assert_eq!(out.row(1), &[2.0, 1.0]);
        assert_eq!(out.row(2), &[3.0, 2.0]);
        assert_eq!(out.row(0), tokens.row(0));
        assert_eq!(out.row(3), tokens.row(3));
    }

    #[test]
    fn pool_identity_gather_doubles_constant_spans() {
        let tokens = Matrix::filled(7, 3, 1.5);
        let spans = vec![vec![(1, 2), (4, 5)], vec![(2, 3)], vec![(5, 7)]];
        let pooled = pool_components(&tokens, &spans, 5).unwrap();
        let out = gather_residual(&pooled, &spans, &tokens).unwrap();
        for t in 0..7 {
            let expect = if [0, 3].contains(&t) { 1.5 } else { 3.0 };
            assert!(out.row(t).iter().all(|&v| v == expect), "token {t}");
        }
    }

    #[test]
    fn gelu_derivative_matches_difference() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }
}
