//! Forward and backward rules for every operation the graph can record.

use super::Tensor;
use crate::error::{Error, Result};

/// The operation that produced a graph node.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    Leaf,
    /// `[table (V×d)] -> (n×d)`, rows gathered by index.
    EmbedLookup { indices: Vec<usize> },
    /// `[x, w]` or `[x, w, b]`: `x·w (+ b)` for `x` of shape `(a)` or `(n×a)`.
    Linear,
    /// `[x, wq, wk, wv, wo]`: single-head scaled dot-product self-attention.
    SelfAttention,
    /// `(n×d) -> (d)`
    MeanPool,
    Tanh,
    Relu,
    /// Same shapes, matrix + row vector, or anything + scalar.
    Add,
    Scale(f64),
    /// Vector inner product.
    Dot,
    /// `(m×k)·(k×n)` or `(m×k)·(k)`.
    MatMul,
    Transpose,
    /// Stacks equally shaped inputs along a new leading axis.
    Stack,
    /// Sum of all elements.
    Sum,
    /// Sum of the listed `(row, col)` entries of a matrix.
    PairSum { pairs: Vec<(usize, usize)> },
    /// For each `(row, cols)` group, the max of `m[row, c]` over `cols`; summed.
    GroupMaxSum { groups: Vec<(usize, Vec<usize>)> },
    SoftmaxCrossEntropy { target: usize },
    /// Mean over classes of the stable binary cross-entropy.
    BceWithLogits { targets: Vec<f64> },
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Leaf => "leaf",
            OpKind::EmbedLookup { .. } => "embed_lookup",
            OpKind::Linear => "linear",
            OpKind::SelfAttention => "self_attention_1head",
            OpKind::MeanPool => "mean_pool",
            OpKind::Tanh => "tanh",
            OpKind::Relu => "relu",
            OpKind::Add => "add",
            OpKind::Scale(_) => "scale",
            OpKind::Dot => "dot",
            OpKind::MatMul => "matmul",
            OpKind::Transpose => "transpose",
            OpKind::Stack => "stack",
            OpKind::Sum => "sum",
            OpKind::PairSum { .. } => "pair_sum",
            OpKind::GroupMaxSum { .. } => "group_max_sum",
            OpKind::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            OpKind::BceWithLogits { .. } => "bce_with_logits",
        }
    }
}

/// Intermediate results kept for the backward pass.
#[derive(Clone, Debug, Default)]
pub(crate) enum Aux {
    #[default]
    None,
    Attention {
        q: Vec<f64>,
        k: Vec<f64>,
        v: Vec<f64>,
        probs: Vec<f64>,
        mixed: Vec<f64>,
    },
    Argmax(Vec<usize>),
    Probs(Vec<f64>),
}

/// A gradient contribution to one input of an operation.
pub(crate) enum Contribution {
    Dense(Vec<f64>),
    /// Scatter-add of `rows.len()` rows of width `width` into a matrix.
    Rows {
        width: usize,
        rows: Vec<usize>,
        values: Vec<f64>,
    },
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / s).collect()
}

// ---------------------------------------------------------------------------
// dense kernels

/// `a (m×k) · b (k×n)`
pub(crate) fn mm(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `aᵀ · b` for `a (k×m)`, `b (k×n)`.
pub(crate) fn mm_tn(a: &[f64], k: usize, m: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for p in 0..k {
        let arow = &a[p * m..(p + 1) * m];
        let brow = &b[p * n..(p + 1) * n];
        for (i, &api) in arow.iter().enumerate() {
            if api == 0.0 {
                continue;
            }
            let row = &mut out[i * n..(i + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += api * bv;
            }
        }
    }
    out
}

/// `a · bᵀ` for `a (m×k)`, `b (n×k)`.
pub(crate) fn mm_nt(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    acc.iter_mut().zip(other).for_each(|(a, b)| *a += b);
}

fn as_rows(t: &Tensor) -> Option<(usize, usize)> {
    match t.shape() {
        [n] => Some((1, *n)),
        [m, n] => Some((*m, *n)),
        _ => None,
    }
}

fn expect_inputs(kind: &OpKind, inputs: &[&Tensor], counts: &[usize]) -> Result<()> {
    if counts.contains(&inputs.len()) {
        Ok(())
    } else {
        Err(Error::shape(
            kind.name(),
            format!("expected {counts:?} inputs, got {}", inputs.len()),
        ))
    }
}

fn shapes(inputs: &[&Tensor]) -> String {
    inputs
        .iter()
        .map(|t| format!("{:?}", t.shape()))
        .collect::<Vec<_>>()
        .join(", ")
}

// ---------------------------------------------------------------------------
// forward

pub(crate) fn forward(kind: &OpKind, inputs: &[&Tensor]) -> Result<(Tensor, Aux)> {
    let bad = |detail: &str| Error::shape(kind.name(), format!("{detail}; input shapes [{}]", shapes(inputs)));
    match kind {
        OpKind::Leaf => Err(bad("leaf nodes are not computed")),
        OpKind::EmbedLookup { indices } => {
            expect_inputs(kind, inputs, &[1])?;
            let table = inputs[0];
            let [vocab, d] = table.shape() else {
                return Err(bad("table must be a matrix"));
            };
            if indices.is_empty() {
                return Err(bad("empty index list"));
            }
            let mut out = Vec::with_capacity(indices.len() * d);
            for (position, &index) in indices.iter().enumerate() {
                if index >= *vocab {
                    return Err(Error::IndexOutOfVocabulary {
                        index,
                        size: *vocab,
                        position,
                    });
                }
                out.extend_from_slice(&table.values()[index * d..(index + 1) * d]);
            }
            Ok((Tensor::from_parts(vec![indices.len(), *d], out), Aux::None))
        }
        OpKind::Linear => {
            expect_inputs(kind, inputs, &[2, 3])?;
            let (x, w) = (inputs[0], inputs[1]);
            let (n, a) = as_rows(x).ok_or_else(|| bad("input must be a vector or matrix"))?;
            let [wa, b] = w.shape() else {
                return Err(bad("weight must be a matrix"));
            };
            if *wa != a {
                return Err(bad("input width must equal weight rows"));
            }
            let mut out = mm(x.values(), n, a, w.values(), *b);
            if let Some(bias) = inputs.get(2) {
                if bias.shape() != [*b] {
                    return Err(bad("bias length must equal weight columns"));
                }
                for row in out.chunks_mut(*b) {
                    add_into(row, bias.values());
                }
            }
            let shape = if x.shape().len() == 1 { vec![*b] } else { vec![n, *b] };
            Ok((Tensor::from_parts(shape, out), Aux::None))
        }
        OpKind::SelfAttention => {
            expect_inputs(kind, inputs, &[5])?;
            let x = inputs[0];
            let [n, d] = x.shape() else {
                return Err(bad("input must be a matrix"));
            };
            let (n, d) = (*n, *d);
            if inputs[1..].iter().any(|w| w.shape() != [d, d]) {
                return Err(bad("projections must be d×d"));
            }
            let q = mm(x.values(), n, d, inputs[1].values(), d);
            let k = mm(x.values(), n, d, inputs[2].values(), d);
            let v = mm(x.values(), n, d, inputs[3].values(), d);
            let scale = 1.0 / (d as f64).sqrt();
            let mut probs = mm_nt(&q, n, d, &k, n);
            for row in probs.chunks_mut(n) {
                row.iter_mut().for_each(|s| *s *= scale);
                let p = softmax(row);
                row.copy_from_slice(&p);
            }
            let mixed = mm(&probs, n, n, &v, d);
            let out = mm(&mixed, n, d, inputs[4].values(), d);
            Ok((
                Tensor::from_parts(vec![n, d], out),
                Aux::Attention { q, k, v, probs, mixed },
            ))
        }
        OpKind::MeanPool => {
            expect_inputs(kind, inputs, &[1])?;
            let [n, d] = inputs[0].shape() else {
                return Err(bad("input must be a matrix"));
            };
            let mut out = vec![0.0; *d];
            for row in inputs[0].values().chunks(*d) {
                add_into(&mut out, row);
            }
            let inv = 1.0 / *n as f64;
            out.iter_mut().for_each(|v| *v *= inv);
            Ok((Tensor::from_parts(vec![*d], out), Aux::None))
        }
        OpKind::Tanh | OpKind::Relu | OpKind::Scale(_) => {
            expect_inputs(kind, inputs, &[1])?;
            let x = inputs[0];
            let out = match kind {
                OpKind::Tanh => x.values().iter().map(|v| v.tanh()).collect(),
                OpKind::Relu => x.values().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
                OpKind::Scale(c) => x.values().iter().map(|v| v * c).collect(),
                _ => unreachable!(),
            };
            Ok((Tensor::from_parts(x.shape().to_vec(), out), Aux::None))
        }
        OpKind::Add => {
            expect_inputs(kind, inputs, &[2])?;
            let (a, b) = (inputs[0], inputs[1]);
            let out = if a.shape() == b.shape() {
                let mut out = a.values().to_vec();
                add_into(&mut out, b.values());
                Tensor::from_parts(a.shape().to_vec(), out)
            } else if b.shape().is_empty() || a.shape().is_empty() {
                let (big, s) = if b.shape().is_empty() { (a, b.item()) } else { (b, a.item()) };
                let out = big.values().iter().map(|v| v + s).collect();
                Tensor::from_parts(big.shape().to_vec(), out)
            } else if let ([_, n], [nb]) = (a.shape(), b.shape()) {
                if n != nb {
                    return Err(bad("row vector length must equal matrix columns"));
                }
                let mut out = a.values().to_vec();
                for row in out.chunks_mut(*n) {
                    add_into(row, b.values());
                }
                Tensor::from_parts(a.shape().to_vec(), out)
            } else {
                return Err(bad("incompatible shapes"));
            };
            Ok((out, Aux::None))
        }
        OpKind::Dot => {
            expect_inputs(kind, inputs, &[2])?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape().len() != 1 || a.shape() != b.shape() {
                return Err(bad("dot needs two vectors of equal length"));
            }
            let s = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
            Ok((Tensor::from_parts(vec![], vec![s]), Aux::None))
        }
        OpKind::MatMul => {
            expect_inputs(kind, inputs, &[2])?;
            let (a, b) = (inputs[0], inputs[1]);
            let [m, k] = a.shape() else {
                return Err(bad("left operand must be a matrix"));
            };
            match b.shape() {
                [kb, n] if kb == k => Ok((
                    Tensor::from_parts(vec![*m, *n], mm(a.values(), *m, *k, b.values(), *n)),
                    Aux::None,
                )),
                [kb] if kb == k => Ok((
                    Tensor::from_parts(vec![*m], mm(a.values(), *m, *k, b.values(), 1)),
                    Aux::None,
                )),
                _ => Err(bad("inner dimensions differ")),
            }
        }
        OpKind::Transpose => {
            expect_inputs(kind, inputs, &[1])?;
            let [m, n] = inputs[0].shape() else {
                return Err(bad("input must be a matrix"));
            };
            let x = inputs[0].values();
            let mut out = vec![0.0; m * n];
            for i in 0..*m {
                for j in 0..*n {
                    out[j * m + i] = x[i * n + j];
                }
            }
            Ok((Tensor::from_parts(vec![*n, *m], out), Aux::None))
        }
        OpKind::Stack => {
            if inputs.is_empty() {
                return Err(bad("nothing to stack"));
            }
            let s = inputs[0].shape();
            if inputs.iter().any(|t| t.shape() != s) {
                return Err(bad("stacked inputs must share a shape"));
            }
            let mut out = Vec::with_capacity(inputs.len() * inputs[0].len());
            for t in inputs {
                out.extend_from_slice(t.values());
            }
            let mut shape = vec![inputs.len()];
            shape.extend_from_slice(s);
            Ok((Tensor::from_parts(shape, out), Aux::None))
        }
        OpKind::Sum => {
            expect_inputs(kind, inputs, &[1])?;
            Ok((
                Tensor::from_parts(vec![], vec![inputs[0].values().iter().sum()]),
                Aux::None,
            ))
        }
        OpKind::PairSum { pairs } => {
            expect_inputs(kind, inputs, &[1])?;
            let [m, n] = inputs[0].shape() else {
                return Err(bad("input must be a matrix"));
            };
            if pairs.iter().any(|&(a, b)| a >= *m || b >= *n) {
                return Err(bad("pair index out of range"));
            }
            let x = inputs[0].values();
            let s = pairs.iter().map(|&(a, b)| x[a * n + b]).sum();
            Ok((Tensor::from_parts(vec![], vec![s]), Aux::None))
        }
        OpKind::GroupMaxSum { groups } => {
            expect_inputs(kind, inputs, &[1])?;
            let [m, n] = inputs[0].shape() else {
                return Err(bad("input must be a matrix"));
            };
            let x = inputs[0].values();
            let mut argmax = Vec::with_capacity(groups.len());
            let mut s = 0.0;
            for (row, cols) in groups {
                if *row >= *m || cols.is_empty() || cols.iter().any(|&c| c >= *n) {
                    return Err(bad("group index out of range or empty"));
                }
                let mut best = cols[0];
                for &c in &cols[1..] {
                    if x[row * n + c] > x[row * n + best] {
                        best = c;
                    }
                }
                s += x[row * n + best];
                argmax.push(best);
            }
            Ok((Tensor::from_parts(vec![], vec![s]), Aux::Argmax(argmax)))
        }
        OpKind::SoftmaxCrossEntropy { target } => {
            expect_inputs(kind, inputs, &[1])?;
            let z = inputs[0];
            if z.shape().len() != 1 {
                return Err(bad("logits must be a vector"));
            }
            let k = z.len();
            if *target >= k {
                return Err(Error::InvalidArgument(format!(
                    "target class {target} out of range for {k} logits"
                )));
            }
            let z = z.values();
            let (imax, m) = z
                .iter()
                .cloned()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            let rest: f64 = z
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != imax)
                .map(|(_, v)| (v - m).exp())
                .sum();
            let loss = rest.ln_1p() + (m - z[*target]);
            Ok((Tensor::from_parts(vec![], vec![loss]), Aux::Probs(softmax(z))))
        }
        OpKind::BceWithLogits { targets } => {
            expect_inputs(kind, inputs, &[1])?;
            let z = inputs[0];
            if z.shape().len() != 1 || z.len() != targets.len() {
                return Err(bad("logits and targets must be vectors of equal length"));
            }
            if targets.iter().any(|&t| t != 0.0 && t != 1.0) {
                return Err(Error::InvalidArgument("multihot entries must be 0 or 1".into()));
            }
            let k = targets.len() as f64;
            let loss: f64 = z
                .values()
                .iter()
                .zip(targets)
                .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
                .sum::<f64>()
                / k;
            Ok((Tensor::from_parts(vec![], vec![loss]), Aux::None))
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// backward

/// Gradient contributions to each input given the output gradient `g`.
/// Entries are `None` where `needs[i]` is false.
pub(crate) fn backward(
    kind: &OpKind,
    inputs: &[&Tensor],
    out: &Tensor,
    aux: &Aux,
    g: &[f64],
    needs: &[bool],
) -> Vec<Option<Contribution>> {
    let mut res: Vec<Option<Contribution>> = (0..inputs.len()).map(|_| None).collect();
    let dense = |v: Vec<f64>| Some(Contribution::Dense(v));
    match kind {
        OpKind::Leaf => {}
        OpKind::EmbedLookup { indices } => {
            let d = inputs[0].shape()[1];
            res[0] = Some(Contribution::Rows {
                width: d,
                rows: indices.clone(),
                values: g.to_vec(),
            });
        }
        OpKind::Linear => {
            let (x, w) = (inputs[0], inputs[1]);
            let (n, a) = as_rows(x).expect("checked in forward");
            let b = w.shape()[1];
            if needs[0] {
                res[0] = dense(mm_nt(g, n, b, w.values(), a));
            }
            if needs[1] {
                res[1] = dense(mm_tn(x.values(), n, a, g, b));
            }
            if inputs.len() == 3 && needs[2] {
                let mut db = vec![0.0; b];
                for row in g.chunks(b) {
                    add_into(&mut db, row);
                }
                res[2] = dense(db);
            }
        }
        OpKind::SelfAttention => {
            let Aux::Attention { q, k, v, probs, mixed } = aux else {
                unreachable!("attention aux missing")
            };
            let x = inputs[0];
            let (n, d) = (x.shape()[0], x.shape()[1]);
            let scale = 1.0 / (d as f64).sqrt();
            let wo = inputs[4].values();
            if needs[4] {
                res[4] = dense(mm_tn(mixed, n, d, g, d));
            }
            let d_mixed = mm_nt(g, n, d, wo, d);
            let d_probs = mm_nt(&d_mixed, n, d, v, n);
            let d_v = mm_tn(probs, n, n, &d_mixed, d);
            let mut d_scores = vec![0.0; n * n];
            for i in 0..n {
                let p = &probs[i * n..(i + 1) * n];
                let dp = &d_probs[i * n..(i + 1) * n];
                let inner: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
                for j in 0..n {
                    d_scores[i * n + j] = p[j] * (dp[j] - inner) * scale;
                }
            }
            let d_q = mm(&d_scores, n, n, k, d);
            let d_k = mm_tn(&d_scores, n, n, q, d);
            if needs[1] {
                res[1] = dense(mm_tn(x.values(), n, d, &d_q, d));
            }
            if needs[2] {
                res[2] = dense(mm_tn(x.values(), n, d, &d_k, d));
            }
            if needs[3] {
                res[3] = dense(mm_tn(x.values(), n, d, &d_v, d));
            }
            if needs[0] {
                let mut dx = mm_nt(&d_q, n, d, inputs[1].values(), d);
                add_into(&mut dx, &mm_nt(&d_k, n, d, inputs[2].values(), d));
                add_into(&mut dx, &mm_nt(&d_v, n, d, inputs[3].values(), d));
                res[0] = dense(dx);
            }
        }
        OpKind::MeanPool => {
            let n = inputs[0].shape()[0];
            let inv = 1.0 / n as f64;
            let row: Vec<f64> = g.iter().map(|v| v * inv).collect();
            res[0] = dense(row.repeat(n));
        }
        OpKind::Tanh => {
            res[0] = dense(out.values().iter().zip(g).map(|(y, gy)| gy * (1.0 - y * y)).collect());
        }
        OpKind::Relu => {
            res[0] = dense(
                inputs[0]
                    .values()
                    .iter()
                    .zip(g)
                    .map(|(&x, &gy)| if x > 0.0 { gy } else { 0.0 })
                    .collect(),
            );
        }
        OpKind::Scale(c) => {
            res[0] = dense(g.iter().map(|v| v * c).collect());
        }
        OpKind::Add => {
            let (a, b) = (inputs[0], inputs[1]);
            let reduce = |t: &Tensor| -> Vec<f64> {
                if t.shape() == out.shape() {
                    g.to_vec()
                } else if t.shape().is_empty() {
                    vec![g.iter().sum()]
                } else {
                    let n = t.len();
                    let mut acc = vec![0.0; n];
                    for row in g.chunks(n) {
                        add_into(&mut acc, row);
                    }
                    acc
                }
            };
            if needs[0] {
                res[0] = dense(reduce(a));
            }
            if needs[1] {
                res[1] = dense(reduce(b));
            }
        }
        OpKind::Dot => {
            let s = g[0];
            if needs[0] {
                res[0] = dense(inputs[1].values().iter().map(|v| v * s).collect());
            }
            if needs[1] {
                res[1] = dense(inputs[0].values().iter().map(|v| v * s).collect());
            }
        }
        OpKind::MatMul => {
            let (a, b) = (inputs[0], inputs[1]);
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = if b.shape().len() == 2 { b.shape()[1] } else { 1 };
            if needs[0] {
                res[0] = dense(mm_nt(g, m, n, b.values(), k));
            }
            if needs[1] {
                res[1] = dense(mm_tn(a.values(), m, k, g, n));
            }
        }
        OpKind::Transpose => {
            let (m, n) = (inputs[0].shape()[0], inputs[0].shape()[1]);
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = g[j * m + i];
                }
            }
            res[0] = dense(dx);
        }
        OpKind::Stack => {
            let w = inputs[0].len();
            for (i, chunk) in g.chunks(w).enumerate() {
                if needs[i] {
                    res[i] = dense(chunk.to_vec());
                }
            }
        }
        OpKind::Sum => {
            res[0] = dense(vec![g[0]; inputs[0].len()]);
        }
        OpKind::PairSum { pairs } => {
            let n = inputs[0].shape()[1];
            let mut dx = vec![0.0; inputs[0].len()];
            for &(a, b) in pairs {
                dx[a * n + b] += g[0];
            }
            res[0] = dense(dx);
        }
        OpKind::GroupMaxSum { groups } => {
            let Aux::Argmax(argmax) = aux else {
                unreachable!("argmax aux missing")
            };
            let n = inputs[0].shape()[1];
            let mut dx = vec![0.0; inputs[0].len()];
            for ((row, _), &col) in groups.iter().zip(argmax) {
                dx[row * n + col] += g[0];
            }
            res[0] = dense(dx);
        }
        OpKind::SoftmaxCrossEntropy { target } => {
            let Aux::Probs(p) = aux else {
                unreachable!("softmax aux missing")
            };
            let mut dz: Vec<f64> = p.iter().map(|v| v * g[0]).collect();
            dz[*target] -= g[0];
            res[0] = dense(dz);
        }
        OpKind::BceWithLogits { targets } => {
            let k = targets.len() as f64;
            res[0] = dense(
                inputs[0]
                    .values()
                    .iter()
                    .zip(targets)
                    .map(|(&x, &y)| (sigmoid(x) - y) * g[0] / k)
                    .collect(),
            );
        }
    }
    res
}
