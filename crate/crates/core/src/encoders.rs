//! Text and feature encoders.
//!
//! A text encoder embeds tokens, applies one single-head self-attention
//! layer with a residual connection and produces two views: per-token
//! vectors for lexical matching and a mean-pooled vector for the bi-encoder
//! dot product. Parameters live in a [`ParamStore`] under a name prefix
//! (`f`, `g`, `h`), so encoders never share weights.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{BoundParams, ParamStore};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::text::TokenSequence;

pub const TEXT_PARTS: [&str; 9] = ["embed", "wq", "wk", "wv", "wo", "pool_w", "pool_b", "tok_w", "tok_b"];
pub const FEATURE_PARTS: [&str; 4] = ["w1", "b1", "w2", "b2"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextEncoderDims {
    pub vocab_size: usize,
    pub d_emb: usize,
    pub d_model: usize,
    pub d_tok: usize,
    /// Adds fixed sinusoidal position vectors to the embeddings.
    pub positional: bool,
}

fn pname(prefix: &str, part: &str) -> String {
    format!("{prefix}.{part}")
}

/// Graph handles of one text encoder.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub embed: NodeId,
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
    pub pool_w: NodeId,
    pub pool_b: NodeId,
    pub tok_w: NodeId,
    pub tok_b: NodeId,
    pub positional: bool,
}

impl EncoderParams {
    pub fn param_names(prefix: &str) -> Vec<String> {
        TEXT_PARTS.iter().map(|p| pname(prefix, p)).collect()
    }

    pub fn init(store: &mut ParamStore, prefix: &str, dims: &TextEncoderDims, seed: u64) -> Result<()> {
        let TextEncoderDims { vocab_size: v, d_emb: e, d_model: m, d_tok: t, .. } = *dims;
        if v < 2 || e == 0 || m == 0 || t == 0 {
            return Err(Error::InvalidArgument(format!("degenerate encoder dimensions {dims:?}")));
        }
        store.init_uniform(seed, &pname(prefix, "embed"), vec![v, e], e)?;
        for w in ["wq", "wk", "wv", "wo"] {
            store.init_uniform(seed, &pname(prefix, w), vec![e, e], e)?;
        }
        store.init_uniform(seed, &pname(prefix, "pool_w"), vec![e, m], e)?;
        store.init_uniform(seed, &pname(prefix, "pool_b"), vec![m], e)?;
        store.init_uniform(seed, &pname(prefix, "tok_w"), vec![e, t], e)?;
        store.init_uniform(seed, &pname(prefix, "tok_b"), vec![t], e)?;
        Ok(())
    }

    pub fn bind(bound: &BoundParams, prefix: &str, positional: bool) -> Result<Self> {
        let n = |p: &str| bound.node(&pname(prefix, p));
        Ok(EncoderParams {
            embed: n("embed")?,
            wq: n("wq")?,
            wk: n("wk")?,
            wv: n("wv")?,
            wo: n("wo")?,
            pool_w: n("pool_w")?,
            pool_b: n("pool_b")?,
            tok_w: n("tok_w")?,
            tok_b: n("tok_b")?,
            positional,
        })
    }
}

/// Pooled vector plus per-token vectors aligned with `surfaces`.
#[derive(Clone, Debug)]
pub struct EncodedText {
    pub pooled: NodeId,
    pub token_reps: NodeId,
    pub surfaces: Vec<String>,
    pub ids: Vec<usize>,
}

/// `sin`/`cos` position table of shape `(n × d)`.
pub fn sinusoidal_positions(n: usize, d: usize) -> Tensor {
    let mut v = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d {
            let rate = 1.0 / 10_000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 * rate;
            v.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::from_parts(vec![n, d], v)
}

pub fn encode_text(g: &mut Graph, p: &EncoderParams, seq: &TokenSequence) -> Result<EncodedText> {
    if seq.is_empty() {
        return Err(Error::InvalidArgument("cannot encode an empty token sequence".into()));
    }
    let ids = seq.ids();
    let mut x = g.embed_lookup(p.embed, &ids)?;
    if p.positional {
        let d = g.value(x).shape()[1];
        let pe = g.constant(sinusoidal_positions(ids.len(), d));
        x = g.add(x, pe)?;
    }
    let att = g.self_attention(x, p.wq, p.wk, p.wv, p.wo)?;
    let h = g.add(x, att)?;
    let token_reps = g.linear(h, p.tok_w, Some(p.tok_b))?;
    let mean = g.mean_pool(h)?;
    let pooled = g.linear(mean, p.pool_w, Some(p.pool_b))?;
    debug_assert!(g.value(pooled).values().iter().all(|v| v.is_finite()));
    Ok(EncodedText {
        pooled,
        token_reps,
        surfaces: seq.surfaces().map(str::to_string).collect(),
        ids,
    })
}

/// One-hidden-layer tanh MLP over fixed-length feature vectors:
/// `tanh(v·W1 + b1)·W2 + b2`.
#[derive(Clone, Debug)]
pub struct FeatureEncoderParams {
    pub w1: NodeId,
    pub b1: NodeId,
    pub w2: NodeId,
    pub b2: NodeId,
}

impl FeatureEncoderParams {
    pub fn param_names(prefix: &str) -> Vec<String> {
        FEATURE_PARTS.iter().map(|p| pname(prefix, p)).collect()
    }

    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        feature_dim: usize,
        hidden: usize,
        d_model: usize,
        seed: u64,
    ) -> Result<()> {
        if feature_dim == 0 || hidden == 0 || d_model == 0 {
            return Err(Error::InvalidArgument("feature encoder dimensions must be positive".into()));
        }
        store.init_uniform(seed, &pname(prefix, "w1"), vec![feature_dim, hidden], feature_dim)?;
        store.init_uniform(seed, &pname(prefix, "b1"), vec![hidden], feature_dim)?;
        store.init_uniform(seed, &pname(prefix, "w2"), vec![hidden, d_model], hidden)?;
        store.init_uniform(seed, &pname(prefix, "b2"), vec![d_model], hidden)?;
        Ok(())
    }

    pub fn bind(bound: &BoundParams, prefix: &str) -> Result<Self> {
        let n = |p: &str| bound.node(&pname(prefix, p));
        Ok(FeatureEncoderParams { w1: n("w1")?, b1: n("b1")?, w2: n("w2")?, b2: n("b2")? })
    }
}

pub fn encode_features(g: &mut Graph, p: &FeatureEncoderParams, v: &[f64]) -> Result<NodeId> {
    let dim = g.value(p.w1).shape()[0];
    if v.len() != dim {
        return Err(Error::shape("encode_features", format!("expected {dim} features, got {}", v.len())));
    }
    let x = g.constant(Tensor::vector(v.to_vec())?);
    let hid = g.linear(x, p.w1, Some(p.b1))?;
    let hid = g.tanh(hid)?;
    g.linear(hid, p.w2, Some(p.b2))
}

/// The input projection `P` and, for annotated image inputs, `P_I`.
#[derive(Clone, Copy, Debug)]
pub struct Projections {
    pub p: NodeId,
    pub p_i: Option<NodeId>,
}

pub const PROJ_P: &str = "proj.p";
pub const PROJ_P_I: &str = "proj.p_i";

impl Projections {
    pub fn init(store: &mut ParamStore, d_model: usize, with_p_i: bool, seed: u64) -> Result<()> {
        store.init_uniform(seed, PROJ_P, vec![d_model, d_model], d_model)?;
        if with_p_i {
            store.init_uniform(seed, PROJ_P_I, vec![d_model, d_model], d_model)?;
        }
        Ok(())
    }

    pub fn bind(bound: &BoundParams) -> Result<Self> {
        Ok(Projections { p: bound.node(PROJ_P)?, p_i: bound.node(PROJ_P_I).ok() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;
    use crate::text::Vocabulary;

    fn dims() -> TextEncoderDims {
        TextEncoderDims { vocab_size: 6, d_emb: 4, d_model: 3, d_tok: 2, positional: false }
    }

    fn setup(positional: bool) -> (Graph, EncoderParams, Vocabulary) {
        let mut store = ParamStore::new();
        EncoderParams::init(&mut store, "f", &dims(), 11).unwrap();
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let p = EncoderParams::bind(&bound, "f", positional).unwrap();
        (g, p, Vocabulary::build(["a", "b", "c", "d"]))
    }

    #[test]
    fn output_shapes() {
        let (mut g, p, v) = setup(false);
        for n in 1..6 {
            let words: Vec<&str> = ["a", "b", "c", "d", "zz"].iter().copied().cycle().take(n).collect();
            let e = encode_text(&mut g, &p, &v.encode(&words, 128)).unwrap();
            assert_eq!(g.value(e.pooled).shape(), [3]);
            assert_eq!(g.value(e.token_reps).shape(), [n, 2]);
            assert_eq!(e.surfaces.len(), n);
        }
        assert!(encode_text(&mut g, &p, &v.encode::<&str>(&[], 128)).is_err());
    }

    #[test]
    fn permutation_equivariant_without_positions() {
        let (mut g, p, v) = setup(false);
        let a = encode_text(&mut g, &p, &v.encode(&["a", "b", "c"], 128)).unwrap();
        let b = encode_text(&mut g, &p, &v.encode(&["b", "a", "c"], 128)).unwrap();
        let (ra, rb) = (g.value(a.token_reps).values().to_vec(), g.value(b.token_reps).values().to_vec());
        for (i, j) in [(0, 1), (1, 0), (2, 2)] {
            for k in 0..2 {
                assert!((ra[i * 2 + k] - rb[j * 2 + k]).abs() < 1e-12);
            }
        }
        let (pa, pb) = (g.value(a.pooled).values(), g.value(b.pooled).values());
        assert!(pa.iter().zip(pb).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn positions_break_equivariance() {
        let (mut g, p, v) = setup(true);
        let a = encode_text(&mut g, &p, &v.encode(&["a", "b"], 128)).unwrap();
        let b = encode_text(&mut g, &p, &v.encode(&["b", "a"], 128)).unwrap();
        assert_ne!(g.value(a.pooled).values(), g.value(b.pooled).values());
    }

    #[test]
    fn gradient_check_through_encoder() {
        let (mut g, p, v) = setup(false);
        let e = encode_text(&mut g, &p, &v.encode(&["a", "b", "a", "zz"], 128)).unwrap();
        let s1 = g.dot(e.pooled, e.pooled).unwrap();
        let r = g.sum(e.token_reps).unwrap();
        let t = g.tanh(r).unwrap();
        let loss = g.add(s1, t).unwrap();
        let report = finite_difference_check(&mut g, loss, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
        assert!(report.checked > 50);
    }

    #[test]
    fn feature_encoder_identity_and_zero() {
        let mut store = ParamStore::new();
        store.insert("feat.w1", Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        store.insert("feat.b1", Tensor::zeros(vec![3]).unwrap());
        store.insert("feat.w2", Tensor::matrix(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap());
        store.insert("feat.b2", Tensor::zeros(vec![3]).unwrap());
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let p = FeatureEncoderParams::bind(&bound, "feat").unwrap();
        let x = [0.04, -0.03, 0.01];
        let out = encode_features(&mut g, &p, &x).unwrap();
        for (o, i) in g.value(out).values().iter().zip(x) {
            assert!((o - i).abs() < 1e-3);
        }
        assert!(encode_features(&mut g, &p, &[1.0]).is_err());

        let mut zero = ParamStore::new();
        for (n, s) in [("feat.w1", vec![3, 2]), ("feat.b1", vec![2]), ("feat.w2", vec![2, 4]), ("feat.b2", vec![4])] {
            zero.insert(n, Tensor::zeros(s).unwrap());
        }
        let mut g = Graph::new();
        let bound = zero.bind(&mut g);
        let p = FeatureEncoderParams::bind(&bound, "feat").unwrap();
        let out = encode_features(&mut g, &p, &[0.5, -2.0, 7.0]).unwrap();
        assert!(g.value(out).values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn feature_encoder_gradient_check() {
        let mut store = ParamStore::new();
        FeatureEncoderParams::init(&mut store, "feat", 5, 4, 3, 2).unwrap();
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let p = FeatureEncoderParams::bind(&bound, "feat").unwrap();
        let out = encode_features(&mut g, &p, &[0.3, -0.2, 0.9, 0.1, -0.7]).unwrap();
        let loss = g.dot(out, out).unwrap();
        let report = finite_difference_check(&mut g, loss, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn encoders_are_parameter_disjoint() {
        let mut store = ParamStore::new();
        for prefix in ["f", "g", "h"] {
            EncoderParams::init(&mut store, prefix, &dims(), 5).unwrap();
        }
        let mut g = Graph::new();
        let bound = store.bind(&mut g);
        let ids = |prefix| {
            let p = EncoderParams::bind(&bound, prefix, false).unwrap();
            vec![p.embed, p.wq, p.wk, p.wv, p.wo, p.pool_w, p.pool_b, p.tok_w, p.tok_b]
        };
        let (f, gg, h) = (ids("f"), ids("g"), ids("h"));
        for id in &f {
            assert!(!gg.contains(id) && !h.contains(id));
        }
        for id in &gg {
            assert!(!h.contains(id));
        }
        assert_ne!(store.get("f.embed"), store.get("g.embed"));
    }
}
