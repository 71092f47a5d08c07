//! Name- and word-vector baselines.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::{Rng, RngCore};
use serde::Deserialize;

use super::{score_bienc, OutputMatrixBatch};
use crate::descstore::{sample_description, Description, DescriptionCatalog};
use crate::error::{Error, Result};
use crate::labels::{ClassId, LabelSpace};
use crate::rng::{stream, sub_seed};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::text::tokenize;

/// Frozen word vectors, from a file or from a seeded random table.
#[derive(Clone, Debug, PartialEq)]
pub struct WordVectors {
    dim: usize,
    table: BTreeMap<String, Vec<f64>>,
    /// When set, tokens missing from `table` get a vector seeded by the token.
    fallback_seed: Option<u64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VectorRecord {
    token: String,
    vector: Vec<f64>,
}

impl WordVectors {
    pub fn random(dim: usize, seed: u64) -> Self {
        WordVectors { dim, table: BTreeMap::new(), fallback_seed: Some(seed) }
    }

    pub fn from_table(dim: usize, table: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((t, v)) = table.iter().find(|(_, v)| v.len() != dim) {
            return Err(Error::Validation(format!("word vector for `{t}` has length {}, expected {dim}", v.len())));
        }
        Ok(WordVectors { dim, table, fallback_seed: None })
    }

    /// JSON Lines `{"token": ..., "vector": [...]}`.
    pub fn load(path: &Path, dim: usize) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table = BTreeMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: VectorRecord =
                serde_json::from_str(&line).map_err(|e| Error::json(format!("{}:{}", path.display(), i + 1), e))?;
            table.insert(r.token.to_lowercase(), r.vector);
        }
        WordVectors::from_table(dim, table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vector(&self, token: &str) -> Option<Vec<f64>> {
        if let Some(v) = self.table.get(token) {
            return Some(v.clone());
        }
        let seed = self.fallback_seed?;
        let mut rng = stream(sub_seed(seed, "word-vectors"), token);
        let scale = (3.0 / self.dim as f64).sqrt();
        Some((0..self.dim).map(|_| rng.gen_range(-scale..scale)).collect())
    }

    /// Mean vector of the known tokens; `None` if none is known.
    pub fn mean<S: AsRef<str>>(&self, tokens: &[S]) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for t in tokens {
            if let Some(v) = self.vector(t.as_ref()) {
                acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b);
                n += 1;
            }
        }
        (n > 0).then(|| acc.into_iter().map(|a| a / n as f64).collect())
    }
}

/// `(K × dim)` matrix of class-name vectors (mean over name tokens).
pub fn name_vector_matrix(wv: &WordVectors, labels: &LabelSpace, classes: &[ClassId]) -> Result<Tensor> {
    let mut values = Vec::with_capacity(classes.len() * wv.dim());
    for &c in classes {
        let name = labels.name(c);
        let v = wv
            .mean(&tokenize(name))
            .ok_or_else(|| Error::Validation(format!("no word vector for class name `{name}`")))?;
        values.extend(v);
    }
    Tensor::matrix(classes.len(), wv.dim(), values)
}

/// Mean word vectors of one sampled description per class (ascending class
/// order, one draw per class), plus the sampled hashes.
pub fn description_vector_matrix<R: RngCore + ?Sized>(
    wv: &WordVectors,
    catalog: &DescriptionCatalog,
    labels: &LabelSpace,
    classes: &[ClassId],
    rng: &mut R,
) -> Result<(Tensor, Vec<String>)> {
    let mut values = Vec::with_capacity(classes.len() * wv.dim());
    let mut provenance = Vec::with_capacity(classes.len());
    for &c in classes {
        let d = sample_description(labels.name(c), catalog.get(c), rng)?;
        let v = wv
            .mean(&d.tokens)
            .ok_or_else(|| Error::Validation(format!("no word vector for any token of a `{}` description", d.class_name)))?;
        values.extend(v);
        provenance.push(d.hash.clone());
    }
    Ok((Tensor::matrix(classes.len(), wv.dim(), values)?, provenance))
}

/// Template text for the class-name bi-encoder.
pub fn name_template(name: &str, image: bool) -> String {
    if image {
        format!("a photo of a {name}")
    } else {
        format!("the class is {name}")
    }
}

/// One templated description per class.
pub fn name_template_catalog(labels: &LabelSpace, classes: &[ClassId], image: bool) -> Result<DescriptionCatalog> {
    let descs = classes
        .iter()
        .map(|&c| Description::nl(c, labels.name(c), name_template(&labels.name(c).replace('_', " "), image)))
        .collect::<Result<Vec<_>>>()?;
    Ok(DescriptionCatalog::new(descs))
}

/// What a baseline compares the projected input against.
#[derive(Clone, Copy, Debug)]
pub enum ClassMaterial<'a> {
    /// Frozen `(K × d)` name vectors (DeViSE).
    NameVectors(NodeId),
    /// Frozen `(K × d)` mean description word vectors (GILE).
    DescriptionVectors(NodeId),
    /// Encoded name templates (class-name bi-encoder).
    NameTemplates(&'a OutputMatrixBatch),
}

/// `W·(P·x)`, `tanh(W̄·(P·x))` or the bi-encoder over name templates.
pub fn score_baseline(g: &mut Graph, material: ClassMaterial<'_>, input_pooled: NodeId, p: NodeId) -> Result<NodeId> {
    match material {
        ClassMaterial::NameVectors(w) => {
            let px = g.matmul(p, input_pooled)?;
            g.matmul(w, px)
        }
        ClassMaterial::DescriptionVectors(w) => {
            let px = g.matmul(p, input_pooled)?;
            let s = g.matmul(w, px)?;
            g.tanh(s)
        }
        ClassMaterial::NameTemplates(omb) => score_bienc(g, input_pooled, p, omb),
    }
}
