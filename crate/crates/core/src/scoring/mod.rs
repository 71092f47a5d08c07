//! Logit heads and per-batch output matrices.
//!
//! Every head returns a `(K)` logits node in the caller's graph, with rows
//! in the order of the active class list.

mod baselines;
mod lexical;

pub use baselines::{
    description_vector_matrix, name_template, name_template_catalog, name_vector_matrix, score_baseline,
    ClassMaterial, WordVectors,
};
pub use lexical::{score_lexical, shared_occurrences, LexicalMode};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::descstore::{sample_description, DescriptionCatalog};
use crate::encoders::{encode_text, EncodedText, EncoderParams, Projections};
use crate::error::{Error, Result};
use crate::labels::{ClassId, LabelSpace};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::text::Vocabulary;

/// The sampled, encoded class descriptions shared by one batch.
#[derive(Clone, Debug)]
pub struct OutputMatrixBatch {
    pub classes: Vec<ClassId>,
    /// `(K × d_model)`, row `j` is the pooled encoding of class `j`'s draw.
    pub matrix: NodeId,
    pub descriptions: Vec<EncodedText>,
    /// Content hash of the description drawn for each class.
    pub provenance: Vec<String>,
}

impl OutputMatrixBatch {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Checks that every provenance hash names a description of its own class.
    pub fn verify_provenance(&self, catalog: &DescriptionCatalog) -> Result<()> {
        for (c, h) in self.classes.iter().zip(&self.provenance) {
            if !catalog.get(*c).iter().any(|d| &d.hash == h) {
                return Err(Error::Validation(format!("provenance {h} does not belong to class {c}")));
            }
        }
        Ok(())
    }
}

/// Draws one description per class (ascending class order, one draw each)
/// and encodes it with `enc`.
#[allow(clippy::too_many_arguments)]
pub fn build_output_matrix<R: RngCore + ?Sized>(
    g: &mut Graph,
    catalog: &DescriptionCatalog,
    classes: &[ClassId],
    labels: &LabelSpace,
    enc: &EncoderParams,
    vocab: &Vocabulary,
    max_len: usize,
    rng: &mut R,
) -> Result<OutputMatrixBatch> {
    if classes.is_empty() {
        return Err(Error::InvalidArgument("output matrix over zero classes".into()));
    }
    let mut sorted = classes.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted != classes {
        return Err(Error::InvalidArgument("active classes must be strictly ascending".into()));
    }
    let mut descriptions = Vec::with_capacity(classes.len());
    let mut provenance = Vec::with_capacity(classes.len());
    for &c in classes {
        let d = sample_description(labels.name(c), catalog.get(c), rng)?;
        descriptions.push(encode_text(g, enc, &vocab.encode(&d.tokens, max_len))?);
        provenance.push(d.hash.clone());
    }
    let rows: Vec<NodeId> = descriptions.iter().map(|e| e.pooled).collect();
    let matrix = g.stack(&rows)?;
    Ok(OutputMatrixBatch { classes: classes.to_vec(), matrix, descriptions, provenance })
}

/// `O·x` for a learned `(K × d)` output matrix.
pub fn score_sup(g: &mut Graph, pooled_input: NodeId, o: NodeId) -> Result<NodeId> {
    g.matmul(o, pooled_input)
}

/// `Ô·(P·x)`.
pub fn score_bienc(g: &mut Graph, pooled_input: NodeId, p: NodeId, omb: &OutputMatrixBatch) -> Result<NodeId> {
    let px = g.matmul(p, pooled_input)?;
    g.matmul(omb.matrix, px)
}

/// Per-class lexical terms stacked into a `(K)` node, or `None` when no class
/// shares a word with the input.
fn lexical_vector(g: &mut Graph, input: &EncodedText, omb: &OutputMatrixBatch, mode: LexicalMode) -> Result<Option<NodeId>> {
    let terms = omb
        .descriptions
        .iter()
        .map(|d| score_lexical(g, input, d, mode))
        .collect::<Result<Vec<_>>>()?;
    if terms.iter().all(Option::is_none) {
        return Ok(None);
    }
    let zero = g.constant(Tensor::scalar(0.0)?);
    let nodes: Vec<NodeId> = terms.into_iter().map(|t| t.unwrap_or(zero)).collect();
    g.stack(&nodes).map(Some)
}

/// Bi-encoder logits plus the lexical term. With no shared words for any
/// class the bi-encoder node itself is returned.
pub fn score_hybrid_text(
    g: &mut Graph,
    input: &EncodedText,
    p: NodeId,
    omb: &OutputMatrixBatch,
    mode: LexicalMode,
) -> Result<NodeId> {
    let sem = score_bienc(g, input.pooled, p, omb)?;
    match lexical_vector(g, input, omb, mode)? {
        None => Ok(sem),
        Some(lex) => g.add(sem, lex),
    }
}

/// The summands of one image logit. Absent components are exactly zero.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub semantic: f64,
    pub annotation_semantic: f64,
    pub lexical: f64,
    pub total: f64,
}

/// Image semantic term, plus annotation semantic and lexical terms when an
/// annotation is present. `annotation = None` stands for an empty detection
/// list, in which case the logits are the image term alone.
pub fn score_hybrid_image(
    g: &mut Graph,
    image_pooled: NodeId,
    annotation: Option<&EncodedText>,
    proj: &Projections,
    omb: &OutputMatrixBatch,
    mode: LexicalMode,
) -> Result<(NodeId, Vec<ScoreBreakdown>)> {
    let sem = score_bienc(g, image_pooled, proj.p, omb)?;
    let sem_v = g.value(sem).values().to_vec();
    let Some(ann) = annotation else {
        let bd = sem_v
            .iter()
            .map(|&s| ScoreBreakdown { semantic: s, total: s, ..Default::default() })
            .collect();
        return Ok((sem, bd));
    };
    let p_i = proj
        .p_i
        .ok_or_else(|| Error::InvalidArgument("annotation term needs the P_I projection".into()))?;
    let pa = g.matmul(p_i, ann.pooled)?;
    let ann_sem = g.matmul(omb.matrix, pa)?;
    let mut total = g.add(sem, ann_sem)?;
    let lex = lexical_vector(g, ann, omb, mode)?;
    if let Some(l) = lex {
        total = g.add(total, l)?;
    }
    let ann_v = g.value(ann_sem).values();
    let lex_v = lex.map(|l| g.value(l).values().to_vec());
    let tot_v = g.value(total).values();
    let bd = (0..sem_v.len())
        .map(|j| ScoreBreakdown {
            semantic: sem_v[j],
            annotation_semantic: ann_v[j],
            lexical: lex_v.as_ref().map_or(0.0, |l| l[j]),
            total: tot_v[j],
        })
        .collect();
    Ok((total, bd))
}
