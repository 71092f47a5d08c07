//! Model variants: which parameters exist and how an input becomes logits.

use std::path::{Path, PathBuf};

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{Instance, InstanceInput, Modality};
use crate::descstore::DescriptionCatalog;
use crate::encoders::{
    encode_features, encode_text, EncodedText, EncoderParams, FeatureEncoderParams, Projections, TextEncoderDims,
};
use crate::error::{Error, Result};
use crate::labels::{ClassId, LabelSpace};
use crate::params::{BoundParams, ParamStore};
use crate::rng::sub_seed;
use crate::scoring::{
    build_output_matrix, description_vector_matrix, name_template_catalog, name_vector_matrix, score_baseline,
    score_bienc, score_hybrid_image, score_hybrid_text, score_sup, ClassMaterial, LexicalMode, OutputMatrixBatch,
    ScoreBreakdown, WordVectors,
};
use crate::tensor::{Graph, NodeId, Tensor};
use crate::text::{render_annotation_text, tokenize, Vocabulary, DEFAULT_MAX_LEN};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sup,
    #[default]
    SemsupBienc,
    SemsupHybrid,
    Devise,
    Gile,
    BiencNames,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Sup,
        ModelKind::SemsupBienc,
        ModelKind::SemsupHybrid,
        ModelKind::Devise,
        ModelKind::Gile,
        ModelKind::BiencNames,
    ];

    /// Whether the class side is encoded by the trainable description encoder.
    pub fn uses_description_encoder(self) -> bool {
        matches!(self, ModelKind::SemsupBienc | ModelKind::SemsupHybrid | ModelKind::BiencNames)
    }

    /// Whether per-batch output rows come from sampled descriptions.
    pub fn samples_descriptions(self) -> bool {
        matches!(self, ModelKind::SemsupBienc | ModelKind::SemsupHybrid | ModelKind::Gile)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub d_emb: usize,
    pub d_model: usize,
    pub d_tok: usize,
    pub max_len: usize,
    pub feature_hidden: usize,
    pub positional: bool,
    pub lexical_mode: LexicalMode,
    /// Word-vector file for the DeViSE and GILE baselines; a seeded random
    /// table is used when absent.
    pub word_vectors: Option<PathBuf>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::default(),
            d_emb: 64,
            d_model: 64,
            d_tok: 32,
            max_len: DEFAULT_MAX_LEN,
            feature_hidden: 64,
            positional: false,
            lexical_mode: LexicalMode::default(),
            word_vectors: None,
        }
    }
}

pub const SUP_OUTPUT: &str = "sup.o";

/// Everything needed to score inputs: configuration, vocabulary, trained
/// parameters and the frozen word vectors of the baselines.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub modality: Modality,
    pub feature_dim: Option<usize>,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    /// Row order of the supervised output matrix.
    pub sup_classes: Vec<ClassId>,
    pub word_vectors: Option<WordVectors>,
}

/// A model's parameters bound into one graph.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub params: BoundParams,
    pub f_text: Option<EncoderParams>,
    pub f_feat: Option<FeatureEncoderParams>,
    pub g: Option<EncoderParams>,
    pub h: Option<EncoderParams>,
    pub proj: Option<Projections>,
    pub sup_o: Option<NodeId>,
}

/// The class side of one batch.
#[derive(Clone, Debug)]
pub enum ClassHead {
    Sup { o: NodeId },
    Descriptions(OutputMatrixBatch),
    NameVectors { w: NodeId },
    DescriptionVectors { w: NodeId, provenance: Vec<String> },
    NameTemplates(OutputMatrixBatch),
}

impl ClassHead {
    pub fn provenance(&self) -> Option<&[String]> {
        match self {
            ClassHead::Descriptions(o) | ClassHead::NameTemplates(o) => Some(&o.provenance),
            ClassHead::DescriptionVectors { provenance, .. } => Some(provenance),
            _ => None,
        }
    }
}

/// Encoded input side of one instance.
#[derive(Clone, Debug)]
pub struct InputRep {
    pub pooled: NodeId,
    pub text: Option<EncodedText>,
    /// `None` for feature inputs with an empty detection list.
    pub annotation: Option<EncodedText>,
}

impl Model {
    /// Initializes the parameters of `config.kind`.
    pub fn init(
        config: ModelConfig,
        modality: Modality,
        feature_dim: Option<usize>,
        vocab: Vocabulary,
        sup_classes: Vec<ClassId>,
        seed: u64,
    ) -> Result<Self> {
        let init_seed = sub_seed(seed, "init");
        let dims = TextEncoderDims {
            vocab_size: vocab.len(),
            d_emb: config.d_emb,
            d_model: config.d_model,
            d_tok: config.d_tok,
            positional: config.positional,
        };
        if config.max_len == 0 {
            return Err(Error::Validation("model.max_len must be positive".into()));
        }
        let mut params = ParamStore::new();
        match modality {
            Modality::Text => EncoderParams::init(&mut params, "f", &dims, init_seed)?,
            Modality::Features => {
                let fd = feature_dim.ok_or_else(|| Error::Validation("feature inputs need feature_dim".into()))?;
                FeatureEncoderParams::init(&mut params, "feat", fd, config.feature_hidden, config.d_model, init_seed)?;
            }
        }
        let kind = config.kind;
        if kind.uses_description_encoder() {
            EncoderParams::init(&mut params, "g", &dims, init_seed)?;
        }
        let annotated = kind == ModelKind::SemsupHybrid && modality == Modality::Features;
        if annotated {
            EncoderParams::init(&mut params, "h", &dims, init_seed)?;
        }
        if kind == ModelKind::Sup {
            if sup_classes.is_empty() {
                return Err(Error::Validation("the supervised model needs at least one class".into()));
            }
            params.init_uniform(init_seed, SUP_OUTPUT, vec![sup_classes.len(), config.d_model], config.d_model)?;
        } else {
            Projections::init(&mut params, config.d_model, annotated, init_seed)?;
        }
        let word_vectors = match kind {
            ModelKind::Devise | ModelKind::Gile => Some(load_word_vectors(&config, seed)?),
            _ => None,
        };
        Ok(Model { config, modality, feature_dim, vocab, params, sup_classes, word_vectors })
    }

    pub fn kind(&self) -> ModelKind {
        self.config.kind
    }

    pub fn bind(&self, g: &mut Graph) -> Result<BoundModel> {
        let params = self.params.bind(g);
        let has = |n: &str| self.params.contains(n);
        let pos = self.config.positional;
        Ok(BoundModel {
            f_text: if has("f.embed") { Some(EncoderParams::bind(&params, "f", pos)?) } else { None },
            f_feat: if has("feat.w1") { Some(FeatureEncoderParams::bind(&params, "feat")?) } else { None },
            g: if has("g.embed") { Some(EncoderParams::bind(&params, "g", pos)?) } else { None },
            h: if has("h.embed") { Some(EncoderParams::bind(&params, "h", pos)?) } else { None },
            proj: if has(crate::encoders::PROJ_P) { Some(Projections::bind(&params)?) } else { None },
            sup_o: params.node(SUP_OUTPUT).ok(),
            params,
        })
    }

    /// Prepares the class side for `classes` (strictly ascending). Sampling
    /// models draw one description per class from `catalog` using `rng`.
    pub fn class_head<R: RngCore + ?Sized>(
        &self,
        g: &mut Graph,
        b: &BoundModel,
        classes: &[ClassId],
        catalog: &DescriptionCatalog,
        labels: &LabelSpace,
        rng: &mut R,
    ) -> Result<ClassHead> {
        let max_len = self.config.max_len;
        match self.kind() {
            ModelKind::Sup => {
                let o = b.sup_o.expect("sup model has an output matrix");
                let rows = classes
                    .iter()
                    .map(|c| {
                        self.sup_classes.iter().position(|s| s == c).ok_or_else(|| {
                            Error::Validation(format!(
                                "the supervised model cannot score class `{}` outside its training set",
                                labels.name(*c)
                            ))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                let identity = rows.iter().enumerate().all(|(i, &r)| i == r) && rows.len() == self.sup_classes.len();
                let o = if identity { o } else { g.embed_lookup(o, &rows)? };
                Ok(ClassHead::Sup { o })
            }
            ModelKind::SemsupBienc | ModelKind::SemsupHybrid => {
                let enc = b.g.as_ref().expect("description encoder bound");
                Ok(ClassHead::Descriptions(build_output_matrix(
                    g, catalog, classes, labels, enc, &self.vocab, max_len, rng,
                )?))
            }
            ModelKind::BiencNames => {
                let enc = b.g.as_ref().expect("description encoder bound");
                let names = name_template_catalog(labels, classes, self.modality == Modality::Features)?;
                Ok(ClassHead::NameTemplates(build_output_matrix(
                    g, &names, classes, labels, enc, &self.vocab, max_len, rng,
                )?))
            }
            ModelKind::Devise => {
                let wv = self.word_vectors.as_ref().expect("devise has word vectors");
                let w = g.constant(name_vector_matrix(wv, labels, classes)?);
                Ok(ClassHead::NameVectors { w })
            }
            ModelKind::Gile => {
                let wv = self.word_vectors.as_ref().expect("gile has word vectors");
                let (t, provenance) = description_vector_matrix(wv, catalog, labels, classes, rng)?;
                let w = g.constant(t);
                Ok(ClassHead::DescriptionVectors { w, provenance })
            }
        }
    }

    pub fn encode_input(&self, g: &mut Graph, b: &BoundModel, inst: &Instance) -> Result<InputRep> {
        let max_len = self.config.max_len;
        match (&inst.input, self.modality) {
            (InstanceInput::Text(tokens), Modality::Text) => {
                let seq = self.vocab.encode(tokens, max_len);
                if seq.is_empty() {
                    return Err(Error::Validation(format!("instance `{}` has no tokens", inst.id)));
                }
                let e = encode_text(g, b.f_text.as_ref().expect("text encoder bound"), &seq)?;
                Ok(InputRep { pooled: e.pooled, text: Some(e), annotation: None })
            }
            (InstanceInput::Features { features, annotations }, Modality::Features) => {
                let pooled = encode_features(g, b.f_feat.as_ref().expect("feature encoder bound"), features)?;
                let annotation = match (&b.h, annotations.is_empty()) {
                    (Some(h), false) => {
                        let toks = tokenize(&render_annotation_text(annotations));
                        Some(encode_text(g, h, &self.vocab.encode(&toks, max_len))?)
                    }
                    _ => None,
                };
                Ok(InputRep { pooled, text: None, annotation })
            }
            _ => Err(Error::Validation(format!(
                "instance `{}` does not match the model's {:?} modality",
                inst.id, self.modality
            ))),
        }
    }

    /// Logits of one input against the class head, plus the per-class
    /// breakdown for annotated image inputs.
    pub fn logits(
        &self,
        g: &mut Graph,
        b: &BoundModel,
        head: &ClassHead,
        input: &InputRep,
    ) -> Result<(NodeId, Option<Vec<ScoreBreakdown>>)> {
        let mode = self.config.lexical_mode;
        let proj = b.proj;
        let p = || proj.map(|p| p.p).ok_or_else(|| Error::InvalidArgument("missing projection P".into()));
        match head {
            ClassHead::Sup { o } => Ok((score_sup(g, input.pooled, *o)?, None)),
            ClassHead::Descriptions(omb) => match (self.kind(), self.modality) {
                (ModelKind::SemsupHybrid, Modality::Text) => {
                    let text = input.text.as_ref().expect("text input");
                    Ok((score_hybrid_text(g, text, p()?, omb, mode)?, None))
                }
                (ModelKind::SemsupHybrid, Modality::Features) => {
                    let (l, bd) =
                        score_hybrid_image(g, input.pooled, input.annotation.as_ref(), proj.as_ref().unwrap(), omb, mode)?;
                    Ok((l, Some(bd)))
                }
                _ => Ok((score_bienc(g, input.pooled, p()?, omb)?, None)),
            },
            ClassHead::NameVectors { w } => Ok((score_baseline(g, ClassMaterial::NameVectors(*w), input.pooled, p()?)?, None)),
            ClassHead::DescriptionVectors { w, .. } => Ok((
                score_baseline(g, ClassMaterial::DescriptionVectors(*w), input.pooled, p()?)?,
                None,
            )),
            ClassHead::NameTemplates(omb) => {
                Ok((score_baseline(g, ClassMaterial::NameTemplates(omb), input.pooled, p()?)?, None))
            }
        }
    }

    /// Copies parameter values from a store with identical names and shapes.
    pub fn load_params(&mut self, store: ParamStore) -> Result<()> {
        let mine: Vec<&str> = self.params.names().collect();
        let theirs: Vec<&str> = store.names().collect();
        if mine != theirs {
            return Err(Error::Checkpoint(format!("parameter names differ: expected {mine:?}, found {theirs:?}")));
        }
        for (name, t) in store.iter() {
            if self.params.get(name).map(Tensor::shape) != Some(t.shape()) {
                return Err(Error::Checkpoint(format!("shape mismatch for `{name}`")));
            }
        }
        self.params = store;
        Ok(())
    }
}

pub const PARAMS_FILE: &str = "params.bin";
pub const MODEL_META_FILE: &str = "model.json";

/// Everything but the parameter values, as stored next to a checkpoint.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelMeta {
    config: ModelConfig,
    modality: Modality,
    feature_dim: Option<usize>,
    seed: u64,
    sup_classes: Vec<String>,
    vocab: Vec<String>,
}

impl Model {
    /// Writes `params.bin` and `model.json` into `dir`. `seed` is the one
    /// the model was initialized with.
    pub fn save(&self, dir: &Path, labels: &LabelSpace, seed: u64) -> Result<()> {
        let meta = ModelMeta {
            config: self.config.clone(),
            modality: self.modality,
            feature_dim: self.feature_dim,
            seed,
            sup_classes: self.sup_classes.iter().map(|c| labels.name(*c).to_string()).collect(),
            vocab: self.vocab.tokens().to_vec(),
        };
        let path = dir.join(MODEL_META_FILE);
        let s = serde_json::to_string_pretty(&meta).map_err(|e| Error::json("model metadata", e))?;
        std::fs::write(&path, s + "\n").map_err(|e| Error::io(&path, e))?;
        self.params.save(&dir.join(PARAMS_FILE))
    }

    pub fn load(dir: &Path, labels: &LabelSpace) -> Result<Model> {
        let path = dir.join(MODEL_META_FILE);
        let s = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let meta: ModelMeta = serde_json::from_str(&s).map_err(|e| Error::json(path.display().to_string(), e))?;
        let sup = meta.sup_classes.iter().map(|n| labels.require(n)).collect::<Result<Vec<_>>>()?;
        let vocab = Vocabulary::from_tokens(meta.vocab)?;
        let mut model = Model::init(meta.config, meta.modality, meta.feature_dim, vocab, sup, meta.seed)?;
        model.load_params(ParamStore::load(&dir.join(PARAMS_FILE))?)?;
        Ok(model)
    }
}

fn load_word_vectors(config: &ModelConfig, seed: u64) -> Result<WordVectors> {
    match &config.word_vectors {
        Some(path) => WordVectors::load(Path::new(path), config.d_model),
        None => Ok(WordVectors::random(config.d_model, sub_seed(seed, "word-vectors"))),
    }
}
