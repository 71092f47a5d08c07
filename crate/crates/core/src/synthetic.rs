//! Seeded synthetic classification tasks.
//!
//! Every class owns a disjoint *signature* token set that its documents
//! draw from, and a disjoint pool of description-only tokens that every
//! description of the class draws from. A description additionally repeats
//! some signature tokens with probability `cue_strength`; that repetition is
//! the exact-match signal a lexical scorer can exploit. Filler tokens come
//! from outside the description pools. Superclasses own a
//! shared token set that all their children's documents draw from.
//!
//! Optional *unseen* classes never appear in train or val and back an S2
//! scenario.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{write_records, InstanceRecord, Modality, TaskKind};
use crate::dataset::{DatasetManifest, InstanceFiles, DEFAULT_SPLIT_RATIOS};
use crate::descstore::{
    split_sizes, write_descriptions, write_split_manifest, Description, DescriptionCatalog, SplitManifest, SplitName,
};
use crate::error::{Error, Result};
use crate::evaluation::{ScenarioFile, ScenarioId};
use crate::labels::{ClassId, LabelSpace};
use crate::rng::{stream, SeededRng};
use crate::text::LexiconEntry;

const SECOND_LABEL_RATE: f64 = 0.3;
const MAX_DRAWS_PER_DESCRIPTION: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticTaskSpec {
    pub n_classes: usize,
    pub n_superclasses: usize,
    /// Extra classes seen only at test time.
    pub n_unseen: usize,
    pub vocab_size: usize,
    pub docs_per_class: usize,
    pub tokens_per_doc: usize,
    pub descriptions_per_class: usize,
    pub cue_strength: f64,
    pub seed: u64,
    pub signature_size: usize,
    /// Tokens per superclass shared by all of its children.
    pub shared_size: usize,
    /// Size of each class's description-only token pool.
    pub description_vocab: usize,
    /// Probability that a document token comes from its class's signal pool.
    pub signal_rate: f64,
    pub desc_cue_tokens: usize,
    pub desc_class_tokens: usize,
    pub desc_filler_tokens: usize,
    pub task: TaskKind,
    pub modality: Modality,
    pub feature_dim: usize,
    pub detections_per_instance: usize,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            n_classes: 8,
            n_superclasses: 4,
            n_unseen: 0,
            vocab_size: 200,
            docs_per_class: 50,
            tokens_per_doc: 40,
            descriptions_per_class: 20,
            cue_strength: 0.8,
            seed: 0,
            signature_size: 6,
            shared_size: 3,
            description_vocab: 4,
            signal_rate: 0.5,
            desc_cue_tokens: 3,
            desc_class_tokens: 3,
            desc_filler_tokens: 2,
            task: TaskKind::Multiclass,
            modality: Modality::Text,
            feature_dim: 16,
            detections_per_instance: 4,
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Validation(format!("{name} must lie in [0, 1], got {v}")))
    }
}

impl SyntheticTaskSpec {
    /// Tokens reserved for signatures, superclass sets and description pools.
    pub fn reserved_tokens(&self) -> usize {
        (self.n_classes + self.n_unseen) * (self.signature_size + self.description_vocab)
            + self.n_superclasses * self.shared_size
    }

    pub fn description_len(&self) -> (usize, usize) {
        let base = self.desc_class_tokens + self.desc_filler_tokens;
        (base, base + self.desc_cue_tokens)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Validation("a synthetic task needs at least 2 classes".into()));
        }
        if self.n_superclasses == 0 || !self.n_classes.is_multiple_of(self.n_superclasses) {
            return Err(Error::Validation(format!(
                "{} classes cannot be divided evenly among {} superclasses",
                self.n_classes, self.n_superclasses
            )));
        }
        unit_interval("cue_strength", self.cue_strength)?;
        unit_interval("signal_rate", self.signal_rate)?;
        if self.docs_per_class < 3 || self.descriptions_per_class < 3 {
            return Err(Error::Validation("docs_per_class and descriptions_per_class must be at least 3".into()));
        }
        if self.tokens_per_doc == 0 || self.signature_size == 0 || self.description_vocab == 0 {
            return Err(Error::Validation(
                "tokens_per_doc, signature_size and description_vocab must be positive".into(),
            ));
        }
        if self.desc_cue_tokens > self.signature_size || self.desc_class_tokens > self.description_vocab {
            return Err(Error::Validation("a description cannot use more tokens than its pool holds".into()));
        }
        if self.desc_class_tokens + self.desc_filler_tokens == 0 {
            return Err(Error::Validation("descriptions would be empty".into()));
        }
        if self.modality == Modality::Features && self.feature_dim == 0 {
            return Err(Error::Validation("feature_dim must be positive".into()));
        }
        let need = self.reserved_tokens();
        if self.vocab_size < need {
            return Err(Error::Validation(format!(
                "vocab_size {} is too small for disjoint signatures: {need} tokens are reserved",
                self.vocab_size
            )));
        }
        Ok(())
    }

    /// Tokens descriptions may use as filler: all but the description pools.
    pub fn filler_vocab(&self) -> usize {
        self.vocab_size - (self.n_classes + self.n_unseen) * self.description_vocab
    }

    /// Expected fraction of a description's tokens that belong to its own
    /// class signature when no cue is planted: only filler tokens, drawn
    /// uniformly from [`Self::filler_vocab`], can collide with it.
    pub fn background_signature_rate(&self) -> f64 {
        let (len, _) = self.description_len();
        self.desc_filler_tokens as f64 / len as f64 * self.signature_size as f64 / self.filler_vocab() as f64
    }
}

/// A generated task held in memory.
#[derive(Clone, Debug)]
pub struct SyntheticTask {
    pub spec: SyntheticTaskSpec,
    pub labels: LabelSpace,
    pub seen: Vec<ClassId>,
    pub unseen: Vec<ClassId>,
    pub superclasses: Vec<ClassId>,
    pub superclass_of: BTreeMap<ClassId, ClassId>,
    /// Signature tokens per fine class.
    pub signatures: BTreeMap<ClassId, Vec<String>>,
    pub(crate) records: [Vec<InstanceRecord>; 3],
    pub descriptions: DescriptionCatalog,
    pub splits: [DescriptionCatalog; 3],
    pub scenarios: ScenarioFile,
    pub lexicon: Option<BTreeMap<String, LexiconEntry>>,
}

fn token_name(i: usize, width: usize) -> String {
    format!("w{i:0width$}")
}

fn pick<'a>(pool: &'a [String], k: usize, rng: &mut SeededRng) -> Vec<&'a str> {
    index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i].as_str()).collect()
}

struct Layout {
    vocab: Vec<String>,
    /// Every token outside the description pools.
    filler: Vec<String>,
    signature: Vec<Vec<String>>,
    desc_pool: Vec<Vec<String>>,
    shared: Vec<Vec<String>>,
}

fn layout(spec: &SyntheticTaskSpec, rng: &mut SeededRng) -> Layout {
    let width = (spec.vocab_size.max(2) - 1).to_string().len();
    let vocab: Vec<String> = (0..spec.vocab_size).map(|i| token_name(i, width)).collect();
    let mut order = vocab.clone();
    order.shuffle(rng);
    let mut it = order.into_iter();
    let mut take = |n: usize| it.by_ref().take(n).collect::<Vec<_>>();
    let n_fine = spec.n_classes + spec.n_unseen;
    let signature = (0..n_fine).map(|_| take(spec.signature_size)).collect();
    let desc_pool: Vec<Vec<String>> = (0..n_fine).map(|_| take(spec.description_vocab)).collect();
    let shared = (0..spec.n_superclasses).map(|_| take(spec.shared_size)).collect();
    let pooled: std::collections::BTreeSet<&String> = desc_pool.iter().flatten().collect();
    let filler = vocab.iter().filter(|t| !pooled.contains(t)).cloned().collect();
    Layout { vocab, filler, signature, desc_pool, shared }
}

/// Class names: `class00..` (seen), `unseen00..`, `super0..`.
fn class_names(spec: &SyntheticTaskSpec) -> (Vec<String>, Vec<String>, Vec<String>) {
    let w = |n: usize| (n.max(2) - 1).to_string().len().max(2);
    let seen = (0..spec.n_classes).map(|i| format!("class{i:0w$}", w = w(spec.n_classes))).collect();
    let unseen = (0..spec.n_unseen).map(|i| format!("unseen{i:0w$}", w = w(spec.n_unseen))).collect();
    let supers = (0..spec.n_superclasses).map(|i| format!("super{i}")).collect();
    (seen, unseen, supers)
}

struct DocSampler<'a> {
    rate: f64,
    vocab: &'a [String],
}

impl DocSampler<'_> {
    fn token(&self, pool: &[&String], rng: &mut SeededRng) -> String {
        if !pool.is_empty() && rng.gen_bool(self.rate) {
            pool[rng.gen_range(0..pool.len())].clone()
        } else {
            self.vocab[rng.gen_range(0..self.vocab.len())].clone()
        }
    }

    fn tokens(&self, pool: &[&String], n: usize, rng: &mut SeededRng) -> Vec<String> {
        (0..n).map(|_| self.token(pool, rng)).collect()
    }
}

fn alias(name: &str) -> String {
    format!("alias {name}")
}

/// Generates a task. Output depends only on `spec`.
pub fn gen_synthetic(spec: &SyntheticTaskSpec) -> Result<SyntheticTask> {
    spec.validate()?;
    let seed = spec.seed;
    let lay = layout(spec, &mut stream(seed, "synthetic/layout"));
    let (seen_names, unseen_names, super_names) = class_names(spec);
    let labels = LabelSpace::new(seen_names.iter().chain(&unseen_names).chain(&super_names).cloned())?;
    let seen: Vec<ClassId> = (0..spec.n_classes).map(ClassId).collect();
    let unseen: Vec<ClassId> = (spec.n_classes..spec.n_classes + spec.n_unseen).map(ClassId).collect();
    let n_fine = spec.n_classes + spec.n_unseen;
    let superclasses: Vec<ClassId> = (n_fine..n_fine + spec.n_superclasses).map(ClassId).collect();
    let per_super = spec.n_classes / spec.n_superclasses;
    let superclass_of: BTreeMap<ClassId, ClassId> =
        seen.iter().map(|c| (*c, superclasses[c.0 / per_super])).collect();

    let signal_pool = |c: ClassId| -> Vec<&String> {
        let mut pool: Vec<&String> = lay.signature[c.0].iter().collect();
        if let Some(s) = superclass_of.get(&c) {
            pool.extend(&lay.shared[s.0 - n_fine]);
        }
        pool
    };
    let sampler = DocSampler { rate: spec.signal_rate, vocab: &lay.vocab };

    // instances
    let mut doc_rng = stream(seed, "synthetic/documents");
    let mut feat_rng = stream(seed, "synthetic/features");
    let prototypes: Vec<Vec<f64>> = {
        let super_protos: Vec<Vec<f64>> = (0..spec.n_superclasses)
            .map(|_| (0..spec.feature_dim).map(|_| feat_rng.gen_range(-1.0..1.0)).collect())
            .collect();
        (0..n_fine)
            .map(|c| {
                (0..spec.feature_dim)
                    .map(|d| {
                        let own: f64 = feat_rng.gen_range(-1.0..1.0);
                        match superclass_of.get(&ClassId(c)) {
                            Some(s) => 0.5 * super_protos[s.0 - n_fine][d] + own,
                            None => own,
                        }
                    })
                    .collect()
            })
            .collect()
    };
    let mut records: [Vec<InstanceRecord>; 3] = Default::default();
    for c in seen.iter().chain(&unseen).copied() {
        let sizes = if unseen.contains(&c) { [0, 0, spec.docs_per_class] } else { split_sizes(spec.docs_per_class, DEFAULT_SPLIT_RATIOS)? };
        let mut docs = Vec::with_capacity(spec.docs_per_class);
        for i in 0..spec.docs_per_class {
            let mut classes = vec![c];
            if spec.task == TaskKind::Multilabel && !unseen.contains(&c) && doc_rng.gen_bool(SECOND_LABEL_RATE) {
                let other = seen[doc_rng.gen_range(0..seen.len() - 1)];
                classes.push(if other >= c { ClassId(other.0 + 1) } else { other });
            }
            let pool: Vec<&String> = classes.iter().flat_map(|&k| signal_pool(k)).collect();
            let id = format!("{}-{i:03}", labels.name(c));
            let mut names: Vec<String> = classes.iter().map(|&k| labels.name(k).to_string()).collect();
            names.sort();
            let record = match spec.modality {
                Modality::Text => InstanceRecord {
                    id,
                    text: Some(sampler.tokens(&pool, spec.tokens_per_doc, &mut doc_rng).join(" ")),
                    features: None,
                    annotations: None,
                    labels: names,
                },
                Modality::Features => {
                    let features: Vec<f64> = (0..spec.feature_dim)
                        .map(|d| {
                            let mean = classes.iter().map(|k| prototypes[k.0][d]).sum::<f64>() / classes.len() as f64;
                            mean + feat_rng.gen_range(-0.5..0.5)
                        })
                        .collect();
                    let mut dets = sampler.tokens(&pool, spec.detections_per_instance, &mut doc_rng);
                    // label leaks for the annotation filter to catch
                    if doc_rng.gen_bool(0.5) {
                        dets.push(labels.name(c).to_string());
                    }
                    if doc_rng.gen_bool(0.25) {
                        dets.push(alias(labels.name(c)));
                    }
                    dets.shuffle(&mut doc_rng);
                    InstanceRecord { id, text: None, features: Some(features), annotations: Some(dets), labels: names }
                }
            };
            docs.push(record);
        }
        let mut it = docs.into_iter();
        for (s, n) in sizes.iter().enumerate() {
            records[s].extend(it.by_ref().take(*n));
        }
    }

    // descriptions
    let mut desc_rng = stream(seed, "synthetic/descriptions");
    let mut descs = Vec::new();
    let emit = |class: ClassId,
                    class_pool: &[String],
                    cue_pool: &[String],
                    rng: &mut SeededRng,
                    descs: &mut Vec<Description>|
     -> Result<()> {
        let name = labels.name(class);
        let mut seen_hashes = std::collections::BTreeSet::new();
        let mut draws = 0;
        while seen_hashes.len() < spec.descriptions_per_class {
            draws += 1;
            if draws > MAX_DRAWS_PER_DESCRIPTION * spec.descriptions_per_class {
                return Err(Error::Validation(format!(
                    "could not draw {} distinct descriptions for `{name}`; enlarge the token pools",
                    spec.descriptions_per_class
                )));
            }
            let mut toks: Vec<&str> = pick(class_pool, spec.desc_class_tokens.min(class_pool.len()), rng);
            if rng.gen_bool(spec.cue_strength) {
                toks.extend(pick(cue_pool, spec.desc_cue_tokens.min(cue_pool.len()), rng));
            }
            for _ in 0..spec.desc_filler_tokens {
                toks.push(&lay.filler[rng.gen_range(0..lay.filler.len())]);
            }
            toks.shuffle(rng);
            let d = Description::nl(class, name, toks.join(" "))?;
            if seen_hashes.insert(d.hash.clone()) {
                descs.push(d);
            }
        }
        Ok(())
    };
    for c in seen.iter().chain(&unseen).copied() {
        emit(c, &lay.desc_pool[c.0], &lay.signature[c.0], &mut desc_rng, &mut descs)?;
    }
    for (i, s) in superclasses.iter().enumerate() {
        let children: Vec<String> = superclass_of
            .iter()
            .filter(|(_, p)| *p == s)
            .flat_map(|(c, _)| lay.desc_pool[c.0].iter().cloned())
            .collect();
        emit(*s, &children, &lay.shared[i], &mut desc_rng, &mut descs)?;
    }
    let descriptions = DescriptionCatalog::new(descs);
    let splits = descriptions.split(DEFAULT_SPLIT_RATIOS, &mut stream(seed, "synthetic/description-splits"))?;

    // scenarios
    let names_of = |ids: &[ClassId]| ids.iter().map(|c| labels.name(*c).to_string()).collect::<Vec<_>>();
    let seen_n = names_of(&seen);
    let mut entries = vec![
        (ScenarioId::S0, seen_n.clone(), SplitName::Train),
        (ScenarioId::S1, seen_n.clone(), SplitName::Test),
    ];
    if !unseen.is_empty() {
        entries.push((ScenarioId::S2, names_of(&unseen), SplitName::Test));
    }
    if per_super > 1 {
        entries.push((ScenarioId::S3, names_of(&superclasses), SplitName::Test));
    }
    let seen_refs: Vec<&str> = seen_n.iter().map(String::as_str).collect();
    let map: Vec<(&str, &str)> = superclass_of.iter().map(|(c, s)| (labels.name(*c), labels.name(*s))).collect();
    let scenarios = ScenarioFile::build(&seen_refs, &map, &entries);

    let lexicon = (spec.modality == Modality::Features).then(|| {
        labels
            .names()
            .iter()
            .map(|n| {
                let entry = LexiconEntry { synonyms: [alias(n)].into_iter().collect(), ..Default::default() };
                (n.clone(), entry)
            })
            .collect()
    });

    let signatures = seen.iter().chain(&unseen).map(|c| (*c, lay.signature[c.0].clone())).collect();
    Ok(SyntheticTask {
        spec: spec.clone(),
        labels,
        seen,
        unseen,
        superclasses,
        superclass_of,
        signatures,
        records,
        descriptions,
        splits,
        scenarios,
        lexicon,
    })
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl SyntheticTask {
    /// Number of instances per split (train, val, test).
    pub fn split_counts(&self) -> [usize; 3] {
        [self.records[0].len(), self.records[1].len(), self.records[2].len()]
    }

    /// Writes every file plus `manifest.json` into `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = ["instances_train.jsonl", "instances_val.jsonl", "instances_test.jsonl"];
        for (f, recs) in files.iter().zip(&self.records) {
            write_records(&dir.join(f), recs)?;
        }
        write_descriptions(&dir.join("descriptions.jsonl"), self.descriptions.iter())?;
        write_split_manifest(&dir.join("splits.json"), &SplitManifest::from_splits(&self.splits))?;
        self.scenarios.save(&dir.join("scenarios.json"))?;
        let lexicon = match &self.lexicon {
            Some(lex) => {
                let path = dir.join("lexicon.json");
                let s = serde_json::to_string_pretty(lex).map_err(|e| Error::json("lexicon", e))?;
                std::fs::write(&path, s + "\n").map_err(|e| Error::io(&path, e))?;
                Some("lexicon.json".into())
            }
            None => None,
        };
        let manifest = DatasetManifest {
            task: self.spec.task,
            modality: self.spec.modality,
            feature_dim: (self.spec.modality == Modality::Features).then_some(self.spec.feature_dim),
            classes: self.labels.names().to_vec(),
            instances: InstanceFiles { train: files[0].into(), val: files[1].into(), test: files[2].into() },
            descriptions: vec!["descriptions.jsonl".into()],
            split_manifest: Some("splits.json".into()),
            split_seed: 0,
            lexicon,
            substring_filter: false,
            scenarios: "scenarios.json".into(),
        };
        let path = dir.join(MANIFEST_FILE);
        manifest.save(&path)?;
        let spec = serde_json::to_string_pretty(&self.spec).map_err(|e| Error::json("synthetic spec", e))?;
        std::fs::write(dir.join("synthetic_spec.json"), spec + "\n").map_err(|e| Error::io(dir, e))?;
        Ok(path)
    }
}
