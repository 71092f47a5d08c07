//! Minibatch training with per-batch output matrices.
//!
//! Each batch builds one graph: the class head (for description models, one
//! sampled description per class) is shared by every instance in the batch,
//! the mean loss is backpropagated once and AdamW updates all parameters.

mod early_stop;
mod optimizer;

pub use early_stop::{EarlyStopper, StopDecision};
pub use optimizer::{adamw_step, AdamWConfig, OptimizerState};

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Instance, Modality, TaskKind};
use crate::descstore::DescriptionCatalog;
use crate::error::{Error, Result};
use crate::evaluation::{class_positions, score_instances, task_metric};
use crate::labels::{ClassId, LabelSpace};
use crate::model::Model;
use crate::rng::{stream, sub_seed};
use crate::tensor::{Graph, NodeId};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Defaults to 2e-5 for text and 1e-4 for feature inputs.
    pub lr: Option<f64>,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    /// Use the first n training descriptions of each class.
    pub n_descriptions: Option<usize>,
    /// Train on one concatenation of the first k descriptions per class.
    pub concat_k: Option<usize>,
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: None,
            weight_decay: 0.01,
            betas: (0.9, 0.999),
            eps: 1e-8,
            batch_size: 32,
            max_epochs: 30,
            patience: 5,
            n_descriptions: None,
            concat_k: None,
            eval_samples: 1,
        }
    }
}

impl TrainConfig {
    pub fn learning_rate(&self, modality: Modality) -> f64 {
        self.lr.unwrap_or(match modality {
            Modality::Text => 2e-5,
            Modality::Features => 1e-4,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Validation(format!("train.{m}")));
        match (self.n_descriptions, self.concat_k) {
            (Some(_), Some(_)) | (None, None) => return bad("exactly one of n_descriptions / concat_k must be set"),
            (Some(0), _) | (_, Some(0)) => return bad("n_descriptions / concat_k must be at least 1"),
            _ => {}
        }
        if let Some(lr) = self.lr {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(&format!("lr must be positive, got {lr}"));
            }
        }
        let (b1, b2) = self.betas;
        if !((0.0..1.0).contains(&b1) && (0.0..1.0).contains(&b2)) {
            return bad(&format!("betas must lie in [0, 1), got ({b1}, {b2})"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("eps must be positive and weight_decay non-negative");
        }
        if self.batch_size == 0 || self.eval_samples == 0 {
            return bad("batch_size and eval_samples must be positive");
        }
        Ok(())
    }

    pub fn adamw(&self, modality: Modality) -> AdamWConfig {
        AdamWConfig { lr: self.learning_rate(modality), betas: self.betas, eps: self.eps, weight_decay: self.weight_decay }
    }

    /// The training catalog the model sees: truncated to n per class or
    /// replaced by the Concat-k description.
    pub fn shape_catalog(&self, catalog: &DescriptionCatalog, labels: &LabelSpace) -> Result<DescriptionCatalog> {
        match (self.n_descriptions, self.concat_k) {
            (Some(n), None) => catalog.truncate(n, |c| labels.name(c).to_string()),
            (None, Some(k)) => catalog.concat(k),
            _ => Err(Error::Validation("exactly one of n_descriptions / concat_k must be set".into())),
        }
    }
}

/// Independent random streams of one run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Seeds {
    pub shuffle: u64,
    pub descriptions: u64,
    pub eval: u64,
}

impl Seeds {
    pub fn from_run(seed: u64) -> Self {
        Seeds::with_description_label(seed, "descriptions")
    }

    /// Same shuffle and eval streams, description stream keyed by `label`.
    pub fn with_description_label(seed: u64, label: &str) -> Self {
        Seeds { shuffle: sub_seed(seed, "shuffle"), descriptions: sub_seed(seed, label), eval: sub_seed(seed, "eval") }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub is_best: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.is_best)
    }

    /// CSV with one row per epoch, preceded by a `# seed=.. config_hash=..`
    /// comment when `provenance` is given.
    pub fn write_csv(&self, path: &Path, provenance: Option<(u64, &str)>) -> Result<()> {
        let mut out = Vec::new();
        if let Some((seed, hash)) = provenance {
            writeln!(out, "# seed={seed} config_hash={hash}").unwrap();
        }
        writeln!(out, "epoch,train_loss,val_metric,is_best").unwrap();
        for e in &self.epochs {
            writeln!(out, "{},{:e},{:e},{}", e.epoch, e.train_loss, e.val_metric, e.is_best).unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Inputs of one training run.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub labels: &'a LabelSpace,
    pub task: TaskKind,
    /// Strictly ascending.
    pub classes: &'a [ClassId],
    pub train: &'a [Instance],
    pub val: &'a [Instance],
    /// Training-split descriptions of `classes`.
    pub catalog: &'a DescriptionCatalog,
}

fn instance_loss(g: &mut Graph, logits: NodeId, inst: &Instance, classes: &[ClassId], task: TaskKind) -> Result<NodeId> {
    let pos = class_positions(classes, &inst.labels)
        .ok_or_else(|| Error::Validation(format!("instance `{}` has a label outside the training classes", inst.id)))?;
    match task {
        TaskKind::Multiclass => g.softmax_cross_entropy(logits, pos[0]),
        TaskKind::Multilabel => {
            let mut hot = vec![0.0; classes.len()];
            pos.iter().for_each(|&p| hot[p] = 1.0);
            g.bce_with_logits(logits, &hot)
        }
    }
}

/// Mean loss of one batch and the gradient of every parameter.
pub fn batch_gradients<R: rand::RngCore + ?Sized>(
    model: &Model,
    batch: &[&Instance],
    data: &TrainData<'_>,
    catalog: &DescriptionCatalog,
    rng: &mut R,
) -> Result<(f64, BTreeMap<String, Vec<f64>>)> {
    let mut g = Graph::new();
    let b = model.bind(&mut g)?;
    let head = model.class_head(&mut g, &b, data.classes, catalog, data.labels, rng)?;
    let mut losses = Vec::with_capacity(batch.len());
    for inst in batch {
        let input = model.encode_input(&mut g, &b, inst)?;
        let (logits, _) = model.logits(&mut g, &b, &head, &input)?;
        losses.push(instance_loss(&mut g, logits, inst, data.classes, data.task)?);
    }
    let stacked = g.stack(&losses)?;
    let total = g.sum(stacked)?;
    let loss = g.scale(total, 1.0 / batch.len() as f64)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numerical(format!("loss is {value}")));
    }
    let grads = g.backward(loss)?;
    let mut out = BTreeMap::new();
    for (name, node) in b.params.iter() {
        let gv = grads.get(node).expect("parameters require gradients").to_vec();
        if gv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite gradient for `{name}`")));
        }
        out.insert(name.to_string(), gv);
    }
    Ok((value, out))
}

/// Trains `model` in place and leaves it at the parameters of the best
/// validation epoch. With `max_epochs = 0` the model is untouched.
pub fn train(model: &mut Model, cfg: &TrainConfig, data: &TrainData<'_>, seeds: Seeds) -> Result<TrainHistory> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Validation("no training instances".into()));
    }
    if data.val.is_empty() {
        return Err(Error::Validation("no validation instances".into()));
    }
    let catalog = if model.kind().samples_descriptions() {
        cfg.shape_catalog(&data.catalog.restrict(data.classes), data.labels)?
    } else {
        data.catalog.restrict(data.classes)
    };
    let adamw = cfg.adamw(model.modality);
    let mut state = OptimizerState::new();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut history = TrainHistory::default();
    let mut best_params = model.params.clone();
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle_rng = stream(seeds.shuffle, "epochs");
    let mut desc_rng = stream(seeds.descriptions, "batches");

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Instance> = chunk.iter().map(|&i| &data.train[i]).collect();
            let (loss, grads) = batch_gradients(model, &batch, data, &catalog, &mut desc_rng)
                .map_err(|e| match e {
                    Error::Numerical(m) => Error::Numerical(format!("epoch {epoch}, batch {}: {m}", bi + 1)),
                    other => other,
                })?;
            loss_sum += loss * batch.len() as f64;
            adamw_step(&mut model.params, &grads, &mut state, &adamw)?;
        }
        let train_loss = loss_sum / data.train.len() as f64;
        let mut eval_rng = stream(seeds.eval, "validation");
        let scores = score_instances(
            model,
            data.val,
            data.classes,
            &catalog,
            data.labels,
            cfg.batch_size,
            cfg.eval_samples,
            &mut eval_rng,
        )?;
        let val_metric = task_metric(data.task, &scores, data.val, data.classes)?;
        if !val_metric.is_finite() {
            return Err(Error::Numerical(format!("epoch {epoch}: validation metric is {val_metric}")));
        }
        let (improved, decision) = stopper.update(epoch, val_metric);
        if improved {
            best_params = model.params.clone();
        }
        history.epochs.push(EpochRecord { epoch, train_loss, val_metric, is_best: false });
        if decision == StopDecision::Stop {
            break;
        }
    }
    if let Some((best, _)) = stopper.best() {
        history.epochs[best - 1].is_best = true;
    }
    model.params = best_params;
    Ok(history)
}
