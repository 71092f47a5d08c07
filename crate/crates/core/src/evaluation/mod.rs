//! Scenario evaluation, metrics and embedding export.

mod metrics;
mod scenario;

pub use metrics::{accuracy, class_positions, lrap, predict};
pub use scenario::{check_scenario, ScenarioFile, ScenarioId, ScenarioSet, ScenarioSpec};

use std::io::Write;
use std::path::Path;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::data::{Instance, TaskKind};
use crate::descstore::{concat_descriptions, DescriptionCatalog};
use crate::error::{Error, Result};
use crate::labels::{ClassId, LabelSpace};
use crate::model::{ClassHead, Model, ModelKind};
use crate::rng::{stream, sub_seed};
use crate::scoring::name_template_catalog;
use crate::tensor::Graph;

/// Logits of every instance, one seeded class head per batch (averaged
/// over `eval_samples` independent heads).
#[allow(clippy::too_many_arguments)]
pub fn score_instances<R: RngCore + ?Sized>(
    model: &Model,
    instances: &[Instance],
    classes: &[ClassId],
    catalog: &DescriptionCatalog,
    labels: &LabelSpace,
    batch_size: usize,
    eval_samples: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if batch_size == 0 || eval_samples == 0 {
        return Err(Error::InvalidArgument("batch_size and eval_samples must be positive".into()));
    }
    let mut out = Vec::with_capacity(instances.len());
    for batch in instances.chunks(batch_size) {
        let mut acc = vec![vec![0.0; classes.len()]; batch.len()];
        for _ in 0..eval_samples {
            let mut g = Graph::new();
            let b = model.bind(&mut g)?;
            let head = model.class_head(&mut g, &b, classes, catalog, labels, rng)?;
            for (inst, row) in batch.iter().zip(acc.iter_mut()) {
                let input = model.encode_input(&mut g, &b, inst)?;
                let (l, _) = model.logits(&mut g, &b, &head, &input)?;
                row.iter_mut().zip(g.value(l).values()).for_each(|(a, v)| *a += v);
            }
        }
        let k = eval_samples as f64;
        out.extend(acc.into_iter().map(|r| r.into_iter().map(|v| v / k).collect::<Vec<_>>()));
    }
    Ok(out)
}

/// Accuracy (multiclass) or LRAP (multilabel) of `scores`.
pub fn task_metric(task: TaskKind, scores: &[Vec<f64>], instances: &[Instance], classes: &[ClassId]) -> Result<f64> {
    let truth = instances
        .iter()
        .map(|i| {
            class_positions(classes, &i.labels)
                .ok_or_else(|| Error::Validation(format!("instance `{}` has a label outside the class set", i.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    match task {
        TaskKind::Multiclass => accuracy(scores, &truth.iter().map(|t| t[0]).collect::<Vec<_>>()),
        TaskKind::Multilabel => lrap(scores, &truth),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub scenario: ScenarioId,
    pub metric: String,
    pub value: f64,
    pub n_instances: usize,
    pub eval_samples: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_class: Vec<ClassAccuracy>,
}

/// Everything a scenario evaluation reads besides the scenario itself.
#[derive(Clone, Copy, Debug)]
pub struct EvalContext<'a> {
    pub model: &'a Model,
    pub labels: &'a LabelSpace,
    pub task: TaskKind,
    pub train_classes: &'a [ClassId],
    /// Train, val and test description catalogs.
    pub catalogs: &'a [DescriptionCatalog; 3],
    pub batch_size: usize,
    pub eval_samples: usize,
    /// Concatenate up to this many descriptions per class instead of sampling.
    pub concat_k: Option<usize>,
}

/// Each class's first `min(k, |C_j|)` descriptions joined into one.
pub fn concat_catalog(catalog: &DescriptionCatalog, k: usize) -> Result<DescriptionCatalog> {
    let descs = catalog
        .classes()
        .map(|c| {
            let list = catalog.get(c);
            concat_descriptions(list, k.min(list.len()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DescriptionCatalog::new(descs))
}

/// Runs the leakage guards, selects the scenario's instances, scores them
/// against seeded class heads and reports the task metric.
pub fn evaluate_scenario(ctx: &EvalContext<'_>, spec: &ScenarioSpec, instances: &[Instance], seed: u64) -> Result<EvalReport> {
    let split_idx = crate::descstore::SplitName::ALL.iter().position(|s| *s == spec.description_split).unwrap();
    let eval_catalog = &ctx.catalogs[split_idx];
    check_scenario(spec, ctx.train_classes, &ctx.catalogs[0], eval_catalog, ctx.labels)?;
    let selected = spec.select_instances(instances);
    if selected.is_empty() {
        return Err(Error::Validation(format!("scenario {} selects no instances", spec.id)));
    }
    let catalog = match ctx.concat_k {
        Some(k) if ctx.model.kind().samples_descriptions() => concat_catalog(&eval_catalog.restrict(&spec.classes), k)?,
        _ => eval_catalog.restrict(&spec.classes),
    };
    let mut rng = stream(seed, &format!("eval/{}", spec.id));
    let scores = score_instances(
        ctx.model,
        &selected,
        &spec.classes,
        &catalog,
        ctx.labels,
        ctx.batch_size,
        ctx.eval_samples,
        &mut rng,
    )?;
    let value = task_metric(ctx.task, &scores, &selected, &spec.classes)?;
    let mut per_class = Vec::new();
    if ctx.task == TaskKind::Multiclass {
        for (j, &c) in spec.classes.iter().enumerate() {
            let rows: Vec<usize> = (0..selected.len()).filter(|&i| selected[i].labels[0] == c).collect();
            let correct = rows
                .iter()
                .map(|&i| predict(&scores[i]).map(|p| (p == j) as usize))
                .sum::<Result<usize>>()?;
            per_class.push(ClassAccuracy {
                class: ctx.labels.name(c).to_string(),
                n: rows.len(),
                correct,
                accuracy: if rows.is_empty() { 0.0 } else { correct as f64 / rows.len() as f64 },
            });
        }
    }
    Ok(EvalReport {
        seed,
        config_hash: None,
        scenario: spec.id,
        metric: match ctx.task {
            TaskKind::Multiclass => "accuracy".into(),
            TaskKind::Multilabel => "lrap".into(),
        },
        value,
        n_instances: selected.len(),
        eval_samples: ctx.eval_samples,
        per_class,
    })
}

/// One exported vector.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingRow {
    pub kind: &'static str,
    pub class: ClassId,
    pub values: Vec<f64>,
}

/// Input embeddings (projected into the class space where the model has a
/// projection) and class-side embeddings for the scenario's classes.
/// Columns are standardized jointly, then every row is L2-normalized.
pub fn export_embeddings(
    model: &Model,
    instances: &[Instance],
    catalog: &DescriptionCatalog,
    spec: &ScenarioSpec,
    labels: &LabelSpace,
) -> Result<Vec<EmbeddingRow>> {
    let selected = spec.select_instances(instances);
    let mut rows = Vec::new();
    let mut g = Graph::new();
    let b = model.bind(&mut g)?;
    for inst in &selected {
        let input = model.encode_input(&mut g, &b, inst)?;
        let v = match b.proj {
            Some(p) => g.matmul(p.p, input.pooled)?,
            None => input.pooled,
        };
        rows.push(EmbeddingRow { kind: "input", class: inst.labels[0], values: g.value(v).values().to_vec() });
    }
    let class_catalog = match model.kind() {
        ModelKind::BiencNames => name_template_catalog(labels, &spec.classes, model.modality == crate::data::Modality::Features)?,
        _ => catalog.restrict(&spec.classes),
    };
    for &c in &spec.classes {
        match model.kind() {
            ModelKind::Sup | ModelKind::Devise => {
                let mut rng = stream(0, "export");
                let head = model.class_head(&mut g, &b, &[c], &class_catalog, labels, &mut rng)?;
                let m = match head {
                    ClassHead::Sup { o } => o,
                    ClassHead::NameVectors { w } => w,
                    _ => unreachable!("sup and devise heads"),
                };
                let row = g.value(m).values().to_vec();
                rows.push(EmbeddingRow { kind: "description", class: c, values: row });
            }
            ModelKind::Gile => {
                let wv = model.word_vectors.as_ref().expect("gile word vectors");
                for d in class_catalog.get(c) {
                    if let Some(v) = wv.mean(&d.tokens) {
                        rows.push(EmbeddingRow { kind: "description", class: c, values: v });
                    }
                }
            }
            _ => {
                let enc = b.g.as_ref().expect("description encoder");
                for d in class_catalog.get(c) {
                    let seq = model.vocab.encode(&d.tokens, model.config.max_len);
                    let e = crate::encoders::encode_text(&mut g, enc, &seq)?;
                    rows.push(EmbeddingRow { kind: "description", class: c, values: g.value(e.pooled).values().to_vec() });
                }
            }
        }
    }
    standardize_and_normalize(&mut rows);
    Ok(rows)
}

fn standardize_and_normalize(rows: &mut [EmbeddingRow]) {
    let Some(d) = rows.first().map(|r| r.values.len()) else { return };
    let n = rows.len() as f64;
    for j in 0..d {
        let mean = rows.iter().map(|r| r.values[j]).sum::<f64>() / n;
        let var = rows.iter().map(|r| (r.values[j] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for r in rows.iter_mut() {
            r.values[j] -= mean;
            if sd > 0.0 {
                r.values[j] /= sd;
            }
        }
    }
    for r in rows.iter_mut() {
        let norm = r.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            r.values.iter_mut().for_each(|v| *v /= norm);
        }
    }
}

/// CSV with a `# seed=… config_hash=…` comment line, then
/// `kind,class,d0,…`.
pub fn write_embeddings_csv(
    path: &Path,
    rows: &[EmbeddingRow],
    labels: &LabelSpace,
    d_model: usize,
    seed: u64,
    config_hash: &str,
) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "# seed={seed} config_hash={config_hash}").unwrap();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        let mut header = vec!["kind".to_string(), "class".to_string()];
        header.extend((0..d_model).map(|i| format!("d{i}")));
        w.write_record(&header).map_err(|e| Error::Validation(format!("csv: {e}")))?;
        for r in rows {
            let mut rec = vec![r.kind.to_string(), labels.name(r.class).to_string()];
            rec.extend(r.values.iter().map(|v| format!("{v:e}")));
            w.write_record(&rec).map_err(|e| Error::Validation(format!("csv: {e}")))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Stable sub-seed for evaluation streams of a run.
pub fn eval_seed(run_seed: u64) -> u64 {
    sub_seed(run_seed, "eval")
}
