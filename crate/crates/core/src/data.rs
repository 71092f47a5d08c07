//! Instances and instance files.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{ClassId, LabelSpace};
use crate::text::{filter_annotations, tokenize, Lexicon};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    #[default]
    Text,
    Features,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    #[default]
    Multiclass,
    Multilabel,
}

#[derive(Clone, Debug, PartialEq)]
pub enum InstanceInput {
    /// Tokenized text.
    Text(Vec<String>),
    /// A fixed-length feature vector and its (already filtered) detections.
    Features { features: Vec<f64>, annotations: Vec<String> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: String,
    pub input: InstanceInput,
    pub labels: Vec<ClassId>,
}

impl Instance {
    /// Tokens the vocabulary should see for this instance.
    pub fn vocabulary_tokens(&self) -> Vec<String> {
        match &self.input {
            InstanceInput::Text(t) => t.clone(),
            InstanceInput::Features { annotations, .. } => {
                tokenize(&crate::text::render_annotation_text(annotations))
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct InstanceRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotations: Option<Vec<String>>,
    pub labels: Vec<String>,
}

fn check_labels(id: &str, labels: &[ClassId], task: TaskKind) -> Result<()> {
    match (task, labels.len()) {
        (_, 0) => Err(Error::Validation(format!("instance `{id}` has no labels"))),
        (TaskKind::Multiclass, 1) | (TaskKind::Multilabel, _) => Ok(()),
        (TaskKind::Multiclass, n) => Err(Error::Validation(format!(
            "instance `{id}` has {n} labels but the task is multiclass"
        ))),
    }
}

/// Reads a JSON Lines instance file. Labels are class names.
pub fn load_instances(path: &Path, modality: Modality, task: TaskKind, labels: &LabelSpace) -> Result<Vec<Instance>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{}:{}", path.display(), i + 1);
        let r: InstanceRecord = serde_json::from_str(&line).map_err(|e| Error::json(&at, e))?;
        let ids = r
            .labels
            .iter()
            .map(|l| labels.id(l).ok_or_else(|| Error::Validation(format!("{at}: unknown class `{l}`"))))
            .collect::<Result<Vec<_>>>()?;
        check_labels(&r.id, &ids, task)?;
        let input = match (modality, r.text, r.features) {
            (Modality::Text, Some(t), None) => InstanceInput::Text(tokenize(&t)),
            (Modality::Features, None, Some(f)) => {
                if f.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Validation(format!("{at}: non-finite feature value")));
                }
                InstanceInput::Features { features: f, annotations: r.annotations.unwrap_or_default() }
            }
            _ => {
                return Err(Error::Validation(format!(
                    "{at}: a {modality:?} instance needs exactly one of `text` / `features`"
                )))
            }
        };
        out.push(Instance { id: r.id, input, labels: ids });
    }
    Ok(out)
}

/// Writes instances with raw text given separately (tokenized text cannot
/// be detokenized faithfully, so callers pass the source strings).
pub(crate) fn write_records(path: &Path, records: &[InstanceRecord]) -> Result<()> {
    let mut buf = Vec::new();
    for r in records {
        serde_json::to_writer(&mut buf, r).map_err(|e| Error::json("instance record", e))?;
        buf.write_all(b"\n").expect("writing to a Vec cannot fail");
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Removes detections that reveal any of an instance's labels.
pub fn filter_instance_annotations(
    instances: &mut [Instance],
    labels: &LabelSpace,
    lexicon: &Lexicon,
    substring: bool,
) -> Result<()> {
    for inst in instances {
        if let InstanceInput::Features { annotations, .. } = &mut inst.input {
            for &c in &inst.labels {
                *annotations = filter_annotations(annotations, labels.name(c), lexicon, substring)?;
            }
        }
    }
    Ok(())
}

/// Filters the annotations of every record in an instance file against its
/// labels and writes the result; returns how many detections were removed.
pub fn filter_instance_file(input: &Path, output: &Path, lexicon: &Lexicon, substring: bool) -> Result<usize> {
    let text = std::fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let mut records = Vec::new();
    let mut removed = 0;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let at = format!("{}:{}", input.display(), i + 1);
        let mut r: InstanceRecord = serde_json::from_str(line).map_err(|e| Error::json(&at, e))?;
        if let Some(dets) = &mut r.annotations {
            let before = dets.len();
            for l in &r.labels {
                *dets = filter_annotations(dets, l, lexicon, substring)?;
            }
            removed += before - dets.len();
        }
        records.push(r);
    }
    write_records(output, &records)?;
    Ok(removed)
}

/// Label ids mapped through `map`, deduplicated, order preserved.
pub fn relabel(labels: &[ClassId], map: impl Fn(ClassId) -> Option<ClassId>) -> Option<Vec<ClassId>> {
    let mut out: Vec<ClassId> = Vec::new();
    for &l in labels {
        let m = map(l)?;
        if !out.contains(&m) {
            out.push(m);
        }
    }
    Some(out)
}
