//! Description files (JSON Lines) and split manifests.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Description, DescriptionCatalog, DescriptionFormat, JsonDescription, SplitName};
use crate::error::{Error, Result};
use crate::labels::LabelSpace;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    class: String,
    format: DescriptionFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attrs: Option<Value>,
}

fn parse_record(rec: Record, labels: &LabelSpace, where_: &str) -> Result<Description> {
    let class = labels
        .id(&rec.class)
        .ok_or_else(|| Error::Validation(format!("{where_}: unknown class `{}`", rec.class)))?;
    match (rec.format, rec.text, rec.attrs) {
        (DescriptionFormat::Nl, Some(t), None) => Description::nl(class, &rec.class, t),
        (DescriptionFormat::Json, None, Some(a)) => {
            Description::from_json(class, &rec.class, JsonDescription::from_value(&a)?)
        }
        (DescriptionFormat::Json, Some(t), None) => {
            let v: Value = serde_json::from_str(&t).map_err(|e| Error::json(where_, e))?;
            Description::from_json(class, &rec.class, JsonDescription::from_value(&v)?)
        }
        (f, _, _) => Err(Error::Validation(format!(
            "{where_}: a `{f}` record needs exactly one of `text` (nl or json) / `attrs` (json)"
        ))),
    }
}

/// Reads a JSON Lines description file. Blank lines are skipped.
pub fn load_descriptions(path: &Path, labels: &LabelSpace) -> Result<Vec<Description>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let where_ = format!("{}:{}", path.display(), i + 1);
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::json(&where_, e))?;
        out.push(parse_record(rec, labels, &where_)?);
    }
    Ok(out)
}

pub fn write_descriptions<'a>(path: &Path, descs: impl IntoIterator<Item = &'a Description>) -> Result<()> {
    let mut buf = Vec::new();
    for d in descs {
        let rec = match (&d.format, &d.json) {
            (DescriptionFormat::Json, Some(j)) => Record {
                class: d.class_name.clone(),
                format: DescriptionFormat::Json,
                text: None,
                attrs: Some(j.to_value()),
            },
            _ => Record {
                class: d.class_name.clone(),
                format: DescriptionFormat::Nl,
                text: Some(d.raw.clone()),
                attrs: None,
            },
        };
        serde_json::to_writer(&mut buf, &rec).map_err(|e| Error::json("description record", e))?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

/// Content hashes per split.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn from_splits(splits: &[DescriptionCatalog; 3]) -> Self {
        let hashes = |c: &DescriptionCatalog| c.iter().map(|d| d.hash.clone()).collect();
        SplitManifest {
            train: hashes(&splits[0]),
            val: hashes(&splits[1]),
            test: hashes(&splits[2]),
        }
    }

    /// Partitions `catalog` by hash. Unknown hashes, hashes listed twice
    /// and unassigned descriptions are errors.
    pub fn apply(&self, catalog: &DescriptionCatalog) -> Result<[DescriptionCatalog; 3]> {
        let mut assign: BTreeMap<&str, SplitName> = BTreeMap::new();
        for (split, list) in [(SplitName::Train, &self.train), (SplitName::Val, &self.val), (SplitName::Test, &self.test)] {
            for h in list {
                if assign.insert(h.as_str(), split).is_some() {
                    return Err(Error::Validation(format!("description {h} appears in more than one split")));
                }
            }
        }
        let known = catalog.hashes();
        if let Some(h) = assign.keys().find(|h| !known.contains(*h)) {
            return Err(Error::Validation(format!("split manifest names unknown description {h}")));
        }
        let mut parts: [Vec<Description>; 3] = Default::default();
        for d in catalog.iter() {
            let split = *assign.get(d.hash.as_str()).ok_or_else(|| {
                Error::Validation(format!("description {} of `{}` is in no split", d.hash, d.class_name))
            })?;
            let idx = SplitName::ALL.iter().position(|s| *s == split).unwrap();
            parts[idx].push(d.clone().with_split(split));
        }
        let [a, b, c] = parts;
        Ok([DescriptionCatalog::new(a), DescriptionCatalog::new(b), DescriptionCatalog::new(c)])
    }
}

pub fn read_split_manifest(path: &Path) -> Result<SplitManifest> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| Error::json(path.display().to_string(), e))
}

pub fn write_split_manifest(path: &Path, m: &SplitManifest) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, m).map_err(|e| Error::json("split manifest", e))?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}
