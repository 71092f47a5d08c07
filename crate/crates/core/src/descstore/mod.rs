//! Per-class description sets and everything that draws from them.
//!
//! A [`DescriptionCatalog`] keeps each class's descriptions sorted by content
//! hash so that list order, and therefore every seeded draw, is independent
//! of file order.

mod io;
mod json;

pub use io::{load_descriptions, read_split_manifest, write_descriptions, write_split_manifest, SplitManifest};
pub use json::{augment_json, flatten_json, parse_flat, JsonDescription};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::ClassId;
use crate::rng::uniform_index;
use crate::text::tokenize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DescriptionFormat {
    Nl,
    Json,
}

impl fmt::Display for DescriptionFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescriptionFormat::Nl => "nl",
            DescriptionFormat::Json => "json",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        })
    }
}

/// One element of a class's description set.
#[derive(Clone, Debug, PartialEq)]
pub struct Description {
    pub class: ClassId,
    pub class_name: String,
    pub format: DescriptionFormat,
    /// NL text, or the flattened form of `json`.
    pub raw: String,
    pub json: Option<JsonDescription>,
    pub tokens: Vec<String>,
    pub split: Option<SplitName>,
    /// Hex sha256 of class name, format and raw text.
    pub hash: String,
}

fn content_hash(class_name: &str, format: DescriptionFormat, raw: &str) -> String {
    let mut h = Sha256::new();
    h.update(class_name.as_bytes());
    h.update([0x1f]);
    h.update(format.to_string().as_bytes());
    h.update([0x1f]);
    h.update(raw.as_bytes());
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl Description {
    pub fn nl(class: ClassId, class_name: &str, raw: impl Into<String>) -> Result<Self> {
        let raw = raw.into();
        if raw.trim().is_empty() {
            return Err(Error::Validation(format!("empty description for class `{class_name}`")));
        }
        Ok(Description {
            class,
            class_name: class_name.to_string(),
            format: DescriptionFormat::Nl,
            tokens: tokenize(&raw),
            hash: content_hash(class_name, DescriptionFormat::Nl, &raw),
            raw,
            json: None,
            split: None,
        })
    }

    pub fn from_json(class: ClassId, class_name: &str, j: JsonDescription) -> Result<Self> {
        let raw = flatten_json(&j);
        if raw.trim().is_empty() {
            return Err(Error::Validation(format!("empty JSON description for class `{class_name}`")));
        }
        Ok(Description {
            class,
            class_name: class_name.to_string(),
            format: DescriptionFormat::Json,
            tokens: tokenize(&raw),
            hash: content_hash(class_name, DescriptionFormat::Json, &raw),
            raw,
            json: Some(j),
            split: None,
        })
    }

    pub fn with_split(mut self, split: SplitName) -> Self {
        self.split = Some(split);
        self
    }
}

/// Uniform draw from `descs`, consuming exactly one value from `rng`.
pub fn sample_description<'a, R: RngCore + ?Sized>(
    class_name: &str,
    descs: &'a [Description],
    rng: &mut R,
) -> Result<&'a Description> {
    if descs.is_empty() {
        return Err(Error::EmptyDescriptions(class_name.to_string()));
    }
    Ok(&descs[uniform_index(rng, descs.len())])
}

/// The first `k` descriptions joined by single spaces into one NL
/// description. JSON members contribute their flattened text.
pub fn concat_descriptions(descs: &[Description], k: usize) -> Result<Description> {
    if k == 0 {
        return Err(Error::InvalidArgument("concat_k must be at least 1".into()));
    }
    if k > descs.len() {
        let name = descs.first().map(|d| d.class_name.as_str()).unwrap_or("?");
        return Err(Error::Validation(format!(
            "concat_k = {k} exceeds the {} descriptions of class `{name}`",
            descs.len()
        )));
    }
    let raw = descs[..k].iter().map(|d| d.raw.as_str()).collect::<Vec<_>>().join(" ");
    let first = &descs[0];
    let mut d = Description::nl(first.class, &first.class_name, raw)?;
    d.split = first.split;
    Ok(d)
}

/// Per-class split sizes: nearest rounding for val and test, train takes
/// the remainder, and every split keeps at least one description.
pub fn split_sizes(n: usize, ratios: (f64, f64, f64)) -> Result<[usize; 3]> {
    let (tr, va, te) = ratios;
    if !(tr > 0.0 && va > 0.0 && te > 0.0) || ((tr + va + te) - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "split ratios must be positive and sum to 1, got ({tr}, {va}, {te})"
        )));
    }
    if n < 3 {
        return Err(Error::Validation(format!("{n} descriptions cannot fill three splits")));
    }
    let val = ((n as f64 * va).round() as usize).max(1);
    let test = ((n as f64 * te).round() as usize).max(1);
    let mut sizes = [n.saturating_sub(val + test), val, test];
    // Borrow from the largest of val/test until train is non-empty.
    while sizes[0] == 0 {
        let donor = if sizes[1] >= sizes[2] { 1 } else { 2 };
        sizes[donor] -= 1;
        sizes[0] += 1;
    }
    Ok(sizes)
}

/// Immutable per-class description lists.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DescriptionCatalog {
    classes: BTreeMap<ClassId, Vec<Description>>,
}

impl DescriptionCatalog {
    /// Groups by class, sorts each list by content hash and drops exact
    /// duplicates.
    pub fn new(descriptions: impl IntoIterator<Item = Description>) -> Self {
        let mut classes: BTreeMap<ClassId, Vec<Description>> = BTreeMap::new();
        for d in descriptions {
            classes.entry(d.class).or_default().push(d);
        }
        for list in classes.values_mut() {
            list.sort_by(|a, b| a.hash.cmp(&b.hash));
            list.dedup_by(|a, b| a.hash == b.hash);
        }
        DescriptionCatalog { classes }
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        self.classes.keys().copied()
    }

    pub fn get(&self, class: ClassId) -> &[Description] {
        self.classes.get(&class).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, class: ClassId) -> bool {
        !self.get(class).is_empty()
    }

    pub fn len(&self) -> usize {
        self.classes.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = &Description> {
        self.classes.values().flatten()
    }

    pub fn hashes(&self) -> BTreeSet<&str> {
        self.iter().map(|d| d.hash.as_str()).collect()
    }

    /// Only the listed classes.
    pub fn restrict(&self, classes: &[ClassId]) -> Self {
        DescriptionCatalog {
            classes: classes
                .iter()
                .filter_map(|c| self.classes.get(c).map(|l| (*c, l.clone())))
                .collect(),
        }
    }

    /// Keeps the first `n` descriptions of every class.
    pub fn truncate(&self, n: usize, names: impl Fn(ClassId) -> String) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n_descriptions must be at least 1".into()));
        }
        let short: Vec<String> = self
            .classes
            .iter()
            .filter(|(_, l)| l.len() < n)
            .map(|(c, l)| format!("{} ({})", names(*c), l.len()))
            .collect();
        if !short.is_empty() {
            return Err(Error::Validation(format!(
                "n_descriptions = {n} exceeds the catalog for: {}",
                short.join(", ")
            )));
        }
        Ok(DescriptionCatalog {
            classes: self.classes.iter().map(|(c, l)| (*c, l[..n].to_vec())).collect(),
        })
    }

    /// One Concat-k description per class.
    pub fn concat(&self, k: usize) -> Result<Self> {
        let mut out = Vec::with_capacity(self.classes.len());
        for list in self.classes.values() {
            out.push(concat_descriptions(list, k)?);
        }
        Ok(DescriptionCatalog::new(out))
    }

    /// Seeded per-class partition into train/val/test catalogs, in ascending
    /// class order.
    pub fn split<R: RngCore + ?Sized>(&self, ratios: (f64, f64, f64), rng: &mut R) -> Result<[Self; 3]> {
        let short: Vec<String> = self
            .classes
            .values()
            .filter(|l| l.len() < 3)
            .map(|l| format!("{} ({})", l[0].class_name, l.len()))
            .collect();
        if !short.is_empty() {
            return Err(Error::Validation(format!(
                "classes with fewer than 3 descriptions cannot be split: {}",
                short.join(", ")
            )));
        }
        let mut parts: [Vec<Description>; 3] = Default::default();
        for list in self.classes.values() {
            let sizes = split_sizes(list.len(), ratios)?;
            let mut shuffled = list.clone();
            shuffled.shuffle(rng);
            let mut it = shuffled.into_iter();
            for (s, split) in SplitName::ALL.into_iter().enumerate() {
                parts[s].extend(it.by_ref().take(sizes[s]).map(|d| d.with_split(split)));
            }
        }
        let [a, b, c] = parts;
        Ok([DescriptionCatalog::new(a), DescriptionCatalog::new(b), DescriptionCatalog::new(c)])
    }
}
