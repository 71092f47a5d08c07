//! Structured JSON descriptions assembled from dictionary material.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::RngCore;

use crate::descstore::{Description, JsonDescription};
use crate::error::{Error, Result};
use crate::labels::LabelSpace;
use crate::text::Lexicon;

pub const RELATED_POOL: usize = 20;
pub const RELATED_SAMPLE: usize = 6;

/// Ranked related terms per class, best first.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct RelatedTerms(pub BTreeMap<String, Vec<String>>);

impl RelatedTerms {
    /// JSON object `{class: [term, ...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let map = serde_json::from_str(&s).map_err(|e| Error::json(path.display().to_string(), e))?;
        Ok(RelatedTerms(map))
    }
}

/// `k` descriptions per class with keys `definition`, `hypernyms`,
/// `hyponyms` and `related`. Each description samples `min(6, available)`
/// of the top 20 related terms, kept in rank order.
pub fn make_json_descriptions<R: RngCore + ?Sized>(
    lexicon: &Lexicon,
    labels: &LabelSpace,
    classes: &[String],
    related: &RelatedTerms,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Description>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let missing: Vec<&str> = classes.iter().filter(|c| !lexicon.contains(c)).map(String::as_str).collect();
    if !missing.is_empty() {
        return Err(Error::MissingLexiconEntry(missing.join(", ")));
    }
    let no_terms: Vec<&str> = classes
        .iter()
        .filter(|c| related.0.get(*c).is_none_or(Vec::is_empty))
        .map(String::as_str)
        .collect();
    if !no_terms.is_empty() {
        return Err(Error::Validation(format!("no related terms for: {}", no_terms.join(", "))));
    }
    let mut out = Vec::with_capacity(classes.len() * k);
    for name in classes {
        let class = labels.require(name)?;
        let entry = lexicon.get(name).expect("checked above");
        let terms = &related.0[name];
        let pool = &terms[..terms.len().min(RELATED_POOL)];
        for _ in 0..k {
            let mut picked = index::sample(rng, pool.len(), pool.len().min(RELATED_SAMPLE)).into_vec();
            picked.sort_unstable();
            let j = JsonDescription::new(vec![
                ("definition".into(), entry.definition.iter().cloned().collect()),
                ("hypernyms".into(), entry.hypernyms.clone()),
                ("hyponyms".into(), entry.hyponyms.iter().cloned().collect()),
                ("related".into(), picked.into_iter().map(|i| pool[i].clone()).collect()),
            ])?;
            out.push(Description::from_json(class, name, j)?);
        }
    }
    Ok(out)
}
