//! Image-annotation text: label-leak filtering and template rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ANNOTATION_TEMPLATE: &str = "This photo contains:";

/// Lowercase, underscores as spaces, whitespace runs collapsed.
pub fn normalize(s: &str) -> String {
    s.to_lowercase()
        .replace('_', " ")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LexiconEntry {
    #[serde(default)]
    pub synonyms: BTreeSet<String>,
    #[serde(default)]
    pub hyponyms: BTreeSet<String>,
    #[serde(default)]
    pub hypernyms: Vec<String>,
    #[serde(default)]
    pub definition: Option<String>,
}

/// Class name → synonyms and hyponyms (plus optional dictionary material).
///
/// Keys and set members are stored normalized; every class is a member of
/// its own synonym set.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexiconEntry>,
}

impl Lexicon {
    pub fn new(entries: impl IntoIterator<Item = (String, LexiconEntry)>) -> Self {
        let entries = entries
            .into_iter()
            .map(|(class, e)| {
                let key = normalize(&class);
                let mut synonyms: BTreeSet<String> = e.synonyms.iter().map(|s| normalize(s)).collect();
                synonyms.insert(key.clone());
                let entry = LexiconEntry {
                    synonyms,
                    hyponyms: e.hyponyms.iter().map(|s| normalize(s)).collect(),
                    hypernyms: e.hypernyms,
                    definition: e.definition,
                };
                (key, entry)
            })
            .collect();
        Lexicon { entries }
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let raw: BTreeMap<String, LexiconEntry> =
            serde_json::from_str(s).map_err(|e| Error::json("lexicon", e))?;
        Ok(Lexicon::new(raw))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::from_json_str(&s)
    }

    pub fn get(&self, class: &str) -> Option<&LexiconEntry> {
        self.entries.get(&normalize(class))
    }

    pub fn contains(&self, class: &str) -> bool {
        self.get(class).is_some()
    }

    /// Normalized forms that would reveal `class`: its name, synonyms and
    /// hyponyms.
    pub fn blocked_forms(&self, class: &str) -> Result<BTreeSet<String>> {
        let e = self
            .get(class)
            .ok_or_else(|| Error::MissingLexiconEntry(class.to_string()))?;
        let mut out = e.synonyms.clone();
        out.insert(normalize(class));
        out.extend(e.hyponyms.iter().cloned());
        Ok(out)
    }
}

/// Drops detections that name `class`, a synonym, or a hyponym.
///
/// Overlap is exact equality after [`normalize`]; with `substring` set, a
/// detection is also dropped when a blocked form occurs inside it. Order is
/// preserved. A class missing from the lexicon is an error.
pub fn filter_annotations(
    detections: &[String],
    class: &str,
    lexicon: &Lexicon,
    substring: bool,
) -> Result<Vec<String>> {
    let blocked = lexicon.blocked_forms(class)?;
    Ok(detections
        .iter()
        .filter(|d| {
            let n = normalize(d);
            if substring {
                !blocked.iter().any(|b| n.contains(b.as_str()))
            } else {
                !blocked.contains(&n)
            }
        })
        .cloned()
        .collect())
}

/// `"This photo contains: a1, a2, ..."`; just the template for an empty list.
pub fn render_annotation_text(attributes: &[String]) -> String {
    if attributes.is_empty() {
        ANNOTATION_TEMPLATE.to_string()
    } else {
        format!("{} {}", ANNOTATION_TEMPLATE, attributes.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn strings(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|s| s.to_string()).collect()
    }

    fn lion_lexicon() -> Lexicon {
        Lexicon::from_json_str(r#"{"lion": {"synonyms": ["feline"], "hyponyms": []}}"#).unwrap()
    }

    #[test]
    fn filters_class_and_synonyms() {
        let lex = lion_lexicon();
        let out = filter_annotations(&strings(&["farm", "lion", "feline"]), "lion", &lex, false).unwrap();
        assert_eq!(out, ["farm"]);
        assert!(filter_annotations(&[], "lion", &lex, false).unwrap().is_empty());
        let out = filter_annotations(&strings(&["grass", "tree"]), "lion", &lex, false).unwrap();
        assert_eq!(out, ["grass", "tree"]);
    }

    #[test]
    fn matching_is_case_insensitive_and_exact() {
        let lex = Lexicon::from_json_str(r#"{"Cat": {"hyponyms": ["Tabby Cat"]}}"#).unwrap();
        let dets = strings(&["CAT", "tabby  cat", "cattle"]);
        assert_eq!(filter_annotations(&dets, "cat", &lex, false).unwrap(), ["cattle"]);
        assert!(filter_annotations(&dets, "cat", &lex, true).unwrap().is_empty());
    }

    #[test]
    fn missing_class_fails_closed() {
        let lex = lion_lexicon();
        assert!(matches!(
            filter_annotations(&strings(&["x"]), "tiger", &lex, false),
            Err(Error::MissingLexiconEntry(_))
        ));
    }

    #[test]
    fn class_is_its_own_synonym() {
        let lex = Lexicon::from_json_str(r#"{"Pine_Tree": {}}"#).unwrap();
        assert!(lex.get("pine tree").unwrap().synonyms.contains("pine tree"));
    }

    #[test]
    fn render_template() {
        assert_eq!(render_annotation_text(&strings(&["fur", "grass"])), "This photo contains: fur, grass");
        assert_eq!(render_annotation_text(&[]), "This photo contains:");
        assert_eq!(render_annotation_text(&strings(&["farm"])), "This photo contains: farm");
    }

    proptest! {
        #[test]
        fn output_is_clean_subsequence(
            dets in proptest::collection::vec("(lion|feline|cub|farm|grass|Lion|tree)", 0..12)
        ) {
            let lex = Lexicon::from_json_str(
                r#"{"lion": {"synonyms": ["feline"], "hyponyms": ["cub"]}}"#,
            ).unwrap();
            let out = filter_annotations(&dets, "lion", &lex, false).unwrap();
            // subsequence
            let mut it = dets.iter();
            for o in &out {
                prop_assert!(it.any(|d| d == o));
            }
            let blocked = lex.blocked_forms("lion").unwrap();
            for o in &out {
                prop_assert!(!blocked.contains(&normalize(o)));
            }
        }
    }
}
