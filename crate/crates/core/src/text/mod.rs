//! Tokenization, vocabularies and shared-word detection.

mod annotations;

pub use annotations::{
    filter_annotations, normalize, render_annotation_text, Lexicon, LexiconEntry, ANNOTATION_TEMPLATE,
};

use std::collections::{BTreeMap, BTreeSet};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const PAD: &str = "[PAD]";
pub const UNK: &str = "[UNK]";
pub const DEFAULT_MAX_LEN: usize = 128;

/// Lowercases and splits on whitespace and punctuation; every
/// non-alphanumeric, non-whitespace character becomes its own token.
pub fn tokenize(raw: &str) -> Vec<String> {
    let lower = raw.to_lowercase();
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in lower.chars() {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

/// One token: its surface string and vocabulary id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub id: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.tokens.iter().map(|t| t.id).collect()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }

    /// Surfaces that can take part in lexical matching (not PAD or UNK).
    fn matchable(&self) -> BTreeSet<&str> {
        self.tokens
            .iter()
            .filter(|t| t.id != PAD_ID && t.id != UNK_ID)
            .map(|t| t.surface.as_str())
            .collect()
    }
}

/// Frozen token ↔ id map. Ids 0 and 1 are reserved for PAD and UNK.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    index: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from every surface in `corpus`; ids are assigned
    /// in sorted surface order.
    pub fn build<'a, I, S>(corpus: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str> + 'a,
    {
        let set: BTreeSet<String> = corpus
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| s != PAD && s != UNK)
            .collect();
        let mut tokens = vec![PAD.to_string(), UNK.to_string()];
        tokens.extend(set);
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocabulary { index, tokens }
    }

    /// Restores a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> crate::Result<Self> {
        if tokens.len() < 2 || tokens[PAD_ID] != PAD || tokens[UNK_ID] != UNK {
            return Err(crate::Error::Validation("vocabulary must start with [PAD], [UNK]".into()));
        }
        let index: BTreeMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(crate::Error::Validation("vocabulary has duplicate tokens".into()));
        }
        Ok(Vocabulary { index, tokens })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, surface: &str) -> usize {
        self.index.get(surface).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps surfaces to ids, keeping the first `max_len` tokens.
    pub fn encode<S: AsRef<str>>(&self, surfaces: &[S], max_len: usize) -> TokenSequence {
        TokenSequence {
            tokens: surfaces
                .iter()
                .take(max_len)
                .map(|s| Token {
                    surface: s.as_ref().to_string(),
                    id: self.id(s.as_ref()),
                })
                .collect(),
        }
    }

    pub fn encode_text(&self, raw: &str, max_len: usize) -> TokenSequence {
        self.encode(&tokenize(raw), max_len)
    }
}

/// Surfaces present in both sequences, excluding PAD and UNK.
pub fn shared_word_types(a: &TokenSequence, b: &TokenSequence) -> BTreeSet<String> {
    let b_set = b.matchable();
    a.matchable()
        .into_iter()
        .filter(|s| b_set.contains(s))
        .map(str::to_string)
        .collect()
}
