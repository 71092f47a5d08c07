//! Contextualized exact-match term.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoders::EncodedText;
use crate::error::Result;
use crate::tensor::{Graph, NodeId};
use crate::text::{PAD_ID, UNK_ID};

/// How repeated occurrences of a shared word are aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LexicalMode {
    /// Every (input occurrence, description occurrence) pair of a shared word.
    #[default]
    AllPairsSum,
    /// For each input occurrence, the best-matching description occurrence.
    PerTypeMax,
}

fn positions<'a>(surfaces: &'a [String], ids: &[usize]) -> BTreeMap<&'a str, Vec<usize>> {
    let mut m: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, (s, &id)) in surfaces.iter().zip(ids).enumerate() {
        if id != PAD_ID && id != UNK_ID {
            m.entry(s.as_str()).or_default().push(i);
        }
    }
    m
}

/// For each shared surface, its occurrence rows in `input` and in `desc`.
pub fn shared_occurrences(input: &EncodedText, desc: &EncodedText) -> Vec<(String, Vec<usize>, Vec<usize>)> {
    let a = positions(&input.surfaces, &input.ids);
    let b = positions(&desc.surfaces, &desc.ids);
    a.into_iter()
        .filter_map(|(w, pa)| b.get(w).map(|pb| (w.to_string(), pa, pb.clone())))
        .collect()
}

/// Sum over shared words of token-rep dot products; `None` when nothing is
/// shared (the term is then exactly zero and absent from the graph).
pub fn score_lexical(g: &mut Graph, input: &EncodedText, desc: &EncodedText, mode: LexicalMode) -> Result<Option<NodeId>> {
    let shared = shared_occurrences(input, desc);
    if shared.is_empty() {
        return Ok(None);
    }
    let dt = g.transpose(desc.token_reps)?;
    let sims = g.matmul(input.token_reps, dt)?;
    let node = match mode {
        LexicalMode::AllPairsSum => {
            let pairs = shared
                .iter()
                .flat_map(|(_, pa, pb)| pa.iter().flat_map(move |&a| pb.iter().map(move |&b| (a, b))))
                .collect();
            g.pair_sum(sims, pairs)?
        }
        LexicalMode::PerTypeMax => {
            let groups = shared
                .iter()
                .flat_map(|(_, pa, pb)| pa.iter().map(move |&a| (a, pb.clone())))
                .collect();
            g.group_max_sum(sims, groups)?
        }
    };
    Ok(Some(node))
}
