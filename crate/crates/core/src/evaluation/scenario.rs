//! Evaluation scenarios and their leakage guards.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{relabel, Instance};
use crate::descstore::{DescriptionCatalog, SplitName};
use crate::error::{Error, Result};
use crate::labels::{ClassId, LabelSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioId {
    S0,
    S1,
    S2,
    S3,
}

impl fmt::Display for ScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

/// One evaluation regime: which classes compete and which descriptions
/// represent them.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSpec {
    pub id: ScenarioId,
    /// Strictly ascending.
    pub classes: Vec<ClassId>,
    pub description_split: SplitName,
    /// Fine class → superclass (S3 only).
    pub superclass_map: BTreeMap<ClassId, ClassId>,
}

impl ScenarioSpec {
    pub fn new(id: ScenarioId, mut classes: Vec<ClassId>, description_split: SplitName) -> Self {
        classes.sort();
        classes.dedup();
        ScenarioSpec { id, classes, description_split, superclass_map: BTreeMap::new() }
    }

    /// Drops superclasses with a single child, both from the class list and
    /// from the map.
    pub fn drop_singleton_superclasses(&mut self) {
        let mut children: BTreeMap<ClassId, usize> = BTreeMap::new();
        for s in self.superclass_map.values() {
            *children.entry(*s).or_default() += 1;
        }
        self.superclass_map.retain(|_, s| children[s] > 1);
        self.classes.retain(|c| children.get(c).copied().unwrap_or(0) > 1);
    }

    /// Label transform for this scenario; `None` when an instance has no
    /// label in the active class set.
    pub fn map_labels(&self, labels: &[ClassId]) -> Option<Vec<ClassId>> {
        let mapped = if self.id == ScenarioId::S3 {
            relabel(labels, |c| self.superclass_map.get(&c).copied())?
        } else {
            labels.to_vec()
        };
        let kept: Vec<ClassId> = mapped.into_iter().filter(|c| self.classes.contains(c)).collect();
        (!kept.is_empty()).then_some(kept)
    }

    /// Instances whose (transformed) labels fall in the active class set,
    /// with labels restricted to it.
    pub fn select_instances(&self, instances: &[Instance]) -> Vec<Instance> {
        instances
            .iter()
            .filter_map(|i| self.map_labels(&i.labels).map(|labels| Instance { labels, ..i.clone() }))
            .collect()
    }
}

fn names(labels: &LabelSpace, ids: impl IntoIterator<Item = ClassId>) -> String {
    ids.into_iter().map(|c| format!("`{}`", labels.name(c))).collect::<Vec<_>>().join(", ")
}

/// Checks the scenario's structural invariants and its leakage guards.
///
/// S1 must draw from a split other than train, sharing no description hash
/// with the training descriptions; S2 classes must be disjoint from the
/// training classes. Guard violations are [`Error::Leakage`].
pub fn check_scenario(
    spec: &ScenarioSpec,
    train_classes: &[ClassId],
    train_catalog: &DescriptionCatalog,
    eval_catalog: &DescriptionCatalog,
    labels: &LabelSpace,
) -> Result<()> {
    if spec.classes.is_empty() {
        return Err(Error::Validation(format!("scenario {} has no classes", spec.id)));
    }
    let train: BTreeSet<ClassId> = train_classes.iter().copied().collect();
    match spec.id {
        ScenarioId::S0 | ScenarioId::S1 => {
            let outside: Vec<ClassId> = spec.classes.iter().copied().filter(|c| !train.contains(c)).collect();
            if !outside.is_empty() {
                return Err(Error::Validation(format!(
                    "scenario {} uses classes outside the training set: {}",
                    spec.id,
                    names(labels, outside)
                )));
            }
        }
        ScenarioId::S2 => {
            let overlap: Vec<ClassId> = spec.classes.iter().copied().filter(|c| train.contains(c)).collect();
            if !overlap.is_empty() {
                return Err(Error::Leakage(format!(
                    "S2 classes overlap the training classes: {}",
                    names(labels, overlap)
                )));
            }
        }
        ScenarioId::S3 => {
            if spec.superclass_map.is_empty() {
                return Err(Error::Validation("S3 needs a superclass map".into()));
            }
            if let Some((c, _)) = spec.superclass_map.iter().find(|(c, _)| !train.contains(c)) {
                return Err(Error::Validation(format!(
                    "superclass map entry `{}` is not a training class",
                    labels.name(*c)
                )));
            }
        }
    }
    if spec.id == ScenarioId::S0 && spec.description_split != SplitName::Train {
        return Err(Error::Validation("S0 uses training descriptions".into()));
    }
    if spec.id == ScenarioId::S1 {
        if spec.description_split == SplitName::Train {
            return Err(Error::Leakage("S1 must use a held-out description split, not train".into()));
        }
        let train_h = train_catalog.restrict(&spec.classes).hashes().into_iter().map(str::to_string).collect::<BTreeSet<_>>();
        let eval_restricted = eval_catalog.restrict(&spec.classes);
        let shared: Vec<&str> = eval_restricted
            .hashes()
            .into_iter()
            .filter(|h| train_h.contains(*h))
            .collect();
        if !shared.is_empty() {
            return Err(Error::Leakage(format!(
                "S1 evaluation descriptions also appear in the training split: {}",
                shared.join(", ")
            )));
        }
    }
    let missing: Vec<ClassId> = spec.classes.iter().copied().filter(|c| !eval_catalog.contains(*c)).collect();
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "scenario {} has no {} descriptions for {}",
            spec.id,
            spec.description_split,
            names(labels, missing)
        )));
    }
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioEntry {
    id: ScenarioId,
    classes: Vec<String>,
    description_split: SplitName,
}

/// On-disk scenario file: class names throughout.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub train_classes: Vec<String>,
    #[serde(default)]
    pub superclass_map: BTreeMap<String, String>,
    scenarios: Vec<ScenarioEntry>,
}

/// Resolved scenario file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioSet {
    pub train_classes: Vec<ClassId>,
    pub scenarios: Vec<ScenarioSpec>,
}

impl ScenarioSet {
    pub fn get(&self, id: ScenarioId) -> Option<&ScenarioSpec> {
        self.scenarios.iter().find(|s| s.id == id)
    }
}

impl ScenarioFile {
    pub fn build(train: &[&str], superclass_map: &[(&str, &str)], scenarios: &[(ScenarioId, Vec<String>, SplitName)]) -> Self {
        ScenarioFile {
            train_classes: train.iter().map(|s| s.to_string()).collect(),
            superclass_map: superclass_map.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
            scenarios: scenarios
                .iter()
                .map(|(id, classes, split)| ScenarioEntry { id: *id, classes: classes.clone(), description_split: *split })
                .collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::json("scenario file", e))?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }

    /// Resolves names. For S3, singleton superclasses are dropped.
    pub fn resolve(&self, labels: &LabelSpace) -> Result<ScenarioSet> {
        let ids = |names: &[String]| names.iter().map(|n| labels.require(n)).collect::<Result<Vec<_>>>();
        let mut train_classes = ids(&self.train_classes)?;
        train_classes.sort();
        train_classes.dedup();
        let map = self
            .superclass_map
            .iter()
            .map(|(c, s)| Ok((labels.require(c)?, labels.require(s)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let mut scenarios = Vec::new();
        for e in &self.scenarios {
            if scenarios.iter().any(|s: &ScenarioSpec| s.id == e.id) {
                return Err(Error::Validation(format!("scenario {} listed twice", e.id)));
            }
            let mut spec = ScenarioSpec::new(e.id, ids(&e.classes)?, e.description_split);
            if e.id == ScenarioId::S3 {
                spec.superclass_map = map.clone();
                spec.drop_singleton_superclasses();
            }
            scenarios.push(spec);
        }
        Ok(ScenarioSet { train_classes, scenarios })
    }
}
