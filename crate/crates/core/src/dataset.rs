//! Dataset manifests: the files that make up one task.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{filter_instance_annotations, load_instances, Instance, Modality, TaskKind};
use crate::descstore::{load_descriptions, read_split_manifest, DescriptionCatalog, SplitName};
use crate::error::{Error, Result};
use crate::evaluation::{ScenarioFile, ScenarioSet};
use crate::labels::{ClassId, LabelSpace};
use crate::rng::stream;
use crate::text::Lexicon;

pub const DEFAULT_SPLIT_RATIOS: (f64, f64, f64) = (0.6, 0.2, 0.2);

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFiles {
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
}

/// JSON manifest; relative paths resolve against the manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub task: TaskKind,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    /// Every label name, fine classes and superclasses alike.
    pub classes: Vec<String>,
    pub instances: InstanceFiles,
    pub descriptions: Vec<PathBuf>,
    /// Description hashes per split; without one, descriptions are split
    /// 60/20/20 with `split_seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_manifest: Option<PathBuf>,
    #[serde(default)]
    pub split_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(default)]
    pub substring_filter: bool,
    pub scenarios: PathBuf,
}

/// A loaded, validated task.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub task: TaskKind,
    pub modality: Modality,
    pub feature_dim: Option<usize>,
    pub labels: LabelSpace,
    pub train: Vec<Instance>,
    pub val: Vec<Instance>,
    pub test: Vec<Instance>,
    /// Train, val and test description catalogs.
    pub catalogs: [DescriptionCatalog; 3],
    pub scenarios: ScenarioSet,
    pub lexicon: Option<Lexicon>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&s).map_err(|e| Error::json(path.display().to_string(), e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self).map_err(|e| Error::json("manifest", e))?;
        std::fs::write(path, s + "\n").map_err(|e| Error::io(path, e))
    }
}

impl Dataset {
    pub fn load(manifest_path: &Path) -> Result<Self> {
        Dataset::load_with_scenarios(manifest_path, None)
    }

    /// Like [`Dataset::load`], reading scenarios from `scenarios` instead of
    /// the manifest's file when given.
    pub fn load_with_scenarios(manifest_path: &Path, scenarios: Option<&Path>) -> Result<Self> {
        let m = DatasetManifest::load(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let at = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        let labels = LabelSpace::new(m.classes.iter().cloned())?;
        if m.modality == Modality::Features && m.feature_dim.is_none() {
            return Err(Error::Validation("feature datasets must declare feature_dim".into()));
        }
        let load = |p: &Path| load_instances(&at(p), m.modality, m.task, &labels);
        let (mut train, mut val, mut test) = (load(&m.instances.train)?, load(&m.instances.val)?, load(&m.instances.test)?);
        if let Some(fd) = m.feature_dim {
            for i in train.iter().chain(&val).chain(&test) {
                if let crate::data::InstanceInput::Features { features, .. } = &i.input {
                    if features.len() != fd {
                        return Err(Error::Validation(format!(
                            "instance `{}` has {} features, expected {fd}",
                            i.id,
                            features.len()
                        )));
                    }
                }
            }
        }
        let lexicon = m.lexicon.as_ref().map(|p| Lexicon::load(&at(p))).transpose()?;
        if let Some(lex) = &lexicon {
            for set in [&mut train, &mut val, &mut test] {
                filter_instance_annotations(set, &labels, lex, m.substring_filter)?;
            }
        }
        let mut descs = Vec::new();
        for p in &m.descriptions {
            descs.extend(load_descriptions(&at(p), &labels)?);
        }
        let all = DescriptionCatalog::new(descs);
        let catalogs = match &m.split_manifest {
            Some(p) => read_split_manifest(&at(p))?.apply(&all)?,
            None => all.split(DEFAULT_SPLIT_RATIOS, &mut stream(m.split_seed, "description-splits"))?,
        };
        let scenario_path = scenarios.map(Path::to_path_buf).unwrap_or_else(|| at(&m.scenarios));
        let scenarios = ScenarioFile::load(&scenario_path)?.resolve(&labels)?;
        let ds = Dataset {
            task: m.task,
            modality: m.modality,
            feature_dim: m.feature_dim,
            labels,
            train,
            val,
            test,
            catalogs,
            scenarios,
            lexicon,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn catalog(&self, split: SplitName) -> &DescriptionCatalog {
        &self.catalogs[SplitName::ALL.iter().position(|s| *s == split).unwrap()]
    }

    /// Training instances must carry training classes only, and every
    /// scenario class needs descriptions in the split the scenario reads.
    pub fn validate(&self) -> Result<()> {
        let train = &self.scenarios.train_classes;
        if train.is_empty() {
            return Err(Error::Validation("no training classes".into()));
        }
        for inst in self.train.iter().chain(&self.val) {
            if let Some(l) = inst.labels.iter().find(|l| !train.contains(l)) {
                return Err(Error::Validation(format!(
                    "instance `{}` is labeled `{}`, which is not a training class",
                    inst.id,
                    self.labels.name(*l)
                )));
            }
        }
        let mut needs: BTreeMap<ClassId, Vec<SplitName>> = BTreeMap::new();
        for c in train {
            needs.entry(*c).or_default().push(SplitName::Train);
        }
        for s in &self.scenarios.scenarios {
            for c in &s.classes {
                needs.entry(*c).or_default().push(s.description_split);
            }
        }
        let mut missing = Vec::new();
        for (c, splits) in needs {
            for s in splits {
                if !self.catalog(s).contains(c) {
                    missing.push(format!("`{}` ({s})", self.labels.name(c)));
                }
            }
        }
        if !missing.is_empty() {
            missing.dedup();
            return Err(Error::Validation(format!("classes without descriptions: {}", missing.join(", "))));
        }
        Ok(())
    }
}
