//! Run configuration, overrides, content hashing and run directories.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::ScenarioId;
use crate::model::ModelConfig;
use crate::synthetic::{gen_synthetic, SyntheticTaskSpec};
use crate::training::TrainConfig;

/// Where the data comes from: a manifest on disk or an inline synthetic
/// spec generated into the run directory.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticTaskSpec>,
    /// Replaces the manifest's scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenarios: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Empty means every scenario the dataset defines.
    pub scenarios: Vec<ScenarioId>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub n: Vec<usize>,
    pub concat: Vec<usize>,
    /// Empty means the run seed alone.
    pub seeds: Vec<u64>,
    /// Empty means S1, S2 and S3, as far as the dataset defines them.
    pub scenarios: Vec<ScenarioId>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig { n: vec![1, 5, 10], concat: vec![10], seeds: Vec::new(), scenarios: Vec::new() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_override_value(value: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {value}")).map(|w| w.v).unwrap_or_else(|_| toml::Value::String(value.into()))
}

/// Applies one `key.path=value` override to a TOML document.
pub fn apply_override(doc: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, value) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Validation(format!("override `{assignment}` is not of the form key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Validation(format!("override key `{key}` is malformed")));
    }
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Validation(format!("override `{key}`: `{p}` is not inside a table")))?;
        cur = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| Error::Validation(format!("override `{key}` does not address a table field")))?;
    table.insert(parts[parts.len() - 1].to_string(), parse_override_value(value.trim()));
    Ok(())
}

impl RunConfig {
    /// Parses TOML text after applying overrides; unknown or mistyped
    /// fields are reported by their path.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Value =
            toml::from_str(text).map_err(|e| Error::Validation(format!("config: {}", e.message())))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Validation(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a config file; relative data paths are resolved against its
    /// directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = RunConfig::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.data.manifest.as_mut().map(resolve);
        cfg.data.scenarios.as_mut().map(resolve);
        cfg.model.word_vectors.as_mut().map(resolve);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data.manifest, &self.data.synthetic) {
            (Some(_), None) => {}
            (None, Some(spec)) => spec.validate()?,
            _ => return Err(Error::Validation("data: set exactly one of `manifest` and `synthetic`".into())),
        }
        self.train.validate()?;
        if self.ablation.n.iter().chain(&self.ablation.concat).any(|&k| k == 0) {
            return Err(Error::Validation("ablation: description counts must be positive".into()));
        }
        Ok(())
    }

    /// Content hash over everything but the seed.
    pub fn content_hash(&self) -> String {
        let mut unseeded = self.clone();
        unseeded.seed = 0;
        let body = serde_json::to_string(&unseeded).expect("configs serialize");
        let mut h = Sha256::new();
        h.update(format!("config {}\0", body.len()).as_bytes());
        h.update(body.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Validation(format!("config cannot be written as TOML: {e}")))
    }

    /// Loads the manifest dataset, or generates the synthetic one into
    /// `data_dir` first.
    pub fn dataset(&self, data_dir: &Path) -> Result<Dataset> {
        let manifest = match (&self.data.manifest, &self.data.synthetic) {
            (Some(m), _) => m.clone(),
            (None, Some(spec)) => gen_synthetic(spec)?.write(data_dir)?,
            (None, None) => return Err(Error::Validation("data: no dataset configured".into())),
        };
        Dataset::load_with_scenarios(&manifest, self.data.scenarios.as_deref())
    }
}

pub const LOCK_FILE: &str = ".lock";
pub const CONFIG_SNAPSHOT: &str = "config.toml";
pub const RUN_INFO: &str = "run.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunInfo {
    pub seed: u64,
    pub config_hash: String,
    pub version: String,
}

/// An exclusively owned run directory `<out>/<hash12>-s<seed>`.
///
/// The lock file is created on open and removed on drop.
#[derive(Debug)]
pub struct RunDir {
    pub path: PathBuf,
    pub seed: u64,
    pub config_hash: String,
}

impl RunDir {
    pub fn name(config_hash: &str, seed: u64) -> String {
        format!("{}-s{seed}", &config_hash[..12])
    }

    /// Creates (or reuses) the directory, takes the lock and writes the
    /// config snapshot and `run.json`.
    pub fn open(out: &Path, cfg: &RunConfig) -> Result<RunDir> {
        let hash = cfg.content_hash();
        let path = out.join(RunDir::name(&hash, cfg.seed));
        std::fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        let lock = path.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Validation(format!("{} is locked by another process", path.display()))
            } else {
                Error::io(&lock, e)
            }
        })?;
        writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&lock, e))?;
        let dir = RunDir { path, seed: cfg.seed, config_hash: hash };
        let snapshot = dir.path.join(CONFIG_SNAPSHOT);
        std::fs::write(&snapshot, cfg.to_toml()?).map_err(|e| Error::io(&snapshot, e))?;
        let info = RunInfo { seed: cfg.seed, config_hash: dir.config_hash.clone(), version: env!("CARGO_PKG_VERSION").into() };
        dir.write_json(RUN_INFO, &info)?;
        Ok(dir)
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let path = self.file(name);
        let s = serde_json::to_string_pretty(value).map_err(|e| Error::json(name, e))?;
        std::fs::write(&path, s + "\n").map_err(|e| Error::io(&path, e))
    }

    /// `(seed, config hash)` for file headers.
    pub fn provenance(&self) -> (u64, &str) {
        (self.seed, &self.config_hash)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(self.path.join(LOCK_FILE));
    }
}
