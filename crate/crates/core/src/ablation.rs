//! Description-count ablation: Concat-k against sampling from n descriptions.
//!
//! All arms share instance order, initialization and optimizer seeds; only
//! the description stream (keyed by arm) and the description setting vary.

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::AblationConfig;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evaluation::ScenarioId;
use crate::experiment::{evaluate, init_model, train_model};
use crate::model::ModelConfig;
use crate::training::{Seeds, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Arm {
    Concat(usize),
    Sample(usize),
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arm::Concat(k) => write!(f, "Concat-{k}"),
            Arm::Sample(n) => write!(f, "n={n}"),
        }
    }
}

impl Arm {
    fn train_config(self, base: &TrainConfig) -> TrainConfig {
        let (n_descriptions, concat_k) = match self {
            Arm::Concat(k) => (None, Some(k)),
            Arm::Sample(n) => (Some(n), None),
        };
        TrainConfig { n_descriptions, concat_k, ..base.clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub arm: Arm,
    /// Per scenario: the metric averaged over seeds.
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub metric: String,
    pub seeds: Vec<u64>,
    pub scenarios: Vec<ScenarioId>,
    pub rows: Vec<AblationRow>,
}

/// Concat arms first, then sampling arms, each in ascending order.
pub fn arms(cfg: &AblationConfig) -> Vec<Arm> {
    let mut concat = cfg.concat.clone();
    let mut n = cfg.n.clone();
    concat.sort_unstable();
    concat.dedup();
    n.sort_unstable();
    n.dedup();
    concat.into_iter().map(Arm::Concat).chain(n.into_iter().map(Arm::Sample)).collect()
}

pub fn run_ablation(
    ds: &Dataset,
    model_cfg: &ModelConfig,
    base: &TrainConfig,
    cfg: &AblationConfig,
    run_seed: u64,
) -> Result<AblationTable> {
    let seeds = if cfg.seeds.is_empty() { vec![run_seed] } else { cfg.seeds.clone() };
    let wanted = if cfg.scenarios.is_empty() { vec![ScenarioId::S1, ScenarioId::S2, ScenarioId::S3] } else { cfg.scenarios.clone() };
    let scenarios: Vec<ScenarioId> = wanted.into_iter().filter(|s| ds.scenarios.get(*s).is_some()).collect();
    if scenarios.is_empty() {
        return Err(Error::Validation("the dataset defines none of the ablation scenarios".into()));
    }
    let arms = arms(cfg);
    let mut rows = Vec::with_capacity(arms.len());
    let mut metric = String::new();
    for arm in arms {
        let tc = arm.train_config(base);
        let mut sums = vec![0.0; scenarios.len()];
        for &seed in &seeds {
            let mut model = init_model(ds, model_cfg, seed)?;
            train_model(ds, &mut model, &tc, Seeds::with_description_label(seed, &format!("descriptions/{arm}")))?;
            for (i, s) in scenarios.iter().enumerate() {
                let report = evaluate(ds, &model, &tc, *s, seed)?;
                metric = report.metric;
                sums[i] += report.value;
            }
        }
        rows.push(AblationRow { arm, values: sums.iter().map(|v| v / seeds.len() as f64).collect() });
    }
    Ok(AblationTable { metric, seeds, scenarios, rows })
}

impl AblationTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Descriptions |");
        for sc in &self.scenarios {
            s += &format!(" {sc} |");
        }
        s += "\n|---|";
        s += &"---|".repeat(self.scenarios.len());
        s += "\n";
        for r in &self.rows {
            s += &format!("| {} |", r.arm);
            for v in &r.values {
                s += &format!(" {:.1} |", 100.0 * v);
            }
            s += "\n";
        }
        s
    }

    pub fn write_csv(&self, path: &Path, provenance: (u64, &str)) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# seed={} config_hash={}", provenance.0, provenance.1).unwrap();
        let header: Vec<String> = self.scenarios.iter().map(|s| s.to_string()).collect();
        writeln!(out, "arm,{}", header.join(",")).unwrap();
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{},{}", r.arm, vals.join(",")).unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
