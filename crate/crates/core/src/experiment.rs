//! Train-and-evaluate driver over a loaded [`Dataset`].

use crate::dataset::Dataset;
use crate::descstore::SplitName;
use crate::error::{Error, Result};
use crate::evaluation::{
    check_scenario, eval_seed, evaluate_scenario, export_embeddings, EmbeddingRow, EvalContext, EvalReport, ScenarioId,
    ScenarioSpec,
};
use crate::model::{Model, ModelConfig};
use crate::text::Vocabulary;
use crate::training::{train, Seeds, TrainConfig, TrainData, TrainHistory};

/// Vocabulary over training instances and training-split descriptions.
pub fn build_vocabulary(ds: &Dataset) -> Vocabulary {
    let mut corpus: Vec<String> = ds.train.iter().flat_map(|i| i.vocabulary_tokens()).collect();
    let train_desc = ds.catalog(SplitName::Train).restrict(&ds.scenarios.train_classes);
    corpus.extend(train_desc.iter().flat_map(|d| d.tokens.iter().cloned()));
    Vocabulary::build(corpus)
}

pub fn init_model(ds: &Dataset, config: &ModelConfig, seed: u64) -> Result<Model> {
    Model::init(
        config.clone(),
        ds.modality,
        ds.feature_dim,
        build_vocabulary(ds),
        ds.scenarios.train_classes.clone(),
        seed,
    )
}

pub fn train_model(ds: &Dataset, model: &mut Model, cfg: &TrainConfig, seeds: Seeds) -> Result<TrainHistory> {
    let data = TrainData {
        labels: &ds.labels,
        task: ds.task,
        classes: &ds.scenarios.train_classes,
        train: &ds.train,
        val: &ds.val,
        catalog: ds.catalog(SplitName::Train),
    };
    train(model, cfg, &data, seeds)
}

pub fn scenario(ds: &Dataset, id: ScenarioId) -> Result<&ScenarioSpec> {
    ds.scenarios.get(id).ok_or_else(|| Error::Validation(format!("the dataset defines no scenario {id}")))
}

/// Runs the leakage guards of every listed scenario without touching a model.
pub fn check_guards(ds: &Dataset, ids: &[ScenarioId]) -> Result<()> {
    for &id in ids {
        let spec = scenario(ds, id)?;
        check_scenario(
            spec,
            &ds.scenarios.train_classes,
            ds.catalog(SplitName::Train),
            ds.catalog(spec.description_split),
            &ds.labels,
        )?;
    }
    Ok(())
}

/// Embeddings of the test instances and class descriptions of one scenario.
pub fn export(ds: &Dataset, model: &Model, id: ScenarioId) -> Result<Vec<EmbeddingRow>> {
    let spec = scenario(ds, id)?;
    check_guards(ds, &[id])?;
    export_embeddings(model, &ds.test, ds.catalog(spec.description_split), spec, &ds.labels)
}

/// Evaluates one scenario on the test instances. Concat-trained models see
/// concatenated descriptions at evaluation time too.
pub fn evaluate(ds: &Dataset, model: &Model, cfg: &TrainConfig, id: ScenarioId, run_seed: u64) -> Result<EvalReport> {
    let spec = scenario(ds, id)?;
    let ctx = EvalContext {
        model,
        labels: &ds.labels,
        task: ds.task,
        train_classes: &ds.scenarios.train_classes,
        catalogs: &ds.catalogs,
        batch_size: cfg.batch_size,
        eval_samples: cfg.eval_samples,
        concat_k: cfg.concat_k,
    };
    evaluate_scenario(&ctx, spec, &ds.test, eval_seed(run_seed))
}

/// Initializes, trains and returns the model with its history.
pub fn fit(ds: &Dataset, model_cfg: &ModelConfig, cfg: &TrainConfig, seed: u64) -> Result<(Model, TrainHistory)> {
    let mut model = init_model(ds, model_cfg, seed)?;
    let history = train_model(ds, &mut model, cfg, Seeds::from_run(seed))?;
    Ok((model, history))
}
