//! `semsup` command-line front end.
//!
//! Exit statuses: 0 success, 1 internal error, 2 validation or I/O failure,
//! 3 numerical failure, 4 leakage-guard failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semsup::config::{RunConfig, RunDir};
use semsup::data::filter_instance_file;
use semsup::descstore::write_descriptions;
use semsup::evaluation::{write_embeddings_csv, ScenarioId};
use semsup::experiment::{check_guards, evaluate, export, fit};
use semsup::jsongen::{make_json_descriptions, RelatedTerms};
use semsup::labels::LabelSpace;
use semsup::model::{Model, MODEL_META_FILE};
use semsup::rng::stream;
use semsup::synthetic::gen_synthetic;
use semsup::text::Lexicon;
use semsup::Error;

#[derive(Parser)]
#[command(name = "semsup", version, about = "Zero-shot classification with sampled class descriptions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root; run directories are created beneath it.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Config override, e.g. `--set train.lr=0.001`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes params, history and metadata to the run directory.
    Train,
    /// Evaluate the trained model of a run directory.
    Evaluate {
        /// Scenarios to evaluate (default: `eval.scenarios`, else all).
        #[arg(long = "scenario", value_parser = parse_scenario)]
        scenarios: Vec<ScenarioId>,
    },
    /// Compare Concat-k with sampling n descriptions per class.
    AblateDescriptions,
    /// Generate the configured synthetic task into `--out`.
    GenSynthetic,
    /// Build JSON descriptions from a lexicon and a related-terms file.
    MakeJsonDescriptions {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        related: PathBuf,
        /// Comma-separated class names (default: every class in the related-terms file).
        #[arg(long, value_delimiter = ',')]
        classes: Vec<String>,
        #[arg(long, default_value_t = 5)]
        k: usize,
    },
    /// Remove class-revealing detections from an instance file.
    FilterAnnotations {
        #[arg(long)]
        instances: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        substring: bool,
    },
    /// Write input and class embeddings of one scenario as CSV.
    ExportEmbeddings {
        #[arg(long, value_parser = parse_scenario, default_value = "S0")]
        scenario: ScenarioId,
    },
}

fn parse_scenario(s: &str) -> Result<ScenarioId, String> {
    match s.to_ascii_uppercase().as_str() {
        "S0" => Ok(ScenarioId::S0),
        "S1" => Ok(ScenarioId::S1),
        "S2" => Ok(ScenarioId::S2),
        "S3" => Ok(ScenarioId::S3),
        _ => Err(format!("unknown scenario `{s}` (expected S0..S3)")),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Leakage(_) => 4,
        Error::Numerical(_) | Error::NonFinite(_) => 3,
        Error::Shape { .. } | Error::IndexOutOfVocabulary { .. } => 1,
        _ => 2,
    }
}

fn load_config(g: &Global) -> semsup::Result<RunConfig> {
    let path = g
        .config
        .as_deref()
        .ok_or_else(|| Error::Validation("this command needs --config".into()))?;
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(format!("seed={seed}"));
    }
    RunConfig::load(path, &overrides)
}

fn data_dir(run: &RunDir) -> PathBuf {
    run.file("data")
}

fn train(g: &Global) -> semsup::Result<()> {
    let cfg = load_config(g)?;
    let run = RunDir::open(&g.out, &cfg)?;
    let ds = cfg.dataset(&data_dir(&run))?;
    let (model, history) = fit(&ds, &cfg.model, &cfg.train, cfg.seed)?;
    model.save(&run.path, &ds.labels, cfg.seed)?;
    history.write_csv(&run.file("history.csv"), Some(run.provenance()))?;
    let best = history.best().map(|b| (b.epoch, b.val_metric));
    println!("run directory: {}", run.path.display());
    match best {
        Some((epoch, v)) => println!("trained {} epochs; best epoch {epoch} (val {v:.4})", history.epochs.len()),
        None => println!("trained 0 epochs"),
    }
    Ok(())
}

fn scenario_list(ds: &semsup::dataset::Dataset, flags: &[ScenarioId], cfg: &RunConfig) -> Vec<ScenarioId> {
    if !flags.is_empty() {
        flags.to_vec()
    } else if !cfg.eval.scenarios.is_empty() {
        cfg.eval.scenarios.clone()
    } else {
        ds.scenarios.scenarios.iter().map(|s| s.id).collect()
    }
}

fn load_model(run: &RunDir, labels: &LabelSpace) -> semsup::Result<Model> {
    if !run.file(MODEL_META_FILE).exists() {
        return Err(Error::Validation(format!(
            "no trained model in {}; run `semsup train` with the same config and seed first",
            run.path.display()
        )));
    }
    Model::load(&run.path, labels)
}

fn evaluate_cmd(g: &Global, flags: &[ScenarioId]) -> semsup::Result<()> {
    let cfg = load_config(g)?;
    let run = RunDir::open(&g.out, &cfg)?;
    let ds = cfg.dataset(&data_dir(&run))?;
    let ids = scenario_list(&ds, flags, &cfg);
    check_guards(&ds, &ids)?;
    let model = load_model(&run, &ds.labels)?;
    for id in ids {
        let mut report = evaluate(&ds, &model, &cfg.train, id, cfg.seed)?;
        report.config_hash = Some(run.config_hash.clone());
        run.write_json(&format!("eval_{id}.json"), &report)?;
        println!("{id}: {} = {:.4} over {} instances", report.metric, report.value, report.n_instances);
    }
    Ok(())
}

fn ablate(g: &Global) -> semsup::Result<()> {
    let cfg = load_config(g)?;
    let run = RunDir::open(&g.out, &cfg)?;
    let ds = cfg.dataset(&data_dir(&run))?;
    let table = semsup::ablation::run_ablation(&ds, &cfg.model, &cfg.train, &cfg.ablation, cfg.seed)?;
    table.write_csv(&run.file("ablation.csv"), run.provenance())?;
    std::fs::write(run.file("ablation.md"), table.to_markdown()).map_err(|e| Error::Validation(e.to_string()))?;
    run.write_json("ablation.json", &table)?;
    println!("# seed={} config_hash={}", run.seed, run.config_hash);
    print!("{}", table.to_markdown());
    Ok(())
}

fn gen_synthetic_cmd(g: &Global) -> semsup::Result<()> {
    let cfg = load_config(g)?;
    let mut spec = cfg
        .data
        .synthetic
        .clone()
        .ok_or_else(|| Error::Validation("data.synthetic is not set in the config".into()))?;
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    let manifest = gen_synthetic(&spec)?.write(&g.out)?;
    println!("wrote {}", manifest.display());
    Ok(())
}

fn make_json(g: &Global, lexicon: &Path, related: &Path, classes: &[String], k: usize) -> semsup::Result<()> {
    let lex = Lexicon::load(lexicon)?;
    let rel = RelatedTerms::load(related)?;
    let classes: Vec<String> = if classes.is_empty() { rel.0.keys().cloned().collect() } else { classes.to_vec() };
    let labels = LabelSpace::new(classes.iter().cloned())?;
    let seed = g.seed.unwrap_or(0);
    let descs = make_json_descriptions(&lex, &labels, &classes, &rel, k, &mut stream(seed, "json-descriptions"))?;
    std::fs::create_dir_all(&g.out).map_err(|e| Error::Validation(format!("{}: {e}", g.out.display())))?;
    let path = g.out.join("json_descriptions.jsonl");
    write_descriptions(&path, descs.iter())?;
    println!("wrote {} descriptions to {}", descs.len(), path.display());
    Ok(())
}

fn filter_cmd(g: &Global, instances: &Path, lexicon: &Path, substring: bool) -> semsup::Result<()> {
    let lex = Lexicon::load(lexicon)?;
    let name = instances
        .file_name()
        .ok_or_else(|| Error::Validation(format!("{} is not a file", instances.display())))?;
    std::fs::create_dir_all(&g.out).map_err(|e| Error::Validation(format!("{}: {e}", g.out.display())))?;
    let out = g.out.join(name);
    if out.canonicalize().ok() == instances.canonicalize().ok() && out.exists() {
        return Err(Error::Validation("refusing to overwrite the input file; choose another --out".into()));
    }
    let removed = filter_instance_file(instances, &out, &lex, substring)?;
    println!("removed {removed} detections; wrote {}", out.display());
    Ok(())
}

fn export_cmd(g: &Global, id: ScenarioId) -> semsup::Result<()> {
    let cfg = load_config(g)?;
    let run = RunDir::open(&g.out, &cfg)?;
    let ds = cfg.dataset(&data_dir(&run))?;
    let model = load_model(&run, &ds.labels)?;
    let rows = export(&ds, &model, id)?;
    let path = run.file(&format!("embeddings_{id}.csv"));
    write_embeddings_csv(&path, &rows, &ds.labels, cfg.model.d_model, run.seed, &run.config_hash)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match &cli.command {
        Command::Train => train(g),
        Command::Evaluate { scenarios } => evaluate_cmd(g, scenarios),
        Command::AblateDescriptions => ablate(g),
        Command::GenSynthetic => gen_synthetic_cmd(g),
        Command::MakeJsonDescriptions { lexicon, related, classes, k } => make_json(g, lexicon, related, classes, *k),
        Command::FilterAnnotations { instances, lexicon, substring } => filter_cmd(g, instances, lexicon, *substring),
        Command::ExportEmbeddings { scenario } => export_cmd(g, *scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
