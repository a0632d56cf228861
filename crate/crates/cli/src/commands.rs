use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use acfnet::eval::{evaluate as eval_report, recording_scores, results_table, ResultsRow};
use acfnet::ingest::{make_split_weighted, parse_manifest, AgreementRule};
use acfnet::pipeline::{featurize_corpus, normalized_set, prepare, PreparedData};
use acfnet::synth::{generate, write_corpus};
use acfnet::zoo::grid::{grid_search as run_grid, Selection};
use acfnet::zoo::train::predict;
use acfnet::{
    Checkpoint, Database, DatasetSplit, FeatureMode, FeaturizeOptions, FeaturizedCorpus, Label, Model, ModelConfig,
    RecordingRecord, SynthSpec, Trainer,
};
use anyhow::Context;
use clap::{Args, ValueEnum};
use log::{info, warn};
use serde::Serialize;

use crate::run::{read_config, setup, usage, write_json, write_jsonl, CliError, CliResult, Outcome, RunManifest};
use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Agreement {
    SameLevel,
    SameClass,
}

impl From<Agreement> for AgreementRule {
    fn from(a: Agreement) -> Self {
        match a {
            Agreement::SameLevel => AgreementRule::SameLevel,
            Agreement::SameClass => AgreementRule::SameClass,
        }
    }
}

pub fn featurize(common: &Common, manifest: &Path, mode: FeatureMode, rule: AgreementRule) -> CliResult {
    let seed = setup(common)?;
    let mut opts: FeaturizeOptions = read_config(common.config.as_deref())?;
    opts.mode = mode;
    let file = File::open(manifest).map_err(|e| usage(format!("{}: {e}", manifest.display())))?;
    let records = parse_manifest(BufReader::new(file), rule)
        .map_err(|e| usage(format!("{}: {e}", manifest.display())))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let (corpus, failures) = featurize_corpus(&records, base, &opts);
    let index = corpus.write(&common.out, opts.max_delay).context("writing features")?;
    info!(
        "{} segments from {} recordings ({} failed)",
        corpus.segments.len(),
        records.len(),
        failures.len()
    );
    let mut run = RunManifest::new("featurize", common, seed);
    run.inputs.push(manifest.to_path_buf());
    run.outputs.push(index);
    if !failures.is_empty() {
        let rows: Vec<_> = failures
            .iter()
            .map(|(id, e)| {
                warn!("{id}: {e}");
                serde_json::json!({ "recording_id": id, "error": e.to_string() })
            })
            .collect();
        let path = common.out.join("failures.jsonl");
        write_jsonl(&path, &rows)?;
        run.outputs.push(path);
    }
    run.settings = serde_json::json!({ "featurize": opts, "agreement": rule });
    run.write(&common.out)?;
    Ok(if failures.is_empty() {
        Outcome::Complete
    } else {
        Outcome::Partial(failures.len())
    })
}

/// Data selection shared by `train` and `grid-search`.
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Segment index written by `featurize`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Split file (JSON with train/validation/test recording ids).
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Train/validation/test ratios when no split file is given.
    #[arg(long, value_delimiter = ',', default_value = "0.7,0.15,0.15")]
    pub ratios: Vec<f64>,
    /// Restrict to these databases (e.g. MD1,MD2).
    #[arg(long = "database", value_delimiter = ',')]
    pub databases: Vec<Database>,
    #[arg(long)]
    pub feature_mode: Option<FeatureMode>,
    /// Override the configured epoch limit.
    #[arg(long)]
    pub max_epochs: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    /// Validation statistic that picks the winner: val-loss, val-auc or val-accuracy.
    #[arg(long, default_value = "val-loss")]
    pub select: Selection,
}

fn read_corpus(index: &Path, databases: &[Database]) -> Result<FeaturizedCorpus, CliError> {
    let mut corpus = FeaturizedCorpus::read(index).map_err(|e| usage(format!("{}: {e}", index.display())))?;
    if !databases.is_empty() {
        corpus.segments.retain(|s| databases.contains(&s.entry.database));
    }
    if corpus.segments.is_empty() {
        return Err(usage(format!("{}: no segments selected", index.display())));
    }
    Ok(corpus)
}

fn recordings_of(corpus: &FeaturizedCorpus) -> Vec<RecordingRecord> {
    let mut seen = HashSet::new();
    corpus
        .segments
        .iter()
        .filter(|s| seen.insert(s.entry.recording_id.clone()))
        .map(|s| RecordingRecord {
            recording_id: s.entry.recording_id.clone(),
            speaker_id: s.entry.speaker_id.clone(),
            database: s.entry.database,
            path: String::new(),
            tv_path: None,
            mfcc_path: None,
            scores: Vec::new(),
            label: Some(s.entry.label),
        })
        .collect()
}

fn resolve_split(data: &DataArgs, corpus: &FeaturizedCorpus, seed: u64) -> Result<DatasetSplit, CliError> {
    if let Some(path) = &data.split {
        return read_config::<Option<DatasetSplit>>(Some(path))?
            .ok_or_else(|| usage(format!("{}: empty split", path.display())));
    }
    let ratios: [f64; 3] = data
        .ratios
        .as_slice()
        .try_into()
        .map_err(|_| usage("--ratios takes three comma-separated values"))?;
    let counts = corpus.segment_counts();
    make_split_weighted(&recordings_of(corpus), |r| counts[&r.recording_id], ratios, seed).map_err(|e| usage(e.to_string()))
}

fn model_config(common: &Common, data: &DataArgs, corpus: &FeaturizedCorpus, seed: u64) -> Result<ModelConfig, CliError> {
    let mode = data.feature_mode.unwrap_or(corpus.mode);
    let mut config = match &common.config {
        Some(path) => {
            let c: ModelConfig = read_config(Some(path))?;
            if data.feature_mode.is_some_and(|m| m != c.feature_mode) {
                return Err(usage(format!(
                    "--feature-mode {mode} conflicts with {} in {}",
                    c.feature_mode,
                    path.display()
                )));
            }
            c
        }
        None => ModelConfig::best(mode),
    };
    if config.feature_mode != corpus.mode {
        return Err(usage(format!(
            "model expects {} features but the index holds {}",
            config.feature_mode, corpus.mode
        )));
    }
    config.seed = seed;
    if let Some(n) = data.max_epochs {
        config.max_epochs = n;
    }
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn prepared(corpus: &FeaturizedCorpus, split: &DatasetSplit) -> Result<PreparedData, CliError> {
    let known: HashSet<&str> = corpus.segments.iter().map(|s| s.entry.recording_id.as_str()).collect();
    let train_known = split.train.iter().any(|id| known.contains(id.as_str()));
    if !train_known {
        return Err(usage("no training recording of the split is in the index"));
    }
    prepare(corpus, split).map_err(|e| usage(format!("refusing split: {e}")))
}

pub fn train(args: &TrainArgs) -> CliResult {
    let seed = setup(&args.common)?;
    let corpus = read_corpus(&args.data.manifest, &args.data.databases)?;
    let config = model_config(&args.common, &args.data, &corpus, seed)?;
    let split = resolve_split(&args.data, &corpus, seed)?;
    let data = prepared(&corpus, &split)?;

    let mut trainer = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
            if ckpt.meta.config.feature_mode != config.feature_mode {
                return Err(usage(format!(
                    "checkpoint holds a {} model, data is {}",
                    ckpt.meta.config.feature_mode, config.feature_mode
                )));
            }
            if ckpt.norm != data.norm {
                return Err(usage("checkpoint normalization does not match this split's training data"));
            }
            let mut t = ckpt.into_trainer();
            if let Some(n) = args.data.max_epochs {
                t.model.config.max_epochs = n;
            }
            t
        }
        None => Trainer::new(Model::new(&config).map_err(|e| usage(e.to_string()))?),
    };
    info!(
        "training {} model on {} segments, validating on {}",
        trainer.model.config.feature_mode,
        data.train.len(),
        data.validation.len()
    );
    let report = trainer
        .fit(&data.train, &data.validation, &data.norm_fitted_on)
        .context("training")?;

    let out = &args.common.out;
    let databases: BTreeSet<Database> = data.train.examples().iter().map(|e| e.database).collect();
    let ckpt_path = out.join("checkpoint.acfn");
    Checkpoint::from_trainer(&trainer, data.norm.clone(), databases.into_iter().collect())
        .save(&ckpt_path)
        .context("saving checkpoint")?;
    write_jsonl(&out.join("train_log.jsonl"), &report.epochs)?;
    write_json(&out.join("train_report.json"), &report)?;
    write_json(&out.join("split.json"), &split)?;
    let mut run = RunManifest::new("train", &args.common, seed);
    run.inputs.push(args.data.manifest.clone());
    run.inputs.extend(args.data.split.clone());
    run.inputs.extend(args.resume.clone());
    run.outputs = vec![ckpt_path, out.join("train_log.jsonl"), out.join("train_report.json"), out.join("split.json")];
    run.settings = serde_json::to_value(&trainer.model.config).context("encoding settings")?;
    run.write(out)?;
    Ok(Outcome::Complete)
}

pub fn grid_search(args: &GridArgs) -> CliResult {
    let seed = setup(&args.common)?;
    let corpus = read_corpus(&args.data.manifest, &args.data.databases)?;
    let base = model_config(&args.common, &args.data, &corpus, seed)?;
    let split = resolve_split(&args.data, &corpus, seed)?;
    let data = prepared(&corpus, &split)?;
    let result = run_grid(&base, &data.train, &data.validation, &data.norm_fitted_on, args.select);
    let out = &args.common.out;
    write_jsonl(&out.join("grid.jsonl"), &result.entries)?;
    write_json(&out.join("grid_result.json"), &result)?;
    write_json(&out.join("split.json"), &split)?;
    if let Some(best) = result.best {
        write_json(&out.join("best_config.json"), &result.entries[best].config)?;
    }
    let failed = result.entries.iter().filter(|e| e.error.is_some()).count();
    let mut run = RunManifest::new("grid-search", &args.common, seed);
    run.inputs.push(args.data.manifest.clone());
    run.outputs = vec![out.join("grid.jsonl"), out.join("grid_result.json")];
    run.settings = serde_json::to_value(&base).context("encoding settings")?;
    run.write(out)?;
    Ok(match (failed, result.best) {
        (_, None) => return Err(CliError::Failed(anyhow::anyhow!("every grid point failed"))),
        (0, _) => Outcome::Complete,
        (n, _) => Outcome::Partial(n),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Subset {
    Train,
    Validation,
    Test,
    All,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Segment index written by `featurize`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split file used to select a subset.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Part of the split to score (requires --split).
    #[arg(long, value_enum, default_value = "test")]
    pub subset: Subset,
    /// Restrict to these databases.
    #[arg(long = "database", value_delimiter = ',')]
    pub databases: Vec<Database>,
    /// Expected feature mode; must match the checkpoint.
    #[arg(long)]
    pub feature_mode: Option<FeatureMode>,
    /// Average segment scores per recording before scoring.
    #[arg(long)]
    pub recording_level: bool,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
}

#[derive(Serialize)]
struct ScoreRow<'a> {
    id: &'a str,
    database: Database,
    label: Label,
    score: f64,
}

fn joined(dbs: impl IntoIterator<Item = Database>) -> String {
    let names: Vec<String> = dbs.into_iter().map(|d| d.to_string()).collect();
    if names.is_empty() {
        "-".into()
    } else {
        names.join("&")
    }
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult {
    let seed = setup(&args.common)?;
    let ckpt = Checkpoint::load(&args.checkpoint).map_err(|e| usage(format!("{}: {e}", args.checkpoint.display())))?;
    let mode = ckpt.meta.config.feature_mode;
    if let Some(m) = args.feature_mode.filter(|m| *m != mode) {
        return Err(usage(format!("--feature-mode {m} but the checkpoint holds a {mode} model")));
    }
    let mut corpus = read_corpus(&args.manifest, &args.databases)?;
    if corpus.mode != mode {
        return Err(usage(format!(
            "checkpoint was trained on {mode} features, index holds {}",
            corpus.mode
        )));
    }
    if let Some(path) = &args.split {
        let split = read_config::<Option<DatasetSplit>>(Some(path))?
            .ok_or_else(|| usage(format!("{}: empty split", path.display())))?;
        let keep: HashSet<String> = match args.subset {
            Subset::Train => split.train.into_iter().collect(),
            Subset::Validation => split.validation.into_iter().collect(),
            Subset::Test => split.test.into_iter().collect(),
            Subset::All => split.train.into_iter().chain(split.validation).chain(split.test).collect(),
        };
        corpus.segments.retain(|s| keep.contains(&s.entry.recording_id));
        if corpus.segments.is_empty() {
            return Err(usage("the selected subset has no segments in the index"));
        }
    }
    let set = normalized_set(&corpus, &ckpt.norm).context("normalizing")?;
    let train_dbs = joined(ckpt.meta.train_databases.iter().copied());
    let mut trainer = ckpt.into_trainer();
    let probs = predict(&mut trainer.model, &set).context("scoring")?;

    let (ids, labels, dbs, scores): (Vec<String>, Vec<Label>, Vec<Database>, Vec<f64>) = if args.recording_level {
        let meta: BTreeMap<&str, (Label, Database)> = set
            .examples()
            .iter()
            .map(|e| (e.recording_id.as_str(), (e.label, e.database)))
            .collect();
        let per = recording_scores(set.examples().iter().map(|e| e.recording_id.as_str()), &probs);
        let mut cols = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (id, s) in per {
            let (l, d) = meta[id.as_str()];
            cols.0.push(id);
            cols.1.push(l);
            cols.2.push(d);
            cols.3.push(s);
        }
        cols
    } else {
        (
            set.examples().iter().map(|e| e.id.clone()).collect(),
            set.labels(),
            set.examples().iter().map(|e| e.database).collect(),
            probs,
        )
    };
    let report = eval_report(&scores, &labels, &dbs, args.threshold).context("computing metrics")?;
    for w in report.overall.warnings.iter() {
        warn!("{w}");
    }
    let features = mode.to_string();
    let rows: Vec<ResultsRow> = report
        .per_database
        .iter()
        .map(|(db, m)| ResultsRow::from_metrics(&features, &train_dbs, &db.to_string(), m))
        .collect();

    let out = &args.common.out;
    let table = results_table(&rows);
    acfnet::zoo::checkpoint::write_atomic(&out.join("results.md"), table.as_bytes()).context("writing results")?;
    write_json(&out.join("evaluation.json"), &report)?;
    let score_rows: Vec<ScoreRow> = ids
        .iter()
        .zip(&labels)
        .zip(&dbs)
        .zip(&scores)
        .map(|(((id, &label), &database), &score)| ScoreRow {
            id,
            database,
            label,
            score,
        })
        .collect();
    write_jsonl(&out.join("scores.jsonl"), &score_rows)?;
    print!("{table}");

    let mut run = RunManifest::new("evaluate", &args.common, seed);
    run.inputs = vec![args.manifest.clone(), args.checkpoint.clone()];
    run.inputs.extend(args.split.clone());
    run.outputs = vec![out.join("results.md"), out.join("evaluation.json"), out.join("scores.jsonl")];
    run.settings = serde_json::json!({
        "subset": format!("{:?}", args.subset).to_lowercase(),
        "databases": args.databases,
        "recording_level": args.recording_level,
        "threshold": args.threshold,
    });
    run.write(out)?;
    Ok(Outcome::Complete)
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Speakers per class.
    #[arg(long)]
    pub speakers: Option<usize>,
    /// Also emit a 12-channel cepstral analog with its own weaker coupling.
    #[arg(long)]
    pub mfcc_analog: bool,
    /// Alternate speakers between this many database tags (1 or 2).
    #[arg(long)]
    pub sub_corpora: Option<usize>,
}

pub fn synth(args: &SynthArgs) -> CliResult {
    let seed = setup(&args.common)?;
    let mut spec: SynthSpec = read_config(args.common.config.as_deref())?;
    if args.mfcc_analog && spec.mfcc.is_none() {
        spec = spec.with_mfcc_analog();
    }
    if let Some(n) = args.speakers {
        spec.speakers_per_class = n;
    }
    if let Some(n) = args.sub_corpora {
        spec.sub_corpora = n;
    }
    spec.seed = seed;
    spec.validate().map_err(|e| usage(e.to_string()))?;
    let recordings = generate(&spec).context("generating corpus")?;
    let manifest = write_corpus(&recordings, &args.common.out).context("writing corpus")?;
    info!("{} recordings written to {}", recordings.len(), manifest.display());
    let mut run = RunManifest::new("synth", &args.common, seed);
    run.outputs.push(manifest);
    run.settings = serde_json::to_value(&spec).context("encoding settings")?;
    run.write(&args.common.out)?;
    Ok(Outcome::Complete)
}
