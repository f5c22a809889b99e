use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use carl_core::corpus::{
    generate_synthetic, load_click_logs, save_click_logs, simulate_clicks as click_log, ClickModelConfig, Dataset,
    QueryRecord, SynthConfig, CLICKS_FILE, DATASET_FILE, SCHEMA_FILE,
};
use carl_core::env::{run_episode, DecodeMode, EpisodeOptions};
use carl_core::metrics::{MetricKind, MetricSpec};
use carl_core::neural::ModelParams;
use carl_core::policy::ContextMode;
use carl_core::trainer::report::{read_config_sidecar, write_config_sidecar};
use carl_core::trainer::{evaluate, kfold, rank_query, Ranker, Supervision, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::{ClickArgs, ContextArg, EvalArgs, FoldArgs, GenerateArgs, RankArgs, SupervisionArg, TrainArgs};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const CONFIG_SIDECAR: &str = "config.json";
pub const TRAIN_REPORT: &str = "train_report.csv";
pub const EVAL_CSV: &str = "eval.csv";
pub const EVAL_JSON: &str = "eval.json";

fn read_toml<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn to_toml<T: Serialize>(value: &T) -> Result<String, CliError> {
    toml::to_string(value).map_err(|e| CliError::Internal(e.to_string()))
}

pub fn default_configs() -> Result<String, CliError> {
    Ok(format!(
        "# generate-data --config\n{}\n# train --config\n{}\n# simulate-clicks --click-config\n{}",
        to_toml(&SynthConfig::default())?,
        to_toml(&TrainConfig::default())?,
        to_toml(&ClickModelConfig::default())?
    ))
}

fn load_data(dir: &Path) -> Result<Dataset, CliError> {
    for file in [SCHEMA_FILE, DATASET_FILE] {
        if !dir.join(file).is_file() {
            return Err(CliError::Lookup(format!("{} not found", dir.join(file).display())));
        }
    }
    Ok(Dataset::load_dir(dir)?)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))
}

fn context_mode(arg: ContextArg) -> ContextMode {
    match arg {
        ContextArg::Policy => ContextMode::Policy,
        ContextArg::Random => ContextMode::Random,
        ContextArg::Oracle => ContextMode::Oracle,
        ContextArg::None => ContextMode::None,
    }
}

/// Queries of one fold part, or all of them.
fn fold_subset(queries: &[QueryRecord], folds: &FoldArgs, test: bool) -> Result<Vec<QueryRecord>, CliError> {
    let (Some(k), Some(i)) = (folds.folds, folds.fold) else {
        return Ok(queries.to_vec());
    };
    if i >= k {
        return Err(CliError::Usage(format!("--fold {i} must be below --folds {k}")));
    }
    let all = kfold(queries.len(), k, folds.fold_seed)?;
    let idx = if test { &all[i].test } else { &all[i].train };
    Ok(idx.iter().map(|&j| queries[j].clone()).collect())
}

/// Checkpoint plus its training config (defaults when there is no sidecar).
fn load_model(checkpoint: &Path, data: &Dataset) -> Result<(ModelParams, TrainConfig), CliError> {
    if !checkpoint.is_file() {
        return Err(CliError::Lookup(format!("{} not found", checkpoint.display())));
    }
    let params = ModelParams::load_checkpoint(checkpoint)?;
    let shape = params.shape();
    if shape.alpha != data.schema.alpha || shape.raw_dims != data.schema.module_raw_dims() {
        return Err(CliError::Config(format!(
            "checkpoint {} (alpha {}, raw dims {:?}) does not match the dataset schema (alpha {}, raw dims {:?})",
            checkpoint.display(),
            shape.alpha,
            shape.raw_dims,
            data.schema.alpha,
            data.schema.module_raw_dims()
        )));
    }
    let sidecar = checkpoint.with_file_name(CONFIG_SIDECAR);
    let mut config = if sidecar.is_file() {
        read_config_sidecar(&sidecar)?
    } else {
        TrainConfig::default()
    };
    config.gru_mode = shape.gru_mode;
    Ok((params, config))
}

fn episode_options(
    config: &TrainConfig,
    data: &Dataset,
    context: Option<ContextArg>,
    target: Option<usize>,
) -> Result<EpisodeOptions, CliError> {
    let mut config = config.clone();
    if let Some(t) = target {
        config.target_length = t;
    }
    if let Some(c) = context {
        config.context_mode = context_mode(c);
    }
    let mut options = config.episode_options(data.schema.g_max)?;
    options.ssl = false;
    Ok(options)
}

pub fn generate_data(a: &GenerateArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("generate-data");
    let mut config: SynthConfig = read_toml(&a.config)?;
    if let Some(n) = a.queries {
        config.queries = n;
    }
    let corpus = generate_synthetic(&config, a.seed)?;
    create_dir(&a.out)?;
    let ds = Dataset {
        schema: corpus.schema,
        queries: corpus.queries,
    };
    ds.save_dir(&a.out)?;
    log::info!("wrote {} queries to {}", ds.queries.len(), a.out.display());
    manifest.config_path = Some(a.config.clone());
    manifest
        .seed("seed", a.seed)
        .output("dataset", &a.out.join(DATASET_FILE))
        .output("schema", &a.out.join(SCHEMA_FILE));
    manifest.finish(&a.out)
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("train");
    let data = load_data(&a.data.data)?;
    let mut config = match &a.config {
        Some(p) => read_toml::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = a.supervision {
        config.supervision = match s {
            SupervisionArg::Full => Supervision::Full,
            SupervisionArg::Weak => Supervision::Weak,
        };
    }
    if let Some(r) = &a.reward {
        config.reward = MetricKind::from_str(r).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if let Some(n) = a.max_updates {
        config.max_updates = n;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    config.validate()?;
    let queries = fold_subset(&data.queries, &a.folds, false)?;
    let mut trainer = Trainer::new(&queries, &data.schema, config.clone())?;
    if let Some(path) = &a.clicks {
        if config.supervision != Supervision::Weak {
            return Err(CliError::Usage("--clicks requires weak supervision".into()));
        }
        if !path.is_file() {
            return Err(CliError::Lookup(format!("{} not found", path.display())));
        }
        trainer.use_click_logs(&load_click_logs(path)?)?;
        manifest.input("clicks", path);
    }
    trainer.run()?;
    let (params, report) = trainer.finish();
    if let Some(last) = report.last() {
        log::info!(
            "finished {} updates: return {:.4}, metric {:.4}",
            last.update,
            last.mean_return,
            last.metric
        );
    }

    create_dir(&a.out)?;
    let ckpt = a.out.join(CHECKPOINT_FILE);
    params.save_checkpoint(&ckpt)?;
    write_config_sidecar(&a.out.join(CONFIG_SIDECAR), &config)?;
    report.write_csv(&a.out.join(TRAIN_REPORT))?;
    manifest.config_path = a.config.clone();
    manifest
        .seed("seed", config.seed)
        .input("data", &a.data.data)
        .output("checkpoint", &ckpt)
        .output("config", &a.out.join(CONFIG_SIDECAR))
        .output("report", &a.out.join(TRAIN_REPORT));
    if let Some(k) = a.folds.folds {
        manifest.seed("fold_seed", a.folds.fold_seed).seed("folds", k as u64);
    }
    manifest.finish(&a.out)
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("eval");
    let data = load_data(&a.data.data)?;
    let specs = a
        .metrics
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| MetricSpec::parse(s, data.schema.g_max).map_err(|e| CliError::Usage(e.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    if specs.is_empty() {
        return Err(CliError::Usage("--metrics is empty".into()));
    }
    let queries = fold_subset(&data.queries, &a.folds, true)?;

    let model = match &a.checkpoint {
        Some(c) if !a.oracle && a.random_seed.is_none() => Some(load_model(c, &data)?),
        _ => None,
    };
    let config = model.as_ref().map(|m| m.1.clone()).unwrap_or_default();
    let target = a.target_length.unwrap_or(config.target_length);
    let ranker = if a.oracle {
        Ranker::Oracle
    } else if let Some(seed) = a.random_seed {
        manifest.seed("random_seed", seed);
        Ranker::Random { seed }
    } else {
        let (params, _) = model.as_ref().expect("checkpoint required by the parser");
        Ranker::Policy {
            params,
            options: episode_options(&config, &data, a.context_mode, Some(target))?,
        }
    };
    let report = evaluate(&queries, &ranker, &specs, target)?;
    for (label, s) in report.metrics.iter().zip(&report.summary) {
        log::info!("{label}: {:.4} ± {:.4} (n = {})", s.mean, s.stderr, s.n);
    }
    match &a.out {
        None => print!("{}", report.to_csv()),
        Some(out) => {
            create_dir(out)?;
            fs::write(out.join(EVAL_CSV), report.to_csv())?;
            fs::write(out.join(EVAL_JSON), report.to_json()?)?;
            manifest.input("data", &a.data.data);
            if let Some(c) = &a.checkpoint {
                manifest.input("checkpoint", c);
            }
            manifest
                .output("csv", &out.join(EVAL_CSV))
                .output("json", &out.join(EVAL_JSON));
            manifest.finish(out)?;
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Candidate<'a> {
    id: &'a str,
    probability: f64,
}

#[derive(Serialize)]
struct ExplainStep<'a> {
    rank: usize,
    id: &'a str,
    vertical: usize,
    candidates: Vec<Candidate<'a>>,
}

#[derive(Serialize)]
struct ExplainAttention<'a> {
    vertical_id: usize,
    context: Vec<&'a str>,
    weights: &'a [f64],
}

#[derive(Serialize)]
struct Explain<'a> {
    query_id: &'a str,
    serp: Vec<&'a str>,
    steps: Vec<ExplainStep<'a>>,
    attention: Vec<ExplainAttention<'a>>,
}

pub fn rank(a: &RankArgs) -> Result<(), CliError> {
    let data = load_data(&a.data.data)?;
    let query = data
        .find(&a.query_id)
        .ok_or_else(|| CliError::Lookup(format!("query `{}`", a.query_id)))?;
    let (params, config) = load_model(&a.checkpoint, &data)?;
    let options = episode_options(&config, &data, a.context_mode, a.target_length)?;
    let trace = run_episode(query, &params, &options, DecodeMode::Greedy, 0)?;
    if !a.explain {
        for s in &trace.steps {
            println!("{}", s.action_id);
        }
        return Ok(());
    }
    let explain = Explain {
        query_id: &query.query_id,
        serp: trace.steps.iter().map(|s| s.action_id.as_str()).collect(),
        steps: trace
            .steps
            .iter()
            .enumerate()
            .map(|(t, s)| ExplainStep {
                rank: t + 1,
                id: &s.action_id,
                vertical: s.vertical,
                candidates: s
                    .candidates
                    .iter()
                    .zip(&s.probabilities)
                    .map(|(c, &p)| Candidate {
                        id: c.id(query),
                        probability: p,
                    })
                    .collect(),
            })
            .collect(),
        attention: trace
            .attention
            .iter()
            .map(|row| ExplainAttention {
                vertical_id: row.vertical_id,
                context: trace.context.iter().map(|&i| query.blue_links[i].doc_id.as_str()).collect(),
                weights: &row.weights,
            })
            .collect(),
    };
    println!("{}", serde_json::to_string_pretty(&explain)?);
    Ok(())
}

pub fn simulate_clicks(a: &ClickArgs) -> Result<(), CliError> {
    let mut manifest = RunManifest::start("simulate-clicks");
    let data = load_data(&a.data.data)?;
    let (params, config) = load_model(&a.checkpoint, &data)?;
    let model = match &a.click_config {
        Some(p) => read_toml::<ClickModelConfig>(p)?,
        None => ClickModelConfig::default(),
    };
    model.validate()?;
    let options = episode_options(&config, &data, None, None)?;
    let ranker = Ranker::Policy {
        params: &params,
        options,
    };
    let pages = data
        .queries
        .par_iter()
        .enumerate()
        .map(|(i, q)| rank_query(q, i, &ranker, options.target_length))
        .collect::<Result<Vec<_>, _>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    rng.set_stream(3);
    let logs = data
        .queries
        .iter()
        .zip(&pages)
        .map(|(q, page)| {
            let ids: Vec<String> = page.iter().map(|x| x.id(q).to_string()).collect();
            let grades: Vec<_> = page.iter().map(|x| x.gain(q).gain_grade).collect();
            click_log(&q.query_id, &ids, &grades, &model, rng.random())
        })
        .collect::<Result<Vec<_>, _>>()?;
    create_dir(&a.out)?;
    let path: PathBuf = a.out.join(CLICKS_FILE);
    save_click_logs(&path, &logs)?;
    let clicks: usize = logs.iter().map(|l| l.click_count()).sum();
    log::info!("{} click logs, {clicks} clicks", logs.len());
    manifest.config_path = a.click_config.clone();
    manifest
        .seed("seed", a.seed)
        .input("data", &a.data.data)
        .input("checkpoint", &a.checkpoint)
        .output("clicks", &path);
    manifest.finish(&a.out)
}
