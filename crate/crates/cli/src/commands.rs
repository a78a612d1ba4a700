//! Subcommand implementations.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use ped_core::corpus::{
    concat_multilingual, load_corpus, split_train_val, CorpusBundle, Document, Instance,
    InstanceKind, NewsItem,
};
use ped_core::encoder::{EncoderBackendSpec, ToyBackend};
use ped_core::metrics::{compare_to_reference, conll_f1, macro_f1, positive_f1, ReferenceTable};
use ped_core::replicate::{
    replicate_run, write_event_csv, DocScorer, GeocodeCache, KeywordScorer, LexiconRecognizer,
    MockGeoClient, ReplicateError, ReplicateParams, RestGeoClient,
};
use ped_core::tasks::{
    predict_binary, predict_tags, read_predictions, write_predictions, Prediction, TagVocab,
    TaskHeadSpec, TaskKind,
};
use ped_core::trainer::{train, TrainConfig};
use ped_core::viz::{
    emit_scatter, model_features, reduce_2d, tfidf_features, GroupBy, ReduceMethod,
};

use crate::config::{
    check_paths_exist, load_toml, ReplicateFileConfig, TrainFileConfig, VizFileConfig,
};
use crate::error::CliError;
use crate::manifest::RunManifest;

fn parse_task_kind(s: &str) -> Result<TaskKind, CliError> {
    match s {
        "document" => Ok(TaskKind::Document),
        "sentence" => Ok(TaskKind::Sentence),
        "token" => Ok(TaskKind::Token),
        other => Err(CliError::Config(format!("unknown task kind {other:?}"))),
    }
}

fn instance_kind(task: TaskKind) -> InstanceKind {
    match task {
        TaskKind::Document => InstanceKind::Document,
        TaskKind::Sentence => InstanceKind::Sentence,
        TaskKind::Token => InstanceKind::Token,
    }
}

fn load_bundle(
    paths: &BTreeMap<String, PathBuf>,
    kind: InstanceKind,
    seed: u64,
) -> Result<CorpusBundle, CliError> {
    check_paths_exist(paths.values())?;
    let mut bundle = CorpusBundle::new(kind, seed);
    for (lang, path) in paths {
        let instances = load_corpus(path, lang, kind)?;
        bundle.add_language(lang, instances, &path.display().to_string())?;
    }
    Ok(bundle)
}

fn config_snapshot<T: Serialize>(config: &T) -> serde_json::Value {
    serde_json::to_value(config).unwrap_or(serde_json::Value::Null)
}

/// The head description and tag inventory saved next to a trained model so
/// prediction and evaluation can rebind it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskBundle {
    pub head: TaskHeadSpec,
    pub tags: Option<Vec<String>>,
    pub max_len: usize,
}

impl TaskBundle {
    fn save(&self, path: &Path) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Data(format!("task bundle serialization: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read task file {}: {e}", path.display()))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("cannot parse task file: {e}")))
    }

    fn vocab(&self) -> Result<Option<TagVocab>, CliError> {
        match &self.tags {
            Some(tags) => Ok(Some(TagVocab::new(tags).map_err(CliError::from)?)),
            None => Ok(None),
        }
    }
}

pub fn cmd_train(
    config_path: &Path,
    seed_override: Option<u64>,
    out_override: Option<PathBuf>,
) -> Result<(), CliError> {
    let mut cfg: TrainFileConfig = load_toml(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if let Some(out) = out_override {
        cfg.out_dir = out;
    }
    let task = parse_task_kind(&cfg.task)?;
    check_paths_exist(cfg.data.paths.values())?;
    if cfg.backend.kind != "toy" {
        return Err(CliError::Config(format!(
            "backend {:?} is not trainable in this build; only \"toy\" ships built in",
            cfg.backend.kind
        )));
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut manifest = RunManifest::start(
        "train",
        config_snapshot(&cfg),
        cfg.seed,
        cfg.data
            .paths
            .values()
            .map(|p| p.display().to_string())
            .collect(),
        cfg.out_dir.join("manifest.json"),
    )?;

    let (head, vocab) = match task {
        TaskKind::Token => {
            let tags = cfg.tags.clone().ok_or_else(|| {
                CliError::Config("token task needs a [tags] list in the config".into())
            })?;
            let vocab = TagVocab::new(&tags).map_err(CliError::from)?;
            (TaskHeadSpec::token(vocab.len()), Some(vocab))
        }
        kind => (TaskHeadSpec::binary(kind), None),
    };

    let bundle = load_bundle(&cfg.data.paths, instance_kind(task), cfg.seed)?;
    let all = concat_multilingual(&bundle, cfg.seed);
    let (train_set, val_set) = match cfg.data.val_ratio {
        Some(ratio) => {
            let (t, v) = split_train_val(&all, ratio, cfg.seed)?;
            (t, Some(v))
        }
        None => (all, None),
    };

    let spec = EncoderBackendSpec::toy(cfg.backend.hidden_dim, cfg.backend.vocab_size);
    let num_tags = vocab.as_ref().map_or(2, TagVocab::len);
    let mut backend = ToyBackend::new(&spec, num_tags, cfg.seed)?;

    let train_config = TrainConfig {
        learning_rate: cfg.train.learning_rate,
        batch_size: cfg.train.batch_size,
        grad_accum_steps: cfg.train.grad_accum_steps,
        epochs: cfg.train.epochs,
        warmup_steps: cfg.train.warmup_steps,
        weight_decay: cfg.train.weight_decay,
        seed: cfg.seed,
        max_len: cfg.train.max_len,
    };
    let log = train(
        &mut backend,
        &head,
        vocab.as_ref(),
        &train_set,
        val_set.as_deref(),
        &train_config,
    )?;

    let model_path = cfg.out_dir.join("model.json");
    backend.save(&model_path).map_err(CliError::from)?;
    let task_path = cfg.out_dir.join("task.json");
    TaskBundle {
        head,
        tags: cfg.tags.clone(),
        max_len: cfg.train.max_len,
    }
    .save(&task_path)?;
    let log_path = cfg.out_dir.join("train_log.csv");
    log.write_step_csv(&log_path)?;
    let epoch_path = cfg.out_dir.join("epoch_metrics.csv");
    log.write_epoch_csv(&epoch_path)?;

    for p in [&model_path, &task_path, &log_path, &epoch_path] {
        manifest.add_output(p);
    }
    manifest.finish()?;

    let final_loss = log.step_loss.last().copied().unwrap_or(f64::NAN);
    match log.epoch_val_metric.last() {
        Some(metric) => println!(
            "trained {} instances for {} epochs: final step loss {final_loss:.4}, last val metric {metric:.4}",
            train_set.len(),
            train_config.epochs
        ),
        None => println!(
            "trained {} instances for {} epochs: final step loss {final_loss:.4}",
            train_set.len(),
            train_config.epochs
        ),
    }
    println!("artifacts in {}", cfg.out_dir.display());
    Ok(())
}

pub fn cmd_predict(
    model: &Path,
    task: Option<PathBuf>,
    input: &Path,
    out: &Path,
    seed: Option<u64>,
) -> Result<(), CliError> {
    let backend = ToyBackend::load(model).map_err(CliError::from)?;
    let task_path = task.unwrap_or_else(|| {
        model
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("task.json")
    });
    let bundle = TaskBundle::load(&task_path)?;
    let vocab = bundle.vocab()?;
    check_paths_exist([&input.to_path_buf()])?;

    let mut manifest = RunManifest::start(
        "predict",
        serde_json::json!({
            "model": model.display().to_string(),
            "task": task_path.display().to_string(),
            "input": input.display().to_string(),
        }),
        seed.unwrap_or(0),
        vec![input.display().to_string()],
        manifest_sibling(out),
    )?;

    let kind = instance_kind(bundle.head.kind);
    let instances = load_corpus(input, "", kind)?;
    let mut predictions = Vec::with_capacity(instances.len());
    for inst in &instances {
        match bundle.head.kind {
            TaskKind::Document | TaskKind::Sentence => {
                let text = inst.text().unwrap_or_default();
                let score = predict_binary(&backend, &text, bundle.max_len)?;
                predictions.push(Prediction::Binary {
                    id: inst.id().to_string(),
                    score,
                });
            }
            TaskKind::Token => {
                let vocab = vocab.as_ref().ok_or_else(|| {
                    CliError::Config("token prediction needs tags in the task file".into())
                })?;
                let token_inst = inst.as_token().ok_or_else(|| {
                    CliError::Data(format!("instance {} is not token data", inst.id()))
                })?;
                let tags = predict_tags(&backend, token_inst, vocab, bundle.max_len)?;
                predictions.push(Prediction::Tags {
                    id: inst.id().to_string(),
                    tags,
                });
            }
        }
    }
    write_predictions(out, &predictions)?;
    manifest.add_output(out);
    manifest.finish()?;
    println!(
        "wrote {} predictions to {}",
        predictions.len(),
        out.display()
    );
    Ok(())
}

fn manifest_sibling(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    out.with_file_name(name)
}

pub fn cmd_eval(
    pred: &Path,
    gold: &Path,
    kind: &str,
    out: &Path,
    positive_only: bool,
) -> Result<(), CliError> {
    let task = parse_task_kind(kind)?;
    check_paths_exist([&pred.to_path_buf(), &gold.to_path_buf()])?;
    let predictions = read_predictions(pred)?;
    let gold_instances = load_corpus(gold, "", instance_kind(task))?;
    if gold_instances.is_empty() {
        return Err(CliError::Data(format!(
            "gold file {} holds no instances",
            gold.display()
        )));
    }

    let mut manifest = RunManifest::start(
        "eval",
        serde_json::json!({
            "pred": pred.display().to_string(),
            "gold": gold.display().to_string(),
            "kind": kind,
        }),
        0,
        vec![pred.display().to_string(), gold.display().to_string()],
        manifest_sibling(out),
    )?;

    let mut rows: Vec<(String, f64)> = Vec::new();
    match task {
        TaskKind::Document | TaskKind::Sentence => {
            let mut by_id = BTreeMap::new();
            for p in &predictions {
                match p {
                    Prediction::Binary { id, score } => {
                        by_id.insert(id.clone(), *score);
                    }
                    Prediction::Tags { id, .. } => {
                        return Err(CliError::Data(format!(
                            "prediction {id} is a tag sequence but kind is {kind}"
                        )))
                    }
                }
            }
            let mut preds = Vec::new();
            let mut golds = Vec::new();
            for inst in &gold_instances {
                let label = inst.label().ok_or_else(|| {
                    CliError::Data(format!("gold instance {} has no label", inst.id()))
                })?;
                let score = by_id.get(inst.id()).ok_or_else(|| {
                    CliError::Data(format!("no prediction for gold id {}", inst.id()))
                })?;
                preds.push(u8::from(*score >= 0.5));
                golds.push(label);
            }
            rows.push(("macro_f1".into(), macro_f1(&preds, &golds)?));
            if positive_only {
                rows.push(("positive_f1".into(), positive_f1(&preds, &golds)?));
            }
        }
        TaskKind::Token => {
            let mut by_id = BTreeMap::new();
            for p in &predictions {
                match p {
                    Prediction::Tags { id, tags } => {
                        by_id.insert(id.clone(), tags.clone());
                    }
                    Prediction::Binary { id, .. } => {
                        return Err(CliError::Data(format!(
                            "prediction {id} is a score but kind is token"
                        )))
                    }
                }
            }
            let mut pred_seqs = Vec::new();
            let mut gold_seqs = Vec::new();
            let mut ids = Vec::new();
            for inst in &gold_instances {
                let token_inst = inst
                    .as_token()
                    .ok_or_else(|| CliError::Data("gold is not token data".into()))?;
                let tags = by_id.get(&token_inst.id).ok_or_else(|| {
                    CliError::Data(format!("no prediction for gold id {}", token_inst.id))
                })?;
                pred_seqs.push(tags.clone());
                gold_seqs.push(token_inst.tags.clone());
                ids.push(token_inst.id.clone());
            }
            let scores = conll_f1(&pred_seqs, &gold_seqs, Some(&ids))?;
            rows.push(("span_f1".into(), scores.f1));
            rows.push(("span_precision".into(), scores.precision));
            rows.push(("span_recall".into(), scores.recall));
            rows.push(("span_macro_f1".into(), scores.macro_f1));
            for (ty, (_, _, f1)) in &scores.per_type {
                rows.push((format!("span_f1_{ty}"), *f1));
            }
        }
    }

    let mut csv = String::from("metric,value\n");
    for (metric, value) in &rows {
        csv.push_str(&format!("{metric},{value}\n"));
        println!("{metric}: {value}");
    }
    std::fs::write(out, csv)?;
    manifest.add_output(out);
    manifest.finish()?;
    Ok(())
}

struct OwnedModelScorer {
    backend: ToyBackend,
    max_len: usize,
}

impl DocScorer for OwnedModelScorer {
    fn score(&self, text: &str) -> Result<f64, ReplicateError> {
        Ok(predict_binary(&self.backend, text, self.max_len)?)
    }
}

pub fn cmd_replicate(
    config_path: &Path,
    mock_geocoder: bool,
    seed_override: Option<u64>,
) -> Result<(), CliError> {
    let mut cfg: ReplicateFileConfig = load_toml(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    if mock_geocoder {
        cfg.geocoder.kind = "mock".into();
    }
    check_paths_exist([&cfg.news])?;

    let scorer: Box<dyn DocScorer> = match cfg.scorer.kind.as_str() {
        "keyword" => {
            if cfg.scorer.keywords.is_empty() {
                return Err(CliError::Config(
                    "keyword scorer needs a non-empty keyword list".into(),
                ));
            }
            Box::new(KeywordScorer::new(cfg.scorer.keywords.clone()))
        }
        "model" => {
            let path = cfg.scorer.model_path.as_ref().ok_or_else(|| {
                CliError::Config("scorer.kind = \"model\" needs scorer.model_path".into())
            })?;
            check_paths_exist([path])?;
            let backend = ToyBackend::load(path).map_err(CliError::from)?;
            Box::new(OwnedModelScorer {
                backend,
                max_len: cfg.scorer.max_len,
            })
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown scorer kind {other:?} (expected \"model\" or \"keyword\")"
            )))
        }
    };

    if cfg.ner.kind != "lexicon" {
        return Err(CliError::Config(format!(
            "unknown recognizer kind {:?} (only \"lexicon\" ships built in)",
            cfg.ner.kind
        )));
    }
    check_paths_exist([&cfg.ner.lexicon])?;
    let ner = LexiconRecognizer::from_jsonl(&cfg.ner.lexicon)?;

    enum ClientChoice {
        Mock(MockGeoClient),
        Rest(RestGeoClient),
    }
    let client = match cfg.geocoder.kind.as_str() {
        "mock" => {
            let fixtures =
                cfg.geocoder.fixtures.as_ref().ok_or_else(|| {
                    CliError::Config("mock geocoder needs geocoder.fixtures".into())
                })?;
            check_paths_exist([fixtures])?;
            ClientChoice::Mock(MockGeoClient::from_jsonl(fixtures)?)
        }
        "rest" => {
            let key = std::env::var(&cfg.geocoder.api_key_env).map_err(|_| {
                CliError::Config(format!(
                    "geocoder API key env var {} is not set (or pass --mock-geocoder)",
                    cfg.geocoder.api_key_env
                ))
            })?;
            ClientChoice::Rest(RestGeoClient::new(
                &cfg.geocoder.url_template,
                &key,
                cfg.geocoder.requests_per_second,
            ))
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown geocoder kind {other:?} (expected \"mock\" or \"rest\")"
            )))
        }
    };

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut manifest = RunManifest::start(
        "replicate",
        config_snapshot(&cfg),
        cfg.seed,
        vec![cfg.news.display().to_string()],
        cfg.out_dir.join("manifest.json"),
    )?;

    let mut cache = match &cfg.geocoder.cache_path {
        Some(path) => GeocodeCache::open(path)?,
        None => GeocodeCache::in_memory(),
    };

    let window = match &cfg.window {
        Some(w) => {
            let parse = |s: &str| {
                chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d")
                    .map_err(|e| CliError::Config(format!("bad window date {s:?}: {e}")))
            };
            Some((parse(&w.start)?, parse(&w.end)?))
        }
        None => None,
    };
    let params = ReplicateParams {
        threshold: cfg.threshold,
        threshold_on_logit: cfg.threshold_on_logit,
        date_window: window,
    };

    let items: Vec<NewsItem> = load_corpus(&cfg.news, "", InstanceKind::News)?
        .iter()
        .filter_map(|i| i.as_news().cloned())
        .collect();

    let outcome = match &client {
        ClientChoice::Mock(c) => {
            replicate_run(&items, scorer.as_ref(), &ner, c, &mut cache, &params)?
        }
        ClientChoice::Rest(c) => {
            replicate_run(&items, scorer.as_ref(), &ner, c, &mut cache, &params)?
        }
    };

    let events_path = cfg.out_dir.join("events.csv");
    write_event_csv(&outcome.records, &events_path)?;
    let report_path = cfg.out_dir.join("report.json");
    outcome.report.write_json(&report_path)?;
    manifest.add_output(&events_path);
    manifest.add_output(&report_path);
    manifest.finish()?;

    println!(
        "replicated {} events from {} items ({} below threshold, {} without locations, {} geocode misses)",
        outcome.report.kept,
        outcome.report.total,
        outcome.report.dropped_below_threshold,
        outcome.report.dropped_no_location,
        outcome.report.dropped_geocode_miss,
    );
    println!("events in {}", events_path.display());
    Ok(())
}

pub fn cmd_viz(config_path: &Path, seed_override: Option<u64>) -> Result<(), CliError> {
    let mut cfg: VizFileConfig = load_toml(config_path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    check_paths_exist(cfg.data.paths.values())?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    let mut manifest = RunManifest::start(
        "viz",
        config_snapshot(&cfg),
        cfg.seed,
        cfg.data
            .paths
            .values()
            .map(|p| p.display().to_string())
            .collect(),
        cfg.out_dir.join("manifest.json"),
    )?;

    let bundle = load_bundle(&cfg.data.paths, InstanceKind::Document, cfg.seed)?;
    let mut docs: Vec<Document> = Vec::new();
    for lang in bundle.languages().map(str::to_string).collect::<Vec<_>>() {
        for inst in bundle.language(&lang).unwrap_or_default() {
            if let Instance::Document(d) = inst {
                docs.push(d.clone());
            }
        }
    }

    let features = match cfg.source.as_str() {
        "tfidf" => tfidf_features(&docs)?,
        "model" => {
            let path = cfg
                .model_path
                .as_ref()
                .ok_or_else(|| CliError::Config("source = \"model\" needs model_path".into()))?;
            check_paths_exist([path])?;
            let backend = ToyBackend::load(path).map_err(CliError::from)?;
            model_features(&backend, &docs, cfg.max_len)?
        }
        other => {
            return Err(CliError::Config(format!(
                "unknown feature source {other:?} (expected \"tfidf\" or \"model\")"
            )))
        }
    };

    let features_path = cfg.out_dir.join("features.csv");
    features.write_csv(&features_path)?;
    manifest.add_output(&features_path);

    let set = reduce_2d(&features, ReduceMethod::Tsne, cfg.seed, cfg.perplexity)?;
    let files = emit_scatter(&set, GroupBy::Language, &cfg.out_dir, "scatter")?;
    for f in &files {
        manifest.add_output(f);
    }
    manifest.finish()?;

    println!(
        "reduced {} documents to 2-D; wrote {} scatter files to {}",
        docs.len(),
        files.len(),
        cfg.out_dir.display()
    );
    Ok(())
}

pub fn cmd_compare(
    results: &Path,
    reference: Option<PathBuf>,
    baseline: Option<String>,
    out: Option<PathBuf>,
) -> Result<(), CliError> {
    check_paths_exist([&results.to_path_buf()])?;
    let results_table = ReferenceTable::from_csv_path(results)?;
    let reference_table = match &reference {
        Some(path) => {
            check_paths_exist([path])?;
            ReferenceTable::from_csv_path(path)?
        }
        None => ReferenceTable::builtin(),
    };
    let reference_table = match &baseline {
        Some(model) => reference_table.filter_model(model),
        None => reference_table,
    };

    let deltas = compare_to_reference(&results_table, &reference_table)?;
    println!("lang,metric,result,reference,delta");
    let mut csv = String::from("lang,metric,result,reference,delta\n");
    for d in &deltas {
        let line = format!(
            "{},{},{},{},{:+.2}",
            d.lang, d.metric, d.result, d.reference, d.delta
        );
        println!("{line}");
        csv.push_str(&line);
        csv.push('\n');
    }
    if let Some(out) = out {
        std::fs::write(&out, csv)?;
        println!("deltas written to {}", out.display());
    }
    Ok(())
}
