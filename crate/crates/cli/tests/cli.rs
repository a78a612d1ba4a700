//! End-to-end tests of the `ped` binary: artifact layout, determinism,
//! exit codes, and golden outputs.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ped_core::corpus::Instance;
use ped_core::synth::separable_bilingual_docs;

fn ped() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ped"))
}

fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn write_docs_jsonl(path: &Path, docs: &[Instance], lang: &str) {
    let mut out = String::new();
    for inst in docs {
        if let Instance::Document(d) = inst {
            if d.lang == lang {
                out.push_str(&serde_json::to_string(d).unwrap());
                out.push('\n');
            }
        }
    }
    std::fs::write(path, out).unwrap();
}

fn assert_status(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn train_config(dir: &Path, out_dir: &Path) -> PathBuf {
    let docs = separable_bilingual_docs(60, 3);
    let en = dir.join("docs_en.jsonl");
    let es = dir.join("docs_es.jsonl");
    write_docs_jsonl(&en, &docs, "en");
    write_docs_jsonl(&es, &docs, "es");

    let config = format!(
        r#"
task = "document"
seed = 7
out_dir = "{}"

[data]
val_ratio = 0.2
[data.paths]
en = "{}"
es = "{}"

[backend]
kind = "toy"
hidden_dim = 16
vocab_size = 512

[train]
learning_rate = 0.02
batch_size = 8
epochs = 2
"#,
        out_dir.display(),
        en.display(),
        es.display()
    );
    let path = dir.join("train.toml");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn train_writes_artifacts_and_reproduces() {
    let dir = tempfile::tempdir().unwrap();
    let run1 = dir.path().join("run1");
    let config = train_config(dir.path(), &run1);

    let output = ped()
        .args(["train", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_status(&output, 0);

    for artifact in [
        "model.json",
        "task.json",
        "train_log.csv",
        "epoch_metrics.csv",
        "manifest.json",
    ] {
        assert!(run1.join(artifact).exists(), "missing {artifact}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run1.join("manifest.json")).unwrap())
            .unwrap();
    assert!(
        manifest["ended_at"].is_string(),
        "manifest must be finalized"
    );
    assert_eq!(manifest["subcommand"], "train");

    // same config and seed give a bit-identical training log
    let run2 = dir.path().join("run2");
    let output = ped()
        .args(["train", "--config"])
        .arg(&config)
        .args(["--out-dir"])
        .arg(&run2)
        .output()
        .unwrap();
    assert_status(&output, 0);
    assert_eq!(
        std::fs::read(run1.join("train_log.csv")).unwrap(),
        std::fs::read(run2.join("train_log.csv")).unwrap()
    );
}

#[test]
fn train_missing_data_path_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        r#"
task = "document"
out_dir = "{}"
[data.paths]
en = "{}"
[train]
epochs = 1
"#,
        dir.path().join("out").display(),
        dir.path().join("does_not_exist.jsonl").display()
    );
    let path = dir.path().join("train.toml");
    std::fs::write(&path, config).unwrap();

    let output = ped()
        .args(["train", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert_status(&output, 2);
}

#[test]
fn predict_then_eval_binary_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let config = train_config(dir.path(), &run);
    assert_status(
        &ped()
            .args(["train", "--config"])
            .arg(&config)
            .output()
            .unwrap(),
        0,
    );

    let preds = dir.path().join("preds.jsonl");
    let output = ped()
        .args(["predict", "--model"])
        .arg(run.join("model.json"))
        .args(["--input"])
        .arg(dir.path().join("docs_en.jsonl"))
        .args(["--out"])
        .arg(&preds)
        .output()
        .unwrap();
    assert_status(&output, 0);

    let lines: Vec<serde_json::Value> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 30);
    for line in &lines {
        let score = line["score"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&score));
    }

    let metrics = dir.path().join("metrics.csv");
    let output = ped()
        .args(["eval", "--pred"])
        .arg(&preds)
        .args(["--gold"])
        .arg(dir.path().join("docs_en.jsonl"))
        .args(["--kind", "document", "--out"])
        .arg(&metrics)
        .output()
        .unwrap();
    assert_status(&output, 0);
    let text = std::fs::read_to_string(&metrics).unwrap();
    let value: f64 = text
        .lines()
        .find(|l| l.starts_with("macro_f1,"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((0.0..=1.0).contains(&value));
}

#[test]
fn eval_perfect_predictions_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    let mut gold_lines = String::new();
    let mut pred_lines = String::new();
    for i in 0..6 {
        let label = i % 2;
        gold_lines.push_str(&format!(
            "{{\"id\":\"d{i}\",\"lang\":\"en\",\"text\":\"doc {i}\",\"label\":{label}}}\n"
        ));
        let score = if label == 1 { 0.99 } else { 0.01 };
        pred_lines.push_str(&format!("{{\"id\":\"d{i}\",\"score\":{score}}}\n"));
    }
    std::fs::write(&gold, gold_lines).unwrap();
    let preds = dir.path().join("preds.jsonl");
    std::fs::write(&preds, pred_lines).unwrap();

    let metrics = dir.path().join("metrics.csv");
    let output = ped()
        .args(["eval", "--pred"])
        .arg(&preds)
        .args(["--gold"])
        .arg(&gold)
        .args(["--kind", "document", "--out"])
        .arg(&metrics)
        .output()
        .unwrap();
    assert_status(&output, 0);
    let text = std::fs::read_to_string(&metrics).unwrap();
    assert!(text.contains("macro_f1,1"), "{text}");
}

#[test]
fn eval_token_fixture_scores_66_67() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    std::fs::write(
        &gold,
        r#"{"id":"t1","lang":"en","words":["alpha","beta","gamma","delta"],"tags":["B-a","I-a","O","B-b"]}
"#,
    )
    .unwrap();
    let preds = dir.path().join("preds.jsonl");
    std::fs::write(
        &preds,
        "{\"id\":\"t1\",\"tags\":[\"B-a\",\"I-a\",\"O\",\"O\"]}\n",
    )
    .unwrap();

    let metrics = dir.path().join("metrics.csv");
    let output = ped()
        .args(["eval", "--pred"])
        .arg(&preds)
        .args(["--gold"])
        .arg(&gold)
        .args(["--kind", "token", "--out"])
        .arg(&metrics)
        .output()
        .unwrap();
    assert_status(&output, 0);
    let text = std::fs::read_to_string(&metrics).unwrap();
    let value: f64 = text
        .lines()
        .find(|l| l.starts_with("span_f1,"))
        .unwrap()
        .split(',')
        .nth(1)
        .unwrap()
        .parse()
        .unwrap();
    assert!((value - 66.67).abs() <= 0.01, "span_f1 {value}");
}

#[test]
fn eval_empty_gold_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let gold = dir.path().join("gold.jsonl");
    std::fs::write(&gold, "").unwrap();
    let preds = dir.path().join("preds.jsonl");
    std::fs::write(&preds, "{\"id\":\"a\",\"score\":0.5}\n").unwrap();

    let output = ped()
        .args(["eval", "--pred"])
        .arg(&preds)
        .args(["--gold"])
        .arg(&gold)
        .args(["--kind", "document", "--out"])
        .arg(dir.path().join("metrics.csv"))
        .output()
        .unwrap();
    assert_status(&output, 3);
}

fn replicate_config(dir: &Path, news: &Path, geocoder_kind: &str) -> PathBuf {
    let config = format!(
        r#"
news = "{}"
threshold = 0.9
out_dir = "{}"

[scorer]
kind = "keyword"
keywords = ["protest", "march", "demonstration"]

[ner]
kind = "lexicon"
lexicon = "{}"

[geocoder]
kind = "{geocoder_kind}"
fixtures = "{}"
api_key_env = "PED_TEST_MISSING_KEY"
"#,
        news.display(),
        dir.join("rep_out").display(),
        core_fixture("gazetteer.jsonl").display(),
        core_fixture("geocodes.jsonl").display(),
    );
    let path = dir.join("replicate.toml");
    std::fs::write(&path, config).unwrap();
    path
}

#[test]
fn replicate_mock_matches_golden_csv() {
    let dir = tempfile::tempdir().unwrap();
    let config = replicate_config(dir.path(), &core_fixture("news.jsonl"), "rest");

    // --mock-geocoder must override the configured rest client
    let output = ped()
        .args(["replicate", "--config"])
        .arg(&config)
        .arg("--mock-geocoder")
        .output()
        .unwrap();
    assert_status(&output, 0);

    let got = std::fs::read_to_string(dir.path().join("rep_out/events.csv")).unwrap();
    let golden = std::fs::read_to_string(core_fixture("golden_events.csv")).unwrap();
    assert_eq!(got.trim(), golden.trim());

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("rep_out/report.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["total"], 5);
    assert_eq!(report["kept"], 2);
    let accounted = report["kept"].as_u64().unwrap()
        + report["dropped_outside_window"].as_u64().unwrap()
        + report["dropped_below_threshold"].as_u64().unwrap()
        + report["dropped_no_location"].as_u64().unwrap()
        + report["dropped_geocode_miss"].as_u64().unwrap();
    assert_eq!(accounted, 5);
    assert!(dir.path().join("rep_out/manifest.json").exists());
}

#[test]
fn replicate_without_key_or_mock_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let config = replicate_config(dir.path(), &core_fixture("news.jsonl"), "rest");
    let output = ped()
        .args(["replicate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_status(&output, 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("PED_TEST_MISSING_KEY"), "{stderr}");
}

#[test]
fn replicate_empty_corpus_writes_header_only() {
    let dir = tempfile::tempdir().unwrap();
    let news = dir.path().join("empty_news.jsonl");
    std::fs::write(&news, "").unwrap();
    let config = replicate_config(dir.path(), &news, "mock");
    let output = ped()
        .args(["replicate", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_status(&output, 0);
    let got = std::fs::read_to_string(dir.path().join("rep_out/events.csv")).unwrap();
    assert_eq!(got.trim(), "id,date,city,region,country");
}

#[test]
fn compare_reproduces_reference_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results.csv");
    std::fs::write(
        &results,
        "model,lang,metric,score\n\
         xlm-r-large,pt,doc_macro_f1_2021,85.39\n\
         xlm-r-large,hi,doc_macro_f1_2021,80.77\n\
         xlm-r-large,en,doc_macro_f1_2021,82.30\n",
    )
    .unwrap();

    let out = dir.path().join("deltas.csv");
    let output = ped()
        .args(["compare", "--results"])
        .arg(&results)
        .args(["--baseline", "case21-best", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert_status(&output, 0);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(
        text.contains("pt,doc_macro_f1_2021,85.39,84,+1.39"),
        "{text}"
    );
    assert!(
        text.contains("hi,doc_macro_f1_2021,80.77,78.77,+2.00"),
        "{text}"
    );
    assert!(
        text.contains("en,doc_macro_f1_2021,82.3,84.55,-2.25"),
        "{text}"
    );
}

#[test]
fn compare_unknown_key_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results.csv");
    std::fs::write(
        &results,
        "model,lang,metric,score\nmymodel,fr,doc_macro_f1_2021,50.0\n",
    )
    .unwrap();
    let output = ped()
        .args(["compare", "--results"])
        .arg(&results)
        .args(["--baseline", "case21-best"])
        .output()
        .unwrap();
    assert_status(&output, 3);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("fr"), "{stderr}");
}

#[test]
fn viz_tfidf_emits_grouped_scatter_files() {
    let dir = tempfile::tempdir().unwrap();
    let docs = separable_bilingual_docs(24, 5);
    let en = dir.path().join("docs_en.jsonl");
    let es = dir.path().join("docs_es.jsonl");
    write_docs_jsonl(&en, &docs, "en");
    write_docs_jsonl(&es, &docs, "es");

    let out_dir = dir.path().join("viz_out");
    let config = format!(
        r#"
source = "tfidf"
seed = 5
out_dir = "{}"
perplexity = 5.0

[data.paths]
en = "{}"
es = "{}"
"#,
        out_dir.display(),
        en.display(),
        es.display()
    );
    let config_path = dir.path().join("viz.toml");
    std::fs::write(&config_path, config).unwrap();

    let output = ped()
        .args(["viz", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert_status(&output, 0);

    let rows = |name: &str| {
        std::fs::read_to_string(out_dir.join(name))
            .unwrap()
            .lines()
            .count()
            - 1
    };
    assert_eq!(rows("scatter_en.csv"), 12);
    assert_eq!(rows("scatter_es.csv"), 12);
    assert_eq!(rows("scatter_all.csv"), 24);
    assert!(out_dir.join("scatter_all.png").exists());
    assert!(out_dir.join("features.csv").exists());
    assert!(out_dir.join("manifest.json").exists());
}

#[test]
fn viz_unknown_source_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let docs = separable_bilingual_docs(8, 5);
    let en = dir.path().join("docs_en.jsonl");
    write_docs_jsonl(&en, &docs, "en");
    let config = format!(
        r#"
source = "pca"
out_dir = "{}"
[data.paths]
en = "{}"
"#,
        dir.path().join("out").display(),
        en.display()
    );
    let config_path = dir.path().join("viz.toml");
    std::fs::write(&config_path, config).unwrap();
    let output = ped()
        .args(["viz", "--config"])
        .arg(&config_path)
        .output()
        .unwrap();
    assert_status(&output, 2);
}
