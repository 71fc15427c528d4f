mod common;

use std::collections::BTreeMap;
use std::fs;

use orthovar::pipeline::manifest::{sha256_file, Manifest, RunLock};
use orthovar::pipeline::report::MetricsFile;
use orthovar::pipeline::{run_pipeline, run_until, PipelineError, RunConfig, Stage, ABSOLUTE, RELATIVE_OBV};

fn metrics(config: &RunConfig) -> MetricsFile {
    serde_json::from_slice(&fs::read(config.out.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn single_k_gives_single_row_curves_and_full_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 30, &["m"], &common::Planted::default());
    let config = RunConfig {
        k_min: 1,
        k_max: 1,
        ..fx.config("run")
    };
    run_pipeline(&config).unwrap();
    let m = metrics(&config);
    let abs = m.runs[0].set(ABSOLUTE).unwrap();
    assert_eq!(abs.per_k.len(), 1);
    assert_eq!(abs.per_k[0].overall_accuracy, Some(1.0));
    assert_eq!(abs.per_k[0].so_accuracy, Some(1.0));
    let csv = fs::read_to_string(config.out.join("curves.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
}

#[test]
fn curves_have_one_row_per_k_and_model() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 40, &["alpha", "beta"], &common::Planted::default());
    let config = RunConfig {
        k_max: 4,
        ..fx.config("run")
    };
    run_pipeline(&config).unwrap();
    let mut reader = csv::Reader::from_path(config.out.join("curves.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4 * 2);
    assert_eq!(&rows[0][0], "alpha");
    assert_eq!(&rows[4][0], "beta");
    for plot in ["accuracy_by_k.svg", "variant_purity_by_k.svg", "dtag_purity_by_k.svg", "ld_by_k.svg"] {
        let svg = fs::read_to_string(config.out.join("figures").join(plot)).unwrap();
        assert!(svg.contains("<svg"));
        assert!(svg.contains("alpha") && svg.contains("beta"), "{plot} lacks a series label");
    }
    let table = fs::read_to_string(config.out.join("tables/alpha").join(format!("{RELATIVE_OBV}_clusters.md"))).unwrap();
    assert!(table.contains("## k = 4"));
    let edits = fs::read_to_string(config.out.join("tables/alpha").join(format!("{RELATIVE_OBV}_edits.md"))).unwrap();
    assert!(edits.contains(" -> "));
}

#[test]
fn manifest_hashes_every_output() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 30, &["m"], &common::Planted::default());
    let config = RunConfig {
        k_max: 3,
        ..fx.config("run")
    };
    run_pipeline(&config).unwrap();
    let manifest: Manifest = serde_json::from_slice(&fs::read(config.out.join("manifest.json")).unwrap()).unwrap();
    for required in ["variants.jsonl", "metrics.json", "curves.csv", "sets/m/absolute.jsonl", "clusters/m/absolute.jsonl"] {
        assert!(manifest.outputs.contains_key(required), "{required} missing from manifest");
    }
    for (rel, hash) in &manifest.outputs {
        assert_eq!(&sha256_file(&config.out.join(rel)).unwrap(), hash, "{rel}");
    }
    assert_eq!(manifest.seeds["master"], config.seed);
    assert!(manifest.seeds.contains_key("kmeans.k03"));
    assert_eq!(manifest.inputs.iter().filter(|i| i.role == "dataset").count(), 1);
    let recorded: RunConfig = serde_json::from_value(manifest.config).unwrap();
    assert_eq!(recorded, config);
}

#[test]
fn changed_key_recomputes_only_downstream_stages() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 30, &["m"], &common::Planted::default());
    let config = RunConfig {
        k_max: 3,
        ..fx.config("run")
    };
    let first = run_pipeline(&config).unwrap();
    assert!(first.cached.is_empty());

    let again = run_pipeline(&config).unwrap();
    assert!(again.executed.is_empty(), "{:?}", again.executed);

    let wider = RunConfig { k_max: 4, ..config.clone() };
    let summary = run_pipeline(&wider).unwrap();
    assert_eq!(summary.cached, vec!["validate", "mutate", "build-sets.m"]);
    assert_eq!(summary.executed, vec!["cluster.m", "evaluate", "report"]);

    let other_direction = RunConfig {
        diff_direction: orthovar::embedding::DiffDirection::VarMinusStd,
        ..wider.clone()
    };
    let summary = run_pipeline(&other_direction).unwrap();
    assert_eq!(summary.cached, vec!["validate", "mutate"]);
}

#[test]
fn tampered_output_is_rebuilt() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 20, &["m"], &common::Planted::default());
    let config = RunConfig {
        k_max: 2,
        ..fx.config("run")
    };
    run_pipeline(&config).unwrap();
    fs::write(config.out.join("variants.jsonl"), "").unwrap();
    let summary = run_pipeline(&config).unwrap();
    assert!(summary.executed.contains(&"mutate".to_string()));
}

#[test]
fn stages_can_stop_early() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 20, &["m"], &common::Planted::default());
    let config = RunConfig {
        embeddings: Vec::new(),
        ..fx.config("run")
    };
    let summary = run_until(&config, Stage::Mutate).unwrap();
    assert_eq!(summary.executed, vec!["validate", "mutate"]);
    assert_eq!(summary.corpus.unwrap().after_char_limit, 20);
    assert!(config.out.join("variants.jsonl").is_file());
    assert!(!config.out.join("metrics.json").exists());
    let err = run_until(&config, Stage::BuildSets).unwrap_err();
    assert_eq!(err.exit_code(), 2);
}

#[test]
fn char_limit_and_rejections_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dps = common::datapoints(10);
    dps[3].context = format!("{} {}", dps[3].observed, "x".repeat(600));
    dps[5].context = "the word is missing here".into();
    let dataset = tmp.path().join("data.jsonl");
    common::write_dataset(&dataset, &dps);
    let config = RunConfig {
        dataset,
        out: tmp.path().join("run"),
        ..RunConfig::default()
    };
    let summary = run_until(&config, Stage::Validate).unwrap();
    let corpus = summary.corpus.unwrap();
    assert_eq!((corpus.loaded, corpus.rejected, corpus.after_char_limit), (9, 1, 8));
    let rejections = fs::read_to_string(config.out.join("corpus/rejections.jsonl")).unwrap();
    assert!(rejections.contains("d0005"));
}

#[test]
fn bad_embedding_record_names_the_record() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 10, &["m"], &common::Planted::default());
    let path = &fx.embeddings[0].path;
    let text = fs::read_to_string(path).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let mut record: serde_json::Value = serde_json::from_str(&lines[3]).unwrap();
    record["layers"][0][0] = serde_json::json!([1.0, 2.0]);
    let bad_id = record["id"].as_str().unwrap().to_string();
    lines[3] = record.to_string();
    fs::write(path, lines.join("\n")).unwrap();
    let err = run_pipeline(&fx.config("run")).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    match &err {
        PipelineError::Stage { stage, ids, .. } => {
            assert_eq!(*stage, Stage::BuildSets);
            assert_eq!(ids, &vec![bad_id]);
        }
        other => panic!("unexpected error {other}"),
    }
}

#[test]
fn k_beyond_set_size_is_a_stage_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 5, &["m"], &common::Planted::default());
    let config = RunConfig {
        k_max: 8,
        ..fx.config("run")
    };
    let err = run_pipeline(&config).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert!(err.to_string().contains("fewer than k_max"), "{err}");
}

#[test]
fn locked_run_directory_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 10, &["m"], &common::Planted::default());
    let config = fx.config("run");
    let _held = RunLock::acquire(&config.out).unwrap();
    let err = run_pipeline(&config).unwrap_err();
    assert!(matches!(err, PipelineError::Locked(_)));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn type_vectors_enable_coherency() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = common::planted_fixture(tmp.path(), 40, &["m"], &common::Planted::default());
    let words: Vec<(String, Vec<f32>)> = common::datapoints(40)
        .into_iter()
        .flat_map(|d| [d.standard, d.observed])
        .enumerate()
        .map(|(i, w)| (w, vec![1.0, (i % 3) as f32]))
        .collect::<BTreeMap<_, _>>()
        .into_iter()
        .collect();
    let tv_path = tmp.path().join("vectors.txt");
    orthovar::embedding::TypeVectors::from_pairs(words)
        .write(fs::File::create(&tv_path).unwrap())
        .unwrap();
    let config = RunConfig {
        k_max: 2,
        type_vectors: Some(tv_path),
        ..fx.config("run")
    };
    run_pipeline(&config).unwrap();
    let m = metrics(&config);
    assert!(m.semantic_coherency);
    let obv = m.runs[0].set(RELATIVE_OBV).unwrap();
    let c = &obv.per_k[0].clusters[0];
    assert_eq!(c.coherency_in_vocab, 40);
    let score = c.semantic_coherency.unwrap();
    assert!((-1.0..=1.0).contains(&score));
}
