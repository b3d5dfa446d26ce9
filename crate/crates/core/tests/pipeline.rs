use std::path::Path;

use woundflow_core::pipeline::{
    evaluate_run, predict_run, read_json, run_crossval, run_pipeline, RunConfig, RunInfo, TestEvaluation,
    TEST_MANIFEST_FILE,
};
use woundflow_core::synthgen::{generate, write_dataset, SynthConfig, MANIFEST_FILE};
use woundflow_core::vision::{BackboneConfig, BlockSpec};
use woundflow_core::Error;

fn dataset(dir: &Path, n: usize) {
    let ds = generate(&SynthConfig {
        n_samples: n,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    write_dataset(&ds, dir).unwrap();
}

fn small_config(manifest: &Path) -> RunConfig {
    let mut c = RunConfig {
        seed: 11,
        ..RunConfig::default()
    };
    c.data.manifest = manifest.to_path_buf();
    c.data.heatmap_samples = 3;
    c.backbone = BackboneConfig {
        blocks: vec![BlockSpec::new(4), BlockSpec::new(8)],
        embedding_dim: 8,
        ..BackboneConfig::desk()
    };
    c.train.epochs = 2;
    c.train.optimizer.learning_rate = 1.0;
    c.gbm.num_trees = 20;
    c.split.folds = 2;
    c
}

#[test]
fn end_to_end_run_is_reproducible_and_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data, 160);
    let config = small_config(&data.join(MANIFEST_FILE));

    let out = tmp.path().join("run_a");
    let report = run_pipeline(&config, &out).unwrap();
    assert!(report.leakage.clean);
    assert_eq!(report.fused_width, 21);
    assert_eq!(report.split.train + report.split.val + report.split.test, 160);
    assert_eq!(report.crossval.pool_samples, report.split.train + report.split.val);
    assert_eq!(report.crossval.stage1["ulcer_type"].folds.len(), 2);
    for f in [
        "config.toml",
        "run.json",
        "splits.json",
        "models/ulcer_type.wfm",
        "models/location.wfm",
        "models/multitask.wfm",
        "gbm.json",
        "gbm_clinician_only.json",
        "report.json",
        "test_report.json",
        "crossval.json",
        "metrics.csv",
        "leakage.json",
        "test_manifest.csv",
        "heatmaps/index.csv",
        "run.log",
    ] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let heatmaps = std::fs::read_dir(out.join("heatmaps")).unwrap().count();
    assert_eq!(heatmaps, 4);

    let stored: TestEvaluation = read_json(&out.join("test_report.json")).unwrap();
    let recomputed = evaluate_run(&out, &out.join(TEST_MANIFEST_FILE), &data).unwrap();
    assert_eq!(recomputed, stored);

    let preds = predict_run(&out, &out.join(TEST_MANIFEST_FILE), &data).unwrap();
    assert_eq!(preds.len(), report.split.test);
    assert!(preds.iter().all(|p| (0.0..=1.0).contains(&p.hospitalization_probability)));

    let info: RunInfo = read_json(&out.join("run.json")).unwrap();
    assert_eq!(info.seed, 11);

    let again = tmp.path().join("run_b");
    run_pipeline(&config, &again).unwrap();
    for f in ["report.json", "test_report.json", "splits.json", "gbm.json", "models/multitask.wfm", "metrics.csv"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn true_label_fusion_and_crossval_only() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data, 120);
    let mut config = small_config(&data.join(MANIFEST_FILE));
    config.fusion.use_true_labels = true;
    config.data.heatmap_samples = 0;
    let report = run_pipeline(&config, &tmp.path().join("run")).unwrap();
    assert!(report.use_true_labels);

    let cv = run_crossval(&config, &tmp.path().join("cv")).unwrap();
    assert_eq!(cv.folds, 2);
    assert_eq!(cv.stage1.len(), 5);
}

#[test]
fn missing_image_fails_in_named_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    dataset(&data, 60);
    std::fs::remove_file(data.join("images/s00007.png")).unwrap();
    let config = small_config(&data.join(MANIFEST_FILE));
    let out = tmp.path().join("run");
    let err = run_pipeline(&config, &out).unwrap_err();
    assert!(matches!(err, Error::Stage { .. }), "{err}");
    let log = std::fs::read_to_string(out.join("run.log")).unwrap();
    assert!(log.contains("failed"));
}
