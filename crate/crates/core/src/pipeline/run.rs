use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use image::RgbImage;
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use woundflow_gbm::{fit as fit_gbm, Binner, Ensemble, FeatureSpec, GbmConfig, Value};

use crate::augment::{rebalance, resize_bilinear, AugmentPolicy};
use crate::error::{Error, IoContext, Result};
use crate::explain::{class_activation_map, overlay, CamMethod};
use crate::scalar::{Precision, Scalar};
use crate::tensor::Tensor;
use crate::vision::{
    self, load_model, save_model, train, EpochLoss, LabelSchema, LabeledSample, LossWeights, MultiTaskModel,
    Stage1Models, Task, TrainConfig, WoundVariablePrediction,
};

use super::config::RunConfig;
use super::fusion::{assemble_fused, assemble_true_labels, fused_feature_specs, FusedRow, FusionMode, FUSION_VERSION};
use super::metrics::{aggregate, compute_metrics, metrics_csv_rows, AggregateReport, EvaluationReport};
use super::records::{
    load_manifest, resolve_image, stratum_of, write_manifest, ClinicianSchema, Outcome, WoundRecord,
    CLINICIAN_SCHEMA_VERSION,
};
use super::split::{kfold, stratified_split, SplitIndices};

/// Layout version of the run directory.
pub const RUN_FORMAT_VERSION: u32 = 1;
/// Inference batch size; fixed so stored and recomputed reports agree bit for bit.
pub const PREDICT_BATCH: usize = 64;

pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_FILE: &str = "run.json";
pub const SPLITS_FILE: &str = "splits.json";
pub const REPORT_FILE: &str = "report.json";
pub const TEST_REPORT_FILE: &str = "test_report.json";
pub const CROSSVAL_FILE: &str = "crossval.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const LEAKAGE_FILE: &str = "leakage.json";
pub const TEST_MANIFEST_FILE: &str = "test_manifest.csv";
pub const GBM_FILE: &str = "gbm.json";
pub const BASELINE_GBM_FILE: &str = "gbm_clinician_only.json";
pub const LOG_FILE: &str = "run.log";
pub const MODELS_DIR: &str = "models";
pub const HEATMAP_DIR: &str = "heatmaps";

/// One stage-1 network: its heads and the label its training set is rebalanced on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub name: String,
    pub tasks: Vec<Task>,
    pub rebalance_on: Task,
}

impl ModelSpec {
    pub fn single(task: Task) -> Self {
        Self {
            name: task.name().to_string(),
            tasks: vec![task],
            rebalance_on: task,
        }
    }

    pub fn file_name(&self) -> String {
        format!("{}.wfm", self.name)
    }
}

/// Single-task ulcer type and location networks plus one multi-task network
/// for stage and both necrosis variables.
pub fn stage1_specs() -> Vec<ModelSpec> {
    vec![
        ModelSpec::single(Task::UlcerType),
        ModelSpec::single(Task::Location),
        ModelSpec {
            name: "multitask".into(),
            tasks: vec![Task::Stage, Task::JointNecrosisExposed, Task::LigamentBoneNecrosisExposed],
            rebalance_on: Task::Stage,
        },
    ]
}

/// Deterministic 64-bit seed for a named random stream.
pub fn derive_seed(seed: u64, stream: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(stream.as_bytes()).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// Sample ids seen by each training-side computation.
#[derive(Debug, Clone, Default)]
pub struct LeakageAudit {
    touched: BTreeMap<String, BTreeSet<String>>,
}

/// Augmented copies carry `#aug<k>` suffixes; the audit tracks source ids.
fn source_id(id: &str) -> &str {
    id.split_once("#aug").map_or(id, |(base, _)| base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeakageReport {
    /// Number of distinct samples each computation touched.
    pub touched: BTreeMap<String, usize>,
    pub test_samples: usize,
    /// Test ids found per computation; empty when clean.
    pub intersections: BTreeMap<String, Vec<String>>,
    pub clean: bool,
}

impl LeakageAudit {
    pub fn record<'a>(&mut self, stage: &str, ids: impl IntoIterator<Item = &'a str>) {
        let set = self.touched.entry(stage.to_string()).or_default();
        set.extend(ids.into_iter().map(|id| source_id(id).to_string()));
    }

    pub fn merge(&mut self, other: LeakageAudit) {
        for (stage, ids) in other.touched {
            self.touched.entry(stage).or_default().extend(ids);
        }
    }

    pub fn touched(&self, stage: &str) -> Option<&BTreeSet<String>> {
        self.touched.get(stage)
    }

    pub fn report(&self, test_ids: &BTreeSet<String>) -> LeakageReport {
        let intersections: BTreeMap<String, Vec<String>> = self
            .touched
            .iter()
            .map(|(stage, ids)| (stage.clone(), ids.intersection(test_ids).cloned().collect::<Vec<_>>()))
            .filter(|(_, hits)| !hits.is_empty())
            .collect();
        LeakageReport {
            touched: self.touched.iter().map(|(k, v)| (k.clone(), v.len())).collect(),
            test_samples: test_ids.len(),
            clean: intersections.is_empty(),
            intersections,
        }
    }

    pub fn check(&self, test_ids: &BTreeSet<String>) -> Result<LeakageReport> {
        let report = self.report(test_ids);
        if let Some((stage, ids)) = report.intersections.iter().next() {
            return Err(Error::Leakage {
                stage: stage.clone(),
                ids: ids.clone(),
            });
        }
        Ok(report)
    }
}

/// Timestamped stage log; the only place timestamps are written.
pub struct RunLog {
    path: PathBuf,
    file: std::fs::File,
}

impl RunLog {
    pub fn create(path: &Path) -> Result<Self> {
        let file = std::fs::File::create(path).at(path)?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
        })
    }

    pub fn line(&mut self, msg: &str) -> Result<()> {
        let t = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
        writeln!(self.file, "[{}.{:03}] {msg}", t.as_secs(), t.subsec_millis()).at(&self.path)?;
        info!("{msg}");
        Ok(())
    }

    /// Runs a named stage; failures are logged and wrapped with the stage name.
    pub fn stage<R>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.line(&format!("stage {name}: start"))?;
        let start = Instant::now();
        match f(self) {
            Ok(r) => {
                self.line(&format!("stage {name}: done in {:.2}s", start.elapsed().as_secs_f64()))?;
                Ok(r)
            }
            Err(e) => {
                self.line(&format!("stage {name}: failed: {e}"))?;
                Err(Error::Stage {
                    stage: name.to_string(),
                    source: Box::new(e),
                })
            }
        }
    }
}

/// `[C, H, W]` tensor in `[0, 1]` from an RGB image.
pub fn rgb_to_tensor<T: Scalar>(img: &RgbImage) -> Tensor<T> {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        T::lit(raw[p * 3 + c] as f64 / 255.0)
    })
}

/// Reads an image as `[channels, H, W]` (1 = grey, 3 = RGB) resized to `size`.
pub fn load_image_tensor<T: Scalar>(path: &Path, channels: usize, size: [usize; 2]) -> Result<Tensor<T>> {
    let img = image::open(path).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let t = match channels {
        3 => rgb_to_tensor(&img.to_rgb8()),
        1 => {
            let g = img.to_luma8();
            let (w, h) = g.dimensions();
            Tensor::from_fn(&[1, h as usize, w as usize], |i| T::lit(g.as_raw()[i] as f64 / 255.0))
        }
        c => return Err(Error::Invalid(format!("images can be read with 1 or 3 channels, not {c}"))),
    };
    resize_bilinear(&t, size)
}

fn load_inputs<T: Scalar>(records: &[WoundRecord], root: &Path, config: &RunConfig) -> Result<Vec<Tensor<T>>> {
    records
        .par_iter()
        .map(|r| load_image_tensor(&resolve_image(root, &r.image_path), config.backbone.channels, config.backbone.input_size))
        .collect()
}

fn labeled<T: Scalar>(records: &[WoundRecord], inputs: &[Tensor<T>], idx: &[usize]) -> Vec<LabeledSample<T>> {
    idx.iter()
        .map(|&i| LabeledSample {
            id: records[i].sample_id.clone(),
            input: inputs[i].clone(),
            labels: records[i].labels,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub training_samples: usize,
    pub curve: Vec<EpochLoss>,
}

/// Trains one stage-1 network: rebalancing augmentation on the training
/// samples, normalization and fitting on the result, snapshot selection on
/// `val`. Every training-side id is recorded in `audit`.
#[allow(clippy::too_many_arguments)]
pub fn train_stage1<T: Scalar>(
    spec: &ModelSpec,
    schema: &LabelSchema,
    config: &RunConfig,
    train_set: &[LabeledSample<T>],
    val_set: &[LabeledSample<T>],
    stream: &str,
    audit: &mut LeakageAudit,
) -> Result<(MultiTaskModel<T>, TrainingSummary)> {
    let ids = |s: &[LabeledSample<T>]| s.iter().map(|x| x.id.clone()).collect::<Vec<_>>();
    let samples = if config.augment.rebalance {
        let policy = AugmentPolicy {
            seed: derive_seed(config.seed ^ config.augment.seed, &format!("{stream}/augment")),
            ..config.augment.clone()
        };
        audit.record("augmentation", ids(train_set).iter().map(String::as_str));
        rebalance(train_set, |s| s.labels.get(spec.rebalance_on), &policy)?
    } else {
        train_set.to_vec()
    };
    audit.record("normalization", ids(&samples).iter().map(String::as_str));
    audit.record("stage1_fit", ids(&samples).iter().map(String::as_str));
    audit.record("stage1_selection", ids(val_set).iter().map(String::as_str));
    let model_seed = derive_seed(config.seed, &format!("{stream}/init"));
    let model = MultiTaskModel::build(schema, &config.backbone, &spec.tasks, model_seed)?;
    let train_config = TrainConfig {
        seed: derive_seed(config.seed ^ config.train.seed, &format!("{stream}/shuffle")),
        ..config.train.clone()
    };
    let trained = train(model, &samples, val_set, &train_config, &LossWeights::uniform())?;
    let mut model = trained.model;
    // Saved models hold f32 parameters; evaluating the quantized model keeps
    // stored reports reproducible from the files.
    model.quantize_f32();
    Ok((
        model,
        TrainingSummary {
            best_epoch: trained.best_epoch,
            best_val_loss: trained.best_val_loss,
            training_samples: samples.len(),
            curve: trained.curve,
        },
    ))
}

/// Stage-1 predictions for `idx`, in `PREDICT_BATCH` chunks.
pub fn predict_indices<T: Scalar>(
    models: &Stage1Models<T>,
    inputs: &[Tensor<T>],
    idx: &[usize],
) -> Result<Vec<WoundVariablePrediction>> {
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(PREDICT_BATCH) {
        let items: Vec<&Tensor<T>> = chunk.iter().map(|&i| &inputs[i]).collect();
        out.extend(models.predict_batch(&Tensor::stack(&items)?)?);
    }
    Ok(out)
}

/// Per-task reports over the records that carry each label.
pub fn stage1_reports(
    records: &[&WoundRecord],
    predictions: &[WoundVariablePrediction],
    schema: &LabelSchema,
) -> Result<BTreeMap<String, EvaluationReport>> {
    Task::ALL
        .iter()
        .map(|&task| {
            let (truth, pred): (Vec<usize>, Vec<usize>) = records
                .iter()
                .zip(predictions)
                .filter_map(|(r, p)| r.labels.get(task).map(|t| (t, p.get(task).index)))
                .unzip();
            let classes: Vec<String> = schema.classes(task).into_iter().map(String::from).collect();
            Ok((task.name().to_string(), compute_metrics(&truth, &pred, &classes)?))
        })
        .collect()
}

fn outcome_classes() -> Vec<String> {
    Outcome::CLASSES.iter().map(|s| s.to_string()).collect()
}

/// Heal/no-heal report: `P(hospitalization) ≥ 0.5` predicts hospitalization.
pub fn outcome_report(truth: &[Outcome], probs: &[f64]) -> Result<EvaluationReport> {
    let t: Vec<usize> = truth.iter().map(|o| o.index()).collect();
    let p: Vec<usize> = probs.iter().map(|&p| usize::from(p >= 0.5)).collect();
    compute_metrics(&t, &p, &outcome_classes())
}

fn outcome_rows(rows: &[FusedRow]) -> (Vec<Vec<Value>>, Vec<Outcome>) {
    rows.iter()
        .filter_map(|r| r.outcome.map(|o| (r.features.clone(), o)))
        .unzip()
}

fn as_labels(outcomes: &[Outcome]) -> Vec<f64> {
    outcomes.iter().map(|o| o.index() as f64).collect()
}

/// Fits a GBM on labelled rows, binning on the training rows only.
pub fn fit_outcome_model(
    specs: &[FeatureSpec],
    train_rows: &[Vec<Value>],
    train_y: &[Outcome],
    valid: Option<(&[Vec<Value>], &[Outcome])>,
    config: &GbmConfig,
) -> Result<Ensemble> {
    let binner = Binner::fit(specs, train_rows, config.max_bins)?;
    let data = binner.transform(train_rows)?;
    let y = as_labels(train_y);
    let valid_data = match valid {
        Some((rows, vy)) if config.early_stop_rounds.is_some() && !rows.is_empty() => {
            Some((binner.transform(rows)?, as_labels(vy)))
        }
        _ => None,
    };
    Ok(fit_gbm(&binner, &data, &y, valid_data.as_ref().map(|(d, y)| (d, y.as_slice())), config)?)
}

/// Everything recomputable from the run directory and the test manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestEvaluation {
    pub stage1: BTreeMap<String, EvaluationReport>,
    pub heal: EvaluationReport,
    pub clinician_only: EvaluationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub stratified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossvalReport {
    pub folds: usize,
    pub pool_samples: usize,
    /// Stage-1 per-task reports on each held-out fold, with mean ± std.
    pub stage1: BTreeMap<String, AggregateReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub split: SplitSummary,
    pub fusion_mode: FusionMode,
    pub use_true_labels: bool,
    pub fused_width: usize,
    pub stage1_val: BTreeMap<String, EvaluationReport>,
    pub test: TestEvaluation,
    /// Macro-F1 of the fused model minus that of the clinician-only model, on test.
    pub lift_macro_f1: f64,
    pub crossval: CrossvalReport,
    pub training: BTreeMap<String, TrainingSummary>,
    pub gbm_trees: usize,
    pub baseline_gbm_trees: usize,
    pub gbm_warnings: Vec<String>,
    pub leakage: LeakageReport,
}

/// Provenance needed to evaluate a run directory standalone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub run_format_version: u32,
    pub seed: u64,
    pub precision: Precision,
    pub label_schema: LabelSchema,
    pub label_schema_hash: String,
    pub clinician_schema: ClinicianSchema,
    pub clinician_schema_version: u32,
    pub fusion_version: u32,
    pub fusion_mode: FusionMode,
    pub use_true_labels: bool,
    pub model_format_version: u32,
    pub gbm_format_version: u32,
    pub models: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitIds {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub stratified: bool,
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).at(path)
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = std::fs::read_to_string(path).at(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn fuse(
    records: &[&WoundRecord],
    predictions: Option<&[WoundVariablePrediction]>,
    config: &RunConfig,
    schema: &LabelSchema,
    clinician: &ClinicianSchema,
) -> Result<Vec<FusedRow>> {
    let owned: Vec<WoundRecord> = records.iter().map(|r| (*r).clone()).collect();
    match (config.fusion.use_true_labels, predictions) {
        (false, Some(p)) => assemble_fused(&owned, p, config.fusion.mode, schema, clinician),
        _ => assemble_true_labels(&owned, config.fusion.mode, schema, clinician),
    }
}

struct Prepared<T> {
    records: Vec<WoundRecord>,
    inputs: Vec<Tensor<T>>,
    strata: Vec<Option<usize>>,
    split: SplitIndices,
}

fn prepare<T: Scalar>(config: &RunConfig, log: &mut RunLog, schema: &LabelSchema, clinician: &ClinicianSchema) -> Result<Prepared<T>> {
    let root = config.data.resolved_image_root();
    let records = log.stage("load", |log| {
        let records = load_manifest(&config.data.manifest, &root, schema, clinician)?;
        log.line(&format!("{} records from {}", records.len(), config.data.manifest.display()))?;
        Ok(records)
    })?;
    let strata = records
        .iter()
        .map(|r| stratum_of(r, &config.split.stratify_on))
        .collect::<Result<Vec<_>>>()?;
    let split = log.stage("split", |log| {
        let s = stratified_split(&strata, config.split.fractions, derive_seed(config.seed, "split"))?;
        log.line(&format!("train {} / val {} / test {}", s.train.len(), s.val.len(), s.test.len()))?;
        if s.train.is_empty() || s.val.is_empty() || s.test.is_empty() {
            return Err(Error::EmptySplit("a partition".into()));
        }
        Ok(s)
    })?;
    let inputs = log.stage("images", |_| load_inputs::<T>(&records, &root, config))?;
    Ok(Prepared {
        records,
        inputs,
        strata,
        split,
    })
}

struct CrossvalOutcome {
    report: CrossvalReport,
    /// Out-of-fold predictions keyed by record index.
    oof: BTreeMap<usize, WoundVariablePrediction>,
    audit: LeakageAudit,
}

fn crossval<T: Scalar>(config: &RunConfig, data: &Prepared<T>, schema: &LabelSchema) -> Result<CrossvalOutcome> {
    let mut pool: Vec<usize> = data.split.train.iter().chain(&data.split.val).copied().collect();
    pool.sort_unstable();
    let pool_strata: Vec<Option<usize>> = pool.iter().map(|&i| data.strata[i]).collect();
    let folds = kfold(&pool_strata, config.split.folds, derive_seed(config.seed, "kfold"))?;
    let [tf, vf, _] = config.split.fractions;
    let inner_val = vf / (tf + vf);
    let results: Vec<Result<(Vec<(usize, WoundVariablePrediction)>, BTreeMap<String, EvaluationReport>, LeakageAudit)>> = folds
        .par_iter()
        .enumerate()
        .map(|(k, (fit_local, held_local))| {
            let fit_idx: Vec<usize> = fit_local.iter().map(|&j| pool[j]).collect();
            let held: Vec<usize> = held_local.iter().map(|&j| pool[j]).collect();
            let fit_strata: Vec<Option<usize>> = fit_idx.iter().map(|&i| data.strata[i]).collect();
            let inner = stratified_split(&fit_strata, [1.0 - inner_val, inner_val, 0.0], derive_seed(config.seed, &format!("fold{k}/inner")))?;
            let tr: Vec<usize> = inner.train.iter().map(|&j| fit_idx[j]).collect();
            let va: Vec<usize> = inner.val.iter().map(|&j| fit_idx[j]).collect();
            let train_set = labeled(&data.records, &data.inputs, &tr);
            let val_set = labeled(&data.records, &data.inputs, &va);
            let mut audit = LeakageAudit::default();
            let models = stage1_specs()
                .iter()
                .map(|spec| {
                    train_stage1(spec, schema, config, &train_set, &val_set, &format!("fold{k}/{}", spec.name), &mut audit)
                        .map(|(m, _)| m)
                })
                .collect::<Result<Vec<_>>>()?;
            let models = Stage1Models::from_models(models)?;
            let preds = predict_indices(&models, &data.inputs, &held)?;
            let held_records: Vec<&WoundRecord> = held.iter().map(|&i| &data.records[i]).collect();
            let reports = stage1_reports(&held_records, &preds, schema)?;
            Ok((held.into_iter().zip(preds).collect(), reports, audit))
        })
        .collect();
    let mut oof = BTreeMap::new();
    let mut per_task: BTreeMap<String, Vec<EvaluationReport>> = BTreeMap::new();
    let mut audit = LeakageAudit::default();
    for r in results {
        let (preds, reports, a) = r?;
        oof.extend(preds);
        for (task, rep) in reports {
            per_task.entry(task).or_default().push(rep);
        }
        audit.merge(a);
    }
    let stage1 = per_task
        .into_iter()
        .map(|(task, reps)| Ok((task, aggregate(reps)?)))
        .collect::<Result<BTreeMap<_, _>>>()?;
    Ok(CrossvalOutcome {
        report: CrossvalReport {
            folds: config.split.folds,
            pool_samples: pool.len(),
            stage1,
        },
        oof,
        audit,
    })
}

/// Cross-validation only: stage-1 per-task reports over the train+val pool.
pub fn run_crossval(config: &RunConfig, out: &Path) -> Result<CrossvalReport> {
    config.validate()?;
    std::fs::create_dir_all(out).at(out)?;
    let mut log = RunLog::create(&out.join(LOG_FILE))?;
    let result = match config.precision {
        Precision::F32 => crossval_typed::<f32>(config, out, &mut log),
        Precision::F64 => crossval_typed::<f64>(config, out, &mut log),
    };
    if let Err(e) = &result {
        log.line(&format!("run failed: {e}"))?;
    }
    result
}

fn crossval_typed<T: Scalar>(config: &RunConfig, out: &Path, log: &mut RunLog) -> Result<CrossvalReport> {
    let schema = LabelSchema::default();
    let clinician = ClinicianSchema::default();
    std::fs::write(out.join(CONFIG_FILE), config.to_toml()?).at(out.join(CONFIG_FILE))?;
    let data = prepare::<T>(config, log, &schema, &clinician)?;
    let cv = log.stage("crossval", |_| crossval(config, &data, &schema))?;
    let test_ids: BTreeSet<String> = data.split.test.iter().map(|&i| data.records[i].sample_id.clone()).collect();
    cv.audit.check(&test_ids)?;
    write_json(&out.join(CROSSVAL_FILE), &cv.report)?;
    Ok(cv.report)
}

/// Full two-stage run; writes the run directory at `out`.
pub fn run_pipeline(config: &RunConfig, out: &Path) -> Result<RunReport> {
    config.validate()?;
    std::fs::create_dir_all(out).at(out)?;
    let mut log = RunLog::create(&out.join(LOG_FILE))?;
    let result = match config.precision {
        Precision::F32 => run_typed::<f32>(config, out, &mut log),
        Precision::F64 => run_typed::<f64>(config, out, &mut log),
    };
    match &result {
        Ok(_) => log.line("run complete")?,
        Err(e) => log.line(&format!("run failed: {e}"))?,
    }
    result
}

fn run_typed<T: Scalar>(config: &RunConfig, out: &Path, log: &mut RunLog) -> Result<RunReport> {
    let schema = LabelSchema::default();
    let clinician = ClinicianSchema::default();
    std::fs::write(out.join(CONFIG_FILE), config.to_toml()?).at(out.join(CONFIG_FILE))?;
    let data = prepare::<T>(config, log, &schema, &clinician)?;
    let ids_of = |idx: &[usize]| idx.iter().map(|&i| data.records[i].sample_id.clone()).collect::<Vec<_>>();
    let test_ids: BTreeSet<String> = ids_of(&data.split.test).into_iter().collect();
    write_json(
        &out.join(SPLITS_FILE),
        &SplitIds {
            train: ids_of(&data.split.train),
            val: ids_of(&data.split.val),
            test: ids_of(&data.split.test),
            stratified: data.split.stratified,
        },
    )?;

    let cv = log.stage("crossval", |_| crossval(config, &data, &schema))?;
    let mut audit = cv.audit;

    let specs = stage1_specs();
    let (models, training) = log.stage("stage1", |log| {
        let train_set = labeled(&data.records, &data.inputs, &data.split.train);
        let val_set = labeled(&data.records, &data.inputs, &data.split.val);
        let mut models = Vec::new();
        let mut training = BTreeMap::new();
        for spec in &specs {
            let (m, summary) = train_stage1(spec, &schema, config, &train_set, &val_set, &format!("final/{}", spec.name), &mut audit)?;
            log.line(&format!(
                "{}: best epoch {} val loss {:.5} on {} samples",
                spec.name, summary.best_epoch, summary.best_val_loss, summary.training_samples
            ))?;
            training.insert(spec.name.clone(), summary);
            models.push(m);
        }
        Ok((Stage1Models::from_models(models)?, training))
    })?;
    let models_dir = out.join(MODELS_DIR);
    std::fs::create_dir_all(&models_dir).at(&models_dir)?;
    for (spec, m) in specs.iter().zip(&models.models) {
        save_model(m, &models_dir.join(spec.file_name()))?;
    }

    let refs = |idx: &[usize]| idx.iter().map(|&i| &data.records[i]).collect::<Vec<&WoundRecord>>();
    let (train_r, val_r, test_r) = (refs(&data.split.train), refs(&data.split.val), refs(&data.split.test));
    let val_preds = predict_indices(&models, &data.inputs, &data.split.val)?;
    let test_preds = predict_indices(&models, &data.inputs, &data.split.test)?;
    let stage1_val = stage1_reports(&val_r, &val_preds, &schema)?;

    let oof = |idx: &[usize]| idx.iter().map(|i| cv.oof[i].clone()).collect::<Vec<_>>();
    let (train_oof, val_oof) = (oof(&data.split.train), oof(&data.split.val));
    let (fused_train, fused_val, fused_test) = log.stage("fusion", |_| {
        Ok((
            fuse(&train_r, Some(&train_oof), config, &schema, &clinician)?,
            fuse(&val_r, Some(&val_oof), config, &schema, &clinician)?,
            fuse(&test_r, Some(&test_preds), config, &schema, &clinician)?,
        ))
    })?;

    let fused_specs = fused_feature_specs(config.fusion.mode, &schema, &clinician);
    let (gbm, baseline) = log.stage("gbm", |log| {
        let (tr_x, tr_y) = outcome_rows(&fused_train);
        let (va_x, va_y) = outcome_rows(&fused_val);
        if tr_x.is_empty() {
            return Err(Error::EmptySplit("outcome-labelled training".into()));
        }
        let train_ids: Vec<&str> = fused_train.iter().filter(|r| r.outcome.is_some()).map(|r| r.sample_id.as_str()).collect();
        audit.record("binning", train_ids.iter().copied());
        audit.record("gbm_fit", train_ids.iter().copied());
        if config.gbm.early_stop_rounds.is_some() {
            audit.record("gbm_early_stopping", fused_val.iter().map(|r| r.sample_id.as_str()));
        }
        let gbm = fit_outcome_model(&fused_specs, &tr_x, &tr_y, Some((&va_x, &va_y)), &config.gbm)?;
        let strip = |rows: &[Vec<Value>]| rows.iter().map(|r| r[r.len() - clinician.len()..].to_vec()).collect::<Vec<_>>();
        let baseline = fit_outcome_model(&clinician.feature_specs(), &strip(&tr_x), &tr_y, Some((&strip(&va_x), &va_y)), &config.gbm)?;
        log.line(&format!("fused GBM {} trees, clinician-only GBM {} trees", gbm.trees.len(), baseline.trees.len()))?;
        Ok((gbm, baseline))
    })?;
    std::fs::write(out.join(GBM_FILE), gbm.to_json()?).at(out.join(GBM_FILE))?;
    std::fs::write(out.join(BASELINE_GBM_FILE), baseline.to_json()?).at(out.join(BASELINE_GBM_FILE))?;

    let leakage = log.stage("leakage_audit", |_| audit.check(&test_ids))?;
    write_json(&out.join(LEAKAGE_FILE), &leakage)?;

    // absolute image paths so the manifest resolves from inside the run dir
    let image_root = config.data.resolved_image_root();
    let image_root = image_root.canonicalize().unwrap_or(image_root);
    let test_manifest: Vec<WoundRecord> = test_r
        .iter()
        .map(|r| WoundRecord {
            image_path: resolve_image(&image_root, &r.image_path).to_string_lossy().into_owned(),
            ..(*r).clone()
        })
        .collect();
    write_manifest(&out.join(TEST_MANIFEST_FILE), &test_manifest, &schema, &clinician)?;

    let test = log.stage("evaluate", |_| evaluate_fused(&test_r, &test_preds, &fused_test, &gbm, &baseline, &schema))?;
    let info = RunInfo {
        run_format_version: RUN_FORMAT_VERSION,
        seed: config.seed,
        precision: config.precision,
        label_schema_hash: schema.hash(),
        label_schema: schema.clone(),
        clinician_schema: clinician.clone(),
        clinician_schema_version: CLINICIAN_SCHEMA_VERSION,
        fusion_version: FUSION_VERSION,
        fusion_mode: config.fusion.mode,
        use_true_labels: config.fusion.use_true_labels,
        model_format_version: vision::FORMAT_VERSION,
        gbm_format_version: woundflow_gbm::FORMAT_VERSION,
        models: specs.iter().map(ModelSpec::file_name).collect(),
    };
    write_json(&out.join(RUN_FILE), &info)?;

    log.stage("heatmaps", |_| {
        write_heatmaps(config, &models, &data.inputs, &data.records, &data.split.test, &out.join(HEATMAP_DIR))
    })?;

    let report = RunReport {
        seed: config.seed,
        split: SplitSummary {
            train: data.split.train.len(),
            val: data.split.val.len(),
            test: data.split.test.len(),
            stratified: data.split.stratified,
        },
        fusion_mode: config.fusion.mode,
        use_true_labels: config.fusion.use_true_labels,
        fused_width: fused_specs.len(),
        stage1_val,
        lift_macro_f1: test.heal.macro_f1 - test.clinician_only.macro_f1,
        test,
        crossval: cv.report,
        training,
        gbm_trees: gbm.trees.len(),
        baseline_gbm_trees: baseline.trees.len(),
        gbm_warnings: gbm.warning.iter().chain(&baseline.warning).cloned().collect(),
        leakage,
    };
    write_json(&out.join(REPORT_FILE), &report)?;
    write_json(&out.join(TEST_REPORT_FILE), &report.test)?;
    write_json(&out.join(CROSSVAL_FILE), &report.crossval)?;
    write_metrics_csv(&out.join(METRICS_FILE), &report)?;
    Ok(report)
}

fn evaluate_fused(
    records: &[&WoundRecord],
    predictions: &[WoundVariablePrediction],
    fused: &[FusedRow],
    gbm: &Ensemble,
    baseline: &Ensemble,
    schema: &LabelSchema,
) -> Result<TestEvaluation> {
    let stage1 = stage1_reports(records, predictions, schema)?;
    let (x, y) = outcome_rows(fused);
    let n_clin = baseline.n_features();
    let clin: Vec<Vec<Value>> = x.iter().map(|r| r[r.len() - n_clin..].to_vec()).collect();
    let (heal_p, base_p) = if x.is_empty() {
        (Vec::new(), Vec::new())
    } else {
        (gbm.predict_rows(&x)?, baseline.predict_rows(&clin)?)
    };
    Ok(TestEvaluation {
        stage1,
        heal: outcome_report(&y, &heal_p)?,
        clinician_only: outcome_report(&y, &base_p)?,
    })
}

fn write_metrics_csv(path: &Path, report: &RunReport) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["model", "split", "class", "precision", "recall", "f1", "support"])?;
    for (task, r) in &report.test.stage1 {
        for row in metrics_csv_rows(task, "test", r) {
            w.write_record(&row)?;
        }
    }
    for row in metrics_csv_rows("heal_fused", "test", &report.test.heal) {
        w.write_record(&row)?;
    }
    for row in metrics_csv_rows("heal_clinician_only", "test", &report.test.clinician_only) {
        w.write_record(&row)?;
    }
    w.flush().at(path)?;
    Ok(())
}

fn write_heatmaps<T: Scalar>(
    config: &RunConfig,
    models: &Stage1Models<T>,
    inputs: &[Tensor<T>],
    records: &[WoundRecord],
    test: &[usize],
    dir: &Path,
) -> Result<()> {
    let task = config.data.heatmap_task;
    let Some(model) = models.models.iter().find(|m| m.tasks().contains(&task)) else {
        return Err(Error::UnknownTask(task.to_string()));
    };
    if model.backbone.is_none() || config.data.heatmap_samples == 0 {
        return Ok(());
    }
    std::fs::create_dir_all(dir).at(dir)?;
    let root = config.data.resolved_image_root();
    let mut w = csv::Writer::from_path(dir.join("index.csv"))?;
    w.write_record(["sample_id", "task", "class", "label", "file"])?;
    for &i in test.iter().take(config.data.heatmap_samples) {
        let r = &records[i];
        let h = class_activation_map(model, &inputs[i], task, None, CamMethod::GradCam)?;
        let img = image::open(resolve_image(&root, &r.image_path))?.to_rgb8();
        let file = format!("{}.png", r.sample_id);
        overlay(&h, &img, &dir.join(&file))?;
        w.write_record([r.sample_id.as_str(), task.name(), &h.class.to_string(), model.schema.label(task, h.class), &file])?;
    }
    w.flush().at(dir.join("index.csv"))?;
    Ok(())
}

/// Recomputes the test evaluation from a run directory on any manifest with
/// the run's schema; on the run's own test manifest it equals the stored report.
pub fn evaluate_run(run_dir: &Path, manifest: &Path, image_root: &Path) -> Result<TestEvaluation> {
    let info: RunInfo = read_json(&run_dir.join(RUN_FILE))?;
    let config_path = run_dir.join(CONFIG_FILE);
    let config = RunConfig::parse(&std::fs::read_to_string(&config_path).at(&config_path)?, &[])?;
    match info.precision {
        Precision::F32 => evaluate_typed::<f32>(&info, &config, run_dir, manifest, image_root),
        Precision::F64 => evaluate_typed::<f64>(&info, &config, run_dir, manifest, image_root),
    }
}

/// Loads the three stage-1 networks of a run.
pub fn load_run_models<T: Scalar>(run_dir: &Path) -> Result<(RunInfo, Stage1Models<T>)> {
    let info: RunInfo = read_json(&run_dir.join(RUN_FILE))?;
    let models = info
        .models
        .iter()
        .map(|f| load_model::<T>(&run_dir.join(MODELS_DIR).join(f), &info.label_schema))
        .collect::<Result<Vec<_>>>()?;
    Ok((info, Stage1Models::from_models(models)?))
}

pub fn load_ensemble(path: &Path) -> Result<Ensemble> {
    Ok(Ensemble::from_json(&std::fs::read_to_string(path).at(path)?)?)
}

fn evaluate_typed<T: Scalar>(
    info: &RunInfo,
    config: &RunConfig,
    run_dir: &Path,
    manifest: &Path,
    image_root: &Path,
) -> Result<TestEvaluation> {
    let (_, models) = load_run_models::<T>(run_dir)?;
    let gbm = load_ensemble(&run_dir.join(GBM_FILE))?;
    let baseline = load_ensemble(&run_dir.join(BASELINE_GBM_FILE))?;
    let records = load_manifest(manifest, image_root, &info.label_schema, &info.clinician_schema)?;
    let inputs = load_inputs::<T>(&records, image_root, config)?;
    let idx: Vec<usize> = (0..records.len()).collect();
    let preds = predict_indices(&models, &inputs, &idx)?;
    let refs: Vec<&WoundRecord> = records.iter().collect();
    let fused = fuse(&refs, Some(&preds), config, &info.label_schema, &info.clinician_schema)?;
    evaluate_fused(&refs, &preds, &fused, &gbm, &baseline, &info.label_schema)
}

/// Stage-1 variables plus hospitalization risk for one sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub wound_variables: WoundVariablePrediction,
    pub hospitalization_probability: f64,
    pub predicted_outcome: String,
}

/// Predicts every record of a manifest with a trained run.
pub fn predict_run(run_dir: &Path, manifest: &Path, image_root: &Path) -> Result<Vec<PredictionRecord>> {
    let info: RunInfo = read_json(&run_dir.join(RUN_FILE))?;
    let config_path = run_dir.join(CONFIG_FILE);
    let config = RunConfig::parse(&std::fs::read_to_string(&config_path).at(&config_path)?, &[])?;
    match info.precision {
        Precision::F32 => predict_typed::<f32>(&info, &config, run_dir, manifest, image_root),
        Precision::F64 => predict_typed::<f64>(&info, &config, run_dir, manifest, image_root),
    }
}

fn predict_typed<T: Scalar>(
    info: &RunInfo,
    config: &RunConfig,
    run_dir: &Path,
    manifest: &Path,
    image_root: &Path,
) -> Result<Vec<PredictionRecord>> {
    let records = load_manifest(manifest, image_root, &info.label_schema, &info.clinician_schema)?;
    predict_records::<T>(info, config, run_dir, &records, image_root)
}

fn predict_records<T: Scalar>(
    info: &RunInfo,
    config: &RunConfig,
    run_dir: &Path,
    records: &[WoundRecord],
    image_root: &Path,
) -> Result<Vec<PredictionRecord>> {
    let (_, models) = load_run_models::<T>(run_dir)?;
    let gbm = load_ensemble(&run_dir.join(GBM_FILE))?;
    let inputs = load_inputs::<T>(records, image_root, config)?;
    let idx: Vec<usize> = (0..records.len()).collect();
    let preds = predict_indices(&models, &inputs, &idx)?;
    let refs: Vec<&WoundRecord> = records.iter().collect();
    let prediction_config = RunConfig {
        fusion: super::config::FusionConfig {
            use_true_labels: false,
            ..config.fusion
        },
        ..config.clone()
    };
    let fused = fuse(&refs, Some(&preds), &prediction_config, &info.label_schema, &info.clinician_schema)?;
    let rows: Vec<Vec<Value>> = fused.iter().map(|r| r.features.clone()).collect();
    let probs = if rows.is_empty() { Vec::new() } else { gbm.predict_rows(&rows)? };
    Ok(records
        .iter()
        .zip(preds)
        .zip(probs)
        .map(|((r, p), prob)| PredictionRecord {
            sample_id: r.sample_id.clone(),
            wound_variables: p,
            hospitalization_probability: prob,
            predicted_outcome: Outcome::from_index(usize::from(prob >= 0.5)).name().to_string(),
        })
        .collect())
}

/// Predicts one image with its clinician values, given as raw strings in
/// clinician-schema order (empty means missing).
pub fn predict_image(run_dir: &Path, image: &Path, clinician: &[String]) -> Result<PredictionRecord> {
    let info: RunInfo = read_json(&run_dir.join(RUN_FILE))?;
    let config_path = run_dir.join(CONFIG_FILE);
    let config = RunConfig::parse(&std::fs::read_to_string(&config_path).at(&config_path)?, &[])?;
    if clinician.len() != info.clinician_schema.len() {
        return Err(Error::Invalid(format!(
            "expected {} clinician values ({}), got {}",
            info.clinician_schema.len(),
            info.clinician_schema.variables.iter().map(|v| v.name.as_str()).collect::<Vec<_>>().join(", "),
            clinician.len()
        )));
    }
    let values = clinician
        .iter()
        .enumerate()
        .map(|(i, raw)| info.clinician_schema.parse(i, raw))
        .collect::<Result<Vec<_>>>()?;
    let record = WoundRecord {
        sample_id: image.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        image_path: image.to_string_lossy().into_owned(),
        labels: Default::default(),
        clinician: values,
        outcome: None,
    };
    let records = [record];
    let root = Path::new("");
    let mut out = match info.precision {
        Precision::F32 => predict_records::<f32>(&info, &config, run_dir, &records, root)?,
        Precision::F64 => predict_records::<f64>(&info, &config, run_dir, &records, root)?,
    };
    Ok(out.remove(0))
}
