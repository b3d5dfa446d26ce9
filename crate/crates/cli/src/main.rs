use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use woundflow_core::explain::{class_activation_map, overlay, CamMethod};
use woundflow_core::pipeline::{
    env_overrides, evaluate_run, load_image_tensor, predict_image, predict_run, run_crossval, run_pipeline,
    RunConfig, FusionMode, REPORT_FILE, TEST_MANIFEST_FILE,
};
use woundflow_core::synthgen::{generate, write_dataset, SynthConfig, MANIFEST_FILE};
use woundflow_core::vision::{load_model, LabelSchema, Task};
use woundflow_core::Error;

#[derive(Parser)]
#[command(name = "woundflow", version, about = "Two-stage wound assessment: image classifiers and heal/no-heal boosting")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Run config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Stage-2 encoding of the wound-variable predictions.
    #[arg(long)]
    mode: Option<FusionMode>,
    /// Feed recorded wound-variable labels to stage 2 instead of predictions.
    #[arg(long)]
    use_true_labels: bool,
    /// Extra `key.path=value` overrides, applied after WOUNDFLOW_ variables.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic wound dataset.
    Synth {
        /// Generator config (TOML); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Number of samples, overriding the config.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Train both stages and write a run directory.
    Train(RunArgs),
    /// Stage-1 cross-validation over the train and validation partitions.
    Crossval(RunArgs),
    /// Recompute test reports from a run directory.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        /// Manifest to evaluate; defaults to the run's test manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Root for relative image paths; defaults to the manifest's directory.
        #[arg(long)]
        image_root: Option<PathBuf>,
        /// Also write the reports to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predict the wound variables and hospitalization risk.
    Predict {
        #[arg(long)]
        run: PathBuf,
        /// A single image; pair with --clinician.
        #[arg(long, conflicts_with = "manifest", requires = "clinician")]
        image: Option<PathBuf>,
        /// The 16 clinician values as one CSV row in schema order.
        #[arg(long)]
        clinician: Option<String>,
        /// Predict every row of a manifest instead.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        image_root: Option<PathBuf>,
    },
    /// Write a class-activation overlay for one image.
    Heatmap {
        /// Model file (.wfm).
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value = "ulcer_type")]
        task: String,
        /// Target class label; defaults to the predicted class.
        #[arg(long)]
        class: Option<String>,
        #[arg(long, default_value = "grad-cam", value_parser = ["grad-cam", "cam"])]
        method: String,
        /// Output PNG.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize)]
struct ErrorReport {
    error: ErrorBody,
}

#[derive(Serialize)]
struct ErrorBody {
    kind: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    stage: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    details: Vec<String>,
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Manifest(_) => "manifest",
        Error::Io { .. } => "io",
        Error::Leakage { .. } => "leakage",
        Error::SchemaMismatch { .. } | Error::LabelOutsideSchema { .. } | Error::UnknownTask(_) => "schema",
        Error::ModelFormat(_) => "model_format",
        Error::EmptySplit(_) => "empty_split",
        Error::Stage { .. } => "stage",
        _ => "runtime",
    }
}

fn error_report(e: &Error) -> ErrorReport {
    let (stage, inner) = match e {
        Error::Stage { stage, source } => (Some(stage.clone()), source.as_ref()),
        other => (None, other),
    };
    let details = match inner {
        Error::Config(errors) => errors.clone(),
        Error::Leakage { ids, .. } => ids.clone(),
        _ => Vec::new(),
    };
    ErrorReport {
        error: ErrorBody {
            kind: kind(inner),
            message: e.to_string(),
            stage,
            details,
        },
    }
}

fn print_json<S: Serialize>(value: &S) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn load_run_config(args: &RunArgs) -> Result<RunConfig, Error> {
    let mut overrides = env_overrides(std::env::vars());
    for kv in &args.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(vec![format!("--set `{kv}` is not KEY=VALUE")]))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = args.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(mode) = args.mode {
        overrides.push(("fusion.mode".into(), format!("\"{}\"", mode)));
    }
    if args.use_true_labels {
        overrides.push(("fusion.use_true_labels".into(), "true".into()));
    }
    RunConfig::load(&args.config, &overrides)
}

fn manifest_root(manifest: &Path, image_root: Option<PathBuf>) -> PathBuf {
    image_root.unwrap_or_else(|| manifest.parent().map(Path::to_path_buf).unwrap_or_default())
}

fn synth(config: Option<PathBuf>, seed: Option<u64>, out: &Path, samples: Option<usize>) -> Result<(), Error> {
    let mut c = match config {
        Some(path) => {
            let text = std::fs::read_to_string(&path).map_err(|source| Error::Io { path: path.clone(), source })?;
            toml::from_str::<SynthConfig>(&text).map_err(|e| Error::Config(vec![e.to_string()]))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        c.seed = seed;
    }
    if let Some(n) = samples {
        c.n_samples = n;
    }
    let ds = generate(&c)?;
    write_dataset(&ds, out)?;
    print_json(&serde_json::json!({
        "samples": ds.samples.len(),
        "manifest": out.join(MANIFEST_FILE),
    }))
}

fn heatmap(model: &Path, image: &Path, task: &str, class: Option<String>, method: &str, out: &Path) -> Result<(), Error> {
    let schema = LabelSchema::default();
    let model = load_model::<f32>(model, &schema)?;
    let task = Task::from_name(task)?;
    let class = class.map(|c| schema.index_of(task, &c)).transpose()?;
    let method = if method == "cam" { CamMethod::Cam } else { CamMethod::GradCam };
    let input = load_image_tensor::<f32>(image, model.config.channels, model.config.input_size)?;
    let h = class_activation_map(&model, &input, task, class, method)?;
    let rgb = image::open(image)?.to_rgb8();
    overlay(&h, &rgb, out)?;
    print_json(&serde_json::json!({
        "task": task.name(),
        "class": schema.label(task, h.class),
        "out": out,
    }))
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Invalid(e.to_string()))?;
    }
    match cli.command {
        Command::Synth {
            config,
            seed,
            out,
            samples,
        } => synth(config, seed, &out, samples),
        Command::Train(args) => {
            let config = load_run_config(&args)?;
            let report = run_pipeline(&config, &args.out)?;
            print_json(&serde_json::json!({
                "run": args.out,
                "report": args.out.join(REPORT_FILE),
                "heal_macro_f1": report.test.heal.macro_f1,
                "clinician_only_macro_f1": report.test.clinician_only.macro_f1,
                "lift_macro_f1": report.lift_macro_f1,
                "leakage_clean": report.leakage.clean,
            }))
        }
        Command::Crossval(args) => {
            let config = load_run_config(&args)?;
            print_json(&run_crossval(&config, &args.out)?)
        }
        Command::Evaluate {
            run,
            manifest,
            image_root,
            out,
        } => {
            let manifest = manifest.unwrap_or_else(|| run.join(TEST_MANIFEST_FILE));
            let root = manifest_root(&manifest, image_root);
            let report = evaluate_run(&run, &manifest, &root)?;
            if let Some(out) = out {
                let text = serde_json::to_string_pretty(&report)? + "\n";
                std::fs::write(&out, text).map_err(|source| Error::Io { path: out.clone(), source })?;
            }
            print_json(&report)
        }
        Command::Predict {
            run,
            image,
            clinician,
            manifest,
            image_root,
        } => match (image, manifest) {
            (Some(image), None) => {
                let row = clinician.unwrap_or_default();
                let values: Vec<String> = row.split(',').map(|s| s.trim().to_string()).collect();
                print_json(&predict_image(&run, &image, &values)?)
            }
            (None, Some(manifest)) => {
                let root = manifest_root(&manifest, image_root);
                print_json(&predict_run(&run, &manifest, &root)?)
            }
            _ => Err(Error::Invalid("predict needs --image with --clinician, or --manifest".into())),
        },
        Command::Heatmap {
            model,
            image,
            task,
            class,
            method,
            out,
        } => heatmap(&model, &image, &task, class, &method, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = error_report(&e);
            eprintln!("{}", serde_json::to_string(&report).unwrap_or_else(|_| e.to_string()));
            ExitCode::from(if matches!(e, Error::Config(_)) { 2 } else { 1 })
        }
    }
}
