//! Command-line entry points wiring data preparation, base training,
//! scenario execution and projections into reproducible runs.
//!
//! Exit codes: 2 for data or scenario validation errors, 3 for artifact
//! write failures, 4 when a draw asks for more windows than a class holds.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::analysis::{self, AnalysisError};
use crate::checkpoint::{self, CheckpointError};
use crate::dataset::{self, Dataset, DatasetError};
use crate::fedsim::{self, RoundLog, ScenarioConfig, ScenarioMode, SimError};
use crate::model::{self, Arch, FeatureLayer, HyperParams, ModelError, ModelParams};
use crate::rng::Rng;
use crate::synth;

pub const EXIT_DATA: i32 = 2;
pub const EXIT_WRITE: i32 = 3;
pub const EXIT_INSUFFICIENT: i32 = 4;

#[derive(Parser)]
#[command(name = "fedhar", version, about = "Federated continual-learning forgetting simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Ingest a raw UCI HAR directory, split 70/15/15 and fit normalization
    Prepare {
        #[arg(long)]
        uci_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Train the base CNN with best-validation-epoch selection
    TrainBase {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint output path; metrics land next to it
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Epoch budget (the best validation epoch is kept)
        #[arg(long, default_value_t = 50)]
        epochs: usize,
        /// Stop early after this many epochs without validation improvement
        #[arg(long, default_value_t = 10)]
        patience: usize,
    },
    /// Execute a scenario file (baseline or federated)
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Train the two clients one after the other instead of on threads
        #[arg(long, default_value_t = false)]
        sequential: bool,
    },
    /// Project learned features to 2-D/3-D and plot them
    Project {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        method: ProjectionMethod,
        #[arg(long, default_value_t = 200)]
        per_class: usize,
        #[arg(long, value_enum, default_value_t = Layer::Penultimate)]
        layer: Layer,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Write a synthetic dataset in the raw UCI layout
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Per-class example counts (six comma-separated values)
        #[arg(long, value_delimiter = ',')]
        counts: Option<Vec<usize>>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProjectionMethod {
    Pca,
    Tsne,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layer {
    Penultimate,
    Logits,
}

/// A command failure carrying the process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn new(code: i32, message: impl Into<String>) -> Failure {
        Failure {
            code,
            message: message.into(),
        }
    }
}

impl From<DatasetError> for Failure {
    fn from(e: DatasetError) -> Failure {
        let code = match e {
            DatasetError::InsufficientData { .. } => EXIT_INSUFFICIENT,
            _ => EXIT_DATA,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Failure {
        let code = match e {
            SimError::InsufficientData { .. } => EXIT_INSUFFICIENT,
            _ => EXIT_DATA,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<CheckpointError> for Failure {
    fn from(e: CheckpointError) -> Failure {
        Failure::new(EXIT_DATA, e.to_string())
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Failure {
        Failure::new(EXIT_DATA, e.to_string())
    }
}

impl From<AnalysisError> for Failure {
    fn from(e: AnalysisError) -> Failure {
        let code = match e {
            AnalysisError::IoFailure(_) => EXIT_WRITE,
            _ => EXIT_DATA,
        };
        Failure::new(code, e.to_string())
    }
}

fn write_failure(e: std::io::Error) -> Failure {
    Failure::new(EXIT_WRITE, e.to_string())
}

/// Every run writes one of these next to its artifacts; timestamps aside,
/// the listed files are byte-reproducible from the seed.
#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: u64,
    started_at: String,
    finished_at: String,
    artifacts: Vec<String>,
    version: String,
    #[serde(skip_serializing_if = "serde_json::Value::is_null")]
    notes: serde_json::Value,
}

struct ManifestBuilder {
    command: String,
    config: serde_json::Value,
    seed: u64,
    started_at: String,
    notes: serde_json::Value,
}

impl ManifestBuilder {
    fn start(command: &str, seed: u64, config: serde_json::Value) -> ManifestBuilder {
        ManifestBuilder {
            command: command.to_string(),
            config,
            seed,
            started_at: chrono::Utc::now().to_rfc3339(),
            notes: serde_json::Value::Null,
        }
    }

    fn notes(&mut self, notes: serde_json::Value) {
        self.notes = notes;
    }

    fn finish(self, path: &Path, artifacts: &[PathBuf]) -> Result<(), Failure> {
        let manifest = RunManifest {
            command: self.command,
            config: self.config,
            seed: self.seed,
            started_at: self.started_at,
            finished_at: chrono::Utc::now().to_rfc3339(),
            artifacts: artifacts
                .iter()
                .map(|p| p.to_string_lossy().into_owned())
                .collect(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            notes: self.notes,
        };
        std::fs::write(
            path,
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        )
        .map_err(write_failure)
    }
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Prepare { uci_dir, out, seed } => cmd_prepare(&uci_dir, &out, seed),
        Command::TrainBase {
            data,
            out,
            seed,
            epochs,
            patience,
        } => cmd_train_base(&data, &out, seed, epochs, patience),
        Command::Run {
            scenario,
            data,
            checkpoint,
            out,
            sequential,
        } => cmd_run(&scenario, &data, &checkpoint, &out, sequential),
        Command::Project {
            checkpoint,
            data,
            method,
            per_class,
            layer,
            out,
            seed,
        } => cmd_project(&checkpoint, &data, method, per_class, layer, &out, seed),
        Command::SynthData { out, seed, counts } => cmd_synth_data(&out, seed, counts),
    }
}

fn cmd_prepare(uci_dir: &Path, out: &Path, seed: u64) -> Result<(), Failure> {
    let mut manifest = ManifestBuilder::start(
        "prepare",
        seed,
        serde_json::json!({ "uci_dir": uci_dir, "out": out, "seed": seed }),
    );
    let full = dataset::load_uci(uci_dir)?;
    let counts = full.per_class_counts();
    let mut rng = Rng::new(seed);
    let (train, val, test) = dataset::stratified_split(&full, (0.70, 0.15, 0.15), &mut rng)?;
    let stats = dataset::fit_normalizer(&train)?;
    println!(
        "loaded {} windows (per class {:?}); split {}/{}/{}",
        full.len(),
        counts,
        train.len(),
        val.len(),
        test.len()
    );
    let prepared = dataset::PreparedData {
        train,
        val,
        test,
        stats,
    };
    let files = dataset::save_prepared(out, &full, &prepared)?;
    manifest.notes(serde_json::json!({ "per_class_counts": counts }));
    manifest.finish(&out.join("run_manifest.json"), &files)?;
    Ok(())
}

fn cmd_train_base(
    data: &Path,
    out: &Path,
    seed: u64,
    epochs: usize,
    patience: usize,
) -> Result<(), Failure> {
    let mut manifest = ManifestBuilder::start(
        "train-base",
        seed,
        serde_json::json!({
            "data": data, "out": out, "seed": seed,
            "epochs": epochs, "patience": patience,
            "hyperparams": { "lr": 0.01, "batch": 32, "dropout": 0.5 }
        }),
    );
    let prepared = dataset::load_prepared(data)?;
    let (train, val, test) = prepared.normalized();

    let root = Rng::new(seed);
    let init = model::init_params(Arch::PAPER, &mut root.derive(0));
    let (best, best_epoch, trained_epochs) =
        train_with_validation(init, &train, &val, epochs, patience, &root.derive(1))?;

    let train_acc = model::evaluate(&best, &train)?.overall;
    let val_acc = model::evaluate(&best, &val)?.overall;
    let test_acc = model::evaluate(&best, &test)?.overall;
    println!(
        "kept epoch {best_epoch} of {trained_epochs}: train {train_acc:.4} val {val_acc:.4} test {test_acc:.4}"
    );

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(write_failure)?;
        }
    }
    checkpoint::save(&best, out).map_err(|e| match e {
        CheckpointError::Io(io) => write_failure(io),
        other => Failure::new(EXIT_WRITE, other.to_string()),
    })?;

    let metrics_path = out.with_extension("metrics.json");
    let metrics = serde_json::json!({
        "train": train_acc,
        "val": val_acc,
        "test": test_acc,
        "best_epoch": best_epoch,
        "epochs_trained": trained_epochs,
    });
    std::fs::write(
        &metrics_path,
        serde_json::to_string_pretty(&metrics).expect("metrics serialize"),
    )
    .map_err(write_failure)?;

    manifest.notes(serde_json::json!({ "best_epoch": best_epoch }));
    manifest.finish(
        &out.with_extension("manifest.json"),
        &[out.to_path_buf(), metrics_path],
    )?;
    Ok(())
}

/// Up to `epochs` single-epoch passes, keeping the parameters of the best
/// validation epoch; stops when `patience` epochs bring no improvement.
/// Epoch `e` trains with the stream `rng.derive(e)`.
pub fn train_with_validation(
    init: ModelParams,
    train: &Dataset,
    val: &Dataset,
    epochs: usize,
    patience: usize,
    rng: &Rng,
) -> Result<(ModelParams, usize, usize), Failure> {
    let hp = HyperParams {
        epochs: 1,
        ..HyperParams::paper()
    };
    let mut params = init.clone();
    let mut best = init;
    let mut best_acc = f64::NEG_INFINITY;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut trained = 0;
    for epoch in 1..=epochs {
        let (next, losses) = model::train_traced(params, train, &hp, &rng.derive(epoch as u32))?;
        params = next;
        trained = epoch;
        let acc = model::evaluate(&params, val)?.overall;
        println!(
            "epoch {epoch}: loss {:.4} val {:.4}",
            losses.last().copied().unwrap_or(f64::NAN),
            acc
        );
        if acc > best_acc {
            best_acc = acc;
            best = params.clone();
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= patience {
                break;
            }
        }
    }
    if best_epoch == 0 {
        // No epochs ran: the initialization is the result.
        best = params;
    }
    Ok((best, best_epoch, trained))
}

fn cmd_run(
    scenario: &Path,
    data: &Path,
    ckpt: &Path,
    out: &Path,
    sequential: bool,
) -> Result<(), Failure> {
    let text = std::fs::read_to_string(scenario)
        .map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", scenario.display())))?;
    let mut cfg = ScenarioConfig::from_json(&text)?;
    cfg.checkpoint = Some(ckpt.to_path_buf());
    cfg.validate()?;

    let mut manifest = ManifestBuilder::start(
        "run",
        cfg.seed,
        serde_json::to_value(&cfg).expect("config serializes"),
    );

    let prepared = dataset::load_prepared(data)?;
    let (train, _, test) = prepared.normalized();

    let log = match cfg.mode {
        ScenarioMode::Baseline => fedsim::run_baseline(&cfg, &train, &test)?,
        ScenarioMode::Federated => fedsim::run_federated(&cfg, &train, &test, !sequential)?,
    };

    std::fs::create_dir_all(out).map_err(write_failure)?;
    let provenance_path = out.join("provenance.csv");
    std::fs::write(&provenance_path, log.provenance_csv()).map_err(write_failure)?;
    let mut files = analysis::emit_reports(&log, &[], out)?;
    files.push(provenance_path);

    manifest.notes(run_notes(&cfg, &log));
    manifest.finish(&out.join("run_manifest.json"), &files)?;
    println!("{} rounds logged to {}", log.records.len(), out.display());
    Ok(())
}

/// Manifest notes: where client curves are measured, per-round training
/// losses, and the observed server-vs-generalized ratio on the walking
/// classes at the final round (a reported statistic, not an assertion).
fn run_notes(cfg: &ScenarioConfig, log: &RoundLog) -> serde_json::Value {
    let losses: Vec<serde_json::Value> = log
        .records
        .iter()
        .map(|rec| {
            let per_client: serde_json::Map<String, serde_json::Value> = rec
                .losses
                .iter()
                .map(|(id, trace)| (id.to_string(), serde_json::json!(trace)))
                .collect();
            serde_json::json!({ "round": rec.round, "losses": per_client })
        })
        .collect();

    let mut notes = serde_json::json!({
        "client_evaluation_point": fedsim::EVALUATION_POINT,
        "losses": losses,
    });

    if cfg.mode == ScenarioMode::Federated {
        if let Some(last) = log.records.last() {
            let mean_over_walking = |model: fedsim::ModelId| {
                last.evals
                    .iter()
                    .find(|e| e.model == model)
                    .map(|e| (e.per_class[0] + e.per_class[1] + e.per_class[2]) / 3.0)
            };
            if let (Some(server), Some(generalized)) = (
                mean_over_walking(fedsim::ModelId::Server),
                mean_over_walking(fedsim::ModelId::Generalized),
            ) {
                notes["server_vs_generalized_walking_classes"] = serde_json::json!({
                    "round": last.round,
                    "server_mean": server,
                    "generalized_mean": generalized,
                    "ratio": if generalized > 0.0 { server / generalized } else { f64::NAN },
                });
            }
        }
    }
    notes
}

fn cmd_project(
    ckpt: &Path,
    data: &Path,
    method: ProjectionMethod,
    per_class: usize,
    layer: Layer,
    out: &Path,
    seed: u64,
) -> Result<(), Failure> {
    let mut manifest = ManifestBuilder::start(
        "project",
        seed,
        serde_json::json!({
            "checkpoint": ckpt, "data": data, "per_class": per_class,
            "method": match method { ProjectionMethod::Pca => "pca", ProjectionMethod::Tsne => "tsne" },
            "layer": match layer { Layer::Penultimate => "penultimate", Layer::Logits => "logits" },
            "seed": seed,
        }),
    );
    let params = checkpoint::load(ckpt)?;
    let prepared = dataset::load_prepared(data)?;
    let (train, val, test) = prepared.normalized();

    // Sample per-class examples from the whole corpus.
    let mut all = Vec::new();
    for d in [&train, &val, &test] {
        all.extend(d.windows().iter().cloned());
    }
    let union = Dataset::from_windows(all, None);
    let root = Rng::new(seed);
    let sample = dataset::build_common_test(&union, per_class, &mut root.derive(0))?;

    let feature_layer = match layer {
        Layer::Penultimate => FeatureLayer::Penultimate,
        Layer::Logits => FeatureLayer::Logits,
    };
    let features = model::extract_features(&params, &sample, feature_layer)?;
    let labels = model::dataset_labels(&sample);

    let projection = match method {
        ProjectionMethod::Pca => analysis::pca(&features, 3)?,
        ProjectionMethod::Tsne => {
            let mut trng = root.derive(1);
            analysis::tsne(&features, 30.0, 1000, &mut trng)?
        }
    }
    .with_labels(labels);

    std::fs::create_dir_all(out).map_err(write_failure)?;
    let name = projection.method_name();
    let csv_path = out.join(format!("projection_{name}.csv"));
    std::fs::write(&csv_path, analysis::report::projection_csv(&projection))
        .map_err(write_failure)?;
    let svg_path = out.join(format!("projection_{name}.svg"));
    std::fs::write(&svg_path, analysis::report::scatter_svg(&projection))
        .map_err(write_failure)?;

    if let crate::analysis::ProjectionMeta::Pca { explained_variance } = &projection.meta {
        manifest.notes(serde_json::json!({ "explained_variance": explained_variance }));
    } else if let crate::analysis::ProjectionMeta::Tsne { final_kl, .. } = &projection.meta {
        manifest.notes(serde_json::json!({ "final_kl": final_kl }));
    }
    manifest.finish(&out.join("run_manifest.json"), &[csv_path, svg_path])?;
    println!("projected {} rows with {name}", sample.len());
    Ok(())
}

fn cmd_synth_data(out: &Path, seed: u64, counts: Option<Vec<usize>>) -> Result<(), Failure> {
    let counts = match counts {
        Some(v) => {
            if v.len() != 6 {
                return Err(Failure::new(
                    EXIT_DATA,
                    format!("--counts needs six values, got {}", v.len()),
                ));
            }
            let mut arr = [0usize; 6];
            arr.copy_from_slice(&v);
            arr
        }
        None => synth::PAPER_COUNTS,
    };
    synth::generate_uci_layout(out, counts, seed).map_err(write_failure)?;
    println!(
        "wrote synthetic raw layout ({} windows) to {}",
        counts.iter().sum::<usize>(),
        out.display()
    );
    Ok(())
}
