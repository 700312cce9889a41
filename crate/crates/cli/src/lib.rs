//! Commands behind the `evoclass` binary: `synth`, `train`, `eval`,
//! `inspect` and `report`.
//!
//! Exit codes: 0 success, 2 configuration or validation failure, 3 I/O or
//! runtime failure.

pub mod config;
pub mod report;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use evoclass_core::data::{generate_synthetic, load_checkpoint, load_dataset, Checkpoint, SynthConfig, MANIFEST_FILE};
use evoclass_core::evolution::{evolve, EvolveOptions, GenerationSink};
use evoclass_core::fitness::{confusion_matrix, evaluate_model, DatasetFitness};
use evoclass_core::model::{glorot_init, param_count, unpack, LayerShape};
use evoclass_core::{executor, Error};
use thiserror::Error;

pub use config::RunConfig;
use report::{CheckpointSink, CsvSink, ReportTable, CHECKPOINT_DIR, REPORT_FILE, SERIES_DIR};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            CliError::Config(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

/// Writes a synthetic dataset and returns the manifest path.
pub fn cmd_synth(config: &SynthConfig, out: &Path) -> Result<PathBuf, CliError> {
    config.validate()?;
    generate_synthetic(config, out)?;
    Ok(out.join(MANIFEST_FILE))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub generations_done: u64,
    pub early_stopped: bool,
    pub out_dir: PathBuf,
    pub resumed_from: Option<u64>,
}

/// Trains per `config`; with `resume`, continues from `<out_dir>/checkpoint`
/// when one exists.
pub fn cmd_train(config: &RunConfig, resume: bool) -> Result<TrainSummary, CliError> {
    config.validate()?;
    let workers = executor::resolve_workers(config.effective_workers()?);
    let out_dir = &config.run.out_dir;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;

    let manifest = match (&config.data.manifest, &config.data.synth) {
        (Some(manifest), _) => manifest.clone(),
        (None, Some(synth)) => cmd_synth(synth, &out_dir.join("data"))?,
        (None, None) => unreachable!("validated"),
    };
    let (train, test) = load_dataset(&manifest, &config.arch)?;
    let fitness = DatasetFitness::new(&config.arch, &train, Some(&test))?;

    let checkpoint_dir = out_dir.join(CHECKPOINT_DIR);
    let resumed = if resume && checkpoint_dir.join(evoclass_core::data::CHECKPOINT_HEADER_FILE).exists() {
        let checkpoint = load_checkpoint(&checkpoint_dir)?;
        if checkpoint.header.spec != config.arch {
            return Err(CliError::Config("checkpoint architecture differs from arch".into()));
        }
        if checkpoint.header.es_config.master_seed != config.es.master_seed {
            return Err(CliError::Config("checkpoint master_seed differs from es.master_seed".into()));
        }
        Some(checkpoint)
    } else {
        None
    };
    let (initial, start_generation) = match &resumed {
        Some(c) => (c.genome()?, c.header.generation),
        None => (glorot_init(&config.arch, config.es.master_seed)?, 0),
    };

    let mut csv = CsvSink::open(&out_dir.join(REPORT_FILE), resumed.as_ref().map(|_| start_generation))?;
    let mut checkpoints = CheckpointSink::new(
        checkpoint_dir,
        config.run.checkpoint_interval,
        config.arch.clone(),
        config.es.clone(),
    );
    let mut sinks: [&mut dyn GenerationSink; 2] = [&mut csv, &mut checkpoints];
    let outcome = evolve(
        initial,
        &config.es,
        &fitness,
        EvolveOptions {
            workers,
            eval_interval: config.run.eval_interval,
            early_stop_patience: config.run.early_stop_patience,
            start_generation,
        },
        &mut sinks,
    )?;
    Ok(TrainSummary {
        generations_done: outcome.generations_done,
        early_stopped: outcome.early_stopped,
        out_dir: out_dir.clone(),
        resumed_from: resumed.map(|_| start_generation),
    })
}

/// Accuracy and confusion matrix of a checkpoint on one split.
pub fn cmd_eval(checkpoint_dir: &Path, manifest: &Path, split: &str) -> Result<String, CliError> {
    let checkpoint = load_checkpoint(checkpoint_dir)?;
    let spec = &checkpoint.header.spec;
    let model = unpack(&checkpoint.genome()?, spec)?;
    let (train, test) = load_dataset(manifest, spec)?;
    let data = match split {
        "train" => train,
        "test" => test,
        other => return Err(CliError::Config(format!("unknown split {other:?} (expected train or test)"))),
    };
    let result = evaluate_model(&model, &data)?;
    let matrix = confusion_matrix(&model, &data)?;

    let mut out = String::new();
    let acc = result.reward as f64 / result.total as f64;
    writeln!(out, "accuracy {acc:.4}").unwrap();
    writeln!(out, "correct {}/{} ({} split)", result.reward, result.total, data.split_name()).unwrap();
    writeln!(out, "confusion (rows: label, columns: predicted)").unwrap();
    write!(out, "{:>6}", "").unwrap();
    for c in 0..spec.num_classes {
        write!(out, "{c:>6}").unwrap();
    }
    out.push('\n');
    for (label, row) in matrix.iter().enumerate() {
        write!(out, "{label:>6}").unwrap();
        for count in row {
            write!(out, "{count:>6}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
}

impl Stats {
    pub fn of(values: impl IntoIterator<Item = f32>) -> Option<Stats> {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Stats {
            count: values.len(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean,
            std: var.sqrt(),
        })
    }
}

impl std::fmt::Display for Stats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "n={} min={:.6} max={:.6} mean={:.6} std={:.6}",
            self.count, self.min, self.max, self.mean, self.std
        )
    }
}

/// Weight and bias statistics of a checkpoint, split by parameter kind.
pub fn checkpoint_stats(checkpoint: &Checkpoint) -> Result<(Stats, Stats), CliError> {
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    let mut rest = checkpoint.weights.as_slice();
    for shape in checkpoint.header.spec.layer_shapes() {
        let (w, tail) = rest.split_at(shape.weight_count());
        let (b, tail) = tail.split_at(shape.bias_count());
        weights.extend_from_slice(w);
        biases.extend_from_slice(b);
        rest = tail;
    }
    let none = || CliError::Config("architecture has no parameters".into());
    Ok((Stats::of(weights).ok_or_else(none)?, Stats::of(biases).ok_or_else(none)?))
}

pub fn cmd_inspect(checkpoint_dir: &Path) -> Result<String, CliError> {
    let checkpoint = load_checkpoint(checkpoint_dir)?;
    let header = &checkpoint.header;
    let spec = &header.spec;
    let mut out = String::new();
    writeln!(out, "format_version {}", header.format_version).unwrap();
    writeln!(out, "generation {}", header.generation).unwrap();
    writeln!(out, "created_utc {}", header.created_utc).unwrap();
    writeln!(out, "param_count {}", param_count(spec)?).unwrap();
    writeln!(out, "spec {}", serde_json::to_string(spec).expect("spec serializes")).unwrap();
    writeln!(out, "es {}", serde_json::to_string(&header.es_config).expect("config serializes")).unwrap();
    let (weights, biases) = checkpoint_stats(&checkpoint)?;
    writeln!(out, "weights {weights}").unwrap();
    writeln!(out, "biases {biases}").unwrap();
    writeln!(out, "layers").unwrap();
    for (i, shape) in spec.layer_shapes().iter().enumerate() {
        let kind = match shape {
            LayerShape::Conv {
                in_channels,
                out_channels,
                stride,
                padding,
            } => format!("conv {in_channels}->{out_channels} s{stride} p{padding}"),
            LayerShape::Linear {
                in_features,
                out_features,
            } => format!("affine {in_features}->{out_features}"),
        };
        writeln!(out, "  {i}: {kind} params={}", shape.param_count()).unwrap();
    }
    Ok(out)
}

/// Writes best/mean/worst/test-accuracy series under `<run>/series`.
pub fn cmd_report(run_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let table = ReportTable::read(&run_dir.join(REPORT_FILE))?;
    report::write_series(&table, &run_dir.join(SERIES_DIR))
}
