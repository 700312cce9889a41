use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evoclass::{cmd_eval, cmd_inspect, cmd_report, cmd_synth, cmd_train, CliError, RunConfig};
use evoclass_core::data::SynthConfig;

/// Train CNN image classifiers by neuroevolution.
#[derive(Debug, Parser)]
#[command(name = "evoclass", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic, separable grayscale dataset and its manifest.
    Synth {
        /// JSON synthetic-data config; flags below override its fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        size: Option<usize>,
        /// Images per class in each split.
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
    },
    /// Run the evolution loop described by a JSON run config.
    ///
    /// Writes <out_dir>/report.csv with one row per generation and the
    /// columns generation,best,mean,worst,parent,test_acc_max,wall_ms:
    /// best/mean/worst child training reward, the parent's reward, the
    /// highest test accuracy over children and parent (empty when the test
    /// split was not evaluated that generation) and wall time in
    /// milliseconds. Decimal points are always '.'.
    ///
    /// Checkpoints go to <out_dir>/checkpoint. An existing checkpoint there
    /// is resumed unless --fresh is given. EVOCLASS_WORKERS overrides
    /// run.workers.
    Train {
        /// JSON run config; see --print-default-config for every field.
        #[arg(long, required_unless_present = "print_default_config")]
        config: Option<PathBuf>,
        /// Print the default run config and exit.
        #[arg(long)]
        print_default_config: bool,
        /// Start from scratch even if the output directory holds a checkpoint.
        #[arg(long)]
        fresh: bool,
    },
    /// Accuracy and confusion matrix of a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Summarize a checkpoint.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Turn a run's report.csv into two-column series files.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            config,
            out,
            seed,
            size,
            per_class,
            classes,
        } => {
            let mut synth = match config {
                Some(path) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
                    let de = &mut serde_json::Deserializer::from_str(&text);
                    serde_path_to_error::deserialize::<_, SynthConfig>(de)
                        .map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?
                }
                None => SynthConfig::default(),
            };
            if let Some(seed) = seed {
                synth.seed = seed;
            }
            if let Some(size) = size {
                synth.image_size = size;
            }
            if let Some(n) = per_class {
                synth.per_class_train = n;
                synth.per_class_test = n;
            }
            if let Some(k) = classes {
                synth.num_classes = k;
            }
            let manifest = cmd_synth(&synth, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Train {
            config,
            print_default_config,
            fresh,
        } => {
            if print_default_config {
                println!("{}", RunConfig::default().to_json());
                return Ok(());
            }
            let config = RunConfig::load(&config.expect("required by clap"))?;
            let summary = cmd_train(&config, !fresh)?;
            if let Some(g) = summary.resumed_from {
                println!("resumed at generation {g}");
            }
            println!(
                "generations {}{} -> {}",
                summary.generations_done,
                if summary.early_stopped { " (early stop)" } else { "" },
                summary.out_dir.display()
            );
        }
        Command::Eval {
            checkpoint,
            manifest,
            split,
        } => print!("{}", cmd_eval(&checkpoint, &manifest, &split)?),
        Command::Inspect { checkpoint } => print!("{}", cmd_inspect(&checkpoint)?),
        Command::Report { run } => {
            for path in cmd_report(&run)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
