use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use evoclass::report::{ReportTable, CHECKPOINT_DIR, REPORT_FILE};
use evoclass::RunConfig;
use evoclass_core::data::{save_checkpoint, Checkpoint, SynthConfig, CHECKPOINT_WEIGHTS_FILE};
use evoclass_core::model::{glorot_init, param_count, ConvLayerSpec};
use evoclass_core::{ArchitectureSpec, EsConfig, Genome};

fn evoclass(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_evoclass"))
        .args(args)
        .env_remove("EVOCLASS_WORKERS")
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn small_config(out: &Path, generations: u64) -> RunConfig {
    let mut config = RunConfig::default();
    config.arch = ArchitectureSpec {
        input_shape: [1, 8, 8],
        conv_layers: vec![ConvLayerSpec::new(4, 2, 1)],
        fc_sizes: vec![8],
        num_classes: 4,
    };
    config.es.n_offspring = 10;
    config.es.max_generations = generations;
    config.es.master_seed = 3;
    config.data.synth = Some(SynthConfig {
        image_size: 8,
        per_class_train: 3,
        per_class_test: 2,
        ..SynthConfig::default()
    });
    config.run.workers = 2;
    config.run.checkpoint_interval = 2;
    config.run.eval_interval = 1;
    config.run.out_dir = out.to_path_buf();
    config
}

fn write_config(dir: &Path, config: &RunConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, config.to_json()).unwrap();
    path
}

fn train(config_path: &Path) -> Output {
    let out = evoclass(&["train", "--config", config_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    out
}

fn reward_columns(run: &Path) -> Vec<Vec<String>> {
    let table = ReportTable::read(&run.join(REPORT_FILE)).unwrap();
    table.rows.iter().map(|r| r[..6].to_vec()).collect()
}

#[test]
fn synth_writes_default_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("data");
    let o = evoclass(&["synth", "--out", out.to_str().unwrap(), "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest = fs::read_to_string(out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().next(), Some("path,label,split"));
    assert_eq!(manifest.lines().count(), 161);
    assert_eq!(fs::read_dir(out.join("train")).unwrap().count(), 80);
    assert_eq!(fs::read_dir(out.join("test")).unwrap().count(), 80);
}

#[test]
fn synth_rejects_zero_images_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = evoclass(&["synth", "--out", dir.path().to_str().unwrap(), "--per-class", "0"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("per_class"), "{}", stderr(&o));
}

#[test]
fn train_rejects_unknown_key_with_its_path() {
    let dir = tempfile::tempdir().unwrap();
    let mut value: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
    value["run"]["workerz"] = 2.into();
    let path = dir.path().join("bad.json");
    fs::write(&path, value.to_string()).unwrap();
    let o = evoclass(&["train", "--config", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run") && stderr(&o).contains("workerz"), "{}", stderr(&o));
}

#[test]
fn train_rejects_invalid_values() {
    let dir = tempfile::tempdir().unwrap();
    let mut config = small_config(&dir.path().join("run"), 3);
    config.es.n_offspring = 7;
    let o = evoclass(&["train", "--config", write_config(dir.path(), &config).to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("n_offspring"), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_an_io_error() {
    let o = evoclass(&["train", "--config", "/nonexistent/evoclass.json"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn print_default_config_round_trips() {
    let o = evoclass(&["train", "--print-default-config"]);
    assert!(o.status.success());
    assert_eq!(RunConfig::from_json(&stdout(&o)).unwrap(), RunConfig::default());
}

#[test]
fn train_writes_one_row_per_generation_and_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    train(&write_config(dir.path(), &small_config(&run, 5)));
    let table = ReportTable::read(&run.join(REPORT_FILE)).unwrap();
    assert_eq!(table.column(0), ["0", "1", "2", "3", "4"]);
    assert!(table.column(5).iter().all(|v| !v.is_empty()));

    let o = evoclass(&["inspect", "--checkpoint", run.join(CHECKPOINT_DIR).to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("generation 5\n"), "{}", stdout(&o));
}

#[test]
fn resume_reproduces_uninterrupted_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let whole = dir.path().join("whole");
    let split = dir.path().join("split");
    fs::create_dir_all(dir.path().join("a")).unwrap();
    fs::create_dir_all(dir.path().join("b")).unwrap();
    train(&write_config(&dir.path().join("a"), &small_config(&whole, 8)));

    train(&write_config(&dir.path().join("b"), &small_config(&split, 4)));
    let o = train(&write_config(&dir.path().join("b"), &small_config(&split, 8)));
    assert!(stdout(&o).contains("resumed at generation 4"), "{}", stdout(&o));

    assert_eq!(reward_columns(&whole), reward_columns(&split));
    let weights = |run: &Path| fs::read(run.join(CHECKPOINT_DIR).join(CHECKPOINT_WEIGHTS_FILE)).unwrap();
    assert_eq!(weights(&whole), weights(&split));
}

#[test]
fn fresh_flag_ignores_existing_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let config = write_config(dir.path(), &small_config(&run, 3));
    train(&config);
    let o = evoclass(&["train", "--config", config.to_str().unwrap(), "--fresh"]);
    assert!(o.status.success());
    assert!(!stdout(&o).contains("resumed"));
    assert_eq!(reward_columns(&run).len(), 3);
}

fn write_checkpoint(dir: &Path, spec: &ArchitectureSpec, genome: &Genome) -> PathBuf {
    let path = dir.join("ckpt");
    save_checkpoint(&Checkpoint::new(spec.clone(), genome, 0, EsConfig::default()).unwrap(), &path).unwrap();
    path
}

fn synth_default(dir: &Path) -> PathBuf {
    let out = dir.join("data");
    assert!(evoclass(&["synth", "--out", out.to_str().unwrap()]).status.success());
    out.join("manifest.csv")
}

#[test]
fn eval_zero_checkpoint_scores_one_quarter() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ArchitectureSpec::default();
    let ckpt = write_checkpoint(dir.path(), &spec, &Genome::zeros(&spec).unwrap());
    let manifest = synth_default(dir.path());
    let o = evoclass(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--manifest",
        manifest.to_str().unwrap(),
        "--split",
        "test",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.starts_with("accuracy 0.2500\n"), "{text}");
    // Every image lands in column 0.
    assert!(text.contains("     0    20     0     0     0\n"), "{text}");
    assert!(text.contains("     3    20     0     0     0\n"), "{text}");
}

#[test]
fn eval_reports_shape_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ArchitectureSpec {
        input_shape: [1, 16, 16],
        ..ArchitectureSpec::default()
    };
    let ckpt = write_checkpoint(dir.path(), &spec, &Genome::zeros(&spec).unwrap());
    let manifest = synth_default(dir.path());
    let o = evoclass(&["eval", "--checkpoint", ckpt.to_str().unwrap(), "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("16") && err.contains("32"), "{err}");
}

#[test]
fn inspect_fresh_glorot_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ArchitectureSpec::default();
    let ckpt = write_checkpoint(dir.path(), &spec, &glorot_init(&spec, 1).unwrap());
    let o = evoclass(&["inspect", "--checkpoint", ckpt.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains(&format!("param_count {}\n", param_count(&spec).unwrap())), "{text}");
    let biases = text.lines().find(|l| l.starts_with("biases ")).unwrap();
    assert!(
        biases.ends_with("min=0.000000 max=0.000000 mean=0.000000 std=0.000000"),
        "{biases}"
    );
}

#[test]
fn inspect_corrupted_weights_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ArchitectureSpec::default();
    let ckpt = write_checkpoint(dir.path(), &spec, &Genome::zeros(&spec).unwrap());
    let weights = ckpt.join(CHECKPOINT_WEIGHTS_FILE);
    let bytes = fs::read(&weights).unwrap();
    fs::write(&weights, &bytes[..bytes.len() - 5]).unwrap();
    let o = evoclass(&["inspect", "--checkpoint", ckpt.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("checkpoint.weights"), "{}", stderr(&o));
}

#[test]
fn report_writes_four_series() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut config = small_config(&run, 100);
    config.es.n_offspring = 6;
    train(&write_config(dir.path(), &config));
    let o = evoclass(&["report", "--run", run.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["best", "mean", "worst", "test_acc_max"] {
        let text = fs::read_to_string(run.join("series").join(format!("{name}.dat"))).unwrap();
        assert_eq!(text.lines().count(), 100, "{name}");
        assert!(text.starts_with("0 "));
        assert!(text.lines().all(|l| l.split(' ').count() == 2));
    }
}

#[test]
fn report_without_generations_fails() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join(REPORT_FILE), "generation,best,mean,worst,parent,test_acc_max,wall_ms\n").unwrap();
    let o = evoclass(&["report", "--run", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("no generations recorded"));
}
