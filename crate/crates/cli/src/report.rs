//! `report.csv` and the plot-ready series derived from it.
//!
//! Columns: `generation,best,mean,worst,parent,test_acc_max,wall_ms`.
//! `test_acc_max` is empty on generations where the test split was not
//! evaluated. Floats use Rust's shortest round-trip formatting, so the
//! decimal point is always `.`.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use evoclass_core::data::{save_checkpoint, Checkpoint};
use evoclass_core::evolution::GenerationSink;
use evoclass_core::{ArchitectureSpec, EsConfig, Error, GenerationReport, Genome};

use crate::CliError;

pub const REPORT_FILE: &str = "report.csv";
pub const REPORT_HEADER: &str = "generation,best,mean,worst,parent,test_acc_max,wall_ms";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const SERIES_DIR: &str = "series";
pub const SERIES: [(&str, usize); 4] = [("best", 1), ("mean", 2), ("worst", 3), ("test_acc_max", 5)];

pub fn format_row(report: &GenerationReport) -> String {
    let test = report.test_accuracy_max.map(|a| a.to_string()).unwrap_or_default();
    format!(
        "{},{},{},{},{},{},{}",
        report.generation, report.best, report.mean, report.worst, report.parent_reward, test, report.wall_time_ms
    )
}

/// Appends one flushed line per generation.
#[derive(Debug)]
pub struct CsvSink {
    file: File,
    path: PathBuf,
}

impl CsvSink {
    /// Creates `path` with a header, or keeps the rows of an existing file
    /// whose generation is below `keep_below` (used when resuming).
    pub fn open(path: &Path, keep_below: Option<u64>) -> Result<Self, Error> {
        let io = |e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let mut text = format!("{REPORT_HEADER}\n");
        if let (Some(limit), Ok(existing)) = (keep_below, fs::read_to_string(path)) {
            for line in existing.lines().skip(1) {
                let generation = line.split(',').next().and_then(|g| g.parse::<u64>().ok());
                if generation.is_some_and(|g| g < limit) {
                    text.push_str(line);
                    text.push('\n');
                }
            }
        }
        fs::write(path, text).map_err(io)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io)?;
        Ok(CsvSink {
            file,
            path: path.to_path_buf(),
        })
    }
}

impl GenerationSink for CsvSink {
    fn record(&mut self, report: &GenerationReport, _next_parent: &Genome) -> Result<(), Error> {
        let line = format!("{}\n", format_row(report));
        self.file
            .write_all(line.as_bytes())
            .and_then(|_| self.file.flush())
            .map_err(|e| Error::Io {
                path: self.path.clone(),
                source: e,
            })
    }
}

/// Writes the parent every `interval` generations and once at the end.
#[derive(Debug)]
pub struct CheckpointSink {
    dir: PathBuf,
    interval: u64,
    spec: ArchitectureSpec,
    es: EsConfig,
}

impl CheckpointSink {
    pub fn new(dir: PathBuf, interval: u64, spec: ArchitectureSpec, es: EsConfig) -> Self {
        CheckpointSink { dir, interval, spec, es }
    }

    fn write(&self, parent: &Genome, generations_done: u64) -> Result<(), Error> {
        let checkpoint = Checkpoint::new(self.spec.clone(), parent, generations_done, self.es.clone())?;
        save_checkpoint(&checkpoint, &self.dir)
    }
}

impl GenerationSink for CheckpointSink {
    fn record(&mut self, report: &GenerationReport, next_parent: &Genome) -> Result<(), Error> {
        let done = report.generation + 1;
        if self.interval > 0 && done % self.interval == 0 {
            self.write(next_parent, done)?;
        }
        Ok(())
    }

    fn finish(&mut self, final_parent: &Genome, generations_done: u64) -> Result<(), Error> {
        self.write(final_parent, generations_done)
    }
}

/// Parsed `report.csv`, kept as the original text fields.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<Vec<String>>,
}

impl ReportTable {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h == REPORT_HEADER => {}
            _ => return Err(CliError::Io(format!("{}: missing header {REPORT_HEADER:?}", path.display()))),
        }
        let rows: Vec<Vec<String>> = lines
            .filter(|l| !l.is_empty())
            .map(|l| l.split(',').map(str::to_string).collect())
            .collect();
        if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.len() != 7) {
            return Err(CliError::Io(format!("{}: row {} does not have 7 fields", path.display(), i + 2)));
        }
        Ok(ReportTable { rows })
    }

    pub fn column(&self, index: usize) -> Vec<&str> {
        self.rows.iter().map(|r| r[index].as_str()).collect()
    }
}

/// Writes `<name>.dat` files of `generation value` lines; returns their paths.
pub fn write_series(table: &ReportTable, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    if table.rows.is_empty() {
        return Err(CliError::Io("no generations recorded".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::Io(format!("{}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    for (name, column) in SERIES {
        let mut text = String::new();
        for row in &table.rows {
            if !row[column].is_empty() {
                text.push_str(&format!("{} {}\n", row[0], row[column]));
            }
        }
        let path = out_dir.join(format!("{name}.dat"));
        fs::write(&path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        written.push(path);
    }
    Ok(written)
}
