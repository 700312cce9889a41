//! The JSON run configuration accepted by `evoclass train`.

use std::path::{Path, PathBuf};

use evoclass_core::data::SynthConfig;
use evoclass_core::{ArchitectureSpec, EsConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that overrides `run.workers`.
pub const WORKERS_ENV: &str = "EVOCLASS_WORKERS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub arch: ArchitectureSpec,
    pub es: EsConfig,
    pub data: DataConfig,
    pub run: RunSection,
}

/// Exactly one of `manifest` or `synth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<PathBuf>,
    /// Generated into `<out_dir>/data` before training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    /// 0 = one per logical CPU.
    pub workers: usize,
    /// Generations between checkpoint writes; 0 writes only the final one.
    pub checkpoint_interval: u64,
    /// Generations between test-split evaluations; 0 disables them.
    pub eval_interval: u64,
    pub early_stop_patience: Option<u64>,
    pub out_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            workers: 0,
            checkpoint_interval: 50,
            eval_interval: 10,
            early_stop_patience: None,
            out_dir: PathBuf::from("runs/default"),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            arch: ArchitectureSpec::default(),
            es: EsConfig::default(),
            data: DataConfig {
                manifest: None,
                synth: Some(SynthConfig::default()),
            },
            run: RunSection::default(),
        }
    }
}

fn invalid(field: &str, err: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {err}"))
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("{path}: {}", e.into_inner()))
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Checks every section before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.arch.validate().map_err(|e| invalid("arch", e))?;
        self.es.validate().map_err(|e| invalid("es", e))?;
        match (&self.data.manifest, &self.data.synth) {
            (Some(_), None) => {}
            (None, Some(synth)) => {
                synth.validate().map_err(|e| invalid("data.synth", e))?;
                let size = synth.image_size;
                if self.arch.input_shape != [1, size, size] {
                    return Err(invalid(
                        "data.synth.image_size",
                        format!("images are [1, {size}, {size}] but arch.input_shape is {:?}", self.arch.input_shape),
                    ));
                }
                if synth.num_classes != self.arch.num_classes {
                    return Err(invalid(
                        "data.synth.num_classes",
                        format!("{} differs from arch.num_classes {}", synth.num_classes, self.arch.num_classes),
                    ));
                }
            }
            _ => return Err(invalid("data", "set exactly one of `manifest` or `synth`")),
        }
        if self.run.early_stop_patience == Some(0) {
            return Err(invalid("run.early_stop_patience", "must be >= 1 when set"));
        }
        if self.run.out_dir.as_os_str().is_empty() {
            return Err(invalid("run.out_dir", "must not be empty"));
        }
        Ok(())
    }

    /// `run.workers`, unless overridden by the environment.
    pub fn effective_workers(&self) -> Result<usize, CliError> {
        match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{WORKERS_ENV}: not a non-negative integer: {v:?}"))),
            Err(_) => Ok(self.run.workers),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let config = RunConfig::default();
        assert_eq!(RunConfig::from_json(&config.to_json()).unwrap(), config);
    }

    #[test]
    fn unknown_key_names_its_path() {
        let mut value: serde_json::Value = serde_json::from_str(&RunConfig::default().to_json()).unwrap();
        value["es"]["sigmaa"] = 0.1.into();
        let err = RunConfig::from_json(&value.to_string()).unwrap_err().to_string();
        assert!(err.contains("es") && err.contains("sigmaa"), "{err}");
    }

    #[test]
    fn invalid_sections_are_rejected() {
        let mut c = RunConfig::default();
        c.es.n_offspring = 5;
        assert!(c.validate().unwrap_err().to_string().starts_with("es:"));

        let mut c = RunConfig::default();
        c.data.manifest = Some("m.csv".into());
        assert!(c.validate().unwrap_err().to_string().starts_with("data:"));

        let mut c = RunConfig::default();
        c.arch.input_shape = [1, 16, 16];
        assert!(c.validate().unwrap_err().to_string().contains("image_size"));

        let mut c = RunConfig::default();
        c.run.early_stop_patience = Some(0);
        assert!(c.validate().is_err());
    }
}
