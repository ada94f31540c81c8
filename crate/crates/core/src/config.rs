//! Run configuration: one TOML file with a section per component, plus
//! environment overrides.
//!
//! Resolution order (later wins): built-in defaults, the config file,
//! `TAGFORMER_*` environment variables, command-line flags. Environment
//! keys name a path with `__` separators, e.g. `TAGFORMER_TRAIN__LR=3e-4`
//! or `TAGFORMER_MODEL__TRANSFORMER__ATTN_DIM=64`; top-level keys drop the
//! section (`TAGFORMER_SEED=7`). Values are parsed as TOML literals and
//! fall back to plain strings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::augment::AugmentSpec;
use crate::data::{SplitRatios, SynthConfig};
use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::models::ModelSpec;
use crate::train::{NoisyStudentConfig, TrainConfig};

pub const ENV_PREFIX: &str = "TAGFORMER_";

/// File name of the resolved configuration written into every output
/// directory.
pub const RESOLVED_CONFIG: &str = "resolved_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Split file used by training and evaluation.
    pub split_file: Option<PathBuf>,
    /// Train/valid/test fractions used by `split`.
    pub ratios: [f64; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            split_file: None,
            ratios: SplitRatios::default().0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Threads for data preparation and evaluation; results do not depend
    /// on it.
    pub workers: usize,
    pub out_dir: Option<PathBuf>,
    pub data: DataSection,
    pub synth: SynthConfig,
    pub dsp: DspConfig,
    pub augment: AugmentSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub student: NoisyStudentConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            out_dir: None,
            data: DataSection::default(),
            synth: SynthConfig::default(),
            dsp: DspConfig::default(),
            augment: AugmentSpec::default(),
            model: ModelSpec::default(),
            train: TrainConfig::default(),
            student: NoisyStudentConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn config_error(source: &str, e: impl std::fmt::Display) -> Error {
    Error::Config(format!("{source}: {e}"))
}

/// Parses an override value: a TOML literal if possible, else a string.
fn parse_value(raw: &str) -> Value {
    match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| Value::String(raw.to_string())),
        Err(_) => Value::String(raw.to_string()),
    }
}

/// Sets `path` (already lower-cased) inside `table`, creating sections.
fn set_path(table: &mut Table, path: &[String], value: Value, source: &str) -> Result<()> {
    let (last, parents) = path.split_last().ok_or_else(|| config_error(source, "empty key"))?;
    let mut cur = table;
    for key in parents {
        let entry = cur.entry(key.clone()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| config_error(source, format!("{key} is not a section")))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Defaults overlaid with `file` (if any) and the given environment
    /// variables.
    pub fn resolve<I>(file: Option<&Path>, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<Table>()
                    .map_err(|e| config_error(&p.display().to_string(), e))?
            }
            None => Table::new(),
        };
        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (key, raw) in overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
            set_path(&mut table, &path, parse_value(&raw), &key)?;
        }
        let source = file.map_or_else(|| "configuration".to_string(), |p| p.display().to_string());
        let cfg: RunConfig = Value::Table(table).try_into().map_err(|e| config_error(&source, e))?;
        Ok(cfg)
    }

    /// [`resolve`](Self::resolve) with the process environment.
    pub fn from_env(file: Option<&Path>) -> Result<Self> {
        Self::resolve(file, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        self.dsp.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.augment.validate()?;
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.model.n_mels() != self.dsp.n_mels {
            return Err(Error::Config(format!(
                "model expects {} mel bands but dsp produces {}",
                self.model.n_mels(),
                self.dsp.n_mels
            )));
        }
        self.train_config().validate()?;
        self.student.validate()?;
        SplitRatios(self.data.ratios)
            .validate()
            .map_err(|e| Error::Config(e.to_string()))
    }

    /// Training settings with the run-wide seed, worker count and
    /// augmentation filled in.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            workers: self.workers,
            augment: self.augment.clone(),
            ..self.train.clone()
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            seed: self.seed,
            ..self.synth.clone()
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("cannot serialize configuration: {e}")))
    }

    /// Writes the resolved configuration into `dir`.
    pub fn write_snapshot(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(RESOLVED_CONFIG);
        std::fs::write(&path, self.to_toml()?).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
