//! Experiment configuration files.
//!
//! ```json
//! {
//!   "profile": "toy",
//!   "train": { "seed": 3, "max_epochs": 200 },
//!   "paths": { "train": "train.jsonl", "schema": "pe.json", "output_dir": "runs/a" }
//! }
//! ```
//!
//! `train` overrides individual keys of the profile's settings; command-line
//! overrides are applied on top. Relative paths resolve against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use argmine_core::trainer::TrainConfig;
use serde::Deserialize;
use serde_json::{Map, Value};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Toy,
    Full,
}

impl Profile {
    pub fn defaults(self) -> TrainConfig {
        match self {
            Profile::Toy => TrainConfig::toy(),
            Profile::Full => TrainConfig::full(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub train: PathBuf,
    #[serde(default)]
    pub dev: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    pub schema: PathBuf,
    /// Precomputed token vectors; without it the toy encoder is trained.
    #[serde(default)]
    pub embeddings: Option<PathBuf>,
    /// Toy-encoder vocabulary, one token per line; defaults to the training tokens.
    #[serde(default)]
    pub vocab: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.train);
        join(&mut self.schema);
        join(&mut self.output_dir);
        for p in [&mut self.dev, &mut self.test, &mut self.embeddings, &mut self.vocab]
            .into_iter()
            .flatten()
        {
            join(p);
        }
    }

    /// Every input path that must exist before a run starts.
    pub fn inputs(&self) -> impl Iterator<Item = &PathBuf> {
        [
            Some(&self.train),
            Some(&self.schema),
            self.dev.as_ref(),
            self.test.as_ref(),
        ]
        .into_iter()
        .chain([self.embeddings.as_ref(), self.vocab.as_ref()])
        .flatten()
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    #[serde(default)]
    pub profile: Profile,
    #[serde(default)]
    pub train: Map<String, Value>,
    pub paths: Paths,
}

/// A fully resolved run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub paths: Paths,
}

/// Overwrites keys of `base`; unknown keys and ill-typed values are errors.
pub fn apply_overrides(base: &TrainConfig, overrides: &Map<String, Value>) -> Result<TrainConfig> {
    let Value::Object(mut fields) = serde_json::to_value(base).expect("configs serialize") else {
        unreachable!("TrainConfig serializes to an object")
    };
    for (key, value) in overrides {
        if !fields.contains_key(key) {
            return Err(CliError::BadInput(format!("unknown training setting {key:?}")));
        }
        fields.insert(key.clone(), value.clone());
    }
    let config: TrainConfig = serde_json::from_value(Value::Object(fields))
        .map_err(|e| CliError::BadInput(format!("invalid training setting: {e}")))?;
    config.validate()?;
    Ok(config)
}

impl RunConfig {
    /// Reads `path`, applies `overrides` and checks that all inputs exist.
    pub fn load(path: &Path, overrides: &Map<String, Value>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingPath(path.to_path_buf()),
            _ => CliError::io(path, e),
        })?;
        let mut file: RunConfigFile = serde_json::from_str(&text).map_err(|e| CliError::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        file.paths.resolve(path.parent().unwrap_or(Path::new(".")));
        let from_file = apply_overrides(&file.profile.defaults(), &file.train)?;
        let train = apply_overrides(&from_file, overrides)?;
        if let Some(missing) = file.paths.inputs().find(|p| !p.exists()) {
            return Err(CliError::MissingPath(missing.clone()));
        }
        Ok(RunConfig {
            train,
            paths: file.paths,
        })
    }
}
