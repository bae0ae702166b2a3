//! TOML run configuration.
//!
//! ```toml
//! output = "out"
//! seed = 7
//! serial = false
//! no_semantics = false
//!
//! [dataset]
//! path = "data"
//! kind = "synthetic"      # replica-style | tum-style | synthetic
//! max_frames = 30         # optional
//!
//! [taxonomy]
//! path = "data/taxonomy.json"
//!
//! [slam]                  # every field optional, defaults shown by `to_toml`
//! tracking_iterations = 40
//! [slam.loss]
//! eta = 15
//! ```
//!
//! Relative paths are resolved against the config file's directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::DatasetKind;
use super::IoError;
use crate::slam::SlamConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub path: PathBuf,
    #[serde(default)]
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_frames: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomySection {
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub serial: bool,
    #[serde(default)]
    pub no_semantics: bool,
    pub dataset: DatasetSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<TaxonomySection>,
    #[serde(default)]
    pub slam: SlamConfig,
}

fn config_err(field: &str, message: impl Into<String>) -> IoError {
    IoError::Config {
        field: field.to_string(),
        message: message.into(),
    }
}

impl RunConfig {
    pub fn new(dataset: impl Into<PathBuf>, kind: DatasetKind, output: impl Into<PathBuf>) -> Self {
        RunConfig {
            output: output.into(),
            seed: 0,
            serial: false,
            no_semantics: false,
            dataset: DatasetSection {
                path: dataset.into(),
                kind,
                max_frames: None,
            },
            taxonomy: None,
            slam: SlamConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, IoError> {
        toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .map(str::to_string)
                .unwrap_or_else(|| "<document>".to_string());
            config_err(&field, e.to_string())
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Reads, resolves relative paths, and validates.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, IoError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| IoError::file(path, e))?;
        let mut cfg = RunConfig::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output);
        fix(&mut self.dataset.path);
        if let Some(t) = self.taxonomy.as_mut() {
            fix(&mut t.path);
        }
    }

    pub fn validate(&self) -> Result<(), IoError> {
        if !self.dataset.path.is_dir() {
            return Err(config_err(
                "dataset.path",
                format!("{} is not a directory", self.dataset.path.display()),
            ));
        }
        if self.dataset.max_frames == Some(0) {
            return Err(config_err("dataset.max_frames", "must be ≥ 1"));
        }
        match (&self.taxonomy, self.no_semantics) {
            (Some(t), _) if !t.path.is_file() => {
                return Err(config_err("taxonomy.path", format!("{} does not exist", t.path.display())))
            }
            (None, false) => return Err(config_err("taxonomy.path", "required unless no_semantics = true")),
            _ => {}
        }
        self.slam.validate().map_err(|e| config_err("slam", e.to_string()))
    }
}
