use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::StartupError;

pub const DEFAULT_CORPUS: &str = "default";

/// Service settings, read from a TOML file and overridden by `DJMC_*`
/// environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub log_dir: PathBuf,
    /// Corpus name to JSONL path.
    pub corpora: BTreeMap<String, PathBuf>,
    /// Master seed; each session's stream is derived from it and the session id.
    pub seed: u64,
    pub default_length: usize,
    pub default_explore: usize,
    pub page_size: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            log_dir: PathBuf::from("sessions"),
            corpora: BTreeMap::new(),
            seed: 0,
            default_length: 50,
            default_explore: 25,
            page_size: 50,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, StartupError> {
        toml::from_str(text).map_err(|e| StartupError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, StartupError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| StartupError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Applies `DJMC_LISTEN`, `DJMC_LOG_DIR`, `DJMC_CORPUS` (the default
    /// corpus path), `DJMC_SEED`, `DJMC_DEFAULT_LENGTH` and
    /// `DJMC_DEFAULT_EXPLORE`.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<(), StartupError>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: Into<String>,
    {
        let number = |key: &str, v: &str| -> Result<u64, StartupError> {
            v.parse()
                .map_err(|_| StartupError::Config(format!("{key} must be a non-negative integer, got {v:?}")))
        };
        for (k, v) in vars {
            let v: String = v.into();
            match k.as_ref() {
                "DJMC_LISTEN" => self.listen = v,
                "DJMC_LOG_DIR" => self.log_dir = PathBuf::from(v),
                "DJMC_CORPUS" => {
                    self.corpora.insert(DEFAULT_CORPUS.into(), PathBuf::from(v));
                }
                "DJMC_SEED" => self.seed = number("DJMC_SEED", &v)?,
                "DJMC_DEFAULT_LENGTH" => self.default_length = number("DJMC_DEFAULT_LENGTH", &v)? as usize,
                "DJMC_DEFAULT_EXPLORE" => self.default_explore = number("DJMC_DEFAULT_EXPLORE", &v)? as usize,
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), StartupError> {
        if self.corpora.is_empty() {
            return Err(StartupError::Config("no corpus configured".into()));
        }
        if self.page_size == 0 {
            return Err(StartupError::Config("page_size must be at least 1".into()));
        }
        Ok(())
    }
}
