//! Optional TOML configuration file. Every key mirrors a command-line flag;
//! flags always win. Paths in the file resolve relative to the file itself,
//! so a config directory can be moved as a unit.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config `{path}`: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse config `{path}`: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub sim: SimSection,
    pub node: NodeSection,
    pub bench: BenchSection,
    pub adapter: AdapterSection,
    #[serde(skip)]
    base_dir: PathBuf,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// Mean costs `[buy, exec, comm]`.
    pub mu: Option<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    pub delta: Option<Vec<f64>>,
    pub skills: Option<usize>,
    pub tasks: Option<usize>,
    /// Seed count; runs always use seeds `0..seeds`.
    pub seeds: Option<usize>,
    pub out: Option<PathBuf>,
    /// Simplex sum for `sim sweep`.
    pub sum: Option<f64>,
    /// Fixed mean buying cost for `sim ratio`.
    pub mu_b: Option<f64>,
    /// μ_e + μ_c total for `sim ratio`.
    pub mu_total: Option<f64>,
    pub ratios: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeSection {
    pub id: Option<String>,
    pub listen: Option<String>,
    pub register: Option<PathBuf>,
    /// Skills this node owns, as `name:description:body`.
    pub skills: Option<Vec<String>>,
    pub grace_ms: Option<u64>,
    /// Peer addresses, as `Name=host:port`.
    pub peers: Option<Vec<String>>,
    pub timeout_ms: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub runs: Option<usize>,
    pub remote_ms: Option<f64>,
    pub local_ms: Option<f64>,
    pub negotiation_ms: Option<f64>,
    pub jitter: Option<f64>,
    pub templates: Option<PathBuf>,
    pub tasks: Option<usize>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdapterSection {
    /// External classifier/composer endpoint. The `SKILLFLOW_ADAPTER_ENDPOINT`
    /// environment variable overrides this key.
    pub endpoint: Option<String>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut config: FileConfig =
            toml::from_str(&text).map_err(|source| ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        config.base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(config)
    }

    /// Resolves a path taken from the config file against the file's
    /// directory. Absolute paths pass through unchanged.
    pub fn resolve(&self, path: PathBuf) -> PathBuf {
        if path.is_absolute() {
            path
        } else {
            self.base_dir.join(path)
        }
    }

    /// The adapter endpoint, environment variable first.
    pub fn adapter_endpoint(&self) -> Option<String> {
        std::env::var("SKILLFLOW_ADAPTER_ENDPOINT")
            .ok()
            .filter(|v| !v.is_empty())
            .or_else(|| self.adapter.endpoint.clone())
    }
}
