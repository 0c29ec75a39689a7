use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use aviscape_core::geo::RepoConfig;
use aviscape_core::soundscape::SceneConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {name}: {message}")]
    Env { name: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Server settings, read from a TOML file and then overridden by
/// `AVISCAPE_*` environment variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: SocketAddr,
    /// Storage root; `None` keeps everything in memory.
    pub data_dir: Option<PathBuf>,
    /// Minimum top-1 score for a recording to become a detection.
    pub acceptance_threshold: f64,
    /// Base URL of an external recognition service for `service` mode.
    pub recognition_endpoint: Option<String>,
    pub recognition_timeout_ms: u64,
    /// Answer `service` requests locally when the endpoint fails.
    pub recognition_fallback: bool,
    /// Bearer token to user id.
    pub tokens: BTreeMap<String, String>,
    /// Quest and badge rules; the bundled defaults when unset.
    pub rules_file: Option<PathBuf>,
    /// Template set JSON; otherwise `<data_dir>/templates.json`, else synthesized.
    pub templates_file: Option<PathBuf>,
    pub bootstrap: BootstrapConfig,
    pub scene: SceneConfig,
    pub repository: RepoConfig,
    /// Upper bound on upload size.
    pub max_upload_bytes: usize,
}

/// Synthetic templates used when no template set is available.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapConfig {
    pub species_count: usize,
    pub clips_per_species: usize,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self { species_count: 10, clips_per_species: 4, seed: 2024 }
    }
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: None,
            acceptance_threshold: 0.65,
            recognition_endpoint: None,
            recognition_timeout_ms: 5000,
            recognition_fallback: true,
            tokens: BTreeMap::new(),
            rules_file: None,
            templates_file: None,
            bootstrap: BootstrapConfig::default(),
            scene: SceneConfig::default(),
            repository: RepoConfig::default(),
            max_upload_bytes: 32 * 1024 * 1024,
        }
    }
}

impl ServerConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse { path: origin.to_owned(), message: e.to_string() })
    }

    /// File (if given) plus process environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|source| ConfigError::Read { path: p.to_owned(), source })?;
                Self::from_toml(&text, p)?
            }
            None => Self::default(),
        };
        config.apply_env(std::env::vars())?;
        config.validate()?;
        Ok(config)
    }

    /// Recognized variables: `AVISCAPE_BIND`, `AVISCAPE_DATA_DIR`,
    /// `AVISCAPE_THRESHOLD`, `AVISCAPE_RECOGNITION_ENDPOINT` and
    /// `AVISCAPE_TOKENS` (comma-separated `token:user` pairs).
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), ConfigError> {
        for (name, value) in vars {
            let err = |message: String| ConfigError::Env { name: name.clone(), message };
            match name.as_str() {
                "AVISCAPE_BIND" => self.bind = value.parse().map_err(|e| err(format!("{e}")))?,
                "AVISCAPE_DATA_DIR" => self.data_dir = (!value.is_empty()).then(|| PathBuf::from(&value)),
                "AVISCAPE_THRESHOLD" => {
                    self.acceptance_threshold = value.parse().map_err(|e| err(format!("{e}")))?;
                }
                "AVISCAPE_RECOGNITION_ENDPOINT" => {
                    self.recognition_endpoint = (!value.is_empty()).then(|| value.clone());
                }
                "AVISCAPE_TOKENS" => {
                    for pair in value.split(',').filter(|p| !p.trim().is_empty()) {
                        let (token, user) =
                            pair.trim().split_once(':').ok_or_else(|| err(format!("expected token:user, got {pair:?}")))?;
                        self.tokens.insert(token.to_owned(), user.to_owned());
                    }
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.acceptance_threshold) {
            return Err(ConfigError::Invalid(format!("acceptance_threshold {} outside [0, 1]", self.acceptance_threshold)));
        }
        if self.tokens.keys().any(|t| t.is_empty()) {
            return Err(ConfigError::Invalid("empty bearer token".into()));
        }
        self.scene.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Repository settings with the shared acceptance threshold.
    pub fn repo_config(&self) -> RepoConfig {
        RepoConfig { acceptance_threshold: self.acceptance_threshold, ..self.repository.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_environment() {
        let text = r#"
            bind = "0.0.0.0:9000"
            acceptance_threshold = 0.7
            [tokens]
            abc = "alice"
            [scene]
            max_sources = 8
        "#;
        let mut c = ServerConfig::from_toml(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.scene.max_sources, 8);
        assert_eq!(c.scene.radius_m, SceneConfig::default().radius_m);
        let env = [
            ("AVISCAPE_BIND", "127.0.0.1:0"),
            ("AVISCAPE_THRESHOLD", "0.5"),
            ("AVISCAPE_TOKENS", "t1:bob, t2:carol"),
            ("AVISCAPE_DATA_DIR", "/tmp/x"),
            ("UNRELATED", "1"),
        ];
        c.apply_env(env.iter().map(|(k, v)| (k.to_string(), v.to_string()))).unwrap();
        assert_eq!(c.bind.port(), 0);
        assert_eq!(c.acceptance_threshold, 0.5);
        assert_eq!(c.tokens.len(), 3);
        assert_eq!(c.tokens["t2"], "carol");
        assert_eq!(c.data_dir.as_deref(), Some(Path::new("/tmp/x")));
        assert_eq!(c.repo_config().acceptance_threshold, 0.5);
    }

    #[test]
    fn bad_values_rejected() {
        assert!(ServerConfig::from_toml("nonsense = 1", Path::new("x")).is_err());
        let mut c = ServerConfig::default();
        assert!(c.apply_env([("AVISCAPE_THRESHOLD".to_string(), "high".to_string())]).is_err());
        c.acceptance_threshold = 1.5;
        assert!(c.validate().is_err());
    }

    #[test]
    fn shipped_file_matches_defaults() {
        let path = Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../config/aviscape.toml"));
        let c = ServerConfig::load(Some(path)).map(|mut c| {
            c.data_dir = None;
            c
        });
        let mut expected = ServerConfig::default();
        expected.apply_env(std::env::vars()).unwrap();
        expected.data_dir = None;
        assert_eq!(c.unwrap(), expected);
    }
}
