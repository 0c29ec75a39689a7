//! HTTP+JSON service: recording ingestion and recognition, the detection
//! repository, soundscape scenes and the quest game behind one `/v1` API.

mod api;
pub mod config;
mod endpoint;
mod error;
pub mod wire;

use std::future::Future;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::net::TcpListener;
use tokio::runtime::Handle;

use aviscape_core::classifier::{ClassifierConfig, ClassifierError, Recognizer, TemplateSet};
use aviscape_core::corpus;
use aviscape_core::game::{GameEngine, GameError, RuleBook};
use aviscape_core::geo::{RepoError, Repository};

pub use api::router;
pub use config::{ConfigError, ServerConfig};
pub use endpoint::HttpEndpoint;
pub use error::{ApiError, ErrorCode};

/// File name of the persisted template set inside the data directory.
pub const TEMPLATES_FILE: &str = "templates.json";

#[derive(Debug, Error)]
pub enum StartupError {
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: SocketAddr, source: std::io::Error },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("templates: {0}")]
    Templates(String),
    #[error("repository: {0}")]
    Repo(#[from] RepoError),
    #[error("game state: {0}")]
    Game(#[from] GameError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error("server: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a request handler can reach.
pub struct AppState {
    pub config: ServerConfig,
    pub repo: Arc<Repository>,
    pub game: Arc<GameEngine>,
    pub recognizer: Arc<Recognizer>,
}

impl AppState {
    /// Opens storage, loads rules and templates, registers token users.
    /// Blocking; `handle` drives the optional recognition-service client.
    pub fn new(config: ServerConfig, handle: Handle) -> Result<Self, StartupError> {
        config.validate()?;
        if let Some(dir) = &config.data_dir {
            std::fs::create_dir_all(dir)?;
        }
        let rules = match &config.rules_file {
            Some(p) => RuleBook::load(p)?,
            None => RuleBook::default(),
        };
        let (repo, game) = match &config.data_dir {
            Some(dir) => (Repository::open(dir, config.repo_config())?, GameEngine::open(dir, rules)?),
            None => (Repository::in_memory(config.repo_config()), GameEngine::in_memory(rules)),
        };
        for user in config.tokens.values() {
            game.register(user)?;
        }

        let mut set = load_templates(&config)?;
        set.config.acceptance_threshold = config.acceptance_threshold;
        let mut recognizer = Recognizer::new(set)?.with_fallback(config.recognition_fallback);
        if let Some(url) = &config.recognition_endpoint {
            let timeout = Duration::from_millis(config.recognition_timeout_ms);
            let endpoint = HttpEndpoint::new(url, timeout, handle).map_err(|e| StartupError::Templates(e.to_string()))?;
            recognizer = recognizer.with_endpoint(Arc::new(endpoint));
        }
        Ok(Self { config, repo: Arc::new(repo), game: Arc::new(game), recognizer: Arc::new(recognizer) })
    }

    /// User id for a bearer token.
    pub fn user_for_token(&self, token: &str) -> Option<&str> {
        self.config.tokens.get(token).map(String::as_str)
    }
}

fn load_templates(config: &ServerConfig) -> Result<TemplateSet, StartupError> {
    let read = |p: &Path| -> Result<TemplateSet, StartupError> {
        let bytes = std::fs::read(p).map_err(|e| StartupError::Templates(format!("{}: {e}", p.display())))?;
        serde_json::from_slice(&bytes).map_err(|e| StartupError::Templates(format!("{}: {e}", p.display())))
    };
    if let Some(p) = &config.templates_file {
        return read(p);
    }
    let stored = config.data_dir.as_ref().map(|d| d.join(TEMPLATES_FILE));
    if let Some(p) = stored.as_ref().filter(|p| p.exists()) {
        return read(p);
    }
    let classifier_config = ClassifierConfig { acceptance_threshold: config.acceptance_threshold, ..ClassifierConfig::default() };
    let b = &config.bootstrap;
    tracing::info!(species = b.species_count, clips = b.clips_per_species, "synthesizing bootstrap templates");
    let templates = corpus::synthetic_templates(classifier_config, b.species_count, b.clips_per_species, b.seed)?;
    let set = TemplateSet { config: classifier_config, templates };
    if let Some(p) = stored {
        let body = serde_json::to_vec(&set).map_err(|e| StartupError::Templates(e.to_string()))?;
        std::fs::write(p, body)?;
    }
    Ok(set)
}

/// A bound, ready-to-run server.
pub struct Server {
    listener: TcpListener,
    state: Arc<AppState>,
}

impl Server {
    /// Binds first, so a busy port fails before any expensive setup.
    pub async fn bind(config: ServerConfig) -> Result<Self, StartupError> {
        let addr = config.bind;
        let listener = TcpListener::bind(addr).await.map_err(|source| StartupError::Bind { addr, source })?;
        let handle = Handle::current();
        let state = tokio::task::spawn_blocking(move || AppState::new(config, handle))
            .await
            .map_err(|e| StartupError::Io(std::io::Error::other(e)))??;
        Ok(Self { listener, state: Arc::new(state) })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn state(&self) -> Arc<AppState> {
        self.state.clone()
    }

    /// Serves until `shutdown` resolves, then snapshots the repository.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), StartupError> {
        let app = router(self.state.clone());
        axum::serve(self.listener, app).with_graceful_shutdown(shutdown).await?;
        let repo = self.state.repo.clone();
        tokio::task::spawn_blocking(move || repo.snapshot())
            .await
            .map_err(|e| StartupError::Io(std::io::Error::other(e)))??;
        tracing::info!("repository snapshot written");
        Ok(())
    }
}
