use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use srr3_core::env::EnvironmentConfig;
use srr3_core::{Error, Result};

pub const ENV_BIND: &str = "SRR3_BIND";
pub const ENV_INDEX_PATH: &str = "SRR3_INDEX_PATH";
pub const ENV_CONFIG: &str = "SRR3_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderSettings {
    /// Base URL of a remote embedding server; the deterministic test
    /// provider is used when absent.
    pub url: Option<String>,
    /// Required for a remote provider without an index to infer it from.
    pub dimension: Option<usize>,
    pub seed: u64,
    pub timeout_ms: u64,
    pub batch_size: usize,
    pub retries: u32,
}

impl Default for ProviderSettings {
    fn default() -> Self {
        Self {
            url: None,
            dimension: None,
            seed: 0,
            timeout_ms: 30_000,
            batch_size: 64,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    pub index_path: Option<PathBuf>,
    pub corpus_path: Option<PathBuf>,
    pub triplets_path: Option<PathBuf>,
    pub mixture_path: Option<PathBuf>,
    pub embeddings_path: Option<PathBuf>,
    pub provider: ProviderSettings,
    pub environment: EnvironmentConfig,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            index_path: None,
            corpus_path: None,
            triplets_path: None,
            mixture_path: None,
            embeddings_path: None,
            provider: ProviderSettings::default(),
            environment: EnvironmentConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl ServerConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.index_path,
            &mut cfg.corpus_path,
            &mut cfg.triplets_path,
            &mut cfg.mixture_path,
            &mut cfg.embeddings_path,
            &mut cfg.environment.prompt_template,
        ] {
            rebase(base, p);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// File named by `explicit` or `SRR3_CONFIG` (defaults when neither is
    /// set), then `SRR3_BIND` and `SRR3_INDEX_PATH` overrides.
    pub fn resolve(explicit: Option<&Path>) -> Result<Self> {
        let from_env = std::env::var_os(ENV_CONFIG).map(PathBuf::from);
        let mut cfg = match explicit.map(Path::to_path_buf).or(from_env) {
            Some(p) => Self::load(&p)?,
            None => Self::default(),
        };
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn apply_env(&mut self, var: impl Fn(&str) -> Option<String>) {
        if let Some(b) = var(ENV_BIND) {
            self.bind = b;
        }
        if let Some(p) = var(ENV_INDEX_PATH) {
            self.index_path = Some(PathBuf::from(p));
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.triplets_path.is_some() && self.mixture_path.is_some() {
            return Err(Error::InvalidArgument(
                "set at most one of triplets_path and mixture_path".into(),
            ));
        }
        self.environment.validate()
    }
}
