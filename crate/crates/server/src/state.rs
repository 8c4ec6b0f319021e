use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use srr3_core::bench::graph_corpus;
use srr3_core::env::Environment;
use srr3_core::index::{load_index, SearchGraph};
use srr3_core::model::{
    load_corpus, load_embeddings, load_mixture, load_triplets, DatasetSource, SourceTriplets,
};
use srr3_core::provider::{
    DeterministicTestProvider, EmbeddingProvider, RemoteConfig, RemoteProvider,
};
use srr3_core::{Error, Result};

use crate::api::{BuildIndexResponse, BuildState, IndexStatus};
use crate::config::ServerConfig;

/// Scalar type used by the service. Embeddings travel as JSON doubles and
/// are scored without narrowing.
pub type Real = f64;

const DEFAULT_DIMENSION: usize = 64;

pub struct IndexEntry {
    pub state: BuildState,
    pub inserted: Arc<AtomicUsize>,
    pub total: Arc<AtomicUsize>,
    pub result: Option<BuildIndexResponse>,
    pub error: Option<String>,
    pub graph: Option<Arc<SearchGraph<Real>>>,
}

impl IndexEntry {
    pub fn status(&self, id: &str) -> IndexStatus {
        IndexStatus {
            index_id: id.to_owned(),
            state: self.state,
            inserted: self.inserted.load(Ordering::Relaxed),
            total: self.total.load(Ordering::Relaxed),
            result: self.result.clone(),
            error: self.error.clone(),
        }
    }
}

pub struct AppState {
    pub env: Option<Arc<Environment<Real>>>,
    pub provider: Arc<dyn EmbeddingProvider<Real>>,
    pub indexes: Mutex<BTreeMap<String, IndexEntry>>,
}

impl AppState {
    pub fn new(
        env: Option<Arc<Environment<Real>>>,
        provider: Arc<dyn EmbeddingProvider<Real>>,
    ) -> Self {
        Self {
            env,
            provider,
            indexes: Mutex::new(BTreeMap::new()),
        }
    }

    /// Loads data named by the config and builds the environment when a
    /// triplet source is configured.
    pub fn from_config(cfg: &ServerConfig) -> Result<Self> {
        cfg.validate()?;
        let index = cfg
            .index_path
            .as_deref()
            .map(load_index::<Real>)
            .transpose()?;
        let corpus = match (&cfg.corpus_path, &index) {
            (Some(p), _) => Some(load_corpus(p)?),
            (None, Some(g)) => Some(graph_corpus(g, None)?),
            (None, None) => None,
        };
        let anchors: Option<HashMap<_, _>> = match (&cfg.embeddings_path, &index) {
            (Some(p), _) => Some(load_embeddings::<Real>(p)?),
            (None, Some(g)) => Some(g.embeddings()),
            (None, None) => None,
        };
        let anchor_dim = anchors
            .as_ref()
            .and_then(|a| a.values().next().map(|e| e.dim()));
        let dim = cfg
            .provider
            .dimension
            .or(anchor_dim)
            .unwrap_or(DEFAULT_DIMENSION);

        let provider: Arc<dyn EmbeddingProvider<Real>> = match &cfg.provider.url {
            Some(url) => Arc::new(RemoteProvider::new(RemoteConfig {
                endpoint: url.clone(),
                dimension: dim,
                timeout_ms: cfg.provider.timeout_ms,
                batch_size: cfg.provider.batch_size,
                retries: cfg.provider.retries,
            })?),
            None => {
                let p = DeterministicTestProvider::new(cfg.provider.seed, dim)?;
                Arc::new(match anchors {
                    Some(a) => p.with_anchors(a)?,
                    None => p,
                })
            }
        };

        let sources = match (&cfg.triplets_path, &cfg.mixture_path, &corpus) {
            (None, None, _) => None,
            (_, _, None) => {
                return Err(Error::InvalidArgument(
                    "triplets need a corpus_path or index_path".into(),
                ))
            }
            (Some(t), None, Some(c)) => Some(vec![SourceTriplets {
                source: DatasetSource::new(c.name().to_owned(), 1.0)?,
                triplets: load_triplets(t, c)?,
            }]),
            (None, Some(m), Some(c)) => Some(load_mixture(m, c)?),
            (Some(_), Some(_), _) => unreachable!("rejected by validate"),
        };
        let env = match (sources, corpus) {
            (Some(s), Some(c)) => Some(Arc::new(Environment::new(
                c,
                s,
                provider.clone(),
                cfg.environment.clone(),
            )?)),
            _ => None,
        };
        Ok(Self::new(env, provider))
    }
}
