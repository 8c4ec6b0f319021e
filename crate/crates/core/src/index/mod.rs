//! Approximate nearest-neighbor index: HNSW construction and search, 2-hop
//! expansion, localized re-linking, snapshots and the exhaustive oracle.
mod graph;
mod join;
mod snapshot;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub use graph::{Edge, IndexParams, NodeId, SearchGraph};
pub use join::JoinStats;
pub use snapshot::{load_index, save_index, SnapshotMeta, FORMAT_VERSION, MAGIC};

use crate::error::Result;
use crate::model::{cosine_similarity, Corpus, EmbeddingVector};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Hit<T> {
    pub doc_id: String,
    pub similarity: T,
    /// 1-based.
    pub rank: usize,
}

/// Ranked hits: similarity descending, ties by doc id ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SearchResult<T> {
    pub hits: Vec<Hit<T>>,
}

impl<T> Default for SearchResult<T> {
    fn default() -> Self {
        Self { hits: Vec::new() }
    }
}

impl<T: Scalar> SearchResult<T> {
    /// Sorts `(doc_id, similarity)` pairs by the ranking contract and keeps `k`.
    pub fn from_scored<'a>(scored: impl IntoIterator<Item = (&'a str, T)>, k: usize) -> Self {
        let mut all: Vec<(&str, T)> = scored.into_iter().collect();
        all.sort_by(|a, b| {
            b.1.partial_cmp(&a.1)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.0.cmp(b.0))
        });
        all.truncate(k);
        Self {
            hits: all
                .into_iter()
                .enumerate()
                .map(|(i, (id, sim))| Hit {
                    doc_id: id.to_owned(),
                    similarity: sim,
                    rank: i + 1,
                })
                .collect(),
        }
    }

    /// Builds a result from ids already in rank order (similarities unknown).
    pub fn from_ranked_ids<S: AsRef<str>>(ids: &[S]) -> Self {
        Self {
            hits: ids
                .iter()
                .enumerate()
                .map(|(i, id)| Hit {
                    doc_id: id.as_ref().to_owned(),
                    similarity: T::zero(),
                    rank: i + 1,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hits.iter().map(|h| h.doc_id.as_str())
    }

    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.hits
            .iter()
            .find(|h| h.doc_id == doc_id)
            .map(|h| h.rank)
    }
}

/// Builds an index over `corpus`; see [`SearchGraph::build`].
pub fn build_index<T: Scalar>(
    corpus: &Corpus,
    embeddings: &HashMap<String, EmbeddingVector<T>>,
    params: IndexParams,
) -> Result<SearchGraph<T>> {
    SearchGraph::build(corpus, embeddings, params)
}

/// Exhaustive k-nearest-neighbor scan with the same ordering contract as
/// [`SearchGraph::knn_search`].
pub fn exact_knn<T: Scalar>(
    embeddings: &HashMap<String, EmbeddingVector<T>>,
    query: &EmbeddingVector<T>,
    k: usize,
) -> Result<SearchResult<T>> {
    let mut scored = Vec::with_capacity(embeddings.len());
    for (id, e) in embeddings {
        scored.push((id.as_str(), cosine_similarity(e, query)?));
    }
    Ok(SearchResult::from_scored(scored, k))
}
