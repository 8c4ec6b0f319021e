//! Refresh-versus-rebuild benchmark under simulated model drift.

use std::collections::HashMap;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{exact_knn, SearchGraph};
use crate::model::{Corpus, Document, EmbeddingVector, Triplet};
use crate::provider::{drift_fraction, embed_corpus, DeterministicTestProvider, EmbeddingProvider};
use crate::refresh::{refresh_from_triplets, RefreshReport};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RefreshBenchConfig {
    /// Fraction of the corpus whose embeddings drift.
    pub drift_fraction: f64,
    /// Drift magnitude in [0, 1] applied to each drifted document.
    pub drift_magnitude: f64,
    pub knn_k: usize,
    pub batch_size: usize,
    /// Recall cutoff.
    pub k: usize,
    /// Queries sampled from the corpus when none are supplied.
    pub sampled_queries: usize,
    pub seed: u64,
}

impl Default for RefreshBenchConfig {
    fn default() -> Self {
        Self {
            drift_fraction: 0.05,
            drift_magnitude: 0.5,
            knn_k: 10,
            batch_size: 64,
            k: 10,
            sampled_queries: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshBenchReport {
    pub docs: usize,
    pub drifted_docs: usize,
    pub drift_fraction: f64,
    pub drift_magnitude: f64,
    pub queries: usize,
    pub recall_k: usize,
    /// Recall of the untouched graph against the drifted ground truth.
    pub stale_recall: f64,
    pub refresh_recall: f64,
    pub refresh_calls: u64,
    pub rebuild_recall: f64,
    pub rebuild_calls: u64,
    /// `rebuild_calls / refresh_calls`.
    pub call_ratio: f64,
    pub refresh: RefreshReport,
    pub zero_drift_recall_before: f64,
    pub zero_drift_recall_after: f64,
    pub zero_drift_delta: f64,
}

/// Mean recall@k of `graph` against exact search over `truth`.
pub fn recall_at<T: Scalar>(
    graph: &SearchGraph<T>,
    truth: &HashMap<String, EmbeddingVector<T>>,
    queries: &[EmbeddingVector<T>],
    k: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for q in queries {
        let exact = exact_knn(truth, q, k)?;
        let found = graph.knn_search(q, k, None)?;
        let hit = found.ids().filter(|id| exact.rank_of(id).is_some()).count();
        total += hit as f64 / exact.len().max(1) as f64;
    }
    Ok(total / queries.len().max(1) as f64)
}

/// Graph members as a corpus in node order, taking text from `corpus` when
/// present.
pub fn graph_corpus<T: Scalar>(graph: &SearchGraph<T>, corpus: Option<&Corpus>) -> Result<Corpus> {
    let docs = graph
        .doc_ids()
        .iter()
        .map(|id| match corpus {
            Some(c) => c
                .get(id)
                .cloned()
                .ok_or_else(|| Error::UnknownDocument(id.clone())),
            None => Ok(Document {
                doc_id: id.clone(),
                text: id.clone(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    Corpus::new("graph", docs)
}

/// Treats the graph's stored embeddings as the starting model, drifts a
/// seeded fraction of documents, then compares a localized refresh seeded by
/// `triplets` with a full re-embed and rebuild. When `queries` is empty,
/// drifted embeddings of sampled documents serve as queries.
pub fn run_refresh_bench<T: Scalar>(
    graph: &SearchGraph<T>,
    corpus: &Corpus,
    triplets: &[Triplet],
    queries: &[EmbeddingVector<T>],
    cfg: &RefreshBenchConfig,
) -> Result<RefreshBenchReport> {
    if !(0.0..=1.0).contains(&cfg.drift_fraction) {
        return Err(Error::InvalidArgument(
            "drift fraction must lie in [0, 1]".into(),
        ));
    }
    let members = graph_corpus(graph, Some(corpus))?;
    let anchors = graph.embeddings();
    let base =
        DeterministicTestProvider::new(cfg.seed, graph.dim())?.with_anchors(anchors.clone())?;

    let drift = drift_fraction(&members, cfg.drift_fraction, cfg.drift_magnitude, cfg.seed);
    let drifted_docs = drift.len();
    let full = base.generation(drift.clone())?;
    let docs: Vec<&Document> = members.documents().iter().collect();
    let truth = embed_corpus(&full, &docs, cfg.batch_size)?;
    let rebuild_calls = full.documents_embedded();

    let queries: Vec<EmbeddingVector<T>> = if queries.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(3);
        members
            .documents()
            .choose_multiple(&mut rng, cfg.sampled_queries)
            .map(|d| truth[&d.doc_id].clone())
            .collect()
    } else {
        queries.to_vec()
    };

    let zero = base.generation(HashMap::new())?;
    let zero_before = recall_at(graph, &anchors, &queries, cfg.k)?;
    let mut g0 = graph.clone();
    refresh_from_triplets(triplets, &zero, &mut g0, &members, cfg.knn_k)?;
    let zero_after = recall_at(&g0, &anchors, &queries, cfg.k)?;

    let drifted = base.generation(drift)?;
    let mut g1 = graph.clone();
    let refresh = refresh_from_triplets(triplets, &drifted, &mut g1, &members, cfg.knn_k)?;
    let refresh_calls = drifted.documents_embedded();

    let rebuilt = SearchGraph::build(&members, &truth, graph.params().clone())?;

    Ok(RefreshBenchReport {
        docs: members.len(),
        drifted_docs,
        drift_fraction: cfg.drift_fraction,
        drift_magnitude: cfg.drift_magnitude,
        queries: queries.len(),
        recall_k: cfg.k,
        stale_recall: recall_at(graph, &truth, &queries, cfg.k)?,
        refresh_recall: recall_at(&g1, &truth, &queries, cfg.k)?,
        refresh_calls,
        rebuild_recall: recall_at(&rebuilt, &truth, &queries, cfg.k)?,
        rebuild_calls,
        call_ratio: rebuild_calls as f64 / refresh_calls.max(1) as f64,
        refresh,
        zero_drift_recall_before: zero_before,
        zero_drift_recall_after: zero_after,
        zero_drift_delta: zero_after - zero_before,
    })
}
