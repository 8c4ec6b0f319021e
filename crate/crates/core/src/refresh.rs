//! Localized graph refresh: probe, 2-hop expansion, batched re-embedding,
//! local join.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{NodeId, SearchGraph};
use crate::model::{Corpus, Document, EmbeddingVector, Triplet};
use crate::provider::EmbeddingProvider;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshRequest {
    #[serde(default)]
    pub positives: Vec<String>,
    #[serde(default)]
    pub negatives: Vec<String>,
    /// Recorded in the request for traceability; does not affect the region.
    #[serde(default)]
    pub queries: Vec<String>,
    #[serde(default = "default_knn_k")]
    pub knn_k: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

fn default_knn_k() -> usize {
    10
}

fn default_batch_size() -> usize {
    64
}

impl Default for RefreshRequest {
    fn default() -> Self {
        Self {
            positives: Vec::new(),
            negatives: Vec::new(),
            queries: Vec::new(),
            knn_k: default_knn_k(),
            batch_size: default_batch_size(),
        }
    }
}

impl RefreshRequest {
    /// P = positives, N = union of negatives, both deduplicated in first-seen
    /// order; Q = query ids.
    pub fn from_triplets(triplets: &[Triplet], knn_k: usize) -> Self {
        let mut req = Self {
            knn_k,
            ..Self::default()
        };
        let mut seen_p = BTreeSet::new();
        let mut seen_n = BTreeSet::new();
        for t in triplets {
            req.queries.push(t.query_id.clone());
            if seen_p.insert(t.positive_id.as_str()) {
                req.positives.push(t.positive_id.clone());
            }
            for n in &t.negative_ids {
                if seen_n.insert(n.as_str()) {
                    req.negatives.push(n.clone());
                }
            }
        }
        req
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshReport {
    pub seeds_found: usize,
    pub region_size: usize,
    pub documents_reembedded: usize,
    pub embed_batches: usize,
    pub graph_version_before: u64,
    pub graph_version_after: u64,
    pub wall_time_ms: f64,
}

/// Region and replacement embeddings computed against one graph version.
#[derive(Debug, Clone)]
pub struct RefreshPlan<T> {
    pub base_version: u64,
    pub seeds: BTreeSet<NodeId>,
    pub region: BTreeSet<NodeId>,
    pub embeddings: BTreeMap<NodeId, EmbeddingVector<T>>,
    pub documents_reembedded: usize,
    pub embed_batches: usize,
}

fn resolve<'a, T: Scalar>(
    graph: &SearchGraph<T>,
    corpus: &'a Corpus,
    ids: impl Iterator<Item = &'a String>,
) -> Result<Vec<(NodeId, &'a Document)>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for id in ids {
        let node = graph
            .node_id(id)
            .ok_or_else(|| Error::UnknownDocument(id.clone()))?;
        let doc = corpus
            .get(id)
            .ok_or_else(|| Error::UnknownDocument(id.clone()))?;
        if seen.insert(node) {
            out.push((node, doc));
        }
    }
    Ok(out)
}

fn embed_batched<T: Scalar>(
    provider: &dyn EmbeddingProvider<T>,
    docs: &[(NodeId, &Document)],
    batch_size: usize,
    out: &mut BTreeMap<NodeId, EmbeddingVector<T>>,
) -> Result<usize> {
    let mut batches = 0;
    for chunk in docs.chunks(batch_size) {
        let refs: Vec<&Document> = chunk.iter().map(|(_, d)| *d).collect();
        let embs = provider.embed_documents(&refs)?;
        if embs.len() != chunk.len() {
            return Err(Error::Provider(format!(
                "provider returned {} embeddings for {} documents",
                embs.len(),
                chunk.len()
            )));
        }
        for ((node, _), e) in chunk.iter().zip(embs) {
            out.insert(*node, e);
        }
        batches += 1;
    }
    Ok(batches)
}

/// Read-only half of a refresh. The seed set is every P and N node plus the
/// `knn_k` nearest neighbors of its current-provider embedding; the region is
/// the 2-hop closure of the seeds.
pub fn plan_refresh<T: Scalar>(
    request: &RefreshRequest,
    provider: &dyn EmbeddingProvider<T>,
    graph: &SearchGraph<T>,
    corpus: &Corpus,
) -> Result<RefreshPlan<T>> {
    if request.knn_k == 0 || request.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "knn_k and batch_size must be >= 1".into(),
        ));
    }
    if provider.dimension() != graph.dim() {
        return Err(Error::DimensionMismatch {
            expected: graph.dim(),
            actual: provider.dimension(),
        });
    }
    let probes = resolve(
        graph,
        corpus,
        request.positives.iter().chain(&request.negatives),
    )?;
    let mut plan = RefreshPlan {
        base_version: graph.version(),
        seeds: BTreeSet::new(),
        region: BTreeSet::new(),
        embeddings: BTreeMap::new(),
        documents_reembedded: 0,
        embed_batches: 0,
    };
    if probes.is_empty() {
        return Ok(plan);
    }
    plan.embed_batches +=
        embed_batched(provider, &probes, request.batch_size, &mut plan.embeddings)?;
    for (node, _) in &probes {
        plan.seeds.insert(*node);
        let hits = graph.knn_search(&plan.embeddings[node], request.knn_k, None)?;
        for id in hits.ids() {
            plan.seeds
                .insert(graph.node_id(id).expect("hit is a graph node"));
        }
    }
    plan.region = graph.expand_2hop(&plan.seeds)?;

    let rest: Vec<(NodeId, &Document)> = plan
        .region
        .iter()
        .filter(|n| !plan.embeddings.contains_key(n))
        .map(|&n| {
            let id = graph.doc_id(n);
            corpus
                .get(id)
                .map(|d| (n, d))
                .ok_or_else(|| Error::UnknownDocument(id.to_owned()))
        })
        .collect::<Result<_>>()?;
    plan.embed_batches += embed_batched(provider, &rest, request.batch_size, &mut plan.embeddings)?;
    plan.documents_reembedded = plan.embeddings.len();
    Ok(plan)
}

fn report<T: Scalar>(plan: &RefreshPlan<T>, after: u64, start: Instant) -> RefreshReport {
    RefreshReport {
        seeds_found: plan.seeds.len(),
        region_size: plan.region.len(),
        documents_reembedded: plan.documents_reembedded,
        embed_batches: plan.embed_batches,
        graph_version_before: plan.base_version,
        graph_version_after: after,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    }
}

/// Runs a full refresh on an exclusively held graph. On error the graph is
/// left untouched.
pub fn refresh_graph<T: Scalar>(
    request: &RefreshRequest,
    provider: &dyn EmbeddingProvider<T>,
    graph: &mut SearchGraph<T>,
    corpus: &Corpus,
) -> Result<RefreshReport> {
    let start = Instant::now();
    let plan = plan_refresh(request, provider, graph, corpus)?;
    graph.local_join_update(&plan.region, &plan.embeddings)?;
    Ok(report(&plan, graph.version(), start))
}

/// Refresh on a shared graph: planning and provider I/O run under the read
/// lock, the join under the write lock. Fails with `ConcurrentModification`
/// if another writer got in between.
pub fn refresh_shared<T: Scalar>(
    request: &RefreshRequest,
    provider: &dyn EmbeddingProvider<T>,
    graph: &RwLock<SearchGraph<T>>,
    corpus: &Corpus,
) -> Result<RefreshReport> {
    let start = Instant::now();
    let plan = {
        let g = graph.read();
        plan_refresh(request, provider, &g, corpus)?
    };
    apply_plan(&plan, graph, start)
}

/// Applies a plan under the write lock if the graph is still at the version
/// the plan was computed against.
pub fn apply_plan<T: Scalar>(
    plan: &RefreshPlan<T>,
    graph: &RwLock<SearchGraph<T>>,
    start: Instant,
) -> Result<RefreshReport> {
    let mut g = graph.write();
    if g.version() != plan.base_version {
        return Err(Error::ConcurrentModification);
    }
    g.local_join_update(&plan.region, &plan.embeddings)?;
    Ok(report(plan, g.version(), start))
}

pub fn refresh_from_triplets<T: Scalar>(
    triplets: &[Triplet],
    provider: &dyn EmbeddingProvider<T>,
    graph: &mut SearchGraph<T>,
    corpus: &Corpus,
    knn_k: usize,
) -> Result<RefreshReport> {
    refresh_graph(
        &RefreshRequest::from_triplets(triplets, knn_k),
        provider,
        graph,
        corpus,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{build_index, IndexParams};
    use crate::provider::{embed_corpus, DeterministicTestProvider};
    use std::collections::HashMap;

    fn corpus(n: usize) -> Corpus {
        Corpus::new(
            "c",
            (0..n)
                .map(|i| Document {
                    doc_id: format!("d{i:04}"),
                    text: format!("text {i}"),
                })
                .collect(),
        )
        .unwrap()
    }

    fn setup(n: usize, dim: usize) -> (Corpus, DeterministicTestProvider<f32>, SearchGraph<f32>) {
        let c = corpus(n);
        let p = DeterministicTestProvider::new(5, dim).unwrap();
        let docs: Vec<&Document> = c.documents().iter().collect();
        let emb = embed_corpus(&p, &docs, 64).unwrap();
        let g = build_index(&c, &emb, IndexParams::default()).unwrap();
        (c, p, g)
    }

    fn triplet(q: &str, p: &str, n: &[&str]) -> Triplet {
        Triplet {
            query_id: q.into(),
            query_text: format!("query {q}"),
            positive_id: p.into(),
            negative_ids: n.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn empty_request_is_noop() {
        let (c, p, mut g) = setup(20, 8);
        let before = g.clone();
        let r = refresh_graph(&RefreshRequest::default(), &p, &mut g, &c).unwrap();
        assert_eq!(r.region_size, 0);
        assert_eq!(r.documents_reembedded, 0);
        assert_eq!(r.graph_version_after, r.graph_version_before);
        assert_eq!(g, before);
        let r = refresh_from_triplets(&[], &p, &mut g, &c, 10).unwrap();
        assert_eq!(r.region_size, 0);
    }

    #[test]
    fn two_node_graph_refreshes_both() {
        let (c, p, mut g) = setup(2, 8);
        let req = RefreshRequest {
            positives: vec!["d0000".into()],
            ..RefreshRequest::default()
        };
        let r = refresh_graph(&req, &p, &mut g, &c).unwrap();
        assert_eq!(r.region_size, 2);
        assert_eq!(r.documents_reembedded, 2);
        assert_eq!(r.graph_version_after, 1);
    }

    #[test]
    fn triplet_mapping_and_dedup() {
        let one = RefreshRequest::from_triplets(&[triplet("q1", "a", &["b", "c"])], 10);
        assert_eq!(one.positives, vec!["a"]);
        assert_eq!(one.negatives, vec!["b", "c"]);
        assert_eq!(one.queries, vec!["q1"]);

        let batch: Vec<Triplet> = (0..16)
            .map(|i| {
                let p = format!("p{}", i % 4);
                let n1 = format!("n{}", i % 3);
                let n2 = format!("n{}", (i + 1) % 5);
                triplet(&format!("q{i}"), &p, &[&n1, &n2])
            })
            .collect();
        let req = RefreshRequest::from_triplets(&batch, 10);
        assert_eq!(req.positives, vec!["p0", "p1", "p2", "p3"]);
        assert_eq!(req.negatives, vec!["n0", "n1", "n2", "n3", "n4"]);
        assert_eq!(req.queries.len(), 16);
    }

    #[test]
    fn unknown_id_fails_before_embedding() {
        let (c, p, mut g) = setup(20, 8);
        let before = g.clone();
        let req = RefreshRequest {
            positives: vec!["d0001".into()],
            negatives: vec!["nope".into()],
            ..RefreshRequest::default()
        };
        assert!(matches!(
            refresh_graph(&req, &p, &mut g, &c),
            Err(Error::UnknownDocument(_))
        ));
        assert_eq!(p.documents_embedded(), 20);
        assert_eq!(g, before);
    }

    struct Failing(DeterministicTestProvider<f32>, usize);

    impl EmbeddingProvider<f32> for Failing {
        fn dimension(&self) -> usize {
            EmbeddingProvider::<f32>::dimension(&self.0)
        }
        fn embed_documents(&self, docs: &[&Document]) -> Result<Vec<EmbeddingVector<f32>>> {
            if self.0.documents_embedded() as usize + docs.len() > self.1 {
                return Err(Error::Provider("down".into()));
            }
            self.0.embed_documents(docs)
        }
        fn embed_queries(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector<f32>>> {
            self.0.embed_queries(texts)
        }
        fn documents_embedded(&self) -> u64 {
            self.0.documents_embedded()
        }
    }

    #[test]
    fn provider_failure_leaves_graph_unchanged() {
        let (c, p, mut g) = setup(300, 8);
        let before = g.clone();
        let drifted = p
            .generation(
                c.documents()
                    .iter()
                    .map(|d| (d.doc_id.clone(), 0.4))
                    .collect(),
            )
            .unwrap();
        let failing = Failing(drifted, 5);
        let req = RefreshRequest {
            positives: vec!["d0001".into(), "d0002".into()],
            batch_size: 4,
            ..RefreshRequest::default()
        };
        assert!(matches!(
            refresh_graph(&req, &failing, &mut g, &c),
            Err(Error::Provider(_))
        ));
        assert_eq!(g, before);
    }

    #[test]
    fn same_provider_refresh_keeps_embeddings_and_weights() {
        let (c, p, mut g) = setup(500, 16);
        let before = g.clone();
        let req = RefreshRequest {
            positives: vec!["d0003".into(), "d0100".into()],
            negatives: vec!["d0200".into()],
            ..RefreshRequest::default()
        };
        let r = refresh_graph(&req, &p, &mut g, &c).unwrap();
        assert!(r.region_size >= r.seeds_found);
        assert_eq!(r.graph_version_after, r.graph_version_before + 1);
        g.check_invariants(1e-6).unwrap();
        for n in 0..500u32 {
            let (a, b) = (before.vector(n), g.vector(n));
            assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-6));
            for e in g.neighbors(n, 0) {
                if let Some(old) = before.neighbors(n, 0).iter().find(|o| o.target == e.target) {
                    assert!((old.weight - e.weight).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn region_respects_closure_bound() {
        let (c, p, mut g) = setup(800, 16);
        let req = RefreshRequest {
            positives: vec!["d0010".into()],
            negatives: vec!["d0020".into(), "d0030".into()],
            knn_k: 5,
            ..RefreshRequest::default()
        };
        let r = refresh_graph(&req, &p, &mut g, &c).unwrap();
        let d = g.max_degree(0);
        assert!(r.seeds_found <= 3 * (5 + 1));
        assert!(r.region_size <= r.seeds_found * (1 + d + d * d));
        assert_eq!(
            r.embed_batches,
            1 + r.documents_reembedded.saturating_sub(3).div_ceil(64)
        );
    }

    #[test]
    fn shared_refresh_detects_concurrent_writer() {
        let (c, p, g) = setup(100, 8);
        let shared = RwLock::new(g);
        let req = RefreshRequest {
            positives: vec!["d0001".into()],
            ..RefreshRequest::default()
        };
        let r = refresh_shared(&req, &p, &shared, &c).unwrap();
        assert_eq!(r.graph_version_after, 1);

        let plan = plan_refresh(&req, &p, &shared.read(), &c).unwrap();
        refresh_shared(&req, &p, &shared, &c).unwrap();
        let snapshot = shared.read().clone();
        assert!(matches!(
            apply_plan(&plan, &shared, Instant::now()),
            Err(Error::ConcurrentModification)
        ));
        assert_eq!(*shared.read(), snapshot);
    }

    #[test]
    fn drifted_positive_is_found_after_refresh() {
        let (c, p, mut g) = setup(1000, 16);
        let drifted = p
            .generation(HashMap::from([("d0042".to_string(), 0.9)]))
            .unwrap();
        let new = drifted
            .embed_documents(&[c.get("d0042").unwrap()])
            .unwrap()
            .remove(0);
        let req = RefreshRequest {
            positives: vec!["d0042".into()],
            ..RefreshRequest::default()
        };
        refresh_graph(&req, &drifted, &mut g, &c).unwrap();
        let hits = g.knn_search(&new, 1, None).unwrap();
        assert_eq!(hits.hits[0].doc_id, "d0042");
        assert!((hits.hits[0].similarity - 1.0).abs() < 1e-6);
    }
}
