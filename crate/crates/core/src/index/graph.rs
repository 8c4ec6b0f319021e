//! Layered proximity graph (HNSW) over unit-normalized document embeddings.
//!
//! Level 0 holds every node and is kept strictly undirected: whenever a link
//! is added both directions are written, and when a node exceeds its degree
//! cap the weakest link is removed from both endpoints. Upper levels form a
//! directed routing skeleton as in the original HNSW construction.
//!
//! Every similarity in this module is the cosine `dot(a, b) / (|a| |b|)`
//! clamped to [-1, 1], computed with the same expression the exact oracle
//! uses, so a full scan of the graph reproduces [`super::exact_knn`] bit for
//! bit.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeSet, BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SearchResult;
use crate::error::{Error, Result};
use crate::model::{clamp_unit, dot, ingest_unit, Corpus, EmbeddingVector};
use crate::scalar::Scalar;

pub type NodeId = u32;

/// Highest level a node can be assigned to.
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexParams {
    /// Degree cap on upper levels; the base level allows `2 * m`.
    #[serde(alias = "M")]
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub level_multiplier: f64,
    pub seed: u64,
}

impl Default for IndexParams {
    fn default() -> Self {
        Self::with_m(16)
    }
}

impl IndexParams {
    /// Defaults with a custom `m`; the level multiplier follows as `1 / ln(m)`.
    pub fn with_m(m: usize) -> Self {
        Self {
            m,
            ef_construction: 200,
            ef_search: 128,
            level_multiplier: 1.0 / (m.max(2) as f64).ln(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 2 {
            return Err(Error::InvalidArgument(format!(
                "M must be >= 2, got {}",
                self.m
            )));
        }
        if self.ef_construction < self.m {
            return Err(Error::InvalidArgument(format!(
                "ef_construction ({}) must be >= M ({})",
                self.ef_construction, self.m
            )));
        }
        if self.ef_search < 1 {
            return Err(Error::InvalidArgument("ef_search must be >= 1".into()));
        }
        if !(self.level_multiplier.is_finite() && self.level_multiplier > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "level_multiplier must be positive, got {}",
                self.level_multiplier
            )));
        }
        Ok(())
    }
}

/// Directed adjacency entry with the cached cosine similarity of its endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge<T> {
    pub target: NodeId,
    pub weight: T,
}

/// Search candidate; orders by similarity, then prefers the lower node id.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scored<T> {
    pub sim: T,
    pub node: NodeId,
}

impl<T: Scalar> PartialEq for Scored<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Scalar> Eq for Scored<T> {}

impl<T: Scalar> PartialOrd for Scored<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Scalar> Ord for Scored<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .partial_cmp(&other.sim)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

/// Generation-stamped visited set, reusable across searches.
pub(crate) struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    pub fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self, n: usize) {
        if self.marks.len() < n {
            self.marks.resize(n, 0);
        }
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.iter_mut().for_each(|m| *m = 0);
            self.epoch = 1;
        }
    }

    /// Returns true the first time `node` is seen in this epoch.
    fn insert(&mut self, node: NodeId) -> bool {
        let m = &mut self.marks[node as usize];
        if *m == self.epoch {
            false
        } else {
            *m = self.epoch;
            true
        }
    }
}

/// The evolving search graph: node set, layered adjacency, cached edge
/// weights, current embeddings and an update counter.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchGraph<T> {
    pub(crate) dim: usize,
    pub(crate) params: IndexParams,
    pub(crate) version: u64,
    pub(crate) doc_ids: Vec<String>,
    pub(crate) lookup: HashMap<String, NodeId>,
    /// Row-major `n x dim`, unit-normalized rows.
    pub(crate) vectors: Vec<T>,
    pub(crate) norms: Vec<T>,
    pub(crate) levels: Vec<u8>,
    /// `links[node][level]`, each list sorted by target.
    pub(crate) links: Vec<Vec<Vec<Edge<T>>>>,
    pub(crate) entry: Option<NodeId>,
}

impl<T: Scalar> SearchGraph<T> {
    pub fn empty(dim: usize, params: IndexParams) -> Result<Self> {
        params.validate()?;
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            params,
            version: 0,
            doc_ids: Vec::new(),
            lookup: HashMap::new(),
            vectors: Vec::new(),
            norms: Vec::new(),
            levels: Vec::new(),
            links: Vec::new(),
            entry: None,
        })
    }

    /// Builds the graph over `corpus` in corpus order.
    pub fn build(
        corpus: &Corpus,
        embeddings: &HashMap<String, EmbeddingVector<T>>,
        params: IndexParams,
    ) -> Result<Self> {
        Self::build_with_progress(corpus, embeddings, params, |_| {})
    }

    /// Like [`Self::build`], calling `progress(inserted)` after every node.
    pub fn build_with_progress(
        corpus: &Corpus,
        embeddings: &HashMap<String, EmbeddingVector<T>>,
        params: IndexParams,
        mut progress: impl FnMut(usize),
    ) -> Result<Self> {
        params.validate()?;
        let mut items = Vec::with_capacity(corpus.len());
        for doc in corpus.documents() {
            let e = embeddings
                .get(&doc.doc_id)
                .ok_or_else(|| Error::MissingEmbedding(doc.doc_id.clone()))?;
            items.push((doc.doc_id.clone(), e));
        }
        let dim = items[0].1.dim();
        let mut graph = Self::empty(dim, params)?;
        graph.doc_ids.reserve(items.len());
        graph.vectors.reserve(items.len() * dim);
        for (id, e) in &items {
            e.expect_dim(dim)?;
            let unit = ingest_unit(e)?;
            graph.norms.push(unit.norm());
            graph.vectors.extend_from_slice(unit.as_slice());
            graph
                .lookup
                .insert(id.clone(), graph.doc_ids.len() as NodeId);
            graph.doc_ids.push(id.clone());
        }

        let mut rng = ChaCha8Rng::seed_from_u64(graph.params.seed);
        let mut visited = Visited::new(items.len());
        for node in 0..items.len() as NodeId {
            let u: f64 = rng.random();
            let level = ((-(1.0 - u).ln()) * graph.params.level_multiplier).floor() as usize;
            graph.insert(node, level.min(MAX_LEVEL), &mut visited);
            progress(node as usize + 1);
        }
        Ok(graph)
    }

    pub fn len(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn params(&self) -> &IndexParams {
        &self.params
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn entry_point(&self) -> Option<NodeId> {
        self.entry
    }

    /// Degree cap per level: `2M` on the base layer, `M` above.
    pub fn max_degree(&self, level: usize) -> usize {
        if level == 0 {
            2 * self.params.m
        } else {
            self.params.m
        }
    }

    pub fn node_id(&self, doc_id: &str) -> Option<NodeId> {
        self.lookup.get(doc_id).copied()
    }

    pub fn doc_id(&self, node: NodeId) -> &str {
        &self.doc_ids[node as usize]
    }

    pub fn doc_ids(&self) -> &[String] {
        &self.doc_ids
    }

    pub fn level(&self, node: NodeId) -> usize {
        self.levels[node as usize] as usize
    }

    pub fn top_level(&self) -> usize {
        self.entry.map_or(0, |e| self.level(e))
    }

    pub fn vector(&self, node: NodeId) -> &[T] {
        let s = node as usize * self.dim;
        &self.vectors[s..s + self.dim]
    }

    pub fn embedding(&self, node: NodeId) -> EmbeddingVector<T> {
        EmbeddingVector::new(self.vector(node).to_vec()).expect("stored vectors are finite")
    }

    pub fn embedding_of(&self, doc_id: &str) -> Option<EmbeddingVector<T>> {
        self.node_id(doc_id).map(|n| self.embedding(n))
    }

    /// Current embeddings keyed by doc id.
    pub fn embeddings(&self) -> HashMap<String, EmbeddingVector<T>> {
        (0..self.len() as NodeId)
            .map(|n| (self.doc_ids[n as usize].clone(), self.embedding(n)))
            .collect()
    }

    pub fn neighbors(&self, node: NodeId, level: usize) -> &[Edge<T>] {
        self.links[node as usize]
            .get(level)
            .map_or(&[][..], |l| l.as_slice())
    }

    pub fn base_neighbors(&self, node: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.neighbors(node, 0).iter().map(|e| e.target)
    }

    /// Number of undirected base-layer edges.
    pub fn base_edge_count(&self) -> usize {
        self.links.iter().map(|l| l[0].len()).sum::<usize>() / 2
    }

    pub(crate) fn check_node(&self, node: NodeId) -> Result<()> {
        if (node as usize) < self.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(node))
        }
    }

    #[inline]
    pub(crate) fn sim_nodes(&self, a: NodeId, b: NodeId) -> T {
        clamp_unit(
            dot(self.vector(a), self.vector(b)) / (self.norms[a as usize] * self.norms[b as usize]),
        )
    }

    #[inline]
    pub(crate) fn sim_query(&self, node: NodeId, q: &[T], q_norm: T) -> T {
        clamp_unit(dot(self.vector(node), q) / (self.norms[node as usize] * q_norm))
    }

    pub(crate) fn set_vector(&mut self, node: NodeId, unit: &EmbeddingVector<T>) {
        let s = node as usize * self.dim;
        self.vectors[s..s + self.dim].copy_from_slice(unit.as_slice());
        self.norms[node as usize] = unit.norm();
    }

    /// Beam search over one level; returns up to `ef` nodes, best first.
    pub(crate) fn search_level(
        &self,
        mut score: impl FnMut(NodeId) -> T,
        entries: &[NodeId],
        ef: usize,
        level: usize,
        visited: &mut Visited,
    ) -> Vec<Scored<T>> {
        visited.reset(self.len());
        let mut candidates: BinaryHeap<Scored<T>> = BinaryHeap::new();
        let mut results: BinaryHeap<Reverse<Scored<T>>> = BinaryHeap::new();
        for &e in entries {
            if visited.insert(e) {
                let s = Scored {
                    sim: score(e),
                    node: e,
                };
                candidates.push(s);
                results.push(Reverse(s));
            }
        }
        while results.len() > ef {
            results.pop();
        }
        while let Some(c) = candidates.pop() {
            let worst = results.peek().expect("non-empty").0;
            if c < worst && results.len() >= ef {
                break;
            }
            for edge in self.neighbors(c.node, level) {
                if !visited.insert(edge.target) {
                    continue;
                }
                let s = Scored {
                    sim: score(edge.target),
                    node: edge.target,
                };
                if results.len() < ef || s > results.peek().expect("non-empty").0 {
                    candidates.push(s);
                    results.push(Reverse(s));
                    if results.len() > ef {
                        results.pop();
                    }
                }
            }
        }
        let mut out: Vec<_> = results.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    /// Greedy descent from the entry point down to `stop_level + 1`.
    fn descend(&self, mut score: impl FnMut(NodeId) -> T, stop_level: usize) -> Option<NodeId> {
        let mut cur = self.entry?;
        let mut cur_sim = score(cur);
        for level in (stop_level + 1..=self.top_level()).rev() {
            loop {
                let mut best = Scored {
                    sim: cur_sim,
                    node: cur,
                };
                for edge in self.neighbors(cur, level) {
                    let cand = Scored {
                        sim: score(edge.target),
                        node: edge.target,
                    };
                    if cand > best {
                        best = cand;
                    }
                }
                if best.node == cur {
                    break;
                }
                cur = best.node;
                cur_sim = best.sim;
            }
        }
        Some(cur)
    }

    fn insert(&mut self, node: NodeId, level: usize, visited: &mut Visited) {
        self.levels.push(level as u8);
        self.links.push(vec![Vec::new(); level + 1]);
        let Some(_) = self.entry else {
            self.entry = Some(node);
            return;
        };
        let top = self.top_level();
        let q = self.vector(node).to_vec();
        let qn = self.norms[node as usize];
        let mut eps = vec![self
            .descend(|n| self.sim_query(n, &q, qn), level)
            .expect("entry exists")];
        for lc in (0..=level.min(top)).rev() {
            let found = self.search_level(
                |n| self.sim_query(n, &q, qn),
                &eps,
                self.params.ef_construction,
                lc,
                visited,
            );
            let chosen = self.select_diverse(&found, self.params.m);
            for &nb in &chosen {
                if lc == 0 {
                    self.link_base(node, nb, None);
                } else {
                    self.link_upper(node, nb, lc);
                }
            }
            eps = found.iter().map(|s| s.node).collect();
        }
        if level > top {
            self.entry = Some(node);
        }
    }

    /// Neighbor selection heuristic: prefer candidates closer to the query than
    /// to anything already chosen, then fill up with the best of the rest.
    pub(crate) fn select_diverse(&self, found: &[Scored<T>], m: usize) -> Vec<NodeId> {
        let mut chosen: Vec<NodeId> = Vec::with_capacity(m);
        let mut skipped = Vec::new();
        for c in found {
            if chosen.len() >= m {
                break;
            }
            if chosen.iter().all(|&r| self.sim_nodes(c.node, r) < c.sim) {
                chosen.push(c.node);
            } else {
                skipped.push(c.node);
            }
        }
        for s in skipped {
            if chosen.len() >= m {
                break;
            }
            chosen.push(s);
        }
        chosen
    }

    fn has_link(&self, a: NodeId, b: NodeId, level: usize) -> bool {
        self.links[a as usize][level]
            .binary_search_by_key(&b, |e| e.target)
            .is_ok()
    }

    fn push_link(&mut self, a: NodeId, b: NodeId, level: usize, weight: T) {
        let list = &mut self.links[a as usize][level];
        if let Err(pos) = list.binary_search_by_key(&b, |e| e.target) {
            list.insert(pos, Edge { target: b, weight });
        }
    }

    fn remove_link(&mut self, a: NodeId, b: NodeId, level: usize) {
        let list = &mut self.links[a as usize][level];
        if let Ok(pos) = list.binary_search_by_key(&b, |e| e.target) {
            list.remove(pos);
        }
    }

    pub(crate) fn unlink_base(&mut self, a: NodeId, b: NodeId) {
        self.remove_link(a, b, 0);
        self.remove_link(b, a, 0);
    }

    /// Adds the undirected base link `a - b`, then trims any endpoint above
    /// its cap by dropping its weakest link in both directions. With
    /// `droppable` set, only links to nodes in that set may be dropped.
    pub(crate) fn link_base(&mut self, a: NodeId, b: NodeId, droppable: Option<&BTreeSet<NodeId>>) {
        if a == b || self.has_link(a, b, 0) {
            return;
        }
        let w = self.sim_nodes(a, b);
        self.push_link(a, b, 0, w);
        self.push_link(b, a, 0, w);
        let cap = self.max_degree(0);
        for p in [a, b] {
            if self.links[p as usize][0].len() <= cap {
                continue;
            }
            let weakest = self.links[p as usize][0]
                .iter()
                .filter(|e| droppable.is_none_or(|d| d.contains(&e.target)))
                .min_by(|x, y| {
                    Scored {
                        sim: x.weight,
                        node: x.target,
                    }
                    .cmp(&Scored {
                        sim: y.weight,
                        node: y.target,
                    })
                })
                .map(|e| e.target);
            if let Some(victim) = weakest {
                self.unlink_base(p, victim);
            }
        }
    }

    fn link_upper(&mut self, a: NodeId, b: NodeId, level: usize) {
        let w = self.sim_nodes(a, b);
        self.push_link(a, b, level, w);
        self.push_link(b, a, level, w);
        let cap = self.max_degree(level);
        if self.links[b as usize][level].len() > cap {
            let victim = self.links[b as usize][level]
                .iter()
                .min_by(|x, y| {
                    Scored {
                        sim: x.weight,
                        node: x.target,
                    }
                    .cmp(&Scored {
                        sim: y.weight,
                        node: y.target,
                    })
                })
                .map(|e| e.target)
                .expect("non-empty");
            self.remove_link(b, victim, level);
        }
    }

    /// Approximate k nearest neighbors of `query`.
    ///
    /// The candidate list size is `max(ef.unwrap_or(ef_search), k)`; once it
    /// covers the whole graph the search degenerates to a full scan.
    pub fn knn_search(
        &self,
        query: &EmbeddingVector<T>,
        k: usize,
        ef: Option<usize>,
    ) -> Result<SearchResult<T>> {
        query.expect_dim(self.dim)?;
        if k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.is_empty() {
            return Ok(SearchResult::default());
        }
        let q = query.as_slice();
        let qn = query.norm();
        if qn == T::zero() {
            return Err(Error::ZeroNorm);
        }
        let ef = ef.unwrap_or(self.params.ef_search).max(k);
        let scored: Vec<Scored<T>> = if ef >= self.len() {
            (0..self.len() as NodeId)
                .map(|n| Scored {
                    sim: self.sim_query(n, q, qn),
                    node: n,
                })
                .collect()
        } else {
            let ep = self
                .descend(|n| self.sim_query(n, q, qn), 0)
                .expect("non-empty");
            let mut visited = Visited::new(self.len());
            self.search_level(|n| self.sim_query(n, q, qn), &[ep], ef, 0, &mut visited)
        };
        Ok(SearchResult::from_scored(
            scored
                .into_iter()
                .map(|s| (self.doc_ids[s.node as usize].as_str(), s.sim)),
            k,
        ))
    }

    /// Checks every structural invariant; returns a description of the first
    /// violation found.
    pub fn check_invariants(&self, weight_tol: f64) -> std::result::Result<(), String> {
        let n = self.len();
        for node in 0..n as NodeId {
            let lv = self.level(node);
            if self.links[node as usize].len() != lv + 1 {
                return Err(format!(
                    "node {node}: {} link levels for level {lv}",
                    self.links[node as usize].len()
                ));
            }
            for level in 0..=lv {
                let list = &self.links[node as usize][level];
                if list.len() > self.max_degree(level) {
                    return Err(format!(
                        "node {node} level {level}: degree {} above cap",
                        list.len()
                    ));
                }
                for pair in list.windows(2) {
                    if pair[0].target >= pair[1].target {
                        return Err(format!(
                            "node {node} level {level}: unsorted or duplicate links"
                        ));
                    }
                }
                for e in list {
                    if e.target as usize >= n || e.target == node {
                        return Err(format!(
                            "node {node} level {level}: bad endpoint {}",
                            e.target
                        ));
                    }
                    if self.level(e.target) < level {
                        return Err(format!(
                            "node {node} level {level}: endpoint {} not on level",
                            e.target
                        ));
                    }
                    if level == 0 && !self.has_link(e.target, node, 0) {
                        return Err(format!("base edge {node}->{} is not mirrored", e.target));
                    }
                    let fresh = self.sim_nodes(node, e.target);
                    if (fresh - e.weight).abs().as_f64() > weight_tol {
                        return Err(format!(
                            "edge {node}->{} weight {} differs from cosine {}",
                            e.target, e.weight, fresh
                        ));
                    }
                }
            }
        }
        if let Some(e) = self.entry {
            if (0..n as NodeId).any(|x| self.level(x) > self.level(e)) {
                return Err("entry point is not on the top level".into());
            }
        } else if n > 0 {
            return Err("non-empty graph without entry point".into());
        }
        Ok(())
    }
}
