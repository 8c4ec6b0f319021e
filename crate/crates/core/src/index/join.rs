//! Neighborhood expansion and batched re-linking of a region whose
//! embeddings changed.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::graph::{NodeId, Scored, SearchGraph};
use crate::error::{Error, Result};
use crate::model::{ingest_unit, EmbeddingVector};
use crate::scalar::Scalar;

/// Counters from one [`SearchGraph::local_join_update`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinStats {
    pub region_size: usize,
    pub embeddings_updated: usize,
    /// Nodes whose base adjacency may have changed (region plus its 2-hop ring).
    pub affected_nodes: usize,
    pub edges_before: usize,
    pub edges_after: usize,
}

impl<T: Scalar> SearchGraph<T> {
    fn hop(&self, from: &BTreeSet<NodeId>) -> BTreeSet<NodeId> {
        let mut out = from.clone();
        for &n in from {
            out.extend(self.base_neighbors(n));
        }
        out
    }

    /// Seeds plus everything reachable within two base-layer hops.
    pub fn expand_2hop(&self, seeds: &BTreeSet<NodeId>) -> Result<BTreeSet<NodeId>> {
        for &s in seeds {
            self.check_node(s)?;
        }
        Ok(self.hop(&self.hop(seeds)))
    }

    /// Re-links `region` after replacing the embeddings in `new_embeddings`.
    ///
    /// Every region node re-selects `M` base neighbors from its old
    /// neighbors, its 2-hop ring and the region itself, ranked by the new
    /// embeddings and filtered with the same diversity heuristic used at
    /// build time. Links are written in both directions; a node pushed
    /// over its cap loses its weakest link, but only links into the 2-hop
    /// closure of the region are ever dropped, so nodes further away keep
    /// their adjacency. Ring nodes that lost links are topped up from their own
    /// 2-hop neighborhood inside the closure. Upper levels keep their links;
    /// only cached weights are refreshed. An empty region is a no-op and does
    /// not bump the version.
    pub fn local_join_update(
        &mut self,
        region: &BTreeSet<NodeId>,
        new_embeddings: &BTreeMap<NodeId, EmbeddingVector<T>>,
    ) -> Result<JoinStats> {
        for &n in region {
            self.check_node(n)?;
        }
        let mut units = BTreeMap::new();
        for (&n, e) in new_embeddings {
            self.check_node(n)?;
            if !region.contains(&n) {
                return Err(Error::InvalidArgument(format!(
                    "embedding for node {n} outside the update region"
                )));
            }
            e.expect_dim(self.dim)?;
            units.insert(n, ingest_unit(e)?);
        }
        if region.is_empty() {
            return Ok(JoinStats::default());
        }

        let edges_before = self.base_edge_count();
        let closure = self.hop(&self.hop(region));
        let candidates: Vec<(NodeId, BTreeSet<NodeId>)> = region
            .iter()
            .map(|&u| {
                let mut c = self.hop(&self.hop(&BTreeSet::from([u])));
                c.extend(region.iter().copied());
                c.remove(&u);
                (u, c)
            })
            .collect();

        for (&n, unit) in &units {
            self.set_vector(n, unit);
        }

        let m = self.params.m;
        let proposals: Vec<(NodeId, Vec<NodeId>)> = candidates
            .into_iter()
            .map(|(u, cands)| {
                let ranked = self.ranked(u, cands.into_iter());
                (u, self.select_diverse(&ranked, m))
            })
            .collect();

        let mut ring_touched = BTreeSet::new();
        for &u in region {
            let old: Vec<NodeId> = self.base_neighbors(u).collect();
            for v in old {
                self.unlink_base(u, v);
                if !region.contains(&v) {
                    ring_touched.insert(v);
                }
            }
        }
        for (u, props) in &proposals {
            for &v in props {
                self.link_base(*u, v, Some(&closure));
            }
        }
        for &x in &ring_touched {
            if self.neighbors(x, 0).len() >= m {
                continue;
            }
            let mut cands = self.hop(&self.hop(&BTreeSet::from([x])));
            cands.retain(|c| closure.contains(c) && *c != x);
            for c in self
                .ranked(x, cands.into_iter())
                .into_iter()
                .map(|s| s.node)
            {
                if self.neighbors(x, 0).len() >= m {
                    break;
                }
                self.link_base(x, c, Some(&closure));
            }
        }

        self.refresh_weights(&closure, &units);
        self.version += 1;
        Ok(JoinStats {
            region_size: region.len(),
            embeddings_updated: units.len(),
            affected_nodes: closure.len(),
            edges_before,
            edges_after: self.base_edge_count(),
        })
    }

    /// Candidates scored against `node`, best first.
    fn ranked(&self, node: NodeId, cands: impl Iterator<Item = NodeId>) -> Vec<Scored<T>> {
        let mut scored: Vec<Scored<T>> = cands
            .filter(|&c| c != node)
            .map(|c| Scored {
                sim: self.sim_nodes(node, c),
                node: c,
            })
            .collect();
        scored.sort_by(|a, b| b.cmp(a));
        scored
    }

    fn refresh_weights(
        &mut self,
        closure: &BTreeSet<NodeId>,
        changed: &BTreeMap<NodeId, EmbeddingVector<T>>,
    ) {
        for &n in closure {
            let targets: Vec<NodeId> = self.base_neighbors(n).collect();
            for (i, t) in targets.into_iter().enumerate() {
                let w = self.sim_nodes(n, t);
                self.links[n as usize][0][i].weight = w;
            }
        }
        if changed.is_empty() {
            return;
        }
        for n in 0..self.len() as NodeId {
            for level in 1..=self.level(n) {
                for i in 0..self.links[n as usize][level].len() {
                    let t = self.links[n as usize][level][i].target;
                    if changed.contains_key(&n) || changed.contains_key(&t) {
                        self.links[n as usize][level][i].weight = self.sim_nodes(n, t);
                    }
                }
            }
        }
    }
}
