//! Seeded synthetic fixtures with planted positives and hard negatives, and
//! the built-in simulation policies.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::index::exact_knn;
use crate::model::io::{write_jsonl, EmbeddingRecord};
use crate::model::{Corpus, Document, EmbeddingVector, PolicyResponse, Triplet};
use crate::refresh::RefreshReport;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub docs: usize,
    pub queries: usize,
    pub dim: usize,
    pub seed: u64,
    /// Number of topic centers; 0 draws documents isotropically.
    pub topics: usize,
    /// Within-topic noise scale.
    pub spread: f64,
    /// Cosine between each planted hard negative and its positive.
    pub hard_negative_similarity: f64,
    /// Cosine between each query vector and its positive.
    pub query_similarity: f64,
    /// Uniformly drawn negatives added after the hard negative.
    pub random_negatives: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            docs: 1000,
            queries: 100,
            dim: 64,
            seed: 0,
            topics: 0,
            spread: 1.0,
            hard_negative_similarity: 0.1,
            query_similarity: 0.9,
            random_negatives: 1,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 2 {
            return Err(Error::InvalidArgument("dim must be >= 2".into()));
        }
        if self.queries == 0 || 2 * self.queries + self.random_negatives > self.docs {
            return Err(Error::InvalidArgument(format!(
                "{} queries with {} random negatives need more than {} documents",
                self.queries, self.random_negatives, self.docs
            )));
        }
        for (name, v) in [
            ("hard_negative_similarity", self.hard_negative_similarity),
            ("query_similarity", self.query_similarity),
        ] {
            if !(-1.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must lie in [-1, 1]"
                )));
            }
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::InvalidArgument(
                "spread must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticFixture<T> {
    pub corpus: Corpus,
    pub triplets: Vec<Triplet>,
    pub doc_embeddings: HashMap<String, EmbeddingVector<T>>,
    /// Keyed by query id.
    pub query_embeddings: HashMap<String, EmbeddingVector<T>>,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

fn unit(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Random unit vector orthogonal to the unit vector `p`.
fn orthogonal_unit(rng: &mut ChaCha8Rng, p: &[f64]) -> Vec<f64> {
    let mut g = gaussian(rng, p.len());
    let dot: f64 = g.iter().zip(p).map(|(a, b)| a * b).sum();
    g.iter_mut().zip(p).for_each(|(a, b)| *a -= dot * b);
    unit(g)
}

/// Unit vector at cosine exactly `c` to the unit vector `p`.
fn at_cosine(rng: &mut ChaCha8Rng, p: &[f64], c: f64) -> Vec<f64> {
    let o = orthogonal_unit(rng, p);
    let s = (1.0 - c * c).max(0.0).sqrt();
    unit(p.iter().zip(&o).map(|(a, b)| c * a + s * b).collect())
}

fn to_embedding<T: Scalar>(v: &[f64]) -> EmbeddingVector<T> {
    EmbeddingVector::new(v.iter().map(|&x| T::of(x)).collect()).expect("finite unit vector")
}

/// Generates a fixture. Every query vector has its positive as exact rank 1
/// over the document embeddings; the generator retries the query direction
/// until that holds.
pub fn generate<T: Scalar>(spec: &SyntheticSpec) -> Result<SyntheticFixture<T>> {
    spec.validate()?;
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let centers: Vec<Vec<f64>> = (0..spec.topics)
        .map(|_| unit(gaussian(&mut rng, d)))
        .collect();
    let scale = spec.spread / (d as f64).sqrt();
    let mut vecs: Vec<Vec<f64>> = (0..spec.docs)
        .map(|i| {
            let g = gaussian(&mut rng, d);
            if centers.is_empty() {
                unit(g)
            } else {
                unit(
                    centers[i % centers.len()]
                        .iter()
                        .zip(&g)
                        .map(|(a, b)| a + scale * b)
                        .collect(),
                )
            }
        })
        .collect();
    let docs: Vec<Document> = (0..spec.docs)
        .map(|i| Document {
            doc_id: format!("doc-{i:06}"),
            text: match spec.topics {
                0 => format!("synthetic document {i}"),
                t => format!("synthetic document {i} on topic {}", i % t),
            },
        })
        .collect();

    let mut perm: Vec<usize> = (0..spec.docs).collect();
    perm.shuffle(&mut rng);
    for j in 0..spec.queries {
        let (p, h) = (perm[2 * j], perm[2 * j + 1]);
        vecs[h] = at_cosine(&mut rng, &vecs[p], spec.hard_negative_similarity);
    }
    let doc_embeddings: HashMap<String, EmbeddingVector<T>> = docs
        .iter()
        .zip(&vecs)
        .map(|(doc, v)| (doc.doc_id.clone(), to_embedding(v)))
        .collect();

    let mut triplets = Vec::with_capacity(spec.queries);
    let mut query_embeddings = HashMap::with_capacity(spec.queries);
    for j in 0..spec.queries {
        let (p, h) = (perm[2 * j], perm[2 * j + 1]);
        let pos_id = &docs[p].doc_id;
        let mut q = None;
        for _ in 0..64 {
            let cand: EmbeddingVector<T> =
                to_embedding(&at_cosine(&mut rng, &vecs[p], spec.query_similarity));
            if exact_knn(&doc_embeddings, &cand, 1)?.ids().next() == Some(pos_id.as_str()) {
                q = Some(cand);
                break;
            }
        }
        let q = q.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "query_similarity {} cannot make `{pos_id}` the nearest document",
                spec.query_similarity
            ))
        })?;
        let mut negative_ids = vec![docs[h].doc_id.clone()];
        while negative_ids.len() < 1 + spec.random_negatives {
            let r = rng.random_range(0..spec.docs);
            let id = &docs[r].doc_id;
            if r != p && !negative_ids.contains(id) {
                negative_ids.push(id.clone());
            }
        }
        let query_id = format!("q-{j:05}");
        query_embeddings.insert(query_id.clone(), q);
        triplets.push(Triplet {
            query_id,
            query_text: format!("synthetic query number {j}"),
            positive_id: pos_id.clone(),
            negative_ids,
        });
    }

    Ok(SyntheticFixture {
        corpus: Corpus::new("synthetic", docs)?,
        triplets,
        doc_embeddings,
        query_embeddings,
    })
}

impl<T: Scalar> SyntheticFixture<T> {
    /// Writes `corpus.jsonl`, `triplets.jsonl`, `embeddings.jsonl`,
    /// `queries.jsonl` and `qrels.tsv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_jsonl(&dir.join("corpus.jsonl"), self.corpus.documents())?;
        write_jsonl(&dir.join("triplets.jsonl"), &self.triplets)?;
        write_jsonl(
            &dir.join("embeddings.jsonl"),
            self.corpus.documents().iter().map(|d| EmbeddingRecord {
                doc_id: d.doc_id.clone(),
                embedding: self.doc_embeddings[&d.doc_id].clone(),
            }),
        )?;
        write_jsonl(
            &dir.join("queries.jsonl"),
            self.triplets.iter().map(|t| EmbeddingRecord {
                doc_id: t.query_id.clone(),
                embedding: self.query_embeddings[&t.query_id].clone(),
            }),
        )?;
        let qrels: String = self
            .triplets
            .iter()
            .map(|t| format!("{}\t{}\t1\n", t.query_id, t.positive_id))
            .collect();
        std::fs::write(dir.join("qrels.tsv"), qrels)?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Policy {
    /// Returns the positive's current graph embedding.
    Oracle,
    /// The positive's embedding plus isotropic noise of norm about `noise`.
    NoisyOracle { noise: f64 },
    /// Uniform random unit vectors.
    Random,
}

pub const DEFAULT_ORACLE_NOISE: f64 = 0.3;

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Policy::Oracle),
            "noisy-oracle" => Ok(Policy::NoisyOracle {
                noise: DEFAULT_ORACLE_NOISE,
            }),
            "random" => Ok(Policy::Random),
            other => Err(Error::InvalidArgument(format!(
                "unknown policy `{other}` (expected oracle, noisy-oracle or random)"
            ))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::Oracle => "oracle",
            Policy::NoisyOracle { .. } => "noisy-oracle",
            Policy::Random => "random",
        })
    }
}

/// One CSV row per (episode, group member).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRow {
    pub episode: u64,
    pub episode_id: String,
    pub query_id: String,
    pub member: usize,
    pub token_present: bool,
    pub reward: f64,
    pub advantage: f64,
    pub positive_rank: Option<usize>,
    pub similarity: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Simulation {
    pub rows: Vec<TranscriptRow>,
    pub refreshes: Vec<RefreshReport>,
    pub maintenance_errors: Vec<String>,
}

impl Simulation {
    pub fn mean_reward(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        self.rows.iter().map(|r| r.reward).sum::<f64>() / self.rows.len() as f64
    }
}

/// Drives `episodes` full episodes with a built-in policy.
pub fn simulate<T: Scalar>(
    env: &Environment<T>,
    policy: Policy,
    episodes: usize,
    seed: u64,
) -> Result<Simulation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut sim = Simulation::default();
    for n in 0..episodes {
        let ep = env.new_episode()?;
        let positive = env
            .graph()
            .read()
            .embedding_of(&ep.triplet.positive_id)
            .ok_or_else(|| Error::MissingEmbedding(ep.triplet.positive_id.clone()))?;
        let p: Vec<f64> = positive.as_slice().iter().map(|x| x.as_f64()).collect();
        let d = p.len();
        let responses = (0..ep.group_size)
            .map(|_| {
                let v = match policy {
                    Policy::Oracle => {
                        return PolicyResponse::with_embedding(
                            ep.query_id.clone(),
                            positive.clone(),
                        )
                    }
                    Policy::NoisyOracle { noise } => {
                        let s = noise / (d as f64).sqrt();
                        unit(
                            p.iter()
                                .zip(gaussian(&mut rng, d))
                                .map(|(a, g)| a + s * g)
                                .collect(),
                        )
                    }
                    Policy::Random => unit(gaussian(&mut rng, d)),
                };
                PolicyResponse::with_embedding(ep.query_id.clone(), to_embedding(&v))
            })
            .collect();
        let out = env.step(&ep.episode_id, responses)?;
        for (m, (b, a)) in out
            .group
            .breakdowns
            .iter()
            .zip(&out.group.advantages)
            .enumerate()
        {
            sim.rows.push(TranscriptRow {
                episode: n as u64,
                episode_id: ep.episode_id.clone(),
                query_id: ep.query_id.clone(),
                member: m,
                token_present: b.token_present,
                reward: b.reward,
                advantage: *a,
                positive_rank: b.positive_rank,
                similarity: b.similarity_term_s,
            });
        }
        sim.refreshes.extend(out.refresh);
        sim.maintenance_errors.extend(out.maintenance_errors);
    }
    Ok(sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::cosine_similarity;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            docs: 300,
            queries: 40,
            dim: 32,
            seed: 4,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn planted_structure_holds() {
        for topics in [0, 10] {
            let spec = SyntheticSpec {
                topics,
                hard_negative_similarity: 0.6,
                ..small()
            };
            let fx = generate::<f64>(&spec).unwrap();
            assert_eq!(fx.corpus.len(), 300);
            assert_eq!(fx.triplets.len(), 40);
            for t in &fx.triplets {
                let q = &fx.query_embeddings[&t.query_id];
                let p = &fx.doc_embeddings[&t.positive_id];
                let h = &fx.doc_embeddings[&t.negative_ids[0]];
                assert_eq!(
                    exact_knn(&fx.doc_embeddings, q, 1).unwrap().ids().next(),
                    Some(t.positive_id.as_str())
                );
                assert!((cosine_similarity(h, p).unwrap() - 0.6).abs() < 1e-9);
                assert!((cosine_similarity(q, p).unwrap() - 0.9).abs() < 1e-9);
                assert_eq!(t.negative_ids.len(), 2);
                assert!(!t.negative_ids.contains(&t.positive_id));
            }
        }
    }

    #[test]
    fn same_seed_same_fixture() {
        let a = generate::<f32>(&small()).unwrap();
        let b = generate::<f32>(&small()).unwrap();
        assert_eq!(a.triplets, b.triplets);
        assert_eq!(a.doc_embeddings, b.doc_embeddings);
        let c = generate::<f32>(&SyntheticSpec { seed: 5, ..small() }).unwrap();
        assert_ne!(a.doc_embeddings, c.doc_embeddings);
    }

    #[test]
    fn rejects_impossible_specs() {
        assert!(generate::<f32>(&SyntheticSpec {
            queries: 200,
            ..small()
        })
        .is_err());
        assert!(generate::<f32>(&SyntheticSpec {
            hard_negative_similarity: 1.5,
            ..small()
        })
        .is_err());
    }

    #[test]
    fn policy_names_round_trip() {
        for name in ["oracle", "noisy-oracle", "random"] {
            assert_eq!(name.parse::<Policy>().unwrap().to_string(), name);
        }
        assert!("greedy".parse::<Policy>().is_err());
    }
}
