//! Response scoring and group-relative advantages.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{SearchGraph, SearchResult};
use crate::model::{cosine_similarity, PolicyResponse, Triplet};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityMode {
    /// Cosine between the response embedding and the positive document.
    #[default]
    PositiveDoc,
    /// Cosine between the response embedding and the rank-1 result.
    TopOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    #[default]
    Natural,
    Ten,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Ten => x.log10(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    #[serde(alias = "K")]
    pub k: usize,
    pub missing_token_reward: f64,
    pub negative_penalty_ratio: f64,
    pub similarity_mode: SimilarityMode,
    pub log_base: LogBase,
    pub advantage_epsilon: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            k: 100,
            missing_token_reward: -1.0,
            negative_penalty_ratio: 0.5,
            similarity_mode: SimilarityMode::PositiveDoc,
            log_base: LogBase::Natural,
            advantage_epsilon: 1e-8,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("K must be >= 1".into()));
        }
        if !(self.negative_penalty_ratio >= 0.0) {
            return Err(Error::InvalidArgument(
                "negative_penalty_ratio must be >= 0".into(),
            ));
        }
        if !self.missing_token_reward.is_finite() || !(self.advantage_epsilon >= 0.0) {
            return Err(Error::InvalidArgument(
                "missing_token_reward must be finite and advantage_epsilon >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub reward: f64,
    pub token_present: bool,
    pub positive_rank: Option<usize>,
    pub negative_ranks: Vec<usize>,
    pub similarity_term_s: Option<f64>,
    pub dcg_sum: Option<f64>,
}

impl RewardBreakdown {
    pub fn missing(config: &RewardConfig) -> Self {
        Self {
            reward: config.missing_token_reward,
            token_present: false,
            positive_rank: None,
            negative_ranks: Vec::new(),
            similarity_term_s: None,
            dcg_sum: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RolloutGroup<T> {
    pub query_id: String,
    pub responses: Vec<PolicyResponse<T>>,
    pub breakdowns: Vec<RewardBreakdown>,
    pub advantages: Vec<f64>,
}

impl<T> RolloutGroup<T> {
    pub fn rewards(&self) -> Vec<f64> {
        self.breakdowns.iter().map(|b| b.reward).collect()
    }
}

/// Rank discount `1 / (1 + log k)` for a 1-based rank.
pub fn discount(rank: usize, base: LogBase) -> f64 {
    1.0 / (1.0 + base.log(rank as f64))
}

/// Returns `(S * dcg_sum, dcg_sum)`.
pub fn dcg_scaled<T: Scalar>(
    results: &SearchResult<T>,
    positive_id: &str,
    negative_ids: &[String],
    s: f64,
    config: &RewardConfig,
) -> (f64, f64) {
    let mut sum = 0.0;
    for (i, id) in results.ids().enumerate() {
        let p = if id == positive_id { 1.0 } else { 0.0 };
        let n = if negative_ids.iter().any(|x| x == id) {
            1.0
        } else {
            0.0
        };
        if p != 0.0 || n != 0.0 {
            sum += (p - config.negative_penalty_ratio * n) * discount(i + 1, config.log_base);
        }
    }
    (s * sum, sum)
}

pub fn score_response<T: Scalar>(
    response: &PolicyResponse<T>,
    triplet: &Triplet,
    graph: &SearchGraph<T>,
    config: &RewardConfig,
) -> Result<RewardBreakdown> {
    let Some(embedding) = &response.embedding else {
        return Ok(RewardBreakdown::missing(config));
    };
    embedding.expect_dim(graph.dim())?;
    let positive = graph
        .embedding_of(&triplet.positive_id)
        .ok_or_else(|| Error::UnknownDocument(triplet.positive_id.clone()))?;
    let results = graph.knn_search(embedding, config.k, None)?;
    let s = match config.similarity_mode {
        SimilarityMode::PositiveDoc => cosine_similarity(embedding, &positive)?.as_f64(),
        SimilarityMode::TopOne => results.hits.first().map_or(0.0, |h| h.similarity.as_f64()),
    };
    let (reward, dcg_sum) = dcg_scaled(
        &results,
        &triplet.positive_id,
        &triplet.negative_ids,
        s,
        config,
    );
    Ok(RewardBreakdown {
        reward,
        token_present: true,
        positive_rank: results.rank_of(&triplet.positive_id),
        negative_ranks: {
            let mut r: Vec<usize> = triplet
                .negative_ids
                .iter()
                .filter_map(|n| results.rank_of(n))
                .collect();
            r.sort_unstable();
            r
        },
        similarity_term_s: Some(s),
        dcg_sum: Some(dcg_sum),
    })
}

/// `(r_i - mean) / (population_std + epsilon)`; all zeros when every reward
/// is equal.
pub fn grpo_advantages(rewards: &[f64], epsilon: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::InvalidArgument("reward group is empty".into()));
    }
    if rewards.iter().all(|&r| r == rewards[0]) {
        return Ok(vec![0.0; rewards.len()]);
    }
    let g = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / g;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / g;
    let denom = var.sqrt() + epsilon;
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

pub fn score_group<T: Scalar>(
    responses: Vec<PolicyResponse<T>>,
    triplet: &Triplet,
    graph: &SearchGraph<T>,
    config: &RewardConfig,
) -> Result<RolloutGroup<T>> {
    if let Some(bad) = responses.iter().find(|r| r.query_id != triplet.query_id) {
        return Err(Error::QueryMismatch {
            expected: triplet.query_id.clone(),
            actual: bad.query_id.clone(),
        });
    }
    let breakdowns = responses
        .iter()
        .map(|r| score_response(r, triplet, graph, config))
        .collect::<Result<Vec<_>>>()?;
    let rewards: Vec<f64> = breakdowns.iter().map(|b| b.reward).collect();
    let advantages = grpo_advantages(&rewards, config.advantage_epsilon)?;
    Ok(RolloutGroup {
        query_id: triplet.query_id.clone(),
        responses,
        breakdowns,
        advantages,
    })
}
