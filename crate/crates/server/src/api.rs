//! Wire types. Every request and response body on `/v1` is one of these;
//! the files under `schemas/` are generated from them.

use std::collections::BTreeMap;

use schemars::{schema_for, JsonSchema, Schema};
use serde::{Deserialize, Serialize};
use srr3_core::env::{CurriculumChange, EnvMetrics, Episode, StepOutcome};
use srr3_core::refresh::{RefreshReport, RefreshRequest};
use srr3_core::reward::RewardBreakdown;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    Conflict,
    ProviderUnavailable,
    Internal,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ApiErrorBody {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<serde_json::Value>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct IndexParamsBody {
    #[serde(default, alias = "M")]
    pub m: Option<usize>,
    #[serde(default)]
    pub ef_construction: Option<usize>,
    #[serde(default)]
    pub ef_search: Option<usize>,
    #[serde(default)]
    pub level_multiplier: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl IndexParamsBody {
    pub fn resolve(&self) -> srr3_core::index::IndexParams {
        let mut p = srr3_core::index::IndexParams::with_m(self.m.unwrap_or(16));
        if let Some(v) = self.ef_construction {
            p.ef_construction = v;
        }
        if let Some(v) = self.ef_search {
            p.ef_search = v;
        }
        if let Some(v) = self.level_multiplier {
            p.level_multiplier = v;
        }
        if let Some(v) = self.seed {
            p.seed = v;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BuildIndexRequest {
    pub corpus_path: String,
    /// JSONL `{doc_id, embedding}`; the server's provider embeds the corpus
    /// when absent.
    #[serde(default)]
    pub embeddings_path: Option<String>,
    #[serde(default)]
    pub params: IndexParamsBody,
    /// Snapshot destination; the index stays in memory only when absent.
    #[serde(default)]
    pub out_path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BuildIndexResponse {
    pub index_id: String,
    pub node_count: usize,
    pub dimension: usize,
    pub build_ms: f64,
    pub graph_version: u64,
    pub checksum: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum BuildState {
    Building,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct IndexStatus {
    pub index_id: String,
    pub state: BuildState,
    pub inserted: usize,
    pub total: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<BuildIndexResponse>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct NewEpisodeRequest {
    #[serde(default)]
    pub group_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EpisodeResponse {
    pub episode_id: String,
    pub query_id: String,
    /// Rendered prompt for the policy.
    pub prompt: String,
    pub group_size: usize,
}

impl From<&Episode> for EpisodeResponse {
    fn from(e: &Episode) -> Self {
        Self {
            episode_id: e.episode_id.clone(),
            query_id: e.query_id.clone(),
            prompt: e.prompt_text.clone(),
            group_size: e.group_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EpisodeDetail {
    pub episode_id: String,
    pub query_id: String,
    pub query: String,
    pub state: String,
    pub group_size: usize,
    pub created_at_ms: u64,
    pub source: String,
}

impl From<&Episode> for EpisodeDetail {
    fn from(e: &Episode) -> Self {
        Self {
            episode_id: e.episode_id.clone(),
            query_id: e.query_id.clone(),
            query: e.triplet.query_text.clone(),
            state: e.state.to_string(),
            group_size: e.group_size,
            created_at_ms: e.created_at_ms,
            source: e.source.clone(),
        }
    }
}

/// One policy output. `embedding: null` means the embedding token was never
/// emitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct ResponseBody {
    pub query_id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StepRequest {
    pub responses: Vec<ResponseBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct BreakdownBody {
    pub reward: f64,
    pub token_present: bool,
    pub positive_rank: Option<usize>,
    pub negative_ranks: Vec<usize>,
    pub similarity: Option<f64>,
    pub dcg_sum: Option<f64>,
}

impl From<&RewardBreakdown> for BreakdownBody {
    fn from(b: &RewardBreakdown) -> Self {
        Self {
            reward: b.reward,
            token_present: b.token_present,
            positive_rank: b.positive_rank,
            negative_ranks: b.negative_ranks.clone(),
            similarity: b.similarity_term_s,
            dcg_sum: b.dcg_sum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RefreshReportBody {
    pub seeds_found: usize,
    pub region_size: usize,
    pub documents_reembedded: usize,
    pub embed_batches: usize,
    pub graph_version_before: u64,
    pub graph_version_after: u64,
    pub wall_time_ms: f64,
}

impl From<&RefreshReport> for RefreshReportBody {
    fn from(r: &RefreshReport) -> Self {
        Self {
            seeds_found: r.seeds_found,
            region_size: r.region_size,
            documents_reembedded: r.documents_reembedded,
            embed_batches: r.embed_batches,
            graph_version_before: r.graph_version_before,
            graph_version_after: r.graph_version_after,
            wall_time_ms: r.wall_time_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct CurriculumBody {
    pub from_size: usize,
    pub to_size: usize,
    pub graph_version: u64,
}

impl From<&CurriculumChange> for CurriculumBody {
    fn from(c: &CurriculumChange) -> Self {
        Self {
            from_size: c.from_size,
            to_size: c.to_size,
            graph_version: c.graph_version,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct StepResponse {
    pub episode_id: String,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
    pub breakdowns: Vec<BreakdownBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refresh_report: Option<RefreshReportBody>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curriculum: Option<CurriculumBody>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maintenance_errors: Vec<String>,
}

impl<T> From<&StepOutcome<T>> for StepResponse {
    fn from(o: &StepOutcome<T>) -> Self {
        Self {
            episode_id: o.episode_id.clone(),
            rewards: o.group.rewards(),
            advantages: o.group.advantages.clone(),
            breakdowns: o.group.breakdowns.iter().map(Into::into).collect(),
            refresh_report: o.refresh.as_ref().map(Into::into),
            curriculum: o.curriculum.as_ref().map(Into::into),
            maintenance_errors: o.maintenance_errors.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct RefreshBody {
    #[serde(default)]
    pub positives: Vec<String>,
    #[serde(default)]
    pub negatives: Vec<String>,
    #[serde(default)]
    pub queries: Vec<String>,
    #[serde(default)]
    pub knn_k: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
}

impl RefreshBody {
    pub fn into_request(self, default_knn_k: usize, default_batch: usize) -> RefreshRequest {
        RefreshRequest {
            positives: self.positives,
            negatives: self.negatives,
            queries: self.queries,
            knn_k: self.knn_k.unwrap_or(default_knn_k),
            batch_size: self.batch_size.unwrap_or(default_batch),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EvalRequest {
    pub run_path: String,
    pub qrels_path: String,
    #[serde(default = "default_ks")]
    pub ks: Vec<usize>,
}

pub fn default_ks() -> Vec<usize> {
    vec![1, 10, 100]
}

/// Flat metric table: `queries` plus one `ndcg@k` and `recall@k` entry per
/// cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EvalResponse {
    pub queries: usize,
    #[serde(flatten)]
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct MetricsResponse {
    pub episodes_created: u64,
    pub episodes_scored: u64,
    pub episodes_expired: u64,
    pub episodes_open: usize,
    pub refreshes: u64,
    pub refresh_failures: u64,
    pub mean_reward: Option<f64>,
    pub mean_recent_reward: Option<f64>,
    pub graph_version: u64,
    pub active_size: usize,
    pub corpus_size: usize,
    pub curriculum_stage: u64,
    pub documents_embedded: u64,
    pub indexes_built: usize,
}

impl MetricsResponse {
    pub fn from_env(m: &EnvMetrics, indexes_built: usize) -> Self {
        Self {
            episodes_created: m.episodes_created,
            episodes_scored: m.episodes_scored,
            episodes_expired: m.episodes_expired,
            episodes_open: m.episodes_open,
            refreshes: m.refreshes,
            refresh_failures: m.refresh_failures,
            mean_reward: m.mean_reward,
            mean_recent_reward: m.mean_recent_reward,
            graph_version: m.graph_version,
            active_size: m.active_size,
            corpus_size: m.corpus_size,
            curriculum_stage: m.curriculum_stage,
            documents_embedded: m.documents_embedded,
            indexes_built,
        }
    }
}

/// Request a remote embedding provider must accept at `POST {endpoint}/embed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EmbedRequestBody {
    pub texts: Vec<String>,
    /// `document` or `query`.
    pub mode: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
pub struct EmbedResponseBody {
    pub embeddings: Vec<Vec<f64>>,
    pub dimension: usize,
}

/// `(file stem, schema)` for every published wire type.
pub fn all_schemas() -> Vec<(&'static str, Schema)> {
    vec![
        ("api_error", schema_for!(ApiErrorBody)),
        ("index_build_request", schema_for!(BuildIndexRequest)),
        ("index_build_response", schema_for!(BuildIndexResponse)),
        ("index_status", schema_for!(IndexStatus)),
        ("episode_request", schema_for!(NewEpisodeRequest)),
        ("episode_response", schema_for!(EpisodeResponse)),
        ("episode_detail", schema_for!(EpisodeDetail)),
        ("step_request", schema_for!(StepRequest)),
        ("step_response", schema_for!(StepResponse)),
        ("refresh_request", schema_for!(RefreshBody)),
        ("refresh_report", schema_for!(RefreshReportBody)),
        ("eval_request", schema_for!(EvalRequest)),
        ("eval_response", schema_for!(EvalResponse)),
        ("metrics_response", schema_for!(MetricsResponse)),
        ("embed_request", schema_for!(EmbedRequestBody)),
        ("embed_response", schema_for!(EmbedResponseBody)),
    ]
}
