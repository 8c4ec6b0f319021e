use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Instant;

use axum::body::Bytes;
use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::routing::{get, post};
use axum::{Json, Router};
use srr3_core::env::Environment;
use srr3_core::index::{save_index, SearchGraph};
use srr3_core::metrics::{evaluate_run, load_qrels, load_run};
use srr3_core::model::{load_corpus, load_embeddings, Document, EmbeddingVector, PolicyResponse};
use srr3_core::provider::embed_corpus;

use crate::api::*;
use crate::error::ApiError;
use crate::state::{AppState, IndexEntry, Real};

type ApiResult<T> = Result<Json<T>, ApiError>;

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/index/build", post(build_index))
        .route("/v1/index/{id}/status", get(index_status))
        .route("/v1/episodes", post(new_episode))
        .route("/v1/episodes/{id}", get(episode_detail))
        .route("/v1/episodes/{id}/step", post(step))
        .route("/v1/refresh", post(refresh))
        .route("/v1/eval", post(eval))
        .route("/v1/metrics", get(metrics))
        .fallback(|| async { ApiError::not_found("no such route") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(ErrorCode::BadRequest, "method not allowed on this route")
        })
        .with_state(state)
}

fn body<T>(b: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    b.map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

fn environment(s: &AppState) -> Result<Arc<Environment<Real>>, ApiError> {
    s.env.clone().ok_or_else(|| {
        ApiError::conflict("server has no environment; configure triplets_path or mixture_path")
    })
}

/// Runs blocking work (provider I/O, graph builds) off the async workers.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

async fn build_index(
    State(s): State<Arc<AppState>>,
    req: Result<Json<BuildIndexRequest>, JsonRejection>,
) -> ApiResult<BuildIndexResponse> {
    let req = body(req)?;
    let inserted = Arc::new(AtomicUsize::new(0));
    let total = Arc::new(AtomicUsize::new(0));
    let id = {
        let mut idx = s.indexes.lock();
        let id = format!("idx-{:04}", idx.len());
        idx.insert(
            id.clone(),
            IndexEntry {
                state: BuildState::Building,
                inserted: inserted.clone(),
                total: total.clone(),
                result: None,
                error: None,
                graph: None,
            },
        );
        id
    };
    let provider = s.provider.clone();
    let job_id = id.clone();
    let outcome = blocking(move || {
        let start = Instant::now();
        let corpus = load_corpus(&PathBuf::from(&req.corpus_path))?;
        total.store(corpus.len(), Ordering::Relaxed);
        let embeddings = match &req.embeddings_path {
            Some(p) => load_embeddings::<Real>(&PathBuf::from(p))?,
            None => {
                let docs: Vec<&Document> = corpus.documents().iter().collect();
                embed_corpus(provider.as_ref(), &docs, 64)?
            }
        };
        let graph =
            SearchGraph::build_with_progress(&corpus, &embeddings, req.params.resolve(), |n| {
                inserted.store(n, Ordering::Relaxed)
            })?;
        let checksum = match &req.out_path {
            Some(p) => save_index(&graph, &PathBuf::from(p))?.checksum,
            None => graph.checksum(),
        };
        let resp = BuildIndexResponse {
            index_id: job_id,
            node_count: graph.len(),
            dimension: graph.dim(),
            build_ms: start.elapsed().as_secs_f64() * 1e3,
            graph_version: graph.version(),
            checksum,
        };
        Ok((resp, graph))
    })
    .await;

    let mut idx = s.indexes.lock();
    let entry = idx.get_mut(&id).expect("registered above");
    match outcome {
        Ok((resp, graph)) => {
            entry.state = BuildState::Ready;
            entry.result = Some(resp.clone());
            entry.graph = Some(Arc::new(graph));
            Ok(Json(resp))
        }
        Err(e) => {
            entry.state = BuildState::Failed;
            entry.error = Some(e.0.message.clone());
            Err(e)
        }
    }
}

async fn index_status(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<IndexStatus> {
    s.indexes
        .lock()
        .get(&id)
        .map(|e| Json(e.status(&id)))
        .ok_or_else(|| ApiError::not_found(format!("unknown index `{id}`")))
}

async fn new_episode(State(s): State<Arc<AppState>>, raw: Bytes) -> ApiResult<EpisodeResponse> {
    let req: NewEpisodeRequest = if raw.iter().all(u8::is_ascii_whitespace) {
        NewEpisodeRequest::default()
    } else {
        serde_json::from_slice(&raw)
            .map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))?
    };
    let env = environment(&s)?;
    let ep = blocking(move || Ok(env.open_episode(req.group_size)?)).await?;
    Ok(Json(EpisodeResponse::from(&ep)))
}

async fn episode_detail(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<EpisodeDetail> {
    let env = environment(&s)?;
    env.episode(&id)
        .map(|e| Json(EpisodeDetail::from(&e)))
        .ok_or_else(|| ApiError::not_found(format!("unknown episode `{id}`")))
}

async fn step(
    State(s): State<Arc<AppState>>,
    Path(id): Path<String>,
    req: Result<Json<StepRequest>, JsonRejection>,
) -> ApiResult<StepResponse> {
    let req = body(req)?;
    let env = environment(&s)?;
    let responses = req
        .responses
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let mut out = match r.embedding {
                Some(v) => PolicyResponse::with_embedding(
                    r.query_id,
                    EmbeddingVector::new(v).map_err(|e| {
                        ApiError::bad_request(format!("responses[{i}].embedding: {e}"))
                    })?,
                ),
                None => PolicyResponse::without_embedding(r.query_id),
            };
            out.reasoning_text = r.text;
            Ok(out)
        })
        .collect::<Result<Vec<_>, ApiError>>()?;
    let outcome = blocking(move || Ok(env.step(&id, responses)?)).await?;
    Ok(Json(StepResponse::from(&outcome)))
}

async fn refresh(
    State(s): State<Arc<AppState>>,
    req: Result<Json<RefreshBody>, JsonRejection>,
) -> ApiResult<RefreshReportBody> {
    let req = body(req)?;
    let env = environment(&s)?;
    let cfg = env.config();
    let request = req.into_request(cfg.knn_k, cfg.embed_batch_size);
    let report = blocking(move || Ok(env.refresh(&request)?)).await?;
    Ok(Json(RefreshReportBody::from(&report)))
}

async fn eval(
    State(_): State<Arc<AppState>>,
    req: Result<Json<EvalRequest>, JsonRejection>,
) -> ApiResult<EvalResponse> {
    let req = body(req)?;
    let table = blocking(move || {
        let run = load_run(&PathBuf::from(&req.run_path))?;
        let qrels = load_qrels(&PathBuf::from(&req.qrels_path))?;
        Ok(evaluate_run(&run, &qrels, &req.ks)?)
    })
    .await?;
    let mut metrics = std::collections::BTreeMap::new();
    for k in &table.ks {
        metrics.insert(format!("ndcg@{k}"), table.ndcg[k]);
        metrics.insert(format!("recall@{k}"), table.recall[k]);
    }
    Ok(Json(EvalResponse {
        queries: table.queries,
        metrics,
    }))
}

async fn metrics(State(s): State<Arc<AppState>>) -> Json<MetricsResponse> {
    let built = s.indexes.lock().len();
    Json(match &s.env {
        Some(env) => MetricsResponse::from_env(&env.metrics(), built),
        None => MetricsResponse {
            indexes_built: built,
            ..MetricsResponse::default()
        },
    })
}
