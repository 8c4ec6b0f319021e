//! HTTP+JSON service around the episode environment.
//!
//! Routes (all JSON, UTF-8):
//!
//! | method | path | body |
//! |---|---|---|
//! | POST | `/v1/index/build` | [`api::BuildIndexRequest`] |
//! | GET | `/v1/index/{id}/status` | |
//! | POST | `/v1/episodes` | [`api::NewEpisodeRequest`] (optional) |
//! | GET | `/v1/episodes/{id}` | |
//! | POST | `/v1/episodes/{id}/step` | [`api::StepRequest`] |
//! | POST | `/v1/refresh` | [`api::RefreshBody`] |
//! | POST | `/v1/eval` | [`api::EvalRequest`] |
//! | GET | `/v1/metrics` | |
//!
//! Failures return an [`api::ApiErrorBody`] with a matching status code.

pub mod api;
pub mod config;
pub mod error;
pub mod routes;
pub mod state;

use std::sync::Arc;

pub use config::ServerConfig;
pub use error::ApiError;
pub use routes::router;
pub use state::AppState;

/// Binds `addr` and serves until Ctrl-C.
pub async fn serve(state: Arc<AppState>, addr: &str) -> std::io::Result<()> {
    serve_on(state, tokio::net::TcpListener::bind(addr).await?).await
}

/// Serves on an already bound listener until Ctrl-C.
pub async fn serve_on(
    state: Arc<AppState>,
    listener: tokio::net::TcpListener,
) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// Pretty-printed JSON Schema for every wire type, keyed by file stem.
pub fn render_schemas() -> Vec<(String, String)> {
    api::all_schemas()
        .into_iter()
        .map(|(name, schema)| {
            let text = serde_json::to_string_pretty(&schema).expect("schemas serialize") + "\n";
            (format!("{name}.schema.json"), text)
        })
        .collect()
}
