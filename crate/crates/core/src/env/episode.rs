use std::fmt;

use serde::{Deserialize, Serialize};

use crate::model::Triplet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeState {
    AwaitingResponses,
    Scored,
    Expired,
}

impl fmt::Display for EpisodeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EpisodeState::AwaitingResponses => "awaiting_responses",
            EpisodeState::Scored => "scored",
            EpisodeState::Expired => "expired",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub episode_id: String,
    pub query_id: String,
    pub triplet: Triplet,
    pub prompt_text: String,
    pub group_size: usize,
    pub state: EpisodeState,
    /// Wall-clock creation time, milliseconds since the Unix epoch.
    pub created_at_ms: u64,
    /// Mixture source the triplet was drawn from.
    pub source: String,
}

pub(crate) fn episode_id(n: u64) -> String {
    format!("ep-{n:08}")
}
