use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::IndexParams;
use crate::reward::RewardConfig;

/// Built-in system prompt with a `{{query}}` placeholder.
pub const DEFAULT_PROMPT_TEMPLATE: &str = include_str!("../../assets/prompt_template.txt");
pub const QUERY_PLACEHOLDER: &str = "{{query}}";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Growth {
    DoubleEvery { episodes: u64 },
    Linear { increment: usize, every: u64 },
    Fixed,
}

impl Default for Growth {
    fn default() -> Self {
        Growth::DoubleEvery { episodes: 512 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurriculumSchedule {
    pub start_size: usize,
    pub target_size: usize,
    pub growth: Growth,
}

impl Default for CurriculumSchedule {
    fn default() -> Self {
        Self {
            start_size: 65_536,
            target_size: 1_048_576,
            growth: Growth::default(),
        }
    }
}

impl CurriculumSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.start_size == 0 || self.start_size > self.target_size {
            return Err(Error::InvalidArgument(
                "curriculum needs 1 <= start_size <= target_size".into(),
            ));
        }
        match self.growth {
            Growth::DoubleEvery { episodes: 0 } | Growth::Linear { every: 0, .. } => Err(
                Error::InvalidArgument("curriculum growth interval must be >= 1".into()),
            ),
            _ => Ok(()),
        }
    }

    /// Stages completed after `episodes` scored episodes.
    pub fn stage_at(&self, episodes: u64) -> u64 {
        match self.growth {
            Growth::DoubleEvery { episodes: n } | Growth::Linear { every: n, .. } => episodes / n,
            Growth::Fixed => 0,
        }
    }

    /// Active size at `stage`, clamped to `min(target_size, corpus_len)`.
    pub fn size_at_stage(&self, stage: u64, corpus_len: usize) -> usize {
        let cap = self.target_size.min(corpus_len);
        let grown = match self.growth {
            Growth::DoubleEvery { .. } => {
                let shift = stage.min(63) as u32;
                self.start_size
                    .checked_shl(shift)
                    .filter(|v| v >> shift == self.start_size)
            }
            Growth::Linear { increment, .. } => increment
                .checked_mul(stage as usize)
                .and_then(|x| x.checked_add(self.start_size)),
            Growth::Fixed => Some(self.start_size),
        };
        grown.unwrap_or(usize::MAX).min(cap)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    pub group_size: usize,
    pub reward: RewardConfig,
    pub curriculum: CurriculumSchedule,
    pub refresh_interval: u64,
    /// Path to a UTF-8 template containing `{{query}}`; the built-in prompt
    /// is used when absent.
    pub prompt_template: Option<PathBuf>,
    pub seed: u64,
    pub index: IndexParams,
    pub knn_k: usize,
    pub embed_batch_size: usize,
    /// Open episodes older than this are expired.
    pub episode_ttl_secs: Option<u64>,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            reward: RewardConfig::default(),
            curriculum: CurriculumSchedule::default(),
            refresh_interval: 64,
            prompt_template: None,
            seed: 0,
            index: IndexParams::default(),
            knn_k: 10,
            embed_batch_size: 64,
            episode_ttl_secs: None,
        }
    }
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::InvalidArgument("group_size must be >= 1".into()));
        }
        if self.refresh_interval == 0 {
            return Err(Error::InvalidArgument(
                "refresh_interval must be >= 1".into(),
            ));
        }
        if self.knn_k == 0 || self.embed_batch_size == 0 {
            return Err(Error::InvalidArgument(
                "knn_k and embed_batch_size must be >= 1".into(),
            ));
        }
        self.reward.validate()?;
        self.curriculum.validate()?;
        self.index.validate()
    }

    /// Reads a JSON config; a relative `prompt_template` path resolves
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let Some(t) = &cfg.prompt_template {
            if t.is_relative() {
                cfg.prompt_template = Some(path.parent().unwrap_or(Path::new(".")).join(t));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn template_text(&self) -> Result<String> {
        let text = match &self.prompt_template {
            Some(p) => std::fs::read_to_string(p)?,
            None => DEFAULT_PROMPT_TEMPLATE.to_owned(),
        };
        if !text.contains(QUERY_PLACEHOLDER) {
            return Err(Error::InvalidArgument(format!(
                "prompt template lacks the {QUERY_PLACEHOLDER} placeholder"
            )));
        }
        Ok(text)
    }
}
