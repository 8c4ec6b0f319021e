//! Episode environment: triplet sampling, prompt rendering, group scoring,
//! refresh cadence and curriculum growth over one shared search graph.
//!
//! Lock order is `maintenance -> graph -> state -> episodes`; no path takes
//! them in any other order.

mod config;
mod episode;

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use config::{
    CurriculumSchedule, EnvironmentConfig, Growth, DEFAULT_PROMPT_TEMPLATE, QUERY_PLACEHOLDER,
};
pub use episode::{Episode, EpisodeState};

use crate::error::{Error, Result};
use crate::index::SearchGraph;
use crate::model::{
    Corpus, DatasetSource, Document, MixtureSampler, PolicyResponse, SourceTriplets, Triplet,
};
use crate::provider::{embed_corpus, EmbeddingProvider};
use crate::refresh::{refresh_shared, RefreshReport, RefreshRequest};
use crate::reward::{score_group, RolloutGroup};
use crate::scalar::Scalar;

const RECENT_REWARD_WINDOW: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CurriculumChange {
    pub from_size: usize,
    pub to_size: usize,
    pub graph_version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StepOutcome<T> {
    pub episode_id: String,
    pub group: RolloutGroup<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refresh: Option<RefreshReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub curriculum: Option<CurriculumChange>,
    /// Refresh or growth failures after the group was scored. The episode
    /// stays scored; the graph is unchanged by the failed operation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub maintenance_errors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    pub episodes_created: u64,
    pub episodes_scored: u64,
    pub episodes_expired: u64,
    pub episodes_open: usize,
    pub refreshes: u64,
    pub refresh_failures: u64,
    /// Mean reward over every scored response.
    pub mean_reward: Option<f64>,
    /// Mean of the per-episode mean reward over the last 100 episodes.
    pub mean_recent_reward: Option<f64>,
    pub graph_version: u64,
    pub active_size: usize,
    pub corpus_size: usize,
    pub curriculum_stage: u64,
    pub documents_embedded: u64,
}

struct Slot {
    episode: Episode,
    opened: Instant,
    in_flight: bool,
}

#[derive(Default)]
struct EpisodeBook {
    slots: HashMap<String, Slot>,
    expired: u64,
}

struct State {
    rng: ChaCha8Rng,
    next_id: u64,
    scored: u64,
    manual_stage: u64,
    active_size: usize,
    /// Eligible triplet indices per source.
    eligible: Vec<Vec<usize>>,
    /// Sources with at least one eligible triplet and a sampler over them.
    sampler: Option<(Vec<usize>, MixtureSampler)>,
    recent: VecDeque<Triplet>,
    refreshes: u64,
    refresh_failures: u64,
    reward_sum: f64,
    reward_count: u64,
    recent_rewards: VecDeque<f64>,
    last_refresh: Option<RefreshReport>,
}

pub struct Environment<T: Scalar> {
    config: EnvironmentConfig,
    template: String,
    corpus: Arc<Corpus>,
    /// Admission order: `order[..active_size]` are the active positions.
    order: Vec<usize>,
    /// Inverse of `order`.
    rank: Vec<usize>,
    sources: Vec<SourceTriplets>,
    graph: RwLock<SearchGraph<T>>,
    provider: RwLock<Arc<dyn EmbeddingProvider<T>>>,
    maintenance: Mutex<()>,
    state: Mutex<State>,
    episodes: Mutex<EpisodeBook>,
}

impl<T: Scalar> Environment<T> {
    /// Single uniform triplet source.
    pub fn with_triplets(
        corpus: Corpus,
        triplets: Vec<Triplet>,
        provider: Arc<dyn EmbeddingProvider<T>>,
        config: EnvironmentConfig,
    ) -> Result<Self> {
        let source = SourceTriplets {
            source: DatasetSource::new(corpus.name().to_owned(), 1.0)?,
            triplets,
        };
        Self::new(corpus, vec![source], provider, config)
    }

    /// Builds the initial graph over the curriculum's starting subset.
    pub fn new(
        corpus: Corpus,
        sources: Vec<SourceTriplets>,
        provider: Arc<dyn EmbeddingProvider<T>>,
        config: EnvironmentConfig,
    ) -> Result<Self> {
        config.validate()?;
        let template = config.template_text()?;
        if sources.is_empty() {
            return Err(Error::InvalidArgument("no triplet sources".into()));
        }
        for s in &sources {
            for (i, t) in s.triplets.iter().enumerate() {
                t.validate(Some(&corpus), i + 1)?;
            }
        }

        let n = corpus.len();
        let mut order: Vec<usize> = (0..n).collect();
        let mut perm_rng = ChaCha8Rng::seed_from_u64(config.seed);
        perm_rng.set_stream(1);
        order.shuffle(&mut perm_rng);
        let mut rank = vec![0; n];
        for (r, &p) in order.iter().enumerate() {
            rank[p] = r;
        }

        let active_size = config.curriculum.size_at_stage(0, n);
        let docs: Vec<&Document> = order[..active_size]
            .iter()
            .map(|&p| &corpus.documents()[p])
            .collect();
        let embeddings = embed_corpus(provider.as_ref(), &docs, config.embed_batch_size)?;
        let subset = Corpus::new(corpus.name(), docs.into_iter().cloned().collect())?;
        let graph = SearchGraph::build(&subset, &embeddings, config.index.clone())?;

        let mut env = Self {
            template,
            corpus: Arc::new(corpus),
            order,
            rank,
            sources,
            graph: RwLock::new(graph),
            provider: RwLock::new(provider),
            maintenance: Mutex::new(()),
            state: Mutex::new(State {
                rng: ChaCha8Rng::seed_from_u64(config.seed),
                next_id: 0,
                scored: 0,
                manual_stage: 0,
                active_size,
                eligible: Vec::new(),
                sampler: None,
                recent: VecDeque::new(),
                refreshes: 0,
                refresh_failures: 0,
                reward_sum: 0.0,
                reward_count: 0,
                recent_rewards: VecDeque::new(),
                last_refresh: None,
            }),
            episodes: Mutex::new(EpisodeBook::default()),
            config,
        };
        let (eligible, sampler) = env.eligibility(active_size)?;
        let st = env.state.get_mut();
        st.eligible = eligible;
        st.sampler = sampler;
        Ok(env)
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    /// Shared graph. Writers must not bypass [`Self::refresh`] or the
    /// curriculum; read access is always safe.
    pub fn graph(&self) -> &RwLock<SearchGraph<T>> {
        &self.graph
    }

    pub fn provider(&self) -> Arc<dyn EmbeddingProvider<T>> {
        self.provider.read().clone()
    }

    /// Swaps in a new provider generation. Its dimension must match the graph.
    pub fn replace_provider(&self, provider: Arc<dyn EmbeddingProvider<T>>) -> Result<()> {
        let dim = self.graph.read().dim();
        if provider.dimension() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: provider.dimension(),
            });
        }
        *self.provider.write() = provider;
        Ok(())
    }

    pub fn active_size(&self) -> usize {
        self.state.lock().active_size
    }

    /// Doc ids of the active subset in admission order.
    pub fn active_doc_ids(&self) -> Vec<String> {
        let k = self.active_size();
        self.order[..k]
            .iter()
            .map(|&p| self.corpus.documents()[p].doc_id.clone())
            .collect()
    }

    pub fn is_active(&self, doc_id: &str) -> bool {
        let k = self.active_size();
        self.corpus
            .position(doc_id)
            .is_some_and(|p| self.rank[p] < k)
    }

    pub fn episode(&self, episode_id: &str) -> Option<Episode> {
        self.episodes
            .lock()
            .slots
            .get(episode_id)
            .map(|s| s.episode.clone())
    }

    pub fn render_prompt(&self, query: &str) -> String {
        self.template.replace(QUERY_PLACEHOLDER, query)
    }

    pub fn last_refresh(&self) -> Option<RefreshReport> {
        self.state.lock().last_refresh.clone()
    }

    pub fn new_episode(&self) -> Result<Episode> {
        self.open_episode(None)
    }

    /// Opens an episode; `group_size` overrides the configured G for this
    /// episode only.
    pub fn open_episode(&self, group_size: Option<usize>) -> Result<Episode> {
        let g = group_size.unwrap_or(self.config.group_size);
        if g == 0 {
            return Err(Error::InvalidArgument("group_size must be >= 1".into()));
        }
        let mut guard = self.state.lock();
        let st = &mut *guard;
        let Some((src_ids, sampler)) = &st.sampler else {
            return Err(Error::NoEligibleTriplet {
                active_size: st.active_size,
            });
        };
        let src = if self.sources.len() == 1 {
            src_ids[0]
        } else {
            src_ids[sampler.sample(&mut st.rng)]
        };
        let pick = st.rng.random_range(0..st.eligible[src].len());
        let triplet = self.sources[src].triplets[st.eligible[src][pick]].clone();
        let id = episode::episode_id(st.next_id);
        st.next_id += 1;
        let episode = Episode {
            episode_id: id.clone(),
            query_id: triplet.query_id.clone(),
            prompt_text: self.render_prompt(&triplet.query_text),
            triplet,
            group_size: g,
            state: EpisodeState::AwaitingResponses,
            created_at_ms: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map_or(0, |d| d.as_millis() as u64),
            source: self.sources[src].source.name.clone(),
        };
        let mut book = self.episodes.lock();
        drop(guard);
        self.sweep(&mut book);
        book.slots.insert(
            id,
            Slot {
                episode: episode.clone(),
                opened: Instant::now(),
                in_flight: false,
            },
        );
        Ok(episode)
    }

    /// Scores one group against the current graph, then runs any refresh or
    /// curriculum growth that falls due.
    pub fn step(
        &self,
        episode_id: &str,
        responses: Vec<PolicyResponse<T>>,
    ) -> Result<StepOutcome<T>> {
        let episode = {
            let mut book = self.episodes.lock();
            self.sweep(&mut book);
            let slot = book
                .slots
                .get_mut(episode_id)
                .ok_or_else(|| Error::UnknownEpisode(episode_id.to_owned()))?;
            if slot.in_flight || slot.episode.state != EpisodeState::AwaitingResponses {
                return Err(Error::EpisodeClosed {
                    id: episode_id.to_owned(),
                    state: if slot.in_flight {
                        "being scored".to_owned()
                    } else {
                        slot.episode.state.to_string()
                    },
                });
            }
            if responses.len() != slot.episode.group_size {
                return Err(Error::WrongResponseCount {
                    expected: slot.episode.group_size,
                    actual: responses.len(),
                });
            }
            if let Some(bad) = responses
                .iter()
                .find(|r| r.query_id != slot.episode.query_id)
            {
                return Err(Error::QueryMismatch {
                    expected: slot.episode.query_id.clone(),
                    actual: bad.query_id.clone(),
                });
            }
            slot.in_flight = true;
            slot.episode.clone()
        };

        let scored = score_group(
            responses,
            &episode.triplet,
            &self.graph.read(),
            &self.config.reward,
        );
        let group = {
            let mut book = self.episodes.lock();
            let slot = book
                .slots
                .get_mut(episode_id)
                .expect("in-flight slots are never removed");
            slot.in_flight = false;
            let group = scored?;
            slot.episode.state = EpisodeState::Scored;
            group
        };

        let (request, target) = {
            let mut st = self.state.lock();
            st.scored += 1;
            let rewards = group.rewards();
            st.reward_sum += rewards.iter().sum::<f64>();
            st.reward_count += rewards.len() as u64;
            st.recent_rewards
                .push_back(rewards.iter().sum::<f64>() / rewards.len() as f64);
            if st.recent_rewards.len() > RECENT_REWARD_WINDOW {
                st.recent_rewards.pop_front();
            }
            st.recent.push_back(episode.triplet.clone());
            while st.recent.len() as u64 > self.config.refresh_interval {
                st.recent.pop_front();
            }
            let request = (st.scored % self.config.refresh_interval == 0).then(|| RefreshRequest {
                batch_size: self.config.embed_batch_size,
                ..RefreshRequest::from_triplets(st.recent.make_contiguous(), self.config.knn_k)
            });
            (request, self.target_size(&st))
        };

        let mut outcome = StepOutcome {
            episode_id: episode.episode_id,
            group,
            refresh: None,
            curriculum: None,
            maintenance_errors: Vec::new(),
        };
        if let Some(req) = request {
            match self.refresh(&req) {
                Ok(r) => outcome.refresh = Some(r),
                Err(e) => outcome.maintenance_errors.push(format!("refresh: {e}")),
            }
        }
        match self.grow_to(target) {
            Ok(c) => outcome.curriculum = c,
            Err(e) => outcome.maintenance_errors.push(format!("curriculum: {e}")),
        }
        Ok(outcome)
    }

    /// Localized refresh with the current provider.
    pub fn refresh(&self, request: &RefreshRequest) -> Result<RefreshReport> {
        let _m = self.maintenance.lock();
        let provider = self.provider();
        let result = refresh_shared(request, provider.as_ref(), &self.graph, &self.corpus);
        let mut st = self.state.lock();
        match &result {
            Ok(r) => {
                st.refreshes += 1;
                st.last_refresh = Some(r.clone());
            }
            Err(_) => st.refresh_failures += 1,
        }
        result
    }

    /// Moves one stage ahead of the episode-driven schedule and returns the
    /// new active size. A no-op once the cap is reached.
    pub fn advance_curriculum(&self) -> Result<usize> {
        let target = {
            let mut st = self.state.lock();
            let cap = self.config.curriculum.target_size.min(self.corpus.len());
            if st.active_size >= cap {
                return Ok(st.active_size);
            }
            st.manual_stage += 1;
            self.target_size(&st)
        };
        self.grow_to(target)?;
        Ok(self.active_size())
    }

    pub fn metrics(&self) -> EnvMetrics {
        let graph_version = self.graph.read().version();
        let st = self.state.lock();
        let book = self.episodes.lock();
        EnvMetrics {
            episodes_created: st.next_id,
            episodes_scored: st.scored,
            episodes_expired: book.expired,
            episodes_open: book
                .slots
                .values()
                .filter(|s| s.episode.state == EpisodeState::AwaitingResponses)
                .count(),
            refreshes: st.refreshes,
            refresh_failures: st.refresh_failures,
            mean_reward: (st.reward_count > 0).then(|| st.reward_sum / st.reward_count as f64),
            mean_recent_reward: (!st.recent_rewards.is_empty())
                .then(|| st.recent_rewards.iter().sum::<f64>() / st.recent_rewards.len() as f64),
            graph_version,
            active_size: st.active_size,
            corpus_size: self.corpus.len(),
            curriculum_stage: self.config.curriculum.stage_at(st.scored) + st.manual_stage,
            documents_embedded: self.provider.read().documents_embedded(),
        }
    }

    fn target_size(&self, st: &State) -> usize {
        let c = &self.config.curriculum;
        c.size_at_stage(c.stage_at(st.scored) + st.manual_stage, self.corpus.len())
    }

    fn sweep(&self, book: &mut EpisodeBook) {
        let Some(ttl) = self.config.episode_ttl_secs.map(Duration::from_secs) else {
            return;
        };
        let mut n = 0;
        for s in book.slots.values_mut() {
            if !s.in_flight
                && s.episode.state == EpisodeState::AwaitingResponses
                && s.opened.elapsed() >= ttl
            {
                s.episode.state = EpisodeState::Expired;
                n += 1;
            }
        }
        book.expired += n;
    }

    #[allow(clippy::type_complexity)]
    fn eligibility(
        &self,
        active_size: usize,
    ) -> Result<(Vec<Vec<usize>>, Option<(Vec<usize>, MixtureSampler)>)> {
        let admitted = |id: &str| {
            self.corpus
                .position(id)
                .is_some_and(|p| self.rank[p] < active_size)
        };
        let eligible: Vec<Vec<usize>> = self
            .sources
            .iter()
            .map(|s| {
                s.triplets
                    .iter()
                    .enumerate()
                    .filter(|(_, t)| t.doc_ids().all(admitted))
                    .map(|(i, _)| i)
                    .collect()
            })
            .collect();
        let live: Vec<usize> = (0..eligible.len())
            .filter(|&i| !eligible[i].is_empty())
            .collect();
        if live.is_empty() {
            return Ok((eligible, None));
        }
        let weights: Vec<DatasetSource> = live
            .iter()
            .map(|&i| self.sources[i].source.clone())
            .collect();
        let sampler = MixtureSampler::new(&weights)?;
        Ok((eligible, Some((live, sampler))))
    }

    /// Rebuilds the graph over the first `size` admitted documents. Old
    /// members keep their current graph embeddings; only new documents are
    /// embedded.
    fn grow_to(&self, size: usize) -> Result<Option<CurriculumChange>> {
        let _m = self.maintenance.lock();
        let from = self.active_size();
        if size <= from {
            return Ok(None);
        }
        let provider = self.provider();
        let (mut embeddings, version) = {
            let g = self.graph.read();
            (g.embeddings(), g.version())
        };
        let docs: Vec<&Document> = self.order[..size]
            .iter()
            .map(|&p| &self.corpus.documents()[p])
            .collect();
        embeddings.extend(embed_corpus(
            provider.as_ref(),
            &docs[from..],
            self.config.embed_batch_size,
        )?);
        let subset = Corpus::new(self.corpus.name(), docs.into_iter().cloned().collect())?;
        let mut graph = SearchGraph::build(&subset, &embeddings, self.config.index.clone())?;
        graph.version = version + 1;
        let (eligible, sampler) = self.eligibility(size)?;

        let mut g = self.graph.write();
        *g = graph;
        let mut st = self.state.lock();
        st.active_size = size;
        st.eligible = eligible;
        st.sampler = sampler;
        log::info!("curriculum grew {from} -> {size} documents");
        Ok(Some(CurriculumChange {
            from_size: from,
            to_size: size,
            graph_version: g.version(),
        }))
    }
}
