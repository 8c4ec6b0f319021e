mod loss;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use srr3_core::bench::{graph_corpus, run_refresh_bench, RefreshBenchConfig};
use srr3_core::env::{Environment, EnvironmentConfig};
use srr3_core::index::{load_index, save_index, IndexParams, SearchGraph};
use srr3_core::metrics::{evaluate_run, load_qrels, load_run};
use srr3_core::model::{
    load_corpus, load_embeddings, load_triplets, Corpus, Document, EmbeddingVector,
};
use srr3_core::provider::{embed_corpus, DeterministicTestProvider};
use srr3_core::synth::{generate, simulate, Policy, SyntheticSpec, DEFAULT_ORACLE_NOISE};
use srr3_server::{AppState, ServerConfig};

/// Index building, serving, evaluation and desk-scale simulation.
#[derive(Debug, Parser)]
#[command(name = "srr3", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Embed a corpus and write an index snapshot.
    BuildIndex(BuildIndexArgs),
    /// Run the HTTP episode service.
    Serve(ServeArgs),
    /// Score a TREC run against qrels.
    Eval(EvalArgs),
    /// Compare localized refresh against a full rebuild under drift.
    RefreshBench(RefreshBenchArgs),
    /// Drive episodes with a built-in policy and write a CSV transcript.
    Simulate(SimulateArgs),
    /// Write a synthetic corpus with planted positives and hard negatives.
    GenSynthetic(GenSyntheticArgs),
    /// Evaluate one loss from a JSON description.
    Loss(LossArgs),
}

#[derive(Debug, Args)]
struct BuildIndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Precomputed embeddings (JSONL); otherwise the deterministic provider.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long = "M", default_value_t = 16)]
    m: usize,
    #[arg(long, default_value_t = 200)]
    ef_construction: usize,
    #[arg(long)]
    ef_search: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    triplets: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Server config JSON; falls back to `SRR3_CONFIG`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Remote embedding server; the deterministic provider when unset.
    #[arg(long)]
    provider_url: Option<String>,
    #[arg(long)]
    bind: Option<String>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
    k: Vec<usize>,
    #[arg(long)]
    json: bool,
}

#[derive(Debug, Args)]
struct RefreshBenchArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    drift: f64,
    #[arg(long)]
    triplets: PathBuf,
    #[arg(long)]
    report: PathBuf,
    /// Corpus with document text; node ids stand in when absent.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 0.5)]
    magnitude: f64,
    /// Query embeddings (JSONL); drifted documents are sampled when absent.
    #[arg(long)]
    queries: Option<PathBuf>,
    #[arg(long, default_value_t = 200)]
    sampled_queries: usize,
    #[arg(long, default_value_t = 10)]
    knn_k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    triplets: PathBuf,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
    #[arg(long, default_value = "oracle")]
    policy: Policy,
    /// Noise norm for `noisy-oracle`.
    #[arg(long, default_value_t = DEFAULT_ORACLE_NOISE)]
    noise: f64,
    /// Environment config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GenSyntheticArgs {
    #[arg(long, default_value_t = 1000)]
    docs: usize,
    #[arg(long, default_value_t = 100)]
    queries: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    topics: usize,
    #[arg(long, default_value_t = 1.0)]
    spread: f64,
    #[arg(long, default_value_t = 0.1)]
    hard_negative_sim: f64,
    #[arg(long, default_value_t = 0.9)]
    query_sim: f64,
    #[arg(long, default_value_t = 1)]
    random_negatives: usize,
}

#[derive(Debug, Args)]
struct LossArgs {
    /// JSON file, or `-` for stdin.
    #[arg(long, default_value = "-")]
    input: PathBuf,
}

/// Failure printed to stderr as one JSON line.
#[derive(Debug)]
struct CliError {
    code: &'static str,
    message: String,
}

impl CliError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<srr3_core::Error> for CliError {
    fn from(e: srr3_core::Error) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::new("io", e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new("invalid_json", e.to_string())
    }
}

type CliResult = Result<(), CliError>;

/// Prefixes a loader failure with the file it came from.
fn at<T>(path: &Path, r: srr3_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| {
        let mut c = CliError::from(e);
        c.message = format!("{}: {}", path.display(), c.message);
        c
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            fail(&CliError::new("usage", first));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            fail(&e);
            ExitCode::FAILURE
        }
    }
}

fn fail(e: &CliError) {
    eprintln!("{}", json!({"error": e.code, "message": e.message}));
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::BuildIndex(a) => build_index(a),
        Command::Serve(a) => serve(a),
        Command::Eval(a) => eval(a),
        Command::RefreshBench(a) => refresh_bench(a),
        Command::Simulate(a) => run_simulation(a),
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Loss(a) => loss::run(&a.input),
    }
}

fn corpus_embeddings(
    corpus: &Corpus,
    embeddings: Option<&Path>,
    dim: usize,
    seed: u64,
) -> Result<HashMap<String, EmbeddingVector<f64>>, CliError> {
    match embeddings {
        Some(p) => at(p, load_embeddings(p)),
        None => {
            let provider = DeterministicTestProvider::<f64>::new(seed, dim)?;
            let docs: Vec<&Document> = corpus.documents().iter().collect();
            Ok(embed_corpus(&provider, &docs, 64)?)
        }
    }
}

fn build_index(a: BuildIndexArgs) -> CliResult {
    let corpus = at(&a.corpus, load_corpus(&a.corpus))?;
    let embeddings = corpus_embeddings(&corpus, a.embeddings.as_deref(), a.dim, a.seed)?;
    let mut params = IndexParams::with_m(a.m);
    params.ef_construction = a.ef_construction;
    params.seed = a.seed;
    if let Some(ef) = a.ef_search {
        params.ef_search = ef;
    }
    let graph = SearchGraph::build(&corpus, &embeddings, params)?;
    let meta = save_index(&graph, &a.out)?;
    println!(
        "{}",
        json!({
            "node_count": meta.node_count,
            "dimension": meta.dimension,
            "checksum": meta.checksum,
            "out": a.out,
        })
    );
    Ok(())
}

fn serve(a: ServeArgs) -> CliResult {
    let mut cfg = ServerConfig::resolve(a.config.as_deref())?;
    if a.index.is_some() {
        cfg.index_path = a.index;
    }
    if a.triplets.is_some() {
        cfg.triplets_path = a.triplets;
        cfg.mixture_path = None;
    }
    if a.corpus.is_some() {
        cfg.corpus_path = a.corpus;
    }
    if a.embeddings.is_some() {
        cfg.embeddings_path = a.embeddings;
    }
    if a.provider_url.is_some() {
        cfg.provider.url = a.provider_url;
    }
    if let Some(b) = a.bind {
        cfg.bind = b;
    }
    let state = Arc::new(AppState::from_config(&cfg)?);
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&cfg.bind).await?;
        println!(
            "{}",
            json!({"listening": listener.local_addr()?.to_string()})
        );
        srr3_server::serve_on(state, listener).await
    })?;
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let run = at(&a.run, load_run(&a.run))?;
    let qrels = at(&a.qrels, load_qrels(&a.qrels))?;
    let table = evaluate_run(&run, &qrels, &a.k)?;
    if a.json {
        println!("{}", table.to_json());
    } else {
        print!("{}", table.to_text());
    }
    Ok(())
}

fn refresh_bench(a: RefreshBenchArgs) -> CliResult {
    let graph = at(&a.index, load_index::<f64>(&a.index))?;
    let corpus = match &a.corpus {
        Some(p) => at(p, load_corpus(p))?,
        None => graph_corpus(&graph, None)?,
    };
    let triplets = at(&a.triplets, load_triplets(&a.triplets, &corpus))?;
    let queries: Vec<EmbeddingVector<f64>> = match &a.queries {
        Some(p) => {
            let mut q: Vec<_> = at(p, load_embeddings(p))?.into_iter().collect();
            q.sort_by(|x, y| x.0.cmp(&y.0));
            q.into_iter().map(|(_, e)| e).collect()
        }
        None => Vec::new(),
    };
    let cfg = RefreshBenchConfig {
        drift_fraction: a.drift,
        drift_magnitude: a.magnitude,
        knn_k: a.knn_k,
        sampled_queries: a.sampled_queries,
        seed: a.seed,
        ..RefreshBenchConfig::default()
    };
    let report = run_refresh_bench(&graph, &corpus, &triplets, &queries, &cfg)?;
    let text = serde_json::to_string_pretty(&report)? + "\n";
    std::fs::write(&a.report, text)?;
    println!(
        "{}",
        json!({
            "refresh_recall": report.refresh_recall,
            "rebuild_recall": report.rebuild_recall,
            "refresh_calls": report.refresh_calls,
            "rebuild_calls": report.rebuild_calls,
            "zero_drift_delta": report.zero_drift_delta,
        })
    );
    Ok(())
}

fn run_simulation(a: SimulateArgs) -> CliResult {
    let corpus = at(&a.corpus, load_corpus(&a.corpus))?;
    let triplets = at(&a.triplets, load_triplets(&a.triplets, &corpus))?;
    let embeddings = corpus_embeddings(&corpus, a.embeddings.as_deref(), a.dim, a.seed)?;
    let dim = embeddings
        .values()
        .next()
        .map(|e| e.dim())
        .ok_or_else(|| CliError::new("invalid_argument", "empty corpus"))?;
    let provider = DeterministicTestProvider::<f64>::new(a.seed, dim)?.with_anchors(embeddings)?;
    let mut cfg = match &a.config {
        Some(p) => at(p, EnvironmentConfig::load(p))?,
        None => EnvironmentConfig::default(),
    };
    cfg.seed = a.seed;
    if let Some(g) = a.group_size {
        cfg.group_size = g;
    }
    let env = Environment::with_triplets(corpus, triplets, Arc::new(provider), cfg)?;
    let policy = match a.policy {
        Policy::NoisyOracle { .. } => Policy::NoisyOracle { noise: a.noise },
        p => p,
    };
    let sim = simulate(&env, policy, a.episodes, a.seed)?;
    let mut w = csv::Writer::from_path(&a.out)?;
    for row in &sim.rows {
        w.serialize(row)?;
    }
    w.flush()?;
    println!(
        "{}",
        json!({
            "policy": policy.to_string(),
            "episodes": a.episodes,
            "rows": sim.rows.len(),
            "mean_reward": sim.mean_reward(),
            "refreshes": sim.refreshes.len(),
            "out": a.out,
        })
    );
    Ok(())
}

fn gen_synthetic(a: GenSyntheticArgs) -> CliResult {
    let spec = SyntheticSpec {
        docs: a.docs,
        queries: a.queries,
        dim: a.dim,
        seed: a.seed,
        topics: a.topics,
        spread: a.spread,
        hard_negative_similarity: a.hard_negative_sim,
        query_similarity: a.query_sim,
        random_negatives: a.random_negatives,
    };
    let fx = generate::<f64>(&spec)?;
    std::fs::create_dir_all(&a.out_dir)?;
    fx.write(&a.out_dir)?;
    println!(
        "{}",
        json!({"docs": fx.corpus.len(), "queries": fx.triplets.len(), "dim": a.dim, "out_dir": a.out_dir})
    );
    Ok(())
}
