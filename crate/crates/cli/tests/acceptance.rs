//! Acceptance checks. Each criterion prints one `PASS`/`FAIL` line with the
//! measured values and its runtime against the budget; the test fails if any
//! criterion fails.
//!
//! Run with `cargo test -p srr3-cli --test acceptance -- --nocapture`.

use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::Value;
use srr3_core::bench::{graph_corpus, run_refresh_bench, RefreshBenchConfig};
use srr3_core::env::{Environment, EnvironmentConfig};
use srr3_core::index::{build_index, exact_knn, IndexParams, SearchGraph, SearchResult};
use srr3_core::losses::{
    cross_entropy_nll, info_nce, info_nce_grad, kl_divergence, triplet_margin,
};
use srr3_core::model::{
    mixture_weight, Corpus, Document, EmbeddingVector, PolicyResponse, Triplet,
};
use srr3_core::provider::{drift_fraction, DeterministicTestProvider};
use srr3_core::refresh::RefreshRequest;
use srr3_core::reward::{
    dcg_scaled, grpo_advantages, score_group, score_response, LogBase, RewardConfig, SimilarityMode,
};
use srr3_core::synth::{generate, simulate, Policy, SyntheticSpec};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn emb(v: &[f64]) -> EmbeddingVector<f64> {
    EmbeddingVector::from_f64(v).unwrap()
}

fn docs(n: usize) -> Vec<Document> {
    (0..n)
        .map(|i| Document {
            doc_id: format!("d{i:05}"),
            text: format!("document {i}"),
        })
        .collect()
}

fn reward_gate() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let d = 16;
    let corpus = Corpus::new("gate", docs(60)).unwrap();
    let e: HashMap<String, EmbeddingVector<f64>> = corpus
        .documents()
        .iter()
        .map(|doc| (doc.doc_id.clone(), emb(&unit(&mut rng, d))))
        .collect();
    let graph = build_index(&corpus, &e, IndexParams::with_m(4)).unwrap();
    let mut bad = 0;
    for _ in 0..1000 {
        let cfg = RewardConfig {
            k: rng.random_range(1..=60),
            negative_penalty_ratio: rng.random_range(0.0..3.0),
            similarity_mode: if rng.random() {
                SimilarityMode::PositiveDoc
            } else {
                SimilarityMode::TopOne
            },
            log_base: if rng.random() {
                LogBase::Natural
            } else {
                LogBase::Ten
            },
            advantage_epsilon: rng.random_range(0.0..1e-3),
            ..RewardConfig::default()
        };
        let ids: Vec<&String> = e.keys().collect();
        let mut pick = ids.choose_multiple(&mut rng, 3);
        let triplet = Triplet {
            query_id: "q".into(),
            query_text: "q".into(),
            positive_id: pick.next().unwrap().to_string(),
            negative_ids: pick.map(|s| s.to_string()).collect(),
        };
        let g = rng.random_range(1..=16);
        let responses: Vec<PolicyResponse<f64>> = (0..g)
            .map(|_| {
                if rng.random_bool(0.5) {
                    PolicyResponse::without_embedding("q")
                } else {
                    PolicyResponse::with_embedding("q", emb(&unit(&mut rng, d)))
                }
            })
            .collect();
        let single = score_response(
            &PolicyResponse::<f64>::without_embedding("q"),
            &triplet,
            &graph,
            &cfg,
        )
        .unwrap();
        if single.reward != -1.0 || single.token_present {
            bad += 1;
        }
        let group = score_group(responses, &triplet, &graph, &cfg).unwrap();
        for (r, b) in group.responses.iter().zip(&group.breakdowns) {
            if r.embedding.is_none() && (b.reward != -1.0 || b.token_present) {
                bad += 1;
            }
        }
    }
    outcome(
        bad == 0,
        format!("1000 random configs, {bad} violations of reward == -1.0"),
    )
}

fn dcg_closed_forms() -> Outcome {
    let c = RewardConfig::default();
    let ranked = |ids: &[&str]| SearchResult::<f64>::from_ranked_ids(ids);
    let (a, _) = dcg_scaled(&ranked(&["p", "x"]), "p", &[], 1.0, &c);
    let (b, _) = dcg_scaled(&ranked(&["n", "x"]), "p", &["n".into()], 1.0, &c);
    let (r3, s3) = dcg_scaled(&ranked(&["n", "p"]), "p", &["n".into()], 0.9, &c);
    let want_sum = -0.5 + 1.0 / (1.0 + 2f64.ln());
    let want3 = 0.9 * want_sum;
    let mut ok = (a - 1.0).abs() <= 1e-9 && (b + 0.5).abs() <= 1e-9;
    ok &= (s3 - want_sum).abs() <= 1e-9 && (r3 - want3).abs() <= 1e-9;

    // Independent oracle: literal sum over every placement of one positive
    // and two negatives among the top 10 of a 100-doc ranking.
    let ids: Vec<String> = (0..100).map(|i| format!("x{i:03}")).collect();
    let mut placements = 0;
    let mut worst: f64 = 0.0;
    for base in [LogBase::Natural, LogBase::Ten] {
        let cfg = RewardConfig {
            log_base: base,
            ..RewardConfig::default()
        };
        let log = |k: f64| {
            if base == LogBase::Natural {
                k.ln()
            } else {
                k.log10()
            }
        };
        for p in 0..10 {
            for n1 in 0..10 {
                for n2 in n1 + 1..10 {
                    if n1 == p || n2 == p {
                        continue;
                    }
                    let negs = vec![ids[n1].clone(), ids[n2].clone()];
                    let res = SearchResult::<f64>::from_ranked_ids(&ids);
                    let s = 0.37;
                    let (r, sum) = dcg_scaled(&res, &ids[p], &negs, s, &cfg);
                    let oracle = 1.0 / (1.0 + log((p + 1) as f64))
                        - 0.5 / (1.0 + log((n1 + 1) as f64))
                        - 0.5 / (1.0 + log((n2 + 1) as f64));
                    worst = worst.max((sum - oracle).abs()).max((r - s * oracle).abs());
                    placements += 1;
                }
            }
        }
    }
    ok &= worst <= 1e-9 && placements == 720;
    outcome(
        ok,
        format!(
            "examples 1.0 / -0.5 / {want3:.10} (quoted constant 0.081599 differs from its own formula by {:.1e}); \
             {placements} placements, max |err| {worst:.1e}",
            (0.081599 - want3).abs()
        ),
    )
}

fn grpo() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (mut worst_mean, mut worst_std) = (0.0f64, 0.0f64);
    let mut constant_bad = 0;
    let mut constant = 0;
    for i in 0..10_000 {
        let g = rng.random_range(1..=32);
        let rewards: Vec<f64> = if i % 10 == 0 {
            constant += 1;
            vec![rng.random_range(-1.0..1.0); g]
        } else {
            (0..g)
                .map(|_| {
                    if rng.random_bool(0.2) {
                        -1.0
                    } else {
                        rng.random_range(-1.0..1.0)
                    }
                })
                .collect()
        };
        let a = grpo_advantages(&rewards, 1e-8).unwrap();
        if rewards.iter().all(|&r| r == rewards[0]) {
            if a.iter().any(|&x| x != 0.0) {
                constant_bad += 1;
            }
            continue;
        }
        let n = a.len() as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
    }
    outcome(
        worst_mean <= 1e-6 && worst_std <= 1e-3 && constant_bad == 0,
        format!("10000 groups: max |mean| {worst_mean:.1e}, max |std-1| {worst_std:.1e}, {constant} constant groups, {constant_bad} nonzero"),
    )
}

fn mixture() -> Outcome {
    let table = [
        ("TriviaQA", 30.4, 0.21),
        ("Synthetic-100k", 59.5, 0.23),
        ("MSMARCO", 73.5, 0.24),
        ("CodeSearchNet", 294.0, 0.40),
        ("Miracl", 1035.9, 0.79),
        ("S2ORC", 10829.3, 2.47),
    ];
    let mut worst: f64 = 0.0;
    for (_, size, w) in table {
        worst = worst.max((mixture_weight(size).unwrap() - w).abs());
    }
    outcome(
        worst <= 0.005,
        format!("six published weights, max |err| {worst:.4}"),
    )
}

fn losses() -> Outcome {
    let v = |x: &[f64]| emb(x);
    let q = v(&[1.0, 0.0]);
    let checks: Vec<(&str, f64, f64)> = vec![
        (
            "info_nce K=1",
            info_nce(&q, &[v(&[0.3, 1.0])], 0, 0.05).unwrap(),
            0.0,
        ),
        (
            "info_nce tau=1",
            info_nce(&q, &[v(&[1.0, 0.0]), v(&[0.0, 1.0])], 0, 1.0).unwrap(),
            (1.0 + (-1f64).exp()).ln(),
        ),
        (
            "info_nce tau=0.05",
            info_nce(&q, &[v(&[1.0, 0.0]), v(&[0.0, 1.0])], 0, 0.05).unwrap(),
            (-20f64).exp().ln_1p(),
        ),
        (
            "triplet separated",
            triplet_margin(&q, &q, &v(&[0.0, 1.0]), 0.15).unwrap(),
            0.0,
        ),
        (
            "triplet p == n",
            triplet_margin(&q, &v(&[0.5, 0.5]), &v(&[0.5, 0.5]), 0.15).unwrap(),
            0.15,
        ),
        (
            "triplet 0.6/0.7",
            triplet_margin(
                &q,
                &v(&[0.6, 0.8]),
                &v(&[0.7, (1.0f64 - 0.49).sqrt()]),
                0.15,
            )
            .unwrap(),
            0.25,
        ),
        (
            "kl p == q",
            kl_divergence(&[0.3, 0.7], &[0.3, 0.7]).unwrap(),
            0.0,
        ),
        (
            "kl [1,0]||[.5,.5]",
            kl_divergence(&[1.0, 0.0], &[0.5, 0.5]).unwrap(),
            2f64.ln(),
        ),
        (
            "kl [.5,.5]||[.9,.1]",
            kl_divergence(&[0.5, 0.5], &[0.9, 0.1]).unwrap(),
            0.5 * (5.0f64 / 9.0).ln() + 0.5 * 5f64.ln(),
        ),
        (
            "ce one-hot",
            cross_entropy_nll(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[1, 0]).unwrap(),
            0.0,
        ),
        (
            "ce uniform",
            cross_entropy_nll(&[vec![0.25; 4], vec![0.25; 4]], &[0, 3]).unwrap(),
            4f64.ln(),
        ),
        (
            "ce two rows",
            cross_entropy_nll(&[vec![0.7, 0.3], vec![0.2, 0.8]], &[0, 1]).unwrap(),
            -(0.7f64.ln() + 0.8f64.ln()) / 2.0,
        ),
    ];
    // Six-decimal reference constants, checked against the same closed forms.
    let quoted = [0.313262, 0.693147, 0.510826, 1.386294];
    let quoted_ok = quoted
        .iter()
        .zip([checks[1].2, checks[7].2, checks[8].2, checks[10].2])
        .all(|(p, c)| (p - c).abs() <= 1e-6);
    let worst = checks
        .iter()
        .map(|(_, got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    let tiny = checks[2].1;
    let stable = tiny.is_finite() && (tiny - 2.061153622e-9).abs() < 1e-15;

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst_fd: f64 = 0.0;
    for trial in 0..200 {
        let d = 8;
        let tau = if trial % 2 == 0 { 0.05 } else { 1.0 };
        let n = rng.random_range(2..=8);
        let hq: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let ds: Vec<EmbeddingVector<f64>> = (0..n).map(|_| v(&unit(&mut rng, d))).collect();
        let pos = rng.random_range(0..n);
        let grad = info_nce_grad(&v(&hq), &ds, pos, tau).unwrap();
        let h = 1e-6;
        let num: Vec<f64> = (0..d)
            .map(|j| {
                let mut a = hq.clone();
                let mut b = hq.clone();
                a[j] += h;
                b[j] -= h;
                (info_nce(&v(&a), &ds, pos, tau).unwrap()
                    - info_nce(&v(&b), &ds, pos, tau).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let diff = grad
            .iter()
            .zip(&num)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = grad.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-8);
        worst_fd = worst_fd.max(diff / scale);
    }
    let ce_quoted = (0.289870 - (-(0.7f64.ln() + 0.8f64.ln()) / 2.0)).abs();
    outcome(
        worst <= 1e-6 && quoted_ok && stable && worst_fd <= 1e-4,
        format!(
            "12 closed forms max |err| {worst:.1e}; tau=0.05 value {tiny:.4e}; gradient check max rel err {worst_fd:.1e} over 200 fixtures; \
             quoted ce constant 0.289870 differs from its own formula by {ce_quoted:.1e}"
        ),
    )
}

fn index_quality() -> Outcome {
    let (n, d) = (10_000, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let corpus = Corpus::new("random", docs(n)).unwrap();
    let e: HashMap<String, EmbeddingVector<f32>> = corpus
        .documents()
        .iter()
        .map(|doc| {
            let v: Vec<f32> = unit(&mut rng, d).into_iter().map(|x| x as f32).collect();
            (doc.doc_id.clone(), EmbeddingVector::new(v).unwrap())
        })
        .collect();
    let g = build_index(&corpus, &e, IndexParams::default()).unwrap();
    let mut hit = 0;
    let mut exact_mismatch = 0;
    for _ in 0..200 {
        let v: Vec<f32> = unit(&mut rng, d).into_iter().map(|x| x as f32).collect();
        let q = EmbeddingVector::new(v).unwrap();
        let truth = exact_knn(&e, &q, 10).unwrap();
        let set: HashSet<&str> = truth.ids().collect();
        hit += g
            .knn_search(&q, 10, None)
            .unwrap()
            .ids()
            .filter(|id| set.contains(id))
            .count();
        let full = g.knn_search(&q, 10, Some(n)).unwrap();
        if full.ids().collect::<Vec<_>>() != truth.ids().collect::<Vec<_>>() {
            exact_mismatch += 1;
        }
    }
    let recall = hit as f64 / 2000.0;
    outcome(
        recall >= 0.90 && exact_mismatch == 0,
        format!("recall@10 {recall:.4} (10k x d64, 200 queries, M=16); ef=n mismatches {exact_mismatch}/200"),
    )
}

fn refresh_economy() -> Outcome {
    let fx = generate::<f64>(&SyntheticSpec {
        docs: 10_000,
        queries: 10,
        dim: 64,
        seed: 7,
        topics: 100,
        spread: 1.0,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let graph = SearchGraph::build(&fx.corpus, &fx.doc_embeddings, IndexParams::with_m(8)).unwrap();
    let members = graph_corpus(&graph, Some(&fx.corpus)).unwrap();
    let mut lines = Vec::new();
    let mut pass = true;
    for seed in 0..3u64 {
        let cfg = RefreshBenchConfig {
            seed,
            ..RefreshBenchConfig::default()
        };
        let mut drifted: Vec<String> =
            drift_fraction(&members, cfg.drift_fraction, cfg.drift_magnitude, seed)
                .into_keys()
                .collect();
        drifted.sort();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pick: Vec<&String> = drifted.choose_multiple(&mut rng, 3).collect();
        let triplet = Triplet {
            query_id: "bench-q".into(),
            query_text: "bench query".into(),
            positive_id: pick[0].clone(),
            negative_ids: vec![pick[1].clone(), pick[2].clone()],
        };
        let r = run_refresh_bench(&graph, &fx.corpus, &[triplet], &[], &cfg).unwrap();
        let gap = r.rebuild_recall - r.refresh_recall;
        let ok = gap <= 0.05 && r.call_ratio >= 5.0 && r.zero_drift_delta.abs() <= 0.005;
        pass &= ok;
        lines.push(format!(
            "seed {seed}: refresh {:.4} vs rebuild {:.4} (stale {:.4}), calls {} vs {} ({:.1}x), zero-drift delta {:+.4}",
            r.refresh_recall, r.rebuild_recall, r.stale_recall, r.refresh_calls, r.rebuild_calls, r.call_ratio, r.zero_drift_delta
        ));
    }
    outcome(pass, lines.join("; "))
}

fn srr3(args: &[&str], cwd: &Path) -> Value {
    let out = Command::new(env!("CARGO_BIN_EXE_srr3"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

fn end_to_end() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    srr3(
        &[
            "gen-synthetic",
            "--docs",
            "1000",
            "--queries",
            "100",
            "--dim",
            "64",
            "--seed",
            "0",
            "--out-dir",
            "fx",
        ],
        p,
    );
    let run = |policy: &str| {
        let out = format!("{policy}.csv");
        let v = srr3(
            &[
                "simulate",
                "--corpus",
                "fx/corpus.jsonl",
                "--triplets",
                "fx/triplets.jsonl",
                "--embeddings",
                "fx/embeddings.jsonl",
                "--episodes",
                "100",
                "--policy",
                policy,
                "--seed",
                "1",
                "--out",
                &out,
            ],
            p,
        );
        let rows = std::fs::read_to_string(p.join(&out))
            .unwrap()
            .lines()
            .count()
            - 1;
        (v["mean_reward"].as_f64().unwrap(), rows)
    };
    let (oracle, rows_o) = run("oracle");
    let (random, rows_r) = run("random");
    outcome(
        oracle >= 0.95 && random < 0.1 && rows_o == 1600 && rows_r == 1600,
        format!("oracle mean {oracle:.4}, random mean {random:.4}, 1600 csv rows each (1k docs, 100 episodes, G=16)"),
    )
}

/// Build, 50 noisy-oracle episodes, then a refresh under a drifted provider.
fn pipeline(seed: u64) -> Vec<u8> {
    let fx = generate::<f64>(&SyntheticSpec {
        docs: 1000,
        queries: 100,
        dim: 32,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let provider = DeterministicTestProvider::<f64>::new(seed, 32).unwrap();
    let cfg = EnvironmentConfig {
        seed,
        ..EnvironmentConfig::default()
    };
    let env = Environment::with_triplets(
        fx.corpus.clone(),
        fx.triplets.clone(),
        Arc::new(provider.generation(HashMap::new()).unwrap()),
        cfg,
    )
    .unwrap();
    let mut out = env.graph().read().to_bytes();
    let sim = simulate(&env, Policy::NoisyOracle { noise: 0.3 }, 50, seed).unwrap();
    out.extend(serde_json::to_vec(&sim.rows).unwrap());
    let drift = drift_fraction(&fx.corpus, 0.05, 0.5, seed);
    env.replace_provider(Arc::new(provider.generation(drift).unwrap()))
        .unwrap();
    let request = RefreshRequest::from_triplets(&fx.triplets[..4], 10);
    let mut report = env.refresh(&request).unwrap();
    // Wall-clock timing is the one field outside the reproducibility contract.
    report.wall_time_ms = 0.0;
    out.extend(serde_json::to_vec(&report).unwrap());
    let g = env.graph().read();
    out.extend(g.to_bytes());
    for id in g.doc_ids() {
        for x in g.embedding_of(id).unwrap().as_slice() {
            out.extend(x.to_le_bytes());
        }
    }
    out
}

fn determinism() -> Outcome {
    let a = pipeline(21);
    let b = pipeline(21);
    let c = pipeline(22);
    outcome(
        a == b && a != c,
        format!(
            "two runs {} bytes each, identical: {}; different seed differs: {}",
            a.len(),
            a == b,
            a != c
        ),
    )
}

#[test]
fn acceptance() {
    type Check = fn() -> Outcome;
    // libtest prints "test acceptance ... " without a newline first
    println!();
    let criteria: [(&str, Duration, Check); 9] = [
        ("reward gate", Duration::from_secs(1), reward_gate),
        (
            "dcg closed forms",
            Duration::from_secs(10),
            dcg_closed_forms,
        ),
        ("grpo advantages", Duration::from_secs(5), grpo),
        ("mixture weights", Duration::from_secs(1), mixture),
        ("loss closed forms", Duration::from_secs(10), losses),
        ("index quality", Duration::from_secs(120), index_quality),
        ("refresh economy", Duration::from_secs(300), refresh_economy),
        (
            "end-to-end environment",
            Duration::from_secs(120),
            end_to_end,
        ),
        ("determinism", Duration::from_secs(180), determinism),
    ];
    let mut failed = Vec::new();
    for (name, budget, check) in criteria {
        let t = Instant::now();
        let o = check();
        let took = t.elapsed();
        let pass = o.pass && took <= budget;
        println!(
            "{} {name}: {} [{:.2}s / {}s budget]",
            if pass { "PASS" } else { "FAIL" },
            o.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !pass {
            failed.push(name);
        }
    }
    println!(
        "SUBSTITUTED published benchmark numbers: retrieval scores on real benchmarks and the trained-model \
         score distributions need trained language models; the property checks above stand in for them"
    );
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
