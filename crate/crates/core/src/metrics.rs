//! Binary-relevance retrieval metrics over TREC-style run and qrels files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::SearchResult;

pub type Qrels = BTreeMap<String, BTreeSet<String>>;
pub type RunFile = BTreeMap<String, SearchResult<f64>>;

fn check(relevant: &BTreeSet<String>, k: usize) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::EmptyRelevantSet);
    }
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    Ok(())
}

pub fn recall_at_k(
    results: &SearchResult<f64>,
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    check(relevant, k)?;
    let hit = results
        .ids()
        .take(k)
        .filter(|id| relevant.contains(*id))
        .count();
    Ok(hit as f64 / relevant.len() as f64)
}

pub fn ndcg_at_k(
    results: &SearchResult<f64>,
    relevant: &BTreeSet<String>,
    k: usize,
) -> Result<f64> {
    check(relevant, k)?;
    let gain = |i: usize| 1.0 / ((i + 2) as f64).log2();
    let dcg: f64 = results
        .ids()
        .take(k)
        .enumerate()
        .filter(|(_, id)| relevant.contains(*id))
        .map(|(i, _)| gain(i))
        .sum();
    let ideal: f64 = (0..relevant.len().min(k)).map(gain).sum();
    Ok(dcg / ideal)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricTable {
    pub queries: usize,
    pub ks: Vec<usize>,
    pub ndcg: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
}

impl MetricTable {
    /// Flat JSON object, e.g. `{"queries": 10, "ndcg@10": 0.5, ...}`.
    pub fn to_json(&self) -> serde_json::Value {
        let mut m = serde_json::Map::new();
        m.insert("queries".into(), self.queries.into());
        for k in &self.ks {
            m.insert(format!("ndcg@{k}"), self.ndcg[k].into());
        }
        for k in &self.ks {
            m.insert(format!("recall@{k}"), self.recall[k].into());
        }
        serde_json::Value::Object(m)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<8}", "metric");
        for k in &self.ks {
            let _ = write!(out, "{:>10}", format!("@{k}"));
        }
        out.push('\n');
        for (name, row) in [("nDCG", &self.ndcg), ("Recall", &self.recall)] {
            let _ = write!(out, "{name:<8}");
            for k in &self.ks {
                let _ = write!(out, "{:>10.4}", row[k]);
            }
            out.push('\n');
        }
        let _ = writeln!(out, "queries: {}", self.queries);
        out
    }
}

/// Macro-averaged nDCG@k and Recall@k over the run's queries.
pub fn evaluate_run(run: &RunFile, qrels: &Qrels, ks: &[usize]) -> Result<MetricTable> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::InvalidArgument(
            "ks must be non-empty and >= 1".into(),
        ));
    }
    let missing: Vec<String> = run
        .keys()
        .filter(|q| !qrels.contains_key(*q))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingQrels(missing));
    }
    if run.is_empty() {
        return Err(Error::InvalidArgument("run contains no queries".into()));
    }
    let mut ks: Vec<usize> = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut table = MetricTable {
        queries: run.len(),
        ks: ks.clone(),
        ndcg: BTreeMap::new(),
        recall: BTreeMap::new(),
    };
    let n = run.len() as f64;
    for &k in &ks {
        let mut nd = 0.0;
        let mut rc = 0.0;
        for (q, res) in run {
            nd += ndcg_at_k(res, &qrels[q], k)?;
            rc += recall_at_k(res, &qrels[q], k)?;
        }
        table.ndcg.insert(k, nd / n);
        table.recall.insert(k, rc / n);
    }
    Ok(table)
}

fn fields(line: &str, n: usize, lineno: usize) -> Result<Vec<&str>> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() != n {
        return Err(Error::Parse {
            line: lineno,
            message: format!("expected {n} fields, found {}", f.len()),
        });
    }
    Ok(f)
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Parses `query_id doc_id relevance` lines; relevance 0 rows are dropped.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut q = Qrels::new();
    for (lineno, line) in content_lines(text) {
        let f = fields(line, 3, lineno)?;
        let rel: i64 = f[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("relevance `{}` is not an integer", f[2]),
        })?;
        if rel > 0 {
            q.entry(f[0].to_owned())
                .or_default()
                .insert(f[1].to_owned());
        }
    }
    Ok(q)
}

/// Parses `query_id doc_id rank score` lines, ordering each query by rank.
pub fn parse_run(text: &str) -> Result<RunFile> {
    let mut rows: BTreeMap<String, Vec<(usize, f64, String)>> = BTreeMap::new();
    let mut seen = BTreeSet::new();
    for (lineno, line) in content_lines(text) {
        let f = fields(line, 4, lineno)?;
        let rank: usize = f[2].parse().map_err(|_| Error::Parse {
            line: lineno,
            message: format!("rank `{}` is not a positive integer", f[2]),
        })?;
        let score: f64 = f[3]
            .parse()
            .ok()
            .filter(|s: &f64| s.is_finite())
            .ok_or_else(|| Error::Parse {
                line: lineno,
                message: format!("score `{}` is not a finite number", f[3]),
            })?;
        if rank == 0 {
            return Err(Error::Parse {
                line: lineno,
                message: "ranks start at 1".into(),
            });
        }
        if !seen.insert((f[0].to_owned(), f[1].to_owned())) {
            return Err(Error::Parse {
                line: lineno,
                message: format!("duplicate document `{}` for query `{}`", f[1], f[0]),
            });
        }
        rows.entry(f[0].to_owned())
            .or_default()
            .push((rank, score, f[1].to_owned()));
    }
    Ok(rows
        .into_iter()
        .map(|(q, mut r)| {
            r.sort_by(|a, b| {
                a.0.cmp(&b.0)
                    .then(b.1.total_cmp(&a.1))
                    .then_with(|| a.2.cmp(&b.2))
            });
            let mut res =
                SearchResult::from_ranked_ids(&r.iter().map(|x| x.2.as_str()).collect::<Vec<_>>());
            for (hit, row) in res.hits.iter_mut().zip(&r) {
                hit.similarity = row.1;
            }
            (q, res)
        })
        .collect())
}

pub fn load_qrels(path: &Path) -> Result<Qrels> {
    parse_qrels(&std::fs::read_to_string(path)?)
}

pub fn load_run(path: &Path) -> Result<RunFile> {
    parse_run(&std::fs::read_to_string(path)?)
}

/// Renders a run in the TSV format read by [`parse_run`].
pub fn format_run(run: &RunFile) -> String {
    let mut out = String::new();
    for (q, res) in run {
        for h in &res.hits {
            let _ = writeln!(out, "{q}\t{}\t{}\t{:.6}", h.doc_id, h.rank, h.similarity);
        }
    }
    out
}
