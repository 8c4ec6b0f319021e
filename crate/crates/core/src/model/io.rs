//! JSON Lines readers and writers for corpora, triplets, embeddings and
//! mixture manifests.
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingVector;
use super::mixture::DatasetSource;
use super::types::{Corpus, Document, Triplet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Yields `(line_number, record)` for every non-blank line.
fn read_jsonl<R: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, R)>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if line_no == 1 && trimmed.starts_with('\u{feff}') {
            return Err(Error::Parse {
                line: 1,
                message: "byte order mark is not allowed".into(),
            });
        }
        let rec = serde_json::from_str(trimmed).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        out.push((line_no, rec));
    }
    Ok(out)
}

pub fn write_jsonl<W: Serialize>(path: &Path, records: impl IntoIterator<Item = W>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_corpus(path: &Path) -> Result<Corpus> {
    let records: Vec<(usize, Document)> = read_jsonl(path)?;
    let mut seen = HashSet::with_capacity(records.len());
    for (line, doc) in &records {
        if doc.text.is_empty() {
            return Err(Error::InvalidRecord {
                line: *line,
                message: format!("document `{}` has empty text", doc.doc_id),
            });
        }
        if !seen.insert(doc.doc_id.as_str()) {
            return Err(Error::DuplicateId {
                line: *line,
                id: doc.doc_id.clone(),
            });
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::new(name, records.into_iter().map(|(_, d)| d).collect())
}

/// Loads triplets and validates each one against `corpus`.
pub fn load_triplets(path: &Path, corpus: &Corpus) -> Result<Vec<Triplet>> {
    let records: Vec<(usize, Triplet)> = read_jsonl(path)?;
    let mut seen = HashSet::with_capacity(records.len());
    for (line, t) in &records {
        if !seen.insert(t.query_id.as_str()) {
            return Err(Error::DuplicateId {
                line: *line,
                id: t.query_id.clone(),
            });
        }
        t.validate(Some(corpus), *line)?;
    }
    Ok(records.into_iter().map(|(_, t)| t).collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EmbeddingRecord<T> {
    pub doc_id: String,
    pub embedding: EmbeddingVector<T>,
}

/// Reads `{"doc_id", "embedding"}` lines; all vectors must share one dimension.
pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<HashMap<String, EmbeddingVector<T>>> {
    let records: Vec<(usize, EmbeddingRecord<T>)> = read_jsonl(path)?;
    let mut out = HashMap::with_capacity(records.len());
    let mut dim = None;
    for (line, rec) in records {
        let d = *dim.get_or_insert(rec.embedding.dim());
        if rec.embedding.dim() != d {
            return Err(Error::InvalidRecord {
                line,
                message: format!(
                    "embedding dimension {} differs from {d}",
                    rec.embedding.dim()
                ),
            });
        }
        if out.insert(rec.doc_id.clone(), rec.embedding).is_some() {
            return Err(Error::DuplicateId {
                line,
                id: rec.doc_id,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub path: PathBuf,
    pub size_mib: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub sources: Vec<ManifestEntry>,
}

/// Triplets of one mixture source.
#[derive(Debug, Clone)]
pub struct SourceTriplets {
    pub source: DatasetSource,
    pub triplets: Vec<Triplet>,
}

/// Loads a mixture manifest; relative source paths resolve against the
/// manifest's directory.
pub fn load_mixture(path: &Path, corpus: &Corpus) -> Result<Vec<SourceTriplets>> {
    let manifest: MixtureManifest = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    if manifest.sources.is_empty() {
        return Err(Error::InvalidArgument(
            "mixture manifest lists no sources".into(),
        ));
    }
    let base = path.parent().unwrap_or(Path::new("."));
    manifest
        .sources
        .into_iter()
        .map(|e| {
            let p = if e.path.is_absolute() {
                e.path.clone()
            } else {
                base.join(&e.path)
            };
            Ok(SourceTriplets {
                source: DatasetSource::new(e.name, e.size_mib)?,
                triplets: load_triplets(&p, corpus)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    const CORPUS: &str = r#"{"doc_id":"d1","text":"alpha"}
{"doc_id":"d2","text":"beta"}
{"doc_id":"d3","text":"gamma"}
{"doc_id":"d4","text":"delta"}
"#;

    #[test]
    fn loads_well_formed_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = load_corpus(&write(dir.path(), "c.jsonl", CORPUS)).unwrap();
        assert_eq!(corpus.len(), 4);
        assert_eq!(corpus.name(), "c");
        let t = write(
            dir.path(),
            "t.jsonl",
            r#"{"query_id":"q1","query":"first","positive_id":"d1","negative_ids":["d2"]}
{"query_id":"q2","query":"second","positive_id":"d2","negative_ids":["d3","d4"]}
{"query_id":"q3","query":"third","positive_id":"d4","negative_ids":["d1"]}
"#,
        );
        let triplets = load_triplets(&t, &corpus).unwrap();
        let ids: Vec<_> = triplets.iter().map(|t| t.query_id.as_str()).collect();
        assert_eq!(ids, ["q1", "q2", "q3"]);
        assert_eq!(triplets[1].positive_id, "d2");
        assert_eq!(triplets[1].negative_ids, ["d3", "d4"]);
        assert_eq!(triplets[2].query_text, "third");
    }

    #[test]
    fn empty_triplet_file() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = load_corpus(&write(dir.path(), "c.jsonl", CORPUS)).unwrap();
        let t = write(dir.path(), "t.jsonl", "");
        assert!(load_triplets(&t, &corpus).unwrap().is_empty());
    }

    #[test]
    fn distinct_error_kinds() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = load_corpus(&write(dir.path(), "c.jsonl", CORPUS)).unwrap();

        let t = write(
            dir.path(),
            "same.jsonl",
            r#"{"query_id":"q1","query":"x","positive_id":"d1","negative_ids":["d2"]}
{"query_id":"q2","query":"x","positive_id":"d3","negative_ids":["d3"]}
"#,
        );
        let err = load_triplets(&t, &corpus).unwrap_err();
        assert!(matches!(err, Error::InvalidRecord { line: 2, .. }), "{err}");
        assert!(err.to_string().starts_with("line 2"));

        let t = write(
            dir.path(),
            "dangling.jsonl",
            r#"{"query_id":"q1","query":"x","positive_id":"d9","negative_ids":["d2"]}"#,
        );
        assert!(matches!(
            load_triplets(&t, &corpus),
            Err(Error::DanglingReference { line: 1, .. })
        ));

        let t = write(dir.path(), "bad.jsonl", "{\"query_id\":\"q1\"\n");
        assert!(matches!(
            load_triplets(&t, &corpus),
            Err(Error::Parse { line: 1, .. })
        ));

        let c = write(
            dir.path(),
            "dup.jsonl",
            &format!("{CORPUS}{{\"doc_id\":\"d2\",\"text\":\"again\"}}\n"),
        );
        assert!(matches!(
            load_corpus(&c),
            Err(Error::DuplicateId { line: 5, .. })
        ));

        let c = write(
            dir.path(),
            "bom.jsonl",
            "\u{feff}{\"doc_id\":\"d\",\"text\":\"t\"}\n",
        );
        assert!(matches!(load_corpus(&c), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn mixture_manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = load_corpus(&write(dir.path(), "c.jsonl", CORPUS)).unwrap();
        write(
            dir.path(),
            "a.jsonl",
            r#"{"query_id":"q1","query":"x","positive_id":"d1","negative_ids":["d2"]}"#,
        );
        write(
            dir.path(),
            "b.jsonl",
            r#"{"query_id":"q2","query":"y","positive_id":"d3","negative_ids":["d4"]}"#,
        );
        let m = write(
            dir.path(),
            "mix.json",
            r#"{"sources":[{"name":"a","path":"a.jsonl","size_mib":30.4},{"name":"b","path":"b.jsonl","size_mib":10829.3}]}"#,
        );
        let mix = load_mixture(&m, &corpus).unwrap();
        assert_eq!(mix.len(), 2);
        assert!((mix[1].source.weight() - 2.47).abs() < 0.005);
        assert_eq!(mix[0].triplets[0].query_id, "q1");
    }

    #[test]
    fn embeddings_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let recs = vec![
            EmbeddingRecord {
                doc_id: "a".into(),
                embedding: EmbeddingVector::<f32>::new(vec![0.25, -1.5]).unwrap(),
            },
            EmbeddingRecord {
                doc_id: "b".into(),
                embedding: EmbeddingVector::<f32>::new(vec![1e-7, 3.0]).unwrap(),
            },
        ];
        write_jsonl(&p, &recs).unwrap();
        let back = load_embeddings::<f32>(&p).unwrap();
        assert_eq!(back["a"], recs[0].embedding);
        assert_eq!(back["b"], recs[1].embedding);
        let bad = write(
            dir.path(),
            "mixed.jsonl",
            "{\"doc_id\":\"a\",\"embedding\":[1]}\n{\"doc_id\":\"b\",\"embedding\":[1,2]}\n",
        );
        assert!(matches!(
            load_embeddings::<f32>(&bad),
            Err(Error::InvalidRecord { line: 2, .. })
        ));
    }
}
