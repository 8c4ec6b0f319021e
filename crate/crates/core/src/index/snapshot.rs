//! Binary snapshot format (little-endian):
//!
//! ```text
//! magic        8 bytes  "SRR3IDX1"
//! version      u32
//! dimension    u32
//! node count   u64
//! params       u32 M, u32 ef_construction, u32 ef_search,
//!              f64 level_multiplier, u64 seed,
//!              u64 graph version, u32 entry point (u32::MAX = none)
//! nodes        per node: u32 length + UTF-8 doc id, u8 level, dim x f32
//! adjacency    per node, per level 0..=level: LEB128 count, then the sorted
//!              neighbor ids as LEB128 deltas (first one absolute)
//! ```
//!
//! Edge weights are not stored; they are recomputed from the embeddings on
//! load. A JSON sidecar `<path>.meta.json` records the build seed and graph
//! version.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::graph::{Edge, IndexParams, NodeId, SearchGraph};
use crate::error::{Error, Result};
use crate::model::dot;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 8] = b"SRR3IDX1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    pub format_version: u32,
    pub seed: u64,
    pub graph_version: u64,
    pub node_count: usize,
    pub dimension: usize,
    pub checksum: String,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn varint(&mut self, what: &str) -> Result<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8(what)?;
            v |= ((b & 0x7f) as u64) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(Error::Corrupt(format!("overlong varint in {what}")))
    }
}

impl<T: Scalar> SearchGraph<T> {
    /// Serializes the graph. Embeddings are written as f32.
    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(64 + n * (self.dim * 4 + 16 + self.params.m * 2));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        let p = &self.params;
        out.extend_from_slice(&(p.m as u32).to_le_bytes());
        out.extend_from_slice(&(p.ef_construction as u32).to_le_bytes());
        out.extend_from_slice(&(p.ef_search as u32).to_le_bytes());
        out.extend_from_slice(&p.level_multiplier.to_le_bytes());
        out.extend_from_slice(&p.seed.to_le_bytes());
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.entry.unwrap_or(u32::MAX).to_le_bytes());
        for node in 0..n as NodeId {
            let id = self.doc_id(node).as_bytes();
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id);
            out.push(self.levels[node as usize]);
            for &x in self.vector(node) {
                out.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
            }
        }
        for node in 0..n as NodeId {
            for level in 0..=self.level(node) {
                let list = self.neighbors(node, level);
                put_varint(&mut out, list.len() as u64);
                let mut prev = 0u32;
                for (i, e) in list.iter().enumerate() {
                    let delta = if i == 0 { e.target } else { e.target - prev };
                    put_varint(&mut out, delta as u64);
                    prev = e.target;
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::BadMagic);
        }
        r.pos = MAGIC.len();
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedFormat(version));
        }
        let dim = r.u32("dimension")? as usize;
        let n = r.u64("node count")? as usize;
        let params = IndexParams {
            m: r.u32("M")? as usize,
            ef_construction: r.u32("ef_construction")? as usize,
            ef_search: r.u32("ef_search")? as usize,
            level_multiplier: r.f64("level multiplier")?,
            seed: r.u64("seed")?,
        };
        let graph_version = r.u64("graph version")?;
        let entry = r.u32("entry point")?;
        let mut g = SearchGraph::<T>::empty(dim, params)
            .map_err(|e| Error::Corrupt(format!("header: {e}")))?;
        g.version = graph_version;
        if n > u32::MAX as usize || n > buf.len() {
            return Err(Error::Truncated(format!(
                "node count {n} exceeds file size"
            )));
        }
        g.doc_ids.reserve(n);
        g.vectors.reserve(n * dim);
        for node in 0..n {
            let len = r.u32("doc id length")? as usize;
            let id = std::str::from_utf8(r.take(len, "doc id")?)
                .map_err(|_| Error::Corrupt(format!("doc id of node {node} is not UTF-8")))?
                .to_owned();
            let level = r.u8("level")?;
            let raw = r.take(dim * 4, "embedding")?;
            let start = g.vectors.len();
            for chunk in raw.chunks_exact(4) {
                let x = f32::from_le_bytes(chunk.try_into().unwrap());
                if !x.is_finite() {
                    return Err(Error::Corrupt(format!(
                        "non-finite embedding in node {node}"
                    )));
                }
                g.vectors.push(T::of(x as f64));
            }
            let row = &g.vectors[start..];
            g.norms.push(dot(row, row).sqrt());
            if g.lookup.insert(id.clone(), node as NodeId).is_some() {
                return Err(Error::Corrupt(format!("duplicate doc id `{id}`")));
            }
            g.doc_ids.push(id);
            g.levels.push(level);
        }
        for node in 0..n {
            let mut per_level = Vec::with_capacity(g.levels[node] as usize + 1);
            for _ in 0..=g.levels[node] {
                let count = r.varint("adjacency count")? as usize;
                if count > n {
                    return Err(Error::Corrupt(format!(
                        "node {node}: degree {count} exceeds node count"
                    )));
                }
                let mut list = Vec::with_capacity(count);
                let mut prev = 0u64;
                for i in 0..count {
                    let d = r.varint("adjacency")?;
                    let target = if i == 0 { d } else { prev + d };
                    if (i > 0 && d == 0) || target >= n as u64 {
                        return Err(Error::Corrupt(format!(
                            "node {node}: bad neighbor id {target}"
                        )));
                    }
                    list.push(Edge {
                        target: target as NodeId,
                        weight: T::zero(),
                    });
                    prev = target;
                }
                per_level.push(list);
            }
            g.links.push(per_level);
        }
        g.entry = match entry {
            u32::MAX if n == 0 => None,
            e if (e as usize) < n => Some(e),
            e => return Err(Error::Corrupt(format!("entry point {e} out of range"))),
        };
        for node in 0..n {
            for level in 0..g.links[node].len() {
                for i in 0..g.links[node][level].len() {
                    let t = g.links[node][level][i].target;
                    if g.levels[t as usize] < level as u8 {
                        return Err(Error::Corrupt(format!(
                            "node {node}: link to {t} above its level"
                        )));
                    }
                    g.links[node][level][i].weight = g.sim_nodes(node as NodeId, t);
                }
            }
        }
        Ok(g)
    }

    /// Hex SHA-256 of the serialized form.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn meta(&self) -> SnapshotMeta {
        meta_for(self, self.checksum())
    }
}

/// Writes the snapshot and its `.meta.json` sidecar; returns the sidecar
/// contents.
pub fn save_index<T: Scalar>(graph: &SearchGraph<T>, path: &Path) -> Result<SnapshotMeta> {
    let bytes = graph.to_bytes();
    fs::write(path, &bytes)?;
    let meta = meta_for(graph, hex::encode(Sha256::digest(&bytes)));
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

/// Reads a snapshot. When a sidecar exists its graph version must agree.
pub fn load_index<T: Scalar>(path: &Path) -> Result<SearchGraph<T>> {
    let bytes = fs::read(path)?;
    let g = SearchGraph::from_bytes(&bytes)?;
    let side = sidecar_path(path);
    if side.exists() {
        let meta: SnapshotMeta = serde_json::from_slice(&fs::read(side)?)?;
        if meta.graph_version != g.version || meta.node_count != g.len() {
            return Err(Error::Corrupt("sidecar disagrees with snapshot".into()));
        }
    }
    Ok(g)
}

fn meta_for<T: Scalar>(g: &SearchGraph<T>, checksum: String) -> SnapshotMeta {
    SnapshotMeta {
        format_version: FORMAT_VERSION,
        seed: g.params.seed,
        graph_version: g.version,
        node_count: g.len(),
        dimension: g.dim,
        checksum,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::build_index;
    use crate::index::tests::fixture;

    #[test]
    fn empty_graph_round_trip() {
        let g = SearchGraph::<f32>::empty(8, IndexParams::default()).unwrap();
        let back = SearchGraph::<f32>::from_bytes(&g.to_bytes()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn file_round_trip_is_identical() {
        let (c, e) = fixture(1000, 16, 8);
        let mut g = build_index(&c, &e, IndexParams::default()).unwrap();
        g.version = 7;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.idx");
        let meta = save_index(&g, &p).unwrap();
        assert_eq!(meta.graph_version, 7);
        assert_eq!(meta.checksum, g.checksum());
        let back: SearchGraph<f32> = load_index(&p).unwrap();
        assert_eq!(back, g);
        back.check_invariants(1e-6).unwrap();
        // double round trip: re-saving gives the same bytes
        let p2 = dir.path().join("g2.idx");
        save_index(&back, &p2).unwrap();
        assert_eq!(fs::read(&p).unwrap(), fs::read(&p2).unwrap());
        let side: SnapshotMeta =
            serde_json::from_slice(&fs::read(sidecar_path(&p)).unwrap()).unwrap();
        assert_eq!(side.seed, 0);
    }

    #[test]
    fn corrupted_inputs() {
        let (c, e) = fixture(50, 8, 1);
        let g = build_index(&c, &e, IndexParams::default()).unwrap();
        let bytes = g.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            SearchGraph::<f32>::from_bytes(&bad),
            Err(Error::BadMagic)
        ));
        assert!(matches!(
            SearchGraph::<f32>::from_bytes(b"SRR"),
            Err(Error::BadMagic)
        ));

        let mut bad = bytes.clone();
        bad[8..12].copy_from_slice(&99u32.to_le_bytes());
        assert!(matches!(
            SearchGraph::<f32>::from_bytes(&bad),
            Err(Error::UnsupportedFormat(99))
        ));

        for cut in [20, 60, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(
                    SearchGraph::<f32>::from_bytes(&bytes[..cut]),
                    Err(Error::Truncated(_))
                ),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn sidecar_mismatch_is_detected() {
        let (c, e) = fixture(20, 8, 1);
        let g = build_index(&c, &e, IndexParams::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.idx");
        save_index(&g, &p).unwrap();
        let mut meta: SnapshotMeta =
            serde_json::from_slice(&fs::read(sidecar_path(&p)).unwrap()).unwrap();
        meta.graph_version = 3;
        fs::write(sidecar_path(&p), serde_json::to_vec(&meta).unwrap()).unwrap();
        assert!(matches!(load_index::<f32>(&p), Err(Error::Corrupt(_))));
    }
}
