//! Domain types shared across the crate, dataset ingestion and mixture weighting.
mod embedding;
pub mod io;
mod mixture;
mod types;

pub(crate) use embedding::{clamp_unit, dot, ingest_unit};
pub use embedding::{cosine_similarity, l2_normalize, EmbeddingVector};
pub use io::{load_corpus, load_embeddings, load_mixture, load_triplets, SourceTriplets};
pub use mixture::{mixture_weight, sample_mixture, DatasetSource, MixtureSampler};
pub use types::{Corpus, Document, PolicyResponse, Triplet};
