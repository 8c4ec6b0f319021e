pub mod bench;
pub mod env;
pub mod error;
pub mod index;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod provider;
pub mod refresh;
pub mod reward;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Embedding = model::EmbeddingVector<f32>;
pub type Graph = index::SearchGraph<f32>;
pub type Response = model::PolicyResponse<f32>;
