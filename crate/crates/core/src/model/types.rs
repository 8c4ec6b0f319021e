use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingVector;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

/// Ordered, duplicate-free document collection.
#[derive(Debug, Clone)]
pub struct Corpus {
    name: String,
    documents: Vec<Document>,
    positions: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, documents: Vec<Document>) -> Result<Self> {
        if documents.is_empty() {
            return Err(Error::InvalidArgument("corpus must not be empty".into()));
        }
        let mut positions = HashMap::with_capacity(documents.len());
        for (i, doc) in documents.iter().enumerate() {
            if positions.insert(doc.doc_id.clone(), i).is_some() {
                return Err(Error::DuplicateId {
                    line: i + 1,
                    id: doc.doc_id.clone(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            documents,
            positions,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.positions.get(doc_id).map(|&i| &self.documents[i])
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).copied()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.positions.contains_key(doc_id)
    }
}

/// Query with one positive and at least one negative document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub query_id: String,
    #[serde(rename = "query")]
    pub query_text: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
}

impl Triplet {
    /// Checks the structural invariants and, when given, membership in `corpus`.
    /// `line` is only used for error reporting.
    pub fn validate(&self, corpus: Option<&Corpus>, line: usize) -> Result<()> {
        if self.negative_ids.is_empty() {
            return Err(Error::InvalidRecord {
                line,
                message: format!("triplet `{}` has no negatives", self.query_id),
            });
        }
        if self.negative_ids.contains(&self.positive_id) {
            return Err(Error::InvalidRecord {
                line,
                message: format!(
                    "triplet `{}`: positive `{}` is also listed as a negative",
                    self.query_id, self.positive_id
                ),
            });
        }
        if let Some(corpus) = corpus {
            for id in std::iter::once(&self.positive_id).chain(&self.negative_ids) {
                if !corpus.contains(id) {
                    return Err(Error::DanglingReference {
                        line,
                        id: id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.positive_id.as_str())
            .chain(self.negative_ids.iter().map(String::as_str))
    }
}

/// One policy output. A missing `embedding` means the response never emitted
/// the embedding token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PolicyResponse<T> {
    pub query_id: String,
    #[serde(rename = "text", default)]
    pub reasoning_text: String,
    #[serde(default)]
    pub embedding: Option<EmbeddingVector<T>>,
}

impl<T: Scalar> PolicyResponse<T> {
    pub fn with_embedding(query_id: impl Into<String>, embedding: EmbeddingVector<T>) -> Self {
        Self {
            query_id: query_id.into(),
            reasoning_text: String::new(),
            embedding: Some(embedding),
        }
    }

    pub fn without_embedding(query_id: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            reasoning_text: String::new(),
            embedding: None,
        }
    }
}
