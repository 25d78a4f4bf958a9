//! Corpus construction and per-capability retrieval of full interface
//! documentation.

use serde::{Deserialize, Serialize};

use crate::apidoc::{full_documentation_text, InterfaceCatalog};
use crate::capability::{retrieval_query, CapabilityModel};
use crate::enrichment::InterfaceDescription;
use crate::gateway::{Gateway, GatewayError};
use crate::index::{IndexError, SearchHit, VectorIndex};

pub const DEFAULT_K: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum RetrievalError {
    #[error("no descriptions to index")]
    EmptyCorpus,
    #[error("index must be empty before building the corpus")]
    IndexNotEmpty,
    #[error("hit {0} has no catalog entry")]
    UnknownInterface(String),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedDoc {
    pub interface_id: String,
    pub documentation: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredHit {
    pub id: String,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub capability_iri: String,
    pub query_text: String,
    pub hits: Vec<ScoredHit>,
    pub selected_docs: Vec<RetrievedDoc>,
}

impl RetrievalResult {
    pub fn hit_ids(&self) -> Vec<&str> {
        self.hits.iter().map(|h| h.id.as_str()).collect()
    }

    /// Persisted form; scores are rounded to 9 decimal places.
    pub fn to_json(&self) -> String {
        let mut rounded = self.clone();
        for h in &mut rounded.hits {
            h.score = round9(h.score);
        }
        let mut text = serde_json::to_string_pretty(&rounded).expect("serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

fn round9(x: f64) -> f64 {
    (x * 1e9).round() / 1e9 + 0.0
}

impl From<SearchHit> for ScoredHit {
    fn from(h: SearchHit) -> Self {
        Self { id: h.id, score: h.score, rank: h.rank }
    }
}

/// Embeds every description's combined text and inserts it in the given
/// order, then freezes the index.
pub fn build_corpus(
    descriptions: &[InterfaceDescription],
    gateway: &Gateway,
    index: &mut VectorIndex,
) -> Result<(), RetrievalError> {
    if descriptions.is_empty() {
        return Err(RetrievalError::EmptyCorpus);
    }
    if !index.is_empty() {
        return Err(RetrievalError::IndexNotEmpty);
    }
    // duplicate ids are caught before any provider call
    let mut seen = std::collections::HashSet::new();
    for d in descriptions {
        if !seen.insert(d.interface_id.as_str()) {
            return Err(IndexError::DuplicateId(d.interface_id.clone()).into());
        }
    }
    let texts: Vec<String> = descriptions.iter().map(|d| d.combined_text.clone()).collect();
    let vectors = gateway.embed(&gateway.embed_request(texts))?;
    for (d, v) in descriptions.iter().zip(&vectors) {
        index.insert(&d.interface_id, &d.combined_text, v)?;
    }
    index.freeze();
    Ok(())
}

pub fn retrieve_for_capability(
    cap: &CapabilityModel,
    catalog: &InterfaceCatalog,
    index: &VectorIndex,
    gateway: &Gateway,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if index.is_empty() {
        return Err(IndexError::EmptyIndex.into());
    }
    let query_text = retrieval_query(cap);
    let query = gateway
        .embed(&gateway.embed_request(vec![query_text.clone()]))?
        .remove(0);
    let hits = index.top_k(&query, k)?;
    let mut selected_docs = Vec::with_capacity(hits.len());
    for h in &hits {
        let i = catalog
            .get(&h.id)
            .ok_or_else(|| RetrievalError::UnknownInterface(h.id.clone()))?;
        selected_docs.push(RetrievedDoc {
            interface_id: h.id.clone(),
            documentation: full_documentation_text(i),
        });
    }
    Ok(RetrievalResult {
        capability_iri: cap.iri.clone(),
        query_text,
        hits: hits.into_iter().map(ScoredHit::from).collect(),
        selected_docs,
    })
}
