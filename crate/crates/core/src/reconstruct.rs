//! Rebuilding the query's result set from per-term retrievals, and the two
//! headline metrics: anonymity (α) and reconstructability (ρ).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, DocSet, InvertedIndex};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};

/// Documents retrieved by at least `l` of the related terms.
///
/// `l = 1` is the union of the per-term result sets and `l = |related|` is
/// their intersection.
pub fn reconstruct_results<S: AsRef<str>>(index: &InvertedIndex, related: &[S], l: usize) -> Result<DocSet> {
    if related.is_empty() {
        return Err(Error::InvalidArgument("no related terms to reconstruct from".into()));
    }
    if l == 0 || l > related.len() {
        return Err(Error::InvalidArgument(format!(
            "threshold l={l} outside 1..={}",
            related.len()
        )));
    }
    let mut votes: HashMap<DocId, usize> = HashMap::new();
    for term in related {
        for &id in index.postings(term.as_ref()) {
            *votes.entry(id).or_default() += 1;
        }
    }
    Ok(votes
        .into_iter()
        .filter(|&(_, count)| count >= l)
        .map(|(id, _)| id)
        .collect())
}

/// α = 1 − mean cosine similarity between the query and each transmitted term.
pub fn anonymity<S: AsRef<str>>(store: &EmbeddingStore, query: &str, transmitted: &[S]) -> Result<f64> {
    if transmitted.is_empty() {
        return Err(Error::InvalidArgument("anonymity needs at least one transmitted term".into()));
    }
    store.require(query)?;
    let mut total = 0.0;
    for term in transmitted {
        total += store.similarity(query, term.as_ref())?;
    }
    Ok(1.0 - total / transmitted.len() as f64)
}

/// ρ = |D(A) ∩ D'(A)| / |D(A)|, or `None` when the query retrieves nothing.
pub fn reconstructability(index: &InvertedIndex, query: &str, reconstructed: &DocSet) -> Option<f64> {
    let truth = index.retrieve(query);
    if truth.is_empty() {
        return None;
    }
    Some(truth.intersection(reconstructed).len() as f64 / truth.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub alpha: f64,
    pub rho: Option<f64>,
    pub ground_truth_size: usize,
    pub reconstructed_size: usize,
}

/// α over the full transmitted set and ρ over the related-term
/// reconstruction at threshold `l`.
pub fn evaluate<S: AsRef<str>>(
    store: &EmbeddingStore,
    index: &InvertedIndex,
    query: &str,
    related: &[S],
    transmitted: &[S],
    l: usize,
) -> Result<MetricsRecord> {
    let alpha = anonymity(store, query, transmitted)?;
    let reconstructed = reconstruct_results(index, related, l)?;
    Ok(MetricsRecord {
        alpha,
        rho: reconstructability(index, query, &reconstructed),
        ground_truth_size: index.postings(query).len(),
        reconstructed_size: reconstructed.len(),
    })
}
