#![allow(dead_code)]

use anonsearch::corpus::{tokenize, InvertedIndex, RawDocument};
use anonsearch::embed::EmbeddingStore;
use anonsearch::synth::SynthConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn term(i: usize) -> String {
    format!("t{i:05}")
}

/// Random Gaussian store with terms `t00000..`.
pub fn random_store(len: usize, dim: usize, seed: u64) -> EmbeddingStore {
    let mut r = rng(seed);
    let entries = (0..len).map(|i| {
        let v: Vec<f64> = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        (term(i), v)
    });
    EmbeddingStore::from_entries(dim, entries.collect::<Vec<_>>()).unwrap()
}

/// Documents of 1..=max_len tokens drawn from `vocab` words `w0..`.
pub fn random_docs(count: usize, vocab: usize, max_len: usize, seed: u64) -> Vec<RawDocument> {
    let mut r = rng(seed);
    (0..count)
        .map(|d| {
            let len = r.random_range(1..=max_len);
            let words: Vec<String> = (0..len).map(|_| format!("w{}", r.random_range(0..vocab))).collect();
            RawDocument::new(format!("d{d}"), words.join(" "))
        })
        .collect()
}

/// Full-scan retrieval: positions of documents containing every term.
pub fn naive_retrieve(docs: &[RawDocument], terms: &[String]) -> Vec<u32> {
    docs.iter()
        .enumerate()
        .filter(|(_, d)| {
            let tokens = tokenize(&d.text);
            terms.iter().all(|t| tokens.contains(t))
        })
        .map(|(i, _)| i as u32)
        .collect()
}

pub fn index_of(docs: &[RawDocument]) -> InvertedIndex {
    InvertedIndex::build(docs.to_vec()).unwrap()
}

/// A small synthetic world that still has topical structure.
pub fn small_world() -> SynthConfig {
    SynthConfig {
        vocab_size: 3_000,
        dim: 50,
        topics: 40,
        docs: 800,
        queries: ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        ..Default::default()
    }
}
