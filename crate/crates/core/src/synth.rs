//! Deterministic synthetic desk setup: a topic-structured embedding store
//! and a corpus generated from a log-linear topic model over the same
//! vocabulary.
//!
//! Word vectors share a common direction, load on their topic centre and
//! carry a word-specific component. Norms grow with within-topic frequency.
//! Each document draws a context vector near one topic centre and samples
//! most tokens from that topic with weight `freq · exp(affinity · cos(v, c))`;
//! the rest come from a global Zipf background. Words close in the
//! embedding space therefore co-occur, which is what reconstruction relies
//! on.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_corpus_jsonl, RawDocument};
use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};
use crate::harness::{default_queries, ExperimentConfig};
use crate::rng::{seeded_rng, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub topics: usize,
    pub docs: usize,
    pub doc_len_min: usize,
    pub doc_len_max: usize,
    /// Weight of the shared direction in every word vector.
    pub common_loading: f64,
    /// Weight of the topic centre in every word vector.
    pub topic_loading: f64,
    /// Words per sub-topic. The most frequent word of each sub-topic is its
    /// hub and sits close to the sub-topic centre.
    pub subtopic_size: usize,
    pub subtopic_loading: f64,
    /// Scale of a hub's word-specific component relative to other words.
    pub hub_spread: f64,
    pub norm_min: f64,
    pub norm_max: f64,
    /// Spread of document contexts around their topic centre.
    pub context_noise: f64,
    /// Fraction of tokens drawn from the document's topic.
    pub topical_fraction: f64,
    /// Sharpness of the context-word affinity.
    pub affinity: f64,
    /// Tokens planted in the vocabulary, one per topic, at high frequency.
    pub queries: Vec<String>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 50_000,
            dim: 50,
            topics: 200,
            docs: 6_000,
            doc_len_min: 60,
            doc_len_max: 140,
            common_loading: 0.3,
            topic_loading: 0.6,
            subtopic_size: 12,
            subtopic_loading: 0.5,
            hub_spread: 0.5,
            norm_min: 4.0,
            norm_max: 8.0,
            context_noise: 0.5,
            topical_fraction: 0.85,
            affinity: 6.0,
            queries: default_queries(),
            seed: 2015,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.dim == 0 || self.topics == 0 || self.vocab_size < self.topics {
            return bad("need dim > 0 and at least one word per topic");
        }
        if self.queries.len() > self.topics {
            return bad("more planted queries than topics");
        }
        if self.doc_len_min == 0 || self.doc_len_min > self.doc_len_max {
            return bad("invalid document length range");
        }
        if self.common_loading.powi(2) + self.topic_loading.powi(2) + self.subtopic_loading.powi(2) >= 1.0 {
            return bad("shared loadings leave no room for word-specific variation");
        }
        if self.subtopic_size == 0 {
            return bad("subtopic_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.topical_fraction) {
            return bad("topical_fraction must lie in [0, 1]");
        }
        Ok(())
    }
}

/// A generated embedding store, corpus and planted query list.
pub struct SynthWorld {
    pub store: EmbeddingStore,
    pub docs: Vec<RawDocument>,
    pub queries: Vec<String>,
    /// Topic of every vocabulary entry, parallel to `store.terms()`.
    pub topic_of: Vec<usize>,
}

const SYLLABLES: [&str; 60] = [
    "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "fa", "fe", "fi", "fo", "fu", "ga", "ge", "gi",
    "go", "gu", "ka", "ke", "ki", "ko", "ku", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na",
    "ne", "ni", "no", "nu", "pa", "pe", "pi", "po", "pu", "ra", "re", "ri", "ro", "ru", "sa", "se", "si", "so",
    "su", "ta", "te", "ti", "to", "tu",
];

/// Pronounceable, collision-free name for vocabulary slot `i`.
fn pseudo_word(mut i: usize) -> String {
    let mut word = String::new();
    for _ in 0..3 {
        word.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
    }
    while i > 0 {
        word.push_str(SYLLABLES[i % SYLLABLES.len()]);
        i /= SYLLABLES.len();
    }
    word
}

fn gaussian_vec(dim: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn round5(x: f64) -> f64 {
    (x * 1e5).round() / 1e5
}

/// Cumulative-weight sampler.
struct Cumulative(Vec<f64>);

impl Cumulative {
    fn new(weights: impl IntoIterator<Item = f64>) -> Self {
        let mut acc = 0.0;
        Cumulative(
            weights
                .into_iter()
                .map(|w| {
                    acc += w;
                    acc
                })
                .collect(),
        )
    }

    fn sample(&self, rng: &mut SeededRng) -> usize {
        let total = *self.0.last().unwrap_or(&0.0);
        let target = rng.random::<f64>() * total;
        self.0.partition_point(|&c| c <= target).min(self.0.len() - 1)
    }
}

pub fn generate(config: &SynthConfig) -> Result<SynthWorld> {
    config.validate()?;
    let dim = config.dim;
    let mut geometry = seeded_rng(config.seed, 1);

    let common = unit(gaussian_vec(dim, &mut geometry));
    let centres: Vec<Vec<f64>> = (0..config.topics)
        .map(|_| unit(gaussian_vec(dim, &mut geometry)))
        .collect();

    // Slot i belongs to topic i % topics with within-topic rank i / topics.
    let per_topic = config.vocab_size.div_ceil(config.topics);
    let mut names: Vec<String> = (0..config.vocab_size).map(pseudo_word).collect();
    for (t, query) in config.queries.iter().enumerate() {
        let rank = 2 + t % 8;
        let slot = rank * config.topics + t;
        if slot < names.len() {
            names[slot] = query.clone();
        }
    }

    // Within a topic, rank r belongs to sub-topic r % subtopics; ranks below
    // `subtopics` are the hubs.
    let subtopics = per_topic.div_ceil(config.subtopic_size).max(1);
    let sub_centres: Vec<Vec<f64>> = (0..config.topics * subtopics)
        .map(|_| unit(gaussian_vec(dim, &mut geometry)))
        .collect();
    let word_loading =
        (1.0 - config.common_loading.powi(2) - config.topic_loading.powi(2) - config.subtopic_loading.powi(2)).sqrt();
    let max_rank_ln = (per_topic as f64).ln().max(1.0);
    let mut vectors = Vec::with_capacity(config.vocab_size);
    let mut topic_of = Vec::with_capacity(config.vocab_size);
    let mut zipf = Vec::with_capacity(config.vocab_size);
    for i in 0..config.vocab_size {
        let (topic, rank) = (i % config.topics, i / config.topics);
        let own = gaussian_vec(dim, &mut geometry);
        let sub = &sub_centres[topic * subtopics + rank % subtopics];
        let spread = if rank < subtopics { config.hub_spread } else { 1.0 };
        let own_scale = spread * word_loading / (dim as f64).sqrt();
        let direction = unit(
            (0..dim)
                .map(|j| {
                    config.common_loading * common[j]
                        + config.topic_loading * centres[topic][j]
                        + config.subtopic_loading * sub[j]
                        + own_scale * own[j]
                })
                .collect(),
        );
        let freq_score = 1.0 - ((rank + 1) as f64).ln() / max_rank_ln;
        let norm = config.norm_min + (config.norm_max - config.norm_min) * freq_score.clamp(0.0, 1.0);
        vectors.push(direction.into_iter().map(|x| round5(x * norm)).collect::<Vec<f64>>());
        topic_of.push(topic);
        zipf.push(1.0 / (rank as f64 + 1.5));
    }

    let store = EmbeddingStore::from_entries(dim, names.iter().cloned().zip(vectors))?;
    if store.len() != config.vocab_size {
        return Err(Error::InvalidArgument(
            "planted queries collide with generated vocabulary".into(),
        ));
    }

    let members: Vec<Vec<usize>> = (0..config.topics)
        .map(|t| (t..config.vocab_size).step_by(config.topics).collect())
        .collect();
    let background = Cumulative::new(zipf.iter().copied());

    let mut text_rng = seeded_rng(config.seed, 2);
    let mut docs = Vec::with_capacity(config.docs);
    for d in 0..config.docs {
        let topic = text_rng.random_range(0..config.topics);
        let noise = gaussian_vec(dim, &mut text_rng);
        let context = unit(
            centres[topic]
                .iter()
                .zip(&noise)
                .map(|(c, z)| c + config.context_noise * z / (dim as f64).sqrt())
                .collect(),
        );
        let topical = Cumulative::new(members[topic].iter().map(|&w| {
            let v = store.vector_at(w);
            let cos = v.iter().zip(&context).map(|(a, b)| a * b).sum::<f64>() / store.norm_at(w);
            zipf[w] * (config.affinity * cos).exp()
        }));
        let len = text_rng.random_range(config.doc_len_min..=config.doc_len_max);
        let mut tokens = Vec::with_capacity(len);
        for _ in 0..len {
            let w = if text_rng.random::<f64>() < config.topical_fraction {
                members[topic][topical.sample(&mut text_rng)]
            } else {
                background.sample(&mut text_rng)
            };
            tokens.push(store.term_at(w));
        }
        docs.push(RawDocument::new(format!("doc-{d:05}"), tokens.join(" ")));
    }

    let queries = config
        .queries
        .iter()
        .filter(|q| store.contains(q))
        .cloned()
        .collect();
    Ok(SynthWorld {
        store,
        docs,
        queries,
        topic_of,
    })
}

/// Paths written by [`write_world`].
pub struct SynthFiles {
    pub embeddings: PathBuf,
    pub corpus: PathBuf,
    pub queries: PathBuf,
    pub config: PathBuf,
}

/// Writes `embeddings.txt`, `corpus.jsonl`, `queries.txt` and an
/// experiment `config.json` into `dir`. The config's paths are relative to
/// `dir`, with outputs under `dir/results`.
pub fn write_world(world: &SynthWorld, dir: &Path) -> Result<SynthFiles> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files = SynthFiles {
        embeddings: dir.join("embeddings.txt"),
        corpus: dir.join("corpus.jsonl"),
        queries: dir.join("queries.txt"),
        config: dir.join("config.json"),
    };
    let file = fs::File::create(&files.embeddings).map_err(|e| Error::io(&files.embeddings, e))?;
    world
        .store
        .write_text(std::io::BufWriter::new(file))
        .map_err(|e| Error::io(&files.embeddings, e))?;
    write_corpus_jsonl(&files.corpus, &world.docs)?;
    let mut query_text = world.queries.join("\n");
    query_text.push('\n');
    fs::write(&files.queries, query_text).map_err(|e| Error::io(&files.queries, e))?;

    let mut experiment = ExperimentConfig::new("embeddings.txt", "corpus.jsonl", "results");
    experiment.queries = world.queries.clone();
    let json = serde_json::to_string_pretty(&experiment)?;
    fs::write(&files.config, json).map_err(|e| Error::io(&files.config, e))?;
    Ok(files)
}
