//! Pretrained word vectors: loading, cosine similarity, exact nearest
//! neighbour search and Gaussian perturbation of query vectors.
//!
//! The text format is the GloVe one: each line holds a token followed by
//! its components, separated by whitespace, with no header line.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use log::warn;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Standard deviation and seed of the per-dimension Gaussian noise added to
/// a query vector before the related-term search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "noise sigma must be a non-negative finite number, got {sigma}"
            )));
        }
        Ok(NoiseSpec { sigma, seed })
    }
}

/// A vocabulary term together with its similarity to some query vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub term: String,
    pub similarity: f64,
}

/// Counters collected while reading a vector file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadStats {
    pub lines: usize,
    pub duplicates: usize,
    pub zero_norm_skipped: usize,
}

/// Immutable mapping from lowercase terms to fixed-length vectors.
///
/// Every stored vector has a strictly positive norm, which is computed once
/// at construction.
#[derive(Debug, Clone)]
pub struct EmbeddingStore {
    dim: usize,
    terms: Vec<String>,
    lookup: HashMap<String, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
}

impl EmbeddingStore {
    /// Builds a store from `(term, vector)` pairs, applying the same rules as
    /// the file loader: terms are lowercased, the first occurrence wins and
    /// zero-norm vectors are dropped.
    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut builder = Builder::new(dim);
        for (i, (term, vector)) in entries.into_iter().enumerate() {
            if vector.len() != dim {
                return Err(Error::Parse {
                    line: i + 1,
                    message: format!("expected {dim} components, found {}", vector.len()),
                });
            }
            builder.push(term.as_ref(), vector);
        }
        builder.finish().map(|(store, _)| store)
    }

    pub fn load(path: impl AsRef<Path>, expected_dim: Option<usize>) -> Result<Self> {
        Self::load_with_stats(path, expected_dim).map(|(store, _)| store)
    }

    pub fn load_with_stats(
        path: impl AsRef<Path>,
        expected_dim: Option<usize>,
    ) -> Result<(Self, LoadStats)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_text(BufReader::new(file), expected_dim).map_err(|e| match e {
            Error::Io { source, .. } => Error::io(path, source),
            other => other,
        })
    }

    /// Reads vectors in text format from `reader`.
    pub fn read_text<R: BufRead>(reader: R, expected_dim: Option<usize>) -> Result<(Self, LoadStats)> {
        if expected_dim == Some(0) {
            return Err(Error::InvalidArgument("expected dimension must be positive".into()));
        }
        let mut builder: Option<Builder> = expected_dim.map(Builder::new);
        let mut lines = 0;

        for (idx, line) in reader.lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| Error::io("<reader>", e))?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            lines += 1;

            let mut fields = line.split_whitespace();
            let token = fields.next().unwrap_or_default();
            let vector = fields
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::Parse {
                            line: line_no,
                            message: format!("`{f}` is not a finite number"),
                        })
                })
                .collect::<Result<Vec<f64>>>()?;

            let builder = builder.get_or_insert_with(|| Builder::new(vector.len()));
            if vector.is_empty() || vector.len() != builder.dim {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!(
                        "expected {} components, found {}",
                        builder.dim,
                        vector.len()
                    ),
                });
            }
            builder.push(token, vector);
        }

        let builder = builder.ok_or(Error::EmptyEmbeddings)?;
        let (store, mut stats) = builder.finish()?;
        stats.lines = lines;
        if stats.zero_norm_skipped > 0 {
            warn!("skipped {} zero-norm vectors", stats.zero_norm_skipped);
        }
        Ok((store, stats))
    }

    /// Writes the store in the same text format `read_text` accepts.
    pub fn write_text<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (i, term) in self.terms.iter().enumerate() {
            write!(out, "{term}")?;
            for x in self.vector_at(i) {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn contains(&self, term: &str) -> bool {
        self.lookup.contains_key(term)
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.lookup.get(term).copied()
    }

    pub fn vector(&self, term: &str) -> Option<&[f64]> {
        self.index_of(term).map(|i| self.vector_at(i))
    }

    pub fn norm(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.norms[i])
    }

    pub fn vector_at(&self, idx: usize) -> &[f64] {
        &self.data[idx * self.dim..(idx + 1) * self.dim]
    }

    pub fn norm_at(&self, idx: usize) -> f64 {
        self.norms[idx]
    }

    pub fn term_at(&self, idx: usize) -> &str {
        &self.terms[idx]
    }

    /// Vector for `term`, or an `UnknownTerm` error.
    pub fn require(&self, term: &str) -> Result<&[f64]> {
        self.vector(term).ok_or_else(|| Error::UnknownTerm(term.to_string()))
    }

    /// Cosine similarity between two stored terms.
    pub fn similarity(&self, a: &str, b: &str) -> Result<f64> {
        let ia = self.index_of(a).ok_or_else(|| Error::UnknownTerm(a.to_string()))?;
        let ib = self.index_of(b).ok_or_else(|| Error::UnknownTerm(b.to_string()))?;
        if ia == ib {
            return Ok(1.0);
        }
        Ok(clamp_unit(
            dot(self.vector_at(ia), self.vector_at(ib)) / (self.norms[ia] * self.norms[ib]),
        ))
    }

    /// The `n` non-excluded terms most cosine-similar to `query`, ordered by
    /// descending similarity with ties broken by ascending term.
    pub fn nearest_neighbors(&self, query: &[f64], n: usize, exclude: &[&str]) -> Result<Vec<Neighbor>> {
        if query.len() != self.dim {
            return Err(Error::Domain(format!(
                "query has {} components, store has {}",
                query.len(),
                self.dim
            )));
        }
        if n == 0 {
            return Err(Error::InvalidArgument("neighbour count must be positive".into()));
        }
        let query_norm = l2_norm(query);
        if !(query_norm > 0.0 && query_norm.is_finite()) {
            return Err(Error::Domain("query vector must be nonzero and finite".into()));
        }

        let excluded: HashSet<usize> = exclude.iter().filter_map(|t| self.index_of(t)).collect();
        let available = self.len() - excluded.len();
        if n > available {
            return Err(Error::InsufficientCandidates {
                requested: n,
                available,
            });
        }

        let mut scored: Vec<(f64, usize)> = (0..self.len())
            .filter(|i| !excluded.contains(i))
            .map(|i| {
                let sim = dot(query, self.vector_at(i)) / (query_norm * self.norms[i]);
                (clamp_unit(sim), i)
            })
            .collect();

        let order = |a: &(f64, usize), b: &(f64, usize)| -> Ordering {
            b.0.total_cmp(&a.0)
                .then_with(|| self.terms[a.1].cmp(&self.terms[b.1]))
        };
        if n < scored.len() {
            scored.select_nth_unstable_by(n - 1, order);
            scored.truncate(n);
        }
        scored.sort_unstable_by(order);

        Ok(scored
            .into_iter()
            .map(|(similarity, i)| Neighbor {
                term: self.terms[i].clone(),
                similarity,
            })
            .collect())
    }
}

struct Builder {
    dim: usize,
    terms: Vec<String>,
    lookup: HashMap<String, usize>,
    data: Vec<f64>,
    norms: Vec<f64>,
    stats: LoadStats,
}

impl Builder {
    fn new(dim: usize) -> Self {
        Builder {
            dim,
            terms: Vec::new(),
            lookup: HashMap::new(),
            data: Vec::new(),
            norms: Vec::new(),
            stats: LoadStats::default(),
        }
    }

    fn push(&mut self, token: &str, vector: Vec<f64>) {
        let token = token.to_lowercase();
        if self.lookup.contains_key(&token) {
            self.stats.duplicates += 1;
            return;
        }
        let norm = l2_norm(&vector);
        if norm == 0.0 {
            self.stats.zero_norm_skipped += 1;
            return;
        }
        self.lookup.insert(token.clone(), self.terms.len());
        self.terms.push(token);
        self.data.extend_from_slice(&vector);
        self.norms.push(norm);
    }

    fn finish(self) -> Result<(EmbeddingStore, LoadStats)> {
        if self.terms.is_empty() || self.dim == 0 {
            return Err(Error::EmptyEmbeddings);
        }
        let store = EmbeddingStore {
            dim: self.dim,
            terms: self.terms,
            lookup: self.lookup,
            data: self.data,
            norms: self.norms,
        };
        Ok((store, self.stats))
    }
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn clamp_unit(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::Domain(format!(
            "vector lengths differ: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = l2_norm(u);
    let nv = l2_norm(v);
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::Domain("cosine of a zero vector is undefined".into()));
    }
    Ok(clamp_unit(dot(u, v) / (nu * nv)))
}

/// Returns `v + θ` with θ drawn component-wise from Normal(0, sigma²).
///
/// Exactly `v.len()` standard normals are consumed from `rng` regardless of
/// sigma, so the remainder of the stream does not depend on the noise level.
pub fn perturb<R: Rng + ?Sized>(v: &[f64], noise: &NoiseSpec, rng: &mut R) -> Vec<f64> {
    let theta: Vec<f64> = (0..v.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    if noise.sigma == 0.0 {
        return v.to_vec();
    }
    v.iter()
        .zip(theta)
        .map(|(x, z)| x + noise.sigma * z)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    fn load(text: &str) -> Result<(EmbeddingStore, LoadStats)> {
        EmbeddingStore::read_text(text.as_bytes(), None)
    }

    #[test]
    fn loads_small_file() {
        let (store, stats) = load("a 1 0 0\nb 0 1.5e0 0\n").unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.dim(), 3);
        assert_eq!(stats.lines, 2);
        assert_eq!(store.vector("b").unwrap(), &[0.0, 1.5, 0.0]);
    }

    #[test]
    fn first_occurrence_wins_after_lowercasing() {
        let (store, stats) = load("cat 1.0 0.0\r\nCAT 0.5 0.5\r\n").unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.vector("cat").unwrap(), &[1.0, 0.0]);
        assert_eq!(stats.duplicates, 1);
    }

    #[test]
    fn malformed_lines_name_the_line() {
        match load("a 1 2\n\nb 1\n") {
            Err(Error::Parse { line: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match load("a 1 x\n") {
            Err(Error::Parse { line: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load("a\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn expected_dim_is_enforced() {
        assert!(EmbeddingStore::read_text("a 1 2\n".as_bytes(), Some(3)).is_err());
        assert!(EmbeddingStore::read_text("a 1 2 3\n".as_bytes(), Some(3)).is_ok());
    }

    #[test]
    fn zero_norm_rows_are_skipped_and_empty_is_an_error() {
        let (store, stats) = load("z 0 0\na 1 1\n").unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(stats.zero_norm_skipped, 1);
        assert!(!store.contains("z"));
        assert!(matches!(load(""), Err(Error::EmptyEmbeddings)));
        assert!(matches!(load("z 0 0\n"), Err(Error::EmptyEmbeddings)));
    }

    #[test]
    fn cosine_values() {
        assert_eq!(cosine(&[0.6, 0.8], &[0.6, 0.8]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 0.0], &[1.0, 1.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-9);
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
        assert!(cosine(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn perturb_zero_sigma_is_identity() {
        let v = vec![0.25, -1.0, 3.5];
        let mut rng = seeded_rng(7, 0);
        assert_eq!(perturb(&v, &NoiseSpec { sigma: 0.0, seed: 7 }, &mut rng), v);
    }

    #[test]
    fn perturb_is_deterministic() {
        let v = vec![0.0; 16];
        let noise = NoiseSpec { sigma: 1.0, seed: 3 };
        let a = perturb(&v, &noise, &mut seeded_rng(3, 0));
        let b = perturb(&v, &noise, &mut seeded_rng(3, 0));
        assert_eq!(a, b);
        assert_ne!(a, v);
    }

    #[test]
    fn perturb_moments_match_standard_normal() {
        let v = vec![0.0; 10_000];
        let noise = NoiseSpec { sigma: 1.0, seed: 11 };
        let out = perturb(&v, &noise, &mut seeded_rng(11, 0));
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let var = out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.05, "mean {mean}");
        assert!(var > 0.9 && var < 1.1, "variance {var}");
    }

    #[test]
    fn nearest_neighbor_tie_break_is_lexicographic() {
        let store = EmbeddingStore::from_entries(
            2,
            vec![
                ("zeta", vec![1.0, 1.0]),
                ("alpha", vec![1.0, 1.0]),
                ("query", vec![1.0, 0.0]),
            ],
        )
        .unwrap();
        let nn = store.nearest_neighbors(&[1.0, 0.2], 2, &["query"]).unwrap();
        assert_eq!(nn[0].term, "alpha");
        assert_eq!(nn[1].term, "zeta");
    }

    #[test]
    fn nearest_neighbors_errors() {
        let store =
            EmbeddingStore::from_entries(2, vec![("a", vec![1.0, 0.0]), ("b", vec![0.0, 1.0])]).unwrap();
        assert!(matches!(
            store.nearest_neighbors(&[1.0, 0.0], 2, &["a"]),
            Err(Error::InsufficientCandidates { requested: 2, available: 1 })
        ));
        assert!(store.nearest_neighbors(&[0.0, 0.0], 1, &[]).is_err());
        let all = store.nearest_neighbors(&[1.0, 0.0], 2, &[]).unwrap();
        assert_eq!(all.len(), 2);
        assert_eq!(all[0].term, "a");
    }
}
