//! Query decomposition into noisy related terms and distractor terms.
//!
//! Related terms are the nearest vocabulary neighbours of the query vector
//! after Gaussian perturbation. Distractors are carved out of a random
//! candidate pool by repeatedly splitting it with a random hyperplane through
//! the query point, keeping the larger side and purging the fraction of that
//! side most similar to the query.

use std::cmp::Ordering;
use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, perturb, EmbeddingStore, NoiseSpec};
use crate::error::{Error, Result};
use crate::rng::{seeded_rng, stream};

pub const DEFAULT_N_RELATED: usize = 10;
pub const DEFAULT_POOL_SIZE: usize = 2_000;
pub const DEFAULT_REMOVAL_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecomposeParams {
    pub n_related: usize,
    pub m_distractors: usize,
    pub sigma: f64,
    pub pool_size: usize,
    pub removal_fraction: f64,
    pub seed: u64,
}

impl Default for DecomposeParams {
    fn default() -> Self {
        DecomposeParams {
            n_related: DEFAULT_N_RELATED,
            m_distractors: 0,
            sigma: 0.0,
            pool_size: DEFAULT_POOL_SIZE,
            removal_fraction: DEFAULT_REMOVAL_FRACTION,
            seed: 0,
        }
    }
}

impl DecomposeParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.n_related == 0 {
            return bad("n_related must be positive".into());
        }
        if self.pool_size == 0 {
            return bad("pool_size must be positive".into());
        }
        if self.pool_size < self.m_distractors {
            return bad(format!(
                "pool_size {} is smaller than the distractor count {}",
                self.pool_size, self.m_distractors
            ));
        }
        if !(self.removal_fraction > 0.0 && self.removal_fraction < 1.0) {
            return bad(format!(
                "removal_fraction must lie strictly between 0 and 1, got {}",
                self.removal_fraction
            ));
        }
        NoiseSpec::new(self.sigma, self.seed).map(|_| ())
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            sigma: self.sigma,
            seed: self.seed,
        }
    }
}

/// The terms sent to the search engine in place of the original query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecomposedQuery {
    pub original: String,
    pub related: Vec<String>,
    pub distractors: Vec<String>,
    pub transmission_order: Vec<String>,
}

impl DecomposedQuery {
    /// Checks the structural invariants: disjoint lists that exclude the
    /// original, and a transmission order that permutes their union.
    pub fn check_invariants(&self) -> Result<()> {
        let related: HashSet<&str> = self.related.iter().map(String::as_str).collect();
        let distractors: HashSet<&str> = self.distractors.iter().map(String::as_str).collect();
        let fail = |m: &str| Err(Error::Domain(format!("decomposition invariant violated: {m}")));
        if related.len() != self.related.len() || distractors.len() != self.distractors.len() {
            return fail("duplicate terms");
        }
        if related.contains(self.original.as_str()) || distractors.contains(self.original.as_str()) {
            return fail("original query transmitted");
        }
        if !related.is_disjoint(&distractors) {
            return fail("related and distractor sets overlap");
        }
        let mut sent: Vec<&str> = self.transmission_order.iter().map(String::as_str).collect();
        let mut all: Vec<&str> = related.iter().chain(distractors.iter()).copied().collect();
        sent.sort_unstable();
        all.sort_unstable();
        if sent != all {
            return fail("transmission order is not a permutation of related and distractors");
        }
        Ok(())
    }
}

/// Nearest neighbours of the perturbed query vector, excluding the query.
pub fn related_terms<R: Rng + ?Sized>(
    store: &EmbeddingStore,
    query: &str,
    n: usize,
    noise: &NoiseSpec,
    rng: &mut R,
) -> Result<Vec<String>> {
    let v = store.require(query)?;
    let noisy = perturb(v, noise, rng);
    Ok(store
        .nearest_neighbors(&noisy, n, &[query])?
        .into_iter()
        .map(|nb| nb.term)
        .collect())
}

/// Which side of the hyperplane was kept at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Positive,
    Negative,
}

/// One hyperplane split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStep {
    /// Unit normal of the hyperplane through the query point.
    pub normal: Vec<f64>,
    pub kept: Side,
    pub kept_size: usize,
    /// Terms on the smaller side, dropped wholesale.
    pub discarded: Vec<String>,
    /// Terms purged from the kept side, most similar to the query first,
    /// with their cosine similarity to the query.
    pub purged: Vec<(String, f64)>,
}

/// Full record of a distractor selection, enough to replay it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistractorTrace {
    pub pool: Vec<String>,
    pub steps: Vec<SplitStep>,
    pub backfilled: Vec<String>,
    pub selected: Vec<String>,
}

pub fn distractor_terms<R: Rng + ?Sized>(
    store: &EmbeddingStore,
    query: &str,
    m: usize,
    params: &DecomposeParams,
    forbidden: &[&str],
    rng: &mut R,
) -> Result<Vec<String>> {
    distractor_terms_traced(store, query, m, params, forbidden, rng).map(|t| t.selected)
}

/// Iteration bound for a pool of `pool_size` candidates: 10·log2(pool_size).
pub fn iteration_cap(pool_size: usize) -> usize {
    ((10.0 * (pool_size.max(2) as f64).log2()).ceil() as usize).max(1)
}

/// Distractor selection that also returns the hyperplane/purge trace.
pub fn distractor_terms_traced<R: Rng + ?Sized>(
    store: &EmbeddingStore,
    query: &str,
    m: usize,
    params: &DecomposeParams,
    forbidden: &[&str],
    rng: &mut R,
) -> Result<DistractorTrace> {
    let anchor = store.require(query)?;
    let anchor_norm = store.norm(query).unwrap_or(1.0);
    if params.pool_size < m {
        return Err(Error::InvalidArgument(format!(
            "pool_size {} is smaller than the distractor count {m}",
            params.pool_size
        )));
    }
    if m == 0 {
        return Ok(DistractorTrace {
            pool: Vec::new(),
            steps: Vec::new(),
            backfilled: Vec::new(),
            selected: Vec::new(),
        });
    }

    let mut blocked: HashSet<usize> = forbidden.iter().filter_map(|t| store.index_of(t)).collect();
    blocked.extend(store.index_of(query));
    let eligible: Vec<usize> = (0..store.len()).filter(|i| !blocked.contains(i)).collect();
    if eligible.len() < m {
        return Err(Error::InsufficientCandidates {
            requested: m,
            available: eligible.len(),
        });
    }

    let draw = params.pool_size.min(eligible.len());
    let mut pool: Vec<usize> = index::sample(rng, eligible.len(), draw)
        .into_iter()
        .map(|i| eligible[i])
        .collect();
    pool.sort_unstable();

    let similarity =
        |i: usize| dot(anchor, store.vector_at(i)) / (anchor_norm * store.norm_at(i));
    let by_similarity_desc = |a: &(usize, f64), b: &(usize, f64)| -> Ordering {
        b.1.total_cmp(&a.1)
            .then_with(|| store.term_at(a.0).cmp(store.term_at(b.0)))
    };

    let mut trace = DistractorTrace {
        pool: pool.iter().map(|&i| store.term_at(i).to_string()).collect(),
        steps: Vec::new(),
        backfilled: Vec::new(),
        selected: Vec::new(),
    };
    // Removed candidates per iteration, for backfilling.
    let mut history: Vec<Vec<(usize, f64)>> = Vec::new();
    let cap = iteration_cap(params.pool_size);
    let mut candidates = pool;

    while candidates.len() > m {
        if trace.steps.len() >= cap {
            return Err(Error::IterationCap(cap));
        }
        let normal = random_unit_vector(store.dim(), rng);
        let (mut positive, mut negative) = (Vec::new(), Vec::new());
        for &i in &candidates {
            let offset: f64 = store
                .vector_at(i)
                .iter()
                .zip(anchor)
                .zip(&normal)
                .map(|((x, a), h)| (x - a) * h)
                .sum();
            if offset >= 0.0 {
                positive.push(i);
            } else {
                negative.push(i);
            }
        }
        let kept = match positive.len().cmp(&negative.len()) {
            Ordering::Greater => Side::Positive,
            Ordering::Less => Side::Negative,
            Ordering::Equal => {
                let smallest = |side: &[usize]| side.iter().map(|&i| store.term_at(i)).min();
                if smallest(&positive) <= smallest(&negative) {
                    Side::Positive
                } else {
                    Side::Negative
                }
            }
        };
        let (kept_side, dropped) = match kept {
            Side::Positive => (positive, negative),
            Side::Negative => (negative, positive),
        };

        let mut scored: Vec<(usize, f64)> = kept_side.iter().map(|&i| (i, similarity(i))).collect();
        scored.sort_by(by_similarity_desc);
        let purge = ((params.removal_fraction * scored.len() as f64).ceil() as usize).max(1);
        let purged: Vec<(usize, f64)> = scored.drain(..purge.min(scored.len())).collect();

        trace.steps.push(SplitStep {
            normal,
            kept,
            kept_size: kept_side.len(),
            discarded: dropped.iter().map(|&i| store.term_at(i).to_string()).collect(),
            purged: purged
                .iter()
                .map(|&(i, s)| (store.term_at(i).to_string(), s))
                .collect(),
        });

        let mut removed: Vec<(usize, f64)> = dropped.iter().map(|&i| (i, similarity(i))).collect();
        removed.extend(purged);
        history.push(removed);

        candidates = scored.into_iter().map(|(i, _)| i).collect();
        candidates.sort_unstable();
    }

    // Undershoot: refill from the latest removals, least similar first.
    let mut backfill = Vec::new();
    for removed in history.iter_mut().rev() {
        if candidates.len() + backfill.len() >= m {
            break;
        }
        removed.sort_by(|a, b| by_similarity_desc(b, a));
        for &(i, _) in removed.iter() {
            if candidates.len() + backfill.len() >= m {
                break;
            }
            backfill.push(i);
        }
    }
    if candidates.len() + backfill.len() < m {
        return Err(Error::InsufficientCandidates {
            requested: m,
            available: candidates.len() + backfill.len(),
        });
    }
    trace.backfilled = backfill.iter().map(|&i| store.term_at(i).to_string()).collect();
    candidates.extend(backfill);

    let mut result: Vec<(usize, f64)> = candidates.into_iter().map(|i| (i, similarity(i))).collect();
    result.sort_by(|a, b| by_similarity_desc(b, a));
    trace.selected = result
        .into_iter()
        .map(|(i, _)| store.term_at(i).to_string())
        .collect();
    Ok(trace)
}

fn random_unit_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Related terms, then distractors disjoint from them, then a uniform
/// shuffle of both for transmission.
pub fn decompose<R: Rng + ?Sized>(
    store: &EmbeddingStore,
    query: &str,
    params: &DecomposeParams,
    rng: &mut R,
) -> Result<DecomposedQuery> {
    params.validate()?;
    store.require(query)?;
    let related = related_terms(store, query, params.n_related, &params.noise(), rng)?;
    let forbidden: Vec<&str> = related.iter().map(String::as_str).collect();
    let distractors = distractor_terms(store, query, params.m_distractors, params, &forbidden, rng)?;

    let mut transmission_order: Vec<String> = related.iter().chain(&distractors).cloned().collect();
    transmission_order.shuffle(rng);

    let decomposition = DecomposedQuery {
        original: query.to_string(),
        related,
        distractors,
        transmission_order,
    };
    decomposition.check_invariants()?;
    Ok(decomposition)
}

/// `decompose` on the stream derived from `params.seed`.
pub fn decompose_seeded(store: &EmbeddingStore, query: &str, params: &DecomposeParams) -> Result<DecomposedQuery> {
    let mut rng = seeded_rng(params.seed, stream::DECOMPOSE);
    decompose(store, query, params, &mut rng)
}
