//! Clustering attacks on a transmitted term set.
//!
//! The attacker L2-normalizes the received term vectors, runs k-means on
//! them, and guesses the vocabulary term nearest a cluster centroid. The
//! standard attack only uses the most coherent cluster; the conservative
//! variant guesses one term per centroid and scores a hit if any matches.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::EmbeddingStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackParams {
    pub k: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub conservative: bool,
}

impl AttackParams {
    pub fn new(k: usize, seed: u64) -> Self {
        AttackParams {
            k,
            max_iterations: 100,
            tolerance: 1e-6,
            seed,
            conservative: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Standard,
    Conservative,
}

impl AttackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttackMode::Standard => "standard",
            AttackMode::Conservative => "conservative",
        }
    }
}

/// A k-means partition of a term list.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub terms: Vec<String>,
    /// Cluster index per term, parallel to `terms`.
    pub assignments: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Sum of squared distances to assigned centroids after each iteration.
    pub objective_trace: Vec<f64>,
}

impl Clustering {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn members(&self, cluster: usize) -> Vec<&str> {
        self.terms
            .iter()
            .zip(&self.assignments)
            .filter(|(_, &a)| a == cluster)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    pub fn clusters(&self) -> Vec<Vec<&str>> {
        (0..self.k()).map(|c| self.members(c)).collect()
    }

    /// True when no iteration increased the objective beyond floating-point
    /// noise (relative 1e-12).
    pub fn objective_is_monotone(&self) -> bool {
        self.objective_trace
            .windows(2)
            .all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0))
    }
}

fn normalized(v: &[f64]) -> Vec<f64> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / norm).collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Spherical k-means: k-means++ seeding and Lloyd iterations with Euclidean
/// distance on unit-normalized vectors.
///
/// Stops when every centroid moves less than `params.tolerance` or after
/// `params.max_iterations`. A cluster left empty takes over the point
/// farthest from its own centroid.
pub fn kmeans_cluster<S: AsRef<str>, R: Rng + ?Sized>(
    store: &EmbeddingStore,
    terms: &[S],
    params: &AttackParams,
    rng: &mut R,
) -> Result<Clustering> {
    let k = params.k;
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    if k > terms.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot form {k} clusters from {} terms",
            terms.len()
        )));
    }
    let points: Vec<Vec<f64>> = terms
        .iter()
        .map(|t| store.require(t.as_ref()).map(normalized))
        .collect::<Result<_>>()?;
    let n = points.len();

    let mut centroids = seed_plus_plus(&points, k, rng);
    let mut assignments: Vec<Option<usize>> = vec![None; n];
    let mut objective_trace = Vec::new();

    for _ in 0..params.max_iterations.max(1) {
        for (i, p) in points.iter().enumerate() {
            let mut best = assignments[i];
            let mut best_d = best.map_or(f64::INFINITY, |c| sq_dist(p, &centroids[c]));
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist(p, centroid);
                if d < best_d {
                    best = Some(c);
                    best_d = d;
                }
            }
            assignments[i] = best;
        }
        let mut assigned: Vec<usize> = assignments.iter().map(|a| a.unwrap_or(0)).collect();
        repair_empty_clusters(&points, &mut assigned, &mut centroids);

        let mut next = vec![vec![0.0; store.dim()]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(&assigned) {
            counts[c] += 1;
            for (acc, x) in next[c].iter_mut().zip(p) {
                *acc += x;
            }
        }
        for (centroid, &count) in next.iter_mut().zip(&counts) {
            for x in centroid.iter_mut() {
                *x /= count as f64;
            }
        }
        let movement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        assignments = assigned.iter().map(|&c| Some(c)).collect();
        objective_trace.push(
            points
                .iter()
                .zip(&assigned)
                .map(|(p, &c)| sq_dist(p, &centroids[c]))
                .sum(),
        );
        if movement < params.tolerance {
            break;
        }
    }

    Ok(Clustering {
        terms: terms.iter().map(|t| t.as_ref().to_string()).collect(),
        assignments: assignments.into_iter().map(|a| a.unwrap_or(0)).collect(),
        centroids,
        objective_trace,
    })
}

fn seed_plus_plus<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 {
                    pick = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            pick.unwrap_or(0)
        } else {
            // Every point coincides with a chosen centre.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        for (i, p) in points.iter().enumerate() {
            nearest[i] = nearest[i].min(sq_dist(p, &points[pick]));
        }
    }
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

fn repair_empty_clusters(points: &[Vec<f64>], assigned: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut counts = vec![0usize; k];
        for &c in assigned.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        let donor = (0..points.len())
            .filter(|&i| counts[assigned[i]] > 1)
            .max_by(|&a, &b| {
                let da = sq_dist(&points[a], &centroids[assigned[a]]);
                let db = sq_dist(&points[b], &centroids[assigned[b]]);
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("k <= n leaves a cluster with at least two points");
        assigned[donor] = empty;
        centroids[empty] = points[donor].clone();
    }
}

/// Mean pairwise cosine similarity over distinct unordered pairs.
pub fn coherence<S: AsRef<str>>(store: &EmbeddingStore, cluster: &[S]) -> Result<f64> {
    if cluster.len() < 2 {
        return Err(Error::Domain("coherence needs at least two terms".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..cluster.len() {
        for j in i + 1..cluster.len() {
            total += store.similarity(cluster[i].as_ref(), cluster[j].as_ref())?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

/// What the attacker outputs, before it is scored against the true query.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackGuess {
    pub clustering: Clustering,
    /// Coherence per cluster; singletons are `-inf`.
    pub per_cluster_coherence: Vec<f64>,
    pub chosen_cluster: usize,
    /// Nearest vocabulary term to every centroid, in cluster order.
    pub centroid_terms: Vec<String>,
}

impl AttackGuess {
    pub fn guesses(&self, mode: AttackMode) -> Vec<String> {
        match mode {
            AttackMode::Standard => vec![self.centroid_terms[self.chosen_cluster].clone()],
            AttackMode::Conservative => self.centroid_terms.clone(),
        }
    }

    /// Scores the guess against the true query, which only the evaluator knows.
    pub fn judge(&self, truth: &str, mode: AttackMode) -> AttackOutcome {
        let guesses = self.guesses(mode);
        let hit = guesses.iter().any(|g| g == truth);
        AttackOutcome {
            mode,
            guesses,
            hit,
            chosen_cluster_coherence: self.per_cluster_coherence[self.chosen_cluster],
            per_cluster_coherence: self.per_cluster_coherence.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackOutcome {
    pub mode: AttackMode,
    pub guesses: Vec<String>,
    pub hit: bool,
    pub chosen_cluster_coherence: f64,
    pub per_cluster_coherence: Vec<f64>,
}

/// Clusters `received` and derives both the standard and conservative
/// guesses from the same clustering.
pub fn attack<S: AsRef<str>, R: Rng + ?Sized>(
    store: &EmbeddingStore,
    received: &[S],
    params: &AttackParams,
    rng: &mut R,
) -> Result<AttackGuess> {
    if received.is_empty() {
        return Err(Error::InvalidArgument("attack needs at least one received term".into()));
    }
    let clustering = kmeans_cluster(store, received, params, rng)?;
    let clusters = clustering.clusters();

    let per_cluster_coherence = clusters
        .iter()
        .map(|members| {
            if members.len() < 2 {
                Ok(f64::NEG_INFINITY)
            } else {
                coherence(store, members)
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let smallest = |c: usize| clusters[c].iter().min().copied().unwrap_or_default();
    let chosen_cluster = (0..clusters.len())
        .max_by(|&a, &b| {
            per_cluster_coherence[a]
                .total_cmp(&per_cluster_coherence[b])
                .then_with(|| smallest(b).cmp(smallest(a)))
        })
        .unwrap_or(0);

    let centroid_terms = clustering
        .centroids
        .iter()
        .map(|c| {
            store
                .nearest_neighbors(c, 1, &[])
                .map(|mut nn| nn.swap_remove(0).term)
        })
        .collect::<Result<Vec<String>>>()?;

    Ok(AttackGuess {
        clustering,
        per_cluster_coherence,
        chosen_cluster,
        centroid_terms,
    })
}

/// Runs the attack in the mode selected by `params.conservative` and scores
/// it against `truth`.
pub fn attack_guess<S: AsRef<str>, R: Rng + ?Sized>(
    store: &EmbeddingStore,
    received: &[S],
    params: &AttackParams,
    truth: &str,
    rng: &mut R,
) -> Result<AttackOutcome> {
    let mode = if params.conservative {
        AttackMode::Conservative
    } else {
        AttackMode::Standard
    };
    Ok(attack(store, received, params, rng)?.judge(truth, mode))
}

/// Fraction of outcomes that recovered the query.
pub fn hit_rate(outcomes: &[AttackOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::InvalidArgument("hit rate of an empty outcome list".into()));
    }
    Ok(outcomes.iter().filter(|o| o.hit).count() as f64 / outcomes.len() as f64)
}
