mod common;

use std::collections::HashSet;

use anonsearch::anonymise::{
    decompose, decompose_seeded, distractor_terms_traced, iteration_cap, DecomposeParams, DistractorTrace, Side,
};
use anonsearch::embed::{cosine, EmbeddingStore};
use anonsearch::rng::seeded_rng;
use common::*;
use proptest::prelude::*;
use rand::Rng;

/// 100 terms around one direction (`a..`) and 100 around an orthogonal one
/// (`b..`), in 8 dimensions.
fn two_clusters(seed: u64) -> EmbeddingStore {
    let mut r = rng(seed);
    let mut entries = Vec::new();
    for (prefix, axis) in [("a", 0usize), ("b", 1usize)] {
        for i in 0..100 {
            let mut v: Vec<f64> = (0..8).map(|_| r.random_range(-0.4..0.4)).collect();
            v[axis] += 3.0;
            entries.push((format!("{prefix}{i:03}"), v));
        }
    }
    EmbeddingStore::from_entries(8, entries).unwrap()
}

fn sim(store: &EmbeddingStore, a: &str, b: &str) -> f64 {
    cosine(store.vector(a).unwrap(), store.vector(b).unwrap()).unwrap()
}

/// Replays a trace step by step with an independent implementation and
/// checks every recorded decision.
fn replay(store: &EmbeddingStore, query: &str, m: usize, fraction: f64, trace: &DistractorTrace) {
    let anchor = store.vector(query).unwrap();
    let mut candidates: Vec<String> = trace.pool.clone();
    let mut removed_per_step: Vec<Vec<String>> = Vec::new();
    for step in &trace.steps {
        assert!(candidates.len() > m, "split taken after reaching m");
        let side = |t: &String| -> bool {
            let v = store.vector(t).unwrap();
            v.iter().zip(anchor).zip(&step.normal).map(|((x, a), h)| (x - a) * h).sum::<f64>() >= 0.0
        };
        let (pos, neg): (Vec<String>, Vec<String>) = candidates.iter().cloned().partition(|t| side(t));
        let keep_pos = pos.len() > neg.len()
            || (pos.len() == neg.len() && pos.iter().min() <= neg.iter().min());
        assert_eq!(step.kept, if keep_pos { Side::Positive } else { Side::Negative });
        let (mut kept, dropped) = if keep_pos { (pos, neg) } else { (neg, pos) };
        assert_eq!(step.kept_size, kept.len());
        let mut discarded = step.discarded.clone();
        discarded.sort();
        let mut dropped_sorted = dropped.clone();
        dropped_sorted.sort();
        assert_eq!(discarded, dropped_sorted);

        kept.sort_by(|a, b| sim(store, query, b).total_cmp(&sim(store, query, a)).then(a.cmp(b)));
        let purge = ((fraction * kept.len() as f64).ceil() as usize).max(1);
        let purged: Vec<String> = kept.drain(..purge).collect();
        let recorded: Vec<String> = step.purged.iter().map(|(t, _)| t.clone()).collect();
        assert_eq!(recorded, purged);
        for (t, s) in &step.purged {
            assert!((s - sim(store, query, t)).abs() < 1e-12);
        }
        // Nothing that survives is more similar than anything purged.
        let floor = purged.iter().map(|t| sim(store, query, t)).fold(f64::INFINITY, f64::min);
        assert!(kept.iter().all(|t| sim(store, query, t) <= floor));

        removed_per_step.push(dropped.into_iter().chain(purged).collect());
        candidates = kept;
    }
    assert!(candidates.len() <= m);

    let mut backfill = Vec::new();
    for removed in removed_per_step.iter().rev() {
        let mut removed = removed.clone();
        removed.sort_by(|a, b| sim(store, query, a).total_cmp(&sim(store, query, b)).then(b.cmp(a)));
        for t in removed {
            if candidates.len() + backfill.len() < m {
                backfill.push(t);
            }
        }
    }
    assert_eq!(trace.backfilled, backfill);
    candidates.extend(backfill);
    candidates.sort_by(|a, b| sim(store, query, a).total_cmp(&sim(store, query, b)).then(b.cmp(a)));
    assert_eq!(trace.selected, candidates);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distractor_trace_replays(seed in any::<u64>(), m in 1usize..60, pool in 60usize..199, fraction in 0.05f64..0.5) {
        let store = two_clusters(seed);
        let params = DecomposeParams { pool_size: pool, removal_fraction: fraction, seed, ..Default::default() };
        let mut r = seeded_rng(seed, 7);
        let forbidden = ["a001", "a002"];
        let trace = distractor_terms_traced(&store, "a000", m, &params, &forbidden, &mut r).unwrap();
        prop_assert_eq!(trace.selected.len(), m);
        prop_assert!(trace.steps.len() <= iteration_cap(pool));
        let selected: HashSet<&String> = trace.selected.iter().collect();
        prop_assert_eq!(selected.len(), m);
        prop_assert!(!trace.selected.iter().any(|t| t == "a000" || forbidden.contains(&t.as_str())));
        replay(&store, "a000", m, fraction, &trace);
    }

    #[test]
    fn decompositions_are_well_formed(seed in any::<u64>(), n in 1usize..12, m in 0usize..40, sigma in 0.0f64..2.0) {
        let store = two_clusters(seed % 7);
        let params = DecomposeParams { n_related: n, m_distractors: m, sigma, pool_size: 150, seed, ..Default::default() };
        let d = decompose_seeded(&store, "b010", &params).unwrap();
        prop_assert_eq!(d.related.len(), n);
        prop_assert_eq!(d.distractors.len(), m);
        d.check_invariants().unwrap();
        prop_assert_eq!(&d, &decompose_seeded(&store, "b010", &params).unwrap());
    }
}

#[test]
fn distractors_come_from_the_other_cluster() {
    let store = two_clusters(3);
    let mut related_sim = 0.0;
    let mut distractor_sim = 0.0;
    let mut from_other = 0usize;
    for seed in 0..20u64 {
        let params = DecomposeParams { n_related: 10, m_distractors: 20, sigma: 0.3, pool_size: 190, seed, ..Default::default() };
        let d = decompose(&store, "a050", &params, &mut seeded_rng(seed, 0)).unwrap();
        related_sim += d.related.iter().map(|t| sim(&store, "a050", t)).sum::<f64>() / 10.0;
        distractor_sim += d.distractors.iter().map(|t| sim(&store, "a050", t)).sum::<f64>() / 20.0;
        from_other += d.distractors.iter().filter(|t| t.starts_with('b')).count();
    }
    assert!(distractor_sim < related_sim);
    assert!(from_other as f64 / 400.0 > 0.9, "{from_other}/400 distractors from the far cluster");
}
