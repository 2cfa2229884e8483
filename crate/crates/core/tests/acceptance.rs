//! End-to-end acceptance run on the synthetic desk setup. Prints one line
//! per criterion and fails if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::fs;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anonsearch::attack::AttackMode;
use anonsearch::corpus::InvertedIndex;
use anonsearch::embed::{cosine, EmbeddingStore};
use anonsearch::game::http::router;
use anonsearch::game::{GameService, GameSettings};
use anonsearch::harness::{run_experiment, ExperimentConfig, RunOutput, Workspace};
use anonsearch::reconstruct::{anonymity, reconstruct_results, reconstructability};
use anonsearch::synth::{generate, write_world, SynthConfig};
use anonsearch::theory::{fit_relationship, predicted_log_rho, predicted_slope};
use axum::body::Body;
use axum::http::Request;
use common::*;
use http_body_util::BodyExt;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde_json::{json, Value};
use tower::ServiceExt;

struct Report {
    failures: usize,
}

impl Report {
    fn check(&mut self, name: &str, pass: bool, detail: String) {
        println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if !pass {
            self.failures += 1;
        }
    }
}

fn within(elapsed: Duration, limit_secs: u64) -> bool {
    elapsed <= Duration::from_secs(limit_secs)
}

fn retrieval_oracle(report: &mut Report) {
    let start = Instant::now();
    let docs = random_docs(10_000, 2_000, 30, 1);
    let index = index_of(&docs);
    let mut r = rng(2);
    let mut mismatches = 0;
    for q in 0..200 {
        let len = if q < 100 { 1 } else { r.random_range(2..=3) };
        // Multi-term queries favour frequent words so that results are non-trivial.
        let range = if len == 1 { 2_000 } else { 60 };
        let terms: Vec<String> = (0..len).map(|_| format!("w{}", r.random_range(0..range))).collect();
        let expected = naive_retrieve(&docs, &terms);
        let got = index.retrieve_conjunctive(&terms).unwrap();
        if got.ids() != &expected[..] || (len == 1 && index.retrieve(&terms[0]).ids() != &expected[..]) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    report.check(
        "retrieval oracle equivalence",
        mismatches == 0 && within(elapsed, 30),
        format!("{mismatches} mismatches over 200 queries, 10000 docs, {elapsed:.1?}"),
    );
}

fn knn_oracle(report: &mut Report) {
    let start = Instant::now();
    let mut r = rng(3);
    let mut entries: Vec<(String, Vec<f64>)> = Vec::with_capacity(10_000);
    for i in 0..10_000 {
        // Every seventh term repeats its predecessor so ties occur.
        let v = if i % 7 == 6 {
            entries[i - 1].1.clone()
        } else {
            (0..50).map(|_| r.random_range(-1.0..1.0)).collect()
        };
        entries.push((term(10_000 - i), v));
    }
    let store = EmbeddingStore::from_entries(50, entries.clone()).unwrap();
    let mut mismatches = 0;
    for q in 0..100 {
        let query: Vec<f64> = if q % 4 == 0 {
            entries[r.random_range(0..10_000)].1.clone()
        } else {
            (0..50).map(|_| r.random_range(-1.0..1.0)).collect()
        };
        let n = r.random_range(1..=40);
        let mut brute: Vec<(&str, f64)> = store
            .terms()
            .iter()
            .map(|t| (t.as_str(), cosine(&query, store.vector(t).unwrap()).unwrap()))
            .collect();
        brute.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        let got = store.nearest_neighbors(&query, n, &[]).unwrap();
        let same = got.len() == n
            && got.iter().zip(&brute).all(|(g, b)| g.term == b.0 && g.similarity == b.1);
        if !same {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    report.check(
        "k-NN oracle equivalence",
        mismatches == 0 && within(elapsed, 60),
        format!("{mismatches} mismatches over 100 queries, 10000 terms, {elapsed:.1?}"),
    );
}

fn l_monotonicity(report: &mut Report) {
    let mut violations = 0;
    let mut r = rng(4);
    for instance in 0..500u64 {
        let docs = random_docs(150, 40, 12, 100 + instance);
        let index = index_of(&docs);
        let n = r.random_range(1..=8);
        let related: Vec<String> = (0..n).map(|_| format!("w{}", r.random_range(0..40))).collect();
        let query = format!("w{}", r.random_range(0..40));
        let mut prev: Option<(anonsearch::corpus::DocSet, Option<f64>)> = None;
        for l in 1..=n {
            let set = reconstruct_results(&index, &related, l).unwrap();
            let rho = reconstructability(&index, &query, &set);
            if let Some((p, prho)) = &prev {
                if !set.is_subset(p) {
                    violations += 1;
                }
                if let (Some(a), Some(b)) = (prho, rho) {
                    if b > *a {
                        violations += 1;
                    }
                }
            }
            prev = Some((set, rho));
        }
    }
    report.check("l-monotonicity", violations == 0, format!("{violations} violations over 500 instances"));
}

struct Desk {
    _dir: tempfile::TempDir,
    config: ExperimentConfig,
    workspace: Workspace,
    output: RunOutput,
    elapsed: Duration,
}

fn desk_setup() -> Desk {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let world = generate(&SynthConfig::default()).unwrap();
    let files = write_world(&world, dir.path()).unwrap();
    let mut config = ExperimentConfig::load(&files.config).unwrap();
    config.sigmas = vec![0.0, 0.6, 1.0];
    config.distractor_counts = vec![0, 20, 40];
    config.l_values = vec![1];
    config.k_values = vec![1, 2, 3, 4, 5];
    let output = run_experiment(&config).unwrap();
    let elapsed = start.elapsed();
    let workspace = Workspace::load(&config).unwrap();
    Desk {
        _dir: dir,
        config,
        workspace,
        output,
        elapsed,
    }
}

fn metric_bounds(report: &mut Report, desk: &Desk) {
    let out = &desk.output;
    let bad_alpha = out.records.iter().filter(|r| !(0.0..=2.0).contains(&r.alpha)).count();
    let bad_rho = out
        .records
        .iter()
        .filter(|r| r.rho.is_some_and(|x| !(0.0..=1.0).contains(&x)))
        .count();
    let (store, index) = (&desk.workspace.store, &desk.workspace.index);
    let mut anchor_failures = 0;
    for q in &desk.config.queries {
        if anonymity(store, q, &[q.as_str()]).unwrap() != 0.0 {
            anchor_failures += 1;
        }
        if reconstructability(index, q, &index.retrieve(q)) != Some(1.0) {
            anchor_failures += 1;
        }
    }
    report.check(
        "metric bounds and anchors",
        bad_alpha + bad_rho + anchor_failures == 0 && !out.records.is_empty(),
        format!(
            "{} cells; {bad_alpha} α and {bad_rho} ρ out of range; {anchor_failures} anchor failures",
            out.records.len()
        ),
    );
}

fn trend_correlation(report: &mut Report, desk: &Desk) {
    let r_at = |sigma: f64| {
        desk.output
            .fit(sigma, 0, 1)
            .and_then(|f| f.fit)
            .map_or(f64::NAN, |f| f.pearson_r)
    };
    let (r1, r0) = (r_at(1.0), r_at(0.0));
    let points = desk.output.fit(1.0, 0, 1).map_or(0, |f| f.n_points);
    report.check(
        "anonymity vs reconstructability trend",
        r1 <= -0.2 && points >= 40 && within(desk.elapsed, 300),
        format!("r = {r1:.3} at σ=1.0, m=0 over {points} queries; grid ran in {:.1?}", desk.elapsed),
    );
    report.check(
        "noise steepening",
        r1.abs() >= r0.abs(),
        format!("|r| = {:.3} at σ=1.0 vs {:.3} at σ=0", r1.abs(), r0.abs()),
    );
}

fn hit_rate_trend(report: &mut Report, desk: &Desk) {
    let rate = |sigma: f64, m: usize| desk.output.hit_rate(sigma, m, 1, 1, AttackMode::Standard).unwrap_or(f64::NAN);
    let base = rate(0.0, 0);
    let drops: Vec<(f64, f64, f64)> = [0.0, 0.6].iter().map(|&s| (s, rate(s, 0), rate(s, 40))).collect();
    let pass = base >= 0.5 && drops.iter().all(|&(_, h0, h40)| h40 <= 0.5 * h0);
    let detail = drops
        .iter()
        .map(|(s, h0, h40)| format!("σ={s}: {h0:.2} -> {h40:.2}"))
        .collect::<Vec<_>>()
        .join("; ");
    report.check(
        "hit rate trend",
        pass,
        format!("hit rate {base:.2} at σ=0, m=0, k=1; m=0 -> m=40 {detail}"),
    );
}

fn conservative_dominance(report: &mut Report, desk: &Desk) {
    let mut violations = 0;
    let mut attacks = 0;
    for r in &desk.output.records {
        for a in &r.attacks {
            attacks += 1;
            let standard: BTreeSet<&String> = a.standard.guesses.iter().collect();
            let conservative: BTreeSet<&String> = a.conservative.guesses.iter().collect();
            if !standard.is_subset(&conservative) || (a.standard.hit && !a.conservative.hit) {
                violations += 1;
            }
        }
    }
    for row in desk.output.hit_rates.iter().filter(|h| h.mode == AttackMode::Standard) {
        let c = desk
            .output
            .hit_rate(row.sigma, row.m, row.l, row.k, AttackMode::Conservative)
            .unwrap_or(-1.0);
        if c < row.rate() {
            violations += 1;
        }
    }
    report.check(
        "conservative-attack dominance",
        violations == 0 && attacks > 0,
        format!("{violations} violations over {attacks} attacks"),
    );
}

fn kmeans_sanity(report: &mut Report, desk: &Desk) {
    let mut violations = 0;
    let mut steps = 0;
    for r in &desk.output.records {
        for a in &r.attacks {
            for w in a.objective_trace.windows(2) {
                steps += 1;
                if w[1] > w[0] * (1.0 + 1e-12) {
                    violations += 1;
                }
            }
        }
    }
    report.check(
        "k-means objective non-increasing",
        violations == 0,
        format!("{violations} increases over {steps} iterations"),
    );
}

fn determinism(report: &mut Report, desk: &Desk) {
    let mut again = desk.config.clone();
    again.output_dir = desk.config.output_dir.with_file_name("results-again");
    run_experiment(&again).unwrap();
    let same = |name: &str| {
        fs::read(desk.config.output_dir.join(name)).unwrap() == fs::read(again.output_dir.join(name)).unwrap()
    };
    let files = ["records.csv", "fits.csv", "hitrates.csv"];
    let differing: Vec<&str> = files.iter().copied().filter(|f| !same(f)).collect();
    report.check(
        "determinism",
        differing.is_empty(),
        if differing.is_empty() {
            "records.csv, fits.csv, hitrates.csv byte-identical across runs".into()
        } else {
            format!("differs: {}", differing.join(", "))
        },
    );
}

fn theory_recovery(report: &mut Report) {
    let start = Instant::now();
    let (c, norm, d, l, log_z) = (5.0, 6.0, 50, 1, 1.0);
    let truth = predicted_slope(c, norm, d, l);
    let mut r = rng(5);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let points: Vec<(f64, f64)> = (0..200)
        .map(|_| {
            let a = r.random_range(0.0..1.5);
            (a, predicted_log_rho(a, c, norm, d, l, log_z) + noise.sample(&mut r))
        })
        .collect();
    let fit = fit_relationship(&points).unwrap();
    let elapsed = start.elapsed();
    report.check(
        "theory recovery",
        (fit.slope - truth).abs() <= 0.03 && elapsed < Duration::from_secs(1),
        format!("slope {:.4} vs generating {truth:.4}, {elapsed:.1?}", fit.slope),
    );
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> Value {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let bytes = app.clone().oneshot(req).await.unwrap().into_body().collect().await.unwrap().to_bytes();
    serde_json::from_slice(&bytes).unwrap_or(Value::Null)
}

fn game_protocol(report: &mut Report, desk: &Desk) {
    let store = EmbeddingStore::load(&desk.config.embedding_path, None).unwrap();
    let index = InvertedIndex::open(&desk.config.corpus_path).unwrap();
    let svc = Arc::new(GameService::new(
        Arc::new(store),
        Arc::new(index),
        desk.config.queries.clone(),
        GameSettings::default(),
    ));
    let app = router(svc.clone());
    let rt = tokio::runtime::Runtime::new().unwrap();
    let mut problems: Vec<String> = Vec::new();
    let stats = rt.block_on(async {
        let created = call(&app, "POST", "/api/sessions", Some(json!({"rounds": 20, "sigma": 0.6, "n": 10, "m": 20, "seed": 77}))).await;
        let id = created["session_id"].as_str().unwrap().to_string();
        let audit = svc.audit(&id).unwrap();
        let index = svc.index();
        for (i, round) in audit.iter().enumerate() {
            // Independent ρ at l=1: share of the query's documents hit by any related term.
            let truth = index.postings(&round.query);
            let union: BTreeSet<u32> = round.related.iter().flat_map(|t| index.postings(t).iter().copied()).collect();
            let rho = truth.iter().filter(|d| union.contains(d)).count() as f64 / truth.len() as f64;
            if rho <= 0.3 {
                problems.push(format!("round {i} served with ρ={rho:.3}"));
            }
            let base = format!("/api/sessions/{id}/rounds/{i}");
            let view = call(&app, "GET", &base, None).await;
            if view["stage"] != "STAGE1" {
                problems.push(format!("round {i} did not start at STAGE1"));
            }
            let guess = |g: &str| Some(json!({ "guess": g }));
            let text = |v: &Value| v.as_str().unwrap_or("").to_string();
            // 7 stage-1 wins, 5 stage-2 wins, 8 losses.
            let expected: Vec<(String, &str)> = if i < 7 {
                let r = call(&app, "POST", &format!("{base}/guess"), guess(&round.query)).await;
                vec![(text(&r["outcome"]), "WIN_STAGE1"), (text(&r["next_stage"]), "DONE")]
            } else {
                let first = call(&app, "POST", &format!("{base}/guess"), guess("xyzzy")).await;
                let view = call(&app, "GET", &base, None).await;
                let second_guess = if i < 12 { round.query.as_str() } else { "plugh" };
                let second = call(&app, "POST", &format!("{base}/guess"), guess(second_guess)).await;
                vec![
                    (text(&first["outcome"]), "PENDING"),
                    (text(&first["next_stage"]), "STAGE2"),
                    (text(&view["stage"]), "STAGE2"),
                    (text(&second["outcome"]), if i < 12 { "WIN_STAGE2" } else { "LOSS" }),
                    (text(&second["next_stage"]), "DONE"),
                ]
            };
            for (got, want) in expected {
                if got != want {
                    problems.push(format!("round {i}: got {got}, expected {want}"));
                }
            }
        }
        call(&app, "GET", &format!("/api/sessions/{id}/stats"), None).await
    });
    let rates_ok = stats["stage1_rate"] == json!(7.0 / 20.0) && stats["overall_rate"] == json!(12.0 / 20.0);
    if !rates_ok {
        problems.push(format!("stats {stats}"));
    }
    report.check(
        "game protocol",
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "20 rounds, stage1_rate {} overall_rate {}, all served ρ > 0.3",
                stats["stage1_rate"], stats["overall_rate"]
            )
        } else {
            problems.join("; ")
        },
    );
}

fn main() {
    let mut report = Report { failures: 0 };
    retrieval_oracle(&mut report);
    knn_oracle(&mut report);
    l_monotonicity(&mut report);
    let desk = desk_setup();
    metric_bounds(&mut report, &desk);
    trend_correlation(&mut report, &desk);
    hit_rate_trend(&mut report, &desk);
    conservative_dominance(&mut report, &desk);
    kmeans_sanity(&mut report, &desk);
    determinism(&mut report, &desk);
    theory_recovery(&mut report);
    game_protocol(&mut report, &desk);
    if report.failures > 0 {
        println!("{} acceptance criteria failed", report.failures);
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
