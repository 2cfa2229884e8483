mod common;

use std::sync::Arc;

use anonsearch::corpus::InvertedIndex;
use anonsearch::game::http::router;
use anonsearch::game::{GameService, GameSettings, Outcome, SessionRequest, Stage};
use anonsearch::plot::{read_scatter_points, scatter_csv};
use anonsearch::synth::generate;
use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn service() -> GameService {
    let world = generate(&common::small_world()).unwrap();
    let index = InvertedIndex::build(world.docs).unwrap();
    let settings = GameSettings {
        pool_size: 400,
        ..Default::default()
    };
    GameService::new(Arc::new(world.store), Arc::new(index), world.queries, settings)
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn request(rounds: usize, seed: u64) -> SessionRequest {
    SessionRequest { rounds, sigma: 0.6, n: 10, m: 10, seed }
}

#[tokio::test]
async fn scripted_client_plays_twenty_rounds() {
    let svc = Arc::new(service());
    let app = router(svc.clone());

    let (status, created) = call(&app, "POST", "/api/sessions", Some(json!({"rounds": 20, "sigma": 0.6, "n": 10, "m": 10, "seed": 5}))).await;
    assert_eq!(status, StatusCode::CREATED);
    let id = created["session_id"].as_str().unwrap().to_string();
    let audit = svc.audit(&id).unwrap();
    assert_eq!(audit.len(), 20);

    let (_, stats) = call(&app, "GET", &format!("/api/sessions/{id}/stats"), None).await;
    assert!(stats["stage1_rate"].is_null() && stats["overall_rate"].is_null());

    // Rounds 0..6 win at once, 6..12 on the second try, the rest are lost.
    for (i, round) in audit.iter().enumerate() {
        let base = format!("/api/sessions/{id}/rounds/{i}");
        let (status, view) = call(&app, "GET", &base, None).await;
        assert_eq!(status, StatusCode::OK);
        assert_eq!(view["stage"], "STAGE1");
        let terms: Vec<String> = serde_json::from_value(view["terms"].clone()).unwrap();
        assert_eq!(terms.len(), 20);
        assert!(!terms.contains(&round.query));

        let guess = |g: &str| json!({ "guess": g });
        if i < 6 {
            let (_, r) = call(&app, "POST", &format!("{base}/guess"), Some(guess(&round.query.to_uppercase()))).await;
            assert_eq!(r, json!({"outcome": "WIN_STAGE1", "next_stage": "DONE", "query": round.query}));
        } else {
            let (_, r) = call(&app, "POST", &format!("{base}/guess"), Some(guess("  not-it "))).await;
            assert_eq!(r, json!({"outcome": "PENDING", "next_stage": "STAGE2"}));
            let (_, view) = call(&app, "GET", &base, None).await;
            assert_eq!(view["stage"], "STAGE2");
            let mut shown: Vec<String> = serde_json::from_value(view["terms"].clone()).unwrap();
            let mut related = round.related.clone();
            shown.sort();
            related.sort();
            assert_eq!(shown, related);
            let (second, outcome) = if i < 12 { (round.query.as_str(), "WIN_STAGE2") } else { ("still wrong", "LOSS") };
            let (_, r) = call(&app, "POST", &format!("{base}/guess"), Some(guess(second))).await;
            assert_eq!(r, json!({"outcome": outcome, "next_stage": "DONE", "query": round.query}));
        }
        let (status, err) = call(&app, "GET", &base, None).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert_eq!(err["code"], "round_finished");
    }

    let (_, stats) = call(&app, "GET", &format!("/api/sessions/{id}/stats"), None).await;
    assert_eq!(stats["stage1_rate"], json!(0.3));
    assert_eq!(stats["overall_rate"], json!(0.6));
    assert_eq!(stats["completed_rounds"], 20);
    assert_eq!(stats["stage1_wins"], 6);
    assert_eq!(stats["stage2_wins"], 6);
    assert_eq!(stats["losses"], 8);
    assert_eq!(stats["points"].as_array().unwrap().len(), 20);
}

#[tokio::test]
async fn errors_are_structured() {
    let app = router(Arc::new(service()));
    let (status, err) = call(&app, "GET", "/api/sessions/nope/stats", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(err["code"], "not_found");
    assert!(err["message"].as_str().unwrap().contains("nope"));

    let (status, err) = call(&app, "POST", "/api/sessions", Some(json!({"rounds": 2}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "invalid_request");

    let (status, err) = call(&app, "POST", "/api/sessions", Some(json!({"rounds": 0, "sigma": 0.0, "n": 10, "m": 0, "seed": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");
    let (status, _) = call(&app, "POST", "/api/sessions", Some(json!({"rounds": 1, "sigma": -1.0, "n": 10, "m": 0, "seed": 1}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let (_, created) = call(&app, "POST", "/api/sessions", Some(json!({"rounds": 2, "sigma": 0.0, "n": 10, "m": 0, "seed": 1}))).await;
    let id = created["session_id"].as_str().unwrap();
    let (status, err) = call(&app, "POST", &format!("/api/sessions/{id}/rounds/0/guess"), Some(json!({"guess": "   "}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(err["code"], "invalid_request");
    let (_, view) = call(&app, "GET", &format!("/api/sessions/{id}/rounds/0"), None).await;
    assert_eq!(view["stage"], "STAGE1");
    let (status, _) = call(&app, "GET", &format!("/api/sessions/{id}/rounds/7"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[test]
fn no_eligible_query_is_an_error() {
    let world = generate(&common::small_world()).unwrap();
    let index = InvertedIndex::build(world.docs).unwrap();
    let settings = GameSettings { min_rho: 1.0, pool_size: 400, ..Default::default() };
    let svc = GameService::new(Arc::new(world.store), Arc::new(index), world.queries, settings);
    assert!(matches!(svc.create(request(3, 1)), Err(anonsearch::game::GameError::NoEligibleQueries(_))));
}

#[test]
fn served_rounds_clear_the_reconstructability_bar() {
    let svc = service();
    let id = svc.create(request(20, 9)).unwrap();
    let index = svc.index();
    for round in svc.audit(&id).unwrap() {
        let truth = index.postings(&round.query);
        let rebuilt: std::collections::BTreeSet<u32> =
            round.related.iter().flat_map(|t| index.postings(t).iter().copied()).collect();
        let recovered = truth.iter().filter(|d| rebuilt.contains(d)).count();
        let rho = recovered as f64 / truth.len() as f64;
        assert!(rho > 0.3, "{} has rho {rho}", round.query);
        assert!((rho - round.rho).abs() < 1e-12);
    }
}

#[test]
fn event_log_replays_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let log = dir.path().join("events.jsonl");
    let svc = service().with_event_log(&log).unwrap();
    let id = svc.create(request(4, 3)).unwrap();
    let audit = svc.audit(&id).unwrap();
    svc.guess(&id, 0, &audit[0].query).unwrap();
    svc.guess(&id, 1, "nope").unwrap();
    svc.guess(&id, 2, "nope").unwrap();
    svc.guess(&id, 2, "nope").unwrap();
    assert!(svc.guess(&id, 3, "").is_err());
    let before = svc.stats(&id).unwrap();
    drop(svc);

    let restored = service().with_event_log(&log).unwrap();
    assert_eq!(restored.stats(&id).unwrap(), before);
    assert_eq!(restored.round(&id, 1).unwrap().stage, Stage::Stage2);
    let second = restored.create(request(1, 3)).unwrap();
    assert_ne!(second, id);
}

#[test]
fn stats_feed_the_scatter_emitter() {
    let svc = service();
    let id = svc.create(request(6, 11)).unwrap();
    let audit = svc.audit(&id).unwrap();
    for (i, r) in audit.iter().enumerate() {
        let guess = if i % 2 == 0 { r.query.clone() } else { "miss".into() };
        let res = svc.guess(&id, i, &guess).unwrap();
        if i % 2 == 1 {
            assert_eq!(svc.guess(&id, i, "miss").unwrap().outcome, Outcome::Loss);
        } else {
            assert_eq!(res.outcome, Outcome::WinStage1);
        }
    }
    let stats = svc.stats(&id).unwrap();
    let wire: anonsearch::game::SessionStats = serde_json::from_str(&serde_json::to_string(&stats).unwrap()).unwrap();
    assert_eq!(wire, stats);
    let points: Vec<(f64, f64)> = wire.points.iter().map(|p| (p.alpha, p.won())).collect();
    let back = read_scatter_points(&scatter_csv(&points, None)).unwrap();
    assert_eq!(back, points);
    assert_eq!(back.iter().filter(|p| p.1 == 1.0).count(), 3);
}
