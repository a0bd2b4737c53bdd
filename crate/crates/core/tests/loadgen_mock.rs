mod common;

use std::collections::HashMap;

use axum::extract::Query;
use axum::http::StatusCode;
use axum::routing::get;
use axum::Router;
use common::*;
use vertsearch::loadgen::{run_load, LoadConfig, Warmup};
use vertsearch::Error;

fn config(url: String) -> LoadConfig {
    LoadConfig {
        url,
        num_users: 4,
        think_min_s: 15.0,
        think_max_s: 60.0,
        duration_s: 300.0,
        warmup: None,
        time_scale: 300.0,
        request_timeout_s: 2.0,
        extra_params: Vec::new(),
        seed: 1,
    }
}

fn ok_server() -> std::net::SocketAddr {
    spawn_server(Router::new().route("/search", get(|| async { "{}" })))
}

#[test]
fn exhausted_pool_marks_report_invalid() {
    let addr = ok_server();
    let pool: Vec<String> = (0..5).map(|i| format!("q{i}")).collect();
    let report = run_load(&config(format!("http://{addr}")), pool).unwrap();
    assert!(!report.valid);
    assert!(report.requests <= 5);
    assert!(report.to_tsv().contains("valid=false"));
}

#[test]
fn server_errors_count_as_failures() {
    let addr = spawn_server(Router::new().route(
        "/search",
        get(|Query(p): Query<HashMap<String, String>>| async move {
            let n: usize = p["q"].trim_start_matches('q').parse().unwrap();
            if n.is_multiple_of(2) {
                (StatusCode::INTERNAL_SERVER_ERROR, "boom")
            } else {
                (StatusCode::OK, "{}")
            }
        }),
    ));
    let pool: Vec<String> = (0..5000).map(|i| format!("q{i}")).collect();
    let report = run_load(&config(format!("http://{addr}")), pool).unwrap();
    assert!(report.valid);
    assert!(report.failures > 0 && report.requests > report.failures);
}

#[test]
fn extra_params_and_warmup_reach_server() {
    let seen = std::sync::Arc::new(parking_lot::Mutex::new(Vec::new()));
    let sink = seen.clone();
    let addr = spawn_server(Router::new().route(
        "/search",
        get(move |Query(p): Query<HashMap<String, String>>| {
            let sink = sink.clone();
            async move {
                sink.lock().push(p);
                "{}"
            }
        }),
    ));
    let cfg = LoadConfig {
        warmup: Some(Warmup { qps: 1.0, duration_s: 30.0 }),
        extra_params: vec![("no_cache".into(), "1".into())],
        ..config(format!("http://{addr}"))
    };
    let report = run_load(&cfg, (0..5000).map(|i| format!("q{i}")).collect()).unwrap();
    assert!(report.warmup_requests >= 8, "{}", report.warmup_requests);
    let seen = seen.lock();
    assert!(!seen.is_empty());
    assert!(seen.iter().all(|p| p.get("no_cache").map(String::as_str) == Some("1")));
}

#[test]
fn unreachable_target_is_network_error() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    drop(listener);
    let err = run_load(&config(format!("http://{addr}")), vec!["a".into()]).unwrap_err();
    assert!(matches!(err, Error::Network(_)), "{err}");
}
