mod common;

use std::sync::Arc;

use common::*;
use serde_json::Value;
use vertsearch::service::{router, SearchResult};

#[test]
fn golden_pipeline_output() {
    let payloads = golden_payloads();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let text = serde_json::to_string_pretty(&payloads).unwrap();
        std::fs::write(GOLDEN_PATH, text + "\n").unwrap();
    }
    let stored: Vec<SearchResult> = serde_json::from_str(&std::fs::read_to_string(GOLDEN_PATH).unwrap()).unwrap();
    assert_eq!(stored, payloads);
}

fn server() -> std::net::SocketAddr {
    spawn_server(router(Arc::new(golden_service())))
}

#[test]
fn health_reports_index_shape() {
    let addr = server();
    let (status, body) = http_get(&format!("http://{addr}/health"));
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["shards"], 3);
    assert_eq!(v["passages"], 600);
    assert!(v["model_version"].as_str().unwrap().starts_with("xscorer-v1-"));
    for key in ["generation", "cache_size", "cache_capacity"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn search_response_fields() {
    let addr = server();
    let (status, body) = http_get(&format!("http://{addr}/search?q=w3+w17+w42&k=10&answers=1"));
    assert_eq!(status, 200);
    let v: Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["query"], "w3 w17 w42");
    let groups = v["results"].as_array().unwrap();
    assert!(!groups.is_empty());
    let mut total = 0;
    for g in groups {
        assert!(g["doc_id"].is_string() && g["title"].is_string());
        let ps = g["passages"].as_array().unwrap();
        assert!(!ps.is_empty() && ps.len() <= 3);
        for p in ps {
            for key in ["passage_id", "text", "l1_score", "l2_score"] {
                assert!(p.get(key).is_some(), "missing {key}");
            }
        }
        total += ps.len();
    }
    assert!(total <= 10);
    for key in ["cache_hit", "l1_ms", "l2_ms", "total_ms"] {
        assert!(v["timing"].get(key).is_some(), "missing timing.{key}");
    }
    assert!(v.get("answer").is_some());
}

#[test]
fn bad_requests_are_rejected() {
    let addr = server();
    for query in ["", "?k=5", "?q=x&k=0", "?q=x&k=500", "?q=x&k=abc", "?q=x&fusion=maybe"] {
        let (status, body) = http_get(&format!("http://{addr}/search{query}"));
        assert_eq!(status, 400, "{query}: {body}");
        let v: Value = serde_json::from_str(&body).unwrap();
        assert!(v["error"].is_string(), "{query}: {body}");
    }
}

#[test]
fn cors_header_present() {
    let addr = server();
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let resp = agent.get(&format!("http://{addr}/health")).call().unwrap();
    assert_eq!(resp.headers().get("access-control-allow-origin").unwrap(), "*");
}

#[test]
fn repeated_query_hits_cache() {
    let svc = Arc::new(golden_service_with_cache(16));
    let addr = spawn_server(router(svc));
    let url = format!("http://{addr}/search?q=w5+w9");
    let (_, first) = http_get(&url);
    let (_, second) = http_get(&url);
    let a: Value = serde_json::from_str(&first).unwrap();
    let b: Value = serde_json::from_str(&second).unwrap();
    assert_eq!(a["timing"]["cache_hit"], false);
    assert_eq!(b["timing"]["cache_hit"], true);
    assert_eq!(a["results"], b["results"]);
    let (_, bypass) = http_get(&format!("{url}&no_cache=1"));
    let c: Value = serde_json::from_str(&bypass).unwrap();
    assert_eq!(c["timing"]["cache_hit"], false);
}
