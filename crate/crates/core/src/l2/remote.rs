use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorePair {
    pub query: String,
    pub passage: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub pairs: Vec<ScorePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub scores: Vec<f64>,
}

/// Where and how to reach an external relevance scorer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternalScorerEndpoint {
    /// Base URL; requests go to `<base_url>/score`.
    pub base_url: String,
    pub timeout: Duration,
    /// Largest number of pairs sent in one request.
    pub batch_limit: usize,
    /// Largest number of requests in flight for one call.
    pub max_in_flight: usize,
}

impl ExternalScorerEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            timeout: Duration::from_secs(2),
            batch_limit: 64,
            max_in_flight: 4,
        }
    }
}

/// Blocking client for `POST /score`.
pub struct RemoteScorer {
    endpoint: ExternalScorerEndpoint,
    url: String,
    agent: ureq::Agent,
}

impl RemoteScorer {
    pub fn new(endpoint: ExternalScorerEndpoint) -> Result<Self> {
        if endpoint.batch_limit == 0 || endpoint.max_in_flight == 0 {
            return Err(Error::InvalidArgument("batch limit and concurrency must be positive".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let url = format!("{}/score", endpoint.base_url.trim_end_matches('/'));
        Ok(Self { endpoint, url, agent })
    }

    pub fn endpoint(&self) -> &ExternalScorerEndpoint {
        &self.endpoint
    }

    /// One request. `pairs` must not exceed the batch limit.
    pub fn score_batch(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        if pairs.len() > self.endpoint.batch_limit {
            return Err(Error::InvalidArgument(format!(
                "batch of {} exceeds limit {}",
                pairs.len(),
                self.endpoint.batch_limit
            )));
        }
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        let body = ScoreRequest { pairs: pairs.to_vec() };
        let mut resp = self.agent.post(&self.url).send_json(&body).map_err(map_ureq)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(Error::Remote(format!("scorer returned status {}", status.as_u16())));
        }
        let parsed: ScoreResponse = resp.body_mut().read_json().map_err(map_ureq)?;
        if parsed.scores.len() != pairs.len() {
            return Err(Error::Remote(format!(
                "scorer returned {} scores for {} pairs",
                parsed.scores.len(),
                pairs.len()
            )));
        }
        if parsed.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Remote("scorer returned a non-finite score".into()));
        }
        Ok(parsed.scores)
    }

    /// Splits into batch-limit chunks and sends up to `max_in_flight` at once.
    /// Any failed chunk fails the whole call.
    pub fn score_all(&self, pairs: &[ScorePair]) -> Result<Vec<f64>> {
        let chunks: Vec<&[ScorePair]> = pairs.chunks(self.endpoint.batch_limit).collect();
        if chunks.len() <= 1 {
            return self.score_batch(pairs);
        }
        let results: Vec<Mutex<Option<Result<Vec<f64>>>>> = chunks.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        let workers = self.endpoint.max_in_flight.min(chunks.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(chunk) = chunks.get(i) else { break };
                    let r = self.score_batch(chunk);
                    let failed = r.is_err();
                    *results[i].lock() = Some(r);
                    if failed {
                        next.store(chunks.len(), Ordering::Relaxed);
                    }
                });
            }
        });
        let mut out = Vec::with_capacity(pairs.len());
        for slot in results {
            match slot.into_inner() {
                Some(Ok(scores)) => out.extend(scores),
                Some(Err(e)) => return Err(e),
                None => return Err(Error::Remote("scoring aborted after an earlier failure".into())),
            }
        }
        Ok(out)
    }
}

fn map_ureq(e: ureq::Error) -> Error {
    match e {
        ureq::Error::Timeout(_) => Error::RemoteTimeout,
        other => Error::Remote(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use axum::{http::StatusCode, routing::post, Json, Router};
    use std::sync::atomic::AtomicUsize;
    use std::sync::Arc;

    /// Serves `router` on an ephemeral port from a background runtime.
    fn serve(router: Router) -> String {
        let (tx, rx) = std::sync::mpsc::channel();
        std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                axum::serve(listener, router).await.unwrap();
            });
        });
        format!("http://{}", rx.recv().unwrap())
    }

    fn length_scorer(calls: Arc<AtomicUsize>) -> Router {
        Router::new().route(
            "/score",
            post(move |Json(req): Json<ScoreRequest>| {
                calls.fetch_add(1, Ordering::SeqCst);
                async move {
                    Json(ScoreResponse {
                        scores: req.pairs.iter().map(|p| p.passage.len() as f64).collect(),
                    })
                }
            }),
        )
    }

    fn pairs(n: usize) -> Vec<ScorePair> {
        (0..n)
            .map(|i| ScorePair {
                query: "q".into(),
                passage: "x".repeat(i),
            })
            .collect()
    }

    #[test]
    fn chunks_preserve_order() {
        let calls = Arc::new(AtomicUsize::new(0));
        let url = serve(length_scorer(calls.clone()));
        let scorer = RemoteScorer::new(ExternalScorerEndpoint {
            batch_limit: 7,
            ..ExternalScorerEndpoint::new(url)
        })
        .unwrap();
        let scores = scorer.score_all(&pairs(50)).unwrap();
        assert_eq!(scores, (0..50).map(|i| i as f64).collect::<Vec<_>>());
        assert_eq!(calls.load(Ordering::SeqCst), 8);
        assert!(scorer.score_batch(&pairs(8)).is_err());
    }

    #[test]
    fn error_status_and_count_mismatch() {
        let url = serve(
            Router::new()
                .route("/score", post(|| async { StatusCode::INTERNAL_SERVER_ERROR }))
                .route("/short/score", post(|| async { Json(ScoreResponse { scores: vec![1.0] }) })),
        );
        let bad = RemoteScorer::new(ExternalScorerEndpoint::new(url.clone())).unwrap();
        assert!(matches!(bad.score_batch(&pairs(2)), Err(Error::Remote(m)) if m.contains("500")));
        let short = RemoteScorer::new(ExternalScorerEndpoint::new(format!("{url}/short"))).unwrap();
        assert!(matches!(short.score_batch(&pairs(2)), Err(Error::Remote(m)) if m.contains("1 scores")));
    }

    #[test]
    fn timeout_is_reported() {
        let url = serve(Router::new().route(
            "/score",
            post(|| async {
                tokio::time::sleep(Duration::from_millis(500)).await;
                Json(ScoreResponse { scores: vec![0.0] })
            }),
        ));
        let scorer = RemoteScorer::new(ExternalScorerEndpoint {
            timeout: Duration::from_millis(50),
            ..ExternalScorerEndpoint::new(url)
        })
        .unwrap();
        assert!(matches!(scorer.score_batch(&pairs(1)), Err(Error::RemoteTimeout)));
    }

    #[test]
    fn unreachable_host_is_remote_error() {
        let scorer = RemoteScorer::new(ExternalScorerEndpoint::new("http://127.0.0.1:1")).unwrap();
        assert!(scorer.score_batch(&pairs(1)).is_err());
    }
}
