//! Closed-loop load generator.
//!
//! Each virtual user sends a search, records its latency, then thinks for a
//! uniformly random time before the next one. An optional open-loop warm-up
//! at a fixed rate runs first and is never reported. No query is sent twice in
//! one experiment. All protocol times are divided by `time_scale`, so a
//! ten-minute run can be replayed in seconds.

use std::fmt::Write as _;
use std::fs;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tracing::{info, warn};

use crate::error::{Error, Result};

/// Column header of the latency report.
pub const REPORT_HEADER: &str = "QPS\tMedian (s)\t90% (s)\tMean (s)\tMin (s)\tMax (s)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Warmup {
    /// Requests per second of protocol time.
    pub qps: f64,
    pub duration_s: f64,
}

impl Default for Warmup {
    fn default() -> Self {
        Self {
            qps: 0.5,
            duration_s: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadConfig {
    /// Service base URL; requests go to `<url>/search?q=...`.
    pub url: String,
    pub num_users: usize,
    pub think_min_s: f64,
    pub think_max_s: f64,
    pub duration_s: f64,
    pub warmup: Option<Warmup>,
    /// Divisor applied to think time, durations and warm-up spacing.
    pub time_scale: f64,
    pub request_timeout_s: f64,
    /// Extra query-string parameters, e.g. `no_cache=1`.
    pub extra_params: Vec<(String, String)>,
    pub seed: u64,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            url: "http://127.0.0.1:8080".into(),
            num_users: 10,
            think_min_s: 15.0,
            think_max_s: 60.0,
            duration_s: 600.0,
            warmup: Some(Warmup::default()),
            time_scale: 1.0,
            request_timeout_s: 30.0,
            extra_params: Vec::new(),
            seed: 13,
        }
    }
}

impl LoadConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if self.num_users == 0 {
            return Err(Error::InvalidArgument("at least one user is required".into()));
        }
        if !(self.think_min_s >= 0.0 && self.think_min_s <= self.think_max_s && self.think_max_s.is_finite()) {
            return Err(Error::InvalidArgument("think time range must satisfy 0 <= min <= max".into()));
        }
        if !positive(self.duration_s) || !positive(self.time_scale) || !positive(self.request_timeout_s) {
            return Err(Error::InvalidArgument("duration, time scale and timeout must be positive".into()));
        }
        if let Some(w) = &self.warmup {
            if !positive(w.qps) || w.duration_s.is_nan() || w.duration_s < 0.0 {
                return Err(Error::InvalidArgument("warm-up rate must be positive".into()));
            }
        }
        Ok(())
    }

    fn scaled(&self, seconds: f64) -> Duration {
        Duration::from_secs_f64(seconds / self.time_scale)
    }

    /// Throughput a closed loop reaches with the given mean service time.
    pub fn predicted_qps(&self, mean_latency_s: f64) -> f64 {
        let think = (self.think_min_s + self.think_max_s) / 2.0 / self.time_scale;
        self.num_users as f64 / (think + mean_latency_s)
    }
}

/// Hands out each pool query at most once, in a seeded random order.
pub struct QuerySampler {
    order: Vec<String>,
    cursor: AtomicUsize,
}

impl QuerySampler {
    pub fn new(pool: Vec<String>, seed: u64) -> Self {
        let mut order = pool;
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        Self {
            order,
            cursor: AtomicUsize::new(0),
        }
    }

    pub fn next_query(&self) -> Result<&str> {
        let i = self.cursor.fetch_add(1, Ordering::Relaxed);
        self.order
            .get(i)
            .map(String::as_str)
            .ok_or(Error::PoolExhausted(self.order.len()))
    }

    pub fn drawn(&self) -> usize {
        self.cursor.load(Ordering::Relaxed).min(self.order.len())
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }
}

/// Reads one query per line, dropping blanks and repeats.
pub fn read_query_pool(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = std::collections::HashSet::new();
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && seen.insert(*l))
        .map(str::to_string)
        .collect())
}

/// Nearest-rank percentile: the `ceil(q * n)`-th smallest sample (1-based).
pub fn percentile(samples: &[f64], q: f64) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("latency samples"));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidArgument(format!("percentile {q} outside [0, 1]")));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((q * sorted.len() as f64).ceil() as usize).max(1);
    Ok(sorted[rank - 1])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub qps: f64,
    pub median_s: f64,
    pub p90_s: f64,
    pub mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    /// Successful requests completed inside the measurement window.
    pub requests: usize,
    pub failures: usize,
    pub warmup_requests: usize,
    pub window_s: f64,
    /// No request completed in the window.
    pub empty: bool,
    /// False when the run was aborted, e.g. the query pool ran out.
    pub valid: bool,
}

impl LatencyReport {
    pub fn from_samples(latencies: &[f64], failures: usize, window_s: f64) -> Self {
        let completed = latencies.len() + failures;
        let qps = if window_s > 0.0 { completed as f64 / window_s } else { 0.0 };
        if latencies.is_empty() {
            return Self {
                qps,
                median_s: 0.0,
                p90_s: 0.0,
                mean_s: 0.0,
                min_s: 0.0,
                max_s: 0.0,
                requests: 0,
                failures,
                warmup_requests: 0,
                window_s,
                empty: true,
                valid: true,
            };
        }
        let pct = |q| percentile(latencies, q).expect("non-empty");
        Self {
            qps,
            median_s: pct(0.5),
            p90_s: pct(0.9),
            mean_s: latencies.iter().sum::<f64>() / latencies.len() as f64,
            min_s: latencies.iter().copied().fold(f64::INFINITY, f64::min),
            max_s: latencies.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            requests: latencies.len(),
            failures,
            warmup_requests: 0,
            window_s,
            empty: false,
            valid: true,
        }
    }

    /// Header row, one data row, then `#` lines with the bookkeeping fields.
    pub fn to_tsv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        let _ = writeln!(
            out,
            "{:.2}\t{:.3}\t{:.3}\t{:.3}\t{:.3}\t{:.3}",
            self.qps, self.median_s, self.p90_s, self.mean_s, self.min_s, self.max_s
        );
        let _ = writeln!(
            out,
            "# requests={} failures={} warmup_requests={} window_s={:.3} empty={} valid={}",
            self.requests, self.failures, self.warmup_requests, self.window_s, self.empty, self.valid
        );
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tsv()).map_err(|e| Error::io(path, e))
    }
}

enum Outcome {
    Ok(f64),
    Failed,
}

struct Client {
    agent: ureq::Agent,
    search_url: String,
    params: Vec<(String, String)>,
}

impl Client {
    fn new(cfg: &LoadConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.request_timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            search_url: format!("{}/search", cfg.url.trim_end_matches('/')),
            params: cfg.extra_params.clone(),
        }
    }

    fn send(&self, query: &str) -> Outcome {
        let started = Instant::now();
        let mut req = self.agent.get(&self.search_url).query("q", query);
        for (k, v) in &self.params {
            req = req.query(k, v);
        }
        match req.call() {
            Ok(mut resp) if resp.status().is_success() => {
                // Latency includes reading the body.
                if resp.body_mut().read_to_vec().is_err() {
                    return Outcome::Failed;
                }
                Outcome::Ok(started.elapsed().as_secs_f64())
            }
            _ => Outcome::Failed,
        }
    }
}

fn check_reachable(url: &str) -> Result<()> {
    let uri: ureq::http::Uri = url
        .parse()
        .map_err(|e| Error::InvalidArgument(format!("bad url `{url}`: {e}")))?;
    let host = uri
        .host()
        .ok_or_else(|| Error::InvalidArgument(format!("url `{url}` has no host")))?;
    let port = uri.port_u16().unwrap_or(if uri.scheme_str() == Some("https") { 443 } else { 80 });
    let addrs: Vec<_> = (host, port)
        .to_socket_addrs()
        .map_err(|e| Error::Network(format!("cannot resolve {host}: {e}")))?
        .collect();
    for addr in &addrs {
        if TcpStream::connect_timeout(addr, Duration::from_secs(2)).is_ok() {
            return Ok(());
        }
    }
    Err(Error::Network(format!("target {url} is unreachable")))
}

/// Sleeps until `t`, or returns early once `stop` is set.
fn sleep_until(t: Instant, stop: &AtomicBool) {
    loop {
        let now = Instant::now();
        if now >= t || stop.load(Ordering::Relaxed) {
            return;
        }
        std::thread::sleep((t - now).min(Duration::from_millis(20)));
    }
}

/// Fixed-rate warm-up; returns the number of requests sent.
fn run_warmup(cfg: &LoadConfig, w: &Warmup, client: &Client, sampler: &QuerySampler, stop: &AtomicBool) -> usize {
    let interval = Duration::from_secs_f64(1.0 / (w.qps * cfg.time_scale));
    let end = Instant::now() + cfg.scaled(w.duration_s);
    let mut sent = 0;
    std::thread::scope(|s| {
        let mut next = Instant::now();
        while next < end && !stop.load(Ordering::Relaxed) {
            sleep_until(next, stop);
            match sampler.next_query() {
                Ok(q) => {
                    sent += 1;
                    s.spawn(move || {
                        let _ = client.send(q);
                    });
                }
                Err(_) => stop.store(true, Ordering::Relaxed),
            }
            next += interval;
        }
    });
    sent
}

/// Runs the warm-up (if any) and the measured phase against `pool`.
///
/// An unreachable target is an error. Running out of queries stops every
/// user and yields a partial report with `valid` cleared.
pub fn run_load(cfg: &LoadConfig, pool: Vec<String>) -> Result<LatencyReport> {
    cfg.validate()?;
    check_reachable(&cfg.url)?;
    let sampler = QuerySampler::new(pool, cfg.seed);
    let client = Client::new(cfg);
    let stop = AtomicBool::new(false);

    let warmup_requests = match &cfg.warmup {
        Some(w) if w.duration_s > 0.0 => {
            let n = run_warmup(cfg, w, &client, &sampler, &stop);
            info!(requests = n, "warm-up finished");
            n
        }
        _ => 0,
    };

    let samples: Mutex<Vec<f64>> = Mutex::new(Vec::new());
    let failures = AtomicUsize::new(0);
    let start = Instant::now();
    let deadline = start + cfg.scaled(cfg.duration_s);
    let mean_think = (cfg.think_min_s + cfg.think_max_s) / 2.0;
    std::thread::scope(|s| {
        for user in 0..cfg.num_users {
            let (client, sampler, stop, samples, failures) = (&client, &sampler, &stop, &samples, &failures);
            s.spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (user as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
                let mut local = Vec::new();
                // Staggered start so users are not in lockstep.
                let mut next = start + cfg.scaled(rng.random_range(0.0..=mean_think));
                loop {
                    sleep_until(next.min(deadline), stop);
                    if stop.load(Ordering::Relaxed) || Instant::now() >= deadline {
                        break;
                    }
                    let q = match sampler.next_query() {
                        Ok(q) => q,
                        Err(e) => {
                            warn!(error = %e, "stopping run");
                            stop.store(true, Ordering::Relaxed);
                            break;
                        }
                    };
                    let outcome = client.send(q);
                    if Instant::now() > deadline {
                        break;
                    }
                    match outcome {
                        Outcome::Ok(lat) => local.push(lat),
                        Outcome::Failed => {
                            failures.fetch_add(1, Ordering::Relaxed);
                        }
                    }
                    let think = rng.random_range(cfg.think_min_s..=cfg.think_max_s);
                    next = Instant::now() + cfg.scaled(think);
                }
                samples.lock().extend(local);
            });
        }
    });

    let aborted = stop.load(Ordering::Relaxed);
    let window_s = if aborted {
        start.elapsed().as_secs_f64()
    } else {
        (deadline - start).as_secs_f64()
    };
    let mut report = LatencyReport::from_samples(&samples.into_inner(), failures.into_inner(), window_s);
    report.warmup_requests = warmup_requests;
    report.valid = !aborted;
    Ok(report)
}
