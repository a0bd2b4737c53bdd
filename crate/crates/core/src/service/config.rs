use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::service::answer::DEFAULT_ABSTAIN_THRESHOLD;

pub const DEFAULT_CACHE_CAPACITY: usize = 1024;
pub const DEFAULT_PORT: u16 = 8080;

/// Service settings, read from a `key = value` text file. `#` starts a comment.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub index_dir: Option<PathBuf>,
    pub model_path: Option<PathBuf>,
    pub saliency_path: Option<PathBuf>,
    pub vocab_path: Option<PathBuf>,
    pub cache_capacity: usize,
    pub abstain_threshold: f64,
    pub scorer_url: Option<String>,
    pub scorer_timeout: Duration,
    /// Score locally when the external scorer fails.
    pub scorer_fallback: bool,
    pub host: String,
    pub port: u16,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            index_dir: None,
            model_path: None,
            saliency_path: None,
            vocab_path: None,
            cache_capacity: DEFAULT_CACHE_CAPACITY,
            abstain_threshold: DEFAULT_ABSTAIN_THRESHOLD,
            scorer_url: None,
            scorer_timeout: Duration::from_secs(2),
            scorer_fallback: true,
            host: "127.0.0.1".into(),
            port: DEFAULT_PORT,
        }
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "1" | "true" | "yes" | "on" => Some(true),
        "0" | "false" | "no" | "off" => Some(false),
        _ => None,
    }
}

impl ServiceConfig {
    /// Relative paths are resolved against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        const CTX: &str = "service config";
        let mut cfg = Self::default();
        let path = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_relative() {
                base.join(p)
            } else {
                p
            }
        };
        for (i, raw) in text.lines().enumerate() {
            let n = i + 1;
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::parse(CTX, n, "expected `key = value`"))?;
            let bad = |what: &str| Error::parse(CTX, n, format!("invalid {what} `{value}`"));
            match key {
                "index_dir" => cfg.index_dir = Some(path(value)),
                "model_path" => cfg.model_path = Some(path(value)),
                "saliency_path" => cfg.saliency_path = Some(path(value)),
                "vocab_path" => cfg.vocab_path = Some(path(value)),
                "cache_capacity" => cfg.cache_capacity = value.parse().map_err(|_| bad("cache capacity"))?,
                "abstain_threshold" => {
                    cfg.abstain_threshold = value
                        .parse()
                        .ok()
                        .filter(|t: &f64| t.is_finite())
                        .ok_or_else(|| bad("threshold"))?
                }
                "scorer_url" => cfg.scorer_url = Some(value.to_string()),
                "scorer_timeout_ms" => {
                    cfg.scorer_timeout = Duration::from_millis(value.parse().map_err(|_| bad("timeout"))?)
                }
                "scorer_fallback" => cfg.scorer_fallback = parse_bool(value).ok_or_else(|| bad("flag"))?,
                "host" => cfg.host = value.to_string(),
                "port" => cfg.port = value.parse().map_err(|_| bad("port"))?,
                other => return Err(Error::parse(CTX, n, format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }
}
