//! Client for a Perspective-style attribute scoring service.
//!
//! ```text
//! POST {url}
//! {"text": "...", "attributes": ["toxicity", "sexually_explicit"]}
//! -> {"scores": {"toxicity": 0.91, "sexually_explicit": 0.02}}
//! ```
//!
//! Requests are paced by a single governor, retried per post, paused on quota
//! exhaustion, and every score is appended to a local store so reruns over
//! the same posts make no calls.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use atf_core::labeling::LabelerResponse;
use atf_core::Post;
use serde::{Deserialize, Serialize};

use crate::scorer::{classify_status, transport_error, EndpointError};
use crate::{Error, Result};

pub const URL_ENV: &str = "ATF_LABELER_URL";
pub const KEY_ENV: &str = "ATF_LABELER_KEY";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LabelerError {
    #[error("transient: {0}")]
    Transient(String),
    /// Quota exhausted; everyone waits `retry_after` before the next request.
    #[error("quota exceeded, retry after {retry_after:?}")]
    Quota { retry_after: Duration },
    #[error("fatal: {0}")]
    Fatal(String),
}

pub trait LabelerEndpoint: Send + Sync {
    fn analyze(&self, text: &str, attributes: &[String]) -> std::result::Result<BTreeMap<String, f64>, LabelerError>;
}

impl<T: LabelerEndpoint + ?Sized> LabelerEndpoint for &T {
    fn analyze(&self, text: &str, attributes: &[String]) -> std::result::Result<BTreeMap<String, f64>, LabelerError> {
        (**self).analyze(text, attributes)
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    text: &'a str,
    attributes: &'a [String],
}

#[derive(Deserialize)]
struct WireReply {
    scores: BTreeMap<String, f64>,
}

pub struct HttpLabeler {
    agent: ureq::Agent,
    url: String,
    key: Option<String>,
}

impl HttpLabeler {
    pub fn new(url: impl Into<String>, key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(30)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpLabeler { agent, url: url.into(), key }
    }

    pub fn from_env() -> Result<Self> {
        let url = std::env::var(URL_ENV).map_err(|_| Error::Config(format!("labeler URL variable {URL_ENV} not set")))?;
        Ok(Self::new(url, std::env::var(KEY_ENV).ok()))
    }
}

impl LabelerEndpoint for HttpLabeler {
    fn analyze(&self, text: &str, attributes: &[String]) -> std::result::Result<BTreeMap<String, f64>, LabelerError> {
        let mut req = self.agent.post(&self.url);
        if let Some(key) = &self.key {
            req = req.query("key", key);
        }
        let mut resp = req.send_json(WireRequest { text, attributes }).map_err(|e| from_endpoint(transport_error(e)))?;
        let status = resp.status().as_u16();
        if status == 429 {
            let secs = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<f64>().ok())
                .unwrap_or(1.0);
            return Err(LabelerError::Quota { retry_after: Duration::from_secs_f64(secs.max(0.0)) });
        }
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(from_endpoint(classify_status(status, &body)));
        }
        let reply: WireReply = resp.body_mut().read_json().map_err(|e| LabelerError::Transient(e.to_string()))?;
        Ok(reply.scores)
    }
}

fn from_endpoint(e: EndpointError) -> LabelerError {
    match e {
        EndpointError::Transient(m) | EndpointError::Malformed(m) => LabelerError::Transient(m),
        EndpointError::Fatal(m) => LabelerError::Fatal(m),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct StoreLine {
    post_id: String,
    attribute: String,
    score: f64,
    fetched_at: u64,
}

/// Append-only JSONL store of `(post_id, attribute) -> score`.
pub struct ScoreStore {
    path: PathBuf,
    entries: Mutex<HashMap<(String, String), (f64, u64)>>,
    file: Mutex<File>,
}

impl ScoreStore {
    pub fn open(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        }
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(path).map_err(Error::io(path))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(Error::io(path))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: StoreLine = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                    path: path.to_path_buf(),
                    line: i as u64 + 1,
                    message: e.to_string(),
                })?;
                entries.insert((entry.post_id, entry.attribute), (entry.score, entry.fetched_at));
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(Error::io(path))?;
        Ok(ScoreStore { path: path.to_path_buf(), entries: Mutex::new(entries), file: Mutex::new(file) })
    }

    /// The stored response if every attribute is present.
    pub fn get(&self, post_id: &str, attributes: &[String]) -> Option<LabelerResponse> {
        let entries = self.entries.lock().unwrap();
        let mut scores = BTreeMap::new();
        let mut fetched_at = 0;
        for attr in attributes {
            let (score, ts) = entries.get(&(post_id.to_string(), attr.clone()))?;
            scores.insert(attr.clone(), *score);
            fetched_at = fetched_at.max(*ts);
        }
        Some(LabelerResponse { post_id: post_id.to_string(), scores, fetched_at })
    }

    pub fn put(&self, response: &LabelerResponse) -> Result<()> {
        let mut buf = String::new();
        for (attribute, score) in &response.scores {
            let line = StoreLine {
                post_id: response.post_id.clone(),
                attribute: attribute.clone(),
                score: *score,
                fetched_at: response.fetched_at,
            };
            buf.push_str(&serde_json::to_string(&line).expect("store line serializes"));
            buf.push('\n');
        }
        let mut file = self.file.lock().unwrap();
        file.write_all(buf.as_bytes()).map_err(Error::io(&self.path))?;
        file.flush().map_err(Error::io(&self.path))?;
        let mut entries = self.entries.lock().unwrap();
        for (attribute, score) in &response.scores {
            entries.insert((response.post_id.clone(), attribute.clone()), (*score, response.fetched_at));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Hands out request start times at most `rate` per second.
struct Governor {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl Governor {
    fn new(rate: f64) -> Self {
        Governor { interval: Duration::from_secs_f64(1.0 / rate), next: Mutex::new(None) }
    }

    fn wait_turn(&self) {
        let slot = {
            let mut next = self.next.lock().unwrap();
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }

    fn pause(&self, d: Duration) {
        let mut next = self.next.lock().unwrap();
        let resume = Instant::now() + d;
        *next = Some(next.map_or(resume, |n| n.max(resume)));
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FetchOptions {
    /// Requests per second, > 0.
    pub rate_limit: f64,
    pub workers: usize,
    /// Retries after the first attempt, per post.
    pub max_retries: u32,
    /// Quota pauses tolerated per post before giving up on it.
    pub max_quota_pauses: u32,
}

impl Default for FetchOptions {
    fn default() -> Self {
        FetchOptions { rate_limit: 1.0, workers: 4, max_retries: 3, max_quota_pauses: 100 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchFailure {
    pub post_id: String,
    pub attempts: u32,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct FetchReport {
    /// One per post that has scores, in input order.
    pub responses: Vec<LabelerResponse>,
    pub failures: Vec<FetchFailure>,
    pub cached: usize,
    pub requests: usize,
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Fetches attribute scores for every post not already in `store`.
pub fn fetch_scores(
    posts: &[Post],
    attributes: &[String],
    endpoint: &dyn LabelerEndpoint,
    store: &ScoreStore,
    options: &FetchOptions,
) -> Result<FetchReport> {
    if !(options.rate_limit > 0.0 && options.rate_limit.is_finite()) {
        return Err(Error::Labeler(format!("rate limit must be positive, got {}", options.rate_limit)));
    }
    if attributes.is_empty() {
        return Err(Error::Labeler("no attributes requested".into()));
    }
    let governor = Governor::new(options.rate_limit);
    let todo: Vec<usize> = (0..posts.len()).filter(|&i| store.get(&posts[i].id, attributes).is_none()).collect();
    let cached = posts.len() - todo.len();
    let next = AtomicUsize::new(0);
    let requests = AtomicUsize::new(0);
    let failures = Mutex::new(Vec::new());
    let fatal: Mutex<Option<String>> = Mutex::new(None);

    std::thread::scope(|s| {
        for _ in 0..options.workers.max(1).min(todo.len()) {
            s.spawn(|| loop {
                if fatal.lock().unwrap().is_some() {
                    break;
                }
                let Some(&i) = todo.get(next.fetch_add(1, Ordering::Relaxed)) else { break };
                let post = &posts[i];
                let (mut attempts, mut pauses) = (0u32, 0u32);
                loop {
                    governor.wait_turn();
                    requests.fetch_add(1, Ordering::Relaxed);
                    attempts += 1;
                    match endpoint.analyze(&post.text, attributes) {
                        Ok(scores) => {
                            let response = LabelerResponse { post_id: post.id.clone(), scores, fetched_at: unix_now() };
                            let stored = response
                                .validate()
                                .map_err(|e| e.to_string())
                                .and_then(|()| match attributes.iter().find(|a| !response.scores.contains_key(*a)) {
                                    Some(a) => Err(format!("reply lacks attribute {a:?}")),
                                    None => store.put(&response).map_err(|e| e.to_string()),
                                });
                            if let Err(error) = stored {
                                failures.lock().unwrap().push(FetchFailure { post_id: post.id.clone(), attempts, error });
                            }
                            break;
                        }
                        Err(LabelerError::Quota { retry_after }) if pauses < options.max_quota_pauses => {
                            pauses += 1;
                            attempts -= 1;
                            log::info!("labeler quota exceeded; pausing {retry_after:?}");
                            governor.pause(retry_after);
                        }
                        Err(LabelerError::Fatal(msg)) => {
                            *fatal.lock().unwrap() = Some(msg);
                            break;
                        }
                        Err(e) if attempts > options.max_retries => {
                            failures.lock().unwrap().push(FetchFailure {
                                post_id: post.id.clone(),
                                attempts,
                                error: e.to_string(),
                            });
                            break;
                        }
                        Err(e) => log::debug!("labeler attempt {attempts} for {} failed: {e}", post.id),
                    }
                }
            });
        }
    });
    if let Some(msg) = fatal.into_inner().unwrap() {
        return Err(Error::Labeler(msg));
    }
    let mut failures = failures.into_inner().unwrap();
    failures.sort_by_key(|f| posts.iter().position(|p| p.id == f.post_id));
    let responses = posts.iter().filter_map(|p| store.get(&p.id, attributes)).collect();
    Ok(FetchReport { responses, failures, cached, requests: requests.into_inner() })
}
