//! Client side of the language-model scoring protocol.
//!
//! ```text
//! POST {url}
//! {"prompt": "...Answer:", "continuations": [" Yes", " No"]}
//! -> {"logprobs": [-0.51, -1.20], "model": "lm-1.3b"}
//! ```
//!
//! Transient failures are retried with exponential backoff; a reply missing a
//! token's log-probability marks that item invalid; auth and configuration
//! errors abort the whole batch.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use atf_core::prompter::{parse_rendered, PromptSpec};
use atf_core::scoring::{
    lexicon_logit, logistic_logprobs, InContextMock, ScoreResult, MOCK_IN_CONTEXT_MODEL, MOCK_LEXICON_MODEL,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const URL_ENV: &str = "ATF_SCORER_URL";
pub const TOKEN_ENV: &str = "ATF_SCORER_TOKEN";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointReply {
    /// Natural-log probabilities, one per requested continuation, in order.
    /// `None` where the endpoint did not report one.
    pub logprobs: Vec<Option<f64>>,
    pub model: String,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EndpointError {
    /// Worth retrying: network failure, timeout, 429 or 5xx.
    #[error("transient: {0}")]
    Transient(String),
    /// Auth or configuration problem; retrying cannot help.
    #[error("fatal: {0}")]
    Fatal(String),
    /// The reply arrived but could not be used.
    #[error("malformed reply: {0}")]
    Malformed(String),
}

pub trait ScorerEndpoint: Send + Sync {
    fn logprobs(&self, prompt: &str, continuations: &[String]) -> std::result::Result<EndpointReply, EndpointError>;

    /// Stable identifier recorded in run manifests and cache keys.
    fn id(&self) -> String;
}

impl<T: ScorerEndpoint + ?Sized> ScorerEndpoint for &T {
    fn logprobs(&self, prompt: &str, continuations: &[String]) -> std::result::Result<EndpointReply, EndpointError> {
        (**self).logprobs(prompt, continuations)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

impl<T: ScorerEndpoint + ?Sized> ScorerEndpoint for Box<T> {
    fn logprobs(&self, prompt: &str, continuations: &[String]) -> std::result::Result<EndpointReply, EndpointError> {
        (**self).logprobs(prompt, continuations)
    }

    fn id(&self) -> String {
        (**self).id()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 5, initial_backoff: Duration::from_millis(200), max_backoff: Duration::from_secs(10) }
    }
}

impl RetryPolicy {
    /// Same attempt count, no waiting. For in-process endpoints and tests.
    pub fn immediate() -> Self {
        RetryPolicy { initial_backoff: Duration::ZERO, max_backoff: Duration::ZERO, ..Self::default() }
    }

    /// Wait before attempt `attempt + 1` (attempts are 1-based).
    pub fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX);
        self.initial_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

/// Continuation strings for a prompt: the dimension's answer tokens with a
/// leading space, since the prompt ends flush at `Answer:`.
pub fn continuations(spec: &PromptSpec) -> [String; 2] {
    let dim = &spec.query_dimension;
    [format!(" {}", dim.positive_token), format!(" {}", dim.negative_token)]
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ItemError {
    #[error("gave up after {attempts} attempts: {last}")]
    Exhausted { attempts: u32, last: String },
    #[error("invalid reply: {0}")]
    Invalid(String),
    #[error("fatal endpoint error: {0}")]
    Fatal(String),
}

impl ItemError {
    pub fn is_fatal(&self) -> bool {
        matches!(self, ItemError::Fatal(_))
    }
}

/// Scores one prompt. Continuations are `" " + token` for the query
/// dimension's answer tokens.
pub fn score(
    spec: &PromptSpec,
    endpoint: &dyn ScorerEndpoint,
    retry: &RetryPolicy,
) -> std::result::Result<ScoreResult, ItemError> {
    let conts = continuations(spec);
    let mut last = String::new();
    for attempt in 1..=retry.max_attempts.max(1) {
        match endpoint.logprobs(&spec.rendered, &conts) {
            Ok(reply) => return to_score(&spec.query_id, reply),
            Err(EndpointError::Transient(msg)) => {
                last = msg;
                if attempt < retry.max_attempts {
                    std::thread::sleep(retry.backoff(attempt));
                }
            }
            Err(EndpointError::Malformed(msg)) => return Err(ItemError::Invalid(msg)),
            Err(EndpointError::Fatal(msg)) => return Err(ItemError::Fatal(msg)),
        }
    }
    Err(ItemError::Exhausted { attempts: retry.max_attempts.max(1), last })
}

fn to_score(query_id: &str, reply: EndpointReply) -> std::result::Result<ScoreResult, ItemError> {
    match reply.logprobs.as_slice() {
        [Some(yes), Some(no)] => ScoreResult::from_logprobs(query_id, *yes, *no, reply.model, reply.latency_ms)
            .map_err(|e| ItemError::Invalid(e.to_string())),
        [_, _] => Err(ItemError::Invalid("missing token log-probability".into())),
        other => Err(ItemError::Invalid(format!("expected 2 log-probabilities, got {}", other.len()))),
    }
}

pub type BatchItem = std::result::Result<ScoreResult, ItemError>;

/// Scores prompts with at most `max_in_flight` requests outstanding. Results
/// come back in input order. A fatal endpoint error stops the batch and is
/// returned as `Err`; every other failure stays local to its item.
pub fn score_batch(
    prompts: &[PromptSpec],
    endpoint: &dyn ScorerEndpoint,
    max_in_flight: usize,
    retry: &RetryPolicy,
) -> Result<Vec<BatchItem>> {
    if max_in_flight == 0 {
        return Err(Error::Scorer("max_in_flight must be >= 1".into()));
    }
    let next = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let slots: Vec<Mutex<Option<BatchItem>>> = prompts.iter().map(|_| Mutex::new(None)).collect();
    let workers = max_in_flight.min(prompts.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                if abort.load(Ordering::Relaxed) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(spec) = prompts.get(i) else { break };
                let item = score(spec, endpoint, retry);
                if item.as_ref().is_err_and(ItemError::is_fatal) {
                    abort.store(true, Ordering::Relaxed);
                }
                *slots[i].lock().unwrap() = Some(item);
            });
        }
    });
    let items: Vec<Option<BatchItem>> = slots.into_iter().map(|m| m.into_inner().unwrap()).collect();
    if let Some(Some(Err(fatal))) = items.iter().find(|i| matches!(i, Some(Err(e)) if e.is_fatal())) {
        return Err(Error::Scorer(fatal.to_string()));
    }
    Ok(items.into_iter().map(|i| i.expect("every slot filled unless aborted")).collect())
}

#[derive(Serialize)]
struct WireRequest<'a> {
    prompt: &'a str,
    continuations: &'a [String],
}

#[derive(Deserialize)]
struct WireReply {
    logprobs: Vec<Option<f64>>,
    #[serde(default)]
    model: Option<String>,
}

/// Blocking HTTP implementation of the protocol.
pub struct HttpScorer {
    agent: ureq::Agent,
    url: String,
    token: Option<String>,
}

impl HttpScorer {
    pub fn new(url: impl Into<String>, token: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpScorer { agent, url: url.into(), token }
    }

    /// URL from `ATF_SCORER_URL` (or `url_env`), bearer token from
    /// `ATF_SCORER_TOKEN` (or `token_env`) if set.
    pub fn from_env(url_env: Option<&str>, token_env: Option<&str>) -> Result<Self> {
        let url_var = url_env.unwrap_or(URL_ENV);
        let url = std::env::var(url_var).map_err(|_| Error::Config(format!("scorer URL variable {url_var} not set")))?;
        let token = std::env::var(token_env.unwrap_or(TOKEN_ENV)).ok();
        Ok(Self::new(url, token, Duration::from_secs(60)))
    }
}

pub(crate) fn classify_status(status: u16, body: &str) -> EndpointError {
    let msg = format!("HTTP {status}: {}", body.chars().take(200).collect::<String>());
    match status {
        408 | 429 | 500..=599 => EndpointError::Transient(msg),
        _ => EndpointError::Fatal(msg),
    }
}

pub(crate) fn transport_error(e: ureq::Error) -> EndpointError {
    match e {
        ureq::Error::BadUri(_) | ureq::Error::InvalidProxyUrl => EndpointError::Fatal(e.to_string()),
        other => EndpointError::Transient(other.to_string()),
    }
}

impl ScorerEndpoint for HttpScorer {
    fn logprobs(&self, prompt: &str, continuations: &[String]) -> std::result::Result<EndpointReply, EndpointError> {
        let started = Instant::now();
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.token {
            req = req.header("Authorization", &format!("Bearer {token}"));
        }
        let mut resp = req.send_json(WireRequest { prompt, continuations }).map_err(transport_error)?;
        let status = resp.status().as_u16();
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(classify_status(status, &body));
        }
        let reply: WireReply =
            resp.body_mut().read_json().map_err(|e| EndpointError::Malformed(e.to_string()))?;
        Ok(EndpointReply {
            logprobs: reply.logprobs,
            model: reply.model.unwrap_or_else(|| self.url.clone()),
            latency_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn id(&self) -> String {
        format!("http:{}", self.url)
    }
}

/// Deterministic stand-in: `logit = sum of lexicon weights over the query's
/// tokens`, ignoring shots. Latency is reported as 0.
#[derive(Debug, Clone, Default)]
pub struct LexiconEndpoint {
    pub lexicon: std::collections::BTreeMap<String, f64>,
}

impl ScorerEndpoint for LexiconEndpoint {
    fn logprobs(&self, prompt: &str, _: &[String]) -> std::result::Result<EndpointReply, EndpointError> {
        let parsed = parse_rendered(prompt).ok_or_else(|| EndpointError::Malformed("unparseable prompt".into()))?;
        let (yes, no) = logistic_logprobs(lexicon_logit(parsed.query_text, &self.lexicon));
        Ok(EndpointReply { logprobs: vec![Some(yes), Some(no)], model: MOCK_LEXICON_MODEL.into(), latency_ms: 0 })
    }

    fn id(&self) -> String {
        MOCK_LEXICON_MODEL.into()
    }
}

/// Deterministic stand-in that reacts to the shots in the prompt.
#[derive(Debug, Clone, Default)]
pub struct InContextEndpoint {
    pub mock: InContextMock,
}

impl ScorerEndpoint for InContextEndpoint {
    fn logprobs(&self, prompt: &str, _: &[String]) -> std::result::Result<EndpointReply, EndpointError> {
        let (yes, no) = self.mock.logprobs(prompt).ok_or_else(|| EndpointError::Malformed("unparseable prompt".into()))?;
        Ok(EndpointReply { logprobs: vec![Some(yes), Some(no)], model: MOCK_IN_CONTEXT_MODEL.into(), latency_ms: 0 })
    }

    fn id(&self) -> String {
        MOCK_IN_CONTEXT_MODEL.into()
    }
}

/// Fault injection: each call fails transiently with probability
/// `fail_rate`, decided by hashing `(seed, prompt, attempt number)` so the
/// outcome does not depend on thread scheduling.
pub struct FlakyEndpoint<E> {
    pub inner: E,
    pub fail_rate: f64,
    pub seed: u64,
    attempts: Mutex<HashMap<String, u32>>,
    pub calls: AtomicUsize,
    pub failures: AtomicUsize,
}

impl<E> FlakyEndpoint<E> {
    pub fn new(inner: E, fail_rate: f64, seed: u64) -> Self {
        FlakyEndpoint {
            inner,
            fail_rate,
            seed,
            attempts: Mutex::new(HashMap::new()),
            calls: AtomicUsize::new(0),
            failures: AtomicUsize::new(0),
        }
    }
}

fn unit_hash(parts: &[&[u8]]) -> f64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let x = u64::from_le_bytes(digest[..8].try_into().unwrap());
    (x >> 11) as f64 / (1u64 << 53) as f64
}

impl<E: ScorerEndpoint> ScorerEndpoint for FlakyEndpoint<E> {
    fn logprobs(&self, prompt: &str, continuations: &[String]) -> std::result::Result<EndpointReply, EndpointError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let attempt = {
            let mut map = self.attempts.lock().unwrap();
            let n = map.entry(prompt.to_string()).or_insert(0);
            *n += 1;
            *n
        };
        if unit_hash(&[&self.seed.to_le_bytes(), prompt.as_bytes(), &attempt.to_le_bytes()]) < self.fail_rate {
            self.failures.fetch_add(1, Ordering::Relaxed);
            return Err(EndpointError::Transient(format!("injected fault (attempt {attempt})")));
        }
        self.inner.logprobs(prompt, continuations)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    reply: EndpointReply,
}

/// Content-addressed reply cache in front of an endpoint, persisted as
/// append-only JSONL. Reads are concurrent; writes are serialized.
pub struct CachingEndpoint<E> {
    inner: E,
    entries: RwLock<HashMap<String, EndpointReply>>,
    file: Mutex<File>,
    path: PathBuf,
    pub hits: AtomicUsize,
    pub misses: AtomicUsize,
}

impl<E: ScorerEndpoint> CachingEndpoint<E> {
    /// Opens (or creates) `dir/scores.jsonl`, loading previous replies.
    pub fn open(inner: E, dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join("scores.jsonl");
        let mut entries = HashMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path).map_err(Error::io(&path))?);
            for (i, line) in reader.lines().enumerate() {
                let line = line.map_err(Error::io(&path))?;
                if line.trim().is_empty() {
                    continue;
                }
                match serde_json::from_str::<CacheLine>(&line) {
                    Ok(entry) => {
                        entries.insert(entry.key, entry.reply);
                    }
                    // a torn final line from an interrupted write is dropped
                    Err(e) => log::warn!("{}:{}: skipping unreadable cache line: {e}", path.display(), i + 1),
                }
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(Error::io(&path))?;
        Ok(CachingEndpoint {
            inner,
            entries: RwLock::new(entries),
            file: Mutex::new(file),
            path,
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        })
    }

    pub fn key(&self, prompt: &str, continuations: &[String]) -> String {
        let mut h = Sha256::new();
        for part in std::iter::once(self.inner.id().as_str()).chain(std::iter::once(prompt)).chain(continuations.iter().map(String::as_str)) {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex::encode(h.finalize())
    }

    pub fn len(&self) -> usize {
        self.entries.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl<E: ScorerEndpoint> ScorerEndpoint for CachingEndpoint<E> {
    fn logprobs(&self, prompt: &str, continuations: &[String]) -> std::result::Result<EndpointReply, EndpointError> {
        let key = self.key(prompt, continuations);
        if let Some(hit) = self.entries.read().unwrap().get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(hit.clone());
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let reply = self.inner.logprobs(prompt, continuations)?;
        if reply.logprobs.iter().all(Option::is_some) {
            let mut line = serde_json::to_string(&CacheLine { key: key.clone(), reply: reply.clone() })
                .map_err(|e| EndpointError::Malformed(e.to_string()))?;
            line.push('\n');
            let mut file = self.file.lock().unwrap();
            let mut entries = self.entries.write().unwrap();
            if let std::collections::hash_map::Entry::Vacant(slot) = entries.entry(key) {
                if let Err(e) = file.write_all(line.as_bytes()) {
                    log::warn!("{}: cache write failed: {e}", self.path.display());
                }
                slot.insert(reply.clone());
            }
        }
        Ok(reply)
    }

    fn id(&self) -> String {
        self.inner.id()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { max_attempts: 5, initial_backoff: Duration::from_millis(100), max_backoff: Duration::from_millis(500) };
        let waits: Vec<u128> = (1..=5).map(|a| p.backoff(a).as_millis()).collect();
        assert_eq!(waits, vec![100, 200, 400, 500, 500]);
        assert_eq!(p.backoff(60), Duration::from_millis(500));
    }

    #[test]
    fn status_classification() {
        assert!(matches!(classify_status(503, ""), EndpointError::Transient(_)));
        assert!(matches!(classify_status(429, ""), EndpointError::Transient(_)));
        assert!(matches!(classify_status(401, ""), EndpointError::Fatal(_)));
        assert!(matches!(classify_status(404, ""), EndpointError::Fatal(_)));
    }

    #[test]
    fn unit_hash_in_range_and_stable() {
        let a = unit_hash(&[b"x", b"y"]);
        assert!((0.0..1.0).contains(&a));
        assert_eq!(a, unit_hash(&[b"x", b"y"]));
        assert_ne!(a, unit_hash(&[b"xy"]));
    }

    #[test]
    fn reply_to_score() {
        let reply = EndpointReply { logprobs: vec![Some(0.6f64.ln()), Some(0.3f64.ln())], model: "m".into(), latency_ms: 3 };
        let s = to_score("q", reply).unwrap();
        assert!((s.score - 2.0 / 3.0).abs() < 1e-12);
        let missing = EndpointReply { logprobs: vec![Some(-1.0), None], model: "m".into(), latency_ms: 0 };
        assert!(matches!(to_score("q", missing), Err(ItemError::Invalid(_))));
        let short = EndpointReply { logprobs: vec![Some(-1.0)], model: "m".into(), latency_ms: 0 };
        assert!(matches!(to_score("q", short), Err(ItemError::Invalid(_))));
    }
}
