//! Sentence-embedding client for the mean-similarity diagnostic.
//!
//! ```text
//! POST {url}  {"texts": ["...", "..."]}  ->  {"vectors": [[...], [...]]}
//! ```

use std::time::Duration;

use atf_core::analysis::{mean_pairwise_cosine, subsample_indices};
use atf_core::Post;
use serde::{Deserialize, Serialize};

use crate::scorer::{classify_status, transport_error};
use crate::{Error, Result};

pub const URL_ENV: &str = "ATF_EMBED_URL";
pub const MAX_PER_SIDE: usize = 500;

pub trait Embedder: Send + Sync {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Serialize)]
struct WireRequest<'a> {
    texts: &'a [&'a str],
}

#[derive(Deserialize)]
struct WireReply {
    vectors: Vec<Vec<f64>>,
}

pub struct HttpEmbedder {
    agent: ureq::Agent,
    url: String,
    batch_size: usize,
}

impl HttpEmbedder {
    pub fn new(url: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(120)))
            .http_status_as_error(false)
            .build()
            .into();
        HttpEmbedder { agent, url: url.into(), batch_size: 64 }
    }

    pub fn from_env() -> Result<Self> {
        std::env::var(URL_ENV).map(Self::new).map_err(|_| Error::Config(format!("embedding URL variable {URL_ENV} not set")))
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let mut resp = self
                .agent
                .post(&self.url)
                .send_json(WireRequest { texts: chunk })
                .map_err(|e| Error::Embed(transport_error(e).to_string()))?;
            let status = resp.status().as_u16();
            if status != 200 {
                let body = resp.body_mut().read_to_string().unwrap_or_default();
                return Err(Error::Embed(classify_status(status, &body).to_string()));
            }
            let reply: WireReply = resp.body_mut().read_json().map_err(|e| Error::Embed(e.to_string()))?;
            if reply.vectors.len() != chunk.len() {
                return Err(Error::Embed(format!("asked for {} vectors, got {}", chunk.len(), reply.vectors.len())));
            }
            out.extend(reply.vectors);
        }
        Ok(out)
    }
}

fn pick(posts: &[Post], seed: u64) -> Vec<&str> {
    subsample_indices(posts.len(), MAX_PER_SIDE, seed).into_iter().map(|i| posts[i].text.as_str()).collect()
}

/// Mean cosine between embeddings of the two sets, each subsampled to at
/// most 500 posts with `seed` (side B uses `seed + 1`).
pub fn mean_embedding_similarity(a: &[Post], b: &[Post], embedder: &dyn Embedder, seed: u64) -> Result<f64> {
    let ea = embedder.embed(&pick(a, seed))?;
    let eb = embedder.embed(&pick(b, seed.wrapping_add(1)))?;
    Ok(mean_pairwise_cosine(&ea, &eb)?)
}
