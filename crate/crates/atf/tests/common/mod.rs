#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use atf::core::corpus::{split, DatasetBundle};
use atf::core::definitions::default_dimension;
use atf::core::{Label, Post};
use atf::runner::ExperimentData;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Word-bag generator: each post carries `signal` words from its class's
/// marker set and `filler` words from the domain's background vocabulary.
#[derive(Debug, Clone)]
pub struct Domain {
    pub dataset: &'static str,
    pub dimension: &'static str,
    /// Prefix for background words, distinct per domain.
    pub filler_prefix: &'static str,
    pub filler_vocab: usize,
    pub filler: usize,
    /// Class marker sets are shared across domains: `pos{i}` and `neg{i}`.
    pub marker_vocab: usize,
    pub signal: usize,
    pub positive_rate: f64,
}

impl Domain {
    pub fn target() -> Self {
        Domain {
            dataset: "metoo",
            dimension: "sexually_explicit",
            filler_prefix: "tw",
            filler_vocab: 400,
            filler: 6,
            marker_vocab: 150,
            signal: 2,
            positive_rate: 0.5,
        }
    }

    pub fn source() -> Self {
        Domain { dataset: "sbic", dimension: "lewd", filler_prefix: "sw", ..Domain::target() }
    }

    pub fn text(&self, label: Label, rng: &mut ChaCha8Rng) -> String {
        let marker = if label.is_positive() { "pos" } else { "neg" };
        let mut words: Vec<String> =
            (0..self.signal).map(|_| format!("{marker}{}", rng.gen_range(0..self.marker_vocab))).collect();
        for _ in 0..self.filler {
            words.push(format!("{}{}", self.filler_prefix, rng.gen_range(0..self.filler_vocab)));
        }
        words.shuffle(rng);
        words.join(" ")
    }

    pub fn bundle(&self, n: usize, seed: u64) -> DatasetBundle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_pos = (self.positive_rate * n as f64).round() as usize;
        let mut posts = Vec::with_capacity(n);
        let mut labels = BTreeMap::new();
        for i in 0..n {
            let label = Label::from_bool(i < n_pos);
            let id = format!("{}-{i:05}", self.dataset);
            posts.push(Post::new(id.clone(), &self.text(label, &mut rng), self.dataset).unwrap());
            labels.insert((id, self.dimension.to_string()), label);
        }
        posts.shuffle(&mut rng);
        let dim = default_dimension(self.dimension).unwrap();
        DatasetBundle::new(self.dataset, posts, labels, vec![dim]).unwrap()
    }
}

/// Target pool and test split from one synthetic target corpus, plus an
/// optional source corpus.
pub fn experiment_data(target: &Domain, n_target: usize, source: Option<(&Domain, usize)>, seed: u64) -> ExperimentData {
    let full = target.bundle(n_target, seed);
    let (pool, test) = split(&full, 0.2, seed).unwrap();
    ExperimentData {
        source: source.map(|(d, n)| Arc::new(d.bundle(n, seed.wrapping_add(1000)))),
        pool: Arc::new(pool),
        test: Arc::new(test),
    }
}

/// Serves `app` on an ephemeral local port from a background thread and
/// returns its base URL. The server lives until the test process exits.
pub fn serve(app: axum::Router) -> String {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    format!("http://{addr}")
}
