//! TF-IDF over unigram tokens with smoothed idf and L2-normalized rows.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::text::tokenize;
use crate::{Error, Post, Result};

/// A fitted TF-IDF basis. Term indices follow lexicographic term order.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    index: BTreeMap<String, u32>,
    terms: Vec<String>,
    document_frequency: Vec<u32>,
    idf: Vec<f64>,
    n_docs: usize,
}

impl Vocabulary {
    /// Fits the vocabulary and `idf(t) = ln((1 + n) / (1 + df(t))) + 1`.
    pub fn fit<'a, I>(corpus: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut df: BTreeMap<String, u32> = BTreeMap::new();
        let mut n_docs = 0usize;
        for doc in corpus {
            n_docs += 1;
            let mut tokens = tokenize(doc);
            tokens.sort_unstable();
            tokens.dedup();
            for tok in tokens {
                *df.entry(tok).or_insert(0) += 1;
            }
        }
        if n_docs == 0 {
            return Err(Error::EmptyCorpus);
        }
        if df.is_empty() {
            return Err(Error::NoTokens);
        }
        let n = n_docs as f64;
        let mut index = BTreeMap::new();
        let mut terms = Vec::with_capacity(df.len());
        let mut document_frequency = Vec::with_capacity(df.len());
        let mut idf = Vec::with_capacity(df.len());
        for (i, (term, count)) in df.into_iter().enumerate() {
            index.insert(term.clone(), i as u32);
            terms.push(term);
            document_frequency.push(count);
            idf.push(libm::log((1.0 + n) / (1.0 + count as f64)) + 1.0);
        }
        Ok(Vocabulary { index, terms, document_frequency, idf, n_docs })
    }

    pub fn fit_posts(corpus: &[Post]) -> Result<Self> {
        Self::fit(corpus.iter().map(|p| p.text.as_str()))
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn n_docs(&self) -> usize {
        self.n_docs
    }

    pub fn index_of(&self, term: &str) -> Option<u32> {
        self.index.get(term).copied()
    }

    pub fn document_frequency(&self, term: &str) -> Option<u32> {
        self.index_of(term).map(|i| self.document_frequency[i as usize])
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.index_of(term).map(|i| self.idf[i as usize])
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    /// TF-IDF weights of `text`, L2-normalized. Out-of-vocabulary tokens are
    /// dropped; an all-OOV text yields the zero vector.
    pub fn transform(&self, text: &str) -> SparseVector {
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for tok in tokenize(text) {
            if let Some(i) = self.index_of(&tok) {
                *tf.entry(i).or_insert(0) += 1;
            }
        }
        let raw: Vec<(u32, f64)> = tf.into_iter().map(|(i, c)| (i, c as f64 * self.idf[i as usize])).collect();
        SparseVector::from_sorted(raw).normalized()
    }

    pub fn transform_post(&self, post: &Post) -> SparseVector {
        self.transform(&post.text)
    }

    /// `term \t index \t idf` per line, in index order.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("term\tindex\tidf\n");
        for (i, term) in self.terms.iter().enumerate() {
            let _ = writeln!(out, "{term}\t{i}\t{}", self.idf[i]);
        }
        out
    }
}

/// Sparse vector with strictly increasing indices and a cached L2 norm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVector {
    entries: Vec<(u32, f64)>,
    norm: f64,
}

impl SparseVector {
    /// Builds from `(index, weight)` pairs in any order; duplicate indices
    /// are summed and exact zeros dropped.
    ///
    /// # Panics
    /// If a weight is not finite.
    pub fn new(mut entries: Vec<(u32, f64)>) -> Self {
        entries.sort_by_key(|e| e.0);
        let mut merged: Vec<(u32, f64)> = Vec::with_capacity(entries.len());
        for (i, w) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += w,
                _ => merged.push((i, w)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        Self::from_sorted(merged)
    }

    fn from_sorted(entries: Vec<(u32, f64)>) -> Self {
        assert!(entries.iter().all(|e| e.1.is_finite()), "sparse weights must be finite");
        debug_assert!(entries.windows(2).all(|w| w[0].0 < w[1].0));
        let norm = l2(&entries);
        SparseVector { entries, norm }
    }

    fn normalized(self) -> Self {
        if self.norm == 0.0 {
            return self;
        }
        let scale = self.norm;
        let entries: Vec<(u32, f64)> = self.entries.into_iter().map(|(i, w)| (i, w / scale)).collect();
        let norm = l2(&entries);
        SparseVector { entries, norm }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn is_zero(&self) -> bool {
        self.norm == 0.0
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn dot(&self, other: &SparseVector) -> f64 {
        let (mut a, mut b) = (self.entries.iter().peekable(), other.entries.iter().peekable());
        let mut acc = 0.0;
        while let (Some(&&(i, x)), Some(&&(j, y))) = (a.peek(), b.peek()) {
            match i.cmp(&j) {
                core::cmp::Ordering::Less => {
                    a.next();
                }
                core::cmp::Ordering::Greater => {
                    b.next();
                }
                core::cmp::Ordering::Equal => {
                    acc += x * y;
                    a.next();
                    b.next();
                }
            }
        }
        acc
    }
}

fn l2(entries: &[(u32, f64)]) -> f64 {
    libm::sqrt(entries.iter().map(|e| e.1 * e.1).sum())
}

/// `dot(u, v) / (|u| |v|)`, or 0 when either vector is zero.
pub fn cosine(u: &SparseVector, v: &SparseVector) -> f64 {
    if u.is_zero() || v.is_zero() {
        return 0.0;
    }
    (u.dot(v) / (u.norm * v.norm)).clamp(-1.0, 1.0)
}
