//! Allocation-only core of the Active Transfer Few-shot Instructions (ATF)
//! harness.
//!
//! Everything in this crate is a pure function of its inputs: dataset
//! validation and stratified splitting, TF-IDF fitting and sparse cosine
//! similarity, class-balanced shot selection, prompt rendering, score
//! normalization, AUC and gain arithmetic, and the label/dataset diagnostics.
//! IO, networking and orchestration live in the `atf` crate.
#![cfg_attr(not(any(test, feature = "std")), no_std)]

extern crate alloc;

pub mod analysis;
pub mod corpus;
pub mod definitions;
mod error;
pub mod experiment;
pub mod labeling;
pub mod metrics;
pub mod prompter;
pub mod scoring;
pub mod selector;
pub mod text;
pub mod types;
pub mod vectorizer;

pub use error::{Error, Result};
pub use types::{Dimension, Label, LabeledExample, Post, Provenance};
