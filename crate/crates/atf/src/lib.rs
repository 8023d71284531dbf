//! IO, networking, orchestration and the command line for the ATF harness:
//! dataset files, the language-model scoring client, the external labeling
//! client, oracles, the active-learning experiment loop, the annotation
//! server and report generation. Algorithms live in [`atf_core`].

pub mod cli;
pub mod config;
pub mod dataset;
pub mod embed;
mod error;
pub mod labeler;
pub mod oracle;
pub mod report;
pub mod runner;
pub mod scorer;
pub mod server;

pub use atf_core as core;
pub use error::{Error, Result};
