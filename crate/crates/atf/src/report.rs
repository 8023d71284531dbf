//! Reading result files back and pairing transfer runs with baselines.

use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use atf_core::experiment::RunResult;
use atf_core::metrics::{summarize, GainReport};

use crate::{Error, Result};

fn jsonl_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir).map_err(Error::io(dir))?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>().map_err(Error::io(dir))?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            jsonl_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n == "results.jsonl") {
            out.push(path);
        }
    }
    Ok(())
}

fn read_runs(path: &Path, out: &mut Vec<RunResult>) -> Result<()> {
    let reader = BufReader::new(fs::File::open(path).map_err(Error::io(path))?);
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(Error::io(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            line: i as u64 + 1,
            message: e.to_string(),
        })?);
    }
    Ok(())
}

/// Runs from a JSONL file, or from every `results.jsonl` below a directory.
pub fn load_runs(path: &Path) -> Result<Vec<RunResult>> {
    let mut runs = Vec::new();
    if path.is_dir() {
        let mut files = Vec::new();
        jsonl_files(path, &mut files)?;
        if files.is_empty() {
            return Err(Error::Config(format!("no results.jsonl under {}", path.display())));
        }
        for f in files {
            read_runs(&f, &mut runs)?;
        }
    } else {
        read_runs(path, &mut runs)?;
    }
    Ok(runs)
}

/// One report per transfer experiment, each against the baseline runs with
/// the same target dimension. Transfer experiments appear in load order.
pub fn build_reports(transfer: &[RunResult], baselines: &[RunResult]) -> Result<Vec<GainReport>> {
    let mut experiments: Vec<(&str, &str)> = Vec::new();
    for r in transfer.iter().filter(|r| r.source_dimension.is_some()) {
        let key = (r.experiment.as_str(), r.config_hash.as_str());
        if !experiments.contains(&key) {
            experiments.push(key);
        }
    }
    if experiments.is_empty() {
        return Err(Error::Config("no transfer runs (runs with a source dimension) to report".into()));
    }
    let mut reports = Vec::with_capacity(experiments.len());
    for (name, hash) in experiments {
        let runs: Vec<RunResult> =
            transfer.iter().filter(|r| r.experiment == name && r.config_hash == hash).cloned().collect();
        let target = &runs[0].target_dimension;
        let base: Vec<RunResult> = baselines
            .iter()
            .filter(|b| b.source_dimension.is_none() && &b.target_dimension == target)
            .cloned()
            .collect();
        let hashes: BTreeSet<&str> = base.iter().map(|b| b.config_hash.as_str()).collect();
        if hashes.len() > 1 {
            return Err(Error::Config(format!("{} baseline experiments target {target:?}; pass one", hashes.len())));
        }
        reports.push(summarize(&runs, &base)?);
    }
    Ok(reports)
}
