//! AUC, relative transfer gain, and the summaries built from them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::experiment::RunResult;
use crate::{Error, Label, Result};

/// Rank-based (Mann-Whitney) ROC AUC. Tied scores get their average rank,
/// so each positive/negative tie contributes one half.
pub fn auc(scores: &[(f64, Label)]) -> Result<f64> {
    if let Some(&(bad, _)) = scores.iter().find(|s| !s.0.is_finite()) {
        return Err(Error::NonFiniteScore(bad));
    }
    let n_pos = scores.iter().filter(|s| s.1.is_positive()).count();
    let n_neg = scores.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::SingleClass);
    }
    let mut sorted: Vec<(f64, Label)> = scores.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == sorted[i].0 {
            j += 1;
        }
        // 1-based ranks i+1..=j share their mean
        let mean_rank = (i + 1 + j) as f64 / 2.0;
        let tied_pos = sorted[i..j].iter().filter(|s| s.1.is_positive()).count();
        rank_sum_pos += mean_rank * tied_pos as f64;
        i = j;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    let u = rank_sum_pos - p * (p + 1.0) / 2.0;
    Ok((u / (p * n)).clamp(0.0, 1.0))
}

/// `100 * (transfer - baseline) / baseline`.
pub fn relative_gain(transfer_auc: f64, baseline_auc: f64) -> Result<f64> {
    if baseline_auc.is_nan() || baseline_auc <= 0.0 {
        return Err(Error::ZeroBaseline(baseline_auc));
    }
    Ok(100.0 * (transfer_auc - baseline_auc) / baseline_auc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetGain {
    pub budget: usize,
    pub repetitions: usize,
    pub mean_auc: f64,
    pub baseline_mean_auc: f64,
    /// Relative gain of the mean transfer AUC over the mean baseline AUC.
    pub gain_of_means: f64,
    /// Mean of the per-repetition relative gains.
    pub mean_of_gains: f64,
    pub per_repetition_gains: Vec<f64>,
    pub mean_shot_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainReport {
    pub target_dimension: String,
    pub source_dimension: Option<String>,
    pub budgets: Vec<BudgetGain>,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

/// Pairs every transfer run with the baseline run of the same
/// `(repetition, budget)` and aggregates per budget both ways.
pub fn summarize(results: &[RunResult], baselines: &[RunResult]) -> Result<GainReport> {
    let first = results.first().ok_or_else(|| Error::Precondition("no transfer runs to summarize".into()))?;
    let base_by_key: BTreeMap<(u32, usize), &RunResult> =
        baselines.iter().map(|r| ((r.repetition, r.budget), r)).collect();
    if base_by_key.len() != baselines.len() {
        return Err(Error::Precondition("duplicate (repetition, budget) among baselines".into()));
    }
    let mut by_budget: BTreeMap<usize, Vec<(&RunResult, &RunResult)>> = BTreeMap::new();
    for run in results {
        if run.target_dimension != first.target_dimension {
            return Err(Error::Precondition(format!(
                "mixed targets {:?} and {:?}",
                first.target_dimension, run.target_dimension
            )));
        }
        let base = base_by_key
            .get(&(run.repetition, run.budget))
            .ok_or(Error::UnmatchedRun { repetition: run.repetition, budget: run.budget })?;
        if base.target_dimension != run.target_dimension {
            return Err(Error::Precondition(format!(
                "baseline target {:?} differs from {:?}",
                base.target_dimension, run.target_dimension
            )));
        }
        by_budget.entry(run.budget).or_default().push((run, base));
    }
    if let Some(orphan) = baselines.iter().find(|b| {
        !results.iter().any(|r| r.repetition == b.repetition && r.budget == b.budget)
    }) {
        return Err(Error::UnmatchedRun { repetition: orphan.repetition, budget: orphan.budget });
    }

    let budgets = by_budget
        .into_iter()
        .map(|(budget, mut pairs)| {
            pairs.sort_by_key(|(r, _)| r.repetition);
            let per_repetition_gains =
                pairs.iter().map(|(r, b)| relative_gain(r.auc, b.auc)).collect::<Result<Vec<f64>>>()?;
            let mean_auc = mean(pairs.iter().map(|(r, _)| r.auc));
            let baseline_mean_auc = mean(pairs.iter().map(|(_, b)| b.auc));
            Ok(BudgetGain {
                budget,
                repetitions: pairs.len(),
                mean_auc,
                baseline_mean_auc,
                gain_of_means: relative_gain(mean_auc, baseline_mean_auc)?,
                mean_of_gains: mean(per_repetition_gains.iter().copied()),
                per_repetition_gains,
                mean_shot_ratio: mean(pairs.iter().map(|(r, _)| r.mean_shot_ratio)),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainReport {
        target_dimension: first.target_dimension.clone(),
        source_dimension: first.source_dimension.clone(),
        budgets,
    })
}

/// Per-budget mean AUC and shot ratio of a single arm.
pub fn mean_auc_by_budget(runs: &[RunResult]) -> Vec<(usize, usize, f64, f64)> {
    let mut by_budget: BTreeMap<usize, Vec<&RunResult>> = BTreeMap::new();
    for r in runs {
        by_budget.entry(r.budget).or_default().push(r);
    }
    by_budget
        .into_iter()
        .map(|(b, rs)| (b, rs.len(), mean(rs.iter().map(|r| r.auc)), mean(rs.iter().map(|r| r.mean_shot_ratio))))
        .collect()
}

fn budget_label(budget: usize, first: bool) -> String {
    let size = if budget >= 1000 && budget.is_multiple_of(1000) { format!("{}k", budget / 1000) } else { format!("{budget}") };
    if first {
        format!("AUC@{size}")
    } else {
        format!("@{size}")
    }
}

fn gain_arrow(gain: f64) -> String {
    let arrow = if gain < 0.0 { '\u{2193}' } else { '\u{2191}' };
    format!("{arrow}{:.0}%", libm::fabs(gain))
}

fn pad(out: &mut String, cell: &str, width: usize) {
    out.push_str(cell);
    for _ in cell.chars().count()..width {
        out.push(' ');
    }
}

/// Text table with one baseline (`None`) row per target followed by its
/// transfer rows; AUCs are printed x100 to one decimal with the mean
/// per-repetition gain as an arrow.
pub fn render_table(reports: &[GainReport]) -> String {
    let mut budgets: Vec<usize> = reports.iter().flat_map(|r| r.budgets.iter().map(|b| b.budget)).collect();
    budgets.sort_unstable();
    budgets.dedup();

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut header = Vec::from([String::from("Source"), String::from("Target")]);
    header.extend(budgets.iter().enumerate().map(|(i, &b)| budget_label(b, i == 0)));
    rows.push(header);

    let mut targets: Vec<&str> = Vec::new();
    for r in reports {
        if !targets.contains(&r.target_dimension.as_str()) {
            targets.push(&r.target_dimension);
        }
    }
    for target in targets {
        let group: Vec<&GainReport> = reports.iter().filter(|r| r.target_dimension == target).collect();
        let cell = |report: &GainReport, budget: usize, baseline: bool| {
            report.budgets.iter().find(|b| b.budget == budget).map_or(String::from("-"), |b| {
                if baseline {
                    format!("{:.1}", 100.0 * b.baseline_mean_auc)
                } else {
                    format!("{} {:.1}", gain_arrow(b.mean_of_gains), 100.0 * b.mean_auc)
                }
            })
        };
        let mut base = Vec::from([String::from("None"), String::from(target)]);
        base.extend(budgets.iter().map(|&b| cell(group[0], b, true)));
        rows.push(base);
        for report in group {
            let mut row = Vec::from([report.source_dimension.clone().unwrap_or_else(|| String::from("?")), String::new()]);
            row.extend(budgets.iter().map(|&b| cell(report, b, false)));
            rows.push(row);
        }
    }

    let n_cols = rows[0].len();
    let widths: Vec<usize> =
        (0..n_cols).map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0) + 2).collect();
    let mut out = String::new();
    for row in &rows {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            pad(&mut line, cell, widths[c]);
        }
        let _ = writeln!(out, "{}", line.trim_end());
    }
    out
}

pub const CSV_HEADER: &str =
    "source,target,budget,repetitions,baseline_mean_auc,mean_auc,gain_of_means_pct,mean_of_gains_pct,mean_shot_ratio";

/// One CSV row per `(report, budget)`, header included.
pub fn render_csv(reports: &[GainReport]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in reports {
        for b in &r.budgets {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{}",
                r.source_dimension.as_deref().unwrap_or(""),
                r.target_dimension,
                b.budget,
                b.repetitions,
                b.baseline_mean_auc,
                b.mean_auc,
                b.gain_of_means,
                b.mean_of_gains,
                b.mean_shot_ratio
            );
        }
    }
    out
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use alloc::string::ToString;
    use alloc::vec;
    use proptest::prelude::*;

    /// O(n^2) pair counting: wins count 1, ties 1/2.
    fn pair_count_auc(scores: &[(f64, Label)]) -> f64 {
        let pos: Vec<f64> = scores.iter().filter(|s| s.1.is_positive()).map(|s| s.0).collect();
        let neg: Vec<f64> = scores.iter().filter(|s| !s.1.is_positive()).map(|s| s.0).collect();
        let mut total = 0.0;
        for p in &pos {
            for n in &neg {
                total += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        total / (pos.len() * neg.len()) as f64
    }

    #[test]
    fn perfect_and_all_tied() {
        let sep = [(0.9, Label::Positive), (0.8, Label::Positive), (0.1, Label::Negative), (0.2, Label::Negative)];
        assert_eq!(auc(&sep).unwrap(), 1.0);
        let tied: Vec<_> = (0..10).map(|i| (0.3, Label::from_bool(i % 3 == 0))).collect();
        assert_eq!(auc(&tied).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert_eq!(auc(&[(0.1, Label::Positive), (0.2, Label::Positive)]), Err(Error::SingleClass));
        assert_eq!(auc(&[]), Err(Error::SingleClass));
        assert!(matches!(auc(&[(f64::NAN, Label::Positive), (0.2, Label::Negative)]), Err(Error::NonFiniteScore(_))));
    }

    #[test]
    fn gain_examples() {
        assert_eq!(relative_gain(0.55, 0.50).unwrap(), 10.000000000000009);
        assert!((relative_gain(0.55, 0.50).unwrap() - 10.0).abs() < 1e-12);
        assert_eq!(relative_gain(0.5, 0.5).unwrap(), 0.0);
        let g = relative_gain(58.2, 54.0).unwrap();
        assert!((g - 7.777_777_777_777_78).abs() < 1e-9);
        assert_eq!(relative_gain(0.5, 0.0), Err(Error::ZeroBaseline(0.0)));
    }

    pub(crate) fn run(rep: u32, budget: usize, auc: f64, ratio: f64, source: Option<&str>) -> RunResult {
        RunResult {
            config_hash: "h".into(),
            experiment: "e".into(),
            target_dimension: "sexually_explicit".into(),
            source_dimension: source.map(|s| s.to_string()),
            repetition: rep,
            seed: rep as u64,
            budget,
            auc,
            mean_shot_ratio: ratio,
            support_size: 0,
            source_size: 0,
            annotated_ids: vec![],
            invalid_count: 0,
            flags: vec![],
            queries: vec![],
        }
    }

    #[test]
    fn identical_arms_have_zero_gain() {
        let t: Vec<_> = (0..5).map(|r| run(r, 100, 0.6, 0.3, Some("lewd"))).collect();
        let b: Vec<_> = (0..5).map(|r| run(r, 100, 0.6, 1.0, None)).collect();
        let rep = summarize(&t, &b).unwrap();
        assert_eq!(rep.budgets[0].gain_of_means, 0.0);
        assert_eq!(rep.budgets[0].mean_of_gains, 0.0);
        assert!(rep.budgets[0].per_repetition_gains.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn dual_aggregation_differs_by_hand_computed_amount() {
        // rep 0: 0.6 vs 0.5 -> +20%; rep 1: 0.6 vs 0.6 -> 0%
        let t = vec![run(0, 100, 0.6, 0.0, Some("lewd")), run(1, 100, 0.6, 0.0, Some("lewd"))];
        let b = vec![run(0, 100, 0.5, 0.0, None), run(1, 100, 0.6, 0.0, None)];
        let cell = &summarize(&t, &b).unwrap().budgets[0];
        assert!((cell.mean_of_gains - 10.0).abs() < 1e-12);
        // 100 * (0.6 - 0.55) / 0.55 = 100 / 11
        assert!((cell.gain_of_means - 100.0 / 11.0).abs() < 1e-12);
        assert!((cell.mean_of_gains - cell.gain_of_means - 10.0 / 11.0).abs() < 1e-12);
    }

    #[test]
    fn shot_ratio_column_follows_runs() {
        let t: Vec<_> = [(100, 0.2), (1000, 0.5), (2000, 0.7)]
            .iter()
            .flat_map(|&(b, r)| (0..2).map(move |rep| run(rep, b, 0.6, r, Some("lewd"))))
            .collect();
        let b: Vec<_> = [100, 1000, 2000].iter().flat_map(|&bud| (0..2).map(move |rep| run(rep, bud, 0.5, 1.0, None))).collect();
        let report = summarize(&t, &b).unwrap();
        let ratios: Vec<f64> = report.budgets.iter().map(|c| c.mean_shot_ratio).collect();
        assert!(ratios.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn unmatched_runs_error() {
        let t = vec![run(0, 100, 0.6, 0.0, Some("lewd"))];
        assert_eq!(summarize(&t, &[run(1, 100, 0.5, 0.0, None)]), Err(Error::UnmatchedRun { repetition: 0, budget: 100 }));
        let b = vec![run(0, 100, 0.5, 0.0, None), run(0, 1000, 0.5, 0.0, None)];
        assert_eq!(summarize(&t, &b), Err(Error::UnmatchedRun { repetition: 0, budget: 1000 }));
    }

    #[test]
    fn table_layout() {
        let t = vec![run(0, 100, 0.582, 0.0, Some("lewd")), run(0, 1000, 0.559, 0.0, Some("lewd"))];
        let b = vec![run(0, 100, 0.54, 0.0, None), run(0, 1000, 0.495, 0.0, None)];
        let report = summarize(&t, &b).unwrap();
        let table = render_table(std::slice::from_ref(&report));
        let expected = "\
Source  Target             AUC@100   @1k
None    sexually_explicit  54.0      49.5
lewd                       \u{2191}8% 58.2  \u{2191}13% 55.9
";
        assert_eq!(table, expected);
        let csv = render_csv(&[report]);
        assert!(csv.starts_with(CSV_HEADER));
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.lines().nth(1).unwrap().starts_with("lewd,sexually_explicit,100,1,"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn rank_auc_matches_pair_counting(
            raw in proptest::collection::vec((0u8..20, any::<bool>()), 2..200)
        ) {
            let scores: Vec<(f64, Label)> = raw.iter().map(|&(s, l)| (s as f64 / 7.0, Label::from_bool(l))).collect();
            match auc(&scores) {
                Ok(a) => {
                    prop_assert!((a - pair_count_auc(&scores)).abs() <= 1e-12);
                    let flipped: Vec<_> = scores.iter().map(|&(s, l)| (s, l.flipped())).collect();
                    prop_assert!((auc(&flipped).unwrap() - (1.0 - a)).abs() <= 1e-12);
                    let squashed: Vec<_> = scores.iter().map(|&(s, l)| (libm::exp(3.0 * s) - 4.0, l)).collect();
                    prop_assert!((auc(&squashed).unwrap() - a).abs() <= 1e-12);
                }
                Err(e) => prop_assert_eq!(e, Error::SingleClass),
            }
        }

        #[test]
        fn gain_antisymmetry(a in 0.01f64..1.0, b in 0.01f64..1.0) {
            prop_assert!((relative_gain(a, b).unwrap() + 100.0 * (b - a) / b).abs() <= 1e-9);
            prop_assert_eq!(relative_gain(a, a).unwrap(), 0.0);
        }
    }
}
