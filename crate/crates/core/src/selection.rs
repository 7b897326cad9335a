//! Model-selection criteria over run records.
//!
//! All three criteria are pure functions of the records for one
//! (algorithm, dataset, test domain, repetition) group. Scoring never reads
//! the test domain's evaluation split; the oracle reads only the final
//! checkpoint. Failed records are excluded up front.

use std::str::FromStr;

use thiserror::Error;

use crate::records::RunRecord;

/// Test-domain validation queries allowed per algorithm.
pub const ORACLE_QUERY_LIMIT: usize = 20;

#[derive(Debug, Error)]
pub enum SelectionError {
    #[error("no usable records to select from")]
    Empty,
    #[error("trial {trial} is missing leave-one-out sub-runs")]
    MissingSubRuns { trial: usize },
    #[error("oracle allows {limit} queries but {got} trials were supplied")]
    QueryLimit { limit: usize, got: usize },
    #[error("{0}")]
    Structural(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Criterion {
    TrainingDomain,
    LeaveOneOut,
    Oracle,
}

impl Criterion {
    pub const NAMES: &'static [&'static str] = &["training-domain", "leave-one-out", "oracle"];

    pub fn name(&self) -> &'static str {
        match self {
            Criterion::TrainingDomain => "training-domain",
            Criterion::LeaveOneOut => "leave-one-out",
            Criterion::Oracle => "oracle",
        }
    }
}

impl FromStr for Criterion {
    type Err = SelectionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "training-domain" => Ok(Criterion::TrainingDomain),
            "leave-one-out" => Ok(Criterion::LeaveOneOut),
            "oracle" => Ok(Criterion::Oracle),
            other => Err(SelectionError::Structural(format!(
                "unknown criterion '{other}'; valid: {}",
                Criterion::NAMES.join(", ")
            ))),
        }
    }
}

/// The chosen (trial, checkpoint) and the accuracy it reports.
#[derive(Clone, Debug, PartialEq)]
pub struct Choice {
    pub trial: usize,
    pub step: u64,
    /// The criterion's selection score for the chosen candidate.
    pub score: f64,
    /// Test-domain evaluation accuracy at the chosen checkpoint.
    pub test_accuracy: f64,
}

fn usable(records: &[RunRecord]) -> Vec<&RunRecord> {
    let mut v: Vec<&RunRecord> = records.iter().filter(|r| r.is_ok() && !r.checkpoints.is_empty()).collect();
    v.sort_by_key(|r| r.trial);
    v
}

/// Ties break toward the lower trial index, then the earlier step.
fn better(candidate: (f64, usize, u64), best: (f64, usize, u64)) -> bool {
    let (cs, ct, cstep) = candidate;
    let (bs, bt, bstep) = best;
    if cs != bs {
        return cs > bs;
    }
    (ct, cstep) < (bt, bstep)
}

/// Maximizes the example-weighted mean of the training-domain validation
/// accuracies over every (trial, checkpoint).
pub fn select_training_domain(
    records: &[RunRecord],
    domain_names: &[String],
    test_env: usize,
) -> Result<Choice, SelectionError> {
    let test_name = domain_names
        .get(test_env)
        .ok_or_else(|| SelectionError::Structural(format!("test env {test_env} out of range")))?;
    let mut best: Option<(f64, usize, u64, f64)> = None;
    for rec in usable(records) {
        for cp in &rec.checkpoints {
            let mut weighted = 0.0;
            let mut weight = 0.0;
            for (name, acc) in &cp.accs {
                if name == test_name {
                    continue;
                }
                let n = rec
                    .env_sizes
                    .get(name)
                    .ok_or_else(|| SelectionError::Structural(format!("no sizes for domain '{name}'")))?
                    .val as f64;
                weighted += acc.val * n;
                weight += n;
            }
            if weight == 0.0 {
                return Err(SelectionError::Structural("no training-domain validation splits".into()));
            }
            let score = weighted / weight;
            let test_acc = cp
                .accs
                .get(test_name)
                .ok_or_else(|| SelectionError::Structural(format!("no accuracies for '{test_name}'")))?
                .train;
            let cand = (score, rec.trial, cp.step);
            if best.is_none_or(|(s, t, p, _)| better(cand, (s, t, p))) {
                best = Some((score, rec.trial, cp.step, test_acc));
            }
        }
    }
    let (score, trial, step, test_accuracy) = best.ok_or(SelectionError::Empty)?;
    Ok(Choice { trial, step, score, test_accuracy })
}

/// Scores each trial by the mean final-checkpoint accuracy of its sub-runs
/// on their held-out domains, then reports the full-training record's final
/// test-domain accuracy.
pub fn select_leave_one_out(
    records: &[RunRecord],
    domain_names: &[String],
    test_env: usize,
) -> Result<Choice, SelectionError> {
    let test_name = domain_names
        .get(test_env)
        .ok_or_else(|| SelectionError::Structural(format!("test env {test_env} out of range")))?;
    let mut best: Option<(f64, usize, u64, f64)> = None;
    let candidates = usable(records);
    if candidates.is_empty() {
        return Err(SelectionError::Empty);
    }
    for rec in candidates {
        if rec.sub_runs.is_empty() {
            return Err(SelectionError::MissingSubRuns { trial: rec.trial });
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for sub in &rec.sub_runs {
            let held_name = domain_names.get(sub.test_env).ok_or_else(|| {
                SelectionError::Structural(format!("sub-run env {} out of range", sub.test_env))
            })?;
            let cp = sub.final_checkpoint().ok_or(SelectionError::MissingSubRuns { trial: rec.trial })?;
            let acc = cp
                .accs
                .get(held_name)
                .ok_or_else(|| SelectionError::Structural(format!("sub-run lacks '{held_name}' accuracy")))?;
            total += acc.val;
            count += 1;
        }
        let score = total / count as f64;
        let cp = rec.final_checkpoint().expect("usable records have checkpoints");
        let test_acc = cp
            .accs
            .get(test_name)
            .ok_or_else(|| SelectionError::Structural(format!("no accuracies for '{test_name}'")))?
            .train;
        let cand = (score, rec.trial, cp.step);
        if best.is_none_or(|(s, t, p, _)| better(cand, (s, t, p))) {
            best = Some((score, rec.trial, cp.step, test_acc));
        }
    }
    let (score, trial, step, test_accuracy) = best.ok_or(SelectionError::Empty)?;
    Ok(Choice { trial, step, score, test_accuracy })
}

/// Maximizes the final-checkpoint test-domain validation accuracy over at
/// most `query_limit` trials; intermediate checkpoints are never read.
pub fn select_oracle(
    records: &[RunRecord],
    domain_names: &[String],
    test_env: usize,
    query_limit: usize,
) -> Result<Choice, SelectionError> {
    if records.len() > query_limit {
        return Err(SelectionError::QueryLimit { limit: query_limit, got: records.len() });
    }
    let test_name = domain_names
        .get(test_env)
        .ok_or_else(|| SelectionError::Structural(format!("test env {test_env} out of range")))?;
    let mut best: Option<(f64, usize, u64, f64)> = None;
    for rec in usable(records) {
        let cp = rec.final_checkpoint().expect("usable records have checkpoints");
        let acc = cp
            .accs
            .get(test_name)
            .ok_or_else(|| SelectionError::Structural(format!("no accuracies for '{test_name}'")))?;
        let cand = (acc.val, rec.trial, cp.step);
        if best.is_none_or(|(s, t, p, _)| better(cand, (s, t, p))) {
            best = Some((acc.val, rec.trial, cp.step, acc.train));
        }
    }
    let (score, trial, step, test_accuracy) = best.ok_or(SelectionError::Empty)?;
    Ok(Choice { trial, step, score, test_accuracy })
}

/// Criterion dispatch with the standard oracle query limit.
pub fn select(
    criterion: Criterion,
    records: &[RunRecord],
    domain_names: &[String],
    test_env: usize,
) -> Result<Choice, SelectionError> {
    match criterion {
        Criterion::TrainingDomain => select_training_domain(records, domain_names, test_env),
        Criterion::LeaveOneOut => select_leave_one_out(records, domain_names, test_env),
        Criterion::Oracle => select_oracle(records, domain_names, test_env, ORACLE_QUERY_LIMIT),
    }
}
