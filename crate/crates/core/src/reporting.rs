//! Aggregation of selected accuracies into mean +/- standard error cells and
//! table rendering in markdown or LaTeX.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::algorithms::ALGORITHM_NAMES;
use crate::records::RunRecord;
use crate::selection::{select, Criterion, SelectionError};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("missing cells: {}", cells.join("; "))]
    MissingCells { cells: Vec<String> },
    #[error("ragged grid: {0}")]
    Ragged(String),
    #[error("selection failed for {cell}: {source}")]
    Selection {
        cell: String,
        #[source]
        source: SelectionError,
    },
    #[error("{0}")]
    Contract(String),
}

/// Mean +/- standard error of selected accuracies across repetitions for one
/// (algorithm, dataset, column, criterion); the column is a test domain name
/// or "Avg".
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateCell {
    pub algorithm: String,
    pub dataset: String,
    pub column: String,
    pub criterion: String,
    pub mean: f64,
    pub stderr: f64,
    pub n_reps: usize,
}

/// Sample standard deviation (n-1) over the repetitions divided by sqrt(n);
/// zero for a single repetition.
fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Applies `criterion` per repetition and aggregates across repetitions.
/// Emits one cell per test domain plus an "Avg" cell per (dataset,
/// algorithm) computed from per-repetition domain averages. Repetitions must
/// cover the full grid; anything absent is reported, never dropped.
pub fn aggregate(
    records: &[RunRecord],
    criterion: Criterion,
    domain_names: &dyn Fn(&str) -> Option<Vec<String>>,
) -> Result<Vec<AggregateCell>, ReportError> {
    // Group by (dataset, algorithm, test_env, repetition).
    type Grid = (BTreeSet<String>, BTreeSet<usize>, BTreeSet<usize>);
    let mut groups: BTreeMap<(String, String, usize, usize), Vec<&RunRecord>> = BTreeMap::new();
    let mut datasets: BTreeMap<String, Grid> = BTreeMap::new();
    for rec in records {
        groups
            .entry((rec.dataset.clone(), rec.algorithm.clone(), rec.test_env, rec.repetition))
            .or_default()
            .push(rec);
        let e = datasets.entry(rec.dataset.clone()).or_default();
        e.0.insert(rec.algorithm.clone());
        e.1.insert(rec.test_env);
        e.2.insert(rec.repetition);
    }
    if groups.is_empty() {
        return Err(ReportError::Contract("no records to aggregate".into()));
    }

    // Selected accuracy per complete grid point.
    let mut missing = Vec::new();
    let mut selected: BTreeMap<(String, String, usize, usize), f64> = BTreeMap::new();
    for (dataset, (algs, envs, reps)) in &datasets {
        let names = domain_names(dataset)
            .ok_or_else(|| ReportError::Contract(format!("unknown dataset '{dataset}' for domain names")))?;
        for alg in algs {
            for &env in envs {
                for &rep in reps {
                    let key = (dataset.clone(), alg.clone(), env, rep);
                    match groups.get(&key) {
                        None => missing.push(format!("{dataset}/{alg}/env{env}/rep{rep}")),
                        Some(group) => {
                            let owned: Vec<RunRecord> = group.iter().map(|r| (*r).clone()).collect();
                            let choice = select(criterion, &owned, &names, env).map_err(|source| {
                                ReportError::Selection { cell: format!("{dataset}/{alg}/env{env}/rep{rep}"), source }
                            })?;
                            selected.insert(key, choice.test_accuracy);
                        }
                    }
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(ReportError::MissingCells { cells: missing });
    }

    let mut cells = Vec::new();
    for (dataset, (algs, envs, reps)) in &datasets {
        let names = domain_names(dataset).expect("checked above");
        for alg in algs {
            // Per-domain cells.
            for &env in envs {
                let values: Vec<f64> = reps
                    .iter()
                    .map(|&rep| selected[&(dataset.clone(), alg.clone(), env, rep)])
                    .collect();
                let (mean, stderr) = mean_and_stderr(&values);
                let column = names
                    .get(env)
                    .cloned()
                    .ok_or_else(|| ReportError::Contract(format!("env {env} out of range for '{dataset}'")))?;
                cells.push(AggregateCell {
                    algorithm: alg.clone(),
                    dataset: dataset.clone(),
                    column,
                    criterion: criterion.name().into(),
                    mean,
                    stderr,
                    n_reps: values.len(),
                });
            }
            // Dataset average from per-repetition averages over domains.
            let rep_avgs: Vec<f64> = reps
                .iter()
                .map(|&rep| {
                    let sum: f64 =
                        envs.iter().map(|&env| selected[&(dataset.clone(), alg.clone(), env, rep)]).sum();
                    sum / envs.len() as f64
                })
                .collect();
            let (mean, stderr) = mean_and_stderr(&rep_avgs);
            cells.push(AggregateCell {
                algorithm: alg.clone(),
                dataset: dataset.clone(),
                column: "Avg".into(),
                criterion: criterion.name().into(),
                mean,
                stderr,
                n_reps: rep_avgs.len(),
            });
        }
    }
    Ok(cells)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Markdown,
    Latex,
}

/// "xx.x +/- y.y" in percent, rounded half away from zero via integer math
/// so the output is byte-stable.
fn format_pct(value: f64, decimals: usize, pm: &str) -> String {
    let scale = 10f64.powi(decimals as i32);
    let scaled = (value * 100.0 * scale).round() as i64;
    let (int, frac) = (scaled.div_euclid(scale as i64), scaled.rem_euclid(scale as i64));
    if decimals == 0 {
        format!("{int}{pm}")
    } else {
        format!("{int}.{frac:0width$}{pm}", width = decimals)
    }
}

fn format_cell(cell: &AggregateCell, decimals: usize, pm: &str) -> String {
    format!(
        "{}{pm}{}",
        format_pct(cell.mean, decimals, ""),
        format_pct(cell.stderr, decimals, "")
    )
}

fn algorithm_rank(name: &str) -> (usize, &str) {
    match ALGORITHM_NAMES.iter().position(|&a| a == name) {
        Some(i) => (i, name),
        None => (ALGORITHM_NAMES.len(), name),
    }
}

fn latex_escape(s: &str) -> String {
    s.replace('%', "\\%").replace('_', "\\_")
}

/// Renders one rectangular table: rows are algorithms (registry order),
/// columns as given. Every (algorithm, column) pair must be present.
pub fn emit_table(
    cells: &[AggregateCell],
    columns: &[String],
    format: TableFormat,
    percent_decimals: usize,
) -> Result<String, ReportError> {
    if cells.is_empty() {
        return Err(ReportError::Contract("no cells to render".into()));
    }
    let mut algorithms: Vec<String> = cells.iter().map(|c| c.algorithm.clone()).collect();
    algorithms.sort_by(|a, b| algorithm_rank(a).cmp(&algorithm_rank(b)));
    algorithms.dedup();
    let mut lookup: BTreeMap<(String, String), &AggregateCell> = BTreeMap::new();
    for cell in cells {
        lookup.insert((cell.algorithm.clone(), cell.column.clone()), cell);
    }
    let mut grid: Vec<(String, Vec<String>)> = Vec::new();
    for alg in &algorithms {
        let mut row = Vec::with_capacity(columns.len());
        for col in columns {
            let cell = lookup.get(&(alg.clone(), col.clone())).ok_or_else(|| {
                ReportError::Ragged(format!("no cell for algorithm '{alg}', column '{col}'"))
            })?;
            let pm = match format {
                TableFormat::Markdown => " ± ",
                TableFormat::Latex => " $\\pm$ ",
            };
            row.push(format_cell(cell, percent_decimals, pm));
        }
        grid.push((alg.clone(), row));
    }

    let mut out = String::new();
    match format {
        TableFormat::Markdown => {
            out.push_str("| Algorithm |");
            for col in columns {
                out.push_str(&format!(" {col} |"));
            }
            out.push('\n');
            out.push_str("|---|");
            for _ in columns {
                out.push_str("---|");
            }
            out.push('\n');
            for (alg, row) in &grid {
                out.push_str(&format!("| {alg} |"));
                for v in row {
                    out.push_str(&format!(" {v} |"));
                }
                out.push('\n');
            }
        }
        TableFormat::Latex => {
            out.push_str(&format!("\\begin{{tabular}}{{l{}}}\n", "c".repeat(columns.len())));
            out.push_str("\\toprule\n");
            out.push_str("\\textbf{Algorithm}");
            for col in columns {
                out.push_str(&format!(" & \\textbf{{{}}}", latex_escape(col)));
            }
            out.push_str(" \\\\\n\\midrule\n");
            for (alg, row) in &grid {
                out.push_str(&latex_escape(alg));
                for v in row {
                    out.push_str(&format!(" & {v}"));
                }
                out.push_str(" \\\\\n");
            }
            out.push_str("\\bottomrule\n\\end{tabular}\n");
        }
    }
    Ok(out)
}
