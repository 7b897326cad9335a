//! Deterministic run execution and sweep orchestration: hyperparameter
//! sampling per cell, seeded training runs with checkpointed per-domain
//! accuracies, a worker pool, and resumable JSONL output.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::algorithms::{make_algorithm, Algorithm, AlgoError, ALGORITHM_NAMES};
use crate::data::{build_dataset, sample_minibatches, DataError, DomainData, MultiDomainDataset};
use crate::hparams::{apply_overrides, get_usize, sample_hparams, DatasetFamily, HParamError, HParams, HpValue};
use crate::records::{
    Checkpoint, RecordError, RecordWriter, RunRecord, SplitAcc, SplitSizes, SCHEMA_VERSION,
};
use crate::seeds::{derive_seed, RunSeeds};
use crate::selection::ORACLE_QUERY_LIMIT;
use crate::GraphError;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Algo(#[from] AlgoError),
    #[error(transparent)]
    HParam(#[from] HParamError),
    #[error(transparent)]
    Record(#[from] RecordError),
    #[error("{0}")]
    Contract(String),
}

/// The full study grid: every (algorithm x test domain x trial x repetition)
/// cell of one dataset.
#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub dataset: String,
    pub data_dir: Option<PathBuf>,
    pub max_examples: Option<usize>,
    pub algorithms: Vec<String>,
    /// None means every domain takes a turn as the test domain.
    pub test_envs: Option<Vec<usize>>,
    pub trials: usize,
    pub repetitions: usize,
    pub master_seed: u64,
    pub workers: usize,
    /// Adds the per-trial leave-one-domain-out sub-runs.
    pub include_lodo: bool,
    pub n_steps: Option<u64>,
    pub checkpoint_freq: Option<u64>,
    pub hparam_overrides: HParams,
}

impl SweepPlan {
    pub fn new(dataset: impl Into<String>, algorithms: Vec<String>, master_seed: u64) -> Self {
        SweepPlan {
            dataset: dataset.into(),
            data_dir: None,
            max_examples: None,
            algorithms,
            test_envs: None,
            trials: 20,
            repetitions: 3,
            master_seed,
            workers: 1,
            include_lodo: false,
            n_steps: None,
            checkpoint_freq: None,
            hparam_overrides: HParams::new(),
        }
    }

    fn validate(&self) -> Result<(), SweepError> {
        if self.trials == 0 || self.trials > ORACLE_QUERY_LIMIT {
            return Err(SweepError::Contract(format!(
                "trials must be in 1..={ORACLE_QUERY_LIMIT} (the oracle query limit), got {}",
                self.trials
            )));
        }
        if self.repetitions == 0 {
            return Err(SweepError::Contract("repetitions must be >= 1".into()));
        }
        for alg in &self.algorithms {
            if !ALGORITHM_NAMES.contains(&alg.as_str()) {
                return Err(SweepError::Contract(format!(
                    "unknown algorithm '{alg}'; valid: {}",
                    ALGORITHM_NAMES.join(", ")
                )));
            }
        }
        Ok(())
    }
}

fn accuracy(alg: &dyn Algorithm, domain: &DomainData, indices: &[u32]) -> Result<f64, SweepError> {
    if indices.is_empty() {
        return Err(SweepError::Contract(format!("empty split in domain '{}'", domain.name())));
    }
    let mut correct = 0usize;
    // Modest chunks keep the eval tape's activation footprint small even for
    // the conv featurizer.
    for chunk in indices.chunks(64) {
        let batch = domain.batch(chunk);
        let labels = domain.batch_labels(chunk);
        let logits = alg.predict(&batch)?;
        let k = logits.shape()[1];
        for (row, &label) in logits.data().chunks(k).zip(&labels) {
            let mut best = 0usize;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            if best == label {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

fn checkpoint_accs(
    alg: &dyn Algorithm,
    dataset: &MultiDomainDataset,
) -> Result<BTreeMap<String, SplitAcc>, SweepError> {
    let mut accs = BTreeMap::new();
    for domain in &dataset.domains {
        let split = domain
            .split()
            .ok_or_else(|| SweepError::Contract(format!("domain '{}' has no split", domain.name())))?;
        accs.insert(
            domain.name().to_string(),
            SplitAcc {
                train: accuracy(alg, domain, &split.train)?,
                val: accuracy(alg, domain, &split.val)?,
            },
        );
    }
    Ok(accs)
}

fn env_sizes(dataset: &MultiDomainDataset) -> Result<BTreeMap<String, SplitSizes>, SweepError> {
    let mut sizes = BTreeMap::new();
    for domain in &dataset.domains {
        let split = domain
            .split()
            .ok_or_else(|| SweepError::Contract(format!("domain '{}' has no split", domain.name())))?;
        sizes.insert(
            domain.name().to_string(),
            SplitSizes { train: split.train.len(), val: split.val.len() },
        );
    }
    Ok(sizes)
}

/// Whether an update error marks the run failed (non-finite numerics) or
/// aborts the sweep (a contract bug).
fn is_numeric_failure(err: &AlgoError) -> bool {
    matches!(err, AlgoError::Graph(GraphError::NonFinite { .. }))
}

/// Trains one configuration to completion, evaluating every domain's splits
/// at each checkpoint. Training minibatches come from every domain except
/// `test_env` and `extra_holdout`. A non-finite loss marks the record
/// "failed@STEP"; the record's test env is the held-out domain whose
/// accuracy the caller will read.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    dataset: &MultiDomainDataset,
    algorithm: &str,
    test_env: usize,
    extra_holdout: Option<usize>,
    hparams: &HParams,
    seeds: RunSeeds,
    n_steps: u64,
    checkpoint_freq: u64,
    trial: usize,
    repetition: usize,
) -> Result<RunRecord, SweepError> {
    let num_domains = dataset.num_domains();
    if test_env >= num_domains {
        return Err(SweepError::Contract(format!(
            "test env {test_env} out of range for {num_domains} domains"
        )));
    }
    if n_steps == 0 || checkpoint_freq == 0 {
        return Err(SweepError::Contract("n_steps and checkpoint_freq must be >= 1".into()));
    }
    let record_env = extra_holdout.unwrap_or(test_env);
    let train_ids: Vec<usize> =
        (0..num_domains).filter(|&d| d != test_env && Some(d) != extra_holdout).collect();
    if train_ids.is_empty() {
        return Err(SweepError::Contract("no training domains left after holdouts".into()));
    }
    let mut alg = make_algorithm(
        algorithm,
        dataset.input_shape,
        dataset.num_classes,
        train_ids.len(),
        hparams,
        seeds.init,
    )?;
    let batch_size = get_usize(hparams, "batch_size")?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeds.train);
    let mut status = "ok".to_string();
    let mut checkpoints = Vec::new();
    let mut window: BTreeMap<String, (f64, u64)> = BTreeMap::new();
    let mut step = 0u64;
    while step < n_steps {
        step += 1;
        let minibatches = sample_minibatches(dataset, &train_ids, batch_size, &mut rng)?;
        match alg.update(&minibatches, None) {
            Ok(stats) => {
                for (k, v) in stats {
                    let e = window.entry(k).or_insert((0.0, 0));
                    e.0 += v;
                    e.1 += 1;
                }
            }
            Err(err) if is_numeric_failure(&err) => {
                status = format!("failed@{step}");
                break;
            }
            Err(err) => return Err(err.into()),
        }
        if step.is_multiple_of(checkpoint_freq) || step == n_steps {
            let stats = window
                .iter()
                .map(|(k, (sum, n))| (k.clone(), sum / *n as f64))
                .collect();
            window.clear();
            checkpoints.push(Checkpoint { step, accs: checkpoint_accs(alg.as_ref(), dataset)?, stats });
        }
    }
    Ok(RunRecord {
        schema_version: SCHEMA_VERSION,
        algorithm: algorithm.to_string(),
        dataset: dataset.name.clone(),
        test_env: record_env,
        trial,
        repetition,
        hparams: hparams.clone(),
        seeds,
        status,
        env_sizes: env_sizes(dataset)?,
        checkpoints,
        sub_runs: Vec::new(),
    })
}

/// 28x28 inputs default to the conv featurizer, anything else to the MLP.
fn default_featurizer(input_shape: (usize, usize, usize)) -> &'static str {
    let (c, h, w) = input_shape;
    if (h, w) == (28, 28) && c <= 2 {
        "convnet"
    } else {
        "mlp"
    }
}

/// One executable unit of the sweep: the main run of a cell (with its
/// leave-one-out sub-runs when requested).
struct Cell {
    algorithm: String,
    test_env: usize,
    trial: usize,
    repetition: usize,
    hparams: HParams,
    seeds: RunSeeds,
}

/// Seeds and hyperparameters for one plan cell; pure in the master seed.
fn cell_config(plan: &SweepPlan, algorithm: &str, test_env: usize, trial: usize, rep: usize) -> Result<(HParams, RunSeeds), SweepError> {
    let rep64 = rep as u64;
    let hp_seed = derive_seed(
        plan.master_seed,
        &[("rep", rep64), (algorithm, 0), ("env", test_env as u64), ("trial", trial as u64), ("hparams", 0)],
    );
    let mut hparams = sample_hparams(algorithm, DatasetFamily::Mnist, trial, hp_seed)?;
    apply_overrides(&mut hparams, &plan.hparam_overrides);
    let seeds = RunSeeds {
        data: derive_seed(plan.master_seed, &[("rep", rep64), ("data", 0)]),
        split: derive_seed(plan.master_seed, &[("rep", rep64), ("split", 0)]),
        init: derive_seed(
            plan.master_seed,
            &[("rep", rep64), (algorithm, 0), ("env", test_env as u64), ("trial", trial as u64), ("init", 0)],
        ),
        train: derive_seed(
            plan.master_seed,
            &[("rep", rep64), (algorithm, 0), ("env", test_env as u64), ("trial", trial as u64), ("train", 0)],
        ),
    };
    Ok((hparams, seeds))
}

fn run_cell(
    plan: &SweepPlan,
    dataset: &MultiDomainDataset,
    cell: &Cell,
) -> Result<RunRecord, SweepError> {
    let n_steps = plan.n_steps.unwrap_or(dataset.n_steps);
    let freq = plan.checkpoint_freq.unwrap_or(dataset.checkpoint_freq).min(n_steps);
    let mut record = run_training(
        dataset,
        &cell.algorithm,
        cell.test_env,
        None,
        &cell.hparams,
        cell.seeds,
        n_steps,
        freq,
        cell.trial,
        cell.repetition,
    )?;
    if plan.include_lodo {
        let train_ids: Vec<usize> = (0..dataset.num_domains()).filter(|&d| d != cell.test_env).collect();
        if train_ids.len() < 2 {
            return Err(SweepError::Contract(
                "leave-one-domain-out needs at least 2 training domains".into(),
            ));
        }
        for &held in &train_ids {
            let mut seeds = cell.seeds;
            seeds.init = derive_seed(seeds.init, &[("subrun", held as u64), ("init", 0)]);
            seeds.train = derive_seed(seeds.train, &[("subrun", held as u64), ("train", 0)]);
            let sub = run_training(
                dataset,
                &cell.algorithm,
                cell.test_env,
                Some(held),
                &cell.hparams,
                seeds,
                n_steps,
                freq,
                cell.trial,
                cell.repetition,
            )?;
            record.sub_runs.push(sub);
        }
    }
    Ok(record)
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SweepSummary {
    pub executed: usize,
    pub skipped: usize,
    pub failed: usize,
}

/// Executes every cell of the plan, appending one record line per cell to
/// `out_path`. Already-completed cells (matching identity, hyperparameters
/// and seeds) are skipped; failed cells are retried exactly once.
pub fn run_sweep(plan: &SweepPlan, out_path: &Path) -> Result<SweepSummary, SweepError> {
    plan.validate()?;

    // Datasets per repetition, with splits applied, shared read-only.
    let mut datasets = Vec::with_capacity(plan.repetitions);
    for rep in 0..plan.repetitions {
        let data_seed = derive_seed(plan.master_seed, &[("rep", rep as u64), ("data", 0)]);
        let split_seed = derive_seed(plan.master_seed, &[("rep", rep as u64), ("split", 0)]);
        let mut ds = build_dataset(&plan.dataset, plan.data_dir.as_deref(), plan.max_examples, data_seed)?;
        ds.apply_splits(0.8, split_seed)?;
        datasets.push(ds);
    }

    // Existing records count toward completion/retry accounting, but only
    // when their hyperparameters and seeds match what this plan derives for
    // the cell: a different configuration is a different cell.
    let mut attempts: BTreeMap<(String, usize, usize, usize), Vec<(bool, HParams, RunSeeds)>> = BTreeMap::new();
    if out_path.exists() {
        for rec in crate::records::read_records(out_path)? {
            if rec.dataset == plan.dataset {
                attempts
                    .entry((rec.algorithm.clone(), rec.test_env, rec.trial, rec.repetition))
                    .or_default()
                    .push((rec.is_ok(), rec.hparams, rec.seeds));
            }
        }
    }

    let mut cells = Vec::new();
    let mut skipped = 0usize;
    #[allow(clippy::needless_range_loop)] // rep drives seed derivation too
    for rep in 0..plan.repetitions {
        let envs: Vec<usize> = match &plan.test_envs {
            Some(v) => v.clone(),
            None => (0..datasets[rep].num_domains()).collect(),
        };
        for algorithm in &plan.algorithms {
            for &test_env in &envs {
                if test_env >= datasets[rep].num_domains() {
                    return Err(SweepError::Contract(format!("test env {test_env} out of range")));
                }
                for trial in 0..plan.trials {
                    let (mut hparams, seeds) = cell_config(plan, algorithm, test_env, trial, rep)?;
                    // The sampled default is the conv net; non-28x28 datasets
                    // fall back to the MLP unless the plan pinned a featurizer.
                    if !plan.hparam_overrides.contains_key("featurizer") {
                        hparams.insert(
                            "featurizer".into(),
                            HpValue::Text(default_featurizer(datasets[rep].input_shape).into()),
                        );
                    }
                    let key = (algorithm.clone(), test_env, trial, rep);
                    let done = match attempts.get(&key) {
                        Some(tries) => {
                            let matching =
                                tries.iter().filter(|(_, hp, sd)| *hp == hparams && *sd == seeds);
                            matching.clone().any(|(ok, _, _)| *ok) || matching.count() >= 2
                        }
                        None => false,
                    };
                    if done {
                        skipped += 1;
                        continue;
                    }
                    cells.push(Cell {
                        algorithm: algorithm.clone(),
                        test_env,
                        trial,
                        repetition: rep,
                        hparams,
                        seeds,
                    });
                }
            }
        }
    }

    let writer = Mutex::new(RecordWriter::append(out_path)?);
    let cursor = AtomicUsize::new(0);
    let executed = AtomicUsize::new(0);
    let failed = AtomicUsize::new(0);
    let workers = plan.workers.max(1).min(cells.len().max(1));
    let first_error: Mutex<Option<SweepError>> = Mutex::new(None);

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = cursor.fetch_add(1, Ordering::SeqCst);
                let Some(cell) = cells.get(i) else { break };
                match run_cell(plan, &datasets[cell.repetition], cell) {
                    Ok(record) => {
                        if !record.is_ok() {
                            failed.fetch_add(1, Ordering::SeqCst);
                        }
                        executed.fetch_add(1, Ordering::SeqCst);
                        let mut w = writer.lock().expect("writer lock");
                        if let Err(e) = w.write(&record) {
                            let mut slot = first_error.lock().expect("error lock");
                            slot.get_or_insert(e.into());
                            break;
                        }
                    }
                    Err(err) => {
                        let mut slot = first_error.lock().expect("error lock");
                        slot.get_or_insert(err);
                        break;
                    }
                }
            });
        }
    });

    if let Some(err) = first_error.into_inner().expect("error lock") {
        return Err(err);
    }
    Ok(SweepSummary {
        executed: executed.into_inner(),
        skipped,
        failed: failed.into_inner(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::toy_dataset;
    use crate::hparams::HpValue;
    use crate::records::read_records;

    fn toy_with_splits(seed: u64) -> MultiDomainDataset {
        let mut ds = toy_dataset(seed);
        ds.apply_splits(0.8, seed ^ 99).unwrap();
        ds
    }

    fn fast_hparams() -> HParams {
        let mut hp = sample_hparams("ERM", DatasetFamily::Mnist, 0, 0).unwrap();
        hp.insert("featurizer".into(), HpValue::Text("mlp".into()));
        hp.insert("mlp_width".into(), HpValue::Int(12));
        hp.insert("mlp_depth".into(), HpValue::Int(1));
        hp.insert("batch_size".into(), HpValue::Int(16));
        hp
    }

    #[test]
    fn checkpoints_land_on_schedule() {
        let ds = toy_with_splits(1);
        let seeds = RunSeeds { data: 0, split: 0, init: 1, train: 2 };
        let rec = run_training(&ds, "ERM", 1, None, &fast_hparams(), seeds, 10, 5, 0, 0).unwrap();
        let steps: Vec<u64> = rec.checkpoints.iter().map(|c| c.step).collect();
        assert_eq!(steps, vec![5, 10]);
        assert!(rec.is_ok());
        assert_eq!(rec.env_sizes["a"].train, 192);
        assert_eq!(rec.env_sizes["a"].val, 48);
    }

    #[test]
    fn identical_config_and_seeds_reproduce_the_record() {
        let ds = toy_with_splits(2);
        let seeds = RunSeeds { data: 0, split: 0, init: 7, train: 8 };
        let a = run_training(&ds, "ERM", 0, None, &fast_hparams(), seeds, 8, 4, 1, 2).unwrap();
        let b = run_training(&ds, "ERM", 0, None, &fast_hparams(), seeds, 8, 4, 1, 2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn erm_fits_the_separable_toy_within_500_steps() {
        let ds = toy_with_splits(3);
        let seeds = RunSeeds { data: 0, split: 0, init: 3, train: 4 };
        let rec = run_training(&ds, "ERM", 1, None, &fast_hparams(), seeds, 500, 500, 0, 0).unwrap();
        let last = rec.final_checkpoint().unwrap();
        assert_eq!(last.step, 500);
        assert!(last.accs["a"].train >= 0.999, "{:?}", last.accs);
    }

    #[test]
    fn diverged_run_is_marked_failed_with_step() {
        let ds = toy_with_splits(4);
        let mut hp = fast_hparams();
        hp.insert("lr".into(), HpValue::Num(1e300));
        let seeds = RunSeeds { data: 0, split: 0, init: 5, train: 6 };
        let rec = run_training(&ds, "ERM", 1, None, &hp, seeds, 50, 10, 0, 0).unwrap();
        assert!(rec.status.starts_with("failed@"), "{}", rec.status);
    }

    fn tmp_path(tag: &str) -> PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("dgbench-sweep-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_file(&p);
        p
    }

    fn small_plan(seed: u64) -> SweepPlan {
        let mut plan = SweepPlan::new("toy", vec!["ERM".into()], seed);
        plan.trials = 2;
        plan.repetitions = 1;
        plan.n_steps = Some(6);
        plan.checkpoint_freq = Some(3);
        plan.workers = 2;
        let mut hp = HParams::new();
        hp.insert("featurizer".into(), HpValue::Text("mlp".into()));
        hp.insert("mlp_width".into(), HpValue::Int(8));
        hp.insert("mlp_depth".into(), HpValue::Int(1));
        hp.insert("batch_size".into(), HpValue::Int(8));
        plan.hparam_overrides = hp;
        plan
    }

    #[test]
    fn sweep_counts_match_the_plan_grid() {
        let path = tmp_path("grid");
        let plan = small_plan(11);
        let summary = run_sweep(&plan, &path).unwrap();
        // 1 algorithm x 3 test envs x 2 trials x 1 rep.
        assert_eq!(summary.executed, 6);
        assert_eq!(summary.skipped, 0);
        let records = read_records(&path).unwrap();
        assert_eq!(records.len(), 6);
        // Training minibatches exclude the test domain by construction: the
        // record env is within range and sub-run lists are empty without lodo.
        assert!(records.iter().all(|r| r.sub_runs.is_empty()));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn rerunning_a_completed_sweep_is_a_no_op() {
        let path = tmp_path("resume");
        let plan = small_plan(12);
        run_sweep(&plan, &path).unwrap();
        let first = std::fs::read_to_string(&path).unwrap();
        let summary = run_sweep(&plan, &path).unwrap();
        assert_eq!(summary.executed, 0);
        assert_eq!(summary.skipped, 6);
        assert_eq!(std::fs::read_to_string(&path).unwrap(), first);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn lodo_adds_one_sub_run_per_training_domain() {
        let path = tmp_path("lodo");
        let mut plan = small_plan(13);
        plan.dataset = "cmnist-synth".into();
        plan.max_examples = Some(240);
        plan.test_envs = Some(vec![2]);
        plan.include_lodo = true;
        let summary = run_sweep(&plan, &path).unwrap();
        assert_eq!(summary.executed, 2);
        let records = read_records(&path).unwrap();
        assert_eq!(records.len(), 2);
        for rec in &records {
            assert_eq!(rec.sub_runs.len(), 2); // d_tr = 2 for 3 domains
            assert_eq!(rec.record_count(), 3);
            let held: Vec<usize> = rec.sub_runs.iter().map(|s| s.test_env).collect();
            assert_eq!(held, vec![0, 1]);
        }
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn foreign_configurations_do_not_satisfy_resume() {
        let path = tmp_path("foreign");
        let plan_a = small_plan(21);
        run_sweep(&plan_a, &path).unwrap();
        // Different master seed => different seeds per cell => same identity
        // tuples must NOT be treated as complete.
        let plan_b = small_plan(22);
        let s = run_sweep(&plan_b, &path).unwrap();
        assert_eq!(s.executed, 6);
        assert_eq!(s.skipped, 0);
        assert_eq!(read_records(&path).unwrap().len(), 12);
        // Re-running either plan is now a no-op.
        let s = run_sweep(&plan_a, &path).unwrap();
        assert_eq!((s.executed, s.skipped), (0, 6));
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn failed_cells_are_retried_exactly_once() {
        let path = tmp_path("retry");
        let mut plan = small_plan(15);
        plan.test_envs = Some(vec![0]);
        plan.trials = 1;
        plan.hparam_overrides.insert("lr".into(), HpValue::Num(1e300));
        let s1 = run_sweep(&plan, &path).unwrap();
        assert_eq!((s1.executed, s1.failed), (1, 1));
        let s2 = run_sweep(&plan, &path).unwrap();
        assert_eq!((s2.executed, s2.failed), (1, 1), "one retry");
        let s3 = run_sweep(&plan, &path).unwrap();
        assert_eq!((s3.executed, s3.skipped), (0, 1), "no third attempt");
        assert_eq!(read_records(&path).unwrap().len(), 2);
        std::fs::remove_file(&path).unwrap();
    }

    #[test]
    fn worker_count_does_not_change_canonical_bytes() {
        let path1 = tmp_path("w1");
        let path2 = tmp_path("w2");
        let mut plan1 = small_plan(14);
        plan1.workers = 1;
        let mut plan2 = small_plan(14);
        plan2.workers = 2;
        run_sweep(&plan1, &path1).unwrap();
        run_sweep(&plan2, &path2).unwrap();
        let canon = |p: &Path| {
            crate::records::canonical_string(&read_records(p).unwrap()).unwrap()
        };
        assert_eq!(canon(&path1), canon(&path2));
        std::fs::remove_file(&path1).unwrap();
        std::fs::remove_file(&path2).unwrap();
    }
}
