//! dgbench: train / sweep / select / report / selftest for the multi-domain
//! training harness.
//!
//! Exit codes: 0 success, 1 runtime failure (missing data, I/O, failed
//! checks), 2 usage errors (unknown flags, datasets, or algorithms).

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};

use dgbench_core::algorithms::ALGORITHM_NAMES;
use dgbench_core::data::{build_dataset, dataset_domain_names, DATASET_NAMES};
use dgbench_core::hparams::{apply_overrides, sample_hparams, DatasetFamily, HParams};
use dgbench_core::records::{canonical_string, read_records, RecordWriter, RunRecord};
use dgbench_core::reporting::{aggregate, emit_table, TableFormat};
use dgbench_core::seeds::{derive_seed, RunSeeds};
use dgbench_core::selection::{select, Criterion};
use dgbench_core::sweep::{run_sweep, run_training, SweepPlan};

const DATA_DIR_ENV: &str = "DGBENCH_DATA_DIR";

fn registries() -> String {
    format!(
        "Datasets: {}\nAlgorithms: {}\nCriteria: {}",
        DATASET_NAMES.join(", "),
        ALGORITHM_NAMES.join(", "),
        Criterion::NAMES.join(", ")
    )
}

#[derive(Parser)]
#[command(name = "dgbench", version, about = "Multi-domain generalization benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one configuration and print per-domain accuracies.
    Train(TrainArgs),
    /// Run the full random-search study grid into a JSONL records file.
    Sweep(SweepArgs),
    /// Apply a model-selection criterion to a records file.
    Select(SelectArgs),
    /// Aggregate records into mean +/- stderr tables.
    Report(ReportArgs),
    /// Gradient checks and core property suites.
    Selftest,
}

#[derive(Args)]
struct DataArgs {
    /// Registered dataset name.
    #[arg(long)]
    dataset: String,
    /// Directory with raw MNIST IDX files (falls back to $DGBENCH_DATA_DIR).
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Truncate the source corpus to this many digits.
    #[arg(long)]
    max_examples: Option<usize>,
}

impl DataArgs {
    fn dir(&self) -> Option<PathBuf> {
        self.data_dir.clone().or_else(|| std::env::var_os(DATA_DIR_ENV).map(PathBuf::from))
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Algorithm name.
    #[arg(long)]
    algorithm: String,
    /// Index of the held-out test domain.
    #[arg(long)]
    test_env: usize,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Gradient steps (defaults to the dataset's setting).
    #[arg(long)]
    steps: Option<u64>,
    /// Steps between checkpoints (defaults to the dataset's setting).
    #[arg(long)]
    checkpoint_freq: Option<u64>,
    /// Hyperparameter overrides as a JSON object, e.g. '{"dro_eta": 0.2}'.
    #[arg(long)]
    hparams: Option<String>,
    /// Append the run record to this JSONL file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated algorithms (default: all nine).
    #[arg(long, value_delimiter = ',')]
    algorithms: Vec<String>,
    /// Comma-separated test-domain indices (default: every domain).
    #[arg(long, value_delimiter = ',')]
    test_envs: Vec<usize>,
    /// Hyperparameter search trials per cell (trial 0 is the default column).
    #[arg(long, default_value_t = 20)]
    trials: usize,
    /// Full-study repetitions with fresh seeds.
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    workers: Option<usize>,
    /// Additionally run leave-one-domain-out sub-runs per cell.
    #[arg(long)]
    lodo: bool,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    checkpoint_freq: Option<u64>,
    /// Hyperparameter overrides applied to every cell (JSON object).
    #[arg(long)]
    hparams: Option<String>,
    /// Records file to append to (resumable).
    #[arg(long, default_value = "records.jsonl")]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    /// Records file produced by `sweep`.
    #[arg(long)]
    records: PathBuf,
    /// training-domain | leave-one-out | oracle.
    #[arg(long)]
    criterion: String,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    records: PathBuf,
    #[arg(long)]
    criterion: String,
    /// markdown | latex.
    #[arg(long, default_value = "markdown")]
    format: String,
    /// Decimal places for the percent cells.
    #[arg(long, default_value_t = 1)]
    decimals: usize,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Errors that indicate misuse of the CLI rather than a runtime failure.
struct UsageError(String);

fn check_names(dataset: Option<&str>, algorithms: &[String]) -> Result<(), UsageError> {
    if let Some(ds) = dataset {
        if !DATASET_NAMES.contains(&ds) {
            return Err(UsageError(format!(
                "unknown dataset '{ds}'\n\n{}",
                registries()
            )));
        }
    }
    for alg in algorithms {
        if !ALGORITHM_NAMES.contains(&alg.as_str()) {
            return Err(UsageError(format!(
                "unknown algorithm '{alg}'\n\n{}",
                registries()
            )));
        }
    }
    Ok(())
}

fn parse_hparams(text: Option<&str>) -> Result<HParams> {
    match text {
        None => Ok(HParams::new()),
        Some(t) => serde_json::from_str(t).with_context(|| format!("cannot parse --hparams JSON: {t}")),
    }
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let dir = args.data.dir();
    let data_seed = derive_seed(args.seed, &[("rep", 0), ("data", 0)]);
    let split_seed = derive_seed(args.seed, &[("rep", 0), ("split", 0)]);
    let mut dataset = build_dataset(&args.data.dataset, dir.as_deref(), args.data.max_examples, data_seed)?;
    dataset.apply_splits(0.8, split_seed)?;
    if args.test_env >= dataset.num_domains() {
        bail!("test env {} out of range: dataset has {} domains", args.test_env, dataset.num_domains());
    }

    let hp_seed = derive_seed(args.seed, &[("rep", 0), (args.algorithm.as_str(), 0), ("hparams", 0)]);
    let mut hparams = sample_hparams(&args.algorithm, DatasetFamily::Mnist, 0, hp_seed)?;
    let overrides = parse_hparams(args.hparams.as_deref())?;
    if !overrides.contains_key("featurizer") {
        let (c, h, w) = dataset.input_shape;
        let kind = if (h, w) == (28, 28) && c <= 2 { "convnet" } else { "mlp" };
        hparams.insert("featurizer".into(), dgbench_core::hparams::HpValue::Text(kind.into()));
    }
    apply_overrides(&mut hparams, &overrides);

    let seeds = RunSeeds {
        data: data_seed,
        split: split_seed,
        init: derive_seed(args.seed, &[("rep", 0), (args.algorithm.as_str(), 0), ("init", 0)]),
        train: derive_seed(args.seed, &[("rep", 0), (args.algorithm.as_str(), 0), ("train", 0)]),
    };
    let n_steps = args.steps.unwrap_or(dataset.n_steps);
    let freq = args.checkpoint_freq.unwrap_or(dataset.checkpoint_freq).min(n_steps);
    let record = run_training(
        &dataset,
        &args.algorithm,
        args.test_env,
        None,
        &hparams,
        seeds,
        n_steps,
        freq,
        0,
        0,
    )?;

    println!("status: {}", record.status);
    if let Some(cp) = record.final_checkpoint() {
        println!("final accuracies at step {}:", cp.step);
        for (i, name) in dataset.domain_names().iter().enumerate() {
            let acc = &cp.accs[name];
            let role = if i == args.test_env { "test " } else { "train" };
            println!("  {role} {name:>6}: eval {:.4}  val {:.4}", acc.train, acc.val);
        }
    }
    if let Some(out) = &args.out {
        let mut w = RecordWriter::append(out)?;
        w.write(&record)?;
        println!("record appended to {}", out.display());
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let algorithms = if args.algorithms.is_empty() {
        ALGORITHM_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        args.algorithms.clone()
    };
    let mut plan = SweepPlan::new(args.data.dataset.clone(), algorithms, args.seed);
    plan.data_dir = args.data.dir();
    plan.max_examples = args.data.max_examples;
    if !args.test_envs.is_empty() {
        plan.test_envs = Some(args.test_envs.clone());
    }
    plan.trials = args.trials;
    plan.repetitions = args.reps;
    plan.workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    plan.include_lodo = args.lodo;
    plan.n_steps = args.steps;
    plan.checkpoint_freq = args.checkpoint_freq;
    plan.hparam_overrides = parse_hparams(args.hparams.as_deref())?;

    let summary = run_sweep(&plan, &args.out)?;
    println!(
        "sweep complete: {} runs executed, {} skipped (already done), {} failed",
        summary.executed, summary.skipped, summary.failed
    );
    println!("records: {}", args.out.display());
    Ok(())
}

fn grouped(records: &[RunRecord]) -> BTreeMap<(String, String, usize, usize), Vec<RunRecord>> {
    let mut groups: BTreeMap<(String, String, usize, usize), Vec<RunRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.dataset.clone(), r.algorithm.clone(), r.test_env, r.repetition))
            .or_default()
            .push(r.clone());
    }
    groups
}

fn cmd_select(args: &SelectArgs) -> Result<()> {
    let criterion: Criterion = args.criterion.parse()?;
    let records = read_records(&args.records)?;
    if records.is_empty() {
        bail!("no records in {}", args.records.display());
    }
    for ((dataset, algorithm, env, rep), group) in grouped(&records) {
        let names = dataset_domain_names(&dataset)
            .ok_or_else(|| anyhow!("dataset '{dataset}' is not in the registry"))?;
        let choice = select(criterion, &group, &names, env)?;
        println!(
            "{dataset} {algorithm} test_env={env} rep={rep}: trial {} step {} score {:.4} test_acc {:.4}",
            choice.trial, choice.step, choice.score, choice.test_accuracy
        );
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<()> {
    let criterion: Criterion = args.criterion.parse()?;
    let format = match args.format.as_str() {
        "markdown" => TableFormat::Markdown,
        "latex" => TableFormat::Latex,
        other => bail!("unknown format '{other}' (markdown | latex)"),
    };
    let records = read_records(&args.records)?;
    if records.is_empty() {
        bail!("no records in {}", args.records.display());
    }
    let cells = aggregate(&records, criterion, &dataset_domain_names)?;
    let mut datasets: Vec<String> = cells.iter().map(|c| c.dataset.clone()).collect();
    datasets.sort();
    datasets.dedup();
    let mut out = String::new();
    for dataset in &datasets {
        let mut columns = dataset_domain_names(dataset).expect("aggregate checked the registry");
        columns.push("Avg".into());
        let subset: Vec<_> = cells.iter().filter(|c| &c.dataset == dataset).cloned().collect();
        let header = format!("Model selection: {}, dataset: {dataset}\n", criterion.name());
        out.push_str(&header);
        out.push_str(&emit_table(&subset, &columns, format, args.decimals)?);
        out.push('\n');
    }
    match &args.out {
        Some(path) => {
            std::fs::write(path, &out)?;
            println!("report written to {}", path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_selftest() -> Result<()> {
    use dgbench_core::autodiff::gradcheck::check_all_ops;
    let mut failures = 0;
    println!("gradient checks (10 random points per op, tolerance 1e-4):");
    for (name, err) in check_all_ops(7, 10)? {
        let ok = err < 1e-4;
        println!("  [{}] {name}: max rel err {err:.2e}", if ok { "PASS" } else { "FAIL" });
        failures += usize::from(!ok);
    }

    // Quick determinism probe over the toy dataset.
    let mut plan = SweepPlan::new("toy", vec!["ERM".into(), "DRO".into()], 17);
    plan.trials = 2;
    plan.repetitions = 1;
    plan.n_steps = Some(6);
    plan.checkpoint_freq = Some(3);
    plan.workers = 2;
    let mut hp = HParams::new();
    hp.insert("featurizer".into(), dgbench_core::hparams::HpValue::Text("mlp".into()));
    hp.insert("mlp_width".into(), dgbench_core::hparams::HpValue::Int(8));
    hp.insert("mlp_depth".into(), dgbench_core::hparams::HpValue::Int(1));
    hp.insert("batch_size".into(), dgbench_core::hparams::HpValue::Int(8));
    plan.hparam_overrides = hp;
    let tmp = std::env::temp_dir();
    let p1 = tmp.join(format!("dgbench-selftest-a-{}.jsonl", std::process::id()));
    let p2 = tmp.join(format!("dgbench-selftest-b-{}.jsonl", std::process::id()));
    for p in [&p1, &p2] {
        let _ = std::fs::remove_file(p);
        run_sweep(&plan, p)?;
    }
    let same = canonical_string(&read_records(&p1)?)? == canonical_string(&read_records(&p2)?)?;
    println!("  [{}] determinism: repeated sweeps are byte-identical", if same { "PASS" } else { "FAIL" });
    failures += usize::from(!same);
    let _ = std::fs::remove_file(&p1);
    let _ = std::fs::remove_file(&p2);

    if failures > 0 {
        bail!("{failures} selftest checks failed");
    }
    println!("all selftest checks passed");
    Ok(())
}

fn main() -> ExitCode {
    let mut cmd = Cli::command();
    cmd = cmd.after_help(registries());
    let matches = cmd.get_matches();
    let cli = match <Cli as clap::FromArgMatches>::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(2);
        }
    };

    let usage_check = match &cli.command {
        Command::Train(a) => check_names(Some(&a.data.dataset), std::slice::from_ref(&a.algorithm)),
        Command::Sweep(a) => check_names(Some(&a.data.dataset), &a.algorithms),
        _ => Ok(()),
    };
    if let Err(UsageError(msg)) = usage_check {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }

    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Select(a) => cmd_select(a),
        Command::Report(a) => cmd_report(a),
        Command::Selftest => cmd_selftest(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
