//! Command-line driver: subcommands, run directories and exit statuses.
//!
//! Exit status 0 means success, 2 means governance rejected every option,
//! and 1 is any error.

pub mod artifacts;
pub mod config;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use cohort_policy::evaluation::{
    evaluate_selector, format_report, read_jsonl, write_jsonl, write_report_csv, GroundTruth,
    InstructionSpec, SelectorRanking,
};
use cohort_policy::experiment::{compute_ate, ingest, write_dataset_csv, IngestConfig};
use cohort_policy::governance::{
    govern_pipeline, pre_search_filter, robustness_check, run_backtest, target_metrics,
    write_snapshots_csv, GovernInputs, HookReport, StabilityVerdict,
};
use cohort_policy::policy::run_search;
use cohort_policy::synth::{build_benchmark, generate_experiment, BenchmarkConfig, ScenarioConfig};

use artifacts::RunDir;
use config::{load_data, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "cohort-policy", version, about = "Cohort policy discovery for randomized experiments")]
pub struct Cli {
    /// Configuration file (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate an experiment file and print per-action lifts.
    Ingest {
        /// Experiment file (CSV or JSONL); --config gives the column mapping.
        #[arg(long)]
        input: PathBuf,
    },
    /// Generate synthetic data.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Search policies and write the table and frontier.
    Search,
    /// Measure feature stability and apply the pre-search filter.
    Filter,
    /// Run the robustness and backtest hooks on one policy.
    Govern {
        #[arg(long)]
        policy: String,
    },
    /// Full governed run ending in a recommendation or a rejection.
    Pipeline,
    /// Score selector rankings against ground truth.
    Eval(EvalArgs),
    /// Summarize a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SynthCommand {
    /// One experiment from a scenario config, as files the pipeline can read.
    Scenario,
    /// The instruction benchmark: policy tables, instructions, ground truth.
    Benchmark,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub instructions: PathBuf,
    #[arg(long)]
    pub rankings: PathBuf,
    #[arg(long = "ground-truth")]
    pub ground_truth: PathBuf,
}

/// How a successful invocation ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Rejected,
}

impl Outcome {
    pub fn exit_code(self) -> u8 {
        match self {
            Outcome::Success => 0,
            Outcome::Rejected => 2,
        }
    }
}

const DEFAULT_OUT: &str = "runs";

/// Parses nothing; runs an already parsed command line.
pub fn run(cli: Cli) -> Result<Outcome> {
    let threads = cli.threads;
    let pool = build_pool(threads)?;
    pool.install(|| dispatch(cli))
}

fn build_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    if threads == Some(0) {
        bail!("--threads must be at least 1");
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    builder.build().context("starting worker pool")
}

fn dispatch(cli: Cli) -> Result<Outcome> {
    let out = cli.out.clone();
    match &cli.command {
        Command::Ingest { input } => {
            let schema = IngestConfig::from_json_file(require_config(&cli)?)?;
            cmd_ingest(input, &schema)
        }
        Command::Synth(SynthCommand::Scenario) => {
            let path = require_config(&cli)?;
            let mut scenario: ScenarioConfig = read_json(path)?;
            if let Some(s) = cli.seed {
                scenario.seed = s;
            }
            cmd_synth_scenario(&scenario, &out.unwrap_or_else(|| DEFAULT_OUT.into()))
        }
        Command::Synth(SynthCommand::Benchmark) => {
            let mut cfg: BenchmarkConfig = match &cli.config {
                Some(p) => read_json(p)?,
                None => BenchmarkConfig::default(),
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            cmd_synth_benchmark(&cfg, &out.unwrap_or_else(|| DEFAULT_OUT.into()))
        }
        Command::Eval(args) => cmd_eval(
            &args.instructions,
            &args.rankings,
            &args.ground_truth,
            &out.unwrap_or_else(|| DEFAULT_OUT.into()),
        )
        .map(|_| Outcome::Success),
        Command::Report { run } => {
            print!("{}", cmd_report(run)?);
            Ok(Outcome::Success)
        }
        Command::Search | Command::Filter | Command::Govern { .. } | Command::Pipeline => {
            let cfg = RunConfig::load(require_config(&cli)?)?.finish(cli.seed, cli.threads)?;
            let parent = out
                .or_else(|| cfg.output_dir.clone())
                .unwrap_or_else(|| DEFAULT_OUT.into());
            let result = match &cli.command {
                Command::Search => cmd_search(&cfg, &parent),
                Command::Filter => cmd_filter(&cfg, &parent),
                Command::Govern { policy } => cmd_govern(&cfg, &parent, policy),
                _ => cmd_pipeline(&cfg, &parent),
            }?;
            eprintln!("run directory: {}", result.run_dir.display());
            Ok(result.outcome)
        }
    }
}

fn require_config(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .context("this command needs --config <file>")
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Where a run-directory command left its outputs.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub run_dir: PathBuf,
    pub outcome: Outcome,
}

pub fn cmd_ingest(input: &Path, schema: &IngestConfig) -> Result<Outcome> {
    let ds = ingest(input, schema)?;
    let mut lifts = serde_json::Map::new();
    for a in ds.actions() {
        let mut per_metric = serde_json::Map::new();
        for m in ds.metrics() {
            per_metric.insert(m.clone(), serde_json::to_value(compute_ate(&ds, a, m)?)?);
        }
        lifts.insert(a.clone(), per_metric.into());
    }
    let summary = serde_json::json!({
        "format_version": artifacts::FORMAT_VERSION,
        "experiment_id": ds.experiment_id(),
        "users": ds.len(),
        "arms": ds.arm_sizes().into_iter().collect::<std::collections::BTreeMap<_, _>>(),
        "features": ds.features(),
        "metrics": ds.metrics(),
        "average_treatment_effects": lifts,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Outcome::Success)
}

/// Writes `experiment.csv`, `ingest.json`, `snapshots.csv`, the daily files
/// and the planted truth.
pub fn cmd_synth_scenario(scenario: &ScenarioConfig, out: &Path) -> Result<Outcome> {
    let exp = generate_experiment(scenario)?;
    std::fs::create_dir_all(out.join("daily"))
        .with_context(|| format!("creating {}", out.display()))?;
    write_dataset_csv(&exp.dataset, artifacts::create(&out.join("experiment.csv"))?)?;
    artifacts::write_json(&out.join("ingest.json"), &IngestConfig::describing(&exp.dataset))?;
    write_snapshots_csv(&exp.snapshots, artifacts::create(&out.join("snapshots.csv"))?)?;
    for (i, day) in exp.daily.iter().enumerate() {
        let path = out.join("daily").join(format!("day{:03}.csv", i + 1));
        write_dataset_csv(day, artifacts::create(&path)?)?;
    }
    artifacts::write_json(&out.join("planted_truth.json"), &artifacts::Versioned::new(&exp.truth))?;
    Ok(Outcome::Success)
}

/// Writes the benchmark: `instructions.jsonl`, `ground_truth.jsonl`,
/// `oracle_rankings.jsonl` and one policy table per experiment.
pub fn cmd_synth_benchmark(cfg: &BenchmarkConfig, out: &Path) -> Result<Outcome> {
    let bench = build_benchmark(cfg)?;
    let tables = out.join("policy_tables");
    std::fs::create_dir_all(&tables).with_context(|| format!("creating {}", tables.display()))?;
    for t in &bench.tables {
        t.write_csv_file(tables.join(format!("{}.csv", t.experiment_id)))?;
    }
    write_jsonl(artifacts::create(&out.join("instructions.jsonl"))?, &bench.instructions)?;
    write_jsonl(artifacts::create(&out.join("ground_truth.jsonl"))?, &bench.ground_truths)?;
    let oracle: Vec<SelectorRanking> = bench
        .ground_truths
        .iter()
        .map(|g| SelectorRanking {
            selector_name: "oracle".into(),
            experiment_id: g.experiment_id.clone(),
            instruction_idx: g.instruction_idx,
            ranked: g.top5.clone(),
        })
        .collect();
    write_jsonl(artifacts::create(&out.join("oracle_rankings.jsonl"))?, &oracle)?;
    artifacts::write_json(&out.join("benchmark.json"), &artifacts::Versioned::new(cfg))?;
    Ok(Outcome::Success)
}

/// Scores rankings and writes `report.csv` and `report.txt`. Every ranking
/// must name a known instruction.
pub fn cmd_eval(instructions: &Path, rankings: &Path, ground_truth: &Path, out: &Path) -> Result<String> {
    let instrs: Vec<InstructionSpec> = read_jsonl(instructions)?;
    let ranks: Vec<SelectorRanking> = read_jsonl(rankings)?;
    let gts: Vec<GroundTruth> = read_jsonl(ground_truth)?;
    if ranks.is_empty() {
        bail!("{} contains no rankings", rankings.display());
    }
    let known: BTreeSet<(&str, usize)> = instrs
        .iter()
        .map(|i| (i.experiment_id.as_str(), i.instruction_idx))
        .collect();
    if let Some(r) = ranks
        .iter()
        .find(|r| !known.contains(&(r.experiment_id.as_str(), r.instruction_idx)))
    {
        bail!(
            "ranking from `{}` refers to unknown instruction {}#{}",
            r.selector_name,
            r.experiment_id,
            r.instruction_idx
        );
    }
    let rows = evaluate_selector(&ranks, &gts)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_report_csv(artifacts::create(&out.join("report.csv"))?, &rows)?;
    let text = format_report(&rows);
    std::fs::write(out.join("report.txt"), &text)
        .with_context(|| format!("writing {}", out.join("report.txt").display()))?;
    print!("{text}");
    Ok(text)
}

pub fn cmd_search(cfg: &RunConfig, parent: &Path) -> Result<RunResult> {
    let data = load_data(&cfg.input)?;
    let features = cfg
        .govern
        .features
        .clone()
        .unwrap_or_else(|| data.dataset.features().to_vec());
    let search = run_search(&data.dataset, &features, &cfg.govern.search, cfg.seed, &BTreeSet::new())?;
    let mut dir = RunDir::create(parent, cfg, "search")?;
    dir.write_search(&search, &cfg.govern)?;
    let run_dir = dir.finish(data.dataset.experiment_id(), cfg.seed, "searched")?;
    Ok(RunResult {
        run_dir,
        outcome: Outcome::Success,
    })
}

pub fn cmd_filter(cfg: &RunConfig, parent: &Path) -> Result<RunResult> {
    let data = load_data(&cfg.input)?;
    let features = cfg
        .govern
        .features
        .clone()
        .unwrap_or_else(|| data.dataset.features().to_vec());
    let pairs: Vec<_> = data
        .snapshots
        .iter()
        .filter(|p| features.contains(&p.feature))
        .cloned()
        .collect();
    let verdicts = StabilityVerdict::measure_all(&pairs, cfg.govern.thresholds)?;
    let (report, admitted) = pre_search_filter(&verdicts)?;
    let mut dir = RunDir::create(parent, cfg, "filter")?;
    dir.write_stability(&verdicts, &admitted)?;
    dir.write_trail(std::slice::from_ref(&report))?;
    let none_left = admitted.is_empty() && !verdicts.is_empty();
    let run_dir = dir.finish(
        data.dataset.experiment_id(),
        cfg.seed,
        if none_left { "rejected" } else { "filtered" },
    )?;
    Ok(RunResult {
        run_dir,
        outcome: if none_left { Outcome::Rejected } else { Outcome::Success },
    })
}

pub fn cmd_govern(cfg: &RunConfig, parent: &Path, policy_id: &str) -> Result<RunResult> {
    let data = load_data(&cfg.input)?;
    let features = cfg
        .govern
        .features
        .clone()
        .unwrap_or_else(|| data.dataset.features().to_vec());
    let search = run_search(&data.dataset, &features, &cfg.govern.search, cfg.seed, &BTreeSet::new())?;
    let policy = search
        .table
        .get(policy_id)
        .with_context(|| format!("policy `{policy_id}` is not in the searched table"))?;
    let instruction = cfg.govern.instruction(data.dataset.experiment_id());
    let targets = target_metrics(&instruction, data.dataset.metrics());
    let slices = cohort_policy::governance::temporal_slices(policy, &data.daily, cfg.govern.robustness_slices);
    let mut trail: Vec<HookReport> = vec![robustness_check(policy, &targets, &slices)?];
    let backtest = run_backtest(policy, &targets, &data.daily)?;
    trail.push(backtest.report.clone());
    let passed = trail.iter().all(HookReport::is_pass);
    let mut dir = RunDir::create(parent, cfg, "govern")?;
    dir.write_trail(&trail)?;
    dir.write_backtest(&backtest)?;
    let run_dir = dir.finish(
        data.dataset.experiment_id(),
        cfg.seed,
        if passed { "passed" } else { "rejected" },
    )?;
    Ok(RunResult {
        run_dir,
        outcome: if passed { Outcome::Success } else { Outcome::Rejected },
    })
}

/// Full governed run. Writes the policy table, frontier, hook trail,
/// backtest, and either `recommendation.json` or `rejection.json`.
pub fn cmd_pipeline(cfg: &RunConfig, parent: &Path) -> Result<RunResult> {
    let data = load_data(&cfg.input)?;
    let outcome = govern_pipeline(
        &cfg.govern,
        GovernInputs {
            dataset: &data.dataset,
            snapshots: &data.snapshots,
            daily: &data.daily,
        },
    )?;
    let mut dir = RunDir::create(parent, cfg, "pipeline")?;
    dir.write_stability(&outcome.verdicts, &outcome.admitted_features)?;
    if let Some(search) = &outcome.search {
        dir.write_search(search, &cfg.govern)?;
    }
    dir.write_trail(&outcome.trail)?;
    if let Some(bt) = &outcome.backtest {
        dir.write_backtest(bt)?;
    }
    if let Some(truth) = &data.truth {
        dir.write_json("planted_truth.json", &artifacts::Versioned::new(truth))?;
    }
    let status = match &outcome.recommendation {
        Some(rec) => {
            dir.write_json("recommendation.json", rec)?;
            Outcome::Success
        }
        None => {
            dir.write_json("rejection.json", &artifacts::Rejection::from_outcome(&data.dataset, &outcome))?;
            Outcome::Rejected
        }
    };
    let run_dir = dir.finish(
        data.dataset.experiment_id(),
        cfg.seed,
        if status == Outcome::Success { "recommended" } else { "rejected" },
    )?;
    Ok(RunResult {
        run_dir,
        outcome: status,
    })
}

/// Human-readable summary of a run directory.
pub fn cmd_report(run: &Path) -> Result<String> {
    artifacts::summarize(run)
}
