//! Command-line harness.
//!
//! Output layout under `--out`:
//!
//! ```text
//! interactions.csv                 synth
//! prepared/examples.csv            prepare
//! prepared/{scaler.json,id_maps.csv,cohort.json}
//! central/{history.csv,summary.json,importance.csv,ensemble.gbdt}
//! fed/<run>/{history.csv,summary.json,model.fedrec}
//! comparison.txt, comparison.json  compare
//! ```
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 data error,
//! 4 runtime error.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{self, StudentSkillExample};
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig};
use crate::fed::{StrategyKind, DECISION_THRESHOLD};
use crate::metrics::RoundMetrics;
use crate::model::{self, ModelParams};
use crate::report::{self, HistoryWriter, RunSummary};

#[derive(Debug, Parser)]
#[command(
    name = "fedrec",
    version,
    about = "Federated vs. centralized student-success prediction"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `out_dir` from the config.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Global seed; overrides every seed in the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic interaction log.
    Synth(CommonArgs),
    /// Filter, engineer and scale the interaction log.
    Prepare(CommonArgs),
    /// Train the centralized boosted-tree baseline.
    Central(CommonArgs),
    /// Run every federated strategy in the config.
    Fed(CommonArgs),
    /// Tabulate completed runs.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Run directories; defaults to every run under the output directory.
        runs: Vec<PathBuf>,
    },
    /// Score a saved federated model on an example table.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Checkpoint written by `fed`.
        #[arg(long)]
        model: PathBuf,
        /// Example table; defaults to `prepared/examples.csv`.
        #[arg(long)]
        examples: Option<PathBuf>,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Synth(c) | Command::Prepare(c) | Command::Central(c) | Command::Fed(c) => c,
            Command::Compare { common, .. } | Command::Eval { common, .. } => common,
        }
    }
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InvalidConfig(_) | Error::Path { .. } => 2,
        Error::MissingColumn(_)
        | Error::EmptyInput
        | Error::EmptyAfterFilter
        | Error::DegenerateLabels
        | Error::Malformed { .. }
        | Error::MissingRun(_)
        | Error::Csv(_) => 3,
        _ => 4,
    }
}

pub fn resolve_config(common: &CommonArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(cli.command.common())?;
    match cli.command {
        Command::Synth(_) => cmd_synth(&cfg).map(|_| ()),
        Command::Prepare(_) => cmd_prepare(&cfg).map(|_| ()),
        Command::Central(_) => cmd_central(&cfg).map(|_| ()),
        Command::Fed(_) => cmd_fed(&cfg).map(|_| ()),
        Command::Compare { runs, .. } => cmd_compare(&cfg, &runs).map(|_| ()),
        Command::Eval {
            model, examples, ..
        } => cmd_eval(&cfg, &model, examples.as_deref()),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::path(path, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::path(path, e))
}

fn config_json(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(cfg)?)
}

pub fn prepared_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.join("prepared")
}

pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let log = data::synthesize_log(&cfg.data.synthetic)?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("interactions.csv");
    log.write_csv(create_file(&path)?)?;
    println!(
        "wrote {} interactions for {} users and {} skills to {}",
        log.len(),
        log.num_users(),
        log.num_skills(),
        path.display()
    );
    Ok(path)
}

pub fn cmd_prepare(cfg: &ExperimentConfig) -> Result<experiment::PreparedData> {
    let prepared = experiment::prepare(cfg)?;
    let dir = prepared_dir(cfg);
    create_dir(&dir)?;
    data::write_examples_csv(create_file(&dir.join("examples.csv"))?, &prepared.examples)?;
    prepared
        .maps
        .write_csv(create_file(&dir.join("id_maps.csv"))?)?;
    let mut scaler = serde_json::to_string_pretty(&prepared.scaler)?;
    scaler.push('\n');
    fs::write(dir.join("scaler.json"), scaler)?;
    let mut cohort = serde_json::to_string_pretty(&prepared.cohort)?;
    cohort.push('\n');
    fs::write(dir.join("cohort.json"), cohort)?;
    let c = &prepared.cohort;
    println!(
        "users={} skills={} examples={} positive_rate={:.4} (raw interactions {}, dropped rows {})",
        c.users, c.skills, c.examples, c.positive_rate, c.raw_interactions, c.dropped_rows
    );
    Ok(prepared)
}

pub fn load_prepared(cfg: &ExperimentConfig) -> Result<Vec<StudentSkillExample>> {
    let path = prepared_dir(cfg).join("examples.csv");
    let file = File::open(&path).map_err(|_| {
        Error::malformed(
            "prepared dataset",
            format!("{} not found; run `fedrec prepare` first", path.display()),
        )
    })?;
    data::read_examples_csv(BufReader::new(file))
}

fn write_history_file(path: &Path, rounds: &[RoundMetrics]) -> Result<()> {
    let w = report::write_history(create_file(path)?, rounds)?;
    w.into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .sync_all()?;
    Ok(())
}

pub fn cmd_central(cfg: &ExperimentConfig) -> Result<RunSummary> {
    let examples = load_prepared(cfg)?;
    let outcome = experiment::run_central(&examples, cfg)?;
    let dir = cfg.out_dir.join("central");
    create_dir(&dir)?;
    write_history_file(&dir.join(report::HISTORY_FILE), &outcome.rounds)?;
    report::write_importance(
        create_file(&dir.join("importance.csv"))?,
        &outcome.importance,
    )?;
    outcome
        .ensemble
        .write_text(create_file(&dir.join("ensemble.gbdt"))?)?;
    let summary = RunSummary::new(
        "central",
        "central",
        None,
        outcome.rounds.len(),
        outcome.f1_summary(),
        config_json(cfg)?,
    );
    report::write_summary(&dir, &summary)?;
    print_summary(&summary);
    Ok(summary)
}

fn print_summary(s: &RunSummary) {
    match (s.best_f1, s.best_round, s.mean_f1, s.std_f1) {
        (Some(b), Some(r), Some(m), Some(sd)) => println!(
            "{}: best_f1={b:.4} at round {r}, mean_f1={m:.4}, std_f1={sd:.4}",
            s.run
        ),
        _ => println!("{}: no rounds recorded", s.run),
    }
}

pub fn cmd_fed(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    let examples = load_prepared(cfg)?;
    let mut summaries = Vec::new();
    for strategy in cfg.strategies() {
        let name = strategy.run_name();
        let dir = cfg.out_dir.join("fed").join(&name);
        create_dir(&dir)?;
        // A stale summary must not outlive a rerun that is interrupted.
        let _ = fs::remove_file(dir.join(report::SUMMARY_FILE));
        let mut history = HistoryWriter::create(&dir.join(report::HISTORY_FILE))?;
        let (run, params) = experiment::run_federated_with(&examples, cfg, &strategy, |m| {
            history.append(&m.metrics)
        })?;
        history.into_inner()?.flush()?;
        params.write_checkpoint(create_file(&dir.join("model.fedrec"))?)?;

        let mut run_cfg = config_json(cfg)?;
        run_cfg["strategy"] = serde_json::to_value(&strategy)?;
        let mut summary = RunSummary::new(
            name,
            match strategy.kind {
                StrategyKind::FedAvg => "fedavg",
                StrategyKind::FedProx => "fedprox",
            },
            Some(strategy.mu),
            run.rounds.len(),
            run.f1_summary,
            run_cfg,
        );
        let weighted: Vec<(usize, f64)> = run
            .rounds
            .iter()
            .map(|r| (r.metrics.round, r.weighted_f1))
            .collect();
        summary.weighted_f1 = crate::metrics::summarize(&weighted).ok();
        report::write_summary(&dir, &summary)?;
        print_summary(&summary);
        summaries.push(summary);
    }
    Ok(summaries)
}

fn discover_runs(out: &Path) -> Vec<PathBuf> {
    let mut runs = Vec::new();
    let central = out.join("central");
    if central.join(report::SUMMARY_FILE).exists() {
        runs.push(central);
    }
    if let Ok(entries) = fs::read_dir(out.join("fed")) {
        let mut fed: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(report::SUMMARY_FILE).exists())
            .collect();
        fed.sort();
        runs.extend(fed);
    }
    runs
}

pub fn cmd_compare(cfg: &ExperimentConfig, runs: &[PathBuf]) -> Result<report::ComparisonReport> {
    let dirs = if runs.is_empty() {
        discover_runs(&cfg.out_dir)
    } else {
        runs.to_vec()
    };
    if dirs.is_empty() {
        return Err(Error::MissingRun(cfg.out_dir.clone()));
    }
    let summaries = dirs
        .iter()
        .map(|d| report::read_summary(d))
        .collect::<Result<Vec<_>>>()?;
    let cmp = report::compare(&summaries)?;
    create_dir(&cfg.out_dir)?;
    let text = cmp.to_text();
    report::write_atomic(&cfg.out_dir.join("comparison.txt"), text.as_bytes())?;
    let mut json = serde_json::to_string_pretty(&cmp)?;
    json.push('\n');
    report::write_atomic(&cfg.out_dir.join("comparison.json"), json.as_bytes())?;
    print!("{text}");
    Ok(cmp)
}

pub fn cmd_eval(cfg: &ExperimentConfig, model_path: &Path, examples: Option<&Path>) -> Result<()> {
    let params = ModelParams::read_checkpoint(BufReader::new(
        File::open(model_path).map_err(|e| Error::path(model_path, e))?,
    ))?;
    let rows = match examples {
        Some(p) => data::read_examples_csv(BufReader::new(
            File::open(p).map_err(|e| Error::path(p, e))?,
        ))?,
        None => load_prepared(cfg)?,
    };
    let (loss, counts) = model::evaluate(&params, &rows, DECISION_THRESHOLD)?;
    let m = RoundMetrics::from_counts(0, &counts, loss, 0)?;
    println!(
        "examples={} accuracy={:.4} precision={:.4} recall={:.4} f1={:.4} loss={:.4}",
        m.num_eval_examples, m.accuracy, m.precision, m.recall, m.f1, m.loss
    );
    Ok(())
}
