//! Command-line entry point.
//!
//! Subcommands: `tune` (one hyperparameter search), `bench` (a grid of
//! searches plus reports), `analyze` / `report` (read-only report
//! generation), `gen-data` (synthetic CSV), and `resume` (continue an
//! interrupted search).
//!
//! Machine-readable JSON goes to standard output; human-readable progress
//! and errors go to standard error. Exit codes: 0 success, 1 completed with
//! failures, 2 usage or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use foretune::analysis::{
    best_results_markdown, curves_markdown, importance_markdown, importance_ranking, oom_markdown,
    parallel_coordinates, parallel_coordinates_trimmed, ExperimentEntry,
};
use foretune::data::{
    dataset_to_csv, digest_bytes, gen_synthetic, load_csv_dataset, prepare, Dataset, FeaturesMode,
    SplitSpec, TaskParams, TrialContext,
};
use foretune::hyperspace::{ParamValue, SearchSpace};
use foretune::model::ModelVariant;
use foretune::scheduler::{run_experiment, run_resumable, ExperimentPlan, ExperimentResult};
use foretune::searchers::{SearcherKind, TpeKnobs};
use foretune::store::{self, load_experiment, Manifest, TrialStore};
use foretune::{exec, Error, Result};

#[derive(Parser)]
#[command(
    name = "foretune",
    version,
    about = "Hyperparameter tuning harness for desk-scale time-series forecasters"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one hyperparameter search on one dataset
    Tune(TuneArgs),
    /// Run a model × dataset grid of searches, then generate all reports
    Bench(BenchArgs),
    /// Generate report files for a stored experiment (read-only)
    Analyze(AnalyzeArgs),
    /// Build the cross-experiment best-results table
    Report(ReportArgs),
    /// Write a synthetic dataset CSV
    GenData(GenDataArgs),
    /// Continue an interrupted experiment in place
    Resume(ResumeArgs),
}

/// Task flags named after the reference library's parameter table.
#[derive(Args, Clone)]
struct TaskFlags {
    /// input sequence length
    #[arg(long = "seq_len", default_value_t = 96)]
    seq_len: usize,
    /// start token length (parsed and recorded; the heads here ignore it)
    #[arg(long = "label_len", default_value_t = 48)]
    label_len: usize,
    /// prediction sequence length
    #[arg(long = "pred_len", default_value_t = 96)]
    pred_len: usize,
    /// forecasting mode: M, S, or MS
    #[arg(long, default_value = "M")]
    features: String,
    /// target feature in S or MS task
    #[arg(long, default_value = "OT")]
    target: String,
    /// early stopping patience
    #[arg(long, default_value_t = 3)]
    patience: usize,
    /// adjust learning rate (only `type1`, halving per epoch, is supported)
    #[arg(long, default_value = "type1")]
    lradj: String,
}

impl TaskFlags {
    fn to_task(&self) -> Result<TaskParams> {
        if self.lradj != "type1" {
            return Err(Error::InvalidConfig(format!(
                "unsupported lradj `{}`; this build implements `type1`",
                self.lradj
            )));
        }
        if self.seq_len == 0 || self.pred_len == 0 {
            return Err(Error::InvalidConfig(
                "seq_len and pred_len must be at least 1".into(),
            ));
        }
        Ok(TaskParams {
            seq_len: self.seq_len,
            label_len: self.label_len,
            pred_len: self.pred_len,
            features: FeaturesMode::from_str(&self.features)?,
            target: self.target.clone(),
            patience: self.patience,
            lradj: self.lradj.clone(),
            split: SplitSpec::default(),
        })
    }
}

/// Pins that replace a tuned domain with a single value.
#[derive(Args, Clone)]
struct OverrideFlags {
    /// pin batch size instead of tuning it
    #[arg(long = "batch_size")]
    batch_size: Option<i64>,
    /// pin learning rate instead of tuning it
    #[arg(long = "learning_rate")]
    learning_rate: Option<f64>,
    /// pin training epochs instead of tuning them
    #[arg(long = "train_epochs")]
    train_epochs: Option<i64>,
}

impl OverrideFlags {
    fn build_space(&self) -> Result<SearchSpace> {
        let mut space = SearchSpace::builtin();
        if let Some(b) = self.batch_size {
            space.pin("batch_size", ParamValue::Int(b))?;
        }
        if let Some(lr) = self.learning_rate {
            space.pin("learning_rate", ParamValue::Float(lr))?;
        }
        if let Some(e) = self.train_epochs {
            space.pin("train_epochs", ParamValue::Int(e))?;
        }
        Ok(space)
    }
}

#[derive(Args, Clone)]
struct SearchFlags {
    /// search strategy: tpe, random, or grid
    #[arg(long, default_value = "tpe")]
    searcher: String,
    /// trial budget per experiment
    #[arg(long, default_value_t = 20)]
    trials: u64,
    /// master seed for the whole experiment
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// trials evaluated per scheduler batch
    #[arg(long, default_value_t = 1)]
    max_concurrent: usize,
    /// memory budget in bytes; trials estimated above it fail the gate
    #[arg(long, default_value_t = 1 << 30)]
    mem_budget: u64,
    /// fraction of completed trials forming the good density
    #[arg(long, default_value_t = 0.25)]
    tpe_gamma: f64,
    /// completed trials required before model-based suggestions
    #[arg(long, default_value_t = 5)]
    tpe_startup: usize,
    /// candidates scored per model-based suggestion
    #[arg(long, default_value_t = 24)]
    tpe_candidates: usize,
}

impl SearchFlags {
    fn kind(&self) -> Result<SearcherKind> {
        SearcherKind::from_str(&self.searcher)
    }

    fn knobs(&self) -> TpeKnobs {
        TpeKnobs {
            gamma_fraction: self.tpe_gamma,
            prior_weight: TpeKnobs::default().prior_weight,
            n_startup: self.tpe_startup,
            n_candidates: self.tpe_candidates,
            exhaustive_candidates: false,
        }
    }
}

#[derive(Args)]
struct TuneArgs {
    /// model variant: linear, mixer, or attention_lite
    #[arg(long)]
    model: String,
    /// dataset CSV file
    #[arg(long = "data_path")]
    data_path: PathBuf,
    /// directory prepended to data_path
    #[arg(long = "root_path")]
    root_path: Option<PathBuf>,
    /// experiment directory to create
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    task: TaskFlags,
    #[command(flatten)]
    overrides: OverrideFlags,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Args)]
struct BenchArgs {
    /// comma-separated model variants (default: all three)
    #[arg(long, default_value = "linear,mixer,attention_lite")]
    models: String,
    /// dataset CSV file; repeat for each dataset
    #[arg(long = "data_path", required = true, num_args = 1..)]
    data_path: Vec<PathBuf>,
    /// directory prepended to every data_path
    #[arg(long = "root_path")]
    root_path: Option<PathBuf>,
    /// output directory; one subdirectory per experiment plus report/
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    task: TaskFlags,
    #[command(flatten)]
    overrides: OverrideFlags,
    #[command(flatten)]
    search: SearchFlags,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// experiment directory holding manifest.json and trials.jsonl
    dir: PathBuf,
    /// report output directory (default: DIR/report)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// experiment directories to combine
    #[arg(long = "experiments", required = true, num_args = 1..)]
    experiments: Vec<PathBuf>,
    /// directory receiving best_results.md
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct GenDataArgs {
    /// output CSV path
    #[arg(long)]
    out: PathBuf,
    /// number of channels (the last is named OT)
    #[arg(long, default_value_t = 7)]
    channels: usize,
    /// number of rows
    #[arg(long, default_value_t = 2000)]
    timesteps: usize,
    /// seasonal period in steps
    #[arg(long, default_value_t = 24.0)]
    period: f64,
    /// Gaussian noise standard deviation
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// generator seed
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct ResumeArgs {
    /// experiment directory to continue
    dir: PathBuf,
    /// dataset CSV file (must match the digest recorded in the manifest)
    #[arg(long = "data_path")]
    data_path: PathBuf,
    /// directory prepended to data_path
    #[arg(long = "root_path")]
    root_path: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let outcome = match cli.cmd {
        Cmd::Tune(a) => cmd_tune(a),
        Cmd::Bench(a) => cmd_bench(a),
        Cmd::Analyze(a) => cmd_analyze(a),
        Cmd::Report(a) => cmd_report(a),
        Cmd::GenData(a) => cmd_gen_data(a),
        Cmd::Resume(a) => cmd_resume(a),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn resolve_path(root: Option<&Path>, path: &Path) -> PathBuf {
    match root {
        Some(r) => r.join(path),
        None => path.to_path_buf(),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Render every per-experiment report file into `out`.
fn write_experiment_reports(
    entry: &ExperimentEntry,
    space: &SearchSpace,
    out: &Path,
) -> Result<Vec<&'static str>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files = [
        ("parallel_coords.svg", parallel_coordinates(&entry.records, space)?),
        (
            "parallel_coords_trimmed.svg",
            parallel_coordinates_trimmed(&entry.records, space)?,
        ),
        (
            "importance.md",
            importance_markdown(&importance_ranking(&entry.records)?),
        ),
        ("curves.md", curves_markdown(&entry.records)),
        ("oom.md", oom_markdown(std::slice::from_ref(entry))),
    ];
    let mut names = Vec::new();
    for (name, body) in files {
        write_file(&out.join(name), &body)?;
        names.push(name);
    }
    Ok(names)
}

fn result_json(dir: &Path, result: &ExperimentResult) -> serde_json::Value {
    json!({
        "dir": dir.display().to_string(),
        "plan_digest": result.plan_digest,
        "trials": result.records.len(),
        "totals": result.totals,
        "best": result.best_record(),
    })
}

fn summarize_to_stderr(result: &ExperimentResult) {
    let t = &result.totals;
    eprintln!(
        "{} trials: {} completed, {} failed_oom, {} failed_numerical",
        result.records.len(),
        t.completed,
        t.failed_oom,
        t.failed_numerical
    );
    if let Some(b) = result.best_record() {
        eprintln!(
            "best trial {}: val_mse {:.6} val_mae {:.6} test_mse {:.6} test_mae {:.6}",
            b.trial_id,
            b.val_mse.unwrap_or(f64::NAN),
            b.val_mae.unwrap_or(f64::NAN),
            b.test_mse.unwrap_or(f64::NAN),
            b.test_mae.unwrap_or(f64::NAN)
        );
    } else {
        eprintln!("no completed trials");
    }
}

fn cmd_tune(a: TuneArgs) -> Result<u8> {
    let variant = ModelVariant::from_str(&a.model)?;
    let task = a.task.to_task()?;
    let space = a.overrides.build_space()?;
    let path = resolve_path(a.root_path.as_deref(), &a.data_path);
    let (ds, digest) = load_csv_dataset(&path, task.features, &task.target)?;
    let ctx = prepare(&ds, &task)?;
    let plan = ExperimentPlan {
        variant,
        dataset: ds.name.clone(),
        dataset_digest: digest,
        space,
        searcher: a.search.kind()?,
        knobs: a.search.knobs(),
        n_trials: a.search.trials,
        max_concurrent: a.search.max_concurrent,
        mem_budget: a.search.mem_budget,
        master_seed: a.search.seed,
        task,
    };
    plan.validate()?;
    let mut store = TrialStore::create(&a.out, Manifest::new(plan.to_plan_record()))?;
    eprintln!(
        "tuning {} on {} ({} trials, searcher {})",
        plan.variant, plan.dataset, plan.n_trials, plan.searcher
    );
    let result = run_experiment(&plan, &ctx, &mut store)?;
    summarize_to_stderr(&result);
    println!("{}", serde_json::to_string_pretty(&result_json(&a.out, &result))?);
    Ok(if result.totals.completed >= 1 { 0 } else { 1 })
}

fn cmd_resume(a: ResumeArgs) -> Result<u8> {
    let resumed = store::resume(&a.dir)?;
    let plan = ExperimentPlan::from_manifest(resumed.store.manifest())?;
    let path = resolve_path(a.root_path.as_deref(), &a.data_path);
    let (ds, digest) = load_csv_dataset(&path, plan.task.features, &plan.task.target)?;
    if digest != plan.dataset_digest {
        return Err(Error::Resume(format!(
            "dataset digest {} does not match the manifest's {}",
            digest, plan.dataset_digest
        )));
    }
    let ctx = prepare(&ds, &plan.task)?;
    if resumed.dropped_partial > 0 {
        eprintln!("dropped a partially written final record; re-running that trial");
    }
    eprintln!(
        "resuming {} on {} at trial {} of {}",
        plan.variant,
        plan.dataset,
        resumed.records.len(),
        plan.n_trials
    );
    let mut store = resumed.store;
    let result = run_resumable(&plan, &ctx, &mut store, resumed.records, None)?;
    summarize_to_stderr(&result);
    println!("{}", serde_json::to_string_pretty(&result_json(&a.dir, &result))?);
    Ok(if result.totals.completed >= 1 { 0 } else { 1 })
}

fn cmd_analyze(a: AnalyzeArgs) -> Result<u8> {
    let loaded = load_experiment(&a.dir)?;
    if loaded.dropped_partial > 0 {
        eprintln!("ignoring a partially written final record");
    }
    let plan = &loaded.manifest.plan;
    let space = SearchSpace::from_text(&plan.space_text)?;
    let entry = ExperimentEntry {
        variant: plan.variant,
        dataset: plan.dataset.clone(),
        records: loaded.records,
    };
    let out = a.out.unwrap_or_else(|| a.dir.join(store::REPORT_DIR));
    let files = write_experiment_reports(&entry, &space, &out)?;
    eprintln!("wrote {} report files to {}", files.len(), out.display());
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "dir": a.dir.display().to_string(),
            "out": out.display().to_string(),
            "files": files,
            "trials": entry.records.len(),
        }))?
    );
    Ok(0)
}

fn load_entries(dirs: &[PathBuf]) -> Result<Vec<ExperimentEntry>> {
    dirs.iter()
        .map(|dir| {
            let loaded = load_experiment(dir)?;
            Ok(ExperimentEntry {
                variant: loaded.manifest.plan.variant,
                dataset: loaded.manifest.plan.dataset.clone(),
                records: loaded.records,
            })
        })
        .collect()
}

fn cmd_report(a: ReportArgs) -> Result<u8> {
    let entries = load_entries(&a.experiments)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join("best_results.md");
    write_file(&path, &best_results_markdown(&entries))?;
    eprintln!("wrote {}", path.display());
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "out": path.display().to_string(),
            "experiments": entries.len(),
        }))?
    );
    Ok(0)
}

fn cmd_gen_data(a: GenDataArgs) -> Result<u8> {
    let name = a
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "synthetic".into());
    let ds = gen_synthetic(&name, a.channels, a.timesteps, a.period, a.noise, a.seed)?;
    let csv = dataset_to_csv(&ds);
    write_file(&a.out, &csv)?;
    eprintln!(
        "wrote {} ({} channels, {} timesteps)",
        a.out.display(),
        a.channels,
        a.timesteps
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "path": a.out.display().to_string(),
            "channels": a.channels,
            "timesteps": a.timesteps,
            "digest": digest_bytes(csv.as_bytes()),
        }))?
    );
    Ok(0)
}

/// One cell of the bench grid, run start to finish.
struct BenchCell {
    variant: ModelVariant,
    dataset_name: String,
    dir: PathBuf,
    outcome: Result<ExperimentResult>,
}

fn run_bench_cell(
    variant: ModelVariant,
    ds: &Dataset,
    digest: &str,
    ctx: &TrialContext,
    a: &BenchArgs,
    task: &TaskParams,
) -> BenchCell {
    let dir = a.out.join(format!("{}_{}", variant, ds.name));
    let outcome = (|| {
        let plan = ExperimentPlan {
            variant,
            dataset: ds.name.clone(),
            dataset_digest: digest.to_string(),
            space: a.overrides.build_space()?,
            searcher: a.search.kind()?,
            knobs: a.search.knobs(),
            n_trials: a.search.trials,
            // experiments parallelize across the grid; trials stay sequential
            max_concurrent: 1,
            mem_budget: a.search.mem_budget,
            master_seed: a.search.seed,
            task: task.clone(),
        };
        plan.validate()?;
        let mut store = TrialStore::create(&dir, Manifest::new(plan.to_plan_record()))?;
        let result = run_experiment(&plan, ctx, &mut store)?;
        let entry = ExperimentEntry {
            variant,
            dataset: ds.name.clone(),
            records: result.records.clone(),
        };
        write_experiment_reports(&entry, &plan.space, &store.report_dir())?;
        Ok(result)
    })();
    BenchCell { variant, dataset_name: ds.name.clone(), dir, outcome }
}

fn cmd_bench(a: BenchArgs) -> Result<u8> {
    let variants: Vec<ModelVariant> = a
        .models
        .split(',')
        .map(|s| ModelVariant::from_str(s.trim()))
        .collect::<Result<_>>()?;
    if variants.is_empty() {
        return Err(Error::InvalidConfig("at least one model required".into()));
    }
    let task = a.task.to_task()?;
    a.overrides.build_space()?; // fail fast on bad pins before any training
    a.search.kind()?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;

    // Load every dataset up front; a missing file fails its whole column but
    // the other experiments still run.
    let mut datasets: Vec<std::result::Result<(Dataset, String, TrialContext), String>> =
        Vec::new();
    for p in &a.data_path {
        let path = resolve_path(a.root_path.as_deref(), p);
        let loaded = load_csv_dataset(&path, task.features, &task.target)
            .and_then(|(ds, digest)| {
                let ctx = prepare(&ds, &task)?;
                Ok((ds, digest, ctx))
            })
            .map_err(|e| format!("{}: {e}", path.display()));
        datasets.push(loaded);
    }

    // All (variant, dataset) pairs, dataset-major so reports group naturally.
    let grid: Vec<(ModelVariant, usize)> = datasets
        .iter()
        .enumerate()
        .flat_map(|(di, _)| variants.iter().map(move |v| (*v, di)))
        .collect();

    let mut cells: Vec<BenchCell> = Vec::new();
    let mut dataset_errors: Vec<String> = Vec::new();
    for (di, loaded) in datasets.iter().enumerate() {
        if let Err(e) = loaded {
            eprintln!("skipping dataset {di}: {e}");
            dataset_errors.push(e.clone());
        }
    }
    let runnable: Vec<&(ModelVariant, usize)> =
        grid.iter().filter(|(_, di)| datasets[*di].is_ok()).collect();
    for chunk in runnable.chunks(a.search.max_concurrent.max(1)) {
        let batch = exec::map_collect(chunk, |&&(variant, di)| {
            let (ds, digest, ctx) = datasets[di].as_ref().expect("filtered to ok");
            run_bench_cell(variant, ds, digest, ctx, &a, &task)
        });
        cells.extend(batch);
    }

    let mut failures = dataset_errors.len();
    let mut total_trials = 0usize;
    let mut entries: Vec<ExperimentEntry> = Vec::new();
    let mut cell_reports = Vec::new();
    for cell in &cells {
        match &cell.outcome {
            Ok(result) => {
                total_trials += result.records.len();
                entries.push(ExperimentEntry {
                    variant: cell.variant,
                    dataset: cell.dataset_name.clone(),
                    records: result.records.clone(),
                });
                eprintln!(
                    "{} on {}: {} trials, {} completed",
                    cell.variant,
                    cell.dataset_name,
                    result.records.len(),
                    result.totals.completed
                );
                cell_reports.push(json!({
                    "model": cell.variant.as_str(),
                    "dataset": cell.dataset_name,
                    "dir": cell.dir.display().to_string(),
                    "totals": result.totals,
                    "trials": result.records.len(),
                    "best": result.best_record(),
                }));
            }
            Err(e) => {
                failures += 1;
                eprintln!("{} on {} aborted: {e}", cell.variant, cell.dataset_name);
                cell_reports.push(json!({
                    "model": cell.variant.as_str(),
                    "dataset": cell.dataset_name,
                    "dir": cell.dir.display().to_string(),
                    "error": e.to_string(),
                }));
            }
        }
    }

    let report_dir = a.out.join(store::REPORT_DIR);
    std::fs::create_dir_all(&report_dir).map_err(|e| Error::io(&report_dir, e))?;
    write_file(&report_dir.join("best_results.md"), &best_results_markdown(&entries))?;
    write_file(&report_dir.join("oom.md"), &oom_markdown(&entries))?;

    eprintln!(
        "{} experiments × {} trials each: {} trials total, {} aborted",
        cells.len(),
        a.search.trials,
        total_trials,
        failures
    );
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "experiments": cell_reports,
            "dataset_errors": dataset_errors,
            "total_trials": total_trials,
            "report_dir": report_dir.display().to_string(),
        }))?
    );
    Ok(if failures > 0 { 1 } else { 0 })
}
