mod config;
mod fetch;

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};
use mcq_eval::runner::{emit_report, load_dataset, read_machine_table, render_human_table, DatasetSource, TableRow};
use mcq_eval::{build_plan, run_matrix, score_item, DatasetId, McqItem, Method, TemplateConfig};
use serde::Serialize;

use config::{BackendSpec, FileConfig, RunFlags, Unreachable, DATA_ROOT_ENV};

const EXIT_CONFIG: u8 = 2;
const EXIT_UNREACHABLE: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

/// Multiple-choice evaluation of language models by option log-likelihood.
#[derive(Debug, Parser)]
#[command(name = "mcq-eval", version)]
struct Cli {
    /// Log progress to stderr (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Download the dev splits into the data root and pin their checksums.
    Fetch(FetchArgs),
    /// Print the scoring prompts for the first N items of a dataset as JSON lines.
    PrintPrompts(PrintPromptsArgs),
    /// Score a single inline item and print per-option scores.
    ScoreOne(ScoreOneArgs),
    /// Evaluate every (method, dataset) cell for one model and write reports.
    Run(RunArgs),
    /// Render the accuracy table from one or more results.csv files.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct FetchArgs {
    /// Comma list of datasets; all when omitted.
    #[arg(long)]
    dataset: Vec<String>,
    #[arg(long, env = DATA_ROOT_ENV)]
    data_root: PathBuf,
    /// Only check files already on disk against the pinned checksums.
    #[arg(long)]
    verify: bool,
}

#[derive(Debug, Args)]
struct PrintPromptsArgs {
    /// Dataset name or file=PATH of normalized items.
    #[arg(long)]
    dataset: DatasetSource,
    #[arg(long)]
    method: Method,
    /// Number of items to print.
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    null_context: Option<String>,
    #[arg(long)]
    copa_connective: Option<String>,
}

#[derive(Debug, Args)]
struct ScoreOneArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    backend: BackendSpec,
    #[arg(long, default_value = "zs")]
    method: Method,
    /// Dataset whose prompt style to use.
    #[arg(long)]
    dataset: DatasetId,
    #[arg(long)]
    stem: String,
    /// Answer option; repeat for each one.
    #[arg(long = "option")]
    options: Vec<String>,
    #[arg(long)]
    null_context: Option<String>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<String>,
    /// Comma list of zs, ca, pe, full.
    #[arg(long)]
    method: Option<Vec<String>>,
    /// Comma list of copa, csqa, obqa, piqa, siqa or file=PATH.
    #[arg(long)]
    dataset: Option<Vec<String>>,
    /// http=URL or fixture=PATH.
    #[arg(long)]
    backend: Option<String>,
    #[arg(long)]
    data_root: Option<PathBuf>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    concurrency: Option<usize>,
    /// Context for the calibration prompt under CA.
    #[arg(long)]
    null_context: Option<String>,
    /// COPA connective: default, because or so.
    #[arg(long)]
    copa_connective: Option<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// results.csv files or run output directories.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
}

/// Marks an error that should exit with a specific code.
#[derive(Debug)]
struct Exit(u8, anyhow::Error);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:#}", self.1)
    }
}

impl std::error::Error for Exit {}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Fetch(args) => cmd_fetch(args),
        Command::PrintPrompts(args) => cmd_print_prompts(args),
        Command::ScoreOne(args) => cmd_score_one(args),
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            let code = if let Some(Exit(code, _)) = err.downcast_ref::<Exit>() {
                *code
            } else if err.downcast_ref::<Unreachable>().is_some() {
                EXIT_UNREACHABLE
            } else {
                EXIT_CONFIG
            };
            eprintln!("error: {err:#}");
            ExitCode::from(code)
        }
    }
}

fn cmd_fetch(args: FetchArgs) -> Result<ExitCode> {
    let datasets: Vec<DatasetId> =
        if args.dataset.is_empty() { DatasetId::ALL.to_vec() } else { config::parse_list(&args.dataset)? };
    for dataset in datasets {
        if args.verify {
            fetch::verify(dataset, &args.data_root)?;
            println!("{dataset}\tok");
        } else {
            let written = fetch::fetch(dataset, &args.data_root).map_err(|e| {
                if e.downcast_ref::<ureq::Error>().is_some() { anyhow!(Unreachable(format!("{e:#}"))) } else { e }
            })?;
            for path in written {
                println!("{dataset}\t{}", path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct PromptLine<'a> {
    item: &'a str,
    option: usize,
    role: String,
    context: &'a str,
    continuation: &'a str,
}

fn cmd_print_prompts(args: PrintPromptsArgs) -> Result<ExitCode> {
    let load = config::load_options(args.copa_connective.as_deref())?;
    let data = load_dataset(&args.dataset, config::data_root(args.data_root).as_deref(), load)?;
    let templates = TemplateConfig::with_null_context(args.null_context.unwrap_or_default());

    let mut out = io::stdout().lock();
    for item in data.items.iter().take(args.n) {
        let plan = build_plan(item, args.method, &templates)?;
        for (option, planned) in plan.options.iter().enumerate() {
            for prompt in std::iter::once(&planned.numerator).chain(&planned.denominator) {
                let line = PromptLine {
                    item: &item.id,
                    option,
                    role: prompt.role.to_string(),
                    context: &prompt.context,
                    continuation: &prompt.continuation,
                };
                serde_json::to_writer(&mut out, &line)?;
                out.write_all(b"\n")?;
            }
        }
    }
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct OptionLine<'a> {
    option: &'a str,
    raw: f64,
    null: Option<f64>,
    #[serde(rename = "final")]
    final_score: f64,
    tokens: usize,
}

#[derive(Serialize)]
struct ScoreOneOutput<'a> {
    model: &'a str,
    method: Method,
    options: Vec<OptionLine<'a>>,
    pred: usize,
}

fn cmd_score_one(args: ScoreOneArgs) -> Result<ExitCode> {
    let item = McqItem::new("inline", args.dataset, &args.stem, args.options.clone(), 0)?;
    let backend = args.backend.connect(&args.model, args.cache_dir.as_deref())?;
    let templates = TemplateConfig::with_null_context(args.null_context.unwrap_or_default());
    let scored = score_item(&item, args.method, &args.model, &*backend, &templates)
        .map_err(|e| Exit(EXIT_UNREACHABLE, anyhow!(e)))?;

    let output = ScoreOneOutput {
        model: &args.model,
        method: args.method,
        options: item
            .options
            .iter()
            .zip(&scored.options)
            .map(|(text, s)| OptionLine {
                option: text,
                raw: s.raw_logprob,
                null: s.null_logprob,
                final_score: s.final_score,
                tokens: s.token_count,
            })
            .collect(),
        pred: scored.predicted,
    };
    println!("{}", serde_json::to_string_pretty(&output)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let flags = RunFlags {
        model: args.model,
        method: args.method,
        dataset: args.dataset,
        backend: args.backend,
        data_root: args.data_root,
        cache_dir: args.cache_dir,
        out: args.out,
        concurrency: args.concurrency,
        null_context: args.null_context,
        copa_connective: args.copa_connective,
    };
    let run = match config::resolve_run(flags, file) {
        Ok(run) => run,
        Err(err) => {
            let mut cmd = Cli::command();
            cmd.build();
            let usage = cmd.find_subcommand_mut("run").map(|c| c.render_usage().to_string()).unwrap_or_default();
            return Err(anyhow!("{err:#}\n\n{usage}"));
        }
    };

    let backend = run.backend.connect(&run.config.model_id, run.cache_dir.as_deref())?;
    let summary = run_matrix(&run.config, &*backend)?;
    let files = emit_report(&summary, &run.out)
        .with_context(|| format!("writing reports to {}", run.out.display()))
        .map_err(|e| Exit(1, e))?;

    for note in &summary.notes {
        log::warn!("{note}");
    }
    println!("{}", files.machine_table.display());
    println!("{}", files.human_table.display());
    if summary.succeeded() {
        return Ok(ExitCode::SUCCESS);
    }
    for failure in &summary.failures {
        eprintln!("failed: {failure}");
    }
    if let Some(manifest) = &files.failure_manifest {
        println!("{}", manifest.display());
    }
    Ok(ExitCode::from(if summary.failures.iter().any(|f| f.backend_unreachable) {
        EXIT_UNREACHABLE
    } else {
        EXIT_PARTIAL
    }))
}

fn results_file(input: &Path) -> PathBuf {
    if input.is_dir() {
        input.join("results.csv")
    } else {
        input.to_path_buf()
    }
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let mut rows: Vec<TableRow> = Vec::new();
    for input in &args.inputs {
        let path = results_file(input);
        if !path.is_file() {
            bail!("{} not found", path.display());
        }
        rows.extend(read_machine_table(&path).with_context(|| format!("reading {}", path.display()))?);
    }
    print!("{}", render_human_table(&rows));
    Ok(ExitCode::SUCCESS)
}

