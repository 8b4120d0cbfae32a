//! `grape`: benchmark runs, reports and simulated-world utilities.
//!
//! Exit codes: 0 success, 1 when some prompts failed or the run stopped
//! early, 2 for configuration and startup errors.

mod logging;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use grape::model::load_prompt_set;
use grape::planner::PlannerMode;
use grape::runner::{build_report, run_benchmark, FileConfig, ModeSelection, Resume, RunControl, RunError, RunSpec};

#[derive(Parser)]
#[command(name = "grape", version, about = "Generate-plan-edit pipeline runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the base and/or GraPE pipeline over a prompt set.
    Run(RunArgs),
    /// Compare scored runs.
    Report(ReportArgs),
    /// Inspect the simulated world.
    #[command(subcommand)]
    Simulate(simulate::SimCommand),
}

#[derive(Args)]
struct RunArgs {
    /// TOML or JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// JSONL prompt set.
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, value_parser = ["base", "grape", "both"])]
    mode: Option<String>,
    #[arg(long, value_parser = ["structured", "naive"])]
    planner: Option<String>,
    /// Concurrent prompts.
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    max_edit_steps: Option<u32>,
    /// Run seed; repeat for several runs.
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Score every image with the VQA backend.
    #[arg(long, overrides_with = "no_score")]
    score: bool,
    #[arg(long, overrides_with = "score")]
    no_score: bool,
    /// Continue a run directory, or the latest run with this label.
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    resume: Option<String>,
    /// Overrides the configured run label.
    #[arg(long)]
    label: Option<String>,
    /// Plan again on the final image after the plan is exhausted.
    #[arg(long)]
    replan: bool,
    /// Accept ConceptMix prompts with any K.
    #[arg(long)]
    allow_any_k: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories to merge.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Directory for the CSV tables.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the report as JSON instead of tables.
    #[arg(long)]
    json: bool,
}

fn main() -> ExitCode {
    logging::init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let code = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Report(args) => cmd_report(args),
        Command::Simulate(cmd) => simulate::run(cmd),
    };
    ExitCode::from(code)
}

fn config_for(args: &RunArgs) -> Result<FileConfig, RunError> {
    let mut config = FileConfig::load(&args.config)?;
    let run = &mut config.run;
    if let Some(m) = &args.mode {
        run.mode = m.parse::<ModeSelection>().map_err(RunError::Config)?;
    }
    if let Some(p) = &args.planner {
        run.planner_mode = p.parse::<PlannerMode>().map_err(RunError::Config)?;
    }
    if let Some(j) = args.jobs {
        run.jobs = j;
    }
    if let Some(n) = args.max_edit_steps {
        run.max_edit_steps = n;
    }
    if !args.seeds.is_empty() {
        run.seeds = args.seeds.clone();
    }
    if args.score {
        run.score = true;
    }
    if args.no_score {
        run.score = false;
    }
    if args.replan {
        run.replan = true;
    }
    if let Some(l) = &args.label {
        run.label = l.clone();
    }
    config.validate()?;
    Ok(config)
}

fn cmd_run(args: RunArgs) -> u8 {
    let started = (|| -> Result<_, RunError> {
        let config = config_for(&args)?;
        let prompts =
            load_prompt_set(&args.prompts, args.allow_any_k).map_err(|e| RunError::Config(e.to_string()))?;
        let spec = RunSpec::from_file_config(&config)?;
        Ok((spec, prompts))
    })();
    let (spec, prompts) = match started {
        Ok(s) => s,
        Err(e) => {
            log::error!("{e}");
            return 2;
        }
    };
    let resume = args.resume.as_deref().map(|r| match r {
        "" => Resume::Latest,
        dir => Resume::Dir(dir.into()),
    });
    log::info!(
        "running {} prompts, seeds {:?}, mode {:?}, planner {}",
        prompts.len(),
        spec.run.seeds,
        spec.run.mode,
        spec.run.planner_mode
    );
    match run_benchmark(&spec, &prompts, resume, &RunControl::default()) {
        Ok(outcome) => {
            println!("{}", outcome.run_dir.display());
            log::info!(
                "{} traces written, {} already present, {} failed",
                outcome.completed,
                outcome.skipped,
                outcome.failed
            );
            outcome.exit_code() as u8
        }
        Err(e) => {
            log::error!("{e}");
            2
        }
    }
}

fn cmd_report(args: ReportArgs) -> u8 {
    let report = match build_report(&args.runs) {
        Ok(r) => r,
        Err(e) => {
            log::error!("{e}");
            return 2;
        }
    };
    if let Some(out) = &args.out {
        if let Err(e) = report.write_csvs(out) {
            log::error!("{e}");
            return 2;
        }
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
    } else {
        print!("{}", report.render());
    }
    0
}
