use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use scl_cli::{
    cmd_gen_suite, cmd_run, cmd_suite, cmd_trace, parse_faults, parse_seeds, Overrides, RunOptions, SuiteOptions,
    EXIT_ERROR, EXIT_OK,
};

#[derive(Parser)]
#[command(name = "scl", version, about = "Run structured-cognitive-loop scenarios and audit their traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Shared {
    /// Fault injection: `none`, `all=<p>`, or `<kind>=<p>,...`
    /// (duplicate, missing_arg, uncited_claim, premature_action, false_citation)
    #[arg(long)]
    faults: Option<String>,
    /// Cycle budget override
    #[arg(long)]
    max_cycles: Option<u32>,
    /// Baseline context capacity in fact slots
    #[arg(long)]
    baseline_budget: Option<usize>,
    /// Baseline per-cycle recall decay
    #[arg(long)]
    baseline_decay: Option<f64>,
}

impl Shared {
    fn overrides(&self) -> Result<Overrides> {
        Ok(Overrides {
            faults: self.faults.as_deref().map(parse_faults).transpose()?,
            max_cycles: self.max_cycles,
            baseline_budget: self.baseline_budget,
            baseline_decay: self.baseline_decay,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario (a path or a shipped scenario name)
    Run {
        scenario: String,
        /// Also run the context-limited baseline
        #[arg(long)]
        compare: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        shared: Shared,
        /// Output directory for traces and the report
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run every scenario in a directory, SCL and baseline, and aggregate metrics
    Suite {
        dir: PathBuf,
        /// Seeds, e.g. `1-5` or `1,3,7`; defaults to each scenario's seed
        #[arg(long)]
        seeds: Option<String>,
        #[command(flatten)]
        shared: Shared,
        /// Directory for per-episode traces and suite_report.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print justification chains from a trace file
    Trace {
        file: PathBuf,
        /// Executed action: a cycle (`3`, `cycle3`) or memory key (`act.book_flight`)
        action: Option<String>,
        /// Recompute the metrics report from the trace instead
        #[arg(long)]
        metrics: bool,
    },
    /// Regenerate the 50-scenario evaluation suite
    GenSuite {
        #[arg(default_value = "scenarios/suite")]
        dir: PathBuf,
    },
}

fn run(cli: Cli) -> Result<i32> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Run {
            scenario,
            compare,
            seed,
            shared,
            out: dir,
        } => {
            let opts = RunOptions {
                compare,
                seed,
                overrides: shared.overrides()?,
                out: dir,
            };
            cmd_run(&scenario, &opts, &mut out)
        }
        Command::Suite {
            dir,
            seeds,
            shared,
            out: report_dir,
        } => {
            let opts = SuiteOptions {
                seeds: seeds.as_deref().map(parse_seeds).transpose()?.unwrap_or_default(),
                overrides: shared.overrides()?,
                out: report_dir,
            };
            cmd_suite(&dir, &opts, &mut out)?;
            Ok(EXIT_OK)
        }
        Command::Trace { file, action, metrics } => cmd_trace(&file, action.as_deref(), metrics, &mut out),
        Command::GenSuite { dir } => {
            cmd_gen_suite(&dir, &mut out)?;
            Ok(EXIT_OK)
        }
    }
}

/// Output piped into e.g. `head` that closes early is not an error.
fn is_broken_pipe(e: &anyhow::Error) -> bool {
    e.chain()
        .filter_map(|c| c.downcast_ref::<std::io::Error>())
        .any(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
}

fn main() -> ExitCode {
    let code = match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if is_broken_pipe(&e) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    };
    ExitCode::from(code as u8)
}
