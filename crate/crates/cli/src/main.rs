use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pact_core::counter::{LogBase, RefineFailure, Refinement};
use pact_core::harness::corpus::{generate_corpus, write_corpus};
use pact_core::harness::{self, Mode, ProjectionSource, ResultRecord, RunConfig, Status};
use pact_core::oracle::{DEFAULT_SOLVER_CMD, SOLVER_ENV};
use pact_core::HashFamily;

#[derive(Parser)]
#[command(name = "pact", version, about = "Projected approximate model counting for SMT-LIB formulas")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Approximate projected model count of one script.
    Count {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Exact projected count by enumerating models.
    Baseline {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Stop after this many models.
        #[arg(long)]
        cap: Option<u64>,
    },
    /// Baseline and count on every instance of a list; writes
    /// records.jsonl, cactus.csv and accuracy.csv into --out.
    Bench {
        list: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        cap: Option<u64>,
        /// Instances run concurrently (0 = one per core).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Writes generated instances with known counts and an instances.txt.
    Corpus {
        dir: PathBuf,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, default_value_t = 12)]
        width: u32,
        #[arg(long, default_value_t = 100)]
        min: u64,
        #[arg(long, default_value_t = 500)]
        max: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct Common {
    /// Projection variables: comma separated names, or @file with one per line.
    /// Defaults to the script's `; projected-vars:` comment.
    #[arg(long)]
    project: Option<String>,
    #[arg(long, default_value_t = 0.8)]
    epsilon: f64,
    #[arg(long, default_value_t = 0.2)]
    delta: f64,
    #[arg(long, value_enum, default_value_t = FamilyArg::Xor)]
    family: FamilyArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = SOLVER_ENV, default_value = DEFAULT_SOLVER_CMD)]
    solver_cmd: String,
    /// Seconds for the whole run.
    #[arg(long, default_value_t = 3600.0)]
    timeout: f64,
    /// Output file (count, baseline) or directory (bench).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append every solver command and response to this file.
    #[arg(long)]
    transcript: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = LogBaseArg::Two)]
    log_base: LogBaseArg,
    /// How the last hash is coarsened.
    #[arg(long, value_enum, default_value_t = RefineArg::Decrement)]
    refine: RefineArg,
    /// Abort instead of keeping the coarsest exact candidate when
    /// refinement keeps failing.
    #[arg(long)]
    strict_refine: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FamilyArg {
    Xor,
    Prime,
    Shift,
}

#[derive(Clone, Copy, ValueEnum)]
enum LogBaseArg {
    Two,
    E,
}

#[derive(Clone, Copy, ValueEnum)]
enum RefineArg {
    Decrement,
    Halve,
}

impl Common {
    fn config(self, mode: Mode, input: PathBuf) -> RunConfig {
        RunConfig {
            mode,
            inputs: vec![input],
            projection: self.project.as_deref().map_or(ProjectionSource::Hint, ProjectionSource::parse),
            epsilon: self.epsilon,
            delta: self.delta,
            family: match self.family {
                FamilyArg::Xor => HashFamily::Xor,
                FamilyArg::Prime => HashFamily::Prime,
                FamilyArg::Shift => HashFamily::Shift,
            },
            seed: self.seed,
            solver_cmd: self.solver_cmd,
            timeout_secs: self.timeout,
            out: self.out,
            log_base: match self.log_base {
                LogBaseArg::Two => LogBase::Two,
                LogBaseArg::E => LogBase::Natural,
            },
            refinement: match self.refine {
                RefineArg::Decrement => Refinement::Decrement,
                RefineArg::Halve => Refinement::Halve,
            },
            on_refine_failure: if self.strict_refine {
                RefineFailure::Abort
            } else {
                RefineFailure::Coarsest
            },
            ..RunConfig::default()
        }
    }
}

fn exit_code(status: Status) -> ExitCode {
    match status {
        Status::Ok => ExitCode::SUCCESS,
        Status::Timeout => ExitCode::from(2),
        Status::Error => ExitCode::from(3),
    }
}

fn emit(record: &ResultRecord, out: Option<&Path>) -> anyhow::Result<()> {
    let json = record.to_json();
    match out {
        Some(path) => fs::write(path, json + "\n").with_context(|| format!("writing {}", path.display())),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn single(config: RunConfig) -> ExitCode {
    let record = match config.mode {
        Mode::Baseline => harness::run_baseline(&config),
        _ => harness::run_count(&config),
    };
    if let Some(msg) = &record.error {
        eprintln!("pact: {msg}");
    }
    match emit(&record, config.out.as_deref()) {
        Ok(()) => exit_code(record.status),
        Err(e) => {
            eprintln!("pact: {e:#}");
            ExitCode::from(3)
        }
    }
}

fn bench(config: RunConfig) -> anyhow::Result<()> {
    let report = harness::run_bench(&config)?;
    if config.out.is_none() {
        let mut stdout = std::io::stdout().lock();
        for r in &report.records {
            writeln!(stdout, "{}", r.to_json())?;
        }
    }
    let failed = report.records.iter().filter(|r| r.status != Status::Ok).count();
    let mean = if report.accuracy.is_empty() {
        f64::NAN
    } else {
        report.accuracy.iter().map(|r| r.error).sum::<f64>() / report.accuracy.len() as f64
    };
    eprintln!(
        "pact: {} runs, {} not ok, mean error {:.4} over {} instances",
        report.records.len(),
        failed,
        mean,
        report.accuracy.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Count { file, common } => return single(common.config(Mode::Count, file)),
        Command::Baseline { file, common, cap } => {
            return single(RunConfig {
                cap,
                ..common.config(Mode::Baseline, file)
            })
        }
        Command::Bench { list, common, cap, jobs } => bench(RunConfig {
            cap,
            jobs,
            ..common.config(Mode::Bench, list)
        }),
        Command::Corpus {
            dir,
            n,
            width,
            min,
            max,
            seed,
        } => {
            if min == 0 || min > max || max > 1u64 << width.min(63) {
                Err(anyhow::anyhow!("need 0 < min <= max <= 2^width"))
            } else {
                write_corpus(&dir, &generate_corpus(n, width, min, max, seed))
                    .map(|list| println!("{}", list.display()))
                    .with_context(|| format!("writing corpus to {}", dir.display()))
            }
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pact: {e:#}");
            ExitCode::from(3)
        }
    }
}
