use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use psfp_core::scenario::{RunOptions, Scenario, ScenarioError, DEFAULT_SCALE};
use psfp_core::sim::{run_to_dir, summarize_dir};

#[derive(Parser)]
#[command(name = "psfp", version, about = "Validate, compile and run PSFP scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every static check on a scenario file.
    Validate {
        scenario: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Print the compiled gate schedule.
    Compile { scenario: PathBuf },
    /// Run a scenario, or every *.toml in a directory with --batch.
    Run {
        scenario: PathBuf,
        /// Output directory for CSV files and summary.json.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Treat SCENARIO as a directory and run each file into OUT/<stem>.
        #[arg(long)]
        batch: bool,
        #[command(flatten)]
        opts: Opts,
    },
    /// Summarize the CSV files of a finished run.
    Report { dir: PathBuf },
}

#[derive(Args, Clone, Copy)]
struct Opts {
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Divisor applied to every rate in the file.
    #[arg(long, default_value_t = DEFAULT_SCALE)]
    scale: u64,
    /// Metrics bin width in nanoseconds.
    #[arg(long)]
    bin: Option<u64>,
}

impl From<Opts> for RunOptions {
    fn from(o: Opts) -> Self {
        RunOptions { scale: o.scale, seed: o.seed, bin: o.bin }
    }
}

fn load(path: &Path) -> Result<Scenario> {
    Scenario::load(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

fn validate(path: &Path, opts: RunOptions) -> Result<()> {
    let s = load(path)?;
    let diags = s.validate(&opts);
    if diags.is_empty() {
        println!("{}: OK", path.display());
        return Ok(());
    }
    for d in &diags {
        eprintln!("{}:{d}", path.display());
    }
    bail!("{}: {} error(s)", path.display(), diags.len())
}

fn run_one(path: &Path, out: &Path, opts: RunOptions) -> Result<()> {
    let s = load(path)?;
    let setup = s.compile(&opts).map_err(|e| match e {
        ScenarioError::Invalid(d) => {
            for d in &d {
                eprintln!("{}:{d}", path.display());
            }
            anyhow::anyhow!("{}: {} error(s)", path.display(), d.len())
        }
        e => anyhow::anyhow!("{}: {e}", path.display()),
    })?;
    let summary = run_to_dir(setup, out).with_context(|| format!("running {}", path.display()))?;
    let c = &summary.counters;
    println!(
        "{}: {} events, ingested {}, forwarded {}, best effort {}, dropped {}, queue drops {} -> {}",
        path.display(),
        summary.events,
        c.ingested,
        c.forwarded,
        c.best_effort,
        c.dropped_total(),
        summary.queue_drops,
        out.display()
    );
    if summary.conservation_violations > 0 {
        bail!("{}: conservation violated after {} events", path.display(), summary.conservation_violations);
    }
    Ok(())
}

fn run_batch(dir: &Path, out: &Path, opts: RunOptions) -> Result<()> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "toml"))
        .collect();
    files.sort();
    let mut failed = 0;
    for f in &files {
        let stem = f.file_stem().unwrap_or_default();
        if let Err(e) = run_one(f, &out.join(stem), opts) {
            eprintln!("{e:#}");
            failed += 1;
        }
    }
    if failed > 0 {
        bail!("{failed} of {} scenarios failed", files.len());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { scenario, opts } => validate(&scenario, opts.into()),
        Command::Compile { scenario } => load(&scenario).and_then(|s| match s.compile_schedule() {
            Ok(c) => {
                print!("{}", c.report());
                Ok(())
            }
            Err(e) => Err(anyhow::anyhow!("{}: {e}", scenario.display())),
        }),
        Command::Run { scenario, out, batch: true, opts } => run_batch(&scenario, &out, opts.into()),
        Command::Run { scenario, out, batch: false, opts } => run_one(&scenario, &out, opts.into()),
        Command::Report { dir } => summarize_dir(&dir).map(|s| print!("{s}")).map_err(Into::into),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
