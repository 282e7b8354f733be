use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use tasim::harness::{emit_report, emit_traces, load_scenario, run, Format, ScenarioError};

#[derive(Parser)]
#[command(name = "tasim", version, about = "Time-aware NIC fabric simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutFormat {
    Json,
    Csv,
}

impl From<OutFormat> for Format {
    fn from(f: OutFormat) -> Self {
        match f {
            OutFormat::Json => Format::Json,
            OutFormat::Csv => Format::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: OutFormat,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write the transmit trace and per-frame routes.
        #[arg(long)]
        trace: bool,
    },
    /// Check a scenario file without running it.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Run every `*.json` scenario in a directory, one report directory each.
    Sweep {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

fn run_one(
    scenario: &Path,
    out: &Path,
    format: Format,
    seed: Option<u64>,
    trace: bool,
) -> Result<(), ScenarioError> {
    let mut s = load_scenario(scenario)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    let result = run(&s, trace);
    let path = emit_report(&result.report, format, out)?;
    eprintln!("wrote {}", path.display());
    if trace {
        for p in emit_traces(&result.network, out)? {
            eprintln!("wrote {}", p.display());
        }
    }
    Ok(())
}

fn sweep(dir: &Path, out: &Path, jobs: Option<usize>) -> Result<i32, ScenarioError> {
    let entries = std::fs::read_dir(dir).map_err(|source| ScenarioError::Io {
        path: dir.into(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .expect("thread pool");
    let results: Vec<(PathBuf, Result<(), ScenarioError>)> = pool.install(|| {
        files
            .par_iter()
            .map(|f| {
                let stem = f.file_stem().expect("file name").to_owned();
                (
                    f.clone(),
                    run_one(f, &out.join(stem), Format::Json, None, false),
                )
            })
            .collect()
    });
    let mut code = 0;
    for (f, r) in results {
        if let Err(e) = r {
            eprintln!("{}: {e}", f.display());
            code = code.max(e.exit_code());
        }
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            out,
            format,
            seed,
            trace,
        } => run_one(&scenario, &out, format.into(), seed, trace).map(|()| 0),
        Command::Validate { scenario } => load_scenario(&scenario).map(|s| {
            println!(
                "ok {} ({} flows, digest {})",
                scenario.display(),
                s.flows.len(),
                s.digest()
            );
            0
        }),
        Command::Sweep { dir, out, jobs } => sweep(&dir, &out, jobs),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
