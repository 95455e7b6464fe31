//! `edgesim` command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime error.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edgesim::report::{
    parse_sweep, run_sweep, summary_table, sweep_table, write_run_artifacts, write_sweep_artifacts,
};
use edgesim::scenario::{parse_scenario, run_scenario, Scenario};
use edgesim::workload::{generate_stream, write_stream};
use edgesim::SimError;

const OUTPUT_ENV: &str = "EDGESIM_OUTPUT_DIR";

#[derive(Parser)]
#[command(name = "edgesim", version, about = "Telco AI-edge inference simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Falls back to $EDGESIM_OUTPUT_DIR, then the
    /// scenario's `output.dir`, then `edgesim-out/<name>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its artifacts.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Skip the summary table.
        #[arg(long, short)]
        quiet: bool,
    },
    /// Run a parameter sweep.
    Sweep {
        sweep: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Check scenario files without running them.
    Validate {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
    },
    /// Write a scenario's generated request stream. Prints to stdout unless an
    /// output directory is given.
    DumpWorkload {
        scenario: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into())
}

fn output_dir(common: &Common, configured: Option<&Path>, input: &Path) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| configured.map(Path::to_path_buf))
        .unwrap_or_else(|| Path::new("edgesim-out").join(stem(input)))
}

fn load(path: &Path, seed: Option<u64>) -> Result<Scenario, SimError> {
    let mut s = parse_scenario(path)?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn execute(cli: Cli) -> Result<(), SimError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    let print = |out: &mut io::StdoutLock, text: &str| {
        let _ = out.write_all(text.as_bytes());
    };
    match cli.command {
        Command::Run { scenario, common, quiet } => {
            let s = load(&scenario, common.seed)?;
            let dir = output_dir(&common, s.output.dir.as_deref(), &scenario);
            let run = run_scenario(&s)?;
            let arts = write_run_artifacts(&dir, &run)?;
            if !quiet {
                print(&mut out, &summary_table(&run.report));
                print(&mut out, &format!("wrote {}\n", arts.metrics.parent().unwrap_or(&dir).display()));
            }
        }
        Command::Sweep { sweep, common, quiet } => {
            let (spec, mut base) = parse_sweep(&sweep)?;
            if let Some(seed) = common.seed {
                base.seed = seed;
            }
            let dir = output_dir(&common, None, &sweep);
            let (result, runs) = run_sweep(&spec, &base)?;
            write_sweep_artifacts(&dir, &result, &runs)?;
            if !quiet {
                print(&mut out, &sweep_table(&result));
                print(&mut out, &format!("wrote {}\n", dir.display()));
            }
        }
        Command::Validate { scenarios } => {
            for path in scenarios {
                parse_scenario(&path).map_err(|e| with_path(&path, e))?;
                print(&mut out, &format!("{}: ok\n", path.display()));
            }
        }
        Command::DumpWorkload { scenario, common } => {
            let s = load(&scenario, common.seed)?;
            let requests = generate_stream(s.seed, &s.workload)?;
            let explicit = common.out.is_some() || std::env::var_os(OUTPUT_ENV).is_some_and(|v| !v.is_empty());
            if explicit {
                let dir = output_dir(&common, None, &scenario);
                std::fs::create_dir_all(&dir).map_err(|e| SimError::Io { path: dir.clone(), source: e })?;
                let path = dir.join("workload.tsv");
                let file = std::fs::File::create(&path).map_err(|e| SimError::Io { path: path.clone(), source: e })?;
                write_stream(io::BufWriter::new(file), &requests).map_err(|e| SimError::Io { path, source: e })?;
            } else {
                write_stream(&mut out, &requests).map_err(|e| SimError::Io { path: "<stdout>".into(), source: e })?;
            }
        }
    }
    Ok(())
}

fn with_path(path: &Path, e: SimError) -> SimError {
    match e {
        SimError::Config(mut c) => {
            c.message = format!("{} ({})", c.message, path.display());
            SimError::Config(c)
        }
        other => other,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 3 })
        }
    }
}
