use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use collapse_cli::config::ScenarioConfig;
use collapse_cli::report::num;
use collapse_cli::{resolve_out_dir, run_and_emit, summary_lines, ConfigError, RunOptions, EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, OUT_DIR_ENV};
use collapse_core::propagators::{omega_table, PropagatorSpec};

#[derive(Parser)]
#[command(name = "collapse", version, about = "Collapse-model simulations and checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario config and write its reports.
    Run {
        config: PathBuf,
        /// Output directory (overrides the environment and the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; results do not depend on it.
        #[arg(long)]
        threads: Option<usize>,
        /// Master seed replacing the config's.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the collapse exponent on a geometric grid of separations as CSV.
    TabulateOmega {
        #[arg(long)]
        mb: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        g: f64,
        #[arg(long)]
        rmin: f64,
        #[arg(long)]
        rmax: f64,
        #[arg(long)]
        points: usize,
        /// Finite horizon for the transient column; defaults to 200/mb.
        #[arg(long)]
        t: Option<f64>,
        /// Write to a file instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("{e}");
    ExitCode::from(EXIT_CONFIG as u8)
}

fn run(config: PathBuf, out: Option<PathBuf>, threads: Option<usize>, seed: Option<u64>) -> ExitCode {
    let text = match fs::read_to_string(&config) {
        Ok(t) => t,
        Err(e) => return config_error(ConfigError::field("config", format!("{}: {e}", config.display()))),
    };
    let cfg = match ScenarioConfig::from_json(&text) {
        Ok(c) => c,
        Err(e) => return config_error(e),
    };
    let env = std::env::var(OUT_DIR_ENV).ok();
    let out_dir = resolve_out_dir(out.as_deref(), env.as_deref(), &cfg);
    let options = RunOptions {
        threads,
        seed,
        checkpoint_root: Some(out_dir.clone()),
    };
    match run_and_emit(&cfg, &options, &out_dir) {
        Ok(report) => {
            for line in summary_lines(&report) {
                println!("{line}");
            }
            println!("report {} written to {}", report.report_hash, out_dir.display());
            ExitCode::from(if report.all_passed() { EXIT_PASS } else { EXIT_FAIL } as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn tabulate(mb: f64, lambda: f64, g: f64, rmin: f64, rmax: f64, points: usize, t: Option<f64>, out: Option<PathBuf>) -> ExitCode {
    let spec = match PropagatorSpec::new(mb, lambda, g) {
        Ok(s) => s,
        Err(e) => return config_error(ConfigError::from_module(e)),
    };
    let horizon = t.unwrap_or(200.0 / mb);
    let rows = match omega_table(&spec, rmin, rmax, points, horizon) {
        Ok(r) => r,
        Err(e @ collapse_core::Error::InvalidParameter { .. }) | Err(e @ collapse_core::Error::Domain(_)) => {
            return config_error(ConfigError::from_module(e))
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_FAIL as u8);
        }
    };
    let sink: Box<dyn Write> = match &out {
        Some(p) => match fs::File::create(p) {
            Ok(f) => Box::new(f),
            Err(e) => {
                eprintln!("error: cannot write {}: {e}", p.display());
                return ExitCode::from(EXIT_FAIL as u8);
            }
        },
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let result = (|| -> csv::Result<()> {
        w.write_record(["r", "omega_infinity", "omega_t", "g"])?;
        for r in &rows {
            w.write_record([num(r.r), num(r.omega_infinity), num(r.omega_t), num(r.g)])?;
        }
        w.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::from(EXIT_PASS as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAIL as u8)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            threads,
            seed,
        } => run(config, out, threads, seed),
        Command::TabulateOmega {
            mb,
            lambda,
            g,
            rmin,
            rmax,
            points,
            t,
            out,
        } => tabulate(mb, lambda, g, rmin, rmax, points, t, out),
    }
}
