//! Scenario runner behind the `collapse` command.
//!
//! A run reads a [`config::ScenarioConfig`], executes the scenario on a
//! dedicated worker pool, and writes `report.json`, `report.csv` and the
//! scenario's data tables. Results depend only on the config and seed: every
//! sample draws from its own counter-based stream, so neither the thread
//! count nor scheduling changes a single bit of output.

pub mod config;
pub mod report;
pub mod scenarios;

use std::path::{Path, PathBuf};
use std::time::Instant;

use thiserror::Error;

use crate::config::ScenarioConfig;
use crate::report::{emit_report, ReportFormat, RunReport};

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "COLLAPSE_OUT_DIR";

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

/// A config that cannot be run, naming the offending field when known.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("config error{}: {reason}", field.as_ref().map(|f| format!(" in `{f}`")).unwrap_or_default())]
pub struct ConfigError {
    pub field: Option<String>,
    pub reason: String,
}

impl ConfigError {
    pub fn field(field: &str, reason: impl Into<String>) -> Self {
        Self {
            field: Some(field.into()),
            reason: reason.into(),
        }
    }

    pub fn from_json(e: serde_json::Error) -> Self {
        Self {
            field: None,
            reason: e.to_string(),
        }
    }

    /// Precondition failures raised by the library while validating.
    pub fn from_module(e: collapse_core::Error) -> Self {
        match e {
            collapse_core::Error::InvalidParameter { name, reason } => Self::field(name, reason),
            other => Self {
                field: None,
                reason: other.to_string(),
            },
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{context}: {source}")]
    Module {
        context: String,
        source: collapse_core::Error,
    },
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => EXIT_CONFIG,
            _ => EXIT_FAIL,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; `None` uses one per core.
    pub threads: Option<usize>,
    /// Replaces the config's seed.
    pub seed: Option<u64>,
    /// Where resumable checkpoints go; `None` disables them.
    pub checkpoint_root: Option<PathBuf>,
}

/// Runs one scenario. Does not write the report; see [`run_and_emit`].
pub fn run_experiment(config: &ScenarioConfig, options: &RunOptions) -> Result<RunReport, RunError> {
    let mut config = config.clone();
    if let Some(s) = options.seed {
        config.seed = s;
    }
    config.validate()?;
    let hash = config.hash();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = options.threads {
        if n == 0 {
            return Err(ConfigError::field("threads", "must be >= 1").into());
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| std::io::Error::other(format!("worker pool: {e}")))?;
    let ws = scenarios::Workspace {
        checkpoint_root: options.checkpoint_root.as_deref(),
        config_hash: &hash,
    };
    let start = Instant::now();
    let outcome = pool
        .install(|| scenarios::run(&config.scenario, config.seed, &ws))
        .map_err(|source| RunError::Module {
            context: format!("scenario `{}`", config.scenario.kind()),
            source,
        })?;
    let wall = start.elapsed().as_secs_f64();
    let expected = config.scenario.criteria();
    let got: Vec<u8> = outcome.criteria.iter().map(|c| c.criterion).collect();
    assert_eq!(got, expected, "scenario must report each of its criteria exactly once");
    Ok(RunReport::new(
        config.label(),
        config.scenario.kind(),
        hash,
        config.seed,
        outcome.criteria,
        outcome.tables,
        wall,
    ))
}

/// Output directory: command line, then environment, then config, then `out`.
pub fn resolve_out_dir(cli: Option<&Path>, env: Option<&str>, config: &ScenarioConfig) -> PathBuf {
    cli.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Runs and writes JSON and CSV reports into `out_dir`.
pub fn run_and_emit(config: &ScenarioConfig, options: &RunOptions, out_dir: &Path) -> Result<RunReport, RunError> {
    let report = run_experiment(config, options)?;
    emit_report(&report, ReportFormat::Json, out_dir)?;
    emit_report(&report, ReportFormat::Csv, out_dir)?;
    Ok(report)
}

/// Human-readable one-line-per-check summary.
pub fn summary_lines(report: &RunReport) -> Vec<String> {
    let mut out = Vec::new();
    for c in &report.criteria {
        out.push(format!(
            "criterion {:>2} {}: {}",
            c.criterion,
            if c.passed { "PASS" } else { "FAIL" },
            c.title
        ));
        for k in &c.checks {
            let se = k.se.map(|s| format!(" se {s:.3e}")).unwrap_or_default();
            out.push(format!(
                "    {} {}: measured {:.6e} target {:.6e} tolerance {} ({}){}",
                if k.passed { "ok  " } else { "FAIL" },
                k.name,
                k.measured,
                k.target,
                k.tolerance,
                k.detail,
                se
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::from_json(r#"{"schema_version": 1, "seed": 1, "output_dir": "cfg", "scenario": {"kind": "born_rule"}}"#)
            .unwrap()
    }

    #[test]
    fn out_dir_precedence() {
        let c = cfg();
        assert_eq!(resolve_out_dir(Some(Path::new("a")), Some("b"), &c), PathBuf::from("a"));
        assert_eq!(resolve_out_dir(None, Some("b"), &c), PathBuf::from("b"));
        assert_eq!(resolve_out_dir(None, Some(""), &c), PathBuf::from("cfg"));
        let mut bare = c.clone();
        bare.output_dir = None;
        assert_eq!(resolve_out_dir(None, None, &bare), PathBuf::from("out"));
    }

    #[test]
    fn config_errors_exit_with_two() {
        let e = RunError::from(ConfigError::field("gamma", "bad"));
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        assert!(e.to_string().contains("`gamma`"));
    }

    #[test]
    fn zero_threads_is_rejected() {
        let opts = RunOptions {
            threads: Some(0),
            ..Default::default()
        };
        assert_eq!(run_experiment(&cfg(), &opts).unwrap_err().exit_code(), EXIT_CONFIG);
    }
}
