//! `dyncolor` — generate dynamic-graph workloads, run them through the
//! coloring engines, and aggregate the recorded metrics.
//!
//! Exit codes: 0 on success, 1 when a run detects an invariant violation
//! (the offending row is flagged and a state dump is written), 2 for
//! usage, I/O, and malformed-input errors.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use dyncolor_cli::metrics;
use dyncolor_cli::report;
use dyncolor_cli::runner::{self, RunConfig, RunError, RunSummary};
use dyncolor_cli::workload::{generate, GenConfig, Mode, Profile, Workload};

#[derive(Parser, Debug)]
#[command(name = "dyncolor", version, about = "Dynamic (Δ+1)-coloring workbench")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Generate a workload file.
    Gen {
        /// Number of vertices.
        #[arg(long)]
        n: u32,
        /// Maximum degree the script respects.
        #[arg(long)]
        delta: u32,
        /// Number of update events to emit.
        #[arg(long)]
        events: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Engine the workload targets: seq, batch, congest, deamortized.
        #[arg(long, default_value = "seq", value_parser = Mode::from_str)]
        mode: Mode,
        /// Churn shape: random-churn, insert-only, delete-heavy, hotspot.
        #[arg(long, default_value = "random-churn", value_parser = Profile::from_str)]
        profile: Profile,
        /// Mean events per flush chunk (batch and congest modes).
        #[arg(long, default_value_t = 4.0)]
        flush_mean: f64,
        /// Output file; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Run a workload file and record per-event metrics.
    Run {
        workload: PathBuf,
        /// Metrics CSV output; stdout when omitted.
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Override the mode named in the workload file.
        #[arg(long, value_parser = Mode::from_str)]
        mode: Option<Mode>,
        /// Audit the full state every N updates (congest: rounds); 0 keeps
        /// only the engines' built-in checks.
        #[arg(long, default_value_t = 0)]
        verify_every: u64,
        /// Per-update work budget override (deamortized mode).
        #[arg(long)]
        budget: Option<u64>,
        /// Engine-copy count override (deamortized mode).
        #[arg(long)]
        copies: Option<u32>,
    },
    /// Summarize one or more metrics CSV files as an aligned table.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
    },
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
    match cli.cmd {
        Cmd::Gen { n, delta, events, seed, mode, profile, flush_mean, out } => {
            cmd_gen(GenConfig { n, delta, events, seed, mode, profile, flush_mean }, out)
        }
        Cmd::Run { workload, out, mode, verify_every, budget, copies } => {
            cmd_run(&workload, out, mode, verify_every, budget, copies)
        }
        Cmd::Report { files } => cmd_report(&files),
    }
}

fn fail_usage(msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("dyncolor: {msg}");
    ExitCode::from(2)
}

fn emit(out: Option<&Path>, text: &str, what: &str) -> Result<(), ExitCode> {
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| fail_usage(format!("writing {what} {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen(cfg: GenConfig, out: Option<PathBuf>) -> ExitCode {
    if cfg.n < 2 {
        return fail_usage("n must be at least 2");
    }
    if cfg.delta == 0 {
        return fail_usage("delta must be positive");
    }
    if !(cfg.flush_mean.is_finite() && cfg.flush_mean > 0.0) {
        return fail_usage("flush-mean must be a positive number");
    }
    let wl = generate(&cfg);
    if wl.total_events() < cfg.events {
        eprintln!(
            "dyncolor: profile saturated after {} of {} events",
            wl.total_events(),
            cfg.events
        );
    }
    match emit(out.as_deref(), &wl.to_text(), "workload") {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}

fn cmd_run(
    path: &Path,
    out: Option<PathBuf>,
    mode_override: Option<Mode>,
    verify_every: u64,
    budget: Option<u64>,
    copies: Option<u32>,
) -> ExitCode {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => return fail_usage(format!("reading {}: {e}", path.display())),
    };
    let wl = match Workload::parse(&text) {
        Ok(wl) => wl,
        Err(e) => return fail_usage(format!("{}: {e}", path.display())),
    };
    let cfg = RunConfig {
        mode: mode_override.unwrap_or(wl.mode),
        verify_every,
        budget,
        copies,
    };

    let mut rows = Vec::new();
    let outcome = catch_unwind(AssertUnwindSafe(|| runner::run(&wl, &cfg, &mut rows)));

    // Whatever happened, the rows collected so far are worth keeping.
    if let Err(code) = emit(out.as_deref(), &metrics::to_csv(&rows), "metrics") {
        return code;
    }

    let dump_path = || -> PathBuf {
        match &out {
            Some(p) => {
                let mut s = p.as_os_str().to_owned();
                s.push(".dump");
                PathBuf::from(s)
            }
            None => PathBuf::from("dyncolor-state.dump"),
        }
    };

    match outcome {
        Ok(Ok(RunSummary { violation: None, updates_applied, .. })) => {
            eprintln!(
                "dyncolor: {} updates applied in {} mode, {} rows, all checks passed",
                updates_applied,
                cfg.mode,
                rows.len()
            );
            ExitCode::SUCCESS
        }
        Ok(Ok(RunSummary { violation: Some(msg), updates_applied, dump })) => {
            let flagged = rows
                .iter()
                .rposition(|r| !r.properness_ok)
                .map_or_else(|| "-".to_string(), |i| (i + 1).to_string());
            let dump_path = dump_path();
            let dump_note = match std::fs::write(&dump_path, dump) {
                Ok(()) => format!("state dump written to {}", dump_path.display()),
                Err(e) => format!("state dump could not be written: {e}"),
            };
            eprintln!(
                "dyncolor: invariant violation after {updates_applied} updates (metrics row {flagged}): {msg}; {dump_note}"
            );
            ExitCode::from(1)
        }
        Ok(Err(err @ RunError::Init(_))) => fail_usage(err),
        Ok(Err(err @ RunError::BadEvent { .. })) => {
            fail_usage(format!("{}: {err}", path.display()))
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "engine panic without a message".to_string());
            let dump_path = dump_path();
            let dump_note = match std::fs::write(&dump_path, format!("engine panic: {msg}\n")) {
                Ok(()) => format!("details written to {}", dump_path.display()),
                Err(e) => format!("details could not be written: {e}"),
            };
            eprintln!("dyncolor: engine check failed: {msg}; {dump_note}");
            ExitCode::from(1)
        }
    }
}

fn cmd_report(files: &[PathBuf]) -> ExitCode {
    let mut summaries = Vec::with_capacity(files.len());
    for path in files {
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail_usage(format!("reading {}: {e}", path.display())),
        };
        let rows = match metrics::parse_csv(&text) {
            Ok(rows) => rows,
            Err(e) => return fail_usage(format!("{}: {e}", path.display())),
        };
        let name = path
            .file_name()
            .map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
        summaries.push(report::summarize(&name, &rows));
    }
    print!("{}", report::render(&summaries));
    ExitCode::SUCCESS
}
