//! Command-line front end for drivesynth.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for
//! runtime failures. Errors are printed to stderr as one line of JSON.

pub mod config;
pub mod error;
pub mod figures;
pub mod pipeline;
pub mod svg;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use drivesynth_core::oracle;
use drivesynth_core::taxonomy::{Category, Priority, Registry, SignalRecord};

use crate::config::Overrides;
use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "drivesynth", version, about = "Synthetic vehicular sensor data: train, sample and evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Pipeline config (TOML).
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory; overrides the config and DRIVESYNTH_OUT.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of synthetic rows to sample.
    #[arg(long)]
    pub rows: Option<usize>,
    /// CI profile: 50 epochs and at most 20k rows.
    #[arg(long)]
    pub fast: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw data (or the surrogate) and write the processed table.
    Prepare(Common),
    /// Train the model on the processed table.
    Train(Common),
    /// Sample synthetic rows from the trained model.
    Sample(Common),
    /// Fidelity, utility and privacy reports for the synthetic table.
    Evaluate(Common),
    /// Apply the config's generalization/suppression rules to a table.
    Anonymize(Common),
    /// List the in-vehicle signal registry.
    Taxonomy(TaxonomyArgs),
    /// Figures, data series and the report bundle.
    Report(Common),
    /// Compare every metric with its brute-force reference.
    Selfcheck(SelfcheckArgs),
}

#[derive(Debug, Args)]
pub struct TaxonomyArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// high, medium or low.
    #[arg(long)]
    pub priority: Option<String>,
    /// e.g. sensor_data, vehicle_telematics.
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct SelfcheckArgs {
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn resolve(c: &Common) -> CliResult<config::Resolved> {
    let path = c
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config <PATH> is required for this command".into()))?;
    let overrides = Overrides {
        seed: c.seed,
        out: c.out.clone(),
        rows: c.rows,
        fast: c.fast,
    };
    config::load(path, overrides, |k| std::env::var(k).ok())
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Runtime(format!("cannot write output: {e}"))
}

pub fn taxonomy_table(signals: &[&SignalRecord]) -> String {
    let header = ["priority", "signal", "source", "category", "identifies", "obtainable", "intent"];
    let yn = |b: bool| if b { "yes" } else { "no" }.to_string();
    let rows: Vec<[String; 7]> = signals
        .iter()
        .map(|s| {
            [
                format!("{} ({})", s.priority, s.priority.color()),
                s.name.clone(),
                s.source.clone(),
                s.category.label().to_string(),
                yn(s.assessment.identifies),
                yn(s.assessment.obtainable),
                yn(s.assessment.malicious_intent),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(header.to_vec());
    out += &line(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().iter().map(String::as_str).collect());
    for r in &rows {
        out += &line(r.iter().map(String::as_str).collect());
    }
    out
}

fn execute(cmd: Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult<()> {
    match cmd {
        Command::Prepare(c) => {
            let r = resolve(&c)?;
            let s = pipeline::prepare(&r)?;
            writeln!(
                out,
                "prepared {} rows ({} read, {} rejected) -> {}",
                s.rows,
                s.rows_read,
                s.rows_rejected,
                r.out_dir.join(&s.path).display()
            )
            .map_err(io_err)?;
        }
        Command::Train(c) => {
            let r = resolve(&c)?;
            let epochs = r.config.train.epochs;
            let trace = pipeline::train(&r, |e, loss| {
                let _ = writeln!(err, "epoch {}/{epochs}: loss {loss:.4}", e + 1);
            })?;
            let last = trace.total.last().map_or("n/a".into(), |v| format!("{v:.4}"));
            writeln!(out, "trained {} epochs, final loss {last}", trace.len()).map_err(io_err)?;
        }
        Command::Sample(c) => {
            let r = resolve(&c)?;
            let n = pipeline::sample(&r)?;
            writeln!(out, "sampled {n} rows -> {}", pipeline::Layout::new(&r.out_dir).synthetic().display())
                .map_err(io_err)?;
        }
        Command::Evaluate(c) => {
            let r = resolve(&c)?;
            let e = pipeline::evaluate(&r)?;
            let best = |run: &drivesynth_core::UtilityRun| {
                let b = &run.results[run.best];
                format!("{} {:.4}", b.name, b.report.accuracy)
            };
            writeln!(
                out,
                "fidelity {:.4} (shapes {:.4}, pair trends {:.4})\ntrtr best {}\ntstr best {}\nprivacy: {} exact matches, dcr p5 {:.6}, slope difference {:.4}, {} flag(s)",
                e.fidelity.overall,
                e.fidelity.column_shapes,
                e.fidelity.column_pair_trends,
                best(&e.utility.trtr),
                best(&e.utility.tstr),
                e.privacy.dcr.exact_matches,
                e.privacy.dcr.p5,
                e.privacy.trend.relative_slope_difference,
                e.privacy.flags.len()
            )
            .map_err(io_err)?;
        }
        Command::Anonymize(c) => {
            let r = resolve(&c)?;
            let (csv, rep) = pipeline::anonymize(&r)?;
            write!(out, "{csv}").map_err(io_err)?;
            writeln!(
                err,
                "k = {} before, {} after; {} homogeneous class(es)",
                rep.k_before,
                rep.k_after,
                rep.homogeneous.len()
            )
            .map_err(io_err)?;
        }
        Command::Taxonomy(t) => {
            let priority = t.priority.as_deref().map(str::parse::<Priority>).transpose()?;
            let category = t.category.as_deref().map(str::parse::<Category>).transpose()?;
            let registry = Registry::shipped();
            let list = registry.list_signals(priority, category);
            if t.json {
                let text = serde_json::to_string_pretty(&list).map_err(|e| CliError::Runtime(e.to_string()))?;
                writeln!(out, "{text}").map_err(io_err)?;
            } else {
                write!(out, "{}", taxonomy_table(&list)).map_err(io_err)?;
            }
        }
        Command::Report(c) => {
            let r = resolve(&c)?;
            let b = pipeline::report(&r)?;
            writeln!(
                out,
                "wrote {} figure and series files and reports/bundle.json under {}",
                b.figures.files.len(),
                r.out_dir.display()
            )
            .map_err(io_err)?;
            for n in &b.figures.notes {
                writeln!(out, "note: {n}").map_err(io_err)?;
            }
        }
        Command::Selfcheck(s) => {
            let rep = oracle::run_suite(s.instances, 100, s.seed)?;
            for c in &rep.checks {
                writeln!(
                    out,
                    "{:<24} {:>6} comparisons  max error {:.3e}  {}",
                    c.name,
                    c.comparisons,
                    c.max_error,
                    if c.passed { "ok" } else { "FAILED" }
                )
                .map_err(io_err)?;
            }
            if !rep.passed() {
                return Err(CliError::Runtime("oracle suite found disagreements".into()));
            }
        }
    }
    Ok(())
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    0
                }
                _ => {
                    let _ = write!(err, "{text}");
                    let e = CliError::Usage(e.kind().to_string());
                    let _ = writeln!(err, "{}", e.to_json());
                    e.exit_code()
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", e.to_json());
            e.exit_code()
        }
    }
}
