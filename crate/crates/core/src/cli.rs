//! Command-line front end: `run`, `compare` and `validate`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Preset, RunConfig};
use crate::metrics::{write_json, AggregateReport};
use crate::runner::{compare, run_batch, validate_grid, write_batch, Provenance, RunError, ValidateParams};
use crate::station::ScenarioKind;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "CHARGESIM_OUT_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "chargesim",
    version,
    about = "EV fast-charging station simulator with impatient users"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run replications of one scenario and write CSV/JSON results.
    Run(RunArgs),
    /// Run several scenarios on common random numbers and compare them.
    Compare(CompareArgs),
    /// Check the simulator against the M/M/1/k birth-death chain.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML config file; defaults are used for missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<u64>,
    /// Demand regime: rush (0.6/min) or low (0.1/min).
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Output directory [default: $CHARGESIM_OUT_DIR or ./out].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub scenario: Option<ScenarioKind>,
    /// Also write the event trace of replication 0.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub common: Common,
    /// Comma-separated list; the first is the baseline.
    #[arg(long, value_delimiter = ',', required = true)]
    pub scenarios: Vec<ScenarioKind>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Arrival rates (comma-separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda: Vec<f64>,
    #[arg(long)]
    pub mu: f64,
    /// System capacities (comma-separated).
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<u32>,
    /// Per-customer reneging rate; omitted means no reneging.
    #[arg(long, default_value_t = 0.0)]
    pub theta: f64,
    /// Arrivals simulated per cell.
    #[arg(long, default_value_t = 1_000_000)]
    pub arrivals: u64,
    #[arg(long, default_value_t = crate::config::DEFAULT_SEED)]
    pub seed: u64,
    /// Write the table as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"))
}

/// Loads the config and applies command-line overrides, returning the names
/// of the overridden keys.
fn resolve(common: &Common, scenario: Option<ScenarioKind>) -> Result<(RunConfig<f64>, Vec<String>), RunError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let mut overrides = Vec::new();
    if let Some(s) = scenario {
        cfg.scenario = s;
        overrides.push(format!("scenario={s}"));
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        overrides.push(format!("seed={seed}"));
    }
    if let Some(r) = common.rounds {
        cfg.rounds = r;
        overrides.push(format!("rounds={r}"));
    }
    if let Some(p) = common.preset {
        cfg = cfg.with_preset(p);
        overrides.push(format!("lambda={}", p.lambda()));
    }
    cfg.validate()?;
    Ok((cfg, overrides))
}

fn summary_table(out: &mut dyn Write, aggs: &[&AggregateReport<f64>]) -> std::io::Result<()> {
    writeln!(
        out,
        "{:<20} {:>16} {:>16} {:>16} {:>18} {:>16}",
        "scenario", "balking %", "reneging %", "service %", "throughput /min", "avg wait min"
    )?;
    for a in aggs {
        let cell = |s: crate::metrics::Summary<f64>| format!("{:.3} ± {:.3}", s.mean, s.ci95);
        writeln!(
            out,
            "{:<20} {:>16} {:>16} {:>16} {:>18} {:>16}",
            a.scenario.name(),
            cell(a.balking_pct),
            cell(a.reneging_pct),
            cell(a.service_pct),
            format!("{:.4} ± {:.4}", a.throughput.mean, a.throughput.ci95),
            cell(a.avg_wait),
        )?;
    }
    Ok(())
}

fn io_err(e: std::io::Error) -> RunError {
    RunError::Metrics(crate::metrics::MetricsError::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn cmd_run(args: RunArgs, out: &mut dyn Write) -> Result<i32, RunError> {
    let (cfg, overrides) = resolve(&args.common, args.scenario)?;
    let batch = run_batch(&cfg, cfg.scenario, args.trace)?;
    let dir = out_dir(args.common.out);
    let written = write_batch(&batch, &Provenance::new(&cfg, overrides), &dir)?;
    writeln!(
        out,
        "{} rounds, lambda = {}/min, horizon = {} min, seed = {}",
        cfg.rounds, cfg.lambda, cfg.horizon, cfg.seed
    )
    .map_err(io_err)?;
    summary_table(out, &[&batch.aggregate]).map_err(io_err)?;
    for p in written {
        writeln!(out, "wrote {}", p.display()).map_err(io_err)?;
    }
    Ok(0)
}

fn cmd_compare(args: CompareArgs, out: &mut dyn Write) -> Result<i32, RunError> {
    let (cfg, overrides) = resolve(&args.common, None)?;
    let cmp = compare(&cfg, &args.scenarios)?;
    let dir = out_dir(args.common.out);
    let mut written = Vec::new();
    for b in &cmp.batches {
        let mut c = cfg.clone();
        c.scenario = b.scenario;
        written.extend(write_batch(b, &Provenance::new(&c, overrides.clone()), &dir)?);
    }
    let cmp_path = dir.join("compare.json");
    write_json(
        &serde_json::json!({
            "provenance": Provenance::new(&cfg, overrides),
            "scenarios": args.scenarios,
            "rows": cmp.rows,
            "arrivals_match": cmp.arrivals_match,
        }),
        &cmp_path,
    )?;
    written.push(cmp_path);

    let aggs: Vec<_> = cmp.batches.iter().map(|b| &b.aggregate).collect();
    writeln!(
        out,
        "{} rounds, lambda = {}/min, seed = {}, baseline {}",
        cfg.rounds, cfg.lambda, cfg.seed, args.scenarios[0]
    )
    .map_err(io_err)?;
    summary_table(out, &aggs).map_err(io_err)?;
    writeln!(out).map_err(io_err)?;
    writeln!(
        out,
        "{:<20} {:>14} {:>14} {:>14} {:>14} {:>14}",
        "vs baseline", "reneging -%", "service +pts", "throughput +%", "balking +pts", "wait +min"
    )
    .map_err(io_err)?;
    for r in &cmp.rows[1..] {
        writeln!(
            out,
            "{:<20} {:>14.2} {:>14.2} {:>14.2} {:>14.2} {:>14.2}",
            r.scenario.name(),
            r.reneging_reduction_pct,
            r.service_gain_pts,
            r.throughput_gain_pct,
            r.balking_delta_pts,
            r.avg_wait_delta
        )
        .map_err(io_err)?;
    }
    for p in written {
        writeln!(out, "wrote {}", p.display()).map_err(io_err)?;
    }
    Ok(0)
}

fn cmd_validate(args: ValidateArgs, out: &mut dyn Write) -> Result<i32, RunError> {
    let cells: Vec<ValidateParams<f64>> = args
        .lambda
        .iter()
        .flat_map(|&lambda| {
            args.k.iter().map(move |&k| ValidateParams {
                lambda,
                mu: args.mu,
                k,
                theta: args.theta,
                arrivals: args.arrivals,
                seed: args.seed,
            })
        })
        .collect();
    let results = validate_grid(&cells)?;
    writeln!(
        out,
        "{:>8} {:>8} {:>4} {:>8} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}  ok",
        "lambda", "mu", "k", "theta", "P_B sim", "P_B eq", "Lq sim", "Lq eq", "Wq sim", "Wq eq", "max|dp|"
    )
    .map_err(io_err)?;
    for c in &results {
        let p = c.params;
        writeln!(
            out,
            "{:>8.4} {:>8.4} {:>4} {:>8.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4} {:>10.4}  {}",
            p.lambda,
            p.mu,
            p.k,
            p.theta,
            c.sim_blocking,
            c.oracle_blocking,
            c.sim_mean_queue,
            c.oracle_mean_queue,
            c.sim_mean_wait,
            c.oracle_mean_wait,
            c.max_occupancy_error,
            if c.within_tolerance { "yes" } else { "NO" }
        )
        .map_err(io_err)?;
    }
    if let Some(path) = &args.json {
        write_json(&results, path)?;
    }
    Ok(if results.iter().all(|c| c.within_tolerance) {
        0
    } else {
        1
    })
}

/// Parses `args` and executes the command, writing human-readable output to
/// `out`. Returns the process exit status.
pub fn main_with_args<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = write!(err, "{e}");
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a, out),
        Command::Compare(a) => cmd_compare(a, out),
        Command::Validate(a) => cmd_validate(a, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
