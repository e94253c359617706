//! Batch execution behind the CLI: replications of a scenario, side-by-side
//! scenario comparisons on common random numbers, and queueing-theory
//! validation runs.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::agent::{AgentConfig, ChargingProfile};
use crate::analytic::{
    birth_death_steady_state, mm1k_blocking, queue_summary, reneging_rates, AnalyticError, QueueParams,
};
use crate::config::{ConfigError, RunConfig};
use crate::metrics::{
    aggregate, compute_report, write_csv, write_json, write_trace, AggregateReport, MetricsError, MetricsReport,
};
use crate::real::Real;
use crate::station::{
    PatienceModel, ReplicationOutcome, ScenarioKind, ServiceModel, Station, StationConfig, StationError, TraceRecord,
};

/// Absolute tolerance on the simulated blocking fraction.
pub const BLOCKING_TOLERANCE: f64 = 0.01;
/// Absolute tolerance on each simulated state-occupancy probability.
pub const OCCUPANCY_TOLERANCE: f64 = 0.02;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("simulation fault: {0}")]
    Station(#[from] StationError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid queue parameters: {0}")]
    Analytic(#[from] AnalyticError),
    #[error("{0}")]
    Usage(String),
}

impl RunError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(ConfigError::Io { .. }) => 3,
            RunError::Config(_) | RunError::Analytic(_) | RunError::Usage(_) => 2,
            RunError::Metrics(MetricsError::Io { .. } | MetricsError::Csv { .. } | MetricsError::Json { .. }) => 3,
            RunError::Metrics(_) | RunError::Station(_) => 1,
        }
    }
}

/// Runs replication `rep` of `scenario` under `cfg`.
pub fn run_replication<T: Real>(
    cfg: &RunConfig<T>,
    scenario: ScenarioKind,
    rep: u64,
    trace: bool,
) -> Result<ReplicationOutcome<T>, StationError> {
    let mut sc = cfg.station_config(scenario);
    sc.record_trace = trace;
    Station::new(sc, cfg.profile, cfg.agent_config(), cfg.seed, rep).run()
}

/// All replications of one scenario.
#[derive(Debug, Clone)]
pub struct Batch<T> {
    pub scenario: ScenarioKind,
    pub reports: Vec<MetricsReport<T>>,
    pub aggregate: AggregateReport<T>,
    /// Event trace of replication 0, when requested.
    pub trace: Vec<TraceRecord<T>>,
}

/// Runs `cfg.rounds` replications of `scenario` in parallel. Results are
/// ordered by replication index, so they do not depend on the worker count.
pub fn run_batch<T: Real>(cfg: &RunConfig<T>, scenario: ScenarioKind, trace: bool) -> Result<Batch<T>, RunError> {
    let mut resolved = cfg.clone();
    resolved.scenario = scenario;
    let config_id = resolved.fingerprint();
    let results: Vec<(MetricsReport<T>, Vec<TraceRecord<T>>)> = (0..cfg.rounds)
        .into_par_iter()
        .map(|rep| {
            let mut outcome = run_replication(cfg, scenario, rep, trace && rep == 0)?;
            let mut report = compute_report(&outcome, cfg.horizon);
            report.config_id = config_id;
            Ok((report, std::mem::take(&mut outcome.trace)))
        })
        .collect::<Result<_, StationError>>()?;
    let mut reports = Vec::with_capacity(results.len());
    let mut first_trace = Vec::new();
    for (report, t) in results {
        if report.replication == 0 {
            first_trace = t;
        }
        reports.push(report);
    }
    let aggregate = aggregate(&reports)?;
    Ok(Batch {
        scenario,
        reports,
        aggregate,
        trace: first_trace,
    })
}

/// Resolved configuration embedded in every output file.
#[derive(Debug, Clone, Serialize)]
#[serde(bound = "T: Real")]
pub struct Provenance<T> {
    pub tool: &'static str,
    pub version: &'static str,
    pub scenario: ScenarioKind,
    pub seed: u64,
    pub rounds: u64,
    /// Command-line flags that replaced values from the config file.
    pub overrides: Vec<String>,
    pub config: RunConfig<T>,
}

impl<T: Real> Provenance<T> {
    pub fn new(config: &RunConfig<T>, overrides: Vec<String>) -> Self {
        Provenance {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            scenario: config.scenario,
            seed: config.seed,
            rounds: config.rounds,
            overrides,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct Traces<'a, T> {
    replication: u64,
    awt_trace: &'a [(T, T)],
    ewt_trace: &'a [(T, T)],
}

#[derive(Debug, Serialize)]
#[serde(bound = "T: Real")]
struct RunDocument<'a, T> {
    provenance: &'a Provenance<T>,
    aggregate: &'a AggregateReport<T>,
    traces: Traces<'a, T>,
}

/// Writes `<scenario>.csv`, `<scenario>.json` and, if the batch carries one,
/// `<scenario>_trace.csv` into `dir`. Returns the paths written.
pub fn write_batch<T: Real>(
    batch: &Batch<T>,
    provenance: &Provenance<T>,
    dir: &Path,
) -> Result<Vec<PathBuf>, RunError> {
    let stem = batch.scenario.name();
    let prov_json = serde_json::to_string(provenance).map_err(|source| MetricsError::Json {
        path: dir.to_path_buf(),
        source,
    })?;
    let csv_path = dir.join(format!("{stem}.csv"));
    write_csv(&batch.reports, Some(&prov_json), &csv_path)?;
    let first = batch.reports.first();
    let doc = RunDocument {
        provenance,
        aggregate: &batch.aggregate,
        traces: Traces {
            replication: 0,
            awt_trace: first.map_or(&[][..], |r| &r.awt_trace),
            ewt_trace: first.map_or(&[][..], |r| &r.ewt_trace),
        },
    };
    let json_path = dir.join(format!("{stem}.json"));
    write_json(&doc, &json_path)?;
    let mut written = vec![csv_path, json_path];
    if !batch.trace.is_empty() {
        let trace_path = dir.join(format!("{stem}_trace.csv"));
        write_trace(&batch.trace, &trace_path)?;
        written.push(trace_path);
    }
    Ok(written)
}

/// Differences of one scenario against the first (baseline) scenario,
/// computed from the mean over replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow<T> {
    pub scenario: ScenarioKind,
    pub balking_pct: T,
    pub reneging_pct: T,
    pub service_pct: T,
    pub throughput: T,
    pub avg_wait: T,
    /// Relative fall in reneging %, in percent of the baseline.
    pub reneging_reduction_pct: T,
    /// Service % minus the baseline's, in percentage points.
    pub service_gain_pts: T,
    /// Relative throughput change, in percent of the baseline.
    pub throughput_gain_pct: T,
    pub balking_delta_pts: T,
    pub avg_wait_delta: T,
}

#[derive(Debug, Clone)]
pub struct Comparison<T> {
    pub batches: Vec<Batch<T>>,
    pub rows: Vec<ComparisonRow<T>>,
    /// Every replication saw the same number of arrivals in every scenario.
    pub arrivals_match: bool,
}

fn relative<T: Real>(value: T, base: T) -> T {
    if base == T::zero() {
        T::zero()
    } else {
        T::lit(100.0) * (value - base) / base
    }
}

/// Runs every scenario with the same seed. Arrival times and agent
/// attributes depend only on (seed, replication), so replication `r` sees the
/// same arrivals in each scenario.
pub fn compare<T: Real>(cfg: &RunConfig<T>, scenarios: &[ScenarioKind]) -> Result<Comparison<T>, RunError> {
    if scenarios.len() < 2 {
        return Err(RunError::Usage("compare needs at least two scenarios".into()));
    }
    let batches = scenarios
        .iter()
        .map(|&s| run_batch(cfg, s, false))
        .collect::<Result<Vec<_>, _>>()?;
    let base = &batches[0].aggregate;
    let rows = batches
        .iter()
        .map(|b| {
            let a = &b.aggregate;
            ComparisonRow {
                scenario: b.scenario,
                balking_pct: a.balking_pct.mean,
                reneging_pct: a.reneging_pct.mean,
                service_pct: a.service_pct.mean,
                throughput: a.throughput.mean,
                avg_wait: a.avg_wait.mean,
                reneging_reduction_pct: -relative(a.reneging_pct.mean, base.reneging_pct.mean),
                service_gain_pts: a.service_pct.mean - base.service_pct.mean,
                throughput_gain_pct: relative(a.throughput.mean, base.throughput.mean),
                balking_delta_pts: a.balking_pct.mean - base.balking_pct.mean,
                avg_wait_delta: a.avg_wait.mean - base.avg_wait.mean,
            }
        })
        .collect();
    let arrivals_match = batches.iter().all(|b| {
        b.reports
            .iter()
            .zip(&batches[0].reports)
            .all(|(x, y)| x.arrivals == y.arrivals)
    });
    Ok(Comparison {
        batches,
        rows,
        arrivals_match,
    })
}

/// One cell of the queueing-theory validation grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidateParams<T> {
    pub lambda: T,
    pub mu: T,
    /// System capacity: at most `k` customers, one in service.
    pub k: u32,
    /// Per-customer reneging rate; zero means unbounded patience.
    pub theta: T,
    pub arrivals: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidateCell<T> {
    pub params: ValidateParams<T>,
    pub sim_blocking: T,
    pub oracle_blocking: T,
    pub sim_mean_queue: T,
    pub oracle_mean_queue: T,
    pub sim_mean_wait: T,
    pub oracle_mean_wait: T,
    /// Fraction of time with `n` customers present, `n = 0..=k`.
    pub sim_occupancy: Vec<T>,
    pub oracle_occupancy: Vec<T>,
    pub max_occupancy_error: T,
    pub within_tolerance: bool,
}

/// Simulates the reduced station (forced balking only, exponential service,
/// exponential or no reneging) and compares it with the birth–death chain.
pub fn validate_cell<T: Real>(p: ValidateParams<T>) -> Result<ValidateCell<T>, RunError> {
    let q = QueueParams::new(p.lambda, p.mu, p.k).with_theta(p.theta);
    q.validate()?;
    if p.arrivals == 0 {
        return Err(RunError::Usage("validation needs at least one arrival".into()));
    }
    let summary = queue_summary(&q)?;
    let oracle_blocking = if p.theta == T::zero() {
        mm1k_blocking(q.rho(), p.k)?
    } else {
        summary.blocking
    };
    let (births, deaths) = reneging_rates(&q);
    let chain = birth_death_steady_state(&births, &deaths)?;

    let mut sc = StationConfig::new(ScenarioKind::BlockingFC, p.lambda, T::max_value());
    sc.queue_capacity = (p.k - 1) as usize;
    sc.service = ServiceModel::Exponential { rate: p.mu };
    sc.patience = if p.theta > T::zero() {
        PatienceModel::Exponential { rate: p.theta }
    } else {
        PatienceModel::Infinite
    };
    sc.max_arrivals = Some(p.arrivals);
    sc.record_agents = false;
    sc.record_occupancy = true;
    sc.audit = false;
    let out = Station::new(sc, ChargingProfile::default(), AgentConfig::default(), p.seed, 0).run()?;

    let span = out.end_time;
    let mut sim_occupancy: Vec<T> = out.occupancy.iter().map(|&t| t / span).collect();
    sim_occupancy.resize(p.k as usize + 1, T::zero());
    let sim_mean_queue = sim_occupancy
        .iter()
        .enumerate()
        .skip(1)
        .fold(T::zero(), |acc, (n, &f)| acc + T::count(n as u64 - 1) * f);
    let sim_blocking = T::count(out.counters.balked_forced) / T::count(out.counters.arrivals);
    let max_occupancy_error = sim_occupancy
        .iter()
        .zip(&chain.probabilities)
        .map(|(s, o)| (*s - *o).abs())
        .fold(T::zero(), T::max);
    let within_tolerance = (sim_blocking - oracle_blocking).abs() <= T::lit(BLOCKING_TOLERANCE)
        && max_occupancy_error <= T::lit(OCCUPANCY_TOLERANCE);
    Ok(ValidateCell {
        params: p,
        sim_blocking,
        oracle_blocking,
        sim_mean_queue,
        oracle_mean_queue: summary.mean_queue,
        sim_mean_wait: out.avg_wait(),
        oracle_mean_wait: summary.mean_wait,
        sim_occupancy,
        oracle_occupancy: chain.probabilities,
        max_occupancy_error,
        within_tolerance,
    })
}

/// Runs every cell in parallel, returning them in input order.
pub fn validate_grid<T: Real>(cells: &[ValidateParams<T>]) -> Result<Vec<ValidateCell<T>>, RunError> {
    cells.par_iter().map(|&p| validate_cell(p)).collect()
}
