//! Per-replication metrics, aggregation across replications, and CSV/JSON
//! export.
//!
//! Percentages use these denominators:
//! - balking and reneging: all arrivals;
//! - service: agents that queued, i.e. `served + reneged + in_system_at_end`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;
use crate::station::{Counters, ReplicationOutcome, ScenarioKind, TraceRecord};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot aggregate an empty list of reports")]
    Empty,
    #[error("reports come from different configurations ({0:#x} vs {1:#x})")]
    MixedConfig(u64, u64),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport<T> {
    pub scenario: ScenarioKind,
    pub replication: u64,
    pub seed: u64,
    /// Fingerprint of the resolved configuration that produced this report.
    pub config_id: u64,
    pub arrivals: u64,
    pub balked_forced: u64,
    pub balked_voluntary: u64,
    pub reneged: u64,
    pub served: u64,
    pub in_system_at_end: u64,
    pub balking_pct: T,
    pub reneging_pct: T,
    pub service_pct: T,
    /// Served EVs per minute.
    pub throughput: T,
    /// Mean queue wait in minutes.
    pub avg_wait: T,
    /// No arrivals: every percentage is reported as zero.
    pub degenerate: bool,
    pub awt_trace: Vec<(T, T)>,
    pub ewt_trace: Vec<(T, T)>,
}

fn pct<T: Real>(num: u64, den: u64) -> T {
    if den == 0 {
        T::zero()
    } else {
        T::lit(100.0) * T::count(num) / T::count(den)
    }
}

impl<T: Real> MetricsReport<T> {
    /// Builds the headline figures from raw counts.
    pub fn from_counters(scenario: ScenarioKind, counters: Counters, horizon: T, avg_wait: T) -> Self {
        let c = counters;
        let throughput = if horizon > T::zero() {
            T::count(c.served) / horizon
        } else {
            T::zero()
        };
        MetricsReport {
            scenario,
            replication: 0,
            seed: 0,
            config_id: 0,
            arrivals: c.arrivals,
            balked_forced: c.balked_forced,
            balked_voluntary: c.balked_voluntary,
            reneged: c.reneged,
            served: c.served,
            in_system_at_end: c.in_system_at_end,
            balking_pct: pct(c.balked_forced + c.balked_voluntary, c.arrivals),
            reneging_pct: pct(c.reneged, c.arrivals),
            service_pct: pct(c.served, c.queued()),
            throughput,
            avg_wait,
            degenerate: c.arrivals == 0,
            awt_trace: Vec::new(),
            ewt_trace: Vec::new(),
        }
    }

    pub fn counters(&self) -> Counters {
        Counters {
            arrivals: self.arrivals,
            balked_forced: self.balked_forced,
            balked_voluntary: self.balked_voluntary,
            reneged: self.reneged,
            served: self.served,
            in_system_at_end: self.in_system_at_end,
        }
    }
}

/// Report for a finished replication; throughput is measured over `horizon`.
pub fn compute_report<T: Real>(outcome: &ReplicationOutcome<T>, horizon: T) -> MetricsReport<T> {
    let mut r = MetricsReport::from_counters(outcome.scenario, outcome.counters, horizon, outcome.avg_wait());
    r.replication = outcome.replication;
    r.seed = outcome.seed;
    r.awt_trace = outcome.awt_trace.clone();
    r.ewt_trace = outcome.ewt_trace.clone();
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary<T> {
    pub mean: T,
    /// Sample standard deviation (0 for a single value).
    pub sd: T,
    /// Half-width of the 95% normal-approximation confidence interval.
    pub ci95: T,
}

/// Mean, sd and CI of `values`. The values are sorted first so the result
/// does not depend on their order.
pub fn summarize<T: Real>(values: &[T]) -> Summary<T> {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: T::zero(),
            sd: T::zero(),
            ci95: T::zero(),
        };
    }
    let mut xs = values.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let nn = T::count(n as u64);
    let mean = xs.iter().fold(T::zero(), |a, &b| a + b) / nn;
    let sd = if n > 1 {
        let mut dev: Vec<T> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
        dev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        (dev.iter().fold(T::zero(), |a, &b| a + b) / T::count(n as u64 - 1)).sqrt()
    } else {
        T::zero()
    };
    Summary {
        mean,
        sd,
        ci95: T::lit(1.96) * sd / nn.sqrt(),
    }
}

/// Mean and (population) variance of every trace value pooled together.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PooledTrace<T> {
    pub samples: u64,
    pub mean: T,
    pub variance: T,
}

pub fn pool_traces<'a, T: Real>(traces: impl IntoIterator<Item = &'a [(T, T)]>) -> Option<PooledTrace<T>> {
    let mut xs: Vec<T> = traces.into_iter().flat_map(|t| t.iter().map(|p| p.1)).collect();
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = T::count(xs.len() as u64);
    let mean = xs.iter().fold(T::zero(), |a, &b| a + b) / n;
    let mut dev: Vec<T> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
    dev.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Some(PooledTrace {
        samples: xs.len() as u64,
        mean,
        variance: dev.iter().fold(T::zero(), |a, &b| a + b) / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport<T> {
    pub scenario: ScenarioKind,
    pub replications: u64,
    pub config_id: u64,
    pub arrivals: Summary<T>,
    pub balked_forced: Summary<T>,
    pub balked_voluntary: Summary<T>,
    pub reneged: Summary<T>,
    pub served: Summary<T>,
    pub in_system_at_end: Summary<T>,
    pub balking_pct: Summary<T>,
    pub reneging_pct: Summary<T>,
    pub service_pct: Summary<T>,
    pub throughput: Summary<T>,
    pub avg_wait: Summary<T>,
    pub awt_pooled: Option<PooledTrace<T>>,
    pub ewt_pooled: Option<PooledTrace<T>>,
}

pub fn aggregate<T: Real>(reports: &[MetricsReport<T>]) -> Result<AggregateReport<T>, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    if let Some(other) = reports
        .iter()
        .find(|r| r.config_id != first.config_id || r.scenario != first.scenario)
    {
        return Err(MetricsError::MixedConfig(first.config_id, other.config_id));
    }
    let count =
        |f: fn(&MetricsReport<T>) -> u64| summarize(&reports.iter().map(|r| T::count(f(r))).collect::<Vec<_>>());
    let real = |f: fn(&MetricsReport<T>) -> T| summarize(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        scenario: first.scenario,
        replications: reports.len() as u64,
        config_id: first.config_id,
        arrivals: count(|r| r.arrivals),
        balked_forced: count(|r| r.balked_forced),
        balked_voluntary: count(|r| r.balked_voluntary),
        reneged: count(|r| r.reneged),
        served: count(|r| r.served),
        in_system_at_end: count(|r| r.in_system_at_end),
        balking_pct: real(|r| r.balking_pct),
        reneging_pct: real(|r| r.reneging_pct),
        service_pct: real(|r| r.service_pct),
        throughput: real(|r| r.throughput),
        avg_wait: real(|r| r.avg_wait),
        awt_pooled: pool_traces(reports.iter().map(|r| r.awt_trace.as_slice())),
        ewt_pooled: pool_traces(reports.iter().map(|r| r.ewt_trace.as_slice())),
    })
}

/// Column order of the per-replication CSV.
pub const CSV_HEADER: &str = "replication,seed,arrivals,balked_forced,balked_voluntary,reneged,served,in_system,\
balking_pct,reneging_pct,service_pct,throughput_per_min,avg_wait_min";

/// One row of the per-replication CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow<T> {
    pub replication: u64,
    pub seed: u64,
    pub arrivals: u64,
    pub balked_forced: u64,
    pub balked_voluntary: u64,
    pub reneged: u64,
    pub served: u64,
    pub in_system: u64,
    pub balking_pct: T,
    pub reneging_pct: T,
    pub service_pct: T,
    pub throughput_per_min: T,
    pub avg_wait_min: T,
}

impl<T: Real> From<&MetricsReport<T>> for CsvRow<T> {
    fn from(r: &MetricsReport<T>) -> Self {
        CsvRow {
            replication: r.replication,
            seed: r.seed,
            arrivals: r.arrivals,
            balked_forced: r.balked_forced,
            balked_voluntary: r.balked_voluntary,
            reneged: r.reneged,
            served: r.served,
            in_system: r.in_system_at_end,
            balking_pct: r.balking_pct,
            reneging_pct: r.reneging_pct,
            service_pct: r.service_pct,
            throughput_per_min: r.throughput,
            avg_wait_min: r.avg_wait,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, MetricsError> {
    let io = |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    File::create(path).map(BufWriter::new).map_err(io)
}

/// Writes one row per report. The optional provenance string is written first
/// as a `#` comment line.
pub fn write_csv<T: Real>(
    reports: &[MetricsReport<T>],
    provenance: Option<&str>,
    path: &Path,
) -> Result<(), MetricsError> {
    let mut out = create(path)?;
    let io = |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(p) = provenance {
        writeln!(out, "# {}", p.replace('\n', " ")).map_err(io)?;
    }
    let mut w = csv::Writer::from_writer(out);
    for r in reports {
        w.serialize(CsvRow::from(r)).map_err(|source| MetricsError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
    }
    w.flush().map_err(io)
}

pub fn read_csv<T: Real>(path: &Path) -> Result<Vec<CsvRow<T>>, MetricsError> {
    let csv_err = |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(csv_err)?;
    r.deserialize().collect::<Result<Vec<_>, _>>().map_err(csv_err)
}

/// Writes one `t,kind,agent,port,queue_len,n_sys` line per dispatched event.
pub fn write_trace<T: Real>(records: &[TraceRecord<T>], path: &Path) -> Result<(), MetricsError> {
    let mut out = create(path)?;
    let io = |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    };
    writeln!(out, "t,kind,agent,port,queue_len,n_sys").map_err(io)?;
    for r in records {
        let agent = r.agent.map(|a| a.0.to_string()).unwrap_or_default();
        let port = r.port.map(|p| p.0.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{},{},{}", r.t, r.kind, agent, port, r.queue_len, r.n_sys).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_json<S: Serialize + ?Sized>(value: &S, path: &Path) -> Result<(), MetricsError> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|source| MetricsError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writeln!(out)
        .and_then(|_| out.flush())
        .map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })
}
