//! Discrete-event simulator of an EV fast-charging station whose users may
//! balk or renege.
//!
//! The crate is generic over the floating-point scalar ([`Real`]); the
//! aliases at the root fix it to `f64`, which is what the CLI uses.
//!
//! ```
//! use chargesim::{RunConfig, ScenarioKind};
//!
//! let mut cfg = RunConfig::default();
//! cfg.rounds = 4;
//! let batch = chargesim::runner::run_batch(&cfg, ScenarioKind::InformedFC, false).unwrap();
//! assert_eq!(batch.reports.len(), 4);
//! assert!(batch.reports.iter().all(|r| r.counters().conserved()));
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod analytic;
pub mod cli;
pub mod config;
pub mod metrics;
pub mod real;
pub mod runner;
pub mod sim;
pub mod station;

pub use real::Real;
pub use station::{Admission, Counters, PortState, ScenarioKind};

pub type SimTime = sim::SimTime<f64>;
pub type EventCalendar = sim::EventCalendar<f64>;
pub type ChargingProfile = agent::ChargingProfile<f64>;
pub type AgentConfig = agent::AgentConfig<f64>;
pub type EvAgent = agent::EvAgent<f64>;
pub type Station = station::Station<f64>;
pub type StationConfig = station::StationConfig<f64>;
pub type ReplicationOutcome = station::ReplicationOutcome<f64>;
pub type MetricsReport = metrics::MetricsReport<f64>;
pub type AggregateReport = metrics::AggregateReport<f64>;
pub type RunConfig = config::RunConfig<f64>;
pub type QueueParams = analytic::QueueParams<f64>;
