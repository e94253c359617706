//! Run configuration: a flat TOML file whose keys mirror [`RunConfig`].
//!
//! ```toml
//! scenario = "InformedFC"
//! lambda = 0.6
//! horizon = 1019.0
//! rounds = 1000
//! seed = 24301
//! queue_capacity = 5
//! impatience_factor = 0.6
//! soc_range = [5.0, 60.0]
//! user_type_mix = [0.3333333333333333, 0.3333333333333333, 0.3333333333333334]
//! target_soc_policy = "all-100"          # or { fraction-80 = 0.5 }
//! wq_estimator = "cumulative"            # or { ewma = 0.1 }
//! patience_target = "knee"               # or "target"
//! ewt_occupancy = "port"                 # or "fast-phase"
//! avg_wait_includes_reneged = true
//!
//! [profile]
//! battery_capacity_kwh = 40.5
//! fast_rate = 1.25
//! slow_rate = 0.3125
//! knee_soc = 80.0
//! ```
//!
//! Every key is optional; missing keys take the defaults above.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{AgentConfig, ChargingProfile, TargetSocPolicy};
use crate::real::Real;
use crate::station::{EwtOccupancy, PatienceTarget, ScenarioKind, StationConfig, WqEstimator};

pub const DEFAULT_SEED: u64 = 24301;
pub const DEFAULT_HORIZON: f64 = 1019.0;
pub const DEFAULT_ROUNDS: u64 = 1000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Field { field: &'static str, message: String },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn field(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field,
        message: message.into(),
    }
}

/// The two demand regimes used throughout the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Rush,
    Low,
}

impl Preset {
    pub fn lambda(self) -> f64 {
        match self {
            Preset::Rush => 0.6,
            Preset::Low => 0.1,
        }
    }
}

impl FromStr for Preset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rush" => Ok(Preset::Rush),
            "low" => Ok(Preset::Low),
            other => Err(format!("unknown preset '{other}' (expected rush or low)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, bound = "T: Real")]
pub struct RunConfig<T> {
    pub scenario: ScenarioKind,
    /// Arrivals per minute.
    pub lambda: T,
    /// Minutes simulated per replication.
    pub horizon: T,
    pub rounds: u64,
    pub seed: u64,
    /// Waiting slots, excluding the charger ports.
    pub queue_capacity: usize,
    pub impatience_factor: T,
    pub soc_range: [T; 2],
    pub user_type_mix: [T; 3],
    pub target_soc_policy: TargetSocPolicy<T>,
    pub wq_estimator: WqEstimator<T>,
    pub patience_target: PatienceTarget,
    /// Occupancy term of the wait estimate shared in informed scenarios.
    pub ewt_occupancy: EwtOccupancy,
    pub avg_wait_includes_reneged: bool,
    pub profile: ChargingProfile<T>,
}

impl<T: Real> Default for RunConfig<T> {
    fn default() -> Self {
        let agents = AgentConfig::<T>::default();
        RunConfig {
            scenario: ScenarioKind::InformedFC,
            lambda: T::lit(Preset::Rush.lambda()),
            horizon: T::lit(DEFAULT_HORIZON),
            rounds: DEFAULT_ROUNDS,
            seed: DEFAULT_SEED,
            queue_capacity: 5,
            impatience_factor: agents.impatience_factor,
            soc_range: agents.soc_range,
            user_type_mix: agents.user_type_mix,
            target_soc_policy: agents.target_soc_policy,
            wq_estimator: WqEstimator::Cumulative,
            patience_target: PatienceTarget::Knee,
            ewt_occupancy: EwtOccupancy::Port,
            avg_wait_includes_reneged: true,
            profile: ChargingProfile::default(),
        }
    }
}

impl<T: Real> RunConfig<T> {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig<T> = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn with_preset(mut self, preset: Preset) -> Self {
        self.lambda = T::lit(preset.lambda());
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |v: T| v > T::zero() && v.is_finite();
        if !positive(self.lambda) {
            return Err(field("lambda", format!("{} is not a positive rate", self.lambda)));
        }
        if !positive(self.horizon) {
            return Err(field("horizon", format!("{} is not a positive duration", self.horizon)));
        }
        if self.rounds == 0 {
            return Err(field("rounds", "at least one round is required"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(field("seed", format!("{} does not fit a TOML integer", self.seed)));
        }
        if self.queue_capacity == 0 {
            return Err(field("queue_capacity", "at least one waiting slot is required"));
        }
        if !(self.impatience_factor >= T::zero() && self.impatience_factor.is_finite()) {
            return Err(field(
                "impatience_factor",
                format!("{} is not a non-negative number", self.impatience_factor),
            ));
        }
        self.profile.validate().map_err(|e| field("profile", e.to_string()))?;
        let [lo, hi] = self.soc_range;
        if !(lo >= T::zero() && lo < hi) {
            return Err(field("soc_range", format!("[{lo}, {hi}] must satisfy 0 <= min < max")));
        }
        if !(hi < self.profile.knee_soc) {
            return Err(field(
                "soc_range",
                format!("max {hi} must be below the knee {}", self.profile.knee_soc),
            ));
        }
        if self.user_type_mix.iter().any(|w| !(*w >= T::zero())) {
            return Err(field("user_type_mix", "weights must be non-negative"));
        }
        let sum = self.user_type_mix.iter().fold(T::zero(), |a, &b| a + b);
        if (sum - T::one()).abs() > T::lit(1e-6) {
            return Err(field("user_type_mix", format!("weights sum to {sum}, expected 1")));
        }
        if let TargetSocPolicy::FractionAtKnee(p) = self.target_soc_policy {
            if !(p >= T::zero() && p <= T::one()) {
                return Err(field("target_soc_policy", format!("fraction {p} outside [0, 1]")));
            }
        }
        if let WqEstimator::Ewma(alpha) = self.wq_estimator {
            if !(alpha > T::zero() && alpha <= T::one()) {
                return Err(field("wq_estimator", format!("ewma factor {alpha} outside (0, 1]")));
            }
        }
        Ok(())
    }

    pub fn agent_config(&self) -> AgentConfig<T> {
        AgentConfig {
            soc_range: self.soc_range,
            user_type_mix: self.user_type_mix,
            impatience_factor: self.impatience_factor,
            target_soc_policy: self.target_soc_policy,
        }
    }

    /// Station settings for one replication of `scenario`.
    pub fn station_config(&self, scenario: ScenarioKind) -> StationConfig<T> {
        let mut s = StationConfig::new(scenario, self.lambda, self.horizon);
        s.queue_capacity = self.queue_capacity;
        s.wq_estimator = self.wq_estimator;
        s.patience_target = self.patience_target;
        s.ewt_occupancy = self.ewt_occupancy;
        s.avg_wait_includes_reneged = self.avg_wait_includes_reneged;
        s.record_agents = false;
        s
    }

    /// Stable 64-bit FNV-1a digest of the serialized configuration.
    pub fn fingerprint(&self) -> u64 {
        let text = self.to_toml_string().unwrap_or_default();
        text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}
