//! EV + user agents: piecewise-linear charging physics, patience thresholds
//! and the wait assumptions of the three user types.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;
use crate::sim::{AgentId, Purpose, RngStream};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("state of charge interval [{from}, {to}] is not within 0 <= from <= to <= 100")]
    SocInterval { from: f64, to: f64 },
    #[error("invalid charging profile: {0}")]
    Profile(String),
    #[error("invalid agent configuration: {0}")]
    Config(String),
    #[error("agent {id} already has disposition {current:?}")]
    AlreadyDisposed { id: AgentId, current: Disposition },
}

/// Two-rate charging curve: `fast_rate` up to `knee_soc`, `slow_rate` above.
/// Rates are in SoC percent per minute.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChargingProfile<T> {
    pub battery_capacity_kwh: T,
    pub fast_rate: T,
    pub slow_rate: T,
    pub knee_soc: T,
}

impl<T: Real> Default for ChargingProfile<T> {
    /// 40.5 kWh pack charging 10% → 80% in 56 min (1.25 %/min), with the last
    /// 20% taking as long as the first 80% (0.3125 %/min).
    fn default() -> Self {
        ChargingProfile {
            battery_capacity_kwh: T::lit(40.5),
            fast_rate: T::lit(1.25),
            slow_rate: T::lit(0.3125),
            knee_soc: T::lit(80.0),
        }
    }
}

impl<T: Real> ChargingProfile<T> {
    pub fn validate(&self) -> Result<(), AgentError> {
        let p = |m: &str| Err(AgentError::Profile(m.to_string()));
        if !(self.slow_rate > T::zero()) {
            return p("slow_rate must be positive");
        }
        if !(self.fast_rate > self.slow_rate) {
            return p("fast_rate must exceed slow_rate");
        }
        if !(self.knee_soc > T::zero() && self.knee_soc < T::lit(100.0)) {
            return p("knee_soc must lie strictly between 0 and 100");
        }
        if !(self.battery_capacity_kwh > T::zero()) {
            return p("battery_capacity_kwh must be positive");
        }
        Ok(())
    }

    /// Minutes to charge from `soc_from` to `soc_to` percent.
    pub fn charge_time(&self, soc_from: T, soc_to: T) -> Result<T, AgentError> {
        let hundred = T::lit(100.0);
        if !(T::zero() <= soc_from && soc_from <= soc_to && soc_to <= hundred) {
            return Err(AgentError::SocInterval {
                from: soc_from.as_f64(),
                to: soc_to.as_f64(),
            });
        }
        let knee = self.knee_soc;
        let fast = (soc_to.min(knee) - soc_from.min(knee)) / self.fast_rate;
        let slow = (soc_to.max(knee) - soc_from.max(knee)) / self.slow_rate;
        Ok(fast + slow)
    }

    /// Minutes of fast charging needed to bring `soc` up to the knee (0 above it).
    pub fn fast_time(&self, soc: T) -> T {
        if soc >= self.knee_soc {
            T::zero()
        } else {
            (self.knee_soc - soc.max(T::zero())) / self.fast_rate
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum UserType {
    Pessimist,
    Standard,
    Optimist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Disposition {
    Pending,
    BalkedForced,
    BalkedVoluntary,
    Reneged,
    Served,
    InSystemAtEnd,
}

/// How far each agent charges once plugged in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TargetSocPolicy<T> {
    /// Every agent charges to 100%.
    #[serde(rename = "all-100")]
    AllFull,
    /// This fraction of agents unplug at the knee; the rest charge to 100%.
    #[serde(rename = "fraction-80")]
    FractionAtKnee(T),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig<T> {
    /// Arrival SoC is drawn uniformly from `[min, max)` percent.
    pub soc_range: [T; 2],
    /// Weights for (pessimist, standard, optimist).
    pub user_type_mix: [T; 3],
    /// Fraction of the required fast-charge time a user tolerates waiting.
    pub impatience_factor: T,
    pub target_soc_policy: TargetSocPolicy<T>,
}

impl<T: Real> Default for AgentConfig<T> {
    fn default() -> Self {
        let third = T::one() / T::lit(3.0);
        AgentConfig {
            soc_range: [T::lit(5.0), T::lit(60.0)],
            user_type_mix: [third, third, third],
            impatience_factor: T::lit(0.6),
            target_soc_policy: TargetSocPolicy::AllFull,
        }
    }
}

impl<T: Real> AgentConfig<T> {
    pub fn validate(&self, profile: &ChargingProfile<T>) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::Config(m));
        let [lo, hi] = self.soc_range;
        if !(lo >= T::zero() && lo < hi) {
            return bad(format!("soc_range [{lo}, {hi}] must satisfy 0 <= min < max"));
        }
        if !(hi < profile.knee_soc) {
            return bad(format!(
                "soc_range max {hi} must be below the knee {}",
                profile.knee_soc
            ));
        }
        if self.user_type_mix.iter().any(|w| !(*w >= T::zero())) {
            return bad("user_type_mix weights must be non-negative".into());
        }
        let sum = self.user_type_mix.iter().fold(T::zero(), |a, &b| a + b);
        if (sum - T::one()).abs() > T::lit(1e-6) {
            return bad(format!("user_type_mix weights sum to {sum}, expected 1"));
        }
        if !(self.impatience_factor >= T::zero()) || !self.impatience_factor.is_finite() {
            return bad("impatience_factor must be a non-negative number".into());
        }
        if let TargetSocPolicy::FractionAtKnee(p) = self.target_soc_policy {
            if !(p >= T::zero() && p <= T::one()) {
                return bad(format!("fraction-80 share {p} outside [0, 1]"));
            }
        }
        Ok(())
    }
}

/// One EV and its driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvAgent<T> {
    pub id: AgentId,
    pub arrival_time: T,
    pub soc_arrive: T,
    pub target_soc: T,
    pub user_type: UserType,
    pub impatience_factor: T,
    /// Longest queue wait tolerated, in minutes.
    pub patience_threshold: T,
    pub queue_entry_time: Option<T>,
    pub service_start: Option<T>,
    pub disposition: Disposition,
}

impl<T: Real> EvAgent<T> {
    pub fn dispose(&mut self, to: Disposition) -> Result<(), AgentError> {
        if self.disposition != Disposition::Pending || to == Disposition::Pending {
            return Err(AgentError::AlreadyDisposed {
                id: self.id,
                current: self.disposition,
            });
        }
        self.disposition = to;
        Ok(())
    }

    /// Time spent in the queue before service started.
    pub fn service_wait(&self) -> Option<T> {
        Some(self.service_start? - self.queue_entry_time?)
    }
}

/// z × T(soc → knee); zero for agents already at or above the knee.
pub fn patience_threshold<T: Real>(soc: T, impatience_factor: T, profile: &ChargingProfile<T>) -> T {
    impatience_factor * profile.fast_time(soc)
}

/// Wait the arriving user assumes after looking at the station.
///
/// Pessimists assume every EV present needs a worst-case (lowest SoC) charge;
/// standard users assume each queued EV needs what they need; optimists assume
/// each queued EV needs a best-case (highest SoC) charge.
pub fn assumed_wait<T: Real>(
    user_type: UserType,
    soc: T,
    n_queue: usize,
    n_sys: usize,
    profile: &ChargingProfile<T>,
    soc_range: [T; 2],
) -> T {
    match user_type {
        UserType::Pessimist => profile.fast_time(soc_range[0]) * T::count(n_sys as u64),
        UserType::Standard => profile.fast_time(soc) * T::count(n_queue as u64),
        UserType::Optimist => profile.fast_time(soc_range[1]) * T::count(n_queue as u64),
    }
}

/// Random streams consumed once per arriving agent.
#[derive(Debug, Clone)]
pub struct AgentStreams {
    soc: RngStream,
    user_type: RngStream,
    target: RngStream,
}

impl AgentStreams {
    pub fn new(seed: u64, replication: u64) -> Self {
        AgentStreams {
            soc: RngStream::new(seed, Purpose::InitialSoc, replication),
            user_type: RngStream::new(seed, Purpose::UserType, replication),
            target: RngStream::new(seed, Purpose::TargetSoc, replication),
        }
    }
}

/// Draws a new agent. Exactly one value is taken from each stream so agent
/// `i` is the same regardless of what happened to agents before it.
pub fn sample_agent<T: Real>(
    streams: &mut AgentStreams,
    id: AgentId,
    arrival_time: T,
    config: &AgentConfig<T>,
    profile: &ChargingProfile<T>,
) -> EvAgent<T> {
    let soc = streams.soc.uniform(config.soc_range[0], config.soc_range[1]);

    let u: T = streams.user_type.unit();
    let [wp, ws, _] = config.user_type_mix;
    let user_type = if u < wp {
        UserType::Pessimist
    } else if u < wp + ws {
        UserType::Standard
    } else {
        UserType::Optimist
    };

    let v: T = streams.target.unit();
    let target_soc = match config.target_soc_policy {
        TargetSocPolicy::FractionAtKnee(p) if v < p => profile.knee_soc,
        _ => T::lit(100.0),
    };

    EvAgent {
        id,
        arrival_time,
        soc_arrive: soc,
        target_soc,
        user_type,
        impatience_factor: config.impatience_factor,
        patience_threshold: patience_threshold(soc, config.impatience_factor, profile),
        queue_entry_time: None,
        service_start: None,
        disposition: Disposition::Pending,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn profile() -> ChargingProfile<f64> {
        ChargingProfile::default()
    }

    #[test]
    fn charge_time_anchor() {
        assert_eq!(profile().charge_time(10.0, 80.0).unwrap(), 56.0);
        assert_eq!(profile().charge_time(80.0, 80.0).unwrap(), 0.0);
        assert_eq!(profile().charge_time(5.0, 80.0).unwrap(), 60.0);
    }

    #[test]
    fn full_charge_splits_evenly_across_knee() {
        let p = profile();
        assert_eq!(p.charge_time(0.0, 80.0).unwrap(), 64.0);
        assert_eq!(p.charge_time(80.0, 100.0).unwrap(), 64.0);
        assert_eq!(p.charge_time(0.0, 100.0).unwrap(), 128.0);
    }

    #[test]
    fn charge_time_domain() {
        let p = profile();
        assert!(p.charge_time(50.0, 40.0).is_err());
        assert!(p.charge_time(-1.0, 40.0).is_err());
        assert!(p.charge_time(10.0, 101.0).is_err());
    }

    #[test]
    fn profile_validation() {
        assert!(profile().validate().is_ok());
        let mut p = profile();
        p.slow_rate = 2.0;
        assert!(p.validate().is_err());
        let mut p = profile();
        p.knee_soc = 100.0;
        assert!(p.validate().is_err());
    }

    #[test]
    fn patience_examples() {
        let p = profile();
        assert_abs_diff_eq!(patience_threshold(10.0, 0.6, &p), 33.6, epsilon = 1e-12);
        assert_abs_diff_eq!(patience_threshold(5.0, 0.6, &p), 36.0, epsilon = 1e-12);
        assert_eq!(patience_threshold(10.0, 0.0, &p), 0.0);
        assert_eq!(patience_threshold(85.0, 0.6, &p), 0.0);
    }

    #[test]
    fn assumed_wait_examples() {
        let p = profile();
        let r = [5.0, 60.0];
        assert_abs_diff_eq!(assumed_wait(UserType::Pessimist, 30.0, 2, 3, &p, r), 180.0);
        assert_abs_diff_eq!(assumed_wait(UserType::Optimist, 30.0, 3, 4, &p, r), 48.0);
        assert_abs_diff_eq!(assumed_wait(UserType::Standard, 10.0, 2, 3, &p, r), 112.0);
        for ty in [UserType::Pessimist, UserType::Standard, UserType::Optimist] {
            assert_eq!(assumed_wait(ty, 20.0, 0, 0, &p, r), 0.0);
        }
    }

    #[test]
    fn sampled_soc_mean() {
        let cfg = AgentConfig::default();
        let p = profile();
        let mut s = AgentStreams::new(5, 0);
        let n = 1_000_000;
        let mean = (0..n)
            .map(|i| sample_agent(&mut s, AgentId(i), 0.0, &cfg, &p).soc_arrive)
            .sum::<f64>()
            / n as f64;
        assert!((mean - 32.5).abs() <= 0.1, "mean {mean}");
    }

    #[test]
    fn degenerate_mix_gives_one_type() {
        let cfg = AgentConfig {
            user_type_mix: [0.0, 1.0, 0.0],
            ..AgentConfig::default()
        };
        let p = profile();
        let mut s = AgentStreams::new(9, 2);
        assert!((0..10_000).all(|i| sample_agent(&mut s, AgentId(i), 0.0, &cfg, &p).user_type == UserType::Standard));
    }

    #[test]
    fn sampled_patience_follows_soc() {
        let cfg = AgentConfig::default();
        let p = profile();
        let mut s = AgentStreams::new(1, 0);
        for i in 0..1000 {
            let a = sample_agent(&mut s, AgentId(i), 0.0, &cfg, &p);
            assert_eq!(a.patience_threshold, 0.6 * p.charge_time(a.soc_arrive, 80.0).unwrap());
            assert!(a.soc_arrive >= 5.0 && a.soc_arrive < 60.0);
            assert!(a.soc_arrive < a.target_soc);
        }
    }

    #[test]
    fn target_policy_fraction() {
        let cfg = AgentConfig {
            target_soc_policy: TargetSocPolicy::FractionAtKnee(0.25),
            ..AgentConfig::default()
        };
        let p = profile();
        let mut s = AgentStreams::new(3, 0);
        let n = 100_000;
        let at_knee = (0..n)
            .filter(|&i| sample_agent(&mut s, AgentId(i), 0.0, &cfg, &p).target_soc == 80.0)
            .count();
        assert!((at_knee as f64 / n as f64 - 0.25).abs() < 0.01);
    }

    #[test]
    fn config_validation() {
        let p = profile();
        assert!(AgentConfig::<f64>::default().validate(&p).is_ok());
        let bad_range = AgentConfig {
            soc_range: [60.0, 5.0],
            ..AgentConfig::default()
        };
        assert!(bad_range.validate(&p).is_err());
        let bad_mix = AgentConfig {
            user_type_mix: [0.5, 0.5, 0.5],
            ..AgentConfig::default()
        };
        assert!(bad_mix.validate(&p).is_err());
    }

    #[test]
    fn disposition_is_set_once() {
        let mut s = AgentStreams::new(3, 0);
        let mut a = sample_agent(&mut s, AgentId(0), 0.0, &AgentConfig::default(), &profile());
        a.dispose(Disposition::Served).unwrap();
        assert!(a.dispose(Disposition::Reneged).is_err());
    }

    proptest! {
        #[test]
        fn charge_time_is_additive(mut xs in proptest::array::uniform3(0.0f64..=100.0)) {
            xs.sort_by(f64::total_cmp);
            let p = profile();
            let [a, b, c] = xs;
            let whole = p.charge_time(a, c).unwrap();
            let parts = p.charge_time(a, b).unwrap() + p.charge_time(b, c).unwrap();
            prop_assert!((whole - parts).abs() <= 1e-9);
        }

        #[test]
        fn charge_time_is_monotone(a in 0.0f64..=100.0, b in 0.0f64..=100.0, d in 0.0f64..=10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p = profile();
            let base = p.charge_time(lo, hi).unwrap();
            prop_assert!(p.charge_time(lo, (hi + d).min(100.0)).unwrap() >= base);
            prop_assert!(p.charge_time((lo - d).max(0.0), hi).unwrap() >= base);
        }

        #[test]
        fn patience_decreases_with_soc(a in 5.0f64..79.0, d in 0.01f64..1.0) {
            let p = profile();
            let b = (a + d).min(79.99);
            prop_assert!(patience_threshold(a, 0.6, &p) > patience_threshold(b, 0.6, &p));
        }

        #[test]
        fn pessimists_assume_longest(soc in 5.0f64..60.0, nq in 0usize..10, extra in 0usize..3) {
            let p = profile();
            let r = [5.0, 60.0];
            let ns = nq + extra;
            let pes = assumed_wait(UserType::Pessimist, soc, nq, ns, &p, r);
            let std = assumed_wait(UserType::Standard, soc, nq, ns, &p, r);
            let opt = assumed_wait(UserType::Optimist, soc, nq, ns, &p, r);
            prop_assert!(pes >= std && std >= opt);
        }
    }
}
