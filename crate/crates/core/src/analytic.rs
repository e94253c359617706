//! Closed-form queueing results and a birth–death steady-state solver.
//!
//! These are used as oracles for the simulator running in reduced
//! configurations (exponential service, Poisson arrivals). Throughout this
//! module `k` is the capacity of the chain: states are `0..=k` customers in
//! the system, one of whom may be in service.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("zero death rate into reachable state {state}")]
    Singular { state: usize },
    #[error("birth and death vectors must have equal non-zero length (got {births} and {deaths})")]
    Shape { births: usize, deaths: usize },
}

fn domain(msg: impl Into<String>) -> AnalyticError {
    AnalyticError::Domain(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueParams<T> {
    /// Arrival rate per minute.
    pub lambda: T,
    /// Service rate per minute, per server.
    pub mu: T,
    /// System capacity (highest chain state).
    pub k: u32,
    /// Number of servers.
    pub c: u32,
    /// Per-customer impatience rate per minute.
    pub theta: T,
    /// Balking sensitivity to queue length.
    pub sigma: T,
}

impl<T: Real> QueueParams<T> {
    pub fn new(lambda: T, mu: T, k: u32) -> Self {
        QueueParams {
            lambda,
            mu,
            k,
            c: 1,
            theta: T::zero(),
            sigma: T::zero(),
        }
    }

    pub fn with_theta(mut self, theta: T) -> Self {
        self.theta = theta;
        self
    }

    pub fn validate(&self) -> Result<(), AnalyticError> {
        if !(self.lambda > T::zero()) || !(self.mu > T::zero()) {
            return Err(domain("lambda and mu must be positive"));
        }
        if !(self.theta >= T::zero()) || !(self.sigma >= T::zero()) {
            return Err(domain("theta and sigma must be non-negative"));
        }
        if self.k < 1 || self.c < 1 {
            return Err(domain("k and c must be at least 1"));
        }
        Ok(())
    }

    /// Traffic intensity λ/μ.
    pub fn rho(&self) -> T {
        self.lambda / self.mu
    }
}

/// Arrival rate into the queue after balking: λ·(1 − P_B).
pub fn lambda_eff<T: Real>(lambda: T, balk_prob: T) -> Result<T, AnalyticError> {
    if !(balk_prob >= T::zero() && balk_prob <= T::one()) {
        return Err(domain(format!("balk probability {balk_prob} outside [0, 1]")));
    }
    Ok(lambda * (T::one() - balk_prob))
}

/// Probability that an M/M/1/k system is full: (1−ρ)ρ^k / (1−ρ^{k+1}).
///
/// Evaluated as a geometric sum close to ρ = 1, where the closed form is 0/0,
/// and in reciprocal form for ρ > 1 so large ρ does not overflow.
pub fn mm1k_blocking<T: Real>(rho: T, k: u32) -> Result<T, AnalyticError> {
    if k < 1 {
        return Err(domain("k must be at least 1"));
    }
    if !(rho > T::zero()) || !rho.is_finite() {
        return Err(domain(format!("rho must be positive and finite, got {rho}")));
    }
    let one = T::one();
    let n = k as i32;
    if (rho - one).abs() <= T::lit(1e-3) {
        let mut sum = T::zero();
        let mut term = one;
        for _ in 0..=k {
            sum = sum + term;
            term = term * rho;
        }
        return Ok(rho.powi(n) / sum);
    }
    if rho < one {
        Ok((one - rho) * rho.powi(n) / (one - rho.powi(n + 1)))
    } else {
        let inv = rho.recip();
        Ok((one - inv) / (one - inv.powi(n + 1)))
    }
}

/// Voluntary balking probability e^{−(1−w)σ}, clamped to 1.
///
/// The exponent as written grows with the queue length `w`, so the raw value
/// exceeds 1 whenever `w > 1` and `σ > 0`.
pub fn voluntary_balk_prob<T: Real>(w: u32, sigma: T) -> Result<T, AnalyticError> {
    if w < 1 {
        return Err(domain("queue length w must be at least 1"));
    }
    if !(sigma >= T::zero()) {
        return Err(domain("sigma must be non-negative"));
    }
    let raw = (-(T::one() - T::count(w as u64)) * sigma).exp();
    Ok(raw.min(T::one()))
}

/// Average number in the system with reneging: ρ/(1−ρ) + P_r.
pub fn nsys_with_reneging<T: Real>(rho: T, renege_prob: T) -> Result<T, AnalyticError> {
    if !(rho > T::zero() && rho < T::one()) {
        return Err(domain(format!("rho must lie in (0, 1), got {rho}")));
    }
    if !(renege_prob >= T::zero() && renege_prob <= T::one()) {
        return Err(domain("renege probability outside [0, 1]"));
    }
    Ok(rho / (T::one() - rho) + renege_prob)
}

/// Queue wait with reneging: ρ/(μ(1−ρ)) + P_r/λ_eff.
pub fn wq_with_reneging<T: Real>(rho: T, mu: T, renege_prob: T, lambda_eff: T) -> Result<T, AnalyticError> {
    if !(rho > T::zero() && rho < T::one()) {
        return Err(domain(format!("rho must lie in (0, 1), got {rho}")));
    }
    if !(mu > T::zero()) {
        return Err(domain("mu must be positive"));
    }
    if !(renege_prob >= T::zero() && renege_prob <= T::one()) {
        return Err(domain("renege probability outside [0, 1]"));
    }
    if !(lambda_eff > T::zero()) {
        if renege_prob > T::zero() {
            return Err(domain("lambda_eff must be positive when renege probability > 0"));
        }
        return Ok(rho / (mu * (T::one() - rho)));
    }
    Ok(rho / (mu * (T::one() - rho)) + renege_prob / lambda_eff)
}

/// Stationary distribution of a birth–death chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState<T> {
    pub probabilities: Vec<T>,
    pub mean_population: T,
    /// Accepted-arrival rate Σ birth[i]·p[i], equal to the total departure rate.
    pub throughput: T,
}

impl<T: Real> SteadyState<T> {
    /// Probability of the top (full) state.
    pub fn top(&self) -> T {
        *self.probabilities.last().expect("chain has at least two states")
    }

    /// Mean number waiting when `servers` customers can be in service.
    pub fn mean_queue(&self, servers: usize) -> T {
        self.probabilities
            .iter()
            .enumerate()
            .skip(servers)
            .fold(T::zero(), |acc, (n, &p)| acc + T::count((n - servers) as u64) * p)
    }
}

/// Solves detailed balance `p[i+1] = p[i]·birth[i]/death[i]` for the chain with
/// states `0..=N`. Weights are accumulated in log space so long chains with
/// ρ > 1 do not overflow.
pub fn birth_death_steady_state<T: Real>(birth: &[T], death: &[T]) -> Result<SteadyState<T>, AnalyticError> {
    if birth.len() != death.len() || birth.is_empty() {
        return Err(AnalyticError::Shape {
            births: birth.len(),
            deaths: death.len(),
        });
    }
    if birth.iter().chain(death).any(|r| !(*r >= T::zero()) || !r.is_finite()) {
        return Err(domain("rates must be finite and non-negative"));
    }
    let neg_inf = T::neg_infinity();
    let mut log_w = Vec::with_capacity(birth.len() + 1);
    log_w.push(T::zero());
    for (i, (&b, &d)) in birth.iter().zip(death).enumerate() {
        let prev = log_w[i];
        let next = if prev == neg_inf || b == T::zero() {
            neg_inf
        } else if d == T::zero() {
            return Err(AnalyticError::Singular { state: i + 1 });
        } else {
            prev + b.ln() - d.ln()
        };
        log_w.push(next);
    }
    let max = log_w.iter().copied().fold(neg_inf, T::max);
    let weights: Vec<T> = log_w.iter().map(|&lw| (lw - max).exp()).collect();
    let total = weights.iter().copied().fold(T::zero(), |a, b| a + b);
    let probabilities: Vec<T> = weights.iter().map(|&w| w / total).collect();
    let mean_population = probabilities
        .iter()
        .enumerate()
        .fold(T::zero(), |acc, (n, &p)| acc + T::count(n as u64) * p);
    let throughput = birth
        .iter()
        .zip(&probabilities)
        .fold(T::zero(), |acc, (&b, &p)| acc + b * p);
    Ok(SteadyState {
        probabilities,
        mean_population,
        throughput,
    })
}

/// Constant-rate chain of an M/M/1/k queue.
pub fn mm1k_rates<T: Real>(lambda: T, mu: T, k: u32) -> (Vec<T>, Vec<T>) {
    (vec![lambda; k as usize], vec![mu; k as usize])
}

/// Chain with linear reneging: μ_n = min(n, c)·μ + max(0, n − c)·θ.
pub fn reneging_rates<T: Real>(p: &QueueParams<T>) -> (Vec<T>, Vec<T>) {
    let births = vec![p.lambda; p.k as usize];
    let deaths = (1..=p.k)
        .map(|n| {
            let busy = n.min(p.c);
            let waiting = n.saturating_sub(p.c);
            T::count(busy as u64) * p.mu + T::count(waiting as u64) * p.theta
        })
        .collect();
    (births, deaths)
}

/// Chain with exponential reneging rate r_n = e^{nα/(cμ)} for n > c.
pub fn exp_reneging_rates<T: Real>(p: &QueueParams<T>, alpha: T) -> (Vec<T>, Vec<T>) {
    let births = vec![p.lambda; p.k as usize];
    let cmu = T::count(p.c as u64) * p.mu;
    let deaths = (1..=p.k)
        .map(|n| {
            if n <= p.c {
                T::count(n as u64) * p.mu
            } else {
                cmu + (T::count(n as u64) * alpha / cmu).exp()
            }
        })
        .collect();
    (births, deaths)
}

/// Headline M/M/1/k figures used by the `validate` command.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QueueSummary<T> {
    pub blocking: T,
    pub mean_in_system: T,
    pub mean_queue: T,
    /// Mean wait in queue of admitted customers (Little's law).
    pub mean_wait: T,
}

pub fn queue_summary<T: Real>(p: &QueueParams<T>) -> Result<QueueSummary<T>, AnalyticError> {
    p.validate()?;
    let (b, d) = reneging_rates(p);
    let ss = birth_death_steady_state(&b, &d)?;
    let mean_queue = ss.mean_queue(p.c as usize);
    Ok(QueueSummary {
        blocking: ss.top(),
        mean_in_system: ss.mean_population,
        mean_queue,
        mean_wait: mean_queue / ss.throughput,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    /// Stationary distribution by Gaussian elimination on the generator
    /// balance equations, with the last equation replaced by Σp = 1.
    fn dense_stationary(birth: &[f64], death: &[f64]) -> Vec<f64> {
        let n = birth.len() + 1;
        // q[i][j]: rate i -> j
        let mut q = vec![vec![0.0; n]; n];
        for i in 0..n - 1 {
            q[i][i + 1] = birth[i];
            q[i + 1][i] = death[i];
        }
        // rows: for each state j, sum_i p_i q[i][j] - p_j sum_l q[j][l] = 0
        let mut a = vec![vec![0.0; n + 1]; n];
        for j in 0..n {
            for i in 0..n {
                a[j][i] += q[i][j];
            }
            a[j][j] -= q[j].iter().sum::<f64>();
        }
        a[n - 1] = vec![1.0; n + 1];
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
                .unwrap();
            a.swap(col, piv);
            for row in 0..n {
                if row != col {
                    let f = a[row][col] / a[col][col];
                    let pivot = a[col].clone();
                    for (x, p) in a[row].iter_mut().zip(&pivot).skip(col) {
                        *x -= f * p;
                    }
                }
            }
        }
        (0..n).map(|i| a[i][n] / a[i][i]).collect()
    }

    #[test]
    fn lambda_eff_examples() {
        assert_eq!(lambda_eff(0.6, 0.0).unwrap(), 0.6);
        assert_eq!(lambda_eff(0.6, 1.0).unwrap(), 0.0);
        assert_abs_diff_eq!(lambda_eff(0.1, 0.9401).unwrap(), 0.00599, epsilon = 1e-12);
        assert!(lambda_eff(0.1, 1.2).is_err());
        assert!(lambda_eff(0.1, -0.1).is_err());
    }

    #[test]
    fn blocking_two_state_chain() {
        // states {0,1}: p1 = rho / (1 + rho)
        let oracle = dense_stationary(&[0.5], &[1.0])[1];
        assert_abs_diff_eq!(oracle, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(mm1k_blocking(0.5, 1).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn blocking_at_unit_load() {
        assert_abs_diff_eq!(mm1k_blocking(1.0, 4).unwrap(), 0.2, epsilon = 1e-15);
        let oracle = dense_stationary(&[1.0; 4], &[1.0; 4]);
        assert_abs_diff_eq!(oracle[4], 0.2, epsilon = 1e-12);
    }

    #[test]
    fn blocking_vanishes_as_load_vanishes() {
        for k in 1..6 {
            assert!(mm1k_blocking(1e-9, k).unwrap() < 1e-8);
        }
    }

    #[test]
    fn blocking_domain() {
        assert!(mm1k_blocking(0.5, 0).is_err());
        assert!(mm1k_blocking(0.0, 3).is_err());
        assert!(mm1k_blocking(f64::NAN, 3).is_err());
    }

    #[test]
    fn blocking_continuous_at_one() {
        for k in 1..=20 {
            let limit = 1.0 / (k as f64 + 1.0);
            for rho in [1.0 - 1e-6, 1.0 + 1e-6] {
                assert!((mm1k_blocking(rho, k).unwrap() - limit).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn blocking_huge_load_does_not_overflow() {
        let p = mm1k_blocking(1e200, 10).unwrap();
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn blocking_matches_chain_top_state_on_grid() {
        for i in 1..=20 {
            let rho = i as f64 / 10.0;
            for k in 1..=20 {
                let (b, d) = mm1k_rates(rho, 1.0, k);
                let ss = birth_death_steady_state(&b, &d).unwrap();
                let closed = mm1k_blocking(rho, k).unwrap();
                assert!((closed - ss.top()).abs() < 1e-10, "rho {rho} k {k}");
            }
        }
    }

    #[test]
    fn f32_blocking_is_close_to_f64() {
        for &rho in &[0.25f32, 0.5, 0.9, 1.0, 1.5] {
            for k in [1, 3, 5, 10] {
                let a = mm1k_blocking(rho, k).unwrap() as f64;
                let b = mm1k_blocking(rho as f64, k).unwrap();
                assert!((a - b).abs() < 1e-5, "rho {rho} k {k}");
            }
        }
    }

    #[test]
    fn voluntary_balking() {
        assert_eq!(voluntary_balk_prob(1, 3.7).unwrap(), 1.0);
        assert_eq!(voluntary_balk_prob(3, 0.0).unwrap(), 1.0);
        // raw value e^{2} = 7.389 is clamped
        assert_abs_diff_eq!((-(1.0f64 - 5.0) * 0.5).exp(), 7.389, epsilon = 1e-3);
        assert_eq!(voluntary_balk_prob(5, 0.5).unwrap(), 1.0);
        assert!(voluntary_balk_prob(0, 0.5).is_err());
        assert!(voluntary_balk_prob(2, -0.5).is_err());
    }

    #[test]
    fn symmetric_two_state_chain() {
        let ss = birth_death_steady_state(&[0.3], &[0.3]).unwrap();
        assert_eq!(ss.probabilities, vec![0.5, 0.5]);
        assert_abs_diff_eq!(ss.mean_population, 0.5);
        assert_abs_diff_eq!(ss.throughput, 0.15);
    }

    #[test]
    fn mm11_chain_agrees_with_blocking() {
        let ss = birth_death_steady_state(&[0.5], &[1.0]).unwrap();
        assert_abs_diff_eq!(ss.probabilities[0], 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ss.probabilities[1], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(ss.top(), mm1k_blocking(0.5, 1).unwrap(), epsilon = 1e-15);
    }

    #[test]
    fn reneging_chain_matches_dense_solve() {
        let p = QueueParams::new(0.5, 0.2, 3).with_theta(0.1);
        let (b, d) = reneging_rates(&p);
        assert_eq!(d, vec![0.2, 0.2 + 0.1, 0.2 + 2.0 * 0.1]);
        let oracle = dense_stationary(&b, &d);
        let ss = birth_death_steady_state(&b, &d).unwrap();
        for (x, y) in ss.probabilities.iter().zip(&oracle) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
        let sum: f64 = ss.probabilities.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn long_overloaded_chain_is_finite() {
        let (b, d) = mm1k_rates(5.0f64, 1.0, 2000);
        let ss = birth_death_steady_state(&b, &d).unwrap();
        assert!(ss.probabilities.iter().all(|p| p.is_finite() && *p >= 0.0));
        assert_abs_diff_eq!(ss.top(), 0.8, epsilon = 1e-12);
    }

    #[test]
    fn unreachable_states_have_zero_mass() {
        let ss = birth_death_steady_state(&[1.0, 0.0, 1.0], &[1.0, 0.0, 1.0]).unwrap();
        assert_eq!(ss.probabilities, vec![0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn singular_chain_is_reported() {
        assert_eq!(
            birth_death_steady_state(&[1.0, 1.0], &[1.0, 0.0]),
            Err(AnalyticError::Singular { state: 2 })
        );
        assert!(matches!(
            birth_death_steady_state::<f64>(&[1.0], &[]),
            Err(AnalyticError::Shape { .. })
        ));
    }

    #[test]
    fn nsys_examples() {
        assert_abs_diff_eq!(nsys_with_reneging(0.5, 0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(nsys_with_reneging(0.5, 0.2).unwrap(), 1.2, epsilon = 1e-12);
        assert_abs_diff_eq!(nsys_with_reneging(0.9, 0.1).unwrap(), 9.1, epsilon = 1e-12);
        assert!(nsys_with_reneging(1.0, 0.1).is_err());
    }

    #[test]
    fn wq_examples() {
        assert_abs_diff_eq!(wq_with_reneging(0.5, 1.0, 0.0, 0.3).unwrap(), 1.0);
        assert_abs_diff_eq!(wq_with_reneging(0.5, 0.2, 0.1, 0.5).unwrap(), 5.2, epsilon = 1e-12);
        assert_abs_diff_eq!(wq_with_reneging(0.8, 0.1, 0.3, 0.05).unwrap(), 46.0, epsilon = 1e-9);
        assert!(wq_with_reneging(0.5, 0.2, 0.1, 0.0).is_err());
        assert!(wq_with_reneging(1.2, 0.2, 0.1, 0.5).is_err());
    }

    #[test]
    fn exp_reneging_variant_shape() {
        let p = QueueParams::new(0.5, 0.2, 4);
        let (_, d) = exp_reneging_rates(&p, 0.0);
        // alpha = 0 gives r_n = 1 above the server count
        assert_eq!(d, vec![0.2, 1.2, 1.2, 1.2]);
    }

    #[test]
    fn summary_uses_littles_law() {
        let s = queue_summary(&QueueParams::new(0.5, 1.0, 1)).unwrap();
        assert_abs_diff_eq!(s.blocking, 1.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean_queue, 0.0);
        let s = queue_summary(&QueueParams::new(1.0, 1.0, 4)).unwrap();
        // uniform over 0..=4
        assert_abs_diff_eq!(s.mean_in_system, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean_queue, (1.0 + 2.0 + 3.0) / 5.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.mean_wait, 1.2 / 0.8, epsilon = 1e-12);
    }
}
