//! Queue-stabilizing reward family and executable checks of its stability properties.
//!
//! Every reward is `queue part - V * cost`. The queue part comes in four forms:
//!
//! | kind        | queue part                                                   |
//! |-------------|--------------------------------------------------------------|
//! | `power`     | `-ρ Σ q_i(t+1)^ν`                                            |
//! | `reshaped`  | `-ρ (T-t)/T Σ (q_i(t+1)^ν - q_i(t)^ν)`                       |
//! | `diff`      | `-ρ Σ (q_i(t+1)^ν - q_i(t)^ν)`                               |
//! | `mean-diff` | `diff` with `a_i(t)` replaced by its mean `m_i`, `ν ∈ {1,2}` |
//!
//! With `q(0) = 0` the reshaped rewards sum to `1/T` of the power-form sum and the
//! diff rewards telescope to `-ρ Σ q_i(T)^ν`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::env::StepOutcome;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RewardKind {
    Power,
    Reshaped,
    Diff,
    MeanDiff,
}

impl fmt::Display for RewardKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardKind::Power => "power",
            RewardKind::Reshaped => "reshaped",
            RewardKind::Diff => "diff",
            RewardKind::MeanDiff => "mean-diff",
        })
    }
}

impl FromStr for RewardKind {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "power" => Ok(RewardKind::Power),
            "reshaped" => Ok(RewardKind::Reshaped),
            "diff" => Ok(RewardKind::Diff),
            "mean-diff" => Ok(RewardKind::MeanDiff),
            other => Err(format!("unknown reward kind {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub exponent: f64,
    pub rho: f64,
    pub penalty_weight: f64,
    /// `m_i = λ_i μ_i`, mean arrived bits per slot.
    pub mean_arrival_bits: Vec<f64>,
    /// Multiplies environment costs (`G^3·κ`) before they enter the reward.
    pub cost_scale: f64,
}

impl RewardSpec {
    pub fn from_config(cfg: &SystemConfig, kind: RewardKind) -> Result<Self> {
        let spec = Self {
            kind,
            exponent: cfg.reward_exponent,
            rho: cfg.rho,
            penalty_weight: cfg.penalty_weight,
            mean_arrival_bits: cfg.mean_arrival_bits(),
            cost_scale: cfg.cost_unit_scale(),
        };
        spec.check()?;
        Ok(spec)
    }

    pub fn check(&self) -> Result<()> {
        if !(self.exponent >= 1.0) {
            return Err(Error::InvalidConfig(vec![format!("ν < 1 (got {})", self.exponent)]));
        }
        if self.kind == RewardKind::MeanDiff && self.exponent != 1.0 && self.exponent != 2.0 {
            return Err(Error::UnsupportedVariant(format!(
                "mean-diff reward needs ν ∈ {{1, 2}}, got {}",
                self.exponent
            )));
        }
        Ok(())
    }

    /// Reward for one environment step; `horizon` is the episode length `T`.
    pub fn evaluate(&self, out: &StepOutcome, horizon: usize) -> Result<f64> {
        let cost = self.cost_scale * out.total_cost();
        let q_next = out.queue_after.as_slice();
        Ok(match self.kind {
            RewardKind::Power => reward_power(q_next, cost, self),
            RewardKind::Reshaped => {
                reward_reshaped(&out.queue_before, q_next, out.t, horizon, self) - self.penalty_weight * cost
            }
            RewardKind::Diff => reward_diff(&out.queue_before, q_next, cost, self),
            RewardKind::MeanDiff => reward_mean_diff(&out.queue_before, &out.departures, cost, self)?,
        })
    }
}

/// `x^ν`, exact for the integer exponents used in practice.
pub fn pow_nu(x: f64, nu: f64) -> f64 {
    if nu == 1.0 {
        x
    } else if nu == 2.0 {
        x * x
    } else {
        x.powf(nu)
    }
}

fn sum_pow(q: &[f64], nu: f64) -> f64 {
    q.iter().map(|x| pow_nu(*x, nu)).sum()
}

fn sum_pow_diff(q_prev: &[f64], q_next: &[f64], nu: f64) -> f64 {
    q_prev
        .iter()
        .zip(q_next)
        .map(|(p, n)| pow_nu(*n, nu) - pow_nu(*p, nu))
        .sum()
}

/// `-ρ Σ q_i(t+1)^ν - V·cost`.
pub fn reward_power(q_next: &[f64], cost: f64, spec: &RewardSpec) -> f64 {
    -spec.rho * sum_pow(q_next, spec.exponent) - spec.penalty_weight * cost
}

/// Queue part only: `-ρ (T-t)/T Σ (q_i(t+1)^ν - q_i(t)^ν)`.
pub fn reward_reshaped(q_prev: &[f64], q_next: &[f64], t: usize, horizon: usize, spec: &RewardSpec) -> f64 {
    debug_assert!(t < horizon);
    let weight = (horizon - t) as f64 / horizon as f64;
    -spec.rho * weight * sum_pow_diff(q_prev, q_next, spec.exponent)
}

/// `-ρ Σ (q_i(t+1)^ν - q_i(t)^ν) - V·cost`.
pub fn reward_diff(q_prev: &[f64], q_next: &[f64], cost: f64, spec: &RewardSpec) -> f64 {
    -spec.rho * sum_pow_diff(q_prev, q_next, spec.exponent) - spec.penalty_weight * cost
}

/// Diff reward with the random arrival replaced by its mean `m_i`.
pub fn reward_mean_diff(q_prev: &[f64], departures: &[f64], cost: f64, spec: &RewardSpec) -> Result<f64> {
    let m = &spec.mean_arrival_bits;
    let queue_part: f64 = if spec.exponent == 1.0 {
        m.iter().zip(departures).map(|(m, b)| m - b).sum()
    } else if spec.exponent == 2.0 {
        q_prev
            .iter()
            .zip(m)
            .zip(departures)
            .map(|((q, m), b)| {
                let d = m - b;
                2.0 * q * d + d * d
            })
            .sum()
    } else {
        return Err(Error::UnsupportedVariant(format!(
            "mean-diff reward needs ν ∈ {{1, 2}}, got {}",
            spec.exponent
        )));
    };
    Ok(-spec.rho * queue_part - spec.penalty_weight * cost)
}

/// Lyapunov drift `½ Σ (q_i(t+1)^2 - q_i(t)^2)`.
pub fn lyapunov_drift(q_prev: &[f64], q_next: &[f64]) -> f64 {
    0.5 * sum_pow_diff(q_prev, q_next, 2.0)
}

/// Constants of the reward upper bound `r_t ≤ U - η Σ q_i(t+1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityBound {
    pub u: f64,
    pub eta: f64,
    pub r_min: Option<f64>,
}

impl StabilityBound {
    /// `U = ρN`, `η = ρ`: the constants that make the power-form reward qualify.
    pub fn for_power_reward(rho: f64, n_queues: usize) -> Self {
        Self { u: rho * n_queues as f64, eta: rho, r_min: None }
    }

    pub fn with_r_min(self, r_min: f64) -> Self {
        Self { r_min: Some(r_min), ..self }
    }

    /// `(U - r_min) / η`, the bound on the time-averaged total backlog.
    pub fn bound(&self) -> Option<f64> {
        self.r_min.map(|r| (self.u - r) / self.eta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Theorem1Report {
    /// First `t` with `r_t > U - η Σ q_i(t+1)`.
    pub upper_violation: Option<usize>,
    /// First `t` with `r_t < r_min`.
    pub lower_violation: Option<usize>,
    /// First prefix length at which the averaged-backlog chain fails.
    pub prefix_violation: Option<usize>,
    /// Smallest slack of the pointwise upper condition.
    pub min_upper_slack: f64,
    pub bound: Option<f64>,
}

impl Theorem1Report {
    pub fn holds(&self) -> bool {
        self.upper_violation.is_none() && self.lower_violation.is_none() && self.prefix_violation.is_none()
    }
}

/// Empirical check of the reward conditions and, when `r_min` is given, of the
/// averaged-backlog bound on every prefix of the trace.
///
/// `queue_sums[t]` is `Σ_i q_i(t+1)`, paired with `rewards[t]`. The checks are
/// pointwise on one realization, a sufficient surrogate for the expected-value
/// statements.
pub fn check_theorem1_conditions(rewards: &[f64], queue_sums: &[f64], bound: StabilityBound) -> Result<Theorem1Report> {
    if rewards.len() != queue_sums.len() {
        return Err(Error::Dimension { what: "queue trace", expected: rewards.len(), got: queue_sums.len() });
    }
    let tol = |x: f64| 1e-12 * (1.0 + x.abs());
    let mut report = Theorem1Report {
        upper_violation: None,
        lower_violation: None,
        prefix_violation: None,
        min_upper_slack: f64::INFINITY,
        bound: bound.bound(),
    };
    let mut reward_sum = 0.0;
    let mut queue_sum = 0.0;
    for (t, (&r, &q)) in rewards.iter().zip(queue_sums).enumerate() {
        let cap = bound.u - bound.eta * q;
        let slack = cap - r;
        report.min_upper_slack = report.min_upper_slack.min(slack);
        if slack < -tol(cap) && report.upper_violation.is_none() {
            report.upper_violation = Some(t);
        }
        if let Some(r_min) = bound.r_min {
            if r < r_min - tol(r_min) && report.lower_violation.is_none() {
                report.lower_violation = Some(t);
            }
            reward_sum += r;
            queue_sum += q;
            let len = (t + 1) as f64;
            let avg_queue = queue_sum / len;
            let mid = (bound.u - reward_sum / len) / bound.eta;
            let outer = (bound.u - r_min) / bound.eta;
            let ok = avg_queue <= mid + tol(mid) && mid <= outer + tol(outer);
            if !ok && report.prefix_violation.is_none() {
                report.prefix_violation = Some(t + 1);
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub reshaped_sum: f64,
    /// `(1/T) Σ_t r_t^Q` of the power form.
    pub averaged_power_sum: f64,
    pub sum_equivalence_rel_error: f64,
    /// Every per-index coefficient difference equals `1/T` in exact integer arithmetic.
    pub coefficient_identity_exact: bool,
    pub diff_sum: f64,
    /// `-ρ Σ q_i(T)^ν`.
    pub telescoped: f64,
    pub telescoping_rel_error: f64,
}

impl IdentityReport {
    pub fn max_rel_error(&self) -> f64 {
        self.sum_equivalence_rel_error.max(self.telescoping_rel_error)
    }
}

fn rel_err(a: f64, b: f64, scale: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(scale);
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

/// Evaluates both sides of the episode-sum identities for a queue trajectory
/// `q(0), ..., q(T)` with `q(0) = 0`.
pub fn episode_reward_identities(queue_trace: &[Vec<f64>], horizon: usize, nu: f64, rho: f64) -> Result<IdentityReport> {
    if queue_trace.len() != horizon + 1 {
        return Err(Error::Dimension { what: "queue trace", expected: horizon + 1, got: queue_trace.len() });
    }
    if queue_trace[0].iter().any(|q| *q != 0.0) {
        return Err(Error::InvalidConfig(vec!["queue trace must start empty".into()]));
    }
    let spec = RewardSpec {
        kind: RewardKind::Reshaped,
        exponent: nu,
        rho,
        penalty_weight: 0.0,
        mean_arrival_bits: vec![],
        cost_scale: 0.0,
    };
    let mut reshaped_sum = 0.0;
    let mut power_sum = 0.0;
    let mut diff_sum = 0.0;
    // Magnitude of the summed terms, for a scale-aware relative error.
    let mut scale = 0.0;
    for t in 0..horizon {
        let (prev, next) = (&queue_trace[t], &queue_trace[t + 1]);
        reshaped_sum += reward_reshaped(prev, next, t, horizon, &spec);
        power_sum += reward_power(next, 0.0, &spec);
        diff_sum += reward_diff(prev, next, 0.0, &spec);
        scale += rho * sum_pow(next, nu);
    }
    let averaged_power_sum = power_sum / horizon as f64;
    let telescoped = -rho * sum_pow(&queue_trace[horizon], nu);
    let coefficient_identity_exact = (1..=horizon as i64).all(|l| {
        let t = horizon as i64;
        (t - (l - 1)) - (t - l) == 1
    });
    Ok(IdentityReport {
        reshaped_sum,
        averaged_power_sum,
        sum_equivalence_rel_error: rel_err(reshaped_sum, averaged_power_sum, scale / horizon as f64),
        coefficient_identity_exact,
        diff_sum,
        telescoped,
        telescoping_rel_error: rel_err(diff_sum, telescoped, scale),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(nu: f64, rho: f64, v: f64) -> RewardSpec {
        RewardSpec {
            kind: RewardKind::Power,
            exponent: nu,
            rho,
            penalty_weight: v,
            mean_arrival_bits: vec![],
            cost_scale: 1.0,
        }
    }

    #[test]
    fn power_examples() {
        assert_eq!(reward_power(&[2.0, 3.0], 0.0, &spec(1.0, 1.0, 0.0)), -5.0);
        assert_eq!(reward_power(&[0.0, 0.0], 0.0, &spec(1.0, 1.0, 0.0)), 0.0);
        assert_eq!(reward_power(&[2.0], 3.0, &spec(2.0, 1.0, 1.0)), -7.0);
    }

    #[test]
    fn reshaped_examples() {
        let s = spec(1.0, 1.0, 0.0);
        assert_eq!(reward_reshaped(&[3.0], &[7.0], 1, 4, &s), -3.0);
        assert_eq!(reward_reshaped(&[5.0], &[5.0], 0, 4, &s), 0.0);
        // q = [0, 2, 5, 4], T = 3
        let q = [0.0, 2.0, 5.0, 4.0];
        let total: f64 = (0..3).map(|t| reward_reshaped(&[q[t]], &[q[t + 1]], t, 3, &s)).sum();
        assert!((total + 11.0 / 3.0).abs() < 1e-12);
        let power: f64 = (0..3).map(|t| reward_power(&[q[t + 1]], 0.0, &s)).sum::<f64>() / 3.0;
        assert!((power + 11.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn diff_examples() {
        let s = spec(2.0, 0.7, 0.0);
        let (prev, next) = ([3.0, 1.0], [4.0, 0.5]);
        let r = reward_diff(&prev, &next, 0.0, &s);
        assert!((r + 2.0 * 0.7 * lyapunov_drift(&prev, &next)).abs() < 1e-12);
        let s = spec(1.0, 1.0, 2.0);
        assert_eq!(reward_diff(&[4.0], &[4.0], 1.5, &s), -3.0);
    }

    #[test]
    fn mean_diff_examples() {
        let mut s = spec(1.0, 1.0, 0.0);
        s.mean_arrival_bits = vec![10.0];
        assert_eq!(reward_mean_diff(&[0.0], &[12.0], 0.0, &s).unwrap(), 2.0);
        assert_eq!(reward_mean_diff(&[0.0], &[10.0], 0.0, &s).unwrap(), 0.0);
        s.exponent = 2.0;
        assert_eq!(reward_mean_diff(&[5.0], &[12.0], 0.0, &s).unwrap(), 16.0);
        assert_eq!(reward_mean_diff(&[123.0], &[10.0], 0.0, &s).unwrap(), 0.0);
        s.exponent = 1.5;
        assert!(matches!(
            reward_mean_diff(&[5.0], &[12.0], 0.0, &s),
            Err(Error::UnsupportedVariant(_))
        ));
    }

    #[test]
    fn mean_diff_needs_supported_exponent_in_spec() {
        let mut cfg = SystemConfig::reference();
        cfg.reward_exponent = 3.0;
        assert!(RewardSpec::from_config(&cfg, RewardKind::MeanDiff).is_err());
        assert!(RewardSpec::from_config(&cfg, RewardKind::Power).is_ok());
    }

    #[test]
    fn theorem1_counterexample() {
        let b = StabilityBound { u: 1.0, eta: 1.0, r_min: None };
        let rep = check_theorem1_conditions(&[2.0, 2.0], &[0.0, 0.0], b).unwrap();
        assert_eq!(rep.upper_violation, Some(0));
        assert!(!rep.holds());
    }

    #[test]
    fn theorem1_power_reward_has_slack() {
        let s = spec(1.0, 1.0, 0.0);
        let qs = [vec![0.5, 0.0], vec![3.0, 1.0]];
        let rewards: Vec<f64> = qs.iter().map(|q| reward_power(q, 0.0, &s)).collect();
        let sums: Vec<f64> = qs.iter().map(|q| q.iter().sum()).collect();
        let rep = check_theorem1_conditions(&rewards, &sums, StabilityBound::for_power_reward(1.0, 2)).unwrap();
        assert!(rep.holds());
        // With ν = 1 the bound is met with slack exactly ρN.
        assert!((rep.min_upper_slack - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identities_on_constant_and_single_step() {
        let zero = vec![vec![0.0, 0.0]; 6];
        let rep = episode_reward_identities(&zero, 5, 2.0, 1.0).unwrap();
        assert_eq!(rep.reshaped_sum, 0.0);
        assert_eq!(rep.diff_sum, 0.0);
        assert!(rep.coefficient_identity_exact);

        let one = vec![vec![0.0], vec![3.0]];
        let rep = episode_reward_identities(&one, 1, 2.0, 0.5).unwrap();
        assert_eq!(rep.reshaped_sum, -4.5);
        assert_eq!(rep.telescoped, -4.5);
    }

    #[test]
    fn identities_reject_nonzero_start() {
        let q = vec![vec![1.0], vec![3.0]];
        assert!(episode_reward_identities(&q, 1, 1.0, 1.0).is_err());
    }
}
