//! Controller interface and the shared episode loop.

use rand::{Rng, RngCore};

use crate::config::SystemConfig;
use crate::env::{Action, EdgeCloudEnv, StateVector, TraceRow};
use crate::error::{Error, Result};
use crate::rewards::RewardSpec;

/// Anything that picks an action each slot.
pub trait Controller {
    fn name(&self) -> &str;

    fn act(&mut self, env: &EdgeCloudEnv, state: &StateVector, rng: &mut dyn RngCore) -> Result<Action>;
}

/// Never serves: all mass on the slack coordinates.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdleController;

impl Controller for IdleController {
    fn name(&self) -> &str {
        "idle"
    }

    fn act(&mut self, env: &EdgeCloudEnv, _: &StateVector, _: &mut dyn RngCore) -> Result<Action> {
        Ok(Action::idle(env.config().n_queues))
    }
}

/// Splits CPU and link evenly over the queues and the slack.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformController;

impl Controller for UniformController {
    fn name(&self) -> &str {
        "uniform"
    }

    fn act(&mut self, env: &EdgeCloudEnv, _: &StateVector, _: &mut dyn RngCore) -> Result<Action> {
        Ok(Action::uniform(env.config().n_queues))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub trace: Vec<TraceRow>,
    /// Per-step rewards; empty when no reward spec was supplied.
    pub rewards: Vec<f64>,
    pub reward_sum: f64,
    /// `(1/T) Σ_t (C_E + C_C)`, in `G^3·κ`.
    pub avg_penalty: f64,
    /// `(1/T) Σ_t Σ_i q_i(t)`, in bits.
    pub avg_queue: f64,
    /// `Σ_i q_i(t)` for `t = 0..T`.
    pub queue_totals: Vec<f64>,
}

/// Episode averages recomputed from an exported trace.
pub fn metrics_from_trace(trace: &[TraceRow]) -> (f64, f64) {
    if trace.is_empty() {
        return (0.0, 0.0);
    }
    let len = trace.len() as f64;
    let penalty = trace.iter().map(|r| r.edge_cost + r.cloud_cost).sum::<f64>() / len;
    let queue = trace.iter().map(|r| r.queue.iter().sum::<f64>()).sum::<f64>() / len;
    (penalty, queue)
}

/// Runs one episode from empty queues.
pub fn run_episode<C: Controller + ?Sized, R: Rng>(
    controller: &mut C,
    cfg: &SystemConfig,
    reward: Option<&RewardSpec>,
    horizon: usize,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let mut env = EdgeCloudEnv::new(cfg.clone())?;
    let mut state = env.reset(rng)?;
    let mut trace = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(if reward.is_some() { horizon } else { 0 });
    for t in 0..horizon {
        let action = controller
            .act(&env, &state, rng)
            .map_err(|e| Error::AtSlot { slot: t, source: Box::new(e) })?;
        let out = env.step(&action, rng)?;
        if let Some(spec) = reward {
            let r = spec.evaluate(&out, horizon)?;
            if !r.is_finite() {
                return Err(Error::NonFinite(format!("reward {r} at slot {t}")));
            }
            rewards.push(r);
        }
        trace.push(TraceRow::from_step(&action, &out));
        state = out.next_state;
    }
    let (avg_penalty, avg_queue) = metrics_from_trace(&trace);
    let queue_totals = trace.iter().map(|r| r.queue.iter().sum()).collect();
    Ok(EpisodeRecord {
        reward_sum: rewards.iter().sum(),
        rewards,
        avg_penalty,
        avg_queue,
        queue_totals,
        trace,
    })
}
