//! Soft actor-critic with twin critics on the dual-simplex action space.
//!
//! The actor emits a mean and a log standard deviation for each of the
//! `2N+2` logits. A sampled logit vector goes through two separate softmaxes,
//! giving `alpha` and `beta`. The log-probability is the Gaussian density of
//! the logits before the softmax; no Jacobian term is added.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::SystemConfig;
use crate::env::{Action, StateVector};
use crate::error::{Error, Result};
use crate::nn::{Adam, DenseNet, Grads};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SacConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub discount: f64,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    pub target_smoothing: f64,
    pub target_update_interval: usize,
    pub gradient_steps: usize,
    /// Entropy weight `ζ`, in scaled-reward units.
    pub entropy_weight: f64,
    /// Multiplies every stored reward before it enters the critic target;
    /// `None` picks [`SacConfig::reward_scale_for`].
    pub reward_scale: Option<f64>,
    /// Scale applied to the initial output layer of the actor.
    pub actor_output_init: f64,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            learning_rate: 3e-4,
            discount: 0.999,
            buffer_capacity: 1_000_000,
            batch_size: 256,
            target_smoothing: 0.005,
            target_update_interval: 1,
            gradient_steps: 1,
            entropy_weight: 0.2,
            reward_scale: None,
            actor_output_init: 1e-3,
            seed: 0,
        }
    }
}

impl SacConfig {
    /// Smaller networks and batches that train in minutes on one core.
    pub fn desk() -> Self {
        Self {
            hidden: vec![64, 64],
            discount: 0.99,
            buffer_capacity: 100_000,
            batch_size: 64,
            entropy_weight: 0.02,
            ..Self::default()
        }
    }

    /// Reward scale `1 / (ρ Σ_i m_i^ν)`: one slot's worth of mean arrivals
    /// sitting in the queues costs about one unit of reward.
    pub fn reward_scale_for(cfg: &SystemConfig) -> f64 {
        let total: f64 = cfg
            .mean_arrival_bits()
            .iter()
            .map(|m| crate::rewards::pow_nu(*m, cfg.reward_exponent))
            .sum();
        let denom = cfg.rho * total;
        if denom > 0.0 && denom.is_finite() {
            1.0 / denom
        } else {
            1.0
        }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.hidden.contains(&0) {
            out.push("hidden widths must be >= 1".to_string());
        }
        if !(self.learning_rate > 0.0) {
            out.push("learning_rate must be > 0".to_string());
        }
        if !(self.discount >= 0.0 && self.discount < 1.0) {
            out.push(format!("discount out of [0,1): {}", self.discount));
        }
        if self.buffer_capacity == 0 {
            out.push("buffer_capacity must be >= 1".to_string());
        }
        if self.batch_size == 0 {
            out.push("batch_size must be >= 1".to_string());
        }
        if !(self.target_smoothing > 0.0 && self.target_smoothing <= 1.0) {
            out.push("target_smoothing must lie in (0,1]".to_string());
        }
        if self.target_update_interval == 0 {
            out.push("target_update_interval must be >= 1".to_string());
        }
        if !(self.entropy_weight >= 0.0) {
            out.push("entropy_weight must be >= 0".to_string());
        }
        if self.reward_scale.is_some_and(|r| !(r > 0.0 && r.is_finite())) {
            out.push("reward_scale must be finite and > 0".to_string());
        }
        out
    }
}

/// Per-coordinate linear scaling of the raw state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateScaler {
    pub scales: Vec<f64>,
}

impl StateScaler {
    /// Bits by `m_i` (1 when zero), workloads by `max w_i`, offloaded cycles by `f_E`.
    pub fn new(cfg: &SystemConfig) -> Self {
        let n = cfg.n_queues;
        let m: Vec<f64> = cfg
            .mean_arrival_bits()
            .into_iter()
            .map(|x| if x > 0.0 { x } else { 1.0 })
            .collect();
        let w_max = cfg.workloads().into_iter().fold(0.0, f64::max);
        let w_max = if w_max > 0.0 { w_max } else { 1.0 };
        let mut scales = Vec::with_capacity(StateVector::dim(n));
        scales.extend(&m);
        scales.extend(&m);
        scales.extend(std::iter::repeat_n(w_max, n));
        scales.extend(std::iter::repeat_n(1.0, n));
        scales.push(cfg.edge_clock);
        scales.extend(&m);
        Self { scales }
    }

    pub fn normalize(&self, raw: &[f64]) -> Result<Vec<f64>> {
        self.check(raw)?;
        Ok(raw.iter().zip(&self.scales).map(|(x, s)| x / s).collect())
    }

    pub fn denormalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        Ok(x.iter().zip(&self.scales).map(|(x, s)| x * s).collect())
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.scales.len() {
            return Err(Error::Dimension { what: "state", expected: self.scales.len(), got: v.len() });
        }
        Ok(())
    }
}

pub fn normalize_state(raw: &StateVector, cfg: &SystemConfig) -> Result<Vec<f64>> {
    StateScaler::new(cfg).normalize(&raw.to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferMeta {
    pub capacity: usize,
    pub len: usize,
    pub cursor: usize,
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    state_dim: usize,
    action_dim: usize,
    data: Vec<Transition>,
    cursor: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, state_dim: usize, action_dim: usize) -> Self {
        assert!(capacity > 0, "buffer capacity must be positive");
        Self { capacity, state_dim, action_dim, data: Vec::new(), cursor: 0 }
    }

    pub fn for_config(cfg: &SystemConfig, sac: &SacConfig) -> Self {
        Self::new(sac.buffer_capacity, StateVector::dim(cfg.n_queues), 2 * cfg.n_queues + 2)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn meta(&self) -> BufferMeta {
        BufferMeta { capacity: self.capacity, len: self.len(), cursor: self.cursor }
    }

    pub fn get(&self, idx: usize) -> Option<&Transition> {
        self.data.get(idx)
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        for (what, expected, got) in [
            ("transition state", self.state_dim, t.state.len()),
            ("transition action", self.action_dim, t.action.len()),
            ("transition next_state", self.state_dim, t.next_state.len()),
        ] {
            if expected != got {
                return Err(Error::Dimension { what, expected, got });
            }
        }
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.cursor] = t;
        }
        self.cursor = (self.cursor + 1) % self.capacity;
        Ok(())
    }

    /// Distinct indices drawn uniformly.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch == 0 || self.len() < batch {
            return Err(Error::InsufficientSamples { have: self.len(), need: batch.max(1) });
        }
        Ok(rand::seq::index::sample(rng, self.len(), batch).into_vec())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch, rng)?;
        Ok(Batch::from_transitions(idx.iter().map(|&i| &self.data[i])))
    }
}

/// A minibatch laid out row-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
}

impl Batch {
    pub fn from_transitions<'a>(it: impl IntoIterator<Item = &'a Transition>) -> Self {
        let rows: Vec<&Transition> = it.into_iter().collect();
        let b = rows.len();
        let sd = rows.first().map_or(0, |t| t.state.len());
        let ad = rows.first().map_or(0, |t| t.action.len());
        Self {
            states: Array2::from_shape_fn((b, sd), |(i, j)| rows[i].state[j]),
            actions: Array2::from_shape_fn((b, ad), |(i, j)| rows[i].action[j]),
            rewards: Array1::from_shape_fn(b, |i| rows[i].reward),
            next_states: Array2::from_shape_fn((b, sd), |(i, j)| rows[i].next_state[j]),
        }
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SampleMode {
    Stochastic,
    Deterministic,
}

/// Logits, their Gaussian parameters and the two simplex outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub critic1: f64,
    pub critic2: f64,
    pub actor: f64,
    pub mean_target: f64,
    pub mean_log_prob: f64,
}

fn softmax_into(z: ArrayView1<f64>, out: &mut [f64]) {
    let max = z.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    let mut sum = 0.0;
    for (o, v) in out.iter_mut().zip(z.iter()) {
        *o = (v - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Row-wise softmax over the two halves of each row.
pub fn dual_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let k = logits.ncols();
    let h = k / 2;
    let mut out = Array2::zeros(logits.raw_dim());
    let mut buf = vec![0.0; h];
    for (row, mut dst) in logits.rows().into_iter().zip(out.rows_mut()) {
        for half in 0..2 {
            softmax_into(row.slice(s![half * h..(half + 1) * h]), &mut buf);
            for (j, v) in buf.iter().enumerate() {
                dst[half * h + j] = *v;
            }
        }
    }
    out
}

/// Back-propagates `d/da` through [`dual_softmax`].
fn dual_softmax_backward(a: &Array2<f64>, ga: &Array2<f64>) -> Array2<f64> {
    let h = a.ncols() / 2;
    let mut out = Array2::zeros(a.raw_dim());
    for ((ar, gr), mut dst) in a.rows().into_iter().zip(ga.rows()).zip(out.rows_mut()) {
        for half in 0..2 {
            let r = half * h..(half + 1) * h;
            let dot: f64 = r.clone().map(|j| ar[j] * gr[j]).sum();
            for j in r {
                dst[j] = ar[j] * (gr[j] - dot);
            }
        }
    }
    out
}

fn gaussian_log_prob(eps: ArrayView1<f64>, log_std: ArrayView1<f64>) -> f64 {
    let c = 0.5 * (2.0 * PI).ln();
    eps.iter().zip(log_std.iter()).map(|(e, l)| -0.5 * e * e - l - c).sum()
}

fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Actor, twin critics, their targets and optimizer state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    pub config: SacConfig,
    pub n_queues: usize,
    pub scaler: StateScaler,
    pub reward_scale: f64,
    pub actor: DenseNet,
    pub critic1: DenseNet,
    pub critic2: DenseNet,
    pub target1: DenseNet,
    pub target2: DenseNet,
    actor_opt: Adam,
    critic1_opt: Adam,
    critic2_opt: Adam,
    pub updates: u64,
}

struct ActorPass {
    loss: f64,
    grads: Grads,
    log_prob_mean: f64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(cfg: &SystemConfig, sac: SacConfig, rng: &mut R) -> Result<Self> {
        let v = sac.violations();
        if !v.is_empty() {
            return Err(Error::InvalidConfig(v));
        }
        let n = cfg.n_queues;
        let sd = StateVector::dim(n);
        let ad = 2 * n + 2;
        let widths = |inp: usize, out: usize| {
            let mut w = vec![inp];
            w.extend(&sac.hidden);
            w.push(out);
            w
        };
        let mut actor = DenseNet::new(&widths(sd, 2 * ad), rng);
        actor.scale_output_layer(sac.actor_output_init);
        let critic1 = DenseNet::new(&widths(sd + ad, 1), rng);
        let critic2 = DenseNet::new(&widths(sd + ad, 1), rng);
        let lr = sac.learning_rate;
        Ok(Self {
            actor_opt: Adam::new(&actor, lr),
            critic1_opt: Adam::new(&critic1, lr),
            critic2_opt: Adam::new(&critic2, lr),
            target1: critic1.clone(),
            target2: critic2.clone(),
            actor,
            critic1,
            critic2,
            scaler: StateScaler::new(cfg),
            reward_scale: sac.reward_scale.unwrap_or_else(|| SacConfig::reward_scale_for(cfg)),
            n_queues: n,
            config: sac,
            updates: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        StateVector::dim(self.n_queues)
    }

    pub fn action_dim(&self) -> usize {
        2 * self.n_queues + 2
    }

    /// Zeroes every network and resyncs the optimizers.
    pub fn zero_weights(&mut self) {
        for net in [&mut self.actor, &mut self.critic1, &mut self.critic2, &mut self.target1, &mut self.target2] {
            *net = DenseNet::zeros(&net.widths());
        }
        let lr = self.config.learning_rate;
        self.actor_opt = Adam::new(&self.actor, lr);
        self.critic1_opt = Adam::new(&self.critic1, lr);
        self.critic2_opt = Adam::new(&self.critic2, lr);
    }

    /// Splits actor output into the mean and the clamped log-std.
    fn heads(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let k = self.action_dim();
        let mean = out.slice(s![.., ..k]).to_owned();
        let log_std = out.slice(s![.., k..]).mapv(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
        (mean, log_std)
    }

    /// Policy on an already normalized state.
    pub fn policy_normalized<R: Rng + ?Sized>(&self, x: &[f64], mode: SampleMode, rng: &mut R) -> Result<PolicyOutput> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension { what: "state", expected: self.state_dim(), got: x.len() });
        }
        let input = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row shape");
        let (mean, log_std) = self.heads(&self.actor.forward(&input));
        let eps = match mode {
            SampleMode::Stochastic => standard_normal(1, self.action_dim(), rng),
            SampleMode::Deterministic => Array2::zeros((1, self.action_dim())),
        };
        let logits = &mean + &(log_std.mapv(f64::exp) * &eps);
        let a = dual_softmax(&logits);
        let h = self.n_queues + 1;
        Ok(PolicyOutput {
            log_prob: gaussian_log_prob(eps.row(0), log_std.row(0)),
            logits: logits.row(0).to_vec(),
            mean: mean.row(0).to_vec(),
            log_std: log_std.row(0).to_vec(),
            alpha: a.slice(s![0, ..h]).to_vec(),
            beta: a.slice(s![0, h..]).to_vec(),
        })
    }

    /// Samples an action for a raw state; returns it with its log-probability.
    pub fn policy_sample<R: Rng + ?Sized>(
        &self,
        state: &StateVector,
        mode: SampleMode,
        rng: &mut R,
    ) -> Result<(Action, f64)> {
        let x = self.scaler.normalize(&state.to_vec())?;
        let out = self.policy_normalized(&x, mode, rng)?;
        let log_prob = out.log_prob;
        Ok((Action::new(out.alpha, out.beta)?, log_prob))
    }

    /// `(Q1, Q2)` for a raw state and an action.
    pub fn critic_value(&self, state: &StateVector, action: &Action) -> Result<(f64, f64)> {
        let x = self.scaler.normalize(&state.to_vec())?;
        let a = action.to_flat();
        if a.len() != self.action_dim() {
            return Err(Error::Dimension { what: "action", expected: self.action_dim(), got: a.len() });
        }
        let mut row = x;
        row.extend(a);
        let input = Array2::from_shape_vec((1, row.len()), row).expect("row shape");
        Ok((self.critic1.forward(&input)[[0, 0]], self.critic2.forward(&input)[[0, 0]]))
    }

    fn critic_input(states: &Array2<f64>, actions: &Array2<f64>) -> Array2<f64> {
        concatenate(Axis(1), &[states.view(), actions.view()]).expect("batch rows agree")
    }

    /// Clipped double-Q soft target `r + γ (min Q' - ζ log π)` with fresh
    /// next actions drawn as `mean + std * eps`.
    pub fn critic_targets(&self, batch: &Batch, eps: &Array2<f64>) -> Array1<f64> {
        let (mean, log_std) = self.heads(&self.actor.forward(&batch.next_states));
        let logits = &mean + &(log_std.mapv(f64::exp) * eps);
        let a = dual_softmax(&logits);
        let x = Self::critic_input(&batch.next_states, &a);
        let q1 = self.target1.forward(&x);
        let q2 = self.target2.forward(&x);
        let c = &self.config;
        Array1::from_shape_fn(batch.len(), |i| {
            let min_q = q1[[i, 0]].min(q2[[i, 0]]);
            let logp = gaussian_log_prob(eps.row(i), log_std.row(i));
            self.reward_scale * batch.rewards[i] + c.discount * (min_q - c.entropy_weight * logp)
        })
    }

    /// Mean squared error of one critic against `y`, with its gradient.
    pub fn critic_loss(net: &DenseNet, x: &Array2<f64>, y: &Array1<f64>) -> (f64, Grads) {
        let (q, cache) = net.forward_cached(x);
        let b = y.len() as f64;
        let diff = Array2::from_shape_fn(q.raw_dim(), |(i, _)| q[[i, 0]] - y[i]);
        let loss = diff.mapv(|d| d * d).sum() / b;
        let (grads, _) = net.backward(&cache, &(diff * (2.0 / b)));
        (loss, grads)
    }

    fn actor_pass(&self, states: &Array2<f64>, eps: &Array2<f64>) -> ActorPass {
        let k = self.action_dim();
        let b = states.nrows() as f64;
        let zeta = self.config.entropy_weight;
        let (out, cache) = self.actor.forward_cached(states);
        let (mean, log_std) = self.heads(&out);
        let std = log_std.mapv(f64::exp);
        let a = dual_softmax(&(&mean + &(&std * eps)));
        let x = Self::critic_input(states, &a);
        let (q1, c1) = self.critic1.forward_cached(&x);
        let (q2, c2) = self.critic2.forward_cached(&x);
        let mut g1 = Array2::zeros(q1.raw_dim());
        let mut g2 = Array2::zeros(q2.raw_dim());
        let mut loss = 0.0;
        let mut logp_sum = 0.0;
        for i in 0..states.nrows() {
            let logp = gaussian_log_prob(eps.row(i), log_std.row(i));
            logp_sum += logp;
            let (v1, v2) = (q1[[i, 0]], q2[[i, 0]]);
            if v1 <= v2 {
                g1[[i, 0]] = -1.0 / b;
            } else {
                g2[[i, 0]] = -1.0 / b;
            }
            loss += zeta * logp - v1.min(v2);
        }
        let (_, dx1) = self.critic1.backward(&c1, &g1);
        let (_, dx2) = self.critic2.backward(&c2, &g2);
        let sd = states.ncols();
        let da = &dx1.slice(s![.., sd..]) + &dx2.slice(s![.., sd..]);
        let du = dual_softmax_backward(&a, &da);
        let mut g_out = Array2::zeros(out.raw_dim());
        for i in 0..states.nrows() {
            for j in 0..k {
                g_out[[i, j]] = du[[i, j]];
                let raw = out[[i, k + j]];
                if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                    g_out[[i, k + j]] = du[[i, j]] * std[[i, j]] * eps[[i, j]] - zeta / b;
                }
            }
        }
        let (grads, _) = self.actor.backward(&cache, &g_out);
        ActorPass { loss: loss / b, grads, log_prob_mean: logp_sum / b }
    }

    /// `mean(ζ log π(a|s) - min(Q1, Q2)(s, a))` for reparameterized `a`, with
    /// its gradient with respect to the actor parameters.
    pub fn actor_loss(&self, states: &Array2<f64>, eps: &Array2<f64>) -> (f64, Grads) {
        let p = self.actor_pass(states, eps);
        (p.loss, p.grads)
    }

    /// Moves each target network a fraction `τ` toward its online network.
    pub fn soft_update_targets(&mut self) {
        let tau = self.config.target_smoothing;
        self.target1.soft_update_from(&self.critic1, tau);
        self.target2.soft_update_from(&self.critic2, tau);
    }

    fn diagnose(&self, batch: &Batch, what: &str, value: f64) -> Error {
        let r = &batch.rewards;
        let r_min = r.iter().copied().fold(f64::INFINITY, f64::min);
        let r_max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s_max = batch.states.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Error::NonFinite(format!(
            "{what} = {value} at update {}: batch {} rows, reward in [{r_min}, {r_max}], mean {}, max |state| {s_max}",
            self.updates,
            batch.len(),
            r.mean().unwrap_or(f64::NAN),
        ))
    }

    /// One critic step, one actor step, then the target update.
    pub fn update_on_batch<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<LossReport> {
        let k = self.action_dim();
        let next_eps = standard_normal(batch.len(), k, rng);
        let y = self.critic_targets(batch, &next_eps);
        let x = Self::critic_input(&batch.states, &batch.actions);
        let (l1, g1) = Self::critic_loss(&self.critic1, &x, &y);
        let (l2, g2) = Self::critic_loss(&self.critic2, &x, &y);
        for (what, v, ok) in [("critic1 loss", l1, g1.is_finite()), ("critic2 loss", l2, g2.is_finite())] {
            if !v.is_finite() || !ok {
                return Err(self.diagnose(batch, what, v));
            }
        }
        self.critic1_opt.step(&mut self.critic1, &g1);
        self.critic2_opt.step(&mut self.critic2, &g2);

        let eps = standard_normal(batch.len(), k, rng);
        let pass = self.actor_pass(&batch.states, &eps);
        if !pass.loss.is_finite() || !pass.grads.is_finite() {
            return Err(self.diagnose(batch, "actor loss", pass.loss));
        }
        self.actor_opt.step(&mut self.actor, &pass.grads);

        self.updates += 1;
        if self.updates % self.config.target_update_interval as u64 == 0 {
            self.soft_update_targets();
        }
        Ok(LossReport {
            critic1: l1,
            critic2: l2,
            actor: pass.loss,
            mean_target: y.mean().unwrap_or(0.0),
            mean_log_prob: pass.log_prob_mean,
        })
    }

    /// `gradient_steps` updates on fresh minibatches.
    pub fn update<R: Rng + ?Sized>(&mut self, buffer: &ReplayBuffer, rng: &mut R) -> Result<LossReport> {
        let mut last = None;
        for _ in 0..self.config.gradient_steps.max(1) {
            let batch = buffer.sample(self.config.batch_size, rng)?;
            last = Some(self.update_on_batch(&batch, rng)?);
        }
        Ok(last.expect("at least one gradient step"))
    }

    pub fn to_checkpoint_json(&self, buffer: Option<&ReplayBuffer>) -> Result<String> {
        let ck = CheckpointRef { version: CHECKPOINT_VERSION, agent: self, buffer: buffer.map(ReplayBuffer::meta) };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<(Self, Option<BufferMeta>)> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let agent = ck.agent;
        let sd = agent.state_dim();
        let ad = agent.action_dim();
        let shapes = [
            ("actor", agent.actor.input_dim(), sd, agent.actor.output_dim(), 2 * ad),
            ("critic1", agent.critic1.input_dim(), sd + ad, agent.critic1.output_dim(), 1),
            ("critic2", agent.critic2.input_dim(), sd + ad, agent.critic2.output_dim(), 1),
        ];
        for (name, i, ei, o, eo) in shapes {
            if i != ei || o != eo {
                return Err(Error::Checkpoint(format!("{name} is {i}->{o}, expected {ei}->{eo}")));
            }
        }
        Ok((agent, ck.buffer))
    }

    pub fn save(&self, path: impl AsRef<Path>, buffer: Option<&ReplayBuffer>) -> Result<()> {
        fs::write(path, self.to_checkpoint_json(buffer)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<BufferMeta>)> {
        Self::from_checkpoint_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    version: u32,
    agent: &'a SacAgent,
    buffer: Option<BufferMeta>,
}

#[derive(Deserialize)]
struct Checkpoint {
    version: u32,
    agent: SacAgent,
    buffer: Option<BufferMeta>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy() -> (SystemConfig, SacAgent, ChaCha8Rng) {
        let cfg = SystemConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let sac = SacConfig { hidden: vec![4], ..SacConfig::desk() };
        let agent = SacAgent::new(&cfg, sac, &mut rng).unwrap();
        (cfg, agent, rng)
    }

    fn transition(n: usize, r: f64) -> Transition {
        Transition {
            state: vec![0.1; StateVector::dim(n)],
            action: vec![1.0 / (n + 1) as f64; 2 * n + 2],
            reward: r,
            next_state: vec![0.2; StateVector::dim(n)],
        }
    }

    #[test]
    fn zero_weights_give_uniform_action() {
        let (cfg, mut agent, mut rng) = toy();
        agent.zero_weights();
        let s = StateVector::from_slice(2, &vec![1.0; StateVector::dim(2)]).unwrap();
        let (a, _) = agent.policy_sample(&s, SampleMode::Deterministic, &mut rng).unwrap();
        assert_eq!(a, Action::uniform(cfg.n_queues));
        assert_eq!(agent.critic_value(&s, &a).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn deterministic_mode_repeats() {
        let (_, agent, mut rng) = toy();
        let s = StateVector::from_slice(2, &[3.0; 11]).unwrap();
        let a = agent.policy_sample(&s, SampleMode::Deterministic, &mut rng).unwrap();
        let b = agent.policy_sample(&s, SampleMode::Deterministic, &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ring_buffer_evicts_oldest() {
        let mut buf = ReplayBuffer::new(3, 11, 6);
        for r in 0..4 {
            buf.push(transition(2, r as f64)).unwrap();
        }
        assert_eq!(buf.len(), 3);
        let rewards: Vec<f64> = (0..3).map(|i| buf.get(i).unwrap().reward).collect();
        assert_eq!(rewards, vec![3.0, 1.0, 2.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = buf.sample_indices(2, &mut rng).unwrap();
        assert_ne!(idx[0], idx[1]);
    }

    #[test]
    fn empty_buffer_refuses_to_sample() {
        let buf = ReplayBuffer::new(3, 11, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = buf.sample(2, &mut rng).unwrap_err();
        assert!(err.to_string().contains("insufficient samples"));
    }

    #[test]
    fn buffer_checks_dimensions() {
        let mut buf = ReplayBuffer::new(3, 11, 6);
        let mut t = transition(2, 0.0);
        t.action.pop();
        assert!(matches!(buf.push(t), Err(Error::Dimension { .. })));
    }

    #[test]
    fn undiscounted_entropy_free_target_is_reward() {
        let (_, mut agent, mut rng) = toy();
        agent.config.discount = 0.0;
        agent.config.entropy_weight = 0.0;
        agent.reward_scale = 1.0;
        let batch = Batch::from_transitions(&[transition(2, -1.5), transition(2, 0.25)]);
        let eps = standard_normal(2, 6, &mut rng);
        assert_eq!(agent.critic_targets(&batch, &eps).to_vec(), vec![-1.5, 0.25]);
    }

    #[test]
    fn state_scaling_round_trips() {
        let cfg = SystemConfig::desk();
        let sc = StateScaler::new(&cfg);
        let m = cfg.mean_arrival_bits();
        let mut raw = vec![0.0; 11];
        assert_eq!(sc.normalize(&raw).unwrap(), vec![0.0; 11]);
        raw[2] = m[0];
        assert_eq!(sc.normalize(&raw).unwrap()[2], 1.0);
        let x: Vec<f64> = (0..11).map(|i| 1e5 * (i as f64 + 0.3)).collect();
        let back = sc.denormalize(&sc.normalize(&x).unwrap()).unwrap();
        for (a, b) in x.iter().zip(&back) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn reward_scale_defaults() {
        let cfg = SystemConfig::desk();
        let s = SacConfig::reward_scale_for(&cfg);
        let m: f64 = cfg.mean_arrival_bits().iter().sum();
        assert!((s * cfg.rho * m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = SystemConfig::desk();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sac = SacConfig { discount: 1.0, batch_size: 0, reward_scale: Some(-1.0), ..SacConfig::desk() };
        match SacAgent::new(&cfg, sac, &mut rng) {
            Err(Error::InvalidConfig(v)) => assert_eq!(v.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
