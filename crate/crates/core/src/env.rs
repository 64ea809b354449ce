//! Discrete-time edge-cloud queueing MDP.
//!
//! Timing follows a one-slot operational delay: the state at slot `t` carries
//! `q(t) + a(t)`, the action chosen on it produces the departures `b(t)`, and
//! only then are the arrivals `a(t+1)` drawn. The queue update, offloads and
//! costs are therefore deterministic in `(state, action)`; randomness enters
//! the next state through the fresh arrivals alone.

use std::collections::VecDeque;
use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::arrivals::sample_arrivals;
use crate::config::{CloudCostKind, SecondStateVar, SystemConfig, GIGA};
use crate::error::{Error, Result};

/// Length of the arrival-average window in the state.
pub const ARRIVAL_WINDOW: usize = 100;

/// Tolerance on the simplex sums of an action.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Queue backlogs in bits; never negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueVector(Vec<f64>);

impl QueueVector {
    pub fn new(lengths: Vec<f64>) -> Result<Self> {
        if let Some(x) = lengths.iter().find(|x| !(**x >= 0.0)) {
            return Err(Error::NonFinite(format!("queue length {x} is not a nonnegative number")));
        }
        Ok(Self(lengths))
    }

    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// CPU and bandwidth fractions, each a point on an `(N+1)`-simplex whose last
/// coordinate is the unused slack.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Action {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let action = Self { alpha, beta };
        action.check()?;
        Ok(action)
    }

    /// Builds an action from the `N` effective controls, filling the slack entries.
    pub fn from_controls(alpha: &[f64], beta: &[f64]) -> Result<Self> {
        let close = |v: &[f64]| {
            let mut full = v.to_vec();
            full.push((1.0 - v.iter().sum::<f64>()).max(0.0));
            full
        };
        Self::new(close(alpha), close(beta))
    }

    /// Everything on the slack coordinates: no CPU, no offloading.
    pub fn idle(n: usize) -> Self {
        let mut v = vec![0.0; n + 1];
        v[n] = 1.0;
        Self { alpha: v.clone(), beta: v }
    }

    pub fn uniform(n: usize) -> Self {
        let v = vec![1.0 / (n + 1) as f64; n + 1];
        Self { alpha: v.clone(), beta: v }
    }

    /// Splits a flat `[alpha; beta]` vector of length `2N+2`.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() < 4 || flat.len() % 2 != 0 {
            return Err(Error::InvalidAction(format!("flat action of length {}", flat.len())));
        }
        let (a, b) = flat.split_at(flat.len() / 2);
        Self::new(a.to_vec(), b.to_vec())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.alpha.iter().chain(&self.beta).copied().collect()
    }

    pub fn n_queues(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha_controls(&self) -> &[f64] {
        &self.alpha[..self.n_queues()]
    }

    pub fn beta_controls(&self) -> &[f64] {
        &self.beta[..self.n_queues()]
    }

    pub fn check(&self) -> Result<()> {
        if self.alpha.len() != self.beta.len() || self.alpha.len() < 2 {
            return Err(Error::InvalidAction(format!(
                "alpha/beta lengths {} and {}",
                self.alpha.len(),
                self.beta.len()
            )));
        }
        for (name, v) in [("alpha", &self.alpha), ("beta", &self.beta)] {
            if v.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::InvalidAction(format!("{name} has a negative or NaN entry")));
            }
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(Error::InvalidAction(format!("{name} sums to {s}")));
            }
        }
        Ok(())
    }
}

/// Observation handed to controllers at each slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateVector {
    pub backlog_plus_arrival: Vec<f64>,
    /// The arrival `a(t)` or the pre-arrival backlog `q(t)`, per config.
    pub arrival: Vec<f64>,
    pub workload: Vec<f64>,
    pub actual_cpu_use: Vec<f64>,
    pub offloaded_cycles: f64,
    pub windowed_arrival_avg: Vec<f64>,
}

impl StateVector {
    pub fn dim(n: usize) -> usize {
        5 * n + 1
    }

    pub fn n_queues(&self) -> usize {
        self.backlog_plus_arrival.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.n_queues()));
        v.extend_from_slice(&self.backlog_plus_arrival);
        v.extend_from_slice(&self.arrival);
        v.extend_from_slice(&self.workload);
        v.extend_from_slice(&self.actual_cpu_use);
        v.push(self.offloaded_cycles);
        v.extend_from_slice(&self.windowed_arrival_avg);
        v
    }

    pub fn from_slice(n: usize, v: &[f64]) -> Result<Self> {
        if v.len() != Self::dim(n) {
            return Err(Error::Dimension { what: "state", expected: Self::dim(n), got: v.len() });
        }
        Ok(Self {
            backlog_plus_arrival: v[..n].to_vec(),
            arrival: v[n..2 * n].to_vec(),
            workload: v[2 * n..3 * n].to_vec(),
            actual_cpu_use: v[3 * n..4 * n].to_vec(),
            offloaded_cycles: v[4 * n],
            windowed_arrival_avg: v[4 * n + 1..].to_vec(),
        })
    }
}

/// `b_i = α_i f_E / w_i + β_i B`, the nominal departure in bits.
pub fn compute_departure(action: &Action, cfg: &SystemConfig) -> Vec<f64> {
    cfg.apps
        .iter()
        .enumerate()
        .map(|(i, app)| {
            action.alpha[i] * cfg.edge_clock / app.workload_cycles_per_bit + action.beta[i] * cfg.bandwidth
        })
        .collect()
}

/// Bits actually shipped to the cloud: the link share, capped by what the
/// edge CPU leaves in the queue, and never negative.
pub fn compute_offload(backlog_plus_arrival: &[f64], action: &Action, cfg: &SystemConfig) -> Vec<f64> {
    cfg.apps
        .iter()
        .enumerate()
        .map(|(i, app)| {
            let remaining = backlog_plus_arrival[i] - action.alpha[i] * cfg.edge_clock / app.workload_cycles_per_bit;
            (action.beta[i] * cfg.bandwidth).min(remaining).max(0.0)
        })
        .collect()
}

/// `q_i(t+1) = max(0, q_i + a_i - b_i)`.
pub fn queue_update(q: &[f64], a: &[f64], b: &[f64]) -> Vec<f64> {
    q.iter()
        .zip(a)
        .zip(b)
        .map(|((q, a), b)| (q + a - b).max(0.0))
        .collect()
}

/// Edge CPU power in `G^3·κ`, with the load split evenly over the cores.
pub fn edge_cost(action: &Action, cfg: &SystemConfig) -> f64 {
    edge_cost_for_share(action.alpha_controls().iter().sum(), cfg)
}

pub(crate) fn edge_cost_for_share(alpha_sum: f64, cfg: &SystemConfig) -> f64 {
    let cores = cfg.edge_cores as f64;
    let per_core = cfg.edge_clock / GIGA * alpha_sum / cores;
    cores * per_core.powi(3)
}

/// Cloud charge in `G^3·κ` for the given offloaded bits.
pub fn cloud_cost(offloads: &[f64], cfg: &SystemConfig) -> f64 {
    let cycles: f64 = offloads
        .iter()
        .zip(&cfg.apps)
        .map(|(o, app)| o * app.workload_cycles_per_bit)
        .sum();
    cloud_cost_for_cycles(cycles, cfg)
}

pub(crate) fn cloud_cost_for_cycles(cycles: f64, cfg: &SystemConfig) -> f64 {
    if cycles <= 0.0 {
        return 0.0;
    }
    match cfg.cloud_cost_kind {
        CloudCostKind::Cubic => {
            if cfg.cloud_cores == 0 {
                return f64::INFINITY;
            }
            let cores = cfg.cloud_cores as f64;
            cores * (cycles / GIGA / cores).powi(3)
        }
        CloudCostKind::PerCore => {
            let active = (cycles / cfg.cloud_core_clock).ceil();
            active * (cfg.cloud_core_clock / GIGA).powi(3)
        }
    }
}

/// Upper bound on the edge cost over all actions: `κ f_E^3 / N_E^2`.
pub fn edge_cost_bound(cfg: &SystemConfig) -> f64 {
    edge_cost_for_share(1.0, cfg)
}

/// Upper bound on the cloud cost: every queue offloading the full link.
pub fn cloud_cost_bound(cfg: &SystemConfig) -> f64 {
    let w: f64 = cfg.apps.iter().map(|a| a.workload_cycles_per_bit).sum();
    cloud_cost_for_cycles(cfg.bandwidth * w, cfg)
}

/// The deterministic part of one slot, given `q(t) + a(t)` and the action.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotDynamics {
    pub departures: Vec<f64>,
    pub offloads: Vec<f64>,
    pub queue_after: Vec<f64>,
    pub edge_cost: f64,
    pub cloud_cost: f64,
    pub actual_cpu_use: Vec<f64>,
    pub offloaded_cycles: f64,
}

pub fn slot_dynamics(backlog_plus_arrival: &[f64], action: &Action, cfg: &SystemConfig) -> SlotDynamics {
    let departures = compute_departure(action, cfg);
    let zeros = vec![0.0; departures.len()];
    let queue_after = queue_update(backlog_plus_arrival, &zeros, &departures);
    let offloads = compute_offload(backlog_plus_arrival, action, cfg);
    let actual_cpu_use = cfg
        .apps
        .iter()
        .enumerate()
        .map(|(i, app)| action.alpha[i].min(app.workload_cycles_per_bit * backlog_plus_arrival[i] / cfg.edge_clock))
        .collect();
    let offloaded_cycles = offloads
        .iter()
        .zip(&cfg.apps)
        .map(|(o, app)| o * app.workload_cycles_per_bit)
        .sum();
    SlotDynamics {
        edge_cost: edge_cost(action, cfg),
        cloud_cost: cloud_cost(&offloads, cfg),
        departures,
        offloads,
        queue_after,
        actual_cpu_use,
        offloaded_cycles,
    }
}

/// Everything produced by one call to [`EdgeCloudEnv::step`].
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Slot index `t` of the action.
    pub t: usize,
    /// `q(t)`, before the arrivals of slot `t`.
    pub queue_before: Vec<f64>,
    /// `a(t)`.
    pub arrival: Vec<f64>,
    pub departures: Vec<f64>,
    pub offloads: Vec<f64>,
    /// `q(t+1)`.
    pub queue_after: QueueVector,
    pub edge_cost: f64,
    pub cloud_cost: f64,
    pub next_state: StateVector,
}

impl StepOutcome {
    pub fn total_cost(&self) -> f64 {
        self.edge_cost + self.cloud_cost
    }
}

#[derive(Debug, Clone)]
pub struct EdgeCloudEnv {
    cfg: SystemConfig,
    t: usize,
    queue: Vec<f64>,
    arrival: Vec<f64>,
    window: VecDeque<Vec<f64>>,
    last_cpu_use: Vec<f64>,
    last_offloaded_cycles: f64,
}

impl EdgeCloudEnv {
    pub fn new(cfg: SystemConfig) -> Result<Self> {
        cfg.validate()?;
        let n = cfg.n_queues;
        Ok(Self {
            cfg,
            t: 0,
            queue: vec![0.0; n],
            arrival: vec![0.0; n],
            window: VecDeque::with_capacity(ARRIVAL_WINDOW),
            last_cpu_use: vec![0.0; n],
            last_offloaded_cycles: 0.0,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.cfg
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// `q(t)`.
    pub fn queue(&self) -> &[f64] {
        &self.queue
    }

    /// `a(t)`.
    pub fn arrival(&self) -> &[f64] {
        &self.arrival
    }

    pub fn backlog_plus_arrival(&self) -> Vec<f64> {
        self.queue.iter().zip(&self.arrival).map(|(q, a)| q + a).collect()
    }

    /// Empties all queues and the arrival history, then draws `a(0)`.
    pub fn reset<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<StateVector> {
        let n = self.cfg.n_queues;
        self.t = 0;
        self.queue = vec![0.0; n];
        self.window.clear();
        self.last_cpu_use = vec![0.0; n];
        self.last_offloaded_cycles = 0.0;
        self.arrival = sample_arrivals(&self.cfg.apps, rng)?;
        self.push_window(self.arrival.clone());
        Ok(self.state())
    }

    pub fn state(&self) -> StateVector {
        let second = match self.cfg.second_state_var {
            SecondStateVar::Arrival => self.arrival.clone(),
            SecondStateVar::Queue => self.queue.clone(),
        };
        let n = self.cfg.n_queues;
        let mut avg = vec![0.0; n];
        for a in &self.window {
            for (s, x) in avg.iter_mut().zip(a) {
                *s += x;
            }
        }
        for s in &mut avg {
            *s /= ARRIVAL_WINDOW as f64;
        }
        StateVector {
            backlog_plus_arrival: self.backlog_plus_arrival(),
            arrival: second,
            workload: self.cfg.workloads(),
            actual_cpu_use: self.last_cpu_use.clone(),
            offloaded_cycles: self.last_offloaded_cycles,
            windowed_arrival_avg: avg,
        }
    }

    pub fn step<R: Rng + ?Sized>(&mut self, action: &Action, rng: &mut R) -> Result<StepOutcome> {
        if action.n_queues() != self.cfg.n_queues {
            return Err(Error::Dimension {
                what: "action",
                expected: 2 * self.cfg.n_queues + 2,
                got: 2 * action.n_queues() + 2,
            });
        }
        action.check()?;
        let qa = self.backlog_plus_arrival();
        let dyn_ = slot_dynamics(&qa, action, &self.cfg);

        let t = self.t;
        let queue_before = std::mem::replace(&mut self.queue, dyn_.queue_after.clone());
        let next_arrival = sample_arrivals(&self.cfg.apps, rng)?;
        let arrival = std::mem::replace(&mut self.arrival, next_arrival.clone());
        self.push_window(next_arrival);
        self.last_cpu_use = dyn_.actual_cpu_use;
        self.last_offloaded_cycles = dyn_.offloaded_cycles;
        self.t += 1;

        Ok(StepOutcome {
            t,
            queue_before,
            arrival,
            departures: dyn_.departures,
            offloads: dyn_.offloads,
            queue_after: QueueVector::new(dyn_.queue_after)?,
            edge_cost: dyn_.edge_cost,
            cloud_cost: dyn_.cloud_cost,
            next_state: self.state(),
        })
    }

    fn push_window(&mut self, a: Vec<f64>) {
        if self.window.len() == ARRIVAL_WINDOW {
            self.window.pop_front();
        }
        self.window.push_back(a);
    }
}

/// One exported step of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: usize,
    pub queue: Vec<f64>,
    pub arrival: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub departures: Vec<f64>,
    pub offloads: Vec<f64>,
    pub edge_cost: f64,
    pub cloud_cost: f64,
}

impl TraceRow {
    pub fn from_step(action: &Action, out: &StepOutcome) -> Self {
        let n = action.n_queues();
        Self {
            t: out.t,
            queue: out.queue_before.clone(),
            arrival: out.arrival.clone(),
            alpha: action.alpha[..n].to_vec(),
            beta: action.beta[..n].to_vec(),
            departures: out.departures.clone(),
            offloads: out.offloads.clone(),
            edge_cost: out.edge_cost,
            cloud_cost: out.cloud_cost,
        }
    }
}

pub fn trace_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for prefix in ["q", "a", "alpha", "beta", "b", "o"] {
        h.extend((1..=n).map(|i| format!("{prefix}_{i}")));
    }
    h.push("C_E".into());
    h.push("C_C".into());
    h
}

pub fn write_trace_csv<W: Write>(writer: W, n: usize, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(trace_header(n))?;
    for r in rows {
        let mut rec = vec![r.t.to_string()];
        for block in [&r.queue, &r.arrival, &r.alpha, &r.beta, &r.departures, &r.offloads] {
            rec.extend(block.iter().map(|x| x.to_string()));
        }
        rec.push(r.edge_cost.to_string());
        rec.push(r.cloud_cost.to_string());
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: Read>(reader: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let width = rdr.headers()?.len();
    if width < 9 || (width - 3) % 6 != 0 {
        return Err(Error::Parse { line: 1, msg: format!("unexpected trace width {width}") });
    }
    let n = (width - 3) / 6;
    let mut rows = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Parse { line, msg: e.to_string() }))
            .collect::<Result<_>>()?;
        let block = |k: usize| vals[1 + k * n..1 + (k + 1) * n].to_vec();
        rows.push(TraceRow {
            t: vals[0] as usize,
            queue: block(0),
            arrival: block(1),
            alpha: block(2),
            beta: block(3),
            departures: block(4),
            offloads: block(5),
            edge_cost: vals[1 + 6 * n],
            cloud_cost: vals[2 + 6 * n],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AppProfile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(workload: f64) -> SystemConfig {
        let mut cfg = SystemConfig::reference();
        cfg.n_queues = 1;
        cfg.apps = vec![AppProfile::from_bounds("one", workload, 1.0, 1.0, 2.0)];
        cfg
    }

    fn act1(alpha: f64, beta: f64) -> Action {
        Action::from_controls(&[alpha], &[beta]).unwrap()
    }

    #[test]
    fn departure_examples() {
        let cfg = single(10435.0);
        let b = compute_departure(&act1(0.5, 0.25), &cfg);
        let expected = 40e9 * 0.5 / 10435.0 + 0.25 * 20e6;
        assert!((b[0] - expected).abs() < 1e-6);
        assert!((b[0] - 6.9166e6).abs() < 100.0);
        assert_eq!(compute_departure(&act1(0.0, 0.0), &cfg), vec![0.0]);
        assert_eq!(compute_departure(&act1(1.0, 0.0), &single(1.0)), vec![4e10]);
    }

    #[test]
    fn offload_branches() {
        // alpha f_E / w = 4e5 and beta B = 5e6
        let cfg = single(1e5);
        let a = act1(1.0, 0.25);
        assert_eq!(compute_offload(&[1e6], &a, &cfg), vec![6e5]);
        assert_eq!(compute_offload(&[1e7], &a, &cfg), vec![5e6]);
        assert_eq!(compute_offload(&[3e5], &a, &cfg), vec![0.0]);
    }

    #[test]
    fn queue_update_examples() {
        assert_eq!(queue_update(&[100.0], &[50.0], &[70.0]), vec![80.0]);
        assert_eq!(queue_update(&[1e6], &[2e5], &[1.5e6]), vec![0.0]);
        assert_eq!(queue_update(&[7.0], &[3.0], &[0.0]), vec![10.0]);
    }

    #[test]
    fn edge_cost_table() {
        let cfg = SystemConfig::reference();
        let cost = |s: f64| edge_cost_for_share(s, &cfg);
        assert!((cost(1.0) - 640.0).abs() < 1e-9);
        assert!((cost(0.75) - 270.0).abs() < 1e-9);
        assert_eq!(cost(0.0), 0.0);
        let a = Action::from_controls(&[0.25, 0.25, 0.25], &[0.0, 0.0, 0.0]).unwrap();
        assert!((edge_cost(&a, &cfg) - 270.0).abs() < 1e-9);
    }

    #[test]
    fn cloud_cost_table() {
        let mut cfg = SystemConfig::reference();
        assert!((cloud_cost_for_cycles(200e9, &cfg) - 2743.0).abs() < 1.0);
        assert!((cloud_cost_for_cycles(220e9, &cfg) - 3651.0).abs() < 1.0);
        cfg.cloud_cost_kind = CloudCostKind::PerCore;
        assert_eq!(cloud_cost_for_cycles(9e9, &cfg), 192.0);
        assert_eq!(cloud_cost_for_cycles(0.0, &cfg), 0.0);
        assert_eq!(cloud_cost_for_cycles(4e9, &cfg), 64.0);
    }

    #[test]
    fn action_constructors() {
        let u = Action::uniform(3);
        assert!(u.check().is_ok());
        assert_eq!(Action::idle(2).alpha, vec![0.0, 0.0, 1.0]);
        assert!(Action::new(vec![0.5, 0.6], vec![1.0, 0.0]).is_err());
        assert!(Action::new(vec![-0.1, 1.1], vec![1.0, 0.0]).is_err());
        let flat = u.to_flat();
        assert_eq!(Action::from_flat(&flat).unwrap(), u);
    }

    #[test]
    fn reset_empties_queues() {
        let mut env = EdgeCloudEnv::new(SystemConfig::reference()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = env.reset(&mut rng).unwrap();
        assert_eq!(s.backlog_plus_arrival, s.arrival);
        assert_eq!(s.to_vec().len(), 16);
        assert_eq!(s.actual_cpu_use, vec![0.0; 3]);
        assert_eq!(s.offloaded_cycles, 0.0);
        let s8 = EdgeCloudEnv::new(SystemConfig::reference_eight()).unwrap().reset(&mut rng).unwrap();
        assert_eq!(s8.to_vec().len(), 41);
        assert_eq!(StateVector::from_slice(3, &s.to_vec()).unwrap(), s);
    }

    #[test]
    fn null_dynamics() {
        let mut cfg = SystemConfig::reference();
        for app in &mut cfg.apps {
            app.arrival_rate = 0.0;
        }
        let mut env = EdgeCloudEnv::new(cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        env.reset(&mut rng).unwrap();
        env.queue = vec![5.0, 6.0, 7.0];
        env.arrival = vec![1.0, 1.0, 1.0];
        let out = env.step(&Action::idle(3), &mut rng).unwrap();
        assert_eq!(out.queue_after.as_slice(), &[6.0, 7.0, 8.0]);
        assert_eq!(out.edge_cost, 0.0);
        assert_eq!(out.cloud_cost, 0.0);
    }

    #[test]
    fn actual_cpu_use_is_clamped_by_backlog() {
        // alpha f_E / w = 25 bits of capacity against 10 bits of backlog.
        let mut cfg = single(1.0);
        cfg.edge_clock = 50.0;
        let a = act1(0.5, 0.0);
        let d = slot_dynamics(&[10.0], &a, &cfg);
        assert!((d.actual_cpu_use[0] - 0.5 * 10.0 / 25.0).abs() < 1e-15);
        assert_eq!(d.queue_after, vec![0.0]);
    }

    #[test]
    fn window_average_uses_zero_padding() {
        let mut env = EdgeCloudEnv::new(SystemConfig::reference()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let s = env.reset(&mut rng).unwrap();
        for i in 0..3 {
            assert!((s.windowed_arrival_avg[i] - s.arrival[i] / 100.0).abs() < 1e-9);
        }
        let mut sum = s.arrival.clone();
        for _ in 0..150 {
            let out = env.step(&Action::uniform(3), &mut rng).unwrap();
            for (acc, x) in sum.iter_mut().zip(&out.next_state.arrival) {
                *acc += x;
            }
        }
        // After 151 arrivals only the last 100 count.
        let st = env.state();
        assert!(st.windowed_arrival_avg.iter().zip(&sum).all(|(w, s)| *w < s / 100.0 + 1.0));
    }

    #[test]
    fn trace_csv_round_trip() {
        let row = TraceRow {
            t: 3,
            queue: vec![1.5, 2.0],
            arrival: vec![0.1, 0.2],
            alpha: vec![0.3, 0.3],
            beta: vec![0.25, 0.5],
            departures: vec![9.0, 8.0],
            offloads: vec![0.0, 1e-7],
            edge_cost: 1.0 / 3.0,
            cloud_cost: 2743.0,
        };
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, 2, std::slice::from_ref(&row)).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,q_1,q_2,a_1,a_2,alpha_1,alpha_2,beta_1,beta_2,b_1,b_2,o_1,o_2,C_E,C_C"));
        assert_eq!(read_trace_csv(&buf[..]).unwrap(), vec![row]);
    }

    #[test]
    fn malformed_trace_reports_line() {
        let text = "t,q_1,a_1,alpha_1,beta_1,b_1,o_1,C_E,C_C\n0,1,1,0,0,0,0,0,0\n1,x,1,0,0,0,0,0,0\n";
        match read_trace_csv(text.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
