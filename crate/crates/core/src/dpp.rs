//! Drift-plus-penalty baseline: a per-slot constrained minimization of the
//! drift bound plus weighted cost over the two action simplexes.
//!
//! The solver is a multi-start projected gradient descent with backtracking.
//! Each start is a point on both simplexes; every iterate is projected back
//! onto them, so the returned action is feasible by construction.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::config::{CloudCostKind, SystemConfig, GIGA};
use crate::env::{cloud_cost_for_cycles, edge_cost_for_share, Action};
use crate::episode::{run_episode, Controller, EpisodeRecord};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum DppObjective {
    /// `Σ q_i (a_i - b_i) + V'·cost`, the quadratic term bounded by a constant.
    #[default]
    LinearDrift,
    /// Adds `½ Σ (a_i - b_i)^2`.
    FullBound,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub iterations: usize,
    /// Initial backtracking step, measured in simplex coordinates along the
    /// sup-normalized gradient.
    pub step_size: f64,
    /// Random simplex starts, on top of the idle and uniform starts.
    pub restarts: usize,
    /// Relative objective change that ends a descent.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { iterations: 200, step_size: 0.5, restarts: 8, tolerance: 1e-8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DppConfig {
    /// `V'`, applied to costs in `G^3·κ`.
    pub penalty_weight: f64,
    pub objective: DppObjective,
    pub solver: SolverConfig,
}

impl DppConfig {
    pub fn new(penalty_weight: f64) -> Self {
        Self { penalty_weight, objective: DppObjective::LinearDrift, solver: SolverConfig::default() }
    }

    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.penalty_weight >= 0.0) {
            v.push("V' must be >= 0".into());
        }
        if self.solver.iterations == 0 {
            v.push("iterations must be >= 1".into());
        }
        if self.solver.restarts == 0 {
            v.push("restarts must be >= 1".into());
        }
        if !(self.solver.tolerance > 0.0) {
            v.push("tolerance must be > 0".into());
        }
        if !(self.solver.step_size > 0.0) {
            v.push("step_size must be > 0".into());
        }
        v
    }
}

/// Objective value of an action at queue `q(t)` and arrival `a(t)`.
pub fn dpp_objective(q: &[f64], a: &[f64], action: &Action, cfg: &SystemConfig, dpp: &DppConfig) -> f64 {
    evaluate(q, a, &action.alpha, &action.beta, cfg, dpp, false).0
}

struct Gradient {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

fn evaluate(
    q: &[f64],
    a: &[f64],
    alpha: &[f64],
    beta: &[f64],
    cfg: &SystemConfig,
    dpp: &DppConfig,
    want_grad: bool,
) -> (f64, Option<Gradient>) {
    let n = cfg.n_queues;
    let full = dpp.objective == DppObjective::FullBound;
    let mut value = 0.0;
    let mut g_alpha = vec![0.0; n + 1];
    let mut g_beta = vec![0.0; n + 1];

    // Offload branch per queue: None when clamped at zero, Some(true) when bandwidth-limited.
    let mut cycles = 0.0;
    let mut branch = Vec::with_capacity(n);
    for i in 0..n {
        let w = cfg.apps[i].workload_cycles_per_bit;
        let cpu_bits = alpha[i] * cfg.edge_clock / w;
        let link_bits = beta[i] * cfg.bandwidth;
        let gap = a[i] - cpu_bits - link_bits;
        value += q[i] * gap;
        if full {
            value += 0.5 * gap * gap;
        }
        if want_grad {
            let dgap = q[i] + if full { gap } else { 0.0 };
            g_alpha[i] -= dgap * cfg.edge_clock / w;
            g_beta[i] -= dgap * cfg.bandwidth;
        }
        let remaining = q[i] + a[i] - cpu_bits;
        let (o, br) = if link_bits <= remaining {
            (link_bits, Some(true))
        } else {
            (remaining, Some(false))
        };
        if o > 0.0 {
            cycles += o * w;
            branch.push(br);
        } else {
            branch.push(None);
        }
    }

    let alpha_sum: f64 = alpha[..n].iter().sum();
    let vp = dpp.penalty_weight;
    value += vp * (edge_cost_for_share(alpha_sum, cfg) + cloud_cost_for_cycles(cycles, cfg));

    if want_grad && vp != 0.0 {
        let cores = cfg.edge_cores as f64;
        let clock = cfg.edge_clock / GIGA;
        let d_edge = 3.0 * clock.powi(3) * alpha_sum * alpha_sum / (cores * cores);
        let cloud_cores = cfg.cloud_cores as f64;
        let d_cloud_per_cycle = 3.0 * (cycles / GIGA).powi(2) / (cloud_cores * cloud_cores) / GIGA;
        for i in 0..n {
            g_alpha[i] += vp * d_edge;
            let w = cfg.apps[i].workload_cycles_per_bit;
            match branch[i] {
                Some(true) => g_beta[i] += vp * d_cloud_per_cycle * w * cfg.bandwidth,
                Some(false) => g_alpha[i] -= vp * d_cloud_per_cycle * w * cfg.edge_clock / w,
                None => {}
            }
        }
    }
    let grad = want_grad.then_some(Gradient { alpha: g_alpha, beta: g_beta });
    (value, grad)
}

/// Euclidean projection onto the probability simplex (Michelot's active-set
/// iteration).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut active: Vec<f64> = v.to_vec();
    let mut tau = (active.iter().sum::<f64>() - 1.0) / active.len() as f64;
    loop {
        let before = active.len();
        active.retain(|x| *x > tau);
        if active.len() == before {
            break;
        }
        tau = (active.iter().sum::<f64>() - 1.0) / active.len() as f64;
    }
    let mut out: Vec<f64> = v.iter().map(|x| (x - tau).max(0.0)).collect();
    // Fold the rounding residue into the largest coordinate.
    let residue = 1.0 - out.iter().sum::<f64>();
    if let Some(k) = (0..out.len()).max_by(|&i, &j| out[i].total_cmp(&out[j])) {
        out[k] = (out[k] + residue).max(0.0);
    }
    out
}

fn random_simplex<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..len).map(|_| Exp1.sample(rng)).collect();
    let s: f64 = draws.iter().sum();
    draws.into_iter().map(|x| x / s).collect()
}

/// Result of one projected-gradient descent.
#[derive(Debug, Clone)]
pub struct Descent {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub objective: f64,
    /// Objective after each accepted iterate, starting with the start point.
    pub history: Vec<f64>,
}

pub fn projected_descent(
    q: &[f64],
    a: &[f64],
    start: (Vec<f64>, Vec<f64>),
    cfg: &SystemConfig,
    dpp: &DppConfig,
) -> Result<Descent> {
    let (mut alpha, mut beta) = start;
    let (mut f, _) = evaluate(q, a, &alpha, &beta, cfg, dpp, false);
    let mut history = vec![f];
    for _ in 0..dpp.solver.iterations {
        let (_, g) = evaluate(q, a, &alpha, &beta, cfg, dpp, true);
        let g = g.expect("gradient requested");
        let scale = g.alpha.iter().chain(&g.beta).fold(0.0_f64, |m, x| m.max(x.abs()));
        if !scale.is_finite() || !f.is_finite() {
            return Err(Error::SolverDiverged(format!(
                "non-finite gradient (|g|_inf = {scale}, f = {f}) at alpha = {alpha:?}, beta = {beta:?}, q = {q:?}, a = {a:?}"
            )));
        }
        if scale == 0.0 {
            break;
        }
        let mut step = dpp.solver.step_size;
        let mut accepted = None;
        while step > 1e-12 {
            let na = project_simplex(&alpha.iter().zip(&g.alpha).map(|(x, d)| x - step * d / scale).collect::<Vec<_>>());
            let nb = project_simplex(&beta.iter().zip(&g.beta).map(|(x, d)| x - step * d / scale).collect::<Vec<_>>());
            let (nf, _) = evaluate(q, a, &na, &nb, cfg, dpp, false);
            if nf < f {
                accepted = Some((na, nb, nf));
                break;
            }
            step *= 0.5;
        }
        let Some((na, nb, nf)) = accepted else { break };
        let change = f - nf;
        alpha = na;
        beta = nb;
        f = nf;
        history.push(f);
        if change <= dpp.solver.tolerance * (1.0 + f.abs()) {
            break;
        }
    }
    Ok(Descent { alpha, beta, objective: f, history })
}

#[derive(Debug, Clone)]
pub struct DppSolution {
    pub action: Action,
    pub objective: f64,
    pub descents: usize,
}

/// Minimizes the drift-plus-penalty objective for one slot.
pub fn dpp_solve<R: Rng + ?Sized>(
    q: &[f64],
    a: &[f64],
    cfg: &SystemConfig,
    dpp: &DppConfig,
    rng: &mut R,
) -> Result<DppSolution> {
    if cfg.cloud_cost_kind == CloudCostKind::PerCore {
        return Err(Error::UnsupportedObjective(
            "per-core cloud cost is discontinuous; the gradient solver needs the cubic cost".into(),
        ));
    }
    let issues = dpp.violations();
    if !issues.is_empty() {
        return Err(Error::InvalidConfig(issues));
    }
    let n = cfg.n_queues;
    let idle = Action::idle(n);
    let uniform = Action::uniform(n);
    let mut starts = vec![(idle.alpha, idle.beta), (uniform.alpha, uniform.beta)];
    for _ in 0..dpp.solver.restarts {
        starts.push((random_simplex(n + 1, rng), random_simplex(n + 1, rng)));
    }
    let mut best: Option<Descent> = None;
    let descents = starts.len();
    for start in starts {
        let d = projected_descent(q, a, start, cfg, dpp)?;
        if best.as_ref().is_none_or(|b| d.objective < b.objective) {
            best = Some(d);
        }
    }
    let best = best.expect("at least one start");
    Ok(DppSolution { action: Action::new(best.alpha, best.beta)?, objective: best.objective, descents })
}

pub fn dpp_step_optimize<R: Rng + ?Sized>(
    q: &[f64],
    a: &[f64],
    cfg: &SystemConfig,
    dpp: &DppConfig,
    rng: &mut R,
) -> Result<Action> {
    dpp_solve(q, a, cfg, dpp, rng).map(|s| s.action)
}

/// Drift-plus-penalty as a [`Controller`]: observe `q(t)` and `a(t)`, solve, act.
#[derive(Debug, Clone)]
pub struct DppController {
    pub config: DppConfig,
}

impl Controller for DppController {
    fn name(&self) -> &str {
        "dpp"
    }

    fn act(
        &mut self,
        env: &crate::env::EdgeCloudEnv,
        _state: &crate::env::StateVector,
        rng: &mut dyn rand::RngCore,
    ) -> Result<Action> {
        dpp_step_optimize(env.queue(), env.arrival(), env.config(), &self.config, rng)
    }
}

/// Runs one `horizon`-slot episode under the drift-plus-penalty controller.
pub fn run_dpp_episode<R: Rng>(
    cfg: &SystemConfig,
    dpp: &DppConfig,
    horizon: usize,
    rng: &mut R,
) -> Result<EpisodeRecord> {
    let mut controller = DppController { config: *dpp };
    run_episode(&mut controller, cfg, None, horizon, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::AppProfile;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_queue() -> SystemConfig {
        let mut cfg = SystemConfig::reference();
        cfg.n_queues = 1;
        cfg.apps.truncate(1);
        cfg
    }

    #[test]
    fn objective_examples() {
        let cfg = one_queue();
        let idle = Action::idle(1);
        let d = DppConfig::new(1.0);
        assert_eq!(dpp_objective(&[10.0], &[5.0], &idle, &cfg, &d), 50.0);
        let d0 = DppConfig::new(0.0);
        assert_eq!(dpp_objective(&[0.0], &[5.0], &Action::uniform(1), &cfg, &d0), 0.0);

        // b = 1 bit via the link only.
        let mut cfg = one_queue();
        cfg.bandwidth = 1.0;
        let act = Action::from_controls(&[0.0], &[1.0]).unwrap();
        let full = DppConfig { objective: DppObjective::FullBound, ..DppConfig::new(0.0) };
        assert_eq!(dpp_objective(&[0.0], &[4.0], &act, &cfg, &full), 4.5);
    }

    #[test]
    fn projection_is_identity_on_simplex() {
        let p = vec![0.2, 0.3, 0.5];
        assert_eq!(project_simplex(&p), p);
        let q = project_simplex(&[3.0, -1.0, 0.5]);
        assert_eq!(q, vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn full_service_for_monotone_objective() {
        let cfg = one_queue();
        let d = DppConfig::new(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let act = dpp_step_optimize(&[10.0], &[0.0], &cfg, &d, &mut rng).unwrap();
        assert!((act.alpha[0] - 1.0).abs() < 1e-9);
        assert!((act.beta[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn per_core_cost_is_refused() {
        let mut cfg = one_queue();
        cfg.cloud_cost_kind = CloudCostKind::PerCore;
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let err = dpp_step_optimize(&[1.0], &[1.0], &cfg, &DppConfig::new(1.0), &mut rng).unwrap_err();
        assert!(matches!(err, Error::UnsupportedObjective(_)));
    }

    #[test]
    fn bad_solver_config_is_rejected() {
        let mut d = DppConfig::new(1.0);
        d.solver.restarts = 0;
        d.solver.tolerance = 0.0;
        assert_eq!(d.violations().len(), 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(dpp_solve(&[1.0], &[1.0], &one_queue(), &d, &mut rng).is_err());
    }

    #[test]
    fn descent_history_is_monotone() {
        let cfg = SystemConfig::reference();
        let d = DppConfig::new(1e9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let q: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2e7)).collect();
            let a: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1e7)).collect();
            let start = (random_simplex(4, &mut rng), random_simplex(4, &mut rng));
            let out = projected_descent(&q, &a, start, &cfg, &d).unwrap();
            assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
        }
    }

    #[test]
    fn gradient_matches_finite_differences_off_kinks() {
        let cfg = SystemConfig::reference();
        let d = DppConfig { objective: DppObjective::FullBound, ..DppConfig::new(3e8) };
        let q = [4e6, 1e6, 2e6];
        let a = [5e6, 3e6, 1e6];
        let alpha = vec![0.2, 0.1, 0.3, 0.4];
        let beta = vec![0.1, 0.05, 0.3, 0.55];
        let (_, g) = evaluate(&q, &a, &alpha, &beta, &cfg, &d, true);
        let g = g.unwrap();
        let h = 1e-7;
        for i in 0..3 {
            let mut p = alpha.clone();
            let mut m = alpha.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (evaluate(&q, &a, &p, &beta, &cfg, &d, false).0 - evaluate(&q, &a, &m, &beta, &cfg, &d, false).0) / (2.0 * h);
            assert!((fd - g.alpha[i]).abs() <= 1e-5 * g.alpha[i].abs().max(1.0), "alpha {i}: {fd} vs {}", g.alpha[i]);
            let mut p = beta.clone();
            let mut m = beta.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (evaluate(&q, &a, &alpha, &p, &cfg, &d, false).0 - evaluate(&q, &a, &alpha, &m, &cfg, &d, false).0) / (2.0 * h);
            assert!((fd - g.beta[i]).abs() <= 1e-5 * g.beta[i].abs().max(1.0), "beta {i}: {fd} vs {}", g.beta[i]);
        }
    }

    #[test]
    fn zero_arrivals_keep_queues_empty() {
        let mut cfg = SystemConfig::desk();
        for app in &mut cfg.apps {
            app.arrival_rate = 0.0;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rec = run_dpp_episode(&cfg, &DppConfig::new(1.0), 20, &mut rng).unwrap();
        assert_eq!(rec.avg_queue, 0.0);
    }

    #[test]
    fn identical_queues_get_identical_service() {
        let mut cfg = SystemConfig::reference();
        cfg.n_queues = 2;
        cfg.apps = vec![AppProfile::from_bounds("x", 20000.0, 5.0, 1e5, 3e5); 2];
        let d = DppConfig { objective: DppObjective::FullBound, ..DppConfig::new(1e8) };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let sol = dpp_solve(&[3e6, 3e6], &[2e6, 2e6], &cfg, &d, &mut rng).unwrap();
        let b = crate::env::compute_departure(&sol.action, &cfg);
        assert!((b[0] - b[1]).abs() <= 1e-3 * b[0].max(1.0), "{b:?}");
    }
}
