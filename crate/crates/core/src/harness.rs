//! Training, evaluation, sweeps and the DPP-versus-SAC comparison.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CloudCostKind, SystemConfig};
use crate::dpp::{run_dpp_episode, DppConfig};
use crate::env::{Action, EdgeCloudEnv, StateVector, TraceRow};
use crate::episode::{run_episode, Controller, EpisodeRecord};
use crate::error::{Error, Result};
use crate::rewards::{RewardKind, RewardSpec};
use crate::sac::{ReplayBuffer, SacAgent, SacConfig, SampleMode, Transition};

/// Independent RNG streams derived from one seed.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const COLLECT: u64 = 2;
    pub const UPDATE: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const DPP: u64 = 5;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Acts with a SAC policy.
pub struct SacController<'a> {
    pub agent: &'a SacAgent,
    pub mode: SampleMode,
}

impl Controller for SacController<'_> {
    fn name(&self) -> &str {
        "sac"
    }

    fn act(&mut self, _: &EdgeCloudEnv, state: &StateVector, rng: &mut dyn RngCore) -> Result<Action> {
        self.agent.policy_sample(state, self.mode, rng).map(|(a, _)| a)
    }
}

/// Least-squares slope of the queue total over the second half of an episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlopeReport {
    /// Bits per slot.
    pub slope: f64,
    pub threshold: f64,
    pub passes: bool,
}

/// Fraction of the mean arrival rate `Σ m_i` a stable trajectory may still
/// grow by per slot.
pub const SLOPE_FRACTION: f64 = 0.01;

/// Passes when the late-episode queue total grows by at most
/// `SLOPE_FRACTION · Σ m_i` bits per slot. An idle system grows by `Σ m_i`.
pub fn slope_test(queue_totals: &[f64], cfg: &SystemConfig) -> SlopeReport {
    let arrival_rate: f64 = cfg.mean_arrival_bits().iter().sum();
    let threshold = SLOPE_FRACTION * arrival_rate;
    let tail = &queue_totals[queue_totals.len() / 2..];
    let slope = ls_slope(tail);
    SlopeReport { slope, threshold, passes: slope <= threshold }
}

/// Least-squares slope of `ys` against `0, 1, 2, ...`.
pub fn ls_slope(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    if ys.len() < 2 {
        return 0.0;
    }
    let x_mean = (n - 1.0) / 2.0;
    let y_mean = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, y) in ys.iter().enumerate() {
        let dx = i as f64 - x_mean;
        num += dx * (y - y_mean);
        den += dx * dx;
    }
    num / den
}

/// One evaluated episode with its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub config: SystemConfig,
    pub seed: u64,
    pub controller: String,
    /// `V` for SAC, `V'` for DPP.
    pub weight: f64,
    pub nu: f64,
    pub reward_kind: Option<RewardKind>,
    pub reward_sum: f64,
    pub avg_penalty: f64,
    pub avg_queue: f64,
    pub queue_totals: Vec<f64>,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl RunRecord {
    fn from_episode(
        run_id: String,
        cfg: &SystemConfig,
        seed: u64,
        controller: &str,
        weight: f64,
        reward_kind: Option<RewardKind>,
        ep: EpisodeRecord,
    ) -> Self {
        Self {
            run_id,
            config: cfg.clone(),
            seed,
            controller: controller.to_string(),
            weight,
            nu: cfg.reward_exponent,
            reward_kind,
            reward_sum: ep.reward_sum,
            avg_penalty: ep.avg_penalty,
            avg_queue: ep.avg_queue,
            queue_totals: ep.queue_totals,
            trace: ep.trace,
        }
    }
}

/// Runs `episodes` evaluation episodes; episode `k` uses its own stream of `seed`.
pub fn evaluate<C: Controller + ?Sized>(
    controller: &mut C,
    cfg: &SystemConfig,
    reward: Option<&RewardSpec>,
    weight: f64,
    episodes: usize,
    seed: u64,
) -> Result<Vec<RunRecord>> {
    let name = controller.name().to_string();
    (0..episodes)
        .map(|k| {
            let mut rng = stream_rng(seed, stream::EVAL + 16 * k as u64);
            let ep = run_episode(controller, cfg, reward, cfg.episode_length, &mut rng)?;
            Ok(RunRecord::from_episode(
                format!("{name}-w{weight}-s{seed}-e{k}"),
                cfg,
                seed,
                &name,
                weight,
                reward.map(|r| r.kind),
                ep,
            ))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Environment steps to collect; 0 evaluates the initial policy only.
    pub total_steps: usize,
    /// Episodes collected between evaluations.
    pub episodes_per_round: usize,
    pub reward_kind: RewardKind,
    /// Final fraction of training from which the returned policy is picked.
    pub select_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 100_000,
            episodes_per_round: 4,
            reward_kind: RewardKind::Diff,
            select_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub reward_sum: f64,
    pub avg_penalty: f64,
    pub avg_queue: f64,
}

impl CurvePoint {
    fn from_record(step: usize, r: &EpisodeRecord) -> Self {
        Self { step, reward_sum: r.reward_sum, avg_penalty: r.avg_penalty, avg_queue: r.avg_queue }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Policy with the best evaluation inside the selection window.
    pub agent: SacAgent,
    pub final_agent: SacAgent,
    pub curve: Vec<CurvePoint>,
    pub selected_step: usize,
    pub reward_scale: f64,
}

impl TrainOutcome {
    pub fn initial(&self) -> &CurvePoint {
        &self.curve[0]
    }

    pub fn selected(&self) -> &CurvePoint {
        self.curve.iter().find(|p| p.step == self.selected_step).expect("selected point is on the curve")
    }
}

fn eval_agent(agent: &SacAgent, cfg: &SystemConfig, reward: &RewardSpec, seed: u64) -> Result<EpisodeRecord> {
    let mut ctl = SacController { agent, mode: SampleMode::Deterministic };
    let mut rng = stream_rng(seed, stream::EVAL);
    run_episode(&mut ctl, cfg, Some(reward), cfg.episode_length, &mut rng)
}

/// Collect-update-evaluate loop.
///
/// Every round collects `episodes_per_round` stochastic episodes from empty
/// queues, runs one update per collected step, then evaluates the
/// deterministic policy on a fixed evaluation stream and logs its undiscounted
/// reward sum.
pub fn train(cfg: &SystemConfig, sac: SacConfig, tc: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let reward = RewardSpec::from_config(cfg, tc.reward_kind)?;
    let horizon = cfg.episode_length;
    let mut init_rng = stream_rng(tc.seed, stream::INIT);
    let mut collect_rng = stream_rng(tc.seed, stream::COLLECT);
    let mut update_rng = stream_rng(tc.seed, stream::UPDATE);
    let mut agent = SacAgent::new(cfg, sac, &mut init_rng)?;
    let reward_scale = agent.reward_scale;
    let mut buffer = ReplayBuffer::for_config(cfg, &agent.config);

    let mut curve = vec![CurvePoint::from_record(0, &eval_agent(&agent, cfg, &reward, tc.seed)?)];
    let select_from = ((1.0 - tc.select_fraction) * tc.total_steps as f64).floor() as usize;
    let mut best: Option<(f64, usize, SacAgent)> = None;
    if tc.total_steps == 0 {
        best = Some((curve[0].reward_sum, 0, agent.clone()));
    }

    let mut env = EdgeCloudEnv::new(cfg.clone())?;
    let mut steps = 0;
    while steps < tc.total_steps {
        let mut collected = 0;
        for _ in 0..tc.episodes_per_round.max(1) {
            if steps >= tc.total_steps {
                break;
            }
            let state = env.reset(&mut collect_rng)?;
            let mut x = agent.scaler.normalize(&state.to_vec())?;
            for _ in 0..horizon {
                if steps >= tc.total_steps {
                    break;
                }
                let p = agent.policy_normalized(&x, SampleMode::Stochastic, &mut collect_rng)?;
                let action = Action::new(p.alpha, p.beta)?;
                let out = env.step(&action, &mut collect_rng)?;
                let r = reward.evaluate(&out, horizon)?;
                if !r.is_finite() {
                    return Err(Error::NonFinite(format!("reward {r} at training step {steps}")));
                }
                let next_x = agent.scaler.normalize(&out.next_state.to_vec())?;
                buffer.push(Transition { state: x, action: action.to_flat(), reward: r, next_state: next_x.clone() })?;
                x = next_x;
                steps += 1;
                collected += 1;
            }
        }
        for _ in 0..collected {
            if buffer.len() >= agent.config.batch_size {
                agent.update(&buffer, &mut update_rng)?;
            }
        }
        let rec = eval_agent(&agent, cfg, &reward, tc.seed)?;
        if !rec.reward_sum.is_finite() {
            return Err(Error::NonFinite(format!("evaluation reward sum at step {steps}")));
        }
        let point = CurvePoint::from_record(steps, &rec);
        curve.push(point);
        if steps >= select_from && best.as_ref().is_none_or(|b| point.reward_sum > b.0) {
            best = Some((point.reward_sum, steps, agent.clone()));
        }
    }
    let (_, selected_step, selected) = best.expect("at least one evaluation in the selection window");
    Ok(TrainOutcome { agent: selected, final_agent: agent, curve, selected_step, reward_scale })
}

pub fn curve_header() -> [&'static str; 4] {
    ["step", "reward_sum", "avg_penalty", "avg_queue"]
}

pub fn write_curve_csv(path: impl AsRef<Path>, curve: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(curve_header())?;
    for p in curve {
        w.write_record([p.step.to_string(), p.reward_sum.to_string(), p.avg_penalty.to_string(), p.avg_queue.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// One `(series, weight, seed)` result of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub series: String,
    pub weight: f64,
    pub seed: u64,
    pub avg_queue: f64,
    pub avg_penalty: f64,
    /// Empty for controllers run without a reward.
    pub reward_sum: Option<f64>,
    /// `ok`, or the failure message.
    pub status: String,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepMean {
    pub weight: f64,
    pub avg_queue: f64,
    pub avg_penalty: f64,
    pub runs: usize,
}

pub fn read_sweep_csv(path: impl AsRef<Path>) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.deserialize().enumerate() {
        rows.push(rec.map_err(|e: csv::Error| Error::Parse { line: i + 2, msg: e.to_string() })?);
    }
    Ok(rows)
}

/// Per-weight means over successful rows of one series, in ascending weight order.
pub fn sweep_means(rows: &[SweepRow], series: &str) -> Vec<SweepMean> {
    let mut groups: BTreeMap<u64, (f64, f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.series == series && r.is_ok()) {
        // Non-negative floats sort like their bit patterns.
        let e = groups.entry(r.weight.to_bits()).or_insert((r.weight, 0.0, 0.0, 0));
        e.1 += r.avg_queue;
        e.2 += r.avg_penalty;
        e.3 += 1;
    }
    groups
        .into_values()
        .map(|(weight, q, p, n)| SweepMean { weight, avg_queue: q / n as f64, avg_penalty: p / n as f64, runs: n })
        .collect()
}

/// Runs every `(weight, seed)` pair not already present in `out` and appends
/// its row. Failures are recorded as rows and the sweep moves on.
pub fn sweep<F>(series: &str, grid: &[f64], seeds: &[u64], out: impl AsRef<Path>, mut run: F) -> Result<Vec<SweepRow>>
where
    F: FnMut(f64, u64) -> Result<RunRecord>,
{
    if grid.is_empty() {
        return Err(Error::InvalidConfig(vec!["sweep grid is empty".into()]));
    }
    let out = out.as_ref();
    let existing = if out.exists() { read_sweep_csv(out)? } else { Vec::new() };
    let done: HashSet<(String, u64, u64)> =
        existing.iter().map(|r| (r.series.clone(), r.weight.to_bits(), r.seed)).collect();
    let fresh = !out.exists() || fs::metadata(out)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(out)?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    let mut rows = existing;
    for &weight in grid {
        for &seed in seeds {
            if done.contains(&(series.to_string(), weight.to_bits(), seed)) {
                continue;
            }
            let row = match run(weight, seed) {
                Ok(rec) => SweepRow {
                    series: series.to_string(),
                    weight,
                    seed,
                    avg_queue: rec.avg_queue,
                    avg_penalty: rec.avg_penalty,
                    reward_sum: rec.reward_kind.map(|_| rec.reward_sum),
                    status: "ok".into(),
                },
                Err(e) => SweepRow {
                    series: series.to_string(),
                    weight,
                    seed,
                    avg_queue: f64::NAN,
                    avg_penalty: f64::NAN,
                    reward_sum: None,
                    status: e.to_string(),
                },
            };
            w.serialize(&row)?;
            w.flush()?;
            rows.push(row);
        }
    }
    Ok(rows)
}

pub fn write_means_csv(path: impl AsRef<Path>, series: &str, means: &[SweepMean]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["series", "weight", "avg_queue", "avg_penalty", "runs"])?;
    for m in means {
        w.write_record([
            series.to_string(),
            m.weight.to_string(),
            m.avg_queue.to_string(),
            m.avg_penalty.to_string(),
            m.runs.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// One DPP evaluation episode at weight `V'`.
pub fn dpp_run(cfg: &SystemConfig, dpp: &DppConfig, seed: u64) -> Result<RunRecord> {
    let mut rng = stream_rng(seed, stream::DPP);
    let ep = run_dpp_episode(cfg, dpp, cfg.episode_length, &mut rng)?;
    let w = dpp.penalty_weight;
    Ok(RunRecord::from_episode(format!("dpp-w{w}-s{seed}"), cfg, seed, "dpp", w, None, ep))
}

/// Trains at weight `V` and evaluates the selected policy.
pub fn sac_run(cfg: &SystemConfig, sac: &SacConfig, tc: &TrainConfig, weight: f64) -> Result<(RunRecord, TrainOutcome)> {
    let cfg = SystemConfig { penalty_weight: weight, ..cfg.clone() };
    let outcome = train(&cfg, sac.clone(), tc)?;
    let reward = RewardSpec::from_config(&cfg, tc.reward_kind)?;
    let mut ctl = SacController { agent: &outcome.agent, mode: SampleMode::Deterministic };
    let rec = evaluate(&mut ctl, &cfg, Some(&reward), weight, 1, tc.seed)?.remove(0);
    Ok((rec, outcome))
}

/// Series tag that separates sweeps by controller, exponent, reward and cost.
pub fn series_tag(controller: &str, cfg: &SystemConfig, reward: Option<RewardKind>) -> String {
    let cost = cfg.cloud_cost_kind;
    match reward {
        Some(r) => format!("{controller}-nu{}-{r}-{cost}", cfg.reward_exponent),
        None => format!("{controller}-{cost}"),
    }
}

/// One line of the comparison report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub cost: CloudCostKind,
    pub controller: String,
    pub weight: f64,
    pub seed: u64,
    /// `ok`, `unsupported-objective`, or an error message.
    pub status: String,
    pub avg_queue: f64,
    pub avg_penalty: f64,
    /// First and selected evaluation reward sums; SAC only.
    pub initial_reward: f64,
    pub final_reward: f64,
    pub improved: Option<bool>,
}

pub const UNSUPPORTED_MARKER: &str = "unsupported-objective";

#[derive(Debug, Clone)]
pub struct CompareSpec {
    pub dpp_grid: Vec<f64>,
    pub sac_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub sac: SacConfig,
    pub train: TrainConfig,
    pub costs: Vec<CloudCostKind>,
}

/// DPP and SAC on each cost kind; DPP refusals are recorded, not raised.
pub fn compare(cfg: &SystemConfig, spec: &CompareSpec) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::new();
    for &cost in &spec.costs {
        let cfg = SystemConfig { cloud_cost_kind: cost, ..cfg.clone() };
        for &w in &spec.dpp_grid {
            for &seed in &spec.seeds {
                let dpp = DppConfig::new(w);
                let base = CompareRow {
                    cost,
                    controller: "dpp".into(),
                    weight: w,
                    seed,
                    status: "ok".into(),
                    avg_queue: f64::NAN,
                    avg_penalty: f64::NAN,
                    initial_reward: f64::NAN,
                    final_reward: f64::NAN,
                    improved: None,
                };
                rows.push(match dpp_run(&cfg, &dpp, seed) {
                    Ok(r) => CompareRow { avg_queue: r.avg_queue, avg_penalty: r.avg_penalty, ..base },
                    Err(e) if is_unsupported(&e) => CompareRow { status: UNSUPPORTED_MARKER.into(), ..base },
                    Err(e) => CompareRow { status: e.to_string(), ..base },
                });
            }
        }
        for &w in &spec.sac_grid {
            for &seed in &spec.seeds {
                let tc = TrainConfig { seed, ..spec.train.clone() };
                let sac = SacConfig { seed, ..spec.sac.clone() };
                let row = match sac_run(&cfg, &sac, &tc, w) {
                    Ok((rec, out)) => CompareRow {
                        cost,
                        controller: "sac".into(),
                        weight: w,
                        seed,
                        status: "ok".into(),
                        avg_queue: rec.avg_queue,
                        avg_penalty: rec.avg_penalty,
                        initial_reward: out.initial().reward_sum,
                        final_reward: out.selected().reward_sum,
                        improved: Some(out.selected().reward_sum > out.initial().reward_sum),
                    },
                    Err(e) => CompareRow {
                        cost,
                        controller: "sac".into(),
                        weight: w,
                        seed,
                        status: e.to_string(),
                        avg_queue: f64::NAN,
                        avg_penalty: f64::NAN,
                        initial_reward: f64::NAN,
                        final_reward: f64::NAN,
                        improved: None,
                    },
                };
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

fn is_unsupported(e: &Error) -> bool {
    match e {
        Error::UnsupportedObjective(_) => true,
        Error::AtSlot { source, .. } => is_unsupported(source),
        _ => false,
    }
}

pub fn write_compare_csv(path: impl AsRef<Path>, rows: &[CompareRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Run metadata written next to training outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub config: SystemConfig,
    pub sac: SacConfig,
    pub train: TrainConfig,
    pub reward_scale: f64,
    pub selected_step: usize,
    pub initial_reward_sum: f64,
    pub selected_reward_sum: f64,
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Draws a fresh seed list `0..n`.
pub fn seed_list(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episode::{metrics_from_trace, IdleController, UniformController};

    #[test]
    fn slope_of_a_line() {
        let ys: Vec<f64> = (0..10).map(|i| 3.0 * i as f64 + 1.0).collect();
        assert!((ls_slope(&ys) - 3.0).abs() < 1e-12);
        assert_eq!(ls_slope(&[5.0]), 0.0);
    }

    #[test]
    fn idle_fails_slope_test() {
        let cfg = SystemConfig::desk();
        let rec = evaluate(&mut IdleController, &cfg, None, 0.0, 1, 3).unwrap().remove(0);
        assert!(!slope_test(&rec.queue_totals, &cfg).passes);
        assert_eq!(rec.avg_penalty, 0.0);
    }

    #[test]
    fn zero_arrivals_keep_queues_empty() {
        let mut cfg = SystemConfig::desk();
        for a in &mut cfg.apps {
            a.arrival_rate = 0.0;
        }
        let rec = evaluate(&mut UniformController, &cfg, None, 0.0, 2, 1).unwrap();
        assert!(rec.iter().all(|r| r.avg_queue == 0.0));
    }

    #[test]
    fn record_matches_trace() {
        let cfg = SystemConfig { episode_length: 60, ..SystemConfig::desk() };
        let rec = evaluate(&mut UniformController, &cfg, None, 0.0, 1, 2).unwrap().remove(0);
        let (p, q) = metrics_from_trace(&rec.trace);
        assert!((p - rec.avg_penalty).abs() <= 1e-9 * p.abs().max(1.0));
        assert!((q - rec.avg_queue).abs() <= 1e-9 * q.abs().max(1.0));
    }

    #[test]
    fn zero_step_training_returns_initial_policy() {
        let cfg = SystemConfig { episode_length: 20, ..SystemConfig::desk() };
        let sac = SacConfig { hidden: vec![8], ..SacConfig::desk() };
        let tc = TrainConfig { total_steps: 0, ..TrainConfig::default() };
        let out = train(&cfg, sac, &tc).unwrap();
        assert_eq!(out.curve.len(), 1);
        assert_eq!(out.selected_step, 0);
        assert_eq!(out.agent, out.final_agent);
    }

    #[test]
    fn empty_grid_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let err = sweep("x", &[], &[0], dir.path().join("s.csv"), |_, _| unreachable!()).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
    }
}
