use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use lyaq_core::config::feasibility_check;
use lyaq_core::dpp::{DppConfig, DppController};
use lyaq_core::env::write_trace_csv;
use lyaq_core::episode::{Controller, IdleController, UniformController};
use lyaq_core::harness::{
    compare, dpp_run, evaluate, sac_run, series_tag, slope_test, sweep, sweep_means, train, write_compare_csv,
    write_curve_csv, write_json, write_means_csv, CompareSpec, RunRecord, SacController, TrainConfig, TrainMetadata,
};
use lyaq_core::plot;
use lyaq_core::rewards::{RewardKind, RewardSpec};
use lyaq_core::sac::{SacAgent, SacConfig, SampleMode};
use lyaq_core::{CloudCostKind, SystemConfig};

#[derive(Parser)]
#[command(name = "lyaq", version, about = "Edge-cloud offloading experiments: DPP baseline and SAC agent")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check mean demand against capacity.
    Feasibility(Common),
    /// Run one episode and write its step trace.
    Simulate(SimArgs),
    /// Run one drift-plus-penalty episode and write its step trace.
    Dpp(Common),
    /// Train a SAC agent.
    Train(Common),
    /// Evaluate a controller over several episodes.
    Eval(EvalArgs),
    /// Sweep the penalty weight over a grid and seeds.
    Sweep(SweepArgs),
    /// DPP versus SAC on cubic and per-core cloud cost.
    Compare(CompareArgs),
    /// Render a CSV as an SVG chart.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Reference,
    ReferenceEight,
    Desk,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ControllerKind {
    Dpp,
    Sac,
    Idle,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum Reward {
    Power,
    Reshaped,
    Diff,
    MeanDiff,
}

impl From<Reward> for RewardKind {
    fn from(r: Reward) -> Self {
        match r {
            Reward::Power => RewardKind::Power,
            Reward::Reshaped => RewardKind::Reshaped,
            Reward::Diff => RewardKind::Diff,
            Reward::MeanDiff => RewardKind::MeanDiff,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Cost {
    Cubic,
    PerCore,
}

impl From<Cost> for CloudCostKind {
    fn from(c: Cost) -> Self {
        match c {
            Cost::Cubic => CloudCostKind::Cubic,
            Cost::PerCore => CloudCostKind::PerCore,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKind {
    Learning,
    Tradeoff,
    Queue,
}

#[derive(Args, Clone)]
struct Common {
    /// System configuration as JSON; overrides --profile.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    /// Reward penalty weight V.
    #[arg(long = "V")]
    v: Option<f64>,
    /// DPP penalty weight V'.
    #[arg(long = "Vprime", default_value_t = 1e9)]
    v_prime: f64,
    /// Reward exponent.
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long, value_enum, default_value = "diff")]
    reward: Reward,
    #[arg(long, value_enum)]
    cost: Option<Cost>,
    /// Episode length for simulate/dpp/eval; environment steps for train.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "uniform")]
    controller: ControllerKind,
    /// SAC checkpoint for --controller sac.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    sim: SimArgs,
    #[arg(long, default_value_t = 5)]
    episodes: usize,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "dpp")]
    controller: ControllerKind,
    /// Comma-separated weights (V' for dpp, V for sac).
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    /// Number of seeds, starting at --seed.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',', default_value = "1e9,1e10,1e11")]
    dpp_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "10")]
    sac_grid: Vec<f64>,
    #[arg(long, default_value_t = 3)]
    seeds: u64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long, value_enum)]
    kind: PlotKind,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

const DESK_TRAIN_STEPS: usize = 30_000;

impl Common {
    fn system(&self) -> Result<SystemConfig> {
        let mut cfg = match &self.config {
            Some(p) => SystemConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
            None => match self.profile {
                Profile::Reference => SystemConfig::reference(),
                Profile::ReferenceEight => SystemConfig::reference_eight(),
                Profile::Desk => SystemConfig::desk(),
            },
        };
        if let Some(v) = self.v {
            cfg.penalty_weight = v;
        }
        if let Some(nu) = self.nu {
            cfg.reward_exponent = nu;
        }
        if let Some(c) = self.cost {
            cfg.cloud_cost_kind = c.into();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn horizon(&self, cfg: &mut SystemConfig) {
        if let Some(s) = self.steps {
            cfg.episode_length = s;
        }
    }

    fn sac(&self) -> SacConfig {
        let base = match self.profile {
            Profile::Desk => SacConfig::desk(),
            _ => SacConfig::default(),
        };
        SacConfig { seed: self.seed, ..base }
    }

    fn train_config(&self) -> TrainConfig {
        let total_steps = self.steps.unwrap_or(match self.profile {
            Profile::Desk => DESK_TRAIN_STEPS,
            _ => 20 * 20_000,
        });
        TrainConfig { total_steps, reward_kind: self.reward.into(), seed: self.seed, ..TrainConfig::default() }
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn load_agent(path: Option<&PathBuf>) -> Result<SacAgent> {
    let Some(path) = path else { bail!("--controller sac needs --checkpoint") };
    let (agent, _) = SacAgent::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(agent)
}

fn run_controller(sim: &SimArgs, cfg: &SystemConfig, episodes: usize) -> Result<Vec<RunRecord>> {
    let c = &sim.common;
    let reward = RewardSpec::from_config(cfg, c.reward.into())?;
    let agent;
    let mut dpp = DppController { config: DppConfig::new(c.v_prime) };
    let mut sac;
    let (ctl, weight): (&mut dyn Controller, f64) = match sim.controller {
        ControllerKind::Idle => (&mut IdleController, cfg.penalty_weight),
        ControllerKind::Uniform => (&mut UniformController, cfg.penalty_weight),
        ControllerKind::Dpp => (&mut dpp, c.v_prime),
        ControllerKind::Sac => {
            agent = load_agent(sim.checkpoint.as_ref())?;
            sac = SacController { agent: &agent, mode: SampleMode::Deterministic };
            (&mut sac, cfg.penalty_weight)
        }
    };
    Ok(evaluate(ctl, cfg, Some(&reward), weight, episodes, c.seed)?)
}

fn print_run(r: &RunRecord, cfg: &SystemConfig) {
    let slope = slope_test(&r.queue_totals, cfg);
    println!(
        "{}: reward_sum {:.6} avg_penalty {:.6} avg_queue {:.6e} slope {:.3e} ({})",
        r.run_id,
        r.reward_sum,
        r.avg_penalty,
        r.avg_queue,
        slope.slope,
        if slope.passes { "stable" } else { "growing" }
    );
}

fn cmd_simulate(sim: &SimArgs) -> Result<()> {
    let mut cfg = sim.common.system()?;
    sim.common.horizon(&mut cfg);
    let rec = run_controller(sim, &cfg, 1)?.remove(0);
    let out = sim.common.out_or("trace.csv");
    ensure_parent(&out)?;
    write_trace_csv(fs::File::create(&out)?, cfg.n_queues, &rec.trace)?;
    print_run(&rec, &cfg);
    println!("trace written to {}", out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let mut cfg = args.sim.common.system()?;
    args.sim.common.horizon(&mut cfg);
    let recs = run_controller(&args.sim, &cfg, args.episodes)?;
    let out = args.sim.common.out_or("eval.csv");
    ensure_parent(&out)?;
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["run_id", "controller", "weight", "seed", "nu", "reward_sum", "avg_penalty", "avg_queue"])?;
    for r in &recs {
        print_run(r, &cfg);
        w.write_record([
            r.run_id.clone(),
            r.controller.clone(),
            r.weight.to_string(),
            r.seed.to_string(),
            r.nu.to_string(),
            r.reward_sum.to_string(),
            r.avg_penalty.to_string(),
            r.avg_queue.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_train(c: &Common) -> Result<()> {
    let cfg = c.system()?;
    let sac = c.sac();
    let tc = c.train_config();
    let out = train(&cfg, sac.clone(), &tc)?;
    let dir = c.out_or("train");
    fs::create_dir_all(&dir)?;
    write_curve_csv(dir.join("learning_curve.csv"), &out.curve)?;
    out.agent.save(dir.join("checkpoint.json"), None)?;
    write_json(
        dir.join("metadata.json"),
        &TrainMetadata {
            config: cfg,
            sac,
            train: tc,
            reward_scale: out.reward_scale,
            selected_step: out.selected_step,
            initial_reward_sum: out.initial().reward_sum,
            selected_reward_sum: out.selected().reward_sum,
        },
    )?;
    println!(
        "initial eval reward {:.6}, selected (step {}) {:.6}; outputs in {}",
        out.initial().reward_sum,
        out.selected_step,
        out.selected().reward_sum,
        dir.display()
    );
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    let c = &args.common;
    let mut cfg = c.system()?;
    let seeds: Vec<u64> = (c.seed..c.seed + args.seeds).collect();
    let out = c.out_or("sweep.csv");
    ensure_parent(&out)?;
    let (series, rows) = match args.controller {
        ControllerKind::Dpp => {
            c.horizon(&mut cfg);
            let series = series_tag("dpp", &cfg, None);
            let rows = sweep(&series, &args.grid, &seeds, &out, |w, seed| dpp_run(&cfg, &DppConfig::new(w), seed))?;
            (series, rows)
        }
        ControllerKind::Sac => {
            let kind: RewardKind = c.reward.into();
            let series = series_tag("sac", &cfg, Some(kind));
            let rows = sweep(&series, &args.grid, &seeds, &out, |w, seed| {
                let tc = TrainConfig { seed, ..c.train_config() };
                let sac = SacConfig { seed, ..c.sac() };
                sac_run(&cfg, &sac, &tc, w).map(|(r, _)| r)
            })?;
            (series, rows)
        }
        _ => bail!("sweep supports --controller dpp or sac"),
    };
    for r in rows.iter().filter(|r| r.series == series && !r.is_ok()) {
        eprintln!("failed: weight {} seed {}: {}", r.weight, r.seed, r.status);
    }
    let means = sweep_means(&rows, &series);
    let means_path = out.with_extension("means.csv");
    write_means_csv(&means_path, &series, &means)?;
    for m in &means {
        println!("{series} weight {}: avg_queue {:.6e} avg_penalty {:.6} ({} runs)", m.weight, m.avg_queue, m.avg_penalty, m.runs);
    }
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<()> {
    let c = &args.common;
    let cfg = c.system()?;
    let spec = CompareSpec {
        dpp_grid: args.dpp_grid.clone(),
        sac_grid: args.sac_grid.clone(),
        seeds: (c.seed..c.seed + args.seeds).collect(),
        sac: c.sac(),
        train: c.train_config(),
        costs: vec![CloudCostKind::Cubic, CloudCostKind::PerCore],
    };
    let rows = compare(&cfg, &spec)?;
    let out = c.out_or("compare.csv");
    ensure_parent(&out)?;
    write_compare_csv(&out, &rows)?;
    for r in &rows {
        println!(
            "{} {} w={} seed={} {} queue {:.4e} penalty {:.4} improved {:?}",
            r.cost, r.controller, r.weight, r.seed, r.status, r.avg_queue, r.avg_penalty, r.improved
        );
    }
    Ok(())
}

fn cmd_plot(args: &PlotArgs) -> Result<()> {
    let input = fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let svg = match args.kind {
        PlotKind::Learning => plot::learning_curve_svg(input),
        PlotKind::Tradeoff => plot::tradeoff_svg(input),
        PlotKind::Queue => plot::queue_svg(input),
    }
    .with_context(|| format!("reading {}", args.input.display()))?;
    ensure_parent(&args.out)?;
    fs::write(&args.out, svg)?;
    Ok(())
}

fn cmd_feasibility(c: &Common) -> Result<()> {
    let cfg = c.system()?;
    let r = feasibility_check(&cfg);
    for (app, rate) in cfg.apps.iter().zip(&r.per_app_cycle_rate) {
        println!("{:>12}: {:.3} Gcycles/s", app.name, rate / 1e9);
    }
    println!("total demand {:.3} Gcycles/s, capacity {:.3} Gcycles/s", r.total_cycle_rate / 1e9, r.total_capacity / 1e9);
    println!("bandwidth demand {:.3} Mbit/s, available {:.3} Mbit/s", r.required_bandwidth / 1e6, r.bandwidth / 1e6);
    println!("feasible: {}", r.feasible);
    if let Some(out) = &c.out {
        ensure_parent(out)?;
        write_json(out, &r)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Feasibility(c) => cmd_feasibility(c),
        Command::Simulate(s) => cmd_simulate(s),
        Command::Dpp(c) => cmd_simulate(&SimArgs { common: c.clone(), controller: ControllerKind::Dpp, checkpoint: None }),
        Command::Train(c) => cmd_train(c),
        Command::Eval(e) => cmd_eval(e),
        Command::Sweep(s) => cmd_sweep(s),
        Command::Compare(c) => cmd_compare(c),
        Command::Plot(p) => cmd_plot(p),
    }
}
