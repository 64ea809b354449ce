//! System configuration, application profiles and the closed-form feasibility check.
//!
//! All rates are per slot; one slot is one second. Sizes are carried in bits,
//! with `1 kB = 8 * 1024` bits and `1 MB = 8 * 1024 * 1024` bits.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

pub const BITS_PER_BYTE: f64 = 8.0;
pub const BITS_PER_KB: f64 = 8.0 * 1024.0;
pub const BITS_PER_MB: f64 = 8.0 * 1024.0 * 1024.0;

/// Giga, the scale used for clock rates and cycle counts in cost units.
pub const GIGA: f64 = 1e9;

/// One application type and the queue it feeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AppProfile {
    #[serde(default)]
    pub name: String,
    /// Cycles needed to process one bit.
    pub workload_cycles_per_bit: f64,
    /// Mean number of task arrivals per slot (Poisson).
    pub arrival_rate: f64,
    pub size_min: f64,
    pub size_max: f64,
    pub size_mean: f64,
    pub size_std: f64,
}

impl AppProfile {
    /// Truncated-normal profile whose mean is the midpoint of the bounds and
    /// whose standard deviation is a quarter of the range.
    pub fn from_bounds(
        name: impl Into<String>,
        workload_cycles_per_bit: f64,
        arrival_rate: f64,
        size_min: f64,
        size_max: f64,
    ) -> Self {
        Self {
            name: name.into(),
            workload_cycles_per_bit,
            arrival_rate,
            size_min,
            size_max,
            size_mean: (size_max + size_min) / 2.0,
            size_std: (size_max - size_min) / 4.0,
        }
    }

    /// Mean arrived bits per slot, `λ·μ`.
    pub fn mean_bits_per_slot(&self) -> f64 {
        self.arrival_rate * self.size_mean
    }

    /// Mean cycle demand per slot, `λ·μ·w`.
    pub fn mean_cycles_per_slot(&self) -> f64 {
        self.mean_bits_per_slot() * self.workload_cycles_per_bit
    }

    fn violations(&self, idx: usize, out: &mut Vec<String>) {
        let tag = if self.name.is_empty() {
            format!("apps[{idx}]")
        } else {
            format!("apps[{idx}] ({})", self.name)
        };
        if !(self.workload_cycles_per_bit > 0.0) {
            out.push(format!("{tag}: workload_cycles_per_bit must be > 0"));
        }
        if !(self.arrival_rate >= 0.0) || !self.arrival_rate.is_finite() {
            out.push(format!("{tag}: arrival_rate must be finite and >= 0"));
        }
        if !(self.size_min > 0.0) {
            out.push(format!("{tag}: size_min must be > 0"));
        }
        if !(self.size_min < self.size_max) {
            out.push(format!("{tag}: size_min must be < size_max"));
        }
        if !(self.size_std > 0.0) {
            out.push(format!("{tag}: size_std must be > 0"));
        }
        if !(self.size_mean >= self.size_min && self.size_mean <= self.size_max) {
            out.push(format!("{tag}: size_mean must lie in [size_min, size_max]"));
        }
    }
}

#[derive(Deserialize)]
struct RawAppProfile {
    #[serde(default)]
    name: String,
    workload_cycles_per_bit: f64,
    arrival_rate: f64,
    size_min: Bits,
    size_max: Bits,
    #[serde(default)]
    size_mean: Option<Bits>,
    #[serde(default)]
    size_std: Option<Bits>,
}

impl<'de> Deserialize<'de> for AppProfile {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let raw = RawAppProfile::deserialize(d)?;
        let mut app = AppProfile::from_bounds(
            raw.name,
            raw.workload_cycles_per_bit,
            raw.arrival_rate,
            raw.size_min.0,
            raw.size_max.0,
        );
        if let Some(m) = raw.size_mean {
            app.size_mean = m.0;
        }
        if let Some(s) = raw.size_std {
            app.size_std = s.0;
        }
        Ok(app)
    }
}

/// A size in bits, deserializable from a number or a string with a unit suffix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bits(pub f64);

impl<'de> Deserialize<'de> for Bits {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Bits(v)),
            Raw::Text(s) => parse_bits(&s).map(Bits).map_err(serde::de::Error::custom),
        }
    }
}

/// Parses `"170kB"`, `"1.55 MB"`, `"51byte"`, `"4096bit"` or a bare number (bits).
pub fn parse_bits(text: &str) -> std::result::Result<f64, String> {
    let t = text.trim();
    let split = t
        .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')))
        .unwrap_or(t.len());
    let (num, unit) = t.split_at(split);
    let value: f64 = num
        .trim()
        .parse()
        .map_err(|_| format!("cannot parse size {text:?}"))?;
    let scale = match unit.trim() {
        "" | "bit" | "bits" | "b" => 1.0,
        "B" | "byte" | "bytes" => BITS_PER_BYTE,
        "kB" | "KB" | "kb" => BITS_PER_KB,
        "MB" | "mB" => BITS_PER_MB,
        other => return Err(format!("unknown size unit {other:?} in {text:?}")),
    };
    Ok(value * scale)
}

/// How the cloud charges for offloaded work.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CloudCostKind {
    /// Cubic in the evenly split per-core clock, like the edge CPU.
    Cubic,
    /// Each activated core is billed at its full clock; discontinuous in the load.
    PerCore,
}

impl fmt::Display for CloudCostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CloudCostKind::Cubic => "cubic",
            CloudCostKind::PerCore => "per-core",
        })
    }
}

/// The second per-queue state block: the pre-arrival backlog or the arrival itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SecondStateVar {
    #[default]
    Arrival,
    Queue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub n_queues: usize,
    /// Edge CPU clock over all cores, cycles per slot.
    pub edge_clock: f64,
    pub edge_cores: usize,
    /// Edge-to-cloud bandwidth, bits per slot.
    pub bandwidth: f64,
    pub cloud_cores: usize,
    #[serde(default = "default_cloud_core_clock")]
    pub cloud_core_clock: f64,
    /// Cost per (cycles/s)^3.
    pub kappa: f64,
    pub rho: f64,
    pub penalty_weight: f64,
    pub reward_exponent: f64,
    pub episode_length: usize,
    pub discount: f64,
    pub apps: Vec<AppProfile>,
    pub cloud_cost_kind: CloudCostKind,
    #[serde(default)]
    pub second_state_var: SecondStateVar,
}

fn default_cloud_core_clock() -> f64 {
    4.0 * GIGA
}

impl SystemConfig {
    /// The three-application setup: speech recognition, NLP and face recognition
    /// on a 10-core 40 Gcycles/s edge, a 54-core cloud and a 20 Mbit/s link.
    pub fn reference() -> Self {
        Self {
            n_queues: 3,
            edge_clock: 40.0 * GIGA,
            edge_cores: 10,
            bandwidth: 20e6,
            cloud_cores: 54,
            cloud_core_clock: 4.0 * GIGA,
            kappa: 1.0 / (400.0 * GIGA).powi(3),
            rho: 1e-9,
            penalty_weight: 10.0,
            reward_exponent: 1.0,
            episode_length: 5000,
            discount: 0.999,
            apps: reference_apps(),
            cloud_cost_kind: CloudCostKind::Cubic,
            second_state_var: SecondStateVar::Arrival,
        }
    }

    /// The eight-application setup with per-core cloud billing.
    pub fn reference_eight() -> Self {
        let apps = vec![
            AppProfile::from_bounds("speech", 10435.0, 0.5, 40.0 * BITS_PER_KB, 300.0 * BITS_PER_KB),
            AppProfile::from_bounds("nlp", 25346.0, 0.8, 4.0 * BITS_PER_KB, 100.0 * BITS_PER_KB),
            AppProfile::from_bounds("face", 45043.0, 0.4, 10.0 * BITS_PER_KB, 100.0 * BITS_PER_KB),
            AppProfile::from_bounds("search", 8405.0, 10.0, 2.0 * BITS_PER_BYTE, 100.0 * BITS_PER_BYTE),
            AppProfile::from_bounds("translation", 34252.0, 1.0, 2.0 * BITS_PER_BYTE, 5000.0 * BITS_PER_BYTE),
            AppProfile::from_bounds("3d-game", 54633.0, 0.1, 0.1 * BITS_PER_MB, 3.0 * BITS_PER_MB),
            AppProfile::from_bounds("vr", 40305.0, 0.1, 0.1 * BITS_PER_MB, 3.0 * BITS_PER_MB),
            AppProfile::from_bounds("ar", 34532.0, 0.1, 0.1 * BITS_PER_MB, 3.0 * BITS_PER_MB),
        ];
        Self {
            n_queues: apps.len(),
            apps,
            cloud_cost_kind: CloudCostKind::PerCore,
            ..Self::reference()
        }
    }

    /// Small two-queue profile for quick experiments and CI.
    ///
    /// Speech and NLP traffic on the reference edge CPU with a 12 Mbit/s link,
    /// arrival rates scaled so the mean load is 1/1.1 of the best-case bit
    /// service rate when every queue gets its proportional share.
    pub fn desk() -> Self {
        let mut apps = vec![reference_apps()[0].clone(), reference_apps()[1].clone()];
        let bandwidth = 12e6;
        let edge_clock = 40.0 * GIGA;
        // Service capacity in bits per slot if the whole edge CPU and link are split
        // proportionally to each queue's load share.
        let demand_bits: f64 = apps.iter().map(AppProfile::mean_bits_per_slot).sum();
        let edge_bits: f64 = apps
            .iter()
            .map(|a| edge_clock * a.mean_bits_per_slot() / demand_bits / a.workload_cycles_per_bit)
            .sum();
        let scale = (bandwidth + edge_bits) / 1.1 / demand_bits;
        for app in &mut apps {
            app.arrival_rate *= scale;
        }
        Self {
            n_queues: 2,
            edge_clock,
            edge_cores: 10,
            bandwidth,
            cloud_cores: 54,
            apps,
            episode_length: 500,
            discount: 0.99,
            ..Self::reference()
        }
    }

    /// Mean arrived bits per slot for every queue.
    pub fn mean_arrival_bits(&self) -> Vec<f64> {
        self.apps.iter().map(AppProfile::mean_bits_per_slot).collect()
    }

    pub fn workloads(&self) -> Vec<f64> {
        self.apps.iter().map(|a| a.workload_cycles_per_bit).collect()
    }

    /// Conversion factor from `G^3·κ` cost units to the reward's cost units (`κ·f^3`).
    pub fn cost_unit_scale(&self) -> f64 {
        self.kappa * GIGA.powi(3)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    /// Returns every violated invariant; empty means valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.n_queues == 0 {
            out.push("n_queues must be >= 1".to_string());
        }
        if self.apps.len() != self.n_queues {
            out.push(format!(
                "apps.length ({}) != n_queues ({})",
                self.apps.len(),
                self.n_queues
            ));
        }
        if !(self.edge_clock > 0.0) {
            out.push("edge_clock must be > 0".to_string());
        }
        if self.edge_cores == 0 {
            out.push("edge_cores must be >= 1".to_string());
        }
        if !(self.bandwidth > 0.0) {
            out.push("bandwidth must be > 0".to_string());
        }
        if !(self.cloud_core_clock > 0.0) {
            out.push("cloud_core_clock must be > 0".to_string());
        }
        if !(self.kappa > 0.0) {
            out.push("kappa must be > 0".to_string());
        }
        if !(self.rho > 0.0) {
            out.push("rho must be > 0".to_string());
        }
        if !(self.penalty_weight >= 0.0) {
            out.push("penalty_weight must be >= 0".to_string());
        }
        if !(self.reward_exponent >= 1.0) {
            out.push(format!("ν < 1 (reward_exponent = {})", self.reward_exponent));
        }
        if self.episode_length == 0 {
            out.push("episode_length must be >= 1".to_string());
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            out.push(format!("discount out of (0,1) (got {})", self.discount));
        }
        for (i, app) in self.apps.iter().enumerate() {
            app.violations(i, &mut out);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }
}

fn reference_apps() -> Vec<AppProfile> {
    vec![
        AppProfile::from_bounds("speech", 10435.0, 5.0, 40.0 * BITS_PER_KB, 300.0 * BITS_PER_KB),
        AppProfile::from_bounds("nlp", 25346.0, 8.0, 4.0 * BITS_PER_KB, 100.0 * BITS_PER_KB),
        AppProfile::from_bounds("face", 45043.0, 4.0, 10.0 * BITS_PER_KB, 100.0 * BITS_PER_KB),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeasibilityReport {
    /// `λ·μ·w` per application, cycles per slot.
    pub per_app_cycle_rate: Vec<f64>,
    pub total_cycle_rate: f64,
    /// Edge clock plus the cloud's aggregate core clock.
    pub total_capacity: f64,
    /// `Σ λ·μ`, bits per slot.
    pub required_bandwidth: f64,
    pub bandwidth: f64,
    pub feasible: bool,
}

/// Closed-form load check: the system is feasible when both the mean cycle demand
/// and the mean bit demand sit strictly below the available capacity.
pub fn feasibility_check(cfg: &SystemConfig) -> FeasibilityReport {
    let per_app_cycle_rate: Vec<f64> = cfg.apps.iter().map(AppProfile::mean_cycles_per_slot).collect();
    let total_cycle_rate = per_app_cycle_rate.iter().sum();
    let total_capacity = cfg.edge_clock + cfg.cloud_cores as f64 * cfg.cloud_core_clock;
    let required_bandwidth = cfg.apps.iter().map(AppProfile::mean_bits_per_slot).sum();
    let feasible = total_cycle_rate < total_capacity && required_bandwidth < cfg.bandwidth;
    FeasibilityReport {
        per_app_cycle_rate,
        total_cycle_rate,
        total_capacity,
        required_bandwidth,
        bandwidth: cfg.bandwidth,
        feasible,
    }
}
