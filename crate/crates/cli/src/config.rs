//! Run configuration: a JSON file, command-line overrides, and the fully
//! resolved form that lands in `manifest.json`.
//!
//! A config names a scenario and a tracker; every other knob is optional and
//! falls back to a scenario-appropriate default during [`resolve`]. Flag
//! overrides are applied as part of resolution, so the manifest always echoes
//! what actually ran. [`validate`] returns all problems at once instead of
//! stopping at the first.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use coalition_core::metrics::BenchKind;
use coalition_core::solutions::MAX_EXACT_AGENTS;
use coalition_core::tracking::{InitPolicy, StepSchedule, TrackerConfig};

/// Clearing lead times the electricity scenario supports.
pub const LEAD_TIMES_MINUTES: [usize; 3] = [2, 5, 10];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Collaborative forecasting market (synthetic walk or CSV input).
    Forecast,
    /// Local electricity double auction (synthetic walks or CSV input).
    Electricity,
    /// Near-symmetric random game drifting over time.
    Synthetic,
    /// A single game from a JSON file, repeated for the whole horizon.
    Custom,
}

impl Scenario {
    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Forecast => "forecast",
            Scenario::Electricity => "electricity",
            Scenario::Synthetic => "synthetic",
            Scenario::Custom => "custom",
        }
    }

    fn default_n_agents(self) -> Option<usize> {
        match self {
            Scenario::Forecast => Some(6),
            Scenario::Electricity => Some(10),
            Scenario::Synthetic => Some(5),
            Scenario::Custom => None,
        }
    }

    fn default_horizon(self) -> usize {
        match self {
            Scenario::Forecast => 1150,
            Scenario::Electricity => 100,
            Scenario::Synthetic => 200,
            Scenario::Custom => 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tracker {
    Shapley,
    Core,
}

impl Tracker {
    pub fn as_str(self) -> &'static str {
        match self {
            Tracker::Shapley => "shapley",
            Tracker::Core => "core",
        }
    }
}

/// Communication graph shape. `"complete"`, `"path"`, or
/// `{"random": {"edge_prob": p}}` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Complete,
    Path,
    Random { edge_prob: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default = "default_topology")]
    pub topology: Topology,
    /// Redraw the random topology every step instead of fixing one draw.
    #[serde(default)]
    pub per_step: bool,
    /// Seed for graph sampling; defaults to the run seed plus one.
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_topology() -> Topology {
    Topology::Complete
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            topology: default_topology(),
            per_step: false,
            seed: None,
        }
    }
}

/// Step-size rule. `"fixed"` or `{"diminishing": {"alpha0": a}}` in JSON.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSpec {
    Fixed,
    Diminishing { alpha0: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    SelfAllocation,
    Zeros,
}

/// A run request as written by the user. Unknown fields are rejected so a
/// typo cannot silently fall back to a default.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: Scenario,
    pub tracker: Tracker,
    #[serde(default)]
    pub n_agents: Option<usize>,
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub gamma_reg: Option<f64>,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub init: Option<InitSpec>,
    #[serde(default)]
    pub iterations_per_sample: Option<usize>,
    #[serde(default)]
    pub projection_tol: Option<f64>,
    #[serde(default)]
    pub projection_max_cycles: Option<usize>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub max_iterations: Option<usize>,
    #[serde(default)]
    pub network: Option<NetworkSpec>,
    /// Minutes between electricity clearings; synthetic electricity only.
    #[serde(default)]
    pub lead_time_minutes: Option<usize>,
    /// Slowness of the synthetic forecast target walk.
    #[serde(default)]
    pub smoothness: Option<f64>,
    /// Forecaster bias and jitter scale for the synthetic forecast market.
    #[serde(default)]
    pub noise: Option<f64>,
    /// Per-step value drift bound of the synthetic game scenario.
    #[serde(default)]
    pub drift: Option<f64>,
    /// Resample ingested CSV input onto this uniform grid (minutes).
    #[serde(default)]
    pub resample_minutes: Option<f64>,
    /// CSV input for market scenarios; game JSON for the custom scenario.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output_root: Option<PathBuf>,
}

/// Command-line overrides; a set flag beats the config file.
#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub horizon: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ResolvedNetwork {
    pub topology: Topology,
    pub per_step: bool,
    pub seed: u64,
}

/// Every knob pinned down; serialized verbatim as `manifest.json`.
///
/// `n_agents` and `horizon` stay `None` for input-driven scenarios until the
/// data has been read; the runner patches in the actual values before the
/// manifest is written.
#[derive(Debug, Clone, Serialize)]
pub struct ResolvedConfig {
    pub scenario: Scenario,
    pub tracker: Tracker,
    pub n_agents: Option<usize>,
    pub horizon: Option<usize>,
    pub seed: u64,
    pub alpha: f64,
    pub gamma_reg: f64,
    pub schedule: ScheduleSpec,
    pub init: InitSpec,
    pub iterations_per_sample: usize,
    pub projection_tol: f64,
    pub projection_max_cycles: Option<usize>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub network: ResolvedNetwork,
    pub lead_time_minutes: Option<usize>,
    pub smoothness: Option<f64>,
    pub noise: Option<f64>,
    pub drift: Option<f64>,
    pub resample_minutes: Option<f64>,
    pub input: Option<PathBuf>,
    pub output_root: PathBuf,
}

/// Fill in every omitted field. Scenario-parameter defaults are only applied
/// where the parameter is meaningful, so a stray `smoothness` on an
/// electricity run survives to be flagged by [`validate`].
pub fn resolve(raw: &RunConfig, over: &Overrides) -> ResolvedConfig {
    let seed = over.seed.or(raw.seed).unwrap_or(0);
    let generated = raw.input.is_none();
    let network = raw.network.clone().unwrap_or_default();
    ResolvedConfig {
        scenario: raw.scenario,
        tracker: raw.tracker,
        n_agents: raw.n_agents.or_else(|| {
            if generated {
                raw.scenario.default_n_agents()
            } else {
                None
            }
        }),
        // Custom inputs are a single game repeated for `horizon` steps, so
        // the default applies there even though an input file is present.
        horizon: over.horizon.or(raw.horizon).or_else(|| {
            if generated || raw.scenario == Scenario::Custom {
                Some(raw.scenario.default_horizon())
            } else {
                None
            }
        }),
        seed,
        alpha: over.alpha.or(raw.alpha).unwrap_or(0.1),
        gamma_reg: raw.gamma_reg.unwrap_or(0.1),
        schedule: raw.schedule.unwrap_or(ScheduleSpec::Fixed),
        init: raw.init.unwrap_or(InitSpec::SelfAllocation),
        iterations_per_sample: raw.iterations_per_sample.unwrap_or(1),
        projection_tol: raw.projection_tol.unwrap_or(1e-9),
        projection_max_cycles: raw.projection_max_cycles,
        tolerance: raw.tolerance.unwrap_or(1e-6),
        max_iterations: raw.max_iterations.unwrap_or(100_000),
        network: ResolvedNetwork {
            topology: network.topology,
            per_step: network.per_step,
            seed: network.seed.unwrap_or(seed.wrapping_add(1)),
        },
        lead_time_minutes: raw.lead_time_minutes.or_else(|| {
            if raw.scenario == Scenario::Electricity && generated {
                Some(5)
            } else {
                None
            }
        }),
        smoothness: raw.smoothness.or_else(|| {
            if raw.scenario == Scenario::Forecast && generated {
                Some(12.0)
            } else {
                None
            }
        }),
        noise: raw.noise.or_else(|| {
            if raw.scenario == Scenario::Forecast && generated {
                Some(0.05)
            } else {
                None
            }
        }),
        drift: raw.drift.or_else(|| {
            if raw.scenario == Scenario::Synthetic {
                Some(0.01)
            } else {
                None
            }
        }),
        resample_minutes: raw.resample_minutes,
        input: raw.input.clone(),
        output_root: raw
            .output_root
            .clone()
            .unwrap_or_else(|| PathBuf::from("out")),
    }
}

impl ResolvedConfig {
    /// Largest step size the run will ever take.
    fn peak_alpha(&self) -> f64 {
        match self.schedule {
            ScheduleSpec::Fixed => self.alpha,
            ScheduleSpec::Diminishing { alpha0 } => alpha0,
        }
    }

    pub fn tracker_config(&self) -> TrackerConfig {
        TrackerConfig {
            alpha: self.alpha,
            gamma_reg: self.gamma_reg,
            schedule: match self.schedule {
                ScheduleSpec::Fixed => StepSchedule::Fixed,
                ScheduleSpec::Diminishing { alpha0 } => StepSchedule::Diminishing { alpha0 },
            },
            init: match self.init {
                InitSpec::SelfAllocation => InitPolicy::SelfAllocation,
                InitSpec::Zeros => InitPolicy::Zeros,
            },
            iterations_per_sample: self.iterations_per_sample,
            projection_tol: self.projection_tol,
            projection_max_cycles: self.projection_max_cycles,
            tolerance: self.tolerance,
            max_iterations: self.max_iterations,
        }
    }
}

/// All semantic problems with a resolved config, empty when it is runnable.
pub fn validate(cfg: &ResolvedConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut flag = |msg: String| out.push(msg);

    if !(cfg.alpha > 0.0 && cfg.alpha <= 1.0) {
        flag(format!("alpha must be in (0, 1], got {}", cfg.alpha));
    }
    if let ScheduleSpec::Diminishing { alpha0 } = cfg.schedule {
        if !(alpha0 > 0.0 && alpha0 <= 1.0) {
            flag(format!("alpha0 must be in (0, 1], got {alpha0}"));
        }
    }
    if !(cfg.gamma_reg >= 0.0 && cfg.gamma_reg.is_finite()) {
        flag(format!(
            "gamma_reg must be finite and >= 0, got {}",
            cfg.gamma_reg
        ));
    }
    if cfg.tracker == Tracker::Core {
        let a = cfg.peak_alpha();
        if a * (1.0 + cfg.gamma_reg) > 1.0 + 1e-12 {
            flag(format!(
                "core tracking needs alpha * (1 + gamma_reg) <= 1, got {}",
                a * (1.0 + cfg.gamma_reg)
            ));
        }
    }
    if cfg.iterations_per_sample == 0 {
        flag("iterations_per_sample must be at least 1".into());
    }
    if !(cfg.projection_tol > 0.0) {
        flag(format!(
            "projection_tol must be positive, got {}",
            cfg.projection_tol
        ));
    }
    if !(cfg.tolerance > 0.0) {
        flag(format!("tolerance must be positive, got {}", cfg.tolerance));
    }
    if cfg.max_iterations == 0 {
        flag("max_iterations must be at least 1".into());
    }
    if cfg.horizon == Some(0) {
        flag("horizon must be at least 1".into());
    }

    if let Some(n) = cfg.n_agents {
        if n == 0 {
            flag("n_agents must be at least 1".into());
        }
        if cfg.scenario == Scenario::Electricity && n < 2 {
            flag("the electricity market needs at least 2 agents".into());
        }
        if cfg.tracker == Tracker::Shapley && n > MAX_EXACT_AGENTS {
            flag(format!(
                "shapley tracking computes an exact reference every step \
                 and is capped at {MAX_EXACT_AGENTS} agents, got {n}"
            ));
        }
    }

    match cfg.network.topology {
        Topology::Random { edge_prob } => {
            if !(edge_prob > 0.0 && edge_prob <= 1.0) {
                flag(format!("edge_prob must be in (0, 1], got {edge_prob}"));
            }
        }
        _ => {
            if cfg.network.per_step {
                flag("per_step graph redraws need the random topology".into());
            }
        }
    }

    let market_input = matches!(cfg.scenario, Scenario::Forecast | Scenario::Electricity)
        && cfg.input.is_some();
    match cfg.scenario {
        Scenario::Custom => {
            if cfg.input.is_none() {
                flag("the custom scenario needs an input game file".into());
            }
        }
        Scenario::Synthetic => {
            if cfg.input.is_some() {
                flag("the synthetic scenario generates its games; drop input".into());
            }
        }
        _ => {}
    }
    if let Some(lead) = cfg.lead_time_minutes {
        if cfg.scenario != Scenario::Electricity || cfg.input.is_some() {
            flag("lead_time_minutes applies only to the generated electricity scenario".into());
        } else if !LEAD_TIMES_MINUTES.contains(&lead) {
            flag(format!(
                "lead_time_minutes must be one of {LEAD_TIMES_MINUTES:?}, got {lead}"
            ));
        }
    }
    for (name, value) in [("smoothness", cfg.smoothness), ("noise", cfg.noise)] {
        if let Some(v) = value {
            if cfg.scenario != Scenario::Forecast || cfg.input.is_some() {
                flag(format!(
                    "{name} applies only to the generated forecast scenario"
                ));
            } else if !(v.is_finite() && v >= 0.0) || (name == "smoothness" && v == 0.0) {
                flag(format!("{name} must be positive and finite, got {v}"));
            }
        }
    }
    if let Some(d) = cfg.drift {
        if cfg.scenario != Scenario::Synthetic {
            flag("drift applies only to the synthetic scenario".into());
        } else if !(d.is_finite() && d >= 0.0) {
            flag(format!("drift must be finite and >= 0, got {d}"));
        }
    }
    if let Some(r) = cfg.resample_minutes {
        if !market_input {
            flag("resample_minutes applies only to market scenarios with an input file".into());
        } else if !(r > 0.0 && r.is_finite()) {
            flag(format!("resample_minutes must be positive, got {r}"));
        }
    }
    if let Some(path) = &cfg.input {
        if !path.exists() {
            flag(format!("input file {} does not exist", path.display()));
        }
    }
    out
}

pub fn parse_config(text: &str) -> Result<RunConfig, serde_json::Error> {
    serde_json::from_str(text)
}

/// What the `benchmark` subcommand runs.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub ns: Vec<usize>,
    #[serde(default = "default_bench_kind")]
    pub kind: BenchKind,
    #[serde(default = "default_bench_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_bench_kind() -> BenchKind {
    BenchKind::Shapley
}

fn default_bench_reps() -> usize {
    10
}

pub fn validate_bench(cfg: &BenchConfig) -> Vec<String> {
    let mut out = Vec::new();
    if cfg.ns.is_empty() {
        out.push("ns must name at least one agent count".into());
    }
    for &n in &cfg.ns {
        if n == 0 {
            out.push("agent counts must be at least 1".into());
        }
        if cfg.kind == BenchKind::Shapley && n > MAX_EXACT_AGENTS {
            out.push(format!(
                "the exact Shapley baseline is capped at {MAX_EXACT_AGENTS} agents, got {n}"
            ));
        }
    }
    if cfg.reps == 0 {
        out.push("reps must be at least 1".into());
    }
    out
}
