//! Scenario construction, tracker execution, and artifact plumbing.
//!
//! A run turns a [`ResolvedConfig`] into a `DynamicGame`, drives the chosen
//! tracker across it, and writes four files into
//! `<output_root>/<scenario>/<tag>/`: `trajectory.csv` (the proposal
//! matrices), `errors.csv` (per-step error series), `summary.json`
//! (headline numbers), and `manifest.json` (the resolved config, so the run
//! can be reproduced byte for byte from it and the seed alone).

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use coalition_core::game::generate::{drifting_game, near_symmetric_game};
use coalition_core::game::{game_from_json, validate_game};
use coalition_core::markets::{
    forecast_records_to_dynamic, ingest_timeseries, snapshots_to_dynamic,
    synthetic_electricity_snapshots, synthetic_forecast_scenario, IngestResult, IngestSchema,
};
use coalition_core::metrics::{
    mean_cumulative_error, payoff_difference, write_core_error_csv, write_shapley_error_csv,
    write_trajectory_csv, BenchRow, MetricsError, RunSummary,
};
use coalition_core::metrics::benchmark_step_cost;
use coalition_core::network::random_connected_graph;
use coalition_core::solutions::{core_membership, shapley_exact};
use coalition_core::tracking::{core_track, shapley_track};
use coalition_core::{DynamicGame, Graph, InstantaneousGame, NetworkSchedule, PayoffVector};

use crate::config::{
    self, BenchConfig, Overrides, ResolvedConfig, RunConfig, Scenario, Topology, Tracker,
};

/// Relative value spread of the synthetic scenario's base game.
const SYNTHETIC_SPREAD: f64 = 0.3;

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading config file {}", path.display()))?;
    config::parse_config(&text)
        .with_context(|| format!("parsing config file {}", path.display()))
}

pub fn load_bench_config(path: &Path) -> Result<BenchConfig> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading benchmark config {}", path.display()))?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing benchmark config {}", path.display()))
}

/// Parse-then-validate used by the `validate` subcommand: parse failures
/// come back as a single violation instead of an error.
pub fn validate_config_text(text: &str) -> Vec<String> {
    match config::parse_config(text) {
        Err(e) => vec![format!("config does not parse: {e}")],
        Ok(raw) => config::validate(&config::resolve(&raw, &Overrides::default())),
    }
}

/// Load a game JSON file and insist it is structurally complete.
pub fn load_game(path: &Path) -> Result<InstantaneousGame> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading game file {}", path.display()))?;
    let game =
        game_from_json(&text).with_context(|| format!("parsing game file {}", path.display()))?;
    let violations = validate_game(&game);
    if !violations.is_empty() {
        let lines: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        bail!(
            "game file {} is invalid:\n  - {}",
            path.display(),
            lines.join("\n  - ")
        );
    }
    Ok(game)
}

fn required<T: Copy>(value: Option<T>, name: &str) -> Result<T> {
    value.with_context(|| format!("{name} is unresolved; run `validate` on this config"))
}

/// Enforce a configured horizon against the sample count an input file
/// actually provides, shortening the series when asked.
fn apply_horizon<T>(items: &mut Vec<T>, horizon: Option<usize>, path: &Path) -> Result<()> {
    if let Some(h) = horizon {
        if h > items.len() {
            bail!(
                "input file {} provides {} samples but the configured horizon is {}",
                path.display(),
                items.len(),
                h
            );
        }
        items.truncate(h);
    }
    Ok(())
}

/// Build the game sequence a config describes.
pub fn build_dynamic(cfg: &ResolvedConfig) -> Result<DynamicGame> {
    match cfg.scenario {
        Scenario::Forecast => match &cfg.input {
            Some(path) => {
                let schema = IngestSchema::Forecast {
                    resolution_minutes: cfg.resample_minutes,
                };
                let result = ingest_timeseries(path, &schema)
                    .with_context(|| format!("reading input file {}", path.display()))?;
                let mut records = match result {
                    IngestResult::Forecast(r) => r,
                    IngestResult::Electricity(_) => unreachable!("forecast schema"),
                };
                apply_horizon(&mut records, cfg.horizon, path)?;
                Ok(forecast_records_to_dynamic(&records)?)
            }
            None => Ok(synthetic_forecast_scenario(
                required(cfg.n_agents, "n_agents")?,
                required(cfg.horizon, "horizon")?,
                required(cfg.smoothness, "smoothness")?,
                required(cfg.noise, "noise")?,
                cfg.seed,
            )?),
        },
        Scenario::Electricity => match &cfg.input {
            Some(path) => {
                let schema = IngestSchema::Electricity {
                    resolution_minutes: cfg.resample_minutes,
                };
                let result = ingest_timeseries(path, &schema)
                    .with_context(|| format!("reading input file {}", path.display()))?;
                let mut snaps = match result {
                    IngestResult::Electricity(s) => s,
                    IngestResult::Forecast(_) => unreachable!("electricity schema"),
                };
                apply_horizon(&mut snaps, cfg.horizon, path)?;
                Ok(snapshots_to_dynamic(&snaps)?)
            }
            None => {
                let snaps = synthetic_electricity_snapshots(
                    required(cfg.n_agents, "n_agents")?,
                    required(cfg.horizon, "horizon")?,
                    required(cfg.lead_time_minutes, "lead_time_minutes")?,
                    cfg.seed,
                )?;
                Ok(snapshots_to_dynamic(&snaps)?)
            }
        },
        Scenario::Synthetic => {
            let n = required(cfg.n_agents, "n_agents")?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let base = near_symmetric_game(n, SYNTHETIC_SPREAD, &mut rng)?;
            Ok(drifting_game(
                &base,
                required(cfg.horizon, "horizon")?,
                required(cfg.drift, "drift")?,
                cfg.seed.wrapping_add(1),
            )?)
        }
        Scenario::Custom => {
            let path = cfg
                .input
                .as_ref()
                .context("the custom scenario needs an input game file")?;
            let game = load_game(path)?;
            Ok(DynamicGame::from_static(
                game,
                required(cfg.horizon, "horizon")?,
            )?)
        }
    }
}

/// Communication schedule for `n` agents under the configured topology.
pub fn build_schedule(cfg: &ResolvedConfig, n: usize) -> Result<NetworkSchedule> {
    match cfg.network.topology {
        Topology::Complete => Ok(NetworkSchedule::Static(Graph::complete(n)?)),
        Topology::Path => Ok(NetworkSchedule::Static(Graph::path(n)?)),
        Topology::Random { edge_prob } => {
            if cfg.network.per_step {
                Ok(NetworkSchedule::RandomPerStep {
                    n,
                    edge_prob,
                    master_seed: cfg.network.seed,
                })
            } else {
                Ok(NetworkSchedule::Static(random_connected_graph(
                    n,
                    edge_prob,
                    cfg.network.seed,
                )?))
            }
        }
    }
}

fn fnv1a(text: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

pub struct RunArtifacts {
    pub dir: PathBuf,
    pub summary: RunSummary,
}

/// Execute a resolved run end to end and write its artifact directory.
/// `tag` names the output subdirectory; without one, a hash of the manifest
/// is used so distinct configurations land in distinct directories.
pub fn execute_run(mut resolved: ResolvedConfig, tag: Option<&str>) -> Result<RunArtifacts> {
    let violations = config::validate(&resolved);
    if !violations.is_empty() {
        bail!(
            "configuration problems:\n  - {}",
            violations.join("\n  - ")
        );
    }
    let started = Instant::now();

    let dynamic = build_dynamic(&resolved)?;
    if let Some(n) = resolved.n_agents {
        if n != dynamic.n_agents() {
            bail!(
                "input provides {} agents but the config says {n}",
                dynamic.n_agents()
            );
        }
    }
    resolved.n_agents = Some(dynamic.n_agents());
    resolved.horizon = Some(dynamic.horizon());
    let schedule = build_schedule(&resolved, dynamic.n_agents())?;
    let tracker_cfg = resolved.tracker_config();
    let grand: Vec<f64> = dynamic.iter().map(InstantaneousGame::grand_value).collect();

    let mut trajectory_bytes = Vec::new();
    let mut errors_bytes = Vec::new();
    let (averaged, references): (Vec<PayoffVector>, Vec<PayoffVector>) = match resolved.tracker {
        Tracker::Shapley => {
            let run = shapley_track(&dynamic, &schedule, &tracker_cfg)
                .context("shapley tracking failed")?;
            write_trajectory_csv(&mut trajectory_bytes, &run.trajectory)?;
            write_shapley_error_csv(
                &mut errors_bytes,
                &run.tracking_errors,
                &run.consensus_residuals,
            )?;
            (run.averaged_proposals(), run.references)
        }
        Tracker::Core => {
            let run =
                core_track(&dynamic, &schedule, &tracker_cfg).context("core tracking failed")?;
            write_trajectory_csv(&mut trajectory_bytes, &run.trajectory)?;
            write_core_error_csv(
                &mut errors_bytes,
                &run.reference_distances,
                &run.consensus_residuals,
                &run.core_violations,
            )?;
            (run.averaged, run.references)
        }
    };

    let mce = mean_cumulative_error(&averaged, &references, &grand)?;
    let max_payoff_diff = match payoff_difference(&averaged, &references, &grand) {
        Ok(diff) => diff.iter().copied().reduce(f64::max),
        Err(MetricsError::NonPositiveTotalValue(_)) => None,
        Err(e) => return Err(e.into()),
    };

    if let Some(root) = std::env::var_os("COALITIOND_OUT") {
        resolved.output_root = PathBuf::from(root);
    }
    let summary = RunSummary {
        scenario: resolved.scenario.as_str().to_string(),
        alpha: resolved.alpha,
        terminal_mean_cum_error: mce.terminal(),
        max_payoff_diff,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };

    let manifest = serde_json::to_string_pretty(&resolved)?;
    let tag = match tag {
        Some(t) => t.to_string(),
        None => format!("{:016x}", fnv1a(&manifest)),
    };
    let dir = resolved
        .output_root
        .join(resolved.scenario.as_str())
        .join(&tag);
    fs::create_dir_all(&dir)
        .with_context(|| format!("creating output directory {}", dir.display()))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))
    };
    write("trajectory.csv", &trajectory_bytes)?;
    write("errors.csv", &errors_bytes)?;
    write(
        "summary.json",
        (serde_json::to_string_pretty(&summary)? + "\n").as_bytes(),
    )?;
    write("manifest.json", (manifest + "\n").as_bytes())?;
    Ok(RunArtifacts { dir, summary })
}

/// Shapley value of a game, formatted to four decimals per agent.
pub fn shapley_exact_line(game: &InstantaneousGame) -> Result<String> {
    let phi = shapley_exact(game)?;
    let parts: Vec<String> = phi.iter().map(|v| format!("{v:.4}")).collect();
    Ok(format!("[{}]", parts.join(", ")))
}

/// Flat numeric CSV (one allocation, any row/column shape).
pub fn read_allocation_csv(path: &Path) -> Result<PayoffVector> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading allocation file {}", path.display()))?;
    let mut values = Vec::new();
    for (row, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().with_context(|| {
                format!(
                    "{}: row {} field {} is not a number: {:?}",
                    path.display(),
                    row + 1,
                    col + 1,
                    field.trim()
                )
            })?;
            values.push(v);
        }
    }
    if values.is_empty() {
        bail!("allocation file {} holds no numbers", path.display());
    }
    Ok(PayoffVector::from(values))
}

#[derive(Debug, Serialize)]
pub struct CoreCheckOutput {
    pub in_core: bool,
    pub efficiency_gap: f64,
    pub worst_coalition: String,
    pub worst_violation: f64,
}

pub fn core_check(
    game: &InstantaneousGame,
    x: &PayoffVector,
    tol: f64,
) -> Result<CoreCheckOutput> {
    let check = core_membership(game, x, tol)?;
    Ok(CoreCheckOutput {
        in_core: check.in_core,
        efficiency_gap: check.efficiency_gap,
        worst_coalition: check.worst_coalition.to_string(),
        worst_violation: check.worst_violation,
    })
}

pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    let violations = config::validate_bench(cfg);
    if !violations.is_empty() {
        bail!(
            "benchmark config problems:\n  - {}",
            violations.join("\n  - ")
        );
    }
    Ok(benchmark_step_cost(&cfg.ns, cfg.kind, cfg.reps, cfg.seed)?)
}
