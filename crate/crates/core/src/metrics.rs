//! Run diagnostics: tracking-error series, consensus residuals, payoff
//! differences, timing benchmarks, and the CSV/JSON export formats.

use std::io::Write;
use std::time::Instant;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{PayoffMatrix, PayoffVector};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("vectors at step {k} have {left} and {right} entries")]
    VectorMismatch { k: usize, left: usize, right: usize },
    #[error("{kind} value at step {k} is {value}, expected finite and nonnegative")]
    BadValue { kind: &'static str, k: usize, value: f64 },
    #[error("total grand-coalition value {0} is not positive; nothing to normalize by")]
    NonPositiveTotalValue(f64),
    #[error("empty series")]
    EmptySeries,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// What a per-step scalar series measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    ShapleyError,
    CoreError,
    ConsensusResidual,
    CoreViolation,
    PayoffDiff,
}

/// A validated per-step series: every value finite and nonnegative.
#[derive(Debug, Clone)]
pub struct ErrorSeries {
    pub kind: SeriesKind,
    pub values: Vec<f64>,
}

impl ErrorSeries {
    pub fn new(kind: SeriesKind, values: Vec<f64>) -> Result<Self, MetricsError> {
        for (k, &v) in values.iter().enumerate() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(MetricsError::BadValue {
                    kind: "series",
                    k,
                    value: v,
                });
            }
        }
        Ok(ErrorSeries { kind, values })
    }

    pub fn terminal(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// Running mean of normalized tracking errors, plus the steps that had to be
/// skipped because the grand-coalition value was not positive.
#[derive(Debug, Clone)]
pub struct MeanCumulativeError {
    /// `values[k]` is the mean of `||x^j - ref^j|| / v^j(I)` over the
    /// non-skipped steps `j <= k`.
    pub values: Vec<f64>,
    pub skipped: Vec<usize>,
}

impl MeanCumulativeError {
    pub fn terminal(&self) -> Option<f64> {
        self.values.last().copied()
    }
}

/// Mean cumulative tracking error of a payoff trajectory against a
/// reference trajectory, each step normalized by that step's
/// grand-coalition value. Steps with `v(I) <= 0` are skipped and reported.
pub fn mean_cumulative_error(
    xs: &[PayoffVector],
    refs: &[PayoffVector],
    grand_values: &[f64],
) -> Result<MeanCumulativeError, MetricsError> {
    if xs.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            left: xs.len(),
            right: refs.len(),
        });
    }
    if xs.len() != grand_values.len() {
        return Err(MetricsError::LengthMismatch {
            left: xs.len(),
            right: grand_values.len(),
        });
    }
    let mut values = Vec::with_capacity(xs.len());
    let mut skipped = Vec::new();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (k, ((x, r), &v)) in xs.iter().zip(refs).zip(grand_values).enumerate() {
        if x.len() != r.len() {
            return Err(MetricsError::VectorMismatch {
                k,
                left: x.len(),
                right: r.len(),
            });
        }
        if !v.is_finite() {
            return Err(MetricsError::BadValue {
                kind: "grand value",
                k,
                value: v,
            });
        }
        if v > 0.0 {
            let err = (x - r).iter().map(|d| d * d).sum::<f64>().sqrt() / v;
            sum += err;
            count += 1;
        } else {
            skipped.push(k);
        }
        values.push(if count > 0 { sum / count as f64 } else { 0.0 });
    }
    Ok(MeanCumulativeError { values, skipped })
}

/// Per-agent relative difference between total payoffs received along two
/// trajectories: `|sum_k x_i^k - sum_k ref_i^k| / sum_k v^k(I)`.
pub fn payoff_difference(
    xs: &[PayoffVector],
    refs: &[PayoffVector],
    grand_values: &[f64],
) -> Result<PayoffVector, MetricsError> {
    if xs.len() != refs.len() {
        return Err(MetricsError::LengthMismatch {
            left: xs.len(),
            right: refs.len(),
        });
    }
    if xs.len() != grand_values.len() {
        return Err(MetricsError::LengthMismatch {
            left: xs.len(),
            right: grand_values.len(),
        });
    }
    if xs.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let n = xs[0].len();
    let mut diff = Array1::zeros(n);
    for (k, (x, r)) in xs.iter().zip(refs).enumerate() {
        if x.len() != n || r.len() != n {
            return Err(MetricsError::VectorMismatch {
                k,
                left: x.len(),
                right: r.len(),
            });
        }
        diff += &(x - r);
    }
    let total: f64 = grand_values.iter().sum();
    if !(total > 0.0) {
        return Err(MetricsError::NonPositiveTotalValue(total));
    }
    Ok(diff.mapv(|d| d.abs() / total))
}

/// Largest Euclidean distance between two proposal rows; zero exactly when
/// all agents agree.
pub fn consensus_residual(x: &PayoffMatrix) -> f64 {
    let n = x.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let d: f64 = x
                .row(i)
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(d);
        }
    }
    worst
}

/// Which tracker a benchmark times.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchKind {
    Shapley,
    Core,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub n: usize,
    /// Median wall-clock seconds of one agent's share of a distributed
    /// update (one step divided by the number of agents).
    pub online_step_seconds: f64,
    /// Median wall-clock seconds of the centralized exact solution.
    pub exact_solution_seconds: f64,
}

fn median(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    samples[samples.len() / 2]
}

/// Time one agent's online update against the centralized exact solution
/// over a range of agent counts. `reps` timed repetitions per cell (at
/// least 10 recommended); medians are reported. The games are generated
/// deterministically from `seed`: value-spread games for the Shapley
/// tracker, convex (supermodular) games for the core tracker so the exact
/// core solve is well-posed.
pub fn benchmark_step_cost(
    ns: &[usize],
    kind: BenchKind,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRow>, crate::tracking::TrackError> {
    use crate::game::generate::{convex_game, near_symmetric_game};
    use crate::network::{metropolis_weights, Graph};
    use crate::rng::{derive_seed, seeded};
    use crate::solutions::shapley_exact;
    use crate::tracking::{
        core_reference_point, core_step, shapley_step, InitPolicy, TrackerConfig, TrackerState,
    };

    let reps = reps.max(1);
    let mut rows = Vec::with_capacity(ns.len());
    for (idx, &n) in ns.iter().enumerate() {
        let mut rng = seeded(derive_seed(seed, idx as u64));
        let game = match kind {
            BenchKind::Shapley => near_symmetric_game(n, 0.3, &mut rng)?,
            BenchKind::Core => convex_game(n, &mut rng)?,
        };
        let weights = metropolis_weights(&Graph::complete(n)?);
        let cfg = TrackerConfig {
            alpha: 0.5,
            init: InitPolicy::SelfAllocation,
            ..TrackerConfig::default()
        };
        let x0 = cfg.init.initial_matrix(&game)?;

        let mut online_samples = Vec::with_capacity(reps);
        let mut exact_samples = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut state = TrackerState::new(x0.clone());
            let t = Instant::now();
            match kind {
                BenchKind::Shapley => shapley_step(&mut state, &game, &weights, &cfg)?,
                BenchKind::Core => core_step(&mut state, &game, &weights, &cfg)?,
            }
            online_samples.push(t.elapsed().as_secs_f64() / n as f64);

            let t = Instant::now();
            match kind {
                BenchKind::Shapley => {
                    std::hint::black_box(shapley_exact(&game)?);
                }
                BenchKind::Core => {
                    std::hint::black_box(core_reference_point(&game, &cfg)?);
                }
            }
            exact_samples.push(t.elapsed().as_secs_f64());
        }
        rows.push(BenchRow {
            n,
            online_step_seconds: median(online_samples),
            exact_solution_seconds: median(exact_samples),
        });
    }
    Ok(rows)
}

/// Per-run summary written next to the CSV artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub terminal_mean_cum_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_payoff_diff: Option<f64>,
    pub runtime_seconds: f64,
}

/// Write a proposal-matrix trajectory as long-form CSV with columns
/// `k,agent,component,value`.
pub fn write_trajectory_csv<W: Write>(
    out: W,
    trajectory: &[PayoffMatrix],
) -> Result<(), MetricsError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "agent", "component", "value"])?;
    for (k, x) in trajectory.iter().enumerate() {
        for i in 0..x.nrows() {
            for j in 0..x.ncols() {
                w.write_record([
                    k.to_string(),
                    i.to_string(),
                    j.to_string(),
                    x[[i, j]].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Error CSV of a Shapley run: `k,err_shapley,consensus_residual`.
pub fn write_shapley_error_csv<W: Write>(
    out: W,
    errors: &[f64],
    residuals: &[f64],
) -> Result<(), MetricsError> {
    if errors.len() != residuals.len() {
        return Err(MetricsError::LengthMismatch {
            left: errors.len(),
            right: residuals.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "err_shapley", "consensus_residual"])?;
    for (k, (e, r)) in errors.iter().zip(residuals).enumerate() {
        w.write_record([k.to_string(), e.to_string(), r.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Error CSV of a core run:
/// `k,err_core_dist,consensus_residual,core_violation`.
pub fn write_core_error_csv<W: Write>(
    out: W,
    distances: &[f64],
    residuals: &[f64],
    violations: &[f64],
) -> Result<(), MetricsError> {
    if distances.len() != residuals.len() {
        return Err(MetricsError::LengthMismatch {
            left: distances.len(),
            right: residuals.len(),
        });
    }
    if distances.len() != violations.len() {
        return Err(MetricsError::LengthMismatch {
            left: distances.len(),
            right: violations.len(),
        });
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "err_core_dist", "consensus_residual", "core_violation"])?;
    for (k, ((d, r), v)) in distances.iter().zip(residuals).zip(violations).enumerate() {
        w.write_record([k.to_string(), d.to_string(), r.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
