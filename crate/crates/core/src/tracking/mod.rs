//! Distributed online payoff trackers.
//!
//! At every time step `k` each agent holds a proposal row `x_i` of a payoff
//! matrix, mixes it with its neighbors' rows through doubly stochastic
//! weights, and pulls the mix toward its own view of the current game:
//!
//! * Shapley tracking: `x^{k+1} = (1 - a) W^k x^k + a Mhat^k`, where row `i`
//!   of `Mhat^k` is agent `i`'s own-ordering marginal vector. With a fixed
//!   step the iterate settles in an `O(a)` neighborhood of the consensus on
//!   the Shapley value; with diminishing steps on a static game it converges
//!   exactly.
//! * Core tracking: each agent applies a regularized projection of its mixed
//!   row onto its bounding set,
//!   `x_i^{k+1} = (1 - a - a g) xhat_i + a proj(xhat_i) + a g x_i^{k-1}`,
//!   whose common fixed points are consensus allocations in the core.
//!
//! Both update rules are also available step by step for custom loops, and
//! [`theoretical_bound`] evaluates the geometric tracking-error envelope
//! that a contraction factor sequence and drift bound imply.

mod projection;
pub mod qp;

pub use projection::{
    default_projection_cycles, halfspace_project, project_bounding_set, BoundingSet,
};
pub use qp::{project_onto_core, project_onto_polyhedron};

use ndarray::{linalg::general_mat_mul, Array2, ArrayView1};
use thiserror::Error;

use crate::game::{DynamicGame, GameError, InstantaneousGame, PayoffMatrix, PayoffVector};
use crate::metrics::consensus_residual;
use crate::network::{
    consensus_apply, metropolis_weights, Graph, NetworkError, NetworkSchedule, WeightMatrix,
};
use crate::solutions::{core_membership, marginal_matrix, shapley_exact, SolveError};

#[derive(Debug, Error)]
pub enum TrackError {
    #[error("invalid tracker configuration: {0}")]
    InvalidConfig(String),
    #[error("empty coalition has no half-space constraint")]
    EmptyHalfspace,
    #[error("half-space member {agent} is out of range for a vector of length {len}")]
    HalfspaceOutOfRange { agent: usize, len: usize },
    #[error("payoff vector has {got} entries for {n} agents")]
    BadVectorLength { n: usize, got: usize },
    #[error("payoff matrix is {rows}x{cols}, expected {n}x{n}")]
    BadMatrixShape { n: usize, rows: usize, cols: usize },
    #[error(
        "projection stalled after {cycles} cycles \
         (sweep displacement {displacement:.3e}, constraint residual {residual:.3e})"
    )]
    ProjectionStalled {
        cycles: usize,
        displacement: f64,
        residual: f64,
        /// Best iterate found, for diagnosis.
        best: Vec<f64>,
    },
    #[error(
        "no consensus core allocation after {iterations} iterations \
         (consensus residual {residual:.3e}, core violation {violation:.3e}); \
         the core may be empty or the tolerance too tight"
    )]
    NoConvergence {
        iterations: usize,
        residual: f64,
        violation: f64,
    },
    #[error("still {residual:.3e} from the Shapley consensus after {iterations} iterations")]
    ShapleyNoConvergence { iterations: usize, residual: f64 },
    #[error("no payoff meets every coalition demand: best iterate is short by {violation:.3e}")]
    InfeasiblePolyhedron { violation: f64 },
    #[error("projection did not settle within {pivots} pivots (remaining violation {violation:.3e})")]
    PivotLimit { pivots: usize, violation: f64 },
    #[error("at sample {k}")]
    Sample {
        k: usize,
        #[source]
        source: Box<TrackError>,
    },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

/// Step-size rule: constant `alpha`, or `alpha0 / (k + 1)` which satisfies
/// the diminishing-step conditions for exact static convergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Fixed,
    Diminishing { alpha0: f64 },
}

/// How the proposal matrix starts.
#[derive(Debug, Clone)]
pub enum InitPolicy {
    /// Every agent allocates the whole grand value to itself: `v(I) * I`.
    SelfAllocation,
    Zeros,
    Given(PayoffMatrix),
}

impl InitPolicy {
    pub fn initial_matrix(&self, game: &InstantaneousGame) -> Result<PayoffMatrix, TrackError> {
        let n = game.n_agents();
        match self {
            InitPolicy::SelfAllocation => Ok(Array2::eye(n) * game.grand_value()),
            InitPolicy::Zeros => Ok(Array2::zeros((n, n))),
            InitPolicy::Given(m) => {
                if m.nrows() != n || m.ncols() != n {
                    return Err(TrackError::BadMatrixShape {
                        n,
                        rows: m.nrows(),
                        cols: m.ncols(),
                    });
                }
                Ok(m.clone())
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    /// Fixed step size in `(0, 1]`.
    pub alpha: f64,
    /// Weight of the pull toward the previous own proposal in the core step.
    pub gamma_reg: f64,
    pub schedule: StepSchedule,
    pub init: InitPolicy,
    /// Update iterations run per game sample.
    pub iterations_per_sample: usize,
    pub projection_tol: f64,
    /// `None` uses [`default_projection_cycles`] for the game at hand.
    pub projection_max_cycles: Option<usize>,
    /// Convergence tolerance for runs that iterate a single game to a fixed
    /// point (static solves and reference points).
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            alpha: 0.1,
            gamma_reg: 0.1,
            schedule: StepSchedule::Fixed,
            init: InitPolicy::SelfAllocation,
            iterations_per_sample: 1,
            projection_tol: 1e-9,
            projection_max_cycles: None,
            tolerance: 1e-6,
            max_iterations: 100_000,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<(), TrackError> {
        let bad = |msg: String| Err(TrackError::InvalidConfig(msg));
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return bad(format!("alpha must be in (0, 1], got {}", self.alpha));
        }
        if let StepSchedule::Diminishing { alpha0 } = self.schedule {
            if !(alpha0 > 0.0 && alpha0 <= 1.0) {
                return bad(format!("alpha0 must be in (0, 1], got {alpha0}"));
            }
        }
        if !(self.gamma_reg >= 0.0 && self.gamma_reg.is_finite()) {
            return bad(format!("gamma_reg must be finite and >= 0, got {}", self.gamma_reg));
        }
        if self.iterations_per_sample == 0 {
            return bad("iterations_per_sample must be at least 1".into());
        }
        if !(self.projection_tol > 0.0) {
            return bad(format!(
                "projection_tol must be positive, got {}",
                self.projection_tol
            ));
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        Ok(())
    }

    /// Step size at iteration `k`.
    pub fn alpha_at(&self, k: usize) -> f64 {
        match self.schedule {
            StepSchedule::Fixed => self.alpha,
            StepSchedule::Diminishing { alpha0 } => alpha0 / (k + 1) as f64,
        }
    }

    /// The core step mixes with coefficients `1 - a(1 + g), a, a*g`, all of
    /// which must stay nonnegative.
    fn check_core_stability(&self, alpha: f64) -> Result<(), TrackError> {
        if alpha * (1.0 + self.gamma_reg) > 1.0 + 1e-12 {
            return Err(TrackError::InvalidConfig(format!(
                "alpha * (1 + gamma_reg) = {} exceeds 1; the core step would be unstable",
                alpha * (1.0 + self.gamma_reg)
            )));
        }
        Ok(())
    }
}

/// Iterate of a tracker: the proposal matrix, the previous one (the core
/// step looks one step back; initially `x_prev = x`), and the step counter.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub k: usize,
    pub x: PayoffMatrix,
    pub x_prev: PayoffMatrix,
}

impl TrackerState {
    pub fn new(x0: PayoffMatrix) -> Self {
        TrackerState {
            k: 0,
            x_prev: x0.clone(),
            x: x0,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.x.nrows()
    }

    /// Mean of the proposal rows: the payoff actually distributed.
    pub fn averaged_proposal(&self) -> PayoffVector {
        self.x.sum_axis(ndarray::Axis(0)) / self.x.nrows() as f64
    }
}

fn at_sample<T>(k: usize, r: Result<T, TrackError>) -> Result<T, TrackError> {
    r.map_err(|e| TrackError::Sample {
        k,
        source: Box::new(e),
    })
}

/// Euclidean distance between a proposal matrix and the matrix with every
/// row equal to `row` (proposals stacked as one long vector).
pub fn stacked_distance(x: &PayoffMatrix, row: &PayoffVector) -> f64 {
    let mut sum = 0.0;
    for r in x.rows() {
        for (a, b) in r.iter().zip(row.iter()) {
            sum += (a - b) * (a - b);
        }
    }
    sum.sqrt()
}

fn check_shapes(
    state: &TrackerState,
    game: &InstantaneousGame,
    weights: &WeightMatrix,
) -> Result<(), TrackError> {
    let n = game.n_agents();
    if state.x.nrows() != n || state.x.ncols() != n {
        return Err(TrackError::BadMatrixShape {
            n,
            rows: state.x.nrows(),
            cols: state.x.ncols(),
        });
    }
    if weights.n() != n {
        return Err(NetworkError::DimensionMismatch {
            w: weights.n(),
            rows: n,
        }
        .into());
    }
    Ok(())
}

/// One Shapley tracking update on the current game and graph.
pub fn shapley_step(
    state: &mut TrackerState,
    game: &InstantaneousGame,
    weights: &WeightMatrix,
    cfg: &TrackerConfig,
) -> Result<(), TrackError> {
    cfg.validate()?;
    check_shapes(state, game, weights)?;
    let alpha = cfg.alpha_at(state.k);
    let mixed = consensus_apply(weights, &state.x)?;
    let mhat = marginal_matrix(game)?;
    let next = mixed * (1.0 - alpha) + mhat * alpha;
    state.x_prev = std::mem::replace(&mut state.x, next);
    state.k += 1;
    Ok(())
}

/// Trace of a Shapley tracking run, one entry per game sample.
#[derive(Debug, Clone)]
pub struct ShapleyRun {
    /// Proposal matrix after processing each sample.
    pub trajectory: Vec<PayoffMatrix>,
    /// Exact Shapley value of each sample.
    pub references: Vec<PayoffVector>,
    /// `||x^k - Phi^k||` with the pre-update state, matching the pairing in
    /// the tracking-error bound (`Phi^k` stacks the Shapley value per row).
    pub tracking_errors: Vec<f64>,
    pub consensus_residuals: Vec<f64>,
}

impl ShapleyRun {
    /// Per-sample distributed payoff: the mean proposal row.
    pub fn averaged_proposals(&self) -> Vec<PayoffVector> {
        self.trajectory
            .iter()
            .map(|x| x.sum_axis(ndarray::Axis(0)) / x.nrows() as f64)
            .collect()
    }
}

/// Run the Shapley tracker across a dynamic game.
pub fn shapley_track(
    dynamic: &DynamicGame,
    schedule: &NetworkSchedule,
    cfg: &TrackerConfig,
) -> Result<ShapleyRun, TrackError> {
    cfg.validate()?;
    let horizon = dynamic.horizon();
    let mut state = TrackerState::new(cfg.init.initial_matrix(dynamic.game(0))?);
    let mut run = ShapleyRun {
        trajectory: Vec::with_capacity(horizon),
        references: Vec::with_capacity(horizon),
        tracking_errors: Vec::with_capacity(horizon),
        consensus_residuals: Vec::with_capacity(horizon),
    };
    for k in 0..horizon {
        let game = dynamic.game(k);
        let weights = at_sample(k, schedule.weights_at(k).map_err(TrackError::from))?;
        let phi = at_sample(k, shapley_exact(game).map_err(TrackError::from))?;
        run.tracking_errors.push(stacked_distance(&state.x, &phi));
        for _ in 0..cfg.iterations_per_sample {
            at_sample(k, shapley_step(&mut state, game, &weights, cfg))?;
        }
        run.consensus_residuals.push(consensus_residual(&state.x));
        run.trajectory.push(state.x.clone());
        run.references.push(phi);
    }
    Ok(run)
}

/// Result of iterating a single game to convergence.
#[derive(Debug, Clone)]
pub struct StaticRun {
    pub x: PayoffMatrix,
    pub iterations: usize,
}

/// Iterate the Shapley tracker on one fixed game with diminishing steps
/// until the stacked distance to the Shapley consensus is within
/// `cfg.tolerance`. Requires a diminishing schedule; a fixed step only
/// reaches an `O(alpha)` neighborhood.
pub fn shapley_static(
    game: &InstantaneousGame,
    schedule: &NetworkSchedule,
    cfg: &TrackerConfig,
) -> Result<StaticRun, TrackError> {
    cfg.validate()?;
    let alpha0 = match cfg.schedule {
        StepSchedule::Diminishing { alpha0 } => alpha0,
        StepSchedule::Fixed => {
            return Err(TrackError::InvalidConfig(
                "shapley_static needs a diminishing step schedule".into(),
            ))
        }
    };
    let n = game.n_agents();
    let phi = shapley_exact(game)?;
    let mhat = marginal_matrix(game)?;
    let static_weights = match schedule {
        NetworkSchedule::Static(g) => Some(metropolis_weights(g)),
        _ => None,
    };
    let mut x = cfg.init.initial_matrix(game)?;
    if x.nrows() != n {
        return Err(TrackError::BadMatrixShape {
            n,
            rows: x.nrows(),
            cols: x.ncols(),
        });
    }
    let mut mixed = Array2::zeros((n, n));
    let mut residual = stacked_distance(&x, &phi);
    for k in 0..cfg.max_iterations {
        if residual <= cfg.tolerance {
            return Ok(StaticRun { x, iterations: k });
        }
        let alpha = alpha0 / (k + 1) as f64;
        match &static_weights {
            Some(w) => general_mat_mul(1.0, w.matrix(), &x.clone(), 0.0, &mut mixed),
            None => {
                let w = schedule.weights_at(k)?;
                general_mat_mul(1.0, w.matrix(), &x.clone(), 0.0, &mut mixed);
            }
        }
        ndarray::Zip::from(&mut x)
            .and(&mixed)
            .and(&mhat)
            .for_each(|xe, &me, &he| *xe = (1.0 - alpha) * me + alpha * he);
        residual = stacked_distance(&x, &phi);
    }
    Err(TrackError::ShapleyNoConvergence {
        iterations: cfg.max_iterations,
        residual,
    })
}

/// Per-agent update operator for the generalized core protocol
/// `x^{k+1} = T^k(W^k x^k)`: given agent `i`'s mixed row and its previous
/// proposal, produce its next proposal. Fixed points of each `T_i` must be
/// the agent's bounding set for tracking to make sense.
pub trait AllocationOperator {
    fn apply(
        &self,
        agent: usize,
        game: &InstantaneousGame,
        mixed: ArrayView1<f64>,
        prev: ArrayView1<f64>,
    ) -> Result<PayoffVector, TrackError>;
}

/// The default core operator: regularized projection onto the bounding set.
#[derive(Debug, Clone)]
pub struct RegularizedProjection {
    pub alpha: f64,
    pub gamma_reg: f64,
    pub projection_tol: f64,
    pub projection_max_cycles: Option<usize>,
}

impl RegularizedProjection {
    pub fn from_config(cfg: &TrackerConfig, alpha: f64) -> Self {
        RegularizedProjection {
            alpha,
            gamma_reg: cfg.gamma_reg,
            projection_tol: cfg.projection_tol,
            projection_max_cycles: cfg.projection_max_cycles,
        }
    }
}

impl AllocationOperator for RegularizedProjection {
    fn apply(
        &self,
        agent: usize,
        game: &InstantaneousGame,
        mixed: ArrayView1<f64>,
        prev: ArrayView1<f64>,
    ) -> Result<PayoffVector, TrackError> {
        let xhat = mixed.to_owned();
        let projected = project_bounding_set(
            &xhat,
            game,
            agent,
            self.projection_tol,
            self.projection_max_cycles,
        )?;
        let a = self.alpha;
        let g = self.gamma_reg;
        Ok(xhat * (1.0 - a - a * g) + projected * a + &(prev.to_owned() * (a * g)))
    }
}

/// Plain projection onto the bounding set; its fixed points are exactly the
/// feasible allocations of the owning agent.
#[derive(Debug, Clone)]
pub struct ExactProjection {
    pub projection_tol: f64,
    pub projection_max_cycles: Option<usize>,
}

impl AllocationOperator for ExactProjection {
    fn apply(
        &self,
        agent: usize,
        game: &InstantaneousGame,
        mixed: ArrayView1<f64>,
        _prev: ArrayView1<f64>,
    ) -> Result<PayoffVector, TrackError> {
        project_bounding_set(
            &mixed.to_owned(),
            game,
            agent,
            self.projection_tol,
            self.projection_max_cycles,
        )
    }
}

/// One step of the generalized protocol with a custom per-agent operator.
pub fn core_step_general<T: AllocationOperator + ?Sized>(
    state: &mut TrackerState,
    game: &InstantaneousGame,
    weights: &WeightMatrix,
    operator: &T,
) -> Result<(), TrackError> {
    check_shapes(state, game, weights)?;
    let n = game.n_agents();
    let mixed = consensus_apply(weights, &state.x)?;
    let mut next = Array2::zeros((n, n));
    for i in 0..n {
        let row = operator.apply(i, game, mixed.row(i), state.x_prev.row(i))?;
        if row.len() != n {
            return Err(TrackError::BadVectorLength { n, got: row.len() });
        }
        next.row_mut(i).assign(&row);
    }
    state.x_prev = std::mem::replace(&mut state.x, next);
    state.k += 1;
    Ok(())
}

/// One core tracking update: regularized projection with the step size the
/// schedule prescribes at the current iteration.
pub fn core_step(
    state: &mut TrackerState,
    game: &InstantaneousGame,
    weights: &WeightMatrix,
    cfg: &TrackerConfig,
) -> Result<(), TrackError> {
    cfg.validate()?;
    let alpha = cfg.alpha_at(state.k);
    cfg.check_core_stability(alpha)?;
    let operator = RegularizedProjection::from_config(cfg, alpha);
    core_step_general(state, game, weights, &operator)
}

/// Worst core-constraint violation of an allocation: the efficiency residual
/// or the largest coalition shortfall, whichever is bigger.
pub fn core_violation(game: &InstantaneousGame, x: &PayoffVector) -> Result<f64, TrackError> {
    let check = core_membership(game, x, 0.0)?;
    Ok(check.efficiency_gap.max(check.worst_violation.max(0.0)))
}

/// Trace of a core tracking run, one entry per game sample.
#[derive(Debug, Clone)]
pub struct CoreRun {
    pub trajectory: Vec<PayoffMatrix>,
    /// Distributed payoff per sample: mean proposal row.
    pub averaged: Vec<PayoffVector>,
    /// Consensus core allocation of each sample's game, used as reference.
    pub references: Vec<PayoffVector>,
    /// `||averaged^k - reference^k||`.
    pub reference_distances: Vec<f64>,
    pub consensus_residuals: Vec<f64>,
    /// Core violation of the averaged proposal against each sample's game.
    pub core_violations: Vec<f64>,
}

/// Run the core tracker across a dynamic game. Each sample's reference
/// allocation is recomputed (warm-started from the previous one), so a game
/// whose core empties out surfaces as a `NoConvergence` error.
pub fn core_track(
    dynamic: &DynamicGame,
    schedule: &NetworkSchedule,
    cfg: &TrackerConfig,
) -> Result<CoreRun, TrackError> {
    cfg.validate()?;
    let horizon = dynamic.horizon();
    let mut state = TrackerState::new(cfg.init.initial_matrix(dynamic.game(0))?);
    let mut run = CoreRun {
        trajectory: Vec::with_capacity(horizon),
        averaged: Vec::with_capacity(horizon),
        references: Vec::with_capacity(horizon),
        reference_distances: Vec::with_capacity(horizon),
        consensus_residuals: Vec::with_capacity(horizon),
        core_violations: Vec::with_capacity(horizon),
    };
    let mut warm: Option<PayoffMatrix> = None;
    for k in 0..horizon {
        let game = dynamic.game(k);
        let weights = at_sample(k, schedule.weights_at(k).map_err(TrackError::from))?;
        let (reference, ref_matrix) =
            at_sample(k, core_reference_point_warm(game, cfg, warm.as_ref()))?;
        warm = Some(ref_matrix);
        for _ in 0..cfg.iterations_per_sample {
            at_sample(k, core_step(&mut state, game, &weights, cfg))?;
        }
        let averaged = state.averaged_proposal();
        run.reference_distances.push(
            (&averaged - &reference)
                .iter()
                .map(|d| d * d)
                .sum::<f64>()
                .sqrt(),
        );
        run.consensus_residuals.push(consensus_residual(&state.x));
        run.core_violations.push(core_violation(game, &averaged)?);
        run.trajectory.push(state.x.clone());
        run.averaged.push(averaged);
        run.references.push(reference);
    }
    Ok(run)
}

/// Consensus core allocation of a single game: the core step iterated on a
/// complete graph until the proposals agree and satisfy every core
/// constraint to `cfg.tolerance`.
pub fn core_reference_point(
    game: &InstantaneousGame,
    cfg: &TrackerConfig,
) -> Result<PayoffVector, TrackError> {
    core_reference_point_warm(game, cfg, None).map(|(point, _)| point)
}

/// [`core_reference_point`] with an optional warm-start matrix (e.g. the
/// converged matrix for the previous game in a slowly drifting sequence);
/// also returns the converged matrix to chain from.
///
/// The protocol's own convergence test (consensus residual and core
/// violation both within `cfg.tolerance`) certifies the result. Running the
/// protocol cold crawls on thin cores, so the solve first projects the
/// warm-start's averaged row onto the core exactly; a consensus stack of
/// that projection is already a protocol fixed point and passes the test
/// immediately. When the projection reports the core empty the protocol
/// runs from the configured start instead, so an empty core still surfaces
/// as genuine non-convergence diagnostics.
pub fn core_reference_point_warm(
    game: &InstantaneousGame,
    cfg: &TrackerConfig,
    warm: Option<&PayoffMatrix>,
) -> Result<(PayoffVector, PayoffMatrix), TrackError> {
    cfg.validate()?;
    let n = game.n_agents();
    let weights = metropolis_weights(&Graph::complete(n)?);
    let x0 = match warm {
        Some(m) => {
            if m.nrows() != n || m.ncols() != n {
                return Err(TrackError::BadMatrixShape {
                    n,
                    rows: m.nrows(),
                    cols: m.ncols(),
                });
            }
            m.clone()
        }
        None => cfg.init.initial_matrix(game)?,
    };
    let seed_point = {
        let start = TrackerState::new(x0.clone()).averaged_proposal();
        qp::project_onto_core(game, &start, cfg.tolerance.min(1e-9), None).ok()
    };
    let x0 = match seed_point {
        Some(z) => Array2::from_shape_fn((n, n), |(_, j)| z[j]),
        None => x0,
    };
    // The reference solve always uses the fixed step; a diminishing schedule
    // configured for the online run would slow it to a crawl here.
    let mut solve_cfg = cfg.clone();
    solve_cfg.schedule = StepSchedule::Fixed;
    let mut state = TrackerState::new(x0);
    let mut residual = f64::INFINITY;
    let mut violation = f64::INFINITY;
    for _ in 0..cfg.max_iterations {
        let averaged = state.averaged_proposal();
        residual = consensus_residual(&state.x);
        violation = core_violation(game, &averaged)?;
        if residual <= cfg.tolerance && violation <= cfg.tolerance {
            return Ok((averaged, state.x));
        }
        core_step(&mut state, game, &weights, &solve_cfg)?;
    }
    Err(TrackError::NoConvergence {
        iterations: cfg.max_iterations,
        residual,
        violation,
    })
}

/// Contraction factors and drift bound that define a tracking-error
/// envelope.
#[derive(Debug, Clone)]
pub struct BoundParams {
    delta: f64,
    factors: Vec<f64>,
}

impl BoundParams {
    /// `factors[i]` is the contraction factor of step `i + 1`; the last
    /// entry repeats for later steps. All must lie in `(0, 1)`.
    pub fn new(delta: f64, factors: Vec<f64>) -> Result<Self, TrackError> {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(TrackError::InvalidConfig(format!(
                "drift bound must be finite and >= 0, got {delta}"
            )));
        }
        if factors.is_empty() {
            return Err(TrackError::InvalidConfig(
                "at least one contraction factor is required".into(),
            ));
        }
        for &l in &factors {
            if !(l > 0.0 && l < 1.0) {
                return Err(TrackError::InvalidConfig(format!(
                    "contraction factors must lie in (0, 1), got {l}"
                )));
            }
        }
        Ok(BoundParams { delta, factors })
    }

    pub fn constant(delta: f64, factor: f64) -> Result<Self, TrackError> {
        BoundParams::new(delta, vec![factor])
    }

    fn factor_at(&self, i: usize) -> f64 {
        self.factors[i.min(self.factors.len() - 1)]
    }

    /// Largest contraction factor.
    pub fn l_bar(&self) -> f64 {
        self.factors.iter().copied().fold(0.0, f64::max)
    }
}

/// Tracking-error envelope after `k` steps: the initial error shrunk by the
/// product of the first `k - 1` contraction factors, plus the geometric
/// accumulation of the per-step drift.
pub fn theoretical_bound(bp: &BoundParams, initial_error: f64, k: usize) -> f64 {
    if k == 0 {
        return initial_error;
    }
    let l_hat: f64 = (0..k - 1).map(|i| bp.factor_at(i)).product();
    let l_bar = bp.l_bar();
    let drift = (1.0 - l_bar.powi((k - 1) as i32)) / (1.0 - l_bar) * bp.delta;
    l_hat * initial_error + drift
}

/// Limit of [`theoretical_bound`] as `k` grows: `delta / (1 - l_bar)`.
pub fn theoretical_bound_limit(bp: &BoundParams) -> f64 {
    bp.delta / (1.0 - bp.l_bar())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::generate::{additive_game, count_game, glove_game};
    use crate::game::InstantaneousGame;
    use crate::solutions::agent_marginal_vector;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn complete_schedule(n: usize) -> NetworkSchedule {
        NetworkSchedule::Static(Graph::complete(n).unwrap())
    }

    fn complete_weights(n: usize) -> WeightMatrix {
        metropolis_weights(&Graph::complete(n).unwrap())
    }

    fn two_agent_core_game() -> InstantaneousGame {
        InstantaneousGame::from_table(2, vec![0.0, 0.4, 0.6, 1.0]).unwrap()
    }

    /// v(S) = 1 for |S| >= 2: pairwise constraints force sum(x) >= 1.5
    /// against efficiency sum(x) = 1, so the core is empty.
    fn empty_core_game() -> InstantaneousGame {
        InstantaneousGame::from_fn(3, |s| if s.size() >= 2 { 1.0 } else { 0.0 })
            .unwrap()
            .to_dense()
            .unwrap()
    }

    #[test]
    fn additive_consensus_is_a_shapley_fixed_point() {
        let game = additive_game(&[2.0, 5.0, 3.0]).unwrap();
        let rows = array![[2.0, 5.0, 3.0], [2.0, 5.0, 3.0], [2.0, 5.0, 3.0]];
        let mut state = TrackerState::new(rows.clone());
        let cfg = TrackerConfig {
            alpha: 0.3,
            ..TrackerConfig::default()
        };
        shapley_step(&mut state, &game, &complete_weights(3), &cfg).unwrap();
        assert_abs_diff_eq!(state.x, rows, epsilon = 1e-12);
    }

    #[test]
    fn full_step_lands_on_marginal_rows() {
        let game = glove_game();
        let cfg = TrackerConfig {
            alpha: 1.0,
            ..TrackerConfig::default()
        };
        let mut state = TrackerState::new(Array2::zeros((3, 3)));
        shapley_step(&mut state, &game, &complete_weights(3), &cfg).unwrap();
        for i in 0..3 {
            let mhat = agent_marginal_vector(&game, i).unwrap();
            assert_abs_diff_eq!(state.x.row(i).to_owned(), mhat, epsilon = 1e-12);
        }
    }

    #[test]
    fn half_step_from_zero_blends_marginals() {
        let game = glove_game();
        let cfg = TrackerConfig {
            alpha: 0.5,
            ..TrackerConfig::default()
        };
        let mut state = TrackerState::new(Array2::zeros((3, 3)));
        shapley_step(&mut state, &game, &complete_weights(3), &cfg).unwrap();
        assert_abs_diff_eq!(
            state.x.row(0).to_owned(),
            array![0.0, 0.25, 0.25],
            epsilon = 1e-12
        );
    }

    #[test]
    fn complete_graph_mean_moves_toward_shapley() {
        let game = glove_game();
        let cfg = TrackerConfig {
            alpha: 0.2,
            ..TrackerConfig::default()
        };
        let phi = shapley_exact(&game).unwrap();
        let mut state = TrackerState::new(InitPolicy::SelfAllocation.initial_matrix(&game).unwrap());
        for _ in 0..5 {
            let mean_before = state.averaged_proposal();
            shapley_step(&mut state, &game, &complete_weights(3), &cfg).unwrap();
            let mean_after = state.averaged_proposal();
            let expected = &mean_before * 0.8 + &phi * 0.2;
            assert_abs_diff_eq!(mean_after, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn static_track_error_decays_geometrically() {
        let game = additive_game(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let dynamic = DynamicGame::from_static(game, 60).unwrap();
        let cfg = TrackerConfig {
            alpha: 0.5,
            ..TrackerConfig::default()
        };
        let run = shapley_track(&dynamic, &complete_schedule(4), &cfg).unwrap();
        // Additive games have equal marginal rows, so the fixed point is the
        // Shapley consensus itself and the error contracts by 1 - alpha.
        for k in 1..run.tracking_errors.len() {
            assert!(run.tracking_errors[k] <= 0.5 * run.tracking_errors[k - 1] + 1e-12);
        }
        assert!(*run.tracking_errors.last().unwrap() < 1e-8);
    }

    #[test]
    fn shapley_static_converges_on_glove_game() {
        let cfg = TrackerConfig {
            schedule: StepSchedule::Diminishing { alpha0: 0.9 },
            tolerance: 1e-4,
            max_iterations: 2_000_000,
            ..TrackerConfig::default()
        };
        let run = shapley_static(&glove_game(), &complete_schedule(3), &cfg).unwrap();
        let phi = array![2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0];
        for i in 0..3 {
            assert_abs_diff_eq!(run.x.row(i).to_owned(), phi, epsilon = 2e-4);
        }
    }

    #[test]
    fn shapley_static_rejects_fixed_schedule_and_reports_stall() {
        let cfg = TrackerConfig::default();
        assert!(matches!(
            shapley_static(&glove_game(), &complete_schedule(3), &cfg),
            Err(TrackError::InvalidConfig(_))
        ));
        let starved = TrackerConfig {
            schedule: StepSchedule::Diminishing { alpha0: 0.5 },
            tolerance: 1e-9,
            max_iterations: 5,
            ..TrackerConfig::default()
        };
        assert!(matches!(
            shapley_static(&glove_game(), &complete_schedule(3), &starved),
            Err(TrackError::ShapleyNoConvergence { iterations: 5, .. })
        ));
    }

    #[test]
    fn consensus_core_point_is_fixed_by_core_step() {
        let game = glove_game();
        // The glove core is the single point (1, 0, 0).
        let z = array![[1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 0.0, 0.0]];
        let mut state = TrackerState::new(z.clone());
        let cfg = TrackerConfig {
            alpha: 0.5,
            ..TrackerConfig::default()
        };
        core_step(&mut state, &game, &complete_weights(3), &cfg).unwrap();
        assert_abs_diff_eq!(state.x, z, epsilon = 1e-9);
    }

    #[test]
    fn general_step_with_default_operator_matches_core_step() {
        let game = two_agent_core_game();
        let w = complete_weights(2);
        let cfg = TrackerConfig {
            alpha: 0.4,
            ..TrackerConfig::default()
        };
        let x0 = array![[1.0, 0.0], [0.0, 1.0]];
        let mut a = TrackerState::new(x0.clone());
        let mut b = TrackerState::new(x0);
        for _ in 0..5 {
            core_step(&mut a, &game, &w, &cfg).unwrap();
            let op = RegularizedProjection::from_config(&cfg, cfg.alpha_at(b.k));
            core_step_general(&mut b, &game, &w, &op).unwrap();
        }
        assert_abs_diff_eq!(a.x, b.x, epsilon = 1e-14);
        assert_eq!(a.k, b.k);
    }

    #[test]
    fn exact_projection_operator_fixes_core_consensus() {
        let game = two_agent_core_game();
        let z = array![[0.4, 0.6], [0.4, 0.6]];
        let mut state = TrackerState::new(z.clone());
        let op = ExactProjection {
            projection_tol: 1e-10,
            projection_max_cycles: None,
        };
        core_step_general(&mut state, &game, &complete_weights(2), &op).unwrap();
        assert_abs_diff_eq!(state.x, z, epsilon = 1e-9);
    }

    #[test]
    fn core_step_rejects_unstable_coefficients() {
        let game = two_agent_core_game();
        let cfg = TrackerConfig {
            alpha: 0.95,
            gamma_reg: 0.1,
            ..TrackerConfig::default()
        };
        let mut state = TrackerState::new(array![[1.0, 0.0], [0.0, 1.0]]);
        assert!(matches!(
            core_step(&mut state, &game, &complete_weights(2), &cfg),
            Err(TrackError::InvalidConfig(_))
        ));
    }

    #[test]
    fn core_operator_contracts_with_fixed_memory() {
        // With x_prev held fixed the regularized projection is
        // (1 - alpha*gamma)-Lipschitz in x; check the ratio empirically.
        let game = glove_game();
        let w = complete_weights(3);
        let cfg = TrackerConfig {
            alpha: 0.5,
            gamma_reg: 0.1,
            ..TrackerConfig::default()
        };
        let mut rng = crate::rng::seeded(17);
        use rand::Rng;
        let prev = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
        for _ in 0..20 {
            let xa = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
            let xb = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
            let mut sa = TrackerState {
                k: 0,
                x: xa.clone(),
                x_prev: prev.clone(),
            };
            let mut sb = TrackerState {
                k: 0,
                x: xb.clone(),
                x_prev: prev.clone(),
            };
            core_step(&mut sa, &game, &w, &cfg).unwrap();
            core_step(&mut sb, &game, &w, &cfg).unwrap();
            let d_in: f64 = (&xa - &xb).iter().map(|d| d * d).sum::<f64>().sqrt();
            let d_out: f64 = (&sa.x - &sb.x).iter().map(|d| d * d).sum::<f64>().sqrt();
            assert!(
                d_out <= (1.0 - cfg.alpha * cfg.gamma_reg) * d_in + 1e-8,
                "ratio {}",
                d_out / d_in
            );
        }
    }

    #[test]
    fn reference_point_on_symmetric_game_is_even_split() {
        let game = count_game(3).unwrap();
        let point = core_reference_point(&game, &TrackerConfig::default()).unwrap();
        assert_abs_diff_eq!(point, array![1.0, 1.0, 1.0], epsilon = 1e-5);
    }

    #[test]
    fn reference_point_on_singleton_core() {
        let game = two_agent_core_game();
        let cfg = TrackerConfig {
            alpha: 0.5,
            ..TrackerConfig::default()
        };
        let point = core_reference_point(&game, &cfg).unwrap();
        assert_abs_diff_eq!(point, array![0.4, 0.6], epsilon = 1e-5);
    }

    #[test]
    fn empty_core_is_reported_as_nonconvergence() {
        let cfg = TrackerConfig {
            alpha: 0.5,
            max_iterations: 2000,
            ..TrackerConfig::default()
        };
        let err = core_reference_point(&empty_core_game(), &cfg).unwrap_err();
        match err {
            TrackError::NoConvergence { violation, .. } => {
                assert!(violation > 1e-3, "violation {violation} should stay large");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn core_run_failure_names_the_sample() {
        // Core empties out at the second sample; the error should say so.
        let dynamic =
            DynamicGame::new(vec![count_game(3).unwrap(), empty_core_game()]).unwrap();
        let cfg = TrackerConfig {
            alpha: 0.5,
            max_iterations: 500,
            ..TrackerConfig::default()
        };
        let err = core_track(&dynamic, &complete_schedule(3), &cfg).unwrap_err();
        match err {
            TrackError::Sample { k, source } => {
                assert_eq!(k, 1);
                assert!(matches!(*source, TrackError::NoConvergence { .. }));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn core_track_converges_on_static_singleton_core() {
        let dynamic = DynamicGame::from_static(two_agent_core_game(), 150).unwrap();
        let cfg = TrackerConfig {
            alpha: 0.5,
            ..TrackerConfig::default()
        };
        let run = core_track(&dynamic, &complete_schedule(2), &cfg).unwrap();
        let last = run.averaged.last().unwrap();
        assert_abs_diff_eq!(last.clone(), array![0.4, 0.6], epsilon = 1e-4);
        assert!(*run.consensus_residuals.last().unwrap() < 1e-4);
        assert!(*run.core_violations.last().unwrap() < 1e-4);
        assert!(*run.reference_distances.last().unwrap() < 1e-4);
    }

    #[test]
    fn warm_started_reference_matches_cold_start() {
        let game = count_game(3).unwrap();
        let cfg = TrackerConfig::default();
        let (cold, matrix) = core_reference_point_warm(&game, &cfg, None).unwrap();
        let (warm, _) = core_reference_point_warm(&game, &cfg, Some(&matrix)).unwrap();
        assert_abs_diff_eq!(cold, warm, epsilon = 1e-6);
    }

    #[test]
    fn bound_decays_geometrically_without_drift() {
        let bp = BoundParams::constant(0.0, 0.8).unwrap();
        assert_abs_diff_eq!(theoretical_bound(&bp, 2.0, 1), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(theoretical_bound(&bp, 2.0, 5), 2.0 * 0.8f64.powi(4), epsilon = 1e-12);
        assert!(theoretical_bound(&bp, 2.0, 200) < 1e-15);
        assert_abs_diff_eq!(theoretical_bound_limit(&bp), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn bound_limit_with_drift() {
        let bp = BoundParams::constant(0.1, 0.5).unwrap();
        assert_abs_diff_eq!(theoretical_bound_limit(&bp), 0.2, epsilon = 1e-15);
        assert_abs_diff_eq!(theoretical_bound(&bp, 0.0, 1), 0.0, epsilon = 1e-15);
        let far = theoretical_bound(&bp, 0.0, 60);
        assert_abs_diff_eq!(far, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn bound_rejects_bad_parameters() {
        assert!(BoundParams::constant(-0.1, 0.5).is_err());
        assert!(BoundParams::constant(0.1, 1.0).is_err());
        assert!(BoundParams::constant(0.1, 0.0).is_err());
        assert!(BoundParams::new(0.1, vec![]).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrackerConfig::default();
        cfg.alpha = 0.0;
        assert!(cfg.validate().is_err());
        cfg.alpha = 1.0;
        assert!(cfg.validate().is_ok());
        cfg.gamma_reg = -0.2;
        assert!(cfg.validate().is_err());
        cfg.gamma_reg = 0.1;
        cfg.iterations_per_sample = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn diminishing_schedule_steps() {
        let cfg = TrackerConfig {
            schedule: StepSchedule::Diminishing { alpha0: 0.5 },
            ..TrackerConfig::default()
        };
        assert_abs_diff_eq!(cfg.alpha_at(0), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(cfg.alpha_at(4), 0.1, epsilon = 1e-15);
    }
}
