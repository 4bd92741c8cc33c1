//! Ground-truth offline solution concepts.
//!
//! Everything here enumerates orderings or coalitions exactly, so agent
//! counts are capped: these functions are baselines and oracles for the
//! online trackers, not production-scale solvers.
//!
//! For an ordering `s` of all agents, the marginal vector `m(s)` holds each
//! agent's value increment when it joins the coalition of its predecessors.
//! The Shapley value is the average of `m(s)` over all `n!` orderings, and
//! `agent_marginal_vector(g, i)` averages over the `(n-1)!` orderings that
//! start with `i` — the part agent `i` can compute from its own coalition
//! values alone. The two connect through
//! `shapley = (1/n) * sum_i agent_marginal_vector(g, i)`.

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::game::{Coalition, GameError, InstantaneousGame, PayoffVector};

pub use crate::tracking::{core_reference_point, core_reference_point_warm};

/// Full-permutation enumeration cap (`n!` orderings).
pub const MAX_EXACT_AGENTS: usize = 10;
/// Per-agent enumeration cap (`(n-1)!` orderings per agent).
pub const MAX_MARGINAL_AGENTS: usize = 12;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("exact enumeration is capped at {cap} agents, got {n}")]
    TooManyAgents { n: usize, cap: usize },
    #[error("ordering {got:?} is not a permutation of 0..{n}")]
    BadOrdering { n: usize, got: Vec<usize> },
    #[error("payoff vector has {got} entries for {n} agents")]
    PayoffLength { n: usize, got: usize },
    #[error(transparent)]
    Game(#[from] GameError),
}

/// A visit order of all agents, validated to be a permutation of `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AgentOrdering(Vec<usize>);

impl AgentOrdering {
    pub fn new(order: Vec<usize>) -> Result<Self, SolveError> {
        let n = order.len();
        let mut seen = vec![false; n];
        for &agent in &order {
            if agent >= n || seen[agent] {
                return Err(SolveError::BadOrdering { n, got: order });
            }
            seen[agent] = true;
        }
        Ok(AgentOrdering(order))
    }

    pub fn agents(&self) -> &[usize] {
        &self.0
    }
}

/// Iterative Heap's algorithm; calls `f` on every permutation of `items`,
/// including the single empty permutation of an empty slice.
fn for_each_permutation<F: FnMut(&[usize])>(items: &mut [usize], mut f: F) {
    let n = items.len();
    let mut count = vec![0usize; n];
    f(items);
    let mut i = 1;
    while i < n {
        if count[i] < i {
            if i % 2 == 0 {
                items.swap(0, i);
            } else {
                items.swap(count[i], i);
            }
            f(items);
            count[i] += 1;
            i = 1;
        } else {
            count[i] = 0;
            i += 1;
        }
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Add the marginal vector of one ordering into `acc`, starting the walk
/// from an already-formed coalition `base` with value `base_value`.
fn accumulate_marginals(
    game: &InstantaneousGame,
    base: u64,
    base_value: f64,
    order: &[usize],
    acc: &mut [f64],
) {
    let mut mask = base;
    let mut prev = base_value;
    for &agent in order {
        mask |= 1 << agent;
        let v = game.value_unchecked(mask);
        acc[agent] += v - prev;
        prev = v;
    }
}

/// Marginal-contribution vector of a single ordering: entry `j` is
/// `v(P ∪ {j}) - v(P)` with `P` the agents preceding `j` in the ordering.
pub fn marginal_vector(
    game: &InstantaneousGame,
    ordering: &AgentOrdering,
) -> Result<PayoffVector, SolveError> {
    let n = game.n_agents();
    if ordering.agents().len() != n {
        return Err(SolveError::BadOrdering {
            n,
            got: ordering.agents().to_vec(),
        });
    }
    let mut acc = vec![0.0; n];
    accumulate_marginals(game, 0, 0.0, ordering.agents(), &mut acc);
    Ok(Array1::from(acc))
}

/// Average of the marginal vectors over the orderings that start with
/// `agent`: the expected-payoff proposal agent `i` can form on its own.
pub fn agent_marginal_vector(
    game: &InstantaneousGame,
    agent: usize,
) -> Result<PayoffVector, SolveError> {
    let n = game.n_agents();
    if agent >= n {
        return Err(GameError::AgentOutOfRange { agent, n }.into());
    }
    if n > MAX_MARGINAL_AGENTS {
        return Err(SolveError::TooManyAgents {
            n,
            cap: MAX_MARGINAL_AGENTS,
        });
    }
    let base = Coalition::singleton(agent).mask();
    let base_value = game.value_unchecked(base);
    let mut rest: Vec<usize> = (0..n).filter(|&j| j != agent).collect();
    let mut acc = vec![0.0; n];
    let mut orderings = 0usize;
    for_each_permutation(&mut rest, |order| {
        acc[agent] += base_value;
        accumulate_marginals(game, base, base_value, order, &mut acc);
        orderings += 1;
    });
    debug_assert_eq!(orderings, factorial(n - 1) as usize);
    let scale = 1.0 / factorial(n - 1);
    Ok(Array1::from(acc) * scale)
}

/// All per-agent marginal vectors stacked as rows.
pub fn marginal_matrix(game: &InstantaneousGame) -> Result<Array2<f64>, SolveError> {
    let n = game.n_agents();
    let mut m = Array2::zeros((n, n));
    for i in 0..n {
        let row = agent_marginal_vector(game, i)?;
        m.row_mut(i).assign(&row);
    }
    Ok(m)
}

/// Exact Shapley value by full ordering enumeration.
pub fn shapley_exact(game: &InstantaneousGame) -> Result<PayoffVector, SolveError> {
    let n = game.n_agents();
    if n > MAX_EXACT_AGENTS {
        return Err(SolveError::TooManyAgents {
            n,
            cap: MAX_EXACT_AGENTS,
        });
    }
    let mut items: Vec<usize> = (0..n).collect();
    let mut acc = vec![0.0; n];
    for_each_permutation(&mut items, |order| {
        accumulate_marginals(game, 0, 0.0, order, &mut acc);
    });
    let scale = 1.0 / factorial(n);
    Ok(Array1::from(acc) * scale)
}

/// Verdict of a core test, with the binding constraint when it fails.
#[derive(Debug, Clone)]
pub struct CoreCheck {
    pub in_core: bool,
    /// `|sum(x) - v(I)|`.
    pub efficiency_gap: f64,
    /// Coalition maximizing `v(S) - x(S)`; first in mask order on ties.
    pub worst_coalition: Coalition,
    /// That maximum; positive means the coalition is underpaid.
    pub worst_violation: f64,
}

/// Test `x` against every coalition constraint of the core.
pub fn core_membership(
    game: &InstantaneousGame,
    x: &PayoffVector,
    tol: f64,
) -> Result<CoreCheck, SolveError> {
    let n = game.n_agents();
    if x.len() != n {
        return Err(SolveError::PayoffLength { n, got: x.len() });
    }
    let efficiency_gap = (x.sum() - game.grand_value()).abs();
    let mut worst_coalition = game.grand_coalition();
    let mut worst_violation = f64::NEG_INFINITY;
    for s in game.coalitions().skip(1) {
        let paid: f64 = s.members().map(|i| x[i]).sum();
        let violation = game.value_unchecked(s.mask()) - paid;
        if violation > worst_violation {
            worst_violation = violation;
            worst_coalition = s;
        }
    }
    Ok(CoreCheck {
        in_core: efficiency_gap <= tol && worst_violation <= tol,
        efficiency_gap,
        worst_coalition,
        worst_violation,
    })
}
