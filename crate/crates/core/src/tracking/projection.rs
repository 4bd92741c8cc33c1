//! Euclidean projection onto an agent's bounding set.
//!
//! Agent `i`'s bounding set for a game `v` is the polyhedron
//!
//! ```text
//!   sum_j x_j = v(I)
//!   sum_{j in S} x_j >= v(S)   for every proper S containing i
//! ```
//!
//! i.e. the allocations that are efficient and leave no coalition of `i`
//! underpaid. The core is the intersection of all agents' bounding sets.
//! Projection uses Dykstra's alternating method over the half-spaces (in
//! ascending mask order) and the efficiency hyperplane, which converges to
//! the exact Euclidean projection, unlike plain cyclic projection.

use ndarray::Array1;

use super::TrackError;
use crate::game::{Coalition, InstantaneousGame, PayoffVector};

/// Default cycle cap: `100 * 2^n` sweeps over the constraint family. Dykstra
/// converges linearly and cold starts far outside the set routinely need a
/// few hundred sweeps at tolerances near 1e-9.
pub fn default_projection_cycles(n_agents: usize) -> usize {
    100usize.saturating_mul(1usize << n_agents)
}

/// One agent's view of the feasible allocations of a game.
#[derive(Debug, Clone, Copy)]
pub struct BoundingSet<'a> {
    game: &'a InstantaneousGame,
    owner: usize,
}

impl<'a> BoundingSet<'a> {
    pub fn new(game: &'a InstantaneousGame, owner: usize) -> Result<Self, TrackError> {
        if owner >= game.n_agents() {
            return Err(crate::game::GameError::AgentOutOfRange {
                agent: owner,
                n: game.n_agents(),
            }
            .into());
        }
        Ok(BoundingSet { game, owner })
    }

    pub fn owner(&self) -> usize {
        self.owner
    }

    /// Right-hand side of the efficiency constraint.
    pub fn equality_rhs(&self) -> f64 {
        self.game.grand_value()
    }

    /// Lower-bound half-spaces `(S, v(S))` in ascending mask order: every
    /// proper nonempty coalition containing the owner, `2^(n-1) - 1` of them.
    pub fn halfspaces(&self) -> impl Iterator<Item = (Coalition, f64)> + 'a {
        let grand = self.game.grand_coalition().mask();
        let own = Coalition::singleton(self.owner).mask();
        let game = self.game;
        (1..grand).filter_map(move |mask| {
            if mask & own != 0 {
                Some((Coalition::from_mask(mask), game.value_unchecked(mask)))
            } else {
                None
            }
        })
    }

    /// Largest constraint violation of `x`: the efficiency residual or the
    /// worst half-space shortfall, whichever is bigger.
    pub fn max_violation(&self, x: &PayoffVector) -> f64 {
        let mut worst = (x.sum() - self.equality_rhs()).abs();
        for (s, rhs) in self.halfspaces() {
            let paid: f64 = s.members().map(|j| x[j]).sum();
            worst = worst.max(rhs - paid);
        }
        worst
    }

    pub fn contains(&self, x: &PayoffVector, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }
}

/// Project `x` onto the half-space `sum_{j in S} x_j >= rhs`: unchanged when
/// satisfied, otherwise the shortfall is spread evenly over the members.
pub fn halfspace_project(
    x: &PayoffVector,
    s: Coalition,
    rhs: f64,
) -> Result<PayoffVector, TrackError> {
    if s.is_empty() {
        return Err(TrackError::EmptyHalfspace);
    }
    if let Some(agent) = s.members().find(|&j| j >= x.len()) {
        return Err(TrackError::HalfspaceOutOfRange {
            agent,
            len: x.len(),
        });
    }
    let mut y = x.clone();
    let paid: f64 = s.members().map(|j| y[j]).sum();
    if paid < rhs {
        let bump = (rhs - paid) / s.size() as f64;
        for j in s.members() {
            y[j] += bump;
        }
    }
    Ok(y)
}

/// Dykstra's alternating projections over a fixed constraint family: the
/// given half-spaces (in the order supplied) followed by the efficiency
/// hyperplane `sum = grand_value`. Stops when a full sweep moves the iterate
/// by at most `tol` and all listed half-spaces are satisfied to `tol`;
/// `budget` caps the sweeps and is decremented by the number used.
fn dykstra(
    x: &PayoffVector,
    halfspaces: &[(u64, f64)],
    grand_value: f64,
    tol: f64,
    budget: &mut usize,
) -> Result<PayoffVector, (PayoffVector, f64)> {
    let n = x.len();
    let mut z = x.clone();
    // Dykstra corrections, one per constraint plus one for the hyperplane.
    let mut corrections = vec![Array1::<f64>::zeros(n); halfspaces.len() + 1];
    let mut displacement = f64::INFINITY;
    while *budget > 0 {
        *budget -= 1;
        let sweep_start = z.clone();
        for (ci, &(mask, rhs)) in halfspaces.iter().enumerate() {
            let p = &mut corrections[ci];
            // y = proj(z + p); new correction = z + p - y.
            *p += &z;
            let members = Coalition::from_mask(mask);
            let paid: f64 = members.members().map(|j| p[j]).sum();
            z.assign(p);
            if paid < rhs {
                let bump = (rhs - paid) / members.size() as f64;
                for j in members.members() {
                    z[j] += bump;
                }
            }
            *p -= &z;
        }
        {
            let p = corrections.last_mut().expect("nonempty");
            *p += &z;
            let shift = (grand_value - p.sum()) / n as f64;
            z.assign(p);
            z += shift;
            *p -= &z;
        }
        displacement = (&z - &sweep_start).iter().map(|d| d * d).sum::<f64>().sqrt();
        if displacement <= tol {
            // Feasibility must be read off the end-of-sweep iterate: the
            // hyperplane shift can reopen half-space shortfalls mid-sweep.
            let worst_shortfall = halfspaces
                .iter()
                .map(|&(mask, rhs)| {
                    rhs - Coalition::from_mask(mask)
                        .members()
                        .map(|j| z[j])
                        .sum::<f64>()
                })
                .fold(0.0f64, f64::max);
            if worst_shortfall <= tol {
                return Ok(z);
            }
        }
    }
    Err((z, displacement))
}

/// Exact Euclidean projection of `x` onto agent `owner`'s bounding set via
/// Dykstra's alternating projections.
///
/// Terminates when a full sweep moves the iterate by at most `tol` and every
/// constraint is satisfied to `tol`. `max_cycles` defaults to
/// [`default_projection_cycles`] and caps the total sweeps across all
/// restarts. On failure the error carries the best iterate and its residual.
///
/// Internally the projection is solved over a working set: only the
/// half-spaces violated along the way enter the sweep, and the candidate is
/// re-solved from `x` whenever a left-out constraint turns out violated.
/// Dropping constraints enlarges the feasible region, so a candidate that
/// satisfies the whole family is the projection onto the full set; with
/// `2^(n-1) - 1` half-spaces of which only a handful are ever active, this
/// keeps sweeps short.
pub fn project_bounding_set(
    x: &PayoffVector,
    game: &InstantaneousGame,
    owner: usize,
    tol: f64,
    max_cycles: Option<usize>,
) -> Result<PayoffVector, TrackError> {
    let n = game.n_agents();
    if x.len() != n {
        return Err(TrackError::BadVectorLength { n, got: x.len() });
    }
    if !(tol > 0.0) {
        return Err(TrackError::InvalidConfig(format!(
            "projection tolerance must be positive, got {tol}"
        )));
    }
    let bset = BoundingSet::new(game, owner)?;
    let mut budget = max_cycles.unwrap_or_else(|| default_projection_cycles(n));
    let grand_value = bset.equality_rhs();

    // Working set in ascending mask order, seeded with the half-spaces the
    // input itself violates.
    let mut workset: Vec<(u64, f64)> = bset
        .halfspaces()
        .filter(|&(s, rhs)| s.members().map(|j| x[j]).sum::<f64>() < rhs)
        .map(|(s, rhs)| (s.mask(), rhs))
        .collect();

    loop {
        let z = match dykstra(x, &workset, grand_value, tol, &mut budget) {
            Ok(z) => z,
            Err((best, displacement)) => {
                return Err(TrackError::ProjectionStalled {
                    cycles: max_cycles.unwrap_or_else(|| default_projection_cycles(n)),
                    displacement,
                    residual: bset.max_violation(&best),
                    best: best.to_vec(),
                })
            }
        };
        let mut grew = false;
        for (s, rhs) in bset.halfspaces() {
            let paid: f64 = s.members().map(|j| z[j]).sum();
            if rhs - paid > tol && workset.binary_search_by_key(&s.mask(), |c| c.0).is_err() {
                workset.push((s.mask(), rhs));
                grew = true;
            }
        }
        if !grew {
            return Ok(z);
        }
        workset.sort_unstable_by_key(|c| c.0);
    }
}
