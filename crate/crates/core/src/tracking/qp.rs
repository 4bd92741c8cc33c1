//! Exact Euclidean projection onto a coalition polyhedron
//! `{ x : 1'x = c, sum_{j in S} x_j >= rhs_S }` by a dual active-set method
//! in the style of Goldfarb and Idnani.
//!
//! Unlike the sweep-based alternating method in [`super::projection`], which
//! approaches the set geometrically and crawls when facets meet at shallow
//! angles, this solve terminates in finitely many pivots regardless of the
//! conditioning of the set. It backs the per-sample reference allocations of
//! [`super::core_track`], where the polyhedron is the full core and thin
//! cores are routine.
//!
//! The iterate starts at the efficiency-hyperplane projection of the input
//! and walks through the KKT points of growing working sets: the most
//! violated inequality enters, the primal point moves along the component of
//! the entering row orthogonal to the working rows, and the blocking ratio
//! test on the multipliers drops working rows whose weight would turn
//! negative, taking partial dual steps where necessary. Market games make
//! these polyhedra heavily degenerate (many coalitions share a value), which
//! cycles naive add/drop pivoting; the partial-step rule is the standard
//! cure. Infeasibility surfaces as a combination certificate: the entering
//! row lies in the span of the working rows with no droppable weight.

use super::TrackError;
use crate::game::{Coalition, InstantaneousGame, PayoffVector};

/// Pivot budget: a healthy solve uses a handful of pivots per active
/// constraint; anything past this indicates numerical trouble.
pub fn default_pivot_limit(n_constraints: usize) -> usize {
    64 + 8 * n_constraints
}

fn gram(masks: &[u64]) -> Vec<f64> {
    let p = masks.len();
    let mut g = vec![0.0f64; p * p];
    for a in 0..p {
        for b in a..p {
            let overlap = (masks[a] & masks[b]).count_ones() as f64;
            g[a * p + b] = overlap;
            g[b * p + a] = overlap;
        }
    }
    g
}

/// Gaussian elimination with partial pivoting on a dense `p x p` system;
/// the Gram entries are coalition sizes, so a fixed absolute threshold
/// separates rank loss from roundoff. `None` on a rank-deficient matrix.
fn solve_dense(mut g: Vec<f64>, mut r: Vec<f64>, p: usize) -> Option<Vec<f64>> {
    let mut row_of = (0..p).collect::<Vec<_>>();
    for col in 0..p {
        let (best, best_abs) = (col..p)
            .map(|r_| (r_, g[row_of[r_] * p + col].abs()))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        if best_abs < 1e-9 {
            return None;
        }
        row_of.swap(col, best);
        let prow = row_of[col];
        for r_ in col + 1..p {
            let row = row_of[r_];
            let f = g[row * p + col] / g[prow * p + col];
            if f == 0.0 {
                continue;
            }
            for c in col..p {
                g[row * p + c] -= f * g[prow * p + c];
            }
            r[row] -= f * r[prow];
        }
    }
    let mut x = vec![0.0f64; p];
    for col in (0..p).rev() {
        let row = row_of[col];
        let mut acc = r[row];
        for c in col + 1..p {
            acc -= g[row * p + c] * x[c];
        }
        x[col] = acc / g[row * p + col];
    }
    Some(x)
}

/// Solve the working Gram against an arbitrary right-hand side.
fn gram_solve_vec(masks: &[u64], h: &[f64]) -> Option<Vec<f64>> {
    solve_dense(gram(masks), h.to_vec(), masks.len())
}

fn mask_dot(mask: u64, x: &PayoffVector) -> f64 {
    Coalition::from_mask(mask).members().map(|j| x[j]).sum()
}

fn mask_axpy(x: &mut PayoffVector, mask: u64, t: f64) {
    for j in Coalition::from_mask(mask).members() {
        x[j] += t;
    }
}

/// Exact projection of `y` onto `{ x : 1'x = eq_rhs, paid(S) >= rhs_S }`.
///
/// `ineqs` lists `(coalition mask, rhs)` rows; `tol` is the feasibility
/// tolerance certified on the result; `max_pivots` defaults to
/// [`default_pivot_limit`]. An empty polyhedron comes back as
/// [`TrackError::InfeasiblePolyhedron`] carrying the violation left at the
/// last certified iterate.
pub fn project_onto_polyhedron(
    y: &PayoffVector,
    eq_rhs: f64,
    ineqs: &[(u64, f64)],
    tol: f64,
    max_pivots: Option<usize>,
) -> Result<PayoffVector, TrackError> {
    let n = y.len();
    if n == 0 || n > 63 {
        return Err(TrackError::InvalidConfig(format!(
            "polyhedron projection supports 1..=63 agents, got {n}"
        )));
    }
    if !(tol > 0.0) {
        return Err(TrackError::InvalidConfig(format!(
            "projection tolerance must be positive, got {tol}"
        )));
    }
    let grand = Coalition::grand(n).mask();
    if let Some(&(mask, _)) = ineqs.iter().find(|&&(m, _)| m == 0 || m & !grand != 0) {
        return Err(TrackError::InvalidConfig(format!(
            "inequality mask {mask:#b} is outside the agent set"
        )));
    }
    let max_pivots = max_pivots.unwrap_or_else(|| default_pivot_limit(ineqs.len()));

    // Start on the efficiency hyperplane; it stays in every working set and
    // its multiplier is free.
    let mut z = y.clone();
    z += (eq_rhs - z.sum()) / n as f64;
    let mut masks: Vec<u64> = vec![grand];
    let mut working: Vec<usize> = Vec::new();
    let mut mu: Vec<f64> = Vec::new();
    let mut in_working = vec![false; ineqs.len()];

    let mut pivots = 0usize;
    'outer: loop {
        // The most violated inequality enters (ties to the smaller index).
        let entering = ineqs
            .iter()
            .enumerate()
            .filter(|&(i, _)| !in_working[i])
            .map(|(i, &(m, b))| (i, b - mask_dot(m, &z)))
            .filter(|&(_, s)| s > tol)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((enter, mut shortfall)) = entering else {
            return Ok(z);
        };
        let a_new = ineqs[enter].0;
        let mut mu_enter = 0.0f64;
        loop {
            pivots += 1;
            if pivots > max_pivots {
                return Err(TrackError::PivotLimit {
                    pivots: max_pivots,
                    violation: shortfall,
                });
            }
            // Write the entering row over the working rows: `rep` solves the
            // working Gram against the overlap column. The residual is the
            // squared norm of the entering row's component orthogonal to the
            // working span, which is also the primal direction that keeps
            // every working row tight.
            let overlaps: Vec<f64> = masks
                .iter()
                .map(|&m| (m & a_new).count_ones() as f64)
                .collect();
            let rep = gram_solve_vec(&masks, &overlaps).ok_or(TrackError::InvalidConfig(
                "working set lost independence during projection".into(),
            ))?;
            let residual_sq = a_new.count_ones() as f64
                - overlaps.iter().zip(&rep).map(|(h, r)| h * r).sum::<f64>();
            // Raising the entering multiplier drains the working rows it
            // leans on; the first to empty blocks the step.
            let blocker = (0..working.len())
                .filter(|&s| rep[s + 1] > 1e-9)
                .map(|s| (s, mu[s] / rep[s + 1]))
                .min_by(|a, b| {
                    a.1.total_cmp(&b.1)
                        .then(ineqs[working[a.0]].0.cmp(&ineqs[working[b.0]].0))
                });
            let independent = residual_sq > 1e-7;
            let t_full = if independent {
                (shortfall / residual_sq).max(0.0)
            } else {
                f64::INFINITY
            };
            let t = match blocker {
                Some((_, t_block)) => t_block.min(t_full),
                None if independent => t_full,
                // Dependent with nothing to drop: the working combination
                // proves the demands exceed the efficiency budget.
                None => {
                    return Err(TrackError::InfeasiblePolyhedron {
                        violation: shortfall,
                    })
                }
            };
            // Move the primal point along the orthogonal component and the
            // multipliers along the representation.
            if independent && t > 0.0 {
                mask_axpy(&mut z, a_new, t);
                for (slot, &m) in masks.iter().enumerate() {
                    mask_axpy(&mut z, m, -t * rep[slot]);
                }
                shortfall -= t * residual_sq;
            }
            mu_enter += t;
            for slot in 0..mu.len() {
                mu[slot] -= t * rep[slot + 1];
            }
            if t == t_full && independent {
                masks.push(a_new);
                working.push(enter);
                mu.push(mu_enter);
                in_working[enter] = true;
                continue 'outer;
            }
            let (slot, _) = blocker.expect("a finite step is blocked");
            let gone = working.remove(slot);
            in_working[gone] = false;
            masks.remove(slot + 1);
            mu.remove(slot);
        }
    }
}

/// Exact projection of `y` onto the core of `game`.
pub fn project_onto_core(
    game: &InstantaneousGame,
    y: &PayoffVector,
    tol: f64,
    max_pivots: Option<usize>,
) -> Result<PayoffVector, TrackError> {
    let n = game.n_agents();
    if y.len() != n {
        return Err(TrackError::BadVectorLength { n, got: y.len() });
    }
    let grand = Coalition::grand(n).mask();
    let ineqs: Vec<(u64, f64)> = (1..grand)
        .map(|mask| (mask, game.value_unchecked(mask)))
        .collect();
    project_onto_polyhedron(y, game.grand_value(), &ineqs, tol, max_pivots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::generate::{count_game, glove_game};
    use crate::solutions::core_membership;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    #[test]
    fn plain_hyperplane_when_no_inequality_binds() {
        let y = array![0.0, 0.0];
        let z = project_onto_polyhedron(&y, 1.0, &[(0b01, -5.0)], 1e-12, None).unwrap();
        assert_abs_diff_eq!(z, array![0.5, 0.5], epsilon = 1e-12);
    }

    #[test]
    fn activates_and_drops_constraints_as_needed() {
        // Core of the glove game is the single point (1, 0, 0).
        let g = glove_game();
        for y in [
            array![0.0, 0.0, 0.0],
            array![1.0, 1.0, 1.0],
            array![-3.0, 2.0, 5.0],
        ] {
            let z = project_onto_core(&g, &y, 1e-12, None).unwrap();
            assert_abs_diff_eq!(z, array![1.0, 0.0, 0.0], epsilon = 1e-9);
        }
    }

    #[test]
    fn interior_point_projects_to_itself() {
        let g = count_game(3).unwrap();
        let y = array![1.0, 1.0, 1.0];
        let z = project_onto_core(&g, &y, 1e-12, None).unwrap();
        assert_abs_diff_eq!(z, y, epsilon = 1e-12);
    }

    #[test]
    fn result_is_feasible_and_closer_than_other_core_points() {
        let g = count_game(4).unwrap();
        let mut rng = crate::rng::seeded(9);
        use rand::Rng;
        for _ in 0..50 {
            let y = Array1::from_iter((0..4).map(|_| rng.gen_range(-2.0..4.0)));
            let z = project_onto_core(&g, &y, 1e-10, None).unwrap();
            assert!(core_membership(&g, &z, 1e-8).unwrap().in_core);
            // Any other feasible point must be at least as far from y.
            for _ in 0..20 {
                let probe = {
                    let mut p = Array1::from_iter((0..4).map(|_| rng.gen_range(0.5..1.5)));
                    let s: f64 = p.sum();
                    p *= 4.0 / s;
                    p
                };
                if core_membership(&g, &probe, 1e-12).unwrap().in_core {
                    let dz = (&z - &y).iter().map(|d| d * d).sum::<f64>();
                    let dp = (&probe - &y).iter().map(|d| d * d).sum::<f64>();
                    assert!(dz <= dp + 1e-9, "{dz} > {dp}");
                }
            }
        }
    }

    #[test]
    fn agrees_with_enumeration_oracle_on_random_cores() {
        use crate::game::generate::{convex_game, random_dense_game};
        use crate::oracles::{core_constraints, core_is_empty, project_active_set};
        use rand::Rng;
        let mut rng = crate::rng::seeded(17);
        let mut checked = 0;
        for trial in 0..80 {
            let n = 2 + trial % 3;
            // Convex games keep the core nonempty and wide; dense games add
            // thin and empty cores (the latter are skipped).
            let game = if trial % 2 == 0 {
                convex_game(n, &mut rng).unwrap()
            } else {
                random_dense_game(n, &mut rng).unwrap()
            };
            if core_is_empty(&game).unwrap() {
                continue;
            }
            let y = Array1::from_shape_fn(n, |_| rng.gen_range(-1.0..2.0));
            let want = project_active_set(&y, &core_constraints(&game).unwrap()).unwrap();
            let got = project_onto_core(&game, &y, 1e-10, None).unwrap();
            assert_abs_diff_eq!(got, want, epsilon = 1e-7);
            checked += 1;
        }
        assert!(checked >= 30, "only {checked} trials had a nonempty core");
    }

    #[test]
    fn empty_polyhedron_is_detected() {
        // Majority game: every pair demands the whole budget.
        let g = InstantaneousGame::from_table(
            3,
            vec![0.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 1.0],
        )
        .unwrap();
        let err = project_onto_core(&g, &array![0.4, 0.3, 0.3], 1e-9, None).unwrap_err();
        match err {
            TrackError::InfeasiblePolyhedron { violation } => {
                assert!(violation > 0.1, "violation {violation}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_masks_and_lengths() {
        let y = array![0.0, 0.0];
        assert!(matches!(
            project_onto_polyhedron(&y, 1.0, &[(0, 0.0)], 1e-9, None),
            Err(TrackError::InvalidConfig(_))
        ));
        assert!(matches!(
            project_onto_polyhedron(&y, 1.0, &[(0b100, 0.0)], 1e-9, None),
            Err(TrackError::InvalidConfig(_))
        ));
    }
}
