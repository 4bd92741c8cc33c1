//! Slow reference solvers that certify the fast paths.
//!
//! Everything here enumerates: active constraint subsets for projections,
//! constraint bases for core vertices, and polytope vertices for the market
//! clearing LP. The cost is exponential, which is the point: these
//! implementations are short enough to audit and share no code with the
//! solvers they check. Intended for small instances, mostly in tests.

use thiserror::Error;

use crate::game::{Coalition, GameError, InstantaneousGame, PayoffVector};

/// Agent cap for constraint-enumeration oracles (the core of an `n`-agent
/// game has `2^n - 2` inequality constraints).
pub const MAX_ORACLE_AGENTS: usize = 6;
/// Variable cap for the transportation-LP vertex oracle.
pub const MAX_TRANSPORT_VARS: usize = 9;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("{0} agents exceed the oracle cap of {MAX_ORACLE_AGENTS}")]
    TooManyAgents(usize),
    #[error(
        "{buyers} buyers x {sellers} sellers exceed the transport oracle cap \
         of {MAX_TRANSPORT_VARS} trade variables"
    )]
    TooManyTradeVariables { buyers: usize, sellers: usize },
    #[error("no active set produced a certified projection (degenerate constraints)")]
    NoCertificate,
    #[error(transparent)]
    Game(#[from] GameError),
}

/// A polyhedron `{ x : 1'x = eq_rhs, sum_{j in S} x_j >= rhs_S }` with the
/// inequality coalitions stored as bitmasks.
#[derive(Debug, Clone)]
pub struct LinearConstraints {
    pub n: usize,
    pub eq_rhs: f64,
    /// `(coalition mask, right-hand side)` per inequality.
    pub ineqs: Vec<(u64, f64)>,
}

impl LinearConstraints {
    /// Worst constraint violation at `x`: the absolute equality residual or
    /// the largest inequality shortfall, whichever is bigger.
    pub fn max_violation(&self, x: &PayoffVector) -> f64 {
        let eq_gap = (x.sum() - self.eq_rhs).abs();
        let mut worst = eq_gap;
        for &(mask, rhs) in &self.ineqs {
            let paid: f64 = Coalition::from_mask(mask).members().map(|i| x[i]).sum();
            worst = worst.max(rhs - paid);
        }
        worst
    }

    pub fn satisfied(&self, x: &PayoffVector, tol: f64) -> bool {
        self.max_violation(x) <= tol
    }
}

fn check_oracle_size(game: &InstantaneousGame) -> Result<usize, OracleError> {
    let n = game.n_agents();
    if n > MAX_ORACLE_AGENTS {
        return Err(OracleError::TooManyAgents(n));
    }
    Ok(n)
}

/// Constraints of agent `owner`'s bounding set: efficiency plus one
/// inequality per proper coalition containing the owner.
pub fn bounding_set_constraints(
    game: &InstantaneousGame,
    owner: usize,
) -> Result<LinearConstraints, OracleError> {
    let n = check_oracle_size(game)?;
    if owner >= n {
        return Err(GameError::AgentOutOfRange { agent: owner, n }.into());
    }
    let grand = Coalition::grand(n).mask();
    let mut ineqs = Vec::new();
    for mask in 1..grand {
        if mask & (1 << owner) != 0 {
            ineqs.push((mask, game.value_unchecked(mask)));
        }
    }
    Ok(LinearConstraints {
        n,
        eq_rhs: game.grand_value(),
        ineqs,
    })
}

/// Constraints of the full core: efficiency plus one inequality per proper
/// nonempty coalition.
pub fn core_constraints(game: &InstantaneousGame) -> Result<LinearConstraints, OracleError> {
    let n = check_oracle_size(game)?;
    let grand = Coalition::grand(n).mask();
    let ineqs = (1..grand)
        .map(|mask| (mask, game.value_unchecked(mask)))
        .collect();
    Ok(LinearConstraints {
        n,
        eq_rhs: game.grand_value(),
        ineqs,
    })
}

/// Gaussian elimination with partial pivoting; `None` on a singular system.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let scale: f64 = a
        .iter()
        .flatten()
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot_row][col].abs() <= 1e-11 * scale {
            return None;
        }
        a.swap(col, pivot_row);
        b.swap(col, pivot_row);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for col in (0..n).rev() {
        let mut v = b[col];
        for k in (col + 1)..n {
            v -= a[col][k] * x[k];
        }
        x[col] = v / a[col][col];
    }
    Some(x)
}

/// Visit every `k`-element index combination of `0..m` in lexicographic
/// order.
fn for_each_combination(m: usize, k: usize, mut f: impl FnMut(&[usize])) {
    if k > m {
        return;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        f(&idx);
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + m - k {
                break;
            }
            if i == 0 {
                return;
            }
        }
        idx[i] += 1;
        for j in (i + 1)..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn mask_dot(mask: u64, x: &PayoffVector) -> f64 {
    Coalition::from_mask(mask).members().map(|i| x[i]).sum()
}

const FEAS_TOL: f64 = 1e-8;
const DUAL_TOL: f64 = 1e-9;

/// Euclidean projection of `y` onto the polyhedron by active-set
/// enumeration: for every subset of at most `n - 1` inequalities, solve the
/// KKT equality system with those constraints (plus efficiency) active and
/// accept the candidate if it is primal feasible with nonnegative
/// inequality multipliers. The accepted candidate closest to `y` is the
/// projection.
pub fn project_active_set(
    y: &PayoffVector,
    cons: &LinearConstraints,
) -> Result<PayoffVector, OracleError> {
    let n = cons.n;
    if y.len() != n {
        return Err(GameError::AgentOutOfRange { agent: y.len(), n }.into());
    }
    let m = cons.ineqs.len();
    let mut best: Option<(f64, PayoffVector)> = None;

    let mut try_active = |active: &[usize]| {
        // Normal rows: active inequalities then the efficiency hyperplane.
        let p = active.len() + 1;
        let masks: Vec<u64> = active
            .iter()
            .map(|&j| cons.ineqs[j].0)
            .chain(std::iter::once(Coalition::grand(n).mask()))
            .collect();
        let rhs: Vec<f64> = active
            .iter()
            .map(|&j| cons.ineqs[j].1)
            .chain(std::iter::once(cons.eq_rhs))
            .collect();
        // Gram matrix G[a][b] = |S_a intersect S_b| and target r - B y.
        let gram: Vec<Vec<f64>> = masks
            .iter()
            .map(|&ma| {
                masks
                    .iter()
                    .map(|&mb| (ma & mb).count_ones() as f64)
                    .collect()
            })
            .collect();
        let target: Vec<f64> = (0..p).map(|a| rhs[a] - mask_dot(masks[a], y)).collect();
        let Some(nu) = solve_dense(gram, target) else {
            return;
        };
        if nu[..p - 1].iter().any(|&l| l < -DUAL_TOL) {
            return;
        }
        let mut x = y.clone();
        for (a, &mask) in masks.iter().enumerate() {
            for i in Coalition::from_mask(mask).members() {
                x[i] += nu[a];
            }
        }
        if !cons.satisfied(&x, FEAS_TOL) {
            return;
        }
        let dist: f64 = (&x - y).iter().map(|d| d * d).sum();
        if best.as_ref().map_or(true, |(d, _)| dist < *d) {
            best = Some((dist, x));
        }
    };

    for k in 0..n.min(m + 1) {
        for_each_combination(m, k, &mut try_active);
    }
    best.map(|(_, x)| x).ok_or(OracleError::NoCertificate)
}

/// All vertices of the core polytope, deduplicated. Empty exactly when the
/// core is empty (the core is bounded, so if nonempty it has a vertex).
pub fn core_vertices(game: &InstantaneousGame) -> Result<Vec<PayoffVector>, OracleError> {
    let cons = core_constraints(game)?;
    let n = cons.n;
    let m = cons.ineqs.len();
    let mut vertices: Vec<PayoffVector> = Vec::new();
    for_each_combination(m, n - 1, |active| {
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        a.push(vec![1.0; n]);
        b.push(cons.eq_rhs);
        for &j in active {
            let (mask, rhs) = cons.ineqs[j];
            a.push((0..n).map(|i| ((mask >> i) & 1) as f64).collect());
            b.push(rhs);
        }
        let Some(x) = solve_dense(a, b) else {
            return;
        };
        let x = PayoffVector::from_vec(x);
        if !cons.satisfied(&x, FEAS_TOL) {
            return;
        }
        let seen = vertices.iter().any(|v| {
            (v - &x).iter().map(|d| d * d).sum::<f64>().sqrt() <= 1e-7
        });
        if !seen {
            vertices.push(x);
        }
    });
    Ok(vertices)
}

/// Whether the core is empty, decided by vertex enumeration.
pub fn core_is_empty(game: &InstantaneousGame) -> Result<bool, OracleError> {
    Ok(core_vertices(game)?.is_empty())
}

/// Maximum trade welfare between `buyers` and `sellers`, each given as
/// `(unit price, capacity)`, by enumerating the vertices of the
/// transportation polytope `{ q >= 0, row sums <= buyer caps, column sums
/// <= seller caps }` and maximizing `sum (bid_b - ask_s) * q_bs`.
pub fn transport_welfare(
    buyers: &[(f64, f64)],
    sellers: &[(f64, f64)],
) -> Result<f64, OracleError> {
    let nb = buyers.len();
    let ns = sellers.len();
    if nb == 0 || ns == 0 {
        return Ok(0.0);
    }
    let m = nb * ns;
    if m > MAX_TRANSPORT_VARS {
        return Err(OracleError::TooManyTradeVariables {
            buyers: nb,
            sellers: ns,
        });
    }
    // Constraint rows over the flattened q (row-major buyer x seller), all
    // written as a.q <= rhs: buyer capacities, seller capacities, then
    // -q_bs <= 0.
    let mut rows: Vec<(Vec<f64>, f64)> = Vec::with_capacity(nb + ns + m);
    for (b, &(_, cap)) in buyers.iter().enumerate() {
        let mut a = vec![0.0; m];
        for s in 0..ns {
            a[b * ns + s] = 1.0;
        }
        rows.push((a, cap));
    }
    for (s, &(_, cap)) in sellers.iter().enumerate() {
        let mut a = vec![0.0; m];
        for b in 0..nb {
            a[b * ns + s] = 1.0;
        }
        rows.push((a, cap));
    }
    for v in 0..m {
        let mut a = vec![0.0; m];
        a[v] = -1.0;
        rows.push((a, 0.0));
    }

    let margin: Vec<f64> = (0..m)
        .map(|v| buyers[v / ns].0 - sellers[v % ns].0)
        .collect();
    let mut best = 0.0f64;
    for_each_combination(rows.len(), m, |active| {
        let a: Vec<Vec<f64>> = active.iter().map(|&r| rows[r].0.clone()).collect();
        let b: Vec<f64> = active.iter().map(|&r| rows[r].1).collect();
        let Some(q) = solve_dense(a, b) else {
            return;
        };
        let feasible = rows.iter().all(|(a, rhs)| {
            let lhs: f64 = a.iter().zip(&q).map(|(c, v)| c * v).sum();
            lhs <= rhs + FEAS_TOL
        });
        if !feasible {
            return;
        }
        let welfare: f64 = margin.iter().zip(&q).map(|(g, v)| g * v).sum();
        best = best.max(welfare);
    });
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::generate::{count_game, glove_game, random_dense_game};
    use crate::rng::seeded;
    use crate::tracking::project_bounding_set;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::Rng;

    fn two_agent_game() -> InstantaneousGame {
        InstantaneousGame::from_table(2, vec![0.0, 0.2, 0.3, 1.0]).unwrap()
    }

    fn majority_game() -> InstantaneousGame {
        InstantaneousGame::from_fn(3, |s| if s.size() >= 2 { 1.0 } else { 0.0 })
            .unwrap()
            .to_dense()
            .unwrap()
    }

    #[test]
    fn combinations_visit_each_subset_once() {
        let mut seen = Vec::new();
        for_each_combination(5, 3, |c| seen.push(c.to_vec()));
        assert_eq!(seen.len(), 10);
        seen.dedup();
        assert_eq!(seen.len(), 10);
        let mut none = 0;
        for_each_combination(4, 0, |_| none += 1);
        assert_eq!(none, 1);
        for_each_combination(2, 3, |_| panic!("no combinations of 3 from 2"));
    }

    #[test]
    fn solver_handles_permuted_identity_and_rejects_singular() {
        let a = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
        let x = solve_dense(a, vec![3.0, 4.0]).unwrap();
        assert_abs_diff_eq!(x[0], 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 3.0, epsilon = 1e-12);
        let singular = vec![vec![1.0, 1.0], vec![2.0, 2.0]];
        assert!(solve_dense(singular, vec![1.0, 2.0]).is_none());
    }

    #[test]
    fn glove_core_is_the_single_left_glove_point() {
        let vs = core_vertices(&glove_game()).unwrap();
        assert_eq!(vs.len(), 1);
        assert_abs_diff_eq!(vs[0].clone(), array![1.0, 0.0, 0.0], epsilon = 1e-9);
        assert!(!core_is_empty(&glove_game()).unwrap());
    }

    #[test]
    fn counting_game_core_is_even_split() {
        let vs = core_vertices(&count_game(3).unwrap()).unwrap();
        assert_eq!(vs.len(), 1);
        assert_abs_diff_eq!(vs[0].clone(), array![1.0, 1.0, 1.0], epsilon = 1e-9);
    }

    #[test]
    fn two_agent_core_segment_has_two_vertices() {
        let mut vs = core_vertices(&two_agent_game()).unwrap();
        vs.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        assert_eq!(vs.len(), 2);
        assert_abs_diff_eq!(vs[0].clone(), array![0.2, 0.8], epsilon = 1e-9);
        assert_abs_diff_eq!(vs[1].clone(), array![0.7, 0.3], epsilon = 1e-9);
    }

    #[test]
    fn majority_game_core_is_empty() {
        assert!(core_is_empty(&majority_game()).unwrap());
    }

    #[test]
    fn single_agent_core_is_its_grand_value() {
        let game = InstantaneousGame::from_table(1, vec![0.0, 2.5]).unwrap();
        let vs = core_vertices(&game).unwrap();
        assert_eq!(vs.len(), 1);
        assert_abs_diff_eq!(vs[0][0], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_matches_hand_kkt_on_two_agents() {
        let cons = bounding_set_constraints(&two_agent_game(), 0).unwrap();
        let p = project_active_set(&array![0.0, 0.0], &cons).unwrap();
        assert_abs_diff_eq!(p, array![0.5, 0.5], epsilon = 1e-9);
        // Inside the set: projection is the identity.
        let q = project_active_set(&array![0.6, 0.4], &cons).unwrap();
        assert_abs_diff_eq!(q, array![0.6, 0.4], epsilon = 1e-9);
    }

    #[test]
    fn projection_onto_singleton_core_returns_the_point() {
        let cons = core_constraints(&glove_game()).unwrap();
        let p = project_active_set(&array![0.0, 0.5, 0.5], &cons).unwrap();
        assert_abs_diff_eq!(p, array![1.0, 0.0, 0.0], epsilon = 1e-8);
    }

    #[test]
    fn active_set_projection_agrees_with_dykstra() {
        let mut rng = seeded(41);
        for trial in 0..30 {
            let n = 2 + trial % 3;
            let game = random_dense_game(n, &mut rng).unwrap();
            let owner = trial % n;
            let y =
                PayoffVector::from_shape_fn(n, |_| rng.gen_range(-1.0..1.5));
            let cons = bounding_set_constraints(&game, owner).unwrap();
            let oracle = project_active_set(&y, &cons).unwrap();
            let fast = project_bounding_set(&y, &game, owner, 1e-10, None).unwrap();
            let dev: f64 = (&oracle - &fast).iter().map(|d| d * d).sum::<f64>().sqrt();
            assert!(
                dev <= 1e-6,
                "trial {trial}: oracle {oracle} vs dykstra {fast} deviate by {dev}"
            );
        }
    }

    #[test]
    fn oracle_size_caps() {
        let game = InstantaneousGame::from_fn(7, |s| s.size() as f64).unwrap();
        assert!(matches!(
            core_constraints(&game),
            Err(OracleError::TooManyAgents(7))
        ));
        let buyers = vec![(1.0, 1.0); 5];
        let sellers = vec![(0.5, 1.0); 2];
        assert!(matches!(
            transport_welfare(&buyers, &sellers),
            Err(OracleError::TooManyTradeVariables { .. })
        ));
    }

    #[test]
    fn transport_worked_example() {
        let sellers = [(0.1, 5.0), (0.3, 3.0)];
        let buyers = [(0.5, 4.0), (0.2, 6.0)];
        let w = transport_welfare(&buyers, &sellers).unwrap();
        assert_abs_diff_eq!(w, 1.7, epsilon = 1e-9);
    }

    #[test]
    fn transport_edge_cases() {
        assert_eq!(transport_welfare(&[], &[(0.1, 5.0)]).unwrap(), 0.0);
        assert_eq!(transport_welfare(&[(0.5, 4.0)], &[]).unwrap(), 0.0);
        // Ask above bid: no profitable trade.
        let w = transport_welfare(&[(0.2, 6.0)], &[(0.3, 3.0)]).unwrap();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-12);
        // Single profitable pair: quantity limited by the smaller capacity.
        let w = transport_welfare(&[(0.5, 2.0)], &[(0.1, 5.0)]).unwrap();
        assert_abs_diff_eq!(w, 0.4 * 2.0, epsilon = 1e-9);
        // Zero capacity trades nothing even at a positive margin.
        let w = transport_welfare(&[(0.5, 0.0)], &[(0.1, 5.0)]).unwrap();
        assert_abs_diff_eq!(w, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn transport_handles_duplicate_prices() {
        let sellers = [(0.1, 2.0), (0.1, 2.0), (0.1, 2.0)];
        let buyers = [(0.4, 3.0), (0.4, 3.0), (0.4, 3.0)];
        let w = transport_welfare(&buyers, &sellers).unwrap();
        assert_abs_diff_eq!(w, 0.3 * 6.0, epsilon = 1e-9);
    }
}
