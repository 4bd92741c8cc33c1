//! Canonical fixture games and seeded random generators.

use rand::Rng;

use super::{Coalition, DynamicGame, GameError, InstantaneousGame};
use crate::rng::seeded;

/// Three agents; agent 0 holds a left glove, agents 1 and 2 right gloves.
/// A coalition is worth 1 exactly when it can form a pair.
pub fn glove_game() -> InstantaneousGame {
    InstantaneousGame::from_fn(3, |s| {
        if s.contains(0) && (s.contains(1) || s.contains(2)) {
            1.0
        } else {
            0.0
        }
    })
    .unwrap()
    .to_dense()
    .unwrap()
}

/// `v(S)` is the sum of per-agent worths; no agent interaction.
pub fn additive_game(worths: &[f64]) -> Result<InstantaneousGame, GameError> {
    let n = worths.len();
    let w = worths.to_vec();
    InstantaneousGame::from_fn(n, move |s| s.members().map(|i| w[i]).sum())?.to_dense()
}

/// Fully symmetric game `v(S) = |S|`.
pub fn count_game(n: usize) -> Result<InstantaneousGame, GameError> {
    InstantaneousGame::from_fn(n, |s| s.size() as f64)?.to_dense()
}

/// Every nonempty coalition value drawn independently from `U[0,1]`.
pub fn random_dense_game<R: Rng>(n: usize, rng: &mut R) -> Result<InstantaneousGame, GameError> {
    let mut table = vec![0.0; 1 << n];
    for entry in table.iter_mut().skip(1) {
        *entry = rng.gen_range(0.0..1.0);
    }
    InstantaneousGame::from_table(n, table)
}

/// Near-symmetric random game: proper coalitions are worth roughly their
/// share `|S|/n` of the grand value 1, jittered by a relative `spread`.
pub fn near_symmetric_game<R: Rng>(
    n: usize,
    spread: f64,
    rng: &mut R,
) -> Result<InstantaneousGame, GameError> {
    let size = 1usize << n;
    let mut table = vec![0.0; size];
    for (mask, entry) in table.iter_mut().enumerate().skip(1) {
        let share = Coalition::from_mask(mask as u64).size() as f64 / n as f64;
        *entry = share * (1.0 + spread * rng.gen_range(-1.0..1.0));
    }
    table[size - 1] = 1.0;
    InstantaneousGame::from_table(n, table)
}

/// Random convex (supermodular) game: `v(S) = (sum of member weights)^2`
/// with positive random weights, normalized so the grand coalition is worth
/// 1. Convex games always have a non-empty core containing their Shapley
/// value, which makes them reliable core-tracking fixtures.
pub fn convex_game<R: Rng>(n: usize, rng: &mut R) -> Result<InstantaneousGame, GameError> {
    let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    let total: f64 = weights.iter().sum();
    let size = 1usize << n;
    let mut table = vec![0.0; size];
    for (mask, entry) in table.iter_mut().enumerate().skip(1) {
        let sum: f64 = Coalition::from_mask(mask as u64)
            .members()
            .map(|i| weights[i])
            .sum();
        *entry = (sum / total) * (sum / total);
    }
    InstantaneousGame::from_table(n, table)
}

/// Append one agent that contributes nothing to any coalition.
pub fn append_dummy(game: &InstantaneousGame) -> Result<InstantaneousGame, GameError> {
    let dense = game.to_dense()?;
    let n = dense.n_agents();
    let old = Coalition::grand(n).mask();
    let table = (0..1u64 << (n + 1))
        .map(|mask| dense.value_unchecked(mask & old))
        .collect();
    InstantaneousGame::from_table(n + 1, table)
}

/// Dynamic game whose step-to-step value changes are bounded by `eps`:
/// each coalition follows `v^k(S) = base(S) + eps * w_k(S)` with `w` a
/// reflected random walk in `[-1, 1]` and increments drawn from `U(-1, 1)`.
///
/// The walk path depends only on `seed`, so sweeps over `eps` with a shared
/// seed are coupled sample-for-sample.
pub fn drifting_game(
    base: &InstantaneousGame,
    horizon: usize,
    eps: f64,
    seed: u64,
) -> Result<DynamicGame, GameError> {
    let dense = base.to_dense()?;
    let n = dense.n_agents();
    let size = 1usize << n;
    let mut rng = seeded(seed);
    let mut walk = vec![0.0f64; size];
    let mut games = Vec::with_capacity(horizon);
    for k in 0..horizon {
        if k > 0 {
            for w in walk.iter_mut().skip(1) {
                *w += rng.gen_range(-1.0..1.0);
                if *w > 1.0 {
                    *w = 2.0 - *w;
                }
                if *w < -1.0 {
                    *w = -2.0 - *w;
                }
            }
        }
        let table = (0..size)
            .map(|m| {
                if m == 0 {
                    0.0
                } else {
                    dense.value_unchecked(m as u64) + eps * walk[m]
                }
            })
            .collect();
        games.push(InstantaneousGame::from_table(n, table)?);
    }
    DynamicGame::new(games)
}
