//! Coalitions, instantaneous games, and time-indexed sequences of them.
//!
//! A transferable-utility game assigns a real value `v(S)` to every coalition
//! `S` of the agents `0..n`, with `v(empty) = 0`. Values are held either as a
//! dense table indexed by bitmask (exact methods need this) or as a callable
//! evaluated on demand.

mod io;

pub mod generate;

pub use io::{game_from_json, game_to_json};

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use thiserror::Error;

/// Allocation proposal for all agents, one entry per agent.
pub type PayoffVector = Array1<f64>;

/// Stacked proposals, row `i` holding agent `i`'s allocation proposal.
pub type PayoffMatrix = Array2<f64>;

/// Dense tables hold `2^n` entries; beyond this the callable form is required.
pub const MAX_DENSE_AGENTS: usize = 20;

#[derive(Debug, Error)]
pub enum GameError {
    #[error("game needs at least one agent")]
    ZeroAgents,
    #[error("{n} agents exceed the dense-table cap of {cap}; use a callable game")]
    TooManyAgents { n: usize, cap: usize },
    #[error("value table has {got} entries, expected {expected}")]
    TableSize { expected: usize, got: usize },
    #[error("empty coalition must have value 0, got {0}")]
    NonzeroEmptyValue(f64),
    #[error("coalition mask {mask} is out of range for {n} agents")]
    MaskOutOfRange { mask: u64, n: usize },
    #[error("agent {agent} is out of range for {n} agents")]
    AgentOutOfRange { agent: usize, n: usize },
    #[error("game at step {step} has {got} agents, expected {expected}")]
    MixedAgentCounts {
        step: usize,
        expected: usize,
        got: usize,
    },
    #[error("dynamic game needs at least one step")]
    EmptyHorizon,
    #[error("coalition mask key {0:?} is not a decimal integer")]
    BadMaskKey(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Set of agents encoded as a bitmask: bit `i` set means agent `i` belongs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Coalition(u64);

impl Coalition {
    pub const EMPTY: Coalition = Coalition(0);

    pub fn from_mask(mask: u64) -> Self {
        Coalition(mask)
    }

    pub fn singleton(agent: usize) -> Self {
        Coalition(1 << agent)
    }

    pub fn from_members(members: &[usize]) -> Self {
        Coalition(members.iter().fold(0, |m, &i| m | (1 << i)))
    }

    /// All agents `0..n`.
    pub fn grand(n: usize) -> Self {
        Coalition(if n == 64 { u64::MAX } else { (1 << n) - 1 })
    }

    pub fn mask(self) -> u64 {
        self.0
    }

    pub fn contains(self, agent: usize) -> bool {
        agent < 64 && self.0 & (1 << agent) != 0
    }

    pub fn with(self, agent: usize) -> Self {
        Coalition(self.0 | (1 << agent))
    }

    pub fn without(self, agent: usize) -> Self {
        Coalition(self.0 & !(1 << agent))
    }

    pub fn size(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: Coalition) -> bool {
        self.0 & !other.0 == 0
    }

    /// Member agents in ascending order.
    pub fn members(self) -> impl Iterator<Item = usize> {
        let mut rest = self.0;
        std::iter::from_fn(move || {
            if rest == 0 {
                None
            } else {
                let i = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(i)
            }
        })
    }
}

impl fmt::Display for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (pos, i) in self.members().enumerate() {
            if pos > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, "}}")
    }
}

impl fmt::Debug for Coalition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Coalition({self})")
    }
}

#[derive(Clone)]
enum Values {
    Dense {
        table: Vec<f64>,
        /// Masks that were absent when built from a partial map; kept so
        /// validation can tell "missing" apart from an explicit non-finite.
        absent: Vec<u64>,
    },
    Callable(Arc<dyn Fn(Coalition) -> f64 + Send + Sync>),
}

/// One game instance `(I, v)`: an agent count and a characteristic function.
#[derive(Clone)]
pub struct InstantaneousGame {
    n: usize,
    values: Values,
}

impl fmt::Debug for InstantaneousGame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let form = match self.values {
            Values::Dense { .. } => "dense",
            Values::Callable(_) => "callable",
        };
        write!(f, "InstantaneousGame(n={}, {form})", self.n)
    }
}

impl InstantaneousGame {
    /// Dense game from a table indexed by coalition mask (`table[0]` is the
    /// empty coalition and must be 0).
    pub fn from_table(n: usize, table: Vec<f64>) -> Result<Self, GameError> {
        check_dense_size(n)?;
        let expected = 1usize << n;
        if table.len() != expected {
            return Err(GameError::TableSize {
                expected,
                got: table.len(),
            });
        }
        if table[0] != 0.0 {
            return Err(GameError::NonzeroEmptyValue(table[0]));
        }
        Ok(InstantaneousGame {
            n,
            values: Values::Dense {
                table,
                absent: Vec::new(),
            },
        })
    }

    /// Dense game from a partial `mask -> value` map. Entries may be missing
    /// or ill-valued; [`validate_game`] reports them, so this constructor only
    /// rejects masks that cannot exist at all.
    pub fn from_map(
        n: usize,
        entries: &BTreeMap<u64, f64>,
    ) -> Result<Self, GameError> {
        check_dense_size(n)?;
        let size = 1usize << n;
        let mut table = vec![f64::NAN; size];
        table[0] = 0.0;
        for (&mask, &value) in entries {
            if mask >= size as u64 {
                return Err(GameError::MaskOutOfRange { mask, n });
            }
            table[mask as usize] = value;
        }
        let absent = (1..size as u64)
            .filter(|m| !entries.contains_key(m))
            .collect();
        Ok(InstantaneousGame {
            n,
            values: Values::Dense { table, absent },
        })
    }

    /// Callable game; the empty coalition is forced to 0 regardless of `f`.
    pub fn from_fn<F>(n: usize, f: F) -> Result<Self, GameError>
    where
        F: Fn(Coalition) -> f64 + Send + Sync + 'static,
    {
        if n == 0 {
            return Err(GameError::ZeroAgents);
        }
        if n > 64 {
            return Err(GameError::TooManyAgents { n, cap: 64 });
        }
        Ok(InstantaneousGame {
            n,
            values: Values::Callable(Arc::new(move |s: Coalition| {
                if s.is_empty() {
                    0.0
                } else {
                    f(s)
                }
            })),
        })
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn grand_coalition(&self) -> Coalition {
        Coalition::grand(self.n)
    }

    pub fn grand_value(&self) -> f64 {
        self.value_unchecked(self.grand_coalition().mask())
    }

    /// Value of a coalition; rejects members outside `0..n`.
    pub fn value(&self, s: Coalition) -> Result<f64, GameError> {
        if !s.is_subset_of(self.grand_coalition()) {
            let agent = s
                .members()
                .find(|&i| i >= self.n)
                .expect("some member is out of range");
            return Err(GameError::AgentOutOfRange { agent, n: self.n });
        }
        Ok(self.value_unchecked(s.mask()))
    }

    /// Unchecked table/callable lookup for enumeration loops that already
    /// iterate masks in range.
    pub(crate) fn value_unchecked(&self, mask: u64) -> f64 {
        debug_assert!(Coalition::from_mask(mask).is_subset_of(self.grand_coalition()));
        match &self.values {
            Values::Dense { table, .. } => table[mask as usize],
            Values::Callable(f) => f(Coalition::from_mask(mask)),
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.values, Values::Dense { .. })
    }

    /// Materialize a callable game into a dense table (subject to the cap).
    pub fn to_dense(&self) -> Result<Self, GameError> {
        match &self.values {
            Values::Dense { .. } => Ok(self.clone()),
            Values::Callable(_) => {
                check_dense_size(self.n)?;
                let table = (0..1u64 << self.n)
                    .map(|m| self.value_unchecked(m))
                    .collect();
                InstantaneousGame::from_table(self.n, table)
            }
        }
    }

    /// All `2^n` coalitions in ascending mask order.
    pub fn coalitions(&self) -> impl Iterator<Item = Coalition> {
        (0..1u64 << self.n).map(Coalition::from_mask)
    }

    fn absent_masks(&self) -> &[u64] {
        match &self.values {
            Values::Dense { absent, .. } => absent,
            Values::Callable(_) => &[],
        }
    }
}

fn check_dense_size(n: usize) -> Result<(), GameError> {
    if n == 0 {
        Err(GameError::ZeroAgents)
    } else if n > MAX_DENSE_AGENTS {
        Err(GameError::TooManyAgents {
            n,
            cap: MAX_DENSE_AGENTS,
        })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonzeroEmptyValue(f64),
    MissingCoalition(Coalition),
    NonFiniteValue(Coalition, f64),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonzeroEmptyValue(v) => {
                write!(f, "empty coalition has value {v}, expected 0")
            }
            Violation::MissingCoalition(s) => write!(f, "missing coalition {s}"),
            Violation::NonFiniteValue(s, v) => {
                write!(f, "coalition {s} has non-finite value {v}")
            }
        }
    }
}

/// Check a game for structural problems. Dense games are checked entry by
/// entry; callable games with more agents than the dense cap are probed on
/// the empty set, singletons, and the grand coalition only.
pub fn validate_game(game: &InstantaneousGame) -> Vec<Violation> {
    let mut out = Vec::new();
    let empty = game.value_unchecked(0);
    if empty != 0.0 {
        out.push(Violation::NonzeroEmptyValue(empty));
    }
    let absent = game.absent_masks();
    if game.n <= MAX_DENSE_AGENTS {
        for s in game.coalitions().skip(1) {
            if absent.binary_search(&s.mask()).is_ok() {
                out.push(Violation::MissingCoalition(s));
                continue;
            }
            let v = game.value_unchecked(s.mask());
            if !v.is_finite() {
                out.push(Violation::NonFiniteValue(s, v));
            }
        }
    } else {
        let probes = (0..game.n)
            .map(Coalition::singleton)
            .chain([game.grand_coalition()]);
        for s in probes {
            let v = game.value_unchecked(s.mask());
            if !v.is_finite() {
                out.push(Violation::NonFiniteValue(s, v));
            }
        }
    }
    out
}

/// A finite sequence of games over a fixed agent set, one per time step.
#[derive(Debug, Clone)]
pub struct DynamicGame {
    n: usize,
    games: Vec<InstantaneousGame>,
}

impl DynamicGame {
    pub fn new(games: Vec<InstantaneousGame>) -> Result<Self, GameError> {
        let first = games.first().ok_or(GameError::EmptyHorizon)?;
        let n = first.n_agents();
        for (step, g) in games.iter().enumerate() {
            if g.n_agents() != n {
                return Err(GameError::MixedAgentCounts {
                    step,
                    expected: n,
                    got: g.n_agents(),
                });
            }
        }
        Ok(DynamicGame { n, games })
    }

    /// The same game repeated for `horizon` steps.
    pub fn from_static(game: InstantaneousGame, horizon: usize) -> Result<Self, GameError> {
        if horizon == 0 {
            return Err(GameError::EmptyHorizon);
        }
        DynamicGame::new(vec![game; horizon])
    }

    pub fn n_agents(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.games.len()
    }

    pub fn game(&self, k: usize) -> &InstantaneousGame {
        &self.games[k]
    }

    pub fn iter(&self) -> impl Iterator<Item = &InstantaneousGame> {
        self.games.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use generate::glove_game;

    #[test]
    fn coalition_membership_and_size() {
        let s = Coalition::from_members(&[0, 2]);
        assert_eq!(s.mask(), 0b101);
        assert!(s.contains(0));
        assert!(!s.contains(1));
        assert_eq!(s.size(), 2);
        assert_eq!(s.members().collect::<Vec<_>>(), vec![0, 2]);
        assert_eq!(format!("{s}"), "{0,2}");
    }

    #[test]
    fn grand_coalition_masks() {
        assert_eq!(Coalition::grand(3).mask(), 0b111);
        assert!(Coalition::singleton(2).is_subset_of(Coalition::grand(3)));
        assert!(!Coalition::singleton(3).is_subset_of(Coalition::grand(3)));
    }

    #[test]
    fn glove_values() {
        let g = glove_game();
        let v = |members: &[usize]| g.value(Coalition::from_members(members)).unwrap();
        assert_eq!(v(&[0, 1]), 1.0);
        assert_eq!(v(&[1, 2]), 0.0);
        assert_eq!(v(&[0]), 0.0);
        assert_eq!(g.value(Coalition::EMPTY).unwrap(), 0.0);
        assert_eq!(g.grand_value(), 1.0);
    }

    #[test]
    fn out_of_range_member_is_rejected() {
        let g = glove_game();
        let err = g.value(Coalition::from_members(&[0, 3])).unwrap_err();
        assert!(matches!(err, GameError::AgentOutOfRange { agent: 3, n: 3 }));
    }

    #[test]
    fn from_table_enforces_shape_and_empty_value() {
        assert!(matches!(
            InstantaneousGame::from_table(2, vec![0.0, 1.0]),
            Err(GameError::TableSize { expected: 4, got: 2 })
        ));
        assert!(matches!(
            InstantaneousGame::from_table(1, vec![0.5, 1.0]),
            Err(GameError::NonzeroEmptyValue(_))
        ));
    }

    #[test]
    fn dense_and_callable_forms_agree() {
        let dense = glove_game();
        let callable = InstantaneousGame::from_fn(3, |s| {
            let has_left = s.contains(0);
            let has_right = s.contains(1) || s.contains(2);
            if has_left && has_right {
                1.0
            } else {
                0.0
            }
        })
        .unwrap();
        for s in dense.coalitions() {
            assert_eq!(dense.value(s).unwrap(), callable.value(s).unwrap());
        }
        let densified = callable.to_dense().unwrap();
        assert!(densified.is_dense());
        for s in dense.coalitions() {
            assert_eq!(densified.value(s).unwrap(), dense.value(s).unwrap());
        }
    }

    #[test]
    fn validate_flags_nonzero_empty() {
        let mut map = BTreeMap::new();
        map.insert(0, 0.5);
        map.insert(1, 0.2);
        map.insert(2, 0.3);
        map.insert(3, 1.0);
        let g = InstantaneousGame::from_map(2, &map).unwrap();
        let violations = validate_game(&g);
        assert_eq!(violations, vec![Violation::NonzeroEmptyValue(0.5)]);
    }

    #[test]
    fn validate_flags_missing_coalition() {
        // {0,2} (mask 5) left out of a 3-agent table.
        let mut map = BTreeMap::new();
        for mask in 1..8u64 {
            if mask != 5 {
                map.insert(mask, 1.0);
            }
        }
        let g = InstantaneousGame::from_map(3, &map).unwrap();
        let violations = validate_game(&g);
        assert_eq!(
            violations,
            vec![Violation::MissingCoalition(Coalition::from_mask(5))]
        );
    }

    #[test]
    fn validate_flags_non_finite() {
        let mut map = BTreeMap::new();
        map.insert(1, f64::INFINITY);
        map.insert(2, 0.0);
        map.insert(3, 1.0);
        let g = InstantaneousGame::from_map(2, &map).unwrap();
        let violations = validate_game(&g);
        assert_eq!(violations.len(), 1);
        assert!(matches!(violations[0], Violation::NonFiniteValue(s, _) if s.mask() == 1));
    }

    #[test]
    fn validate_accepts_clean_game() {
        assert!(validate_game(&glove_game()).is_empty());
    }

    #[test]
    fn dense_cap_is_enforced() {
        let err = InstantaneousGame::from_table(MAX_DENSE_AGENTS + 1, vec![0.0]).unwrap_err();
        assert!(matches!(err, GameError::TooManyAgents { .. }));
    }

    #[test]
    fn dynamic_game_requires_constant_agent_count() {
        let g2 = InstantaneousGame::from_table(2, vec![0.0, 0.1, 0.2, 1.0]).unwrap();
        let g3 = glove_game();
        let err = DynamicGame::new(vec![g2.clone(), g3]).unwrap_err();
        assert!(matches!(
            err,
            GameError::MixedAgentCounts { step: 1, expected: 2, got: 3 }
        ));
        let ok = DynamicGame::from_static(g2, 5).unwrap();
        assert_eq!(ok.horizon(), 5);
        assert_eq!(ok.n_agents(), 2);
    }
}
