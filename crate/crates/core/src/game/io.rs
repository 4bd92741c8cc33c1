//! JSON form of a dense game: `{"n_agents": N, "values": {"<mask>": v}}`
//! with decimal mask keys covering `1..2^N-1`; the empty coalition is
//! implicit and always 0.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{GameError, InstantaneousGame};

#[derive(Serialize, Deserialize)]
struct GameJson {
    n_agents: usize,
    values: BTreeMap<String, f64>,
}

pub fn game_to_json(game: &InstantaneousGame) -> Result<String, GameError> {
    let dense = game.to_dense()?;
    let values = dense
        .coalitions()
        .skip(1)
        .map(|s| (s.mask().to_string(), dense.value_unchecked(s.mask())))
        .collect();
    Ok(serde_json::to_string_pretty(&GameJson {
        n_agents: dense.n_agents(),
        values,
    })?)
}

/// Parse a game. Missing or malformed values are preserved as such so
/// [`super::validate_game`] can report them; only structurally impossible
/// input (bad keys, out-of-range masks, oversized `n_agents`) errors here.
pub fn game_from_json(text: &str) -> Result<InstantaneousGame, GameError> {
    let raw: GameJson = serde_json::from_str(text)?;
    let mut entries = BTreeMap::new();
    for (key, value) in &raw.values {
        let mask: u64 = key
            .parse()
            .map_err(|_| GameError::BadMaskKey(key.clone()))?;
        entries.insert(mask, *value);
    }
    InstantaneousGame::from_map(raw.n_agents, &entries)
}
