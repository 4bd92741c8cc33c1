//! Market scenarios that produce dynamic coalitional games.
//!
//! Two markets are modeled. In the collaborative forecasting market a
//! client scores every coalition by the absolute error of its linearly
//! pooled forecast: `v(S) = 1 - |mean_{i in S} f_i - omega|`. In the local
//! electricity market a coalition's value is the maximum trade welfare of a
//! double auction among its members, cleared by merit order. Each record or
//! snapshot becomes one instantaneous game of a [`DynamicGame`].

pub mod ingest;

pub use ingest::{ingest_timeseries, IngestResult, IngestSchema};

use thiserror::Error;

use crate::game::{Coalition, DynamicGame, GameError, InstantaneousGame};
use crate::rng::seeded;
use rand::Rng;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("agent {agent} appears more than once in the snapshot")]
    DuplicateAgent { agent: usize },
    #[error("snapshot has {got} offers but references agent {agent}; agents must be 0..n")]
    AgentOutOfRange { agent: usize, got: usize },
    #[error("agent {agent} has {what} {value}, expected finite and >= 0")]
    BadOffer {
        agent: usize,
        what: &'static str,
        value: f64,
    },
    #[error("forecast {index} is {value}, expected a capacity factor in [0, 1]")]
    BadForecast { index: usize, value: f64 },
    #[error("observation is {value}, expected a capacity factor in [0, 1]")]
    BadObservation { value: f64 },
    #[error("{name} is {value}, which is out of range")]
    BadParameter { name: &'static str, value: f64 },
    #[error("no records")]
    EmptyInput,
    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },
    #[error("row {row}: timestamp does not increase")]
    NonMonotoneTimestamp { row: usize },
    #[error("header must be {expected}")]
    BadHeader { expected: String },
    #[error("agent {agent} switches side mid-file; interpolation needs a constant side")]
    SideChanged { agent: usize },
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// Forecasts posted for one delivery interval, plus the realized value.
/// Everything is in capacity-factor units, so the interval `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub k: usize,
    pub forecasts: Vec<f64>,
    pub observation: f64,
}

impl ForecastRecord {
    pub fn new(k: usize, forecasts: Vec<f64>, observation: f64) -> Result<Self, MarketError> {
        for (index, &f) in forecasts.iter().enumerate() {
            if !(f.is_finite() && (0.0..=1.0).contains(&f)) {
                return Err(MarketError::BadForecast { index, value: f });
            }
        }
        if !(observation.is_finite() && (0.0..=1.0).contains(&observation)) {
            return Err(MarketError::BadObservation { value: observation });
        }
        Ok(ForecastRecord {
            k,
            forecasts,
            observation,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.forecasts.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Buyer,
    Seller,
}

/// One agent's standing offer: a quantity it wants to trade and its unit
/// price (bid for buyers, ask for sellers; stored positive either way).
#[derive(Debug, Clone, PartialEq)]
pub struct MarketAgentOffer {
    pub agent: usize,
    pub side: Side,
    pub quantity: f64,
    pub price: f64,
}

/// The market at one step: exactly one offer per agent. Construction sorts
/// offers by agent and precomputes the merit order (buyers by descending
/// bid, sellers by ascending ask, ties by agent index) so that coalition
/// values can be evaluated without re-sorting.
#[derive(Debug, Clone)]
pub struct MarketSnapshot {
    pub k: usize,
    offers: Vec<MarketAgentOffer>,
    buy_order: Vec<usize>,
    sell_order: Vec<usize>,
}

impl MarketSnapshot {
    pub fn new(k: usize, mut offers: Vec<MarketAgentOffer>) -> Result<Self, MarketError> {
        let n = offers.len();
        for o in &offers {
            if o.agent >= n {
                return Err(MarketError::AgentOutOfRange {
                    agent: o.agent,
                    got: n,
                });
            }
            if !(o.quantity.is_finite() && o.quantity >= 0.0) {
                return Err(MarketError::BadOffer {
                    agent: o.agent,
                    what: "quantity",
                    value: o.quantity,
                });
            }
            if !(o.price.is_finite() && o.price >= 0.0) {
                return Err(MarketError::BadOffer {
                    agent: o.agent,
                    what: "price",
                    value: o.price,
                });
            }
        }
        offers.sort_by_key(|o| o.agent);
        if let Some(w) = offers.windows(2).find(|w| w[0].agent == w[1].agent) {
            return Err(MarketError::DuplicateAgent { agent: w[0].agent });
        }
        let mut buy_order: Vec<usize> = offers
            .iter()
            .filter(|o| o.side == Side::Buyer)
            .map(|o| o.agent)
            .collect();
        buy_order.sort_by(|&a, &b| {
            offers[b].price.partial_cmp(&offers[a].price).unwrap().then(a.cmp(&b))
        });
        let mut sell_order: Vec<usize> = offers
            .iter()
            .filter(|o| o.side == Side::Seller)
            .map(|o| o.agent)
            .collect();
        sell_order.sort_by(|&a, &b| {
            offers[a].price.partial_cmp(&offers[b].price).unwrap().then(a.cmp(&b))
        });
        Ok(MarketSnapshot {
            k,
            offers,
            buy_order,
            sell_order,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.offers.len()
    }

    /// Offers sorted by agent index.
    pub fn offers(&self) -> &[MarketAgentOffer] {
        &self.offers
    }

    pub fn offer(&self, agent: usize) -> Option<&MarketAgentOffer> {
        self.offers.get(agent)
    }
}

/// Accuracy of a coalition's pooled forecast: `1 - |mean_S f - omega|`.
/// The empty coalition is worth 0 by the usual convention.
pub fn forecast_value(rec: &ForecastRecord, s: Coalition) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    let sum: f64 = s.members().map(|i| rec.forecasts[i]).sum();
    let pooled = sum / s.size() as f64;
    1.0 - (pooled - rec.observation).abs()
}

/// Maximum trade welfare within coalition `s`: clear the double auction
/// restricted to members by matching the highest remaining bid with the
/// lowest remaining ask while the bid strictly exceeds the ask. This greedy
/// merit order attains the LP optimum
/// `max sum p_i E_i` over `0 <= E_i <= quantity_i` with balanced volumes
/// (seller prices entering negatively). Coalitions without both sides are
/// worth 0.
pub fn electricity_value(snap: &MarketSnapshot, s: Coalition) -> f64 {
    let mut buyers: Vec<(f64, f64)> = snap
        .buy_order
        .iter()
        .filter(|&&a| s.contains(a))
        .map(|&a| (snap.offers[a].price, snap.offers[a].quantity))
        .collect();
    let mut sellers: Vec<(f64, f64)> = snap
        .sell_order
        .iter()
        .filter(|&&a| s.contains(a))
        .map(|&a| (snap.offers[a].price, snap.offers[a].quantity))
        .collect();
    let mut welfare = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < buyers.len() && j < sellers.len() {
        if buyers[i].1 <= 0.0 {
            i += 1;
            continue;
        }
        if sellers[j].1 <= 0.0 {
            j += 1;
            continue;
        }
        let (bid, ask) = (buyers[i].0, sellers[j].0);
        if bid <= ask {
            break;
        }
        let q = buyers[i].1.min(sellers[j].1);
        welfare += (bid - ask) * q;
        buyers[i].1 -= q;
        sellers[j].1 -= q;
    }
    welfare
}

/// Dense game over all coalitions of a forecast record. Coalition sums are
/// built incrementally (each mask extends the mask without its lowest bit),
/// so the table costs `O(2^n)`.
pub fn forecast_to_game(rec: &ForecastRecord) -> Result<InstantaneousGame, MarketError> {
    let n = rec.n_agents();
    if n == 0 {
        return Err(MarketError::EmptyInput);
    }
    if n > crate::game::MAX_DENSE_AGENTS {
        return Err(GameError::TooManyAgents {
            n,
            cap: crate::game::MAX_DENSE_AGENTS,
        }
        .into());
    }
    let size = 1usize << n;
    let mut sums = vec![0.0f64; size];
    let mut table = vec![0.0f64; size];
    for mask in 1..size {
        let low = mask.trailing_zeros() as usize;
        sums[mask] = sums[mask & (mask - 1)] + rec.forecasts[low];
        let pooled = sums[mask] / mask.count_ones() as f64;
        table[mask] = 1.0 - (pooled - rec.observation).abs();
    }
    Ok(InstantaneousGame::from_table(n, table)?)
}

/// Dense game over all coalitions of a market snapshot.
pub fn snapshot_to_game(snap: &MarketSnapshot) -> Result<InstantaneousGame, MarketError> {
    let n = snap.n_agents();
    if n == 0 {
        return Err(MarketError::EmptyInput);
    }
    if n > crate::game::MAX_DENSE_AGENTS {
        return Err(GameError::TooManyAgents {
            n,
            cap: crate::game::MAX_DENSE_AGENTS,
        }
        .into());
    }
    let table = (0..1u64 << n)
        .map(|mask| electricity_value(snap, Coalition::from_mask(mask)))
        .collect();
    Ok(InstantaneousGame::from_table(n, table)?)
}

/// One game per forecast record, in order.
pub fn forecast_records_to_dynamic(records: &[ForecastRecord]) -> Result<DynamicGame, MarketError> {
    let games = records
        .iter()
        .map(forecast_to_game)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DynamicGame::new(games)?)
}

/// One game per snapshot, in order.
pub fn snapshots_to_dynamic(snaps: &[MarketSnapshot]) -> Result<DynamicGame, MarketError> {
    let games = snaps
        .iter()
        .map(snapshot_to_game)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DynamicGame::new(games)?)
}

fn reflect_into(x: f64, lo: f64, hi: f64) -> f64 {
    let mut v = x;
    if v < lo {
        v = 2.0 * lo - v;
    }
    if v > hi {
        v = 2.0 * hi - v;
    }
    v.clamp(lo, hi)
}

/// Synthetic collaborative forecasting market.
///
/// The ground truth follows a reflected random walk in `[0, 1]` with
/// per-step increments up to `0.25 / smoothness`; larger `smoothness` means
/// a slower-moving target and hence smaller per-step game drift. Each agent
/// forecasts the truth with a persistent bias up to `noise` plus fresh
/// per-step jitter up to `noise / 2`. Deterministic in `seed`.
pub fn synthetic_forecast_scenario(
    n_agents: usize,
    horizon: usize,
    smoothness: f64,
    noise: f64,
    seed: u64,
) -> Result<DynamicGame, MarketError> {
    if !(smoothness > 0.0 && smoothness.is_finite()) {
        return Err(MarketError::BadParameter {
            name: "smoothness",
            value: smoothness,
        });
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(MarketError::BadParameter {
            name: "noise",
            value: noise,
        });
    }
    if horizon == 0 {
        return Err(MarketError::EmptyInput);
    }
    let mut rng = seeded(seed);
    let biases: Vec<f64> = (0..n_agents)
        .map(|_| noise * rng.gen_range(-1.0..1.0))
        .collect();
    let step = 0.25 / smoothness;
    let mut omega: f64 = 0.5;
    let mut games = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let forecasts: Vec<f64> = biases
            .iter()
            .map(|b| {
                let jitter = 0.5 * noise * rng.gen_range(-1.0..1.0);
                (omega + b + jitter).clamp(0.0, 1.0)
            })
            .collect();
        let rec = ForecastRecord::new(k, forecasts, omega)?;
        games.push(forecast_to_game(&rec)?);
        omega = reflect_into(omega + step * rng.gen_range(-1.0..1.0), 0.0, 1.0);
    }
    Ok(DynamicGame::new(games)?)
}

// Overlapping books: the clearing margin falls inside both bands, so the
// marginal price gap (and with it the width of the core) stays visible
// instead of collapsing when aggregate supply happens to match demand.
const ASK_BAND: (f64, f64) = (0.05, 0.3);
const BID_BAND: (f64, f64) = (0.2, 0.45);
/// The cheapest producer and the most pressed consumer walk in bands that
/// never cross the other side's: their trade never dries up, which keeps
/// the grand-coalition value (the normalizer of the tracking-error metric)
/// bounded away from zero even when the rest of the book uncrosses.
const BASE_ASK_BAND: (f64, f64) = (0.02, 0.08);
const PEAK_BID_BAND: (f64, f64) = (0.42, 0.48);
const QTY_BAND: (f64, f64) = (1.0, 5.0);
/// Per-minute walk step as a fraction of the band width. Slow enough that
/// consecutive snapshots stay correlated even at the longest supported lead
/// time; the per-snapshot drift then grows visibly with the lead.
const WALK_RATE: f64 = 0.01;

/// Synthetic local electricity market sampled at a clearing lead time.
///
/// Underlying prices and quantities evolve minute by minute as reflected
/// random walks; the first `n/2` agents sell, the rest buy. Seller `0` is a
/// cheap baseload producer and the last buyer a must-serve consumer (see
/// `BASE_ASK_BAND`); everyone else's band overlaps the other side's, so
/// individual trades come and go as prices drift. A snapshot is taken every
/// `lead_time_minutes`, so for a fixed seed the minute-level paths are
/// shared across lead times and a longer lead only widens the gap between
/// consecutive snapshots.
fn price_band(agent: usize, n_sellers: usize, n_agents: usize) -> (f64, f64) {
    if agent == 0 {
        BASE_ASK_BAND
    } else if agent < n_sellers {
        ASK_BAND
    } else if agent == n_agents - 1 {
        PEAK_BID_BAND
    } else {
        BID_BAND
    }
}

pub fn synthetic_electricity_snapshots(
    n_agents: usize,
    horizon: usize,
    lead_time_minutes: usize,
    seed: u64,
) -> Result<Vec<MarketSnapshot>, MarketError> {
    if n_agents < 2 {
        return Err(MarketError::BadParameter {
            name: "n_agents",
            value: n_agents as f64,
        });
    }
    if horizon == 0 {
        return Err(MarketError::EmptyInput);
    }
    if lead_time_minutes == 0 {
        return Err(MarketError::BadParameter {
            name: "lead_time_minutes",
            value: 0.0,
        });
    }
    let n_sellers = n_agents / 2;
    let mut rng = seeded(seed);
    let mut prices: Vec<f64> = Vec::with_capacity(n_agents);
    let mut quantities: Vec<f64> = Vec::with_capacity(n_agents);
    for agent in 0..n_agents {
        let band = price_band(agent, n_sellers, n_agents);
        prices.push(rng.gen_range(band.0..band.1));
        quantities.push(rng.gen_range(QTY_BAND.0..QTY_BAND.1));
    }
    let snapshot = |k: usize, prices: &[f64], quantities: &[f64]| {
        let offers = (0..n_agents)
            .map(|agent| MarketAgentOffer {
                agent,
                side: if agent < n_sellers {
                    Side::Seller
                } else {
                    Side::Buyer
                },
                quantity: quantities[agent],
                price: prices[agent],
            })
            .collect();
        MarketSnapshot::new(k, offers)
    };
    let mut snaps = Vec::with_capacity(horizon);
    snaps.push(snapshot(0, &prices, &quantities)?);
    let total_minutes = (horizon - 1) * lead_time_minutes;
    for minute in 1..=total_minutes {
        for agent in 0..n_agents {
            let band = price_band(agent, n_sellers, n_agents);
            let price_step = WALK_RATE * (band.1 - band.0);
            prices[agent] = reflect_into(
                prices[agent] + price_step * rng.gen_range(-1.0..1.0),
                band.0,
                band.1,
            );
            quantities[agent] = reflect_into(
                quantities[agent] + WALK_RATE * (QTY_BAND.1 - QTY_BAND.0) * rng.gen_range(-1.0..1.0),
                QTY_BAND.0,
                QTY_BAND.1,
            );
        }
        if minute % lead_time_minutes == 0 {
            snaps.push(snapshot(minute / lead_time_minutes, &prices, &quantities)?);
        }
    }
    Ok(snaps)
}

/// Uniformly random snapshot with mixed random sides, for stress tests.
pub fn random_snapshot<R: Rng>(n_agents: usize, rng: &mut R) -> Result<MarketSnapshot, MarketError> {
    let offers = (0..n_agents)
        .map(|agent| MarketAgentOffer {
            agent,
            side: if rng.gen_bool(0.5) {
                Side::Buyer
            } else {
                Side::Seller
            },
            quantity: rng.gen_range(0.0..5.0),
            price: rng.gen_range(0.05..0.5),
        })
        .collect();
    MarketSnapshot::new(0, offers)
}
