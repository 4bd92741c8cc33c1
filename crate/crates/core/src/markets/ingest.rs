//! CSV readers for recorded market data, with optional resampling.
//!
//! Forecast files carry one row per delivery interval:
//! `timestamp,f_1,...,f_N,observation`. Electricity files carry one row per
//! agent and interval: `timestamp,agent,side,quantity,price`. Timestamps
//! are minutes as decimal numbers; rows are grouped by equal timestamps for
//! the electricity schema. When a target resolution is given, the series is
//! linearly interpolated onto a uniform grid from the first to the last
//! timestamp.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use super::{ForecastRecord, MarketAgentOffer, MarketError, MarketSnapshot, Side};

#[derive(Debug, Clone)]
pub enum IngestSchema {
    Forecast { resolution_minutes: Option<f64> },
    Electricity { resolution_minutes: Option<f64> },
}

#[derive(Debug)]
pub enum IngestResult {
    Forecast(Vec<ForecastRecord>),
    Electricity(Vec<MarketSnapshot>),
}

/// Read a market time series according to `schema`.
pub fn ingest_timeseries(path: &Path, schema: &IngestSchema) -> Result<IngestResult, MarketError> {
    match schema {
        IngestSchema::Forecast { resolution_minutes } => Ok(IngestResult::Forecast(
            read_forecast_csv(path, *resolution_minutes)?,
        )),
        IngestSchema::Electricity { resolution_minutes } => Ok(IngestResult::Electricity(
            read_electricity_csv(path, *resolution_minutes)?,
        )),
    }
}

fn parse_field<T: FromStr>(field: &str, row: usize, what: &str) -> Result<T, MarketError>
where
    T::Err: Display,
{
    field.trim().parse().map_err(|e| MarketError::Parse {
        row,
        message: format!("bad {what} {field:?}: {e}"),
    })
}

fn record_line(rec: &csv::StringRecord, fallback: usize) -> usize {
    rec.position().map(|p| p.line() as usize).unwrap_or(fallback)
}

fn check_resolution(r: Option<f64>) -> Result<(), MarketError> {
    if let Some(r) = r {
        if !(r > 0.0 && r.is_finite()) {
            return Err(MarketError::BadParameter {
                name: "resolution_minutes",
                value: r,
            });
        }
    }
    Ok(())
}

/// Uniform grid `t0, t0 + r, ...` ending at the last source timestamp.
fn target_grid(ts: &[f64], r: f64) -> Vec<f64> {
    let (first, last) = (ts[0], ts[ts.len() - 1]);
    let mut grid = Vec::new();
    let mut i = 0usize;
    loop {
        let t = first + i as f64 * r;
        if t > last + 1e-9 {
            break;
        }
        grid.push(t.min(last));
        i += 1;
    }
    grid
}

/// Linear interpolation of row vectors sampled at strictly increasing `ts`.
fn resample(ts: &[f64], rows: &[Vec<f64>], r: f64) -> Vec<(f64, Vec<f64>)> {
    let grid = target_grid(ts, r);
    let mut seg = 0usize;
    let mut out = Vec::with_capacity(grid.len());
    for &t in &grid {
        while seg + 2 < ts.len() && ts[seg + 1] < t - 1e-9 {
            seg += 1;
        }
        let row = if ts.len() == 1 {
            rows[0].clone()
        } else {
            let (ta, tb) = (ts[seg], ts[seg + 1]);
            let w = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
            rows[seg]
                .iter()
                .zip(&rows[seg + 1])
                .map(|(a, b)| a + w * (b - a))
                .collect()
        };
        out.push((t, row));
    }
    out
}

/// Read `timestamp,f_1,...,f_N,observation` rows, optionally resampled to a
/// uniform resolution in minutes.
pub fn read_forecast_csv(
    path: &Path,
    resolution_minutes: Option<f64>,
) -> Result<Vec<ForecastRecord>, MarketError> {
    check_resolution(resolution_minutes)?;
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let cols = headers.len();
    if cols < 3
        || headers.get(0).map(str::trim) != Some("timestamp")
        || headers.get(cols - 1).map(str::trim) != Some("observation")
    {
        return Err(MarketError::BadHeader {
            expected: "timestamp,f_1,...,f_N,observation".into(),
        });
    }
    let n = cols - 2;
    let mut ts: Vec<f64> = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = record_line(&rec, idx + 2);
        if rec.len() != cols {
            return Err(MarketError::Parse {
                row,
                message: format!("expected {cols} fields, found {}", rec.len()),
            });
        }
        let t: f64 = parse_field(&rec[0], row, "timestamp")?;
        if let Some(&prev) = ts.last() {
            if t <= prev {
                return Err(MarketError::NonMonotoneTimestamp { row });
            }
        }
        // Forecasts first, observation last; validated through the record
        // constructor so range errors carry the row number.
        let mut values = Vec::with_capacity(n + 1);
        for c in 1..cols {
            values.push(parse_field::<f64>(&rec[c], row, "value")?);
        }
        let obs = values.pop().unwrap();
        ForecastRecord::new(0, values.clone(), obs).map_err(|e| MarketError::Parse {
            row,
            message: e.to_string(),
        })?;
        values.push(obs);
        ts.push(t);
        rows.push(values);
    }
    if ts.is_empty() {
        return Err(MarketError::EmptyInput);
    }
    let sampled: Vec<(f64, Vec<f64>)> = match resolution_minutes {
        Some(r) => resample(&ts, &rows, r),
        None => ts.into_iter().zip(rows).collect(),
    };
    sampled
        .into_iter()
        .enumerate()
        .map(|(k, (_, mut values))| {
            let obs = values.pop().unwrap();
            ForecastRecord::new(k, values, obs)
        })
        .collect()
}

/// Read `timestamp,agent,side,quantity,price` rows grouped by timestamp,
/// optionally resampled. Resampling interpolates each agent's quantity and
/// price, which requires every agent to keep one side for the whole file.
pub fn read_electricity_csv(
    path: &Path,
    resolution_minutes: Option<f64>,
) -> Result<Vec<MarketSnapshot>, MarketError> {
    check_resolution(resolution_minutes)?;
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected = ["timestamp", "agent", "side", "quantity", "price"];
    let header_ok = headers.len() == 5
        && headers
            .iter()
            .zip(expected)
            .all(|(h, e)| h.trim().eq_ignore_ascii_case(e));
    if !header_ok {
        return Err(MarketError::BadHeader {
            expected: expected.join(","),
        });
    }

    struct Group {
        t: f64,
        row: usize,
        offers: Vec<MarketAgentOffer>,
    }
    let mut groups: Vec<Group> = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = record_line(&rec, idx + 2);
        if rec.len() != 5 {
            return Err(MarketError::Parse {
                row,
                message: format!("expected 5 fields, found {}", rec.len()),
            });
        }
        let t: f64 = parse_field(&rec[0], row, "timestamp")?;
        let agent: usize = parse_field(&rec[1], row, "agent")?;
        let side = match rec[2].trim().to_ascii_lowercase().as_str() {
            "buyer" => Side::Buyer,
            "seller" => Side::Seller,
            other => {
                return Err(MarketError::Parse {
                    row,
                    message: format!("side must be buyer or seller, got {other:?}"),
                })
            }
        };
        let quantity: f64 = parse_field(&rec[3], row, "quantity")?;
        let price: f64 = parse_field(&rec[4], row, "price")?;
        let offer = MarketAgentOffer {
            agent,
            side,
            quantity,
            price,
        };
        match groups.last_mut() {
            Some(g) if g.t == t => g.offers.push(offer),
            Some(g) if t < g.t => return Err(MarketError::NonMonotoneTimestamp { row }),
            _ => groups.push(Group {
                t,
                row,
                offers: vec![offer],
            }),
        }
    }
    if groups.is_empty() {
        return Err(MarketError::EmptyInput);
    }

    let mut snaps = Vec::with_capacity(groups.len());
    let mut ts = Vec::with_capacity(groups.len());
    for (k, g) in groups.into_iter().enumerate() {
        let snap = MarketSnapshot::new(k, g.offers).map_err(|e| MarketError::Parse {
            row: g.row,
            message: e.to_string(),
        })?;
        if let Some(first) = snaps.first() {
            let first: &MarketSnapshot = first;
            if snap.n_agents() != first.n_agents() {
                return Err(MarketError::Parse {
                    row: g.row,
                    message: format!(
                        "snapshot has {} agents, earlier snapshots have {}",
                        snap.n_agents(),
                        first.n_agents()
                    ),
                });
            }
        }
        ts.push(g.t);
        snaps.push(snap);
    }

    let Some(r) = resolution_minutes else {
        return Ok(snaps);
    };

    let n = snaps[0].n_agents();
    for agent in 0..n {
        let side = snaps[0].offer(agent).unwrap().side;
        if snaps.iter().any(|s| s.offer(agent).unwrap().side != side) {
            return Err(MarketError::SideChanged { agent });
        }
    }
    // Flatten to interleaved (quantity, price) rows, resample, rebuild.
    let rows: Vec<Vec<f64>> = snaps
        .iter()
        .map(|s| {
            s.offers()
                .iter()
                .flat_map(|o| [o.quantity, o.price])
                .collect()
        })
        .collect();
    resample(&ts, &rows, r)
        .into_iter()
        .enumerate()
        .map(|(k, (_, row))| {
            let offers = (0..n)
                .map(|agent| MarketAgentOffer {
                    agent,
                    side: snaps[0].offer(agent).unwrap().side,
                    quantity: row[2 * agent],
                    price: row[2 * agent + 1],
                })
                .collect();
            MarketSnapshot::new(k, offers)
        })
        .collect()
}
