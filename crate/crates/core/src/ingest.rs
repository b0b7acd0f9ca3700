//! Irregular trade data to regular-grid panels by previous-tick sampling.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use chrono::{NaiveTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{PanelKind, PricePanel};

/// One day of trades; times are seconds since the session open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSeries {
    pub symbol: String,
    pub date: String,
    pub timestamps: Vec<f64>,
    pub prices: Vec<f64>,
    pub session_length: f64,
}

impl TickSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickSchema {
    pub symbol: String,
    /// Clock time of the open, used for `HH:MM:SS` timestamps.
    pub session_open: f64,
    pub session_length: f64,
}

impl Default for TickSchema {
    fn default() -> Self {
        Self {
            symbol: String::new(),
            session_open: 9.5 * 3600.0,
            session_length: 23400.0,
        }
    }
}

#[derive(Debug, Deserialize)]
struct TickRow {
    date: String,
    time: String,
    price: f64,
}

fn parse_time(s: &str, schema: &TickSchema) -> std::result::Result<f64, String> {
    let s = s.trim();
    if s.contains(':') {
        let t = NaiveTime::parse_from_str(s, "%H:%M:%S%.f").map_err(|e| format!("time {s:?}: {e}"))?;
        let secs = t.num_seconds_from_midnight() as f64 + t.nanosecond() as f64 * 1e-9;
        Ok(secs - schema.session_open)
    } else {
        s.parse::<f64>().map_err(|e| format!("time {s:?}: {e}"))
    }
}

/// Reads `date,time,price` rows and groups them by date.
///
/// Rows of one date must be in non-decreasing time order; rows sharing a
/// timestamp collapse to the last one.
pub fn parse_ticks<R: Read>(reader: R, schema: &TickSchema) -> Result<Vec<TickSeries>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut days: BTreeMap<String, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (i, row) in rdr.deserialize::<TickRow>().enumerate() {
        // header is line 1
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let t = parse_time(&row.time, schema).map_err(|msg| Error::Parse { line, msg })?;
        if !t.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("time {t} is not finite"),
            });
        }
        if !(row.price > 0.0) || !row.price.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("price {} must be positive", row.price),
            });
        }
        let (ts, ps) = days.entry(row.date.clone()).or_default();
        match ts.last() {
            Some(&last) if t < last => {
                return Err(Error::Parse {
                    line,
                    msg: format!("time {t} precedes the previous trade at {last} on {}", row.date),
                })
            }
            Some(&last) if t == last => *ps.last_mut().unwrap() = row.price,
            _ => {
                ts.push(t);
                ps.push(row.price);
            }
        }
    }
    Ok(days
        .into_iter()
        .map(|(date, (timestamps, prices))| TickSeries {
            symbol: schema.symbol.clone(),
            date,
            timestamps,
            prices,
            session_length: schema.session_length,
        })
        .collect())
}

pub fn load_ticks(path: &Path, schema: &TickSchema) -> Result<Vec<TickSeries>> {
    parse_ticks(std::fs::File::open(path)?, schema)
}

/// Log price of the last trade at or before `L·j/m` for `j = 1..=m`.
pub fn previous_tick(ticks: &TickSeries, m: usize) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::Params("m must be positive".into()));
    }
    let first_grid = ticks.session_length / m as f64;
    match ticks.timestamps.first() {
        Some(&t0) if t0 <= first_grid => {}
        _ => {
            return Err(Error::InsufficientData(format!(
                "{} {}: no trade at or before the first grid time {first_grid}",
                ticks.symbol, ticks.date
            )))
        }
    }
    let mut out = Vec::with_capacity(m);
    let mut k = 0;
    for j in 1..=m {
        let t = ticks.session_length * j as f64 / m as f64;
        while k + 1 < ticks.len() && ticks.timestamps[k + 1] <= t {
            k += 1;
        }
        out.push(ticks.prices[k].ln());
    }
    Ok(out)
}

/// Trades inside the session, counted once per timestamp.
pub fn effective_ticks(ticks: &TickSeries) -> usize {
    ticks
        .timestamps
        .iter()
        .filter(|t| **t >= 0.0 && **t <= ticks.session_length)
        .count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedDay {
    pub date: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct AlignedPanel {
    pub panel: PricePanel,
    pub dropped: Vec<DroppedDay>,
}

/// Keeps the dates present in both series; grids must agree per day.
pub fn align_pair(m: usize, market: Vec<(String, Vec<f64>)>, asset: Vec<(String, Vec<f64>)>) -> Result<AlignedPanel> {
    let mut asset: BTreeMap<String, Vec<f64>> = asset.into_iter().collect();
    let mut dropped = Vec::new();
    let mut days = Vec::new();
    for (date, y1) in market {
        match asset.remove(&date) {
            Some(y2) => {
                if y1.len() != y2.len() {
                    return Err(Error::LengthMismatch(format!(
                        "{date}: market grid has {} points, asset grid {}",
                        y1.len(),
                        y2.len()
                    )));
                }
                days.push((date, y1, y2));
            }
            None => dropped.push(DroppedDay {
                date,
                reason: "missing for the asset".into(),
            }),
        }
    }
    dropped.extend(asset.into_keys().map(|date| DroppedDay {
        date,
        reason: "missing for the market".into(),
    }));
    if days.is_empty() {
        return Err(Error::InsufficientData("the two series share no dates".into()));
    }
    days.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(AlignedPanel {
        panel: PricePanel::from_days(m, PanelKind::Observed, days)?,
        dropped,
    })
}

/// Samples both tick sets on an `m`-point grid and aligns them. Days with
/// fewer than `min_ticks` trades, or no trade by the first grid time, are
/// dropped with a reason.
pub fn build_panel(market: &[TickSeries], asset: &[TickSeries], m: usize, min_ticks: usize) -> Result<AlignedPanel> {
    let mut dropped = Vec::new();
    let mut sample = |series: &[TickSeries], who: &str| -> Vec<(String, Vec<f64>)> {
        let mut out = Vec::new();
        for t in series {
            let n = effective_ticks(t);
            if n < min_ticks {
                dropped.push(DroppedDay {
                    date: t.date.clone(),
                    reason: format!("{who}: {n} trades, need {min_ticks}"),
                });
                continue;
            }
            match previous_tick(t, m) {
                Ok(v) => out.push((t.date.clone(), v)),
                Err(e) => dropped.push(DroppedDay {
                    date: t.date.clone(),
                    reason: format!("{who}: {e}"),
                }),
            }
        }
        out
    };
    let a = sample(market, "market");
    let b = sample(asset, "asset");
    let mut aligned = align_pair(m, a, b)?;
    dropped.append(&mut aligned.dropped);
    aligned.dropped = dropped;
    Ok(aligned)
}
