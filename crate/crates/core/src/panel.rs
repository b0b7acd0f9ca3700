//! Bivariate log-price panels indexed by (day, intraday step).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PanelKind {
    Latent,
    Observed,
}

/// Which of the two series: 1 is the market, 2 the asset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Series {
    Market,
    Asset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct DaySpan {
    start: usize,
    len: usize,
}

/// Log prices of the market (`x1`) and the asset (`x2`).
///
/// Days are stored as spans into the two flat vectors. A continuous
/// simulated path of `n·m + 1` points uses overlapping spans (the close of
/// day `i` is the open of day `i + 1`); ingested data uses disjoint spans.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    pub m: usize,
    pub kind: PanelKind,
    pub dates: Vec<String>,
    x1: Vec<f64>,
    x2: Vec<f64>,
    days: Vec<DaySpan>,
}

/// One day of a panel; `y1[j]`, `y2[j]` at intraday step `j`.
#[derive(Debug, Clone, Copy)]
pub struct DayView<'a> {
    pub m: usize,
    pub y1: &'a [f64],
    pub y2: &'a [f64],
}

impl<'a> DayView<'a> {
    pub fn new(m: usize, y1: &'a [f64], y2: &'a [f64]) -> Result<Self> {
        if y1.len() != y2.len() {
            return Err(Error::LengthMismatch(format!(
                "day series lengths {} and {}",
                y1.len(),
                y2.len()
            )));
        }
        Ok(Self { m, y1, y2 })
    }

    pub fn len(&self) -> usize {
        self.y1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y1.is_empty()
    }

    /// Number of increments in the day.
    pub fn n_increments(&self) -> usize {
        self.y1.len().saturating_sub(1)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.m as f64
    }

    pub fn series(&self, s: Series) -> &'a [f64] {
        match s {
            Series::Market => self.y1,
            Series::Asset => self.y2,
        }
    }
}

fn check_finite(name: &str, xs: &[f64]) -> Result<()> {
    if let Some(i) = xs.iter().position(|v| !v.is_finite()) {
        return Err(Error::Params(format!("{name}[{i}] = {} is not finite", xs[i])));
    }
    Ok(())
}

impl PricePanel {
    /// Panel over a continuous path of `n_days · m + 1` points.
    pub fn from_continuous(m: usize, kind: PanelKind, x1: Vec<f64>, x2: Vec<f64>) -> Result<Self> {
        if m < 2 {
            return Err(Error::Params(format!("m must be at least 2, got {m}")));
        }
        if x1.len() != x2.len() {
            return Err(Error::LengthMismatch(format!(
                "x1 has {} points, x2 has {}",
                x1.len(),
                x2.len()
            )));
        }
        if x1.len() < m + 1 || (x1.len() - 1) % m != 0 {
            return Err(Error::LengthMismatch(format!(
                "path length {} is not n·{m} + 1",
                x1.len()
            )));
        }
        check_finite("x1", &x1)?;
        check_finite("x2", &x2)?;
        let n_days = (x1.len() - 1) / m;
        let days = (0..n_days)
            .map(|i| DaySpan {
                start: i * m,
                len: m + 1,
            })
            .collect();
        Ok(Self {
            m,
            kind,
            dates: (1..=n_days).map(|i| i.to_string()).collect(),
            x1,
            x2,
            days,
        })
    }

    /// Panel from separately stored days (`(date, y1, y2)` each).
    pub fn from_days(
        m: usize,
        kind: PanelKind,
        days: impl IntoIterator<Item = (String, Vec<f64>, Vec<f64>)>,
    ) -> Result<Self> {
        let mut panel = Self {
            m,
            kind,
            dates: Vec::new(),
            x1: Vec::new(),
            x2: Vec::new(),
            days: Vec::new(),
        };
        for (date, y1, y2) in days {
            if y1.len() != y2.len() {
                return Err(Error::LengthMismatch(format!(
                    "day {date}: {} vs {} points",
                    y1.len(),
                    y2.len()
                )));
            }
            if y1.len() < 2 {
                return Err(Error::InsufficientData(format!(
                    "day {date} has fewer than 2 points"
                )));
            }
            check_finite("y1", &y1)?;
            check_finite("y2", &y2)?;
            panel.days.push(DaySpan {
                start: panel.x1.len(),
                len: y1.len(),
            });
            panel.x1.extend(y1);
            panel.x2.extend(y2);
            panel.dates.push(date);
        }
        Ok(panel)
    }

    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn day(&self, i: usize) -> DayView<'_> {
        let s = self.days[i];
        DayView {
            m: self.m,
            y1: &self.x1[s.start..s.start + s.len],
            y2: &self.x2[s.start..s.start + s.len],
        }
    }

    pub fn days(&self) -> impl Iterator<Item = DayView<'_>> {
        (0..self.n_days()).map(move |i| self.day(i))
    }

    /// Value at (day, intraday index).
    pub fn at(&self, series: Series, day: usize, j: usize) -> f64 {
        self.day(day).series(series)[j]
    }

    pub fn x1(&self) -> &[f64] {
        &self.x1
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    /// Keeps only the listed days, in the given order.
    pub fn select_days(&self, idx: &[usize]) -> Result<Self> {
        let days = idx
            .iter()
            .map(|&i| {
                if i >= self.n_days() {
                    return Err(Error::Index(format!("day {i} of {}", self.n_days())));
                }
                let d = self.day(i);
                Ok((self.dates[i].clone(), d.y1.to_vec(), d.y2.to_vec()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_days(self.m, self.kind, days)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn continuous_days_share_endpoints() {
        let x1: Vec<f64> = (0..=6).map(|v| v as f64).collect();
        let x2: Vec<f64> = x1.iter().map(|v| 2.0 * v).collect();
        let p = PricePanel::from_continuous(3, PanelKind::Latent, x1, x2).unwrap();
        assert_eq!(p.n_days(), 2);
        assert_eq!(p.day(0).y1, &[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(p.day(1).y1, &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(p.at(Series::Asset, 1, 2), 10.0);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(PricePanel::from_continuous(3, PanelKind::Latent, vec![0.0; 6], vec![0.0; 6]).is_err());
        assert!(PricePanel::from_continuous(3, PanelKind::Latent, vec![0.0; 7], vec![0.0; 4]).is_err());
        let mut bad = vec![0.0; 7];
        bad[2] = f64::NAN;
        assert!(PricePanel::from_continuous(3, PanelKind::Latent, bad, vec![0.0; 7]).is_err());
    }

    #[test]
    fn select_days_reorders() {
        let x1: Vec<f64> = (0..=9).map(|v| v as f64).collect();
        let p = PricePanel::from_continuous(3, PanelKind::Observed, x1.clone(), x1).unwrap();
        let q = p.select_days(&[2, 0]).unwrap();
        assert_eq!(q.day(0).y1, p.day(2).y1);
        assert_eq!(q.day(1).y1, p.day(0).y1);
        assert_eq!(q.dates, vec!["3", "1"]);
    }
}
