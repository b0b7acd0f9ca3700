//! CSV and JSON files: panels, RIB series, simulation outputs, manifests.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::panel::{PanelKind, PricePanel};
use crate::rib::{Estimator, RIBSeries};
use crate::sim::{SimConfig, SimCounters, SimOutput};

#[derive(Debug, Serialize, Deserialize)]
struct PanelRow {
    date: String,
    index: usize,
    logp1: f64,
    logp2: f64,
}

pub fn write_panel_csv<W: Write>(panel: &PricePanel, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for (i, day) in panel.days().enumerate() {
        for j in 0..day.len() {
            wr.serialize(PanelRow {
                date: panel.dates[i].clone(),
                index: j,
                logp1: day.y1[j],
                logp2: day.y2[j],
            })?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads `date,index,logp1,logp2`. Without `m`, the grid size is taken as
/// the longest day's point count minus one.
pub fn read_panel_csv<R: Read>(r: R, m: Option<usize>, kind: PanelKind) -> Result<PricePanel> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut days: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    for (i, row) in rdr.deserialize::<PanelRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        let new_day = days.last().map_or(true, |d| d.0 != row.date);
        if new_day {
            if days.iter().any(|d| d.0 == row.date) {
                return Err(Error::Parse {
                    line,
                    msg: format!("rows of {} are not contiguous", row.date),
                });
            }
            days.push((row.date.clone(), Vec::new(), Vec::new()));
        }
        let d = days.last_mut().unwrap();
        if row.index != d.1.len() {
            return Err(Error::Parse {
                line,
                msg: format!("expected index {}, found {}", d.1.len(), row.index),
            });
        }
        d.1.push(row.logp1);
        d.2.push(row.logp2);
    }
    if days.is_empty() {
        return Err(Error::InsufficientData("panel file has no rows".into()));
    }
    let m = m.unwrap_or_else(|| days.iter().map(|d| d.1.len()).max().unwrap_or(1) - 1);
    PricePanel::from_days(m, kind, days)
}

#[derive(Debug, Serialize, Deserialize)]
struct RibRow {
    date: String,
    estimator: Option<Estimator>,
    rib: f64,
    avar: Option<f64>,
    m: Option<usize>,
}

pub fn write_rib_csv<W: Write>(s: &RIBSeries, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for i in 0..s.len() {
        wr.serialize(RibRow {
            date: s.dates[i].clone(),
            estimator: Some(s.estimator),
            rib: s.rib[i],
            avar: s.avar[i].is_finite().then_some(s.avar[i]),
            m: Some(s.m_per_day[i]),
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// Reads `date,rib` with optional `estimator`, `avar` and `m` columns.
pub fn read_rib_csv<R: Read>(r: R) -> Result<RIBSeries> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = RIBSeries::from_values(Vec::new(), Estimator::Rib);
    out.dates.clear();
    for (i, row) in rdr.deserialize::<RibRow>().enumerate() {
        let line = i + 2;
        let row = row.map_err(|e| Error::Parse { line, msg: e.to_string() })?;
        if !row.rib.is_finite() {
            return Err(Error::Parse {
                line,
                msg: "non-finite value".into(),
            });
        }
        if let Some(e) = row.estimator {
            if i == 0 {
                out.estimator = e;
            } else if e != out.estimator {
                return Err(Error::Parse {
                    line,
                    msg: format!("mixed estimators {} and {}", out.estimator.tag(), e.tag()),
                });
            }
        }
        out.dates.push(row.date);
        out.rib.push(row.rib);
        out.avar.push(row.avar.unwrap_or(f64::NAN));
        out.m_per_day.push(row.m.unwrap_or(0));
    }
    if out.is_empty() {
        return Err(Error::InsufficientData("series file has no rows".into()));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct TruthRow {
    date: String,
    true_ibeta: f64,
    true_h: f64,
}

pub fn write_truth_csv<W: Write>(out: &SimOutput, w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for i in 0..out.true_ibeta.len() {
        wr.serialize(TruthRow {
            date: out.observed.dates[i].clone(),
            true_ibeta: out.true_ibeta[i],
            true_h: out.true_h[i],
        })?;
    }
    wr.flush()?;
    Ok(())
}

/// `(dates, Iβ, h)` from a truth file.
pub fn read_truth_csv<R: Read>(r: R) -> Result<(Vec<String>, Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::Reader::from_reader(r);
    let (mut d, mut b, mut h) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in rdr.deserialize::<TruthRow>().enumerate() {
        let row = row.map_err(|e| Error::Parse {
            line: i + 2,
            msg: e.to_string(),
        })?;
        d.push(row.date);
        b.push(row.true_ibeta);
        h.push(row.true_h);
    }
    Ok((d, b, h))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Record of one command run: everything needed to repeat it, plus digests
/// of what it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// File name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub summary: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seed: Option<u64>, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            seed,
            config,
            outputs: BTreeMap::new(),
            summary: serde_json::Value::Null,
        }
    }

    /// Writes `bytes` to `dir/name` and records its digest.
    pub fn write_file(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        std::fs::write(dir.join(name), bytes)?;
        self.outputs.insert(name.into(), sha256_hex(bytes));
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        std::fs::write(dir.join("manifest.json"), s)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimWriteOptions {
    pub latent: bool,
    pub spot_beta: bool,
}

/// Writes `observed.csv`, `truth.csv` and optionally `latent.csv`,
/// `spot_beta.csv`, then `manifest.json`, into `dir`.
pub fn write_sim_output(dir: &Path, cfg: &SimConfig, out: &SimOutput, opts: SimWriteOptions) -> Result<Manifest> {
    std::fs::create_dir_all(dir)?;
    let mut man = Manifest::new(
        "simulate",
        Some(out.seed),
        serde_json::json!({ "sim": cfg, "write": opts }),
    );
    let mut buf = Vec::new();
    write_panel_csv(&out.observed, &mut buf)?;
    man.write_file(dir, "observed.csv", &buf)?;
    buf.clear();
    write_truth_csv(out, &mut buf)?;
    man.write_file(dir, "truth.csv", &buf)?;
    if opts.latent {
        buf.clear();
        write_panel_csv(&out.latent, &mut buf)?;
        man.write_file(dir, "latent.csv", &buf)?;
    }
    if opts.spot_beta {
        buf.clear();
        let mut wr = csv::Writer::from_writer(&mut buf);
        wr.write_record(["step", "spot_beta", "sigma2"])?;
        for (j, (b, s)) in out.spot_beta.iter().zip(&out.sigma2).enumerate() {
            wr.serialize((j, b, s))?;
        }
        wr.flush()?;
        drop(wr);
        man.write_file(dir, "spot_beta.csv", &buf)?;
    }
    man.summary = serde_json::to_value(SimSummary {
        counters: out.counters,
        n_days: out.true_ibeta.len(),
    })?;
    man.save(dir)?;
    Ok(man)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct SimSummary {
    counters: SimCounters,
    n_days: usize,
}
