//! Subcommand implementations.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Args;
use drbeta::ingest::{build_panel, load_ticks, TickSchema};
use drbeta::io::{read_panel_csv, read_rib_csv, write_rib_csv, write_sim_output, Manifest, SimWriteOptions};
use drbeta::kernel::WeightKernel;
use drbeta::model::{
    arma_forecaster, bic_select, evaluate, fit, residual_acf_diagnostic, rolling_forecast, FitResult, Metric,
};
use drbeta::panel::PanelKind;
use drbeta::rib::{rib_day, rib_series, Estimator, RIBSeries};
use drbeta::sim::SimConfig;
use drbeta::tuning::{tuning_from_m, TuningExponents};
use serde::Serialize;

use crate::config::{FitSection, ForecastSection, RunConfig};
use crate::CliError;

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(value).map_err(drbeta::Error::from)?;
    s.push('\n');
    match out {
        Some(p) => std::fs::write(p, s).map_err(drbeta::Error::from)?,
        None => std::io::stdout().write_all(s.as_bytes()).map_err(drbeta::Error::from)?,
    }
    Ok(())
}

fn out_dir(flag: &Option<PathBuf>, cfg: &RunConfig) -> Result<PathBuf, CliError> {
    flag.clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| CliError::Usage("an output directory is required (--out or \"out\" in the config)".into()))
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Observations per day.
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub days: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the noise-free prices.
    #[arg(long)]
    pub latent: bool,
    /// Also write the spot beta and variance paths.
    #[arg(long)]
    pub spot_beta: bool,
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let seed = a
        .seed
        .or(cfg.seed)
        .ok_or_else(|| CliError::Usage("simulate needs a seed (--seed or \"seed\" in the config)".into()))?;
    let mut sim = cfg.sim.clone().unwrap_or_else(|| SimConfig::standard(2340, 125));
    if let Some(m) = a.m {
        sim.m = m;
    }
    if let Some(d) = a.days {
        sim.n_days = d;
    }
    let reps = a.reps.or(cfg.replications).unwrap_or(1);
    if reps == 0 {
        return Err(CliError::Usage("--reps must be positive".into()));
    }
    let dir = out_dir(&a.out, &cfg)?;
    std::fs::create_dir_all(&dir).map_err(drbeta::Error::from)?;
    let opts = SimWriteOptions {
        latent: a.latent,
        spot_beta: a.spot_beta,
    };
    let results = drbeta::mc::replicate(seed, "simulate", reps, |k, s| -> drbeta::Result<(String, Manifest)> {
        let name = format!("rep_{k:04}");
        let out = drbeta::sim::simulate(&sim, s)?;
        let man = write_sim_output(&dir.join(&name), &sim, &out, opts)?;
        Ok((name, man))
    });
    let mut top = Manifest::new(
        "simulate",
        Some(seed),
        serde_json::json!({ "sim": sim, "replications": reps, "write": opts, "seed_stream": "simulate" }),
    );
    for r in results {
        let (name, _) = r?;
        let bytes = std::fs::read(dir.join(&name).join("manifest.json")).map_err(drbeta::Error::from)?;
        top.outputs.insert(format!("{name}/manifest.json"), drbeta::io::sha256_hex(&bytes));
    }
    top.save(&dir)?;
    eprintln!("wrote {reps} replication(s) to {}", dir.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct RibArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Panel CSV `date,index,logp1,logp2`.
    #[arg(long, conflicts_with_all = ["market_ticks", "asset_ticks"])]
    pub panel: Option<PathBuf>,
    /// Market trades `date,time,price`.
    #[arg(long, requires = "asset_ticks")]
    pub market_ticks: Option<PathBuf>,
    #[arg(long, requires = "market_ticks")]
    pub asset_ticks: Option<PathBuf>,
    /// Grid size; inferred from the panel when absent.
    #[arg(long)]
    pub m: Option<usize>,
    /// Comma-separated subset of rib, chen, prvb.
    #[arg(long, default_value = "rib", value_delimiter = ',')]
    pub estimators: Vec<Estimator>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-block RIB detail to `blocks.csv`.
    #[arg(long)]
    pub blocks: bool,
}

#[derive(Serialize)]
struct BlockRow {
    date: String,
    block: usize,
    start: usize,
    beta: f64,
    debias: f64,
    r2: f64,
    sigma11: f64,
    sigma12: f64,
    theta11: f64,
    theta12: f64,
}

pub fn cmd_rib(a: &RibArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let dir = out_dir(&a.out, &cfg)?;
    let (panel, dropped) = match (&a.panel, &a.market_ticks, &a.asset_ticks) {
        (Some(p), _, _) => {
            let f = std::fs::File::open(p).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            let panel = read_panel_csv(f, a.m, PanelKind::Observed).map_err(|e| match e {
                drbeta::Error::InsufficientData(msg) => CliError::Usage(format!("{}: {msg}", p.display())),
                other => other.into(),
            })?;
            (panel, Vec::new())
        }
        (None, Some(mk), Some(ak)) => {
            let m = a.m.ok_or_else(|| CliError::Usage("--m is required with tick input".into()))?;
            let tuning = tuning_from_m(m, cfg.tuning.as_ref(), &TuningExponents::default())?;
            let schema = TickSchema::default();
            let market = load_ticks(mk, &TickSchema { symbol: "market".into(), ..schema.clone() })?;
            let asset = load_ticks(ak, &TickSchema { symbol: "asset".into(), ..schema })?;
            let aligned = build_panel(&market, &asset, m, 2 * tuning.k_m + 2)?;
            (aligned.panel, aligned.dropped)
        }
        _ => return Err(CliError::Usage("give --panel, or both --market-ticks and --asset-ticks".into())),
    };
    if panel.n_days() == 0 {
        return Err(CliError::Usage("the panel has no days".into()));
    }
    let tuning = tuning_from_m(panel.m, cfg.tuning.as_ref(), &TuningExponents::default())?;
    let opts = cfg.estimator.unwrap_or_default();
    let kernel = WeightKernel::triangular();
    std::fs::create_dir_all(&dir).map_err(drbeta::Error::from)?;
    let mut man = Manifest::new(
        "rib",
        None,
        serde_json::json!({
            "input": a.panel.as_ref().or(a.market_ticks.as_ref()),
            "tuning": tuning,
            "estimator": opts,
            "estimators": a.estimators,
        }),
    );
    let mut failures = serde_json::Map::new();
    for est in &a.estimators {
        let s = rib_series(&panel, &tuning, &kernel, &opts, *est)?;
        let mut buf = Vec::new();
        write_rib_csv(&s, &mut buf)?;
        man.write_file(&dir, &format!("{}.csv", est.tag().to_ascii_lowercase()), &buf)?;
        failures.insert(est.tag().into(), serde_json::to_value(&s.failures).map_err(drbeta::Error::from)?);
    }
    if a.blocks {
        let mut buf = Vec::new();
        {
            let mut wr = csv::Writer::from_writer(&mut buf);
            for (i, day) in panel.days().enumerate() {
                let Ok(est) = rib_day(day, &tuning, &kernel, &opts) else { continue };
                for (j, b) in est.blocks.iter().enumerate() {
                    wr.serialize(BlockRow {
                        date: panel.dates[i].clone(),
                        block: j,
                        start: b.spot.block_start,
                        beta: b.beta,
                        debias: b.debias,
                        r2: b.r2,
                        sigma11: b.spot.sigma11,
                        sigma12: b.spot.sigma12,
                        theta11: b.noise.theta11,
                        theta12: b.noise.theta12,
                    })
                    .map_err(drbeta::Error::from)?;
                }
            }
            wr.flush().map_err(drbeta::Error::from)?;
        }
        man.write_file(&dir, "blocks.csv", &buf)?;
    }
    man.summary = serde_json::json!({ "days": panel.n_days(), "failures": failures, "dropped": dropped });
    man.save(&dir)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Series CSV with `date` and `rib` columns.
    #[arg(long)]
    pub series: PathBuf,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    /// Select (p, q) by BIC over the grid up to --max-p, --max-q.
    #[arg(long)]
    pub bic: bool,
    #[arg(long)]
    pub max_p: Option<usize>,
    #[arg(long)]
    pub max_q: Option<usize>,
    #[arg(long)]
    pub starts: Option<usize>,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    p: usize,
    q: usize,
    coefficients: Vec<String>,
    theta: Vec<f64>,
    #[serde(flatten)]
    fit: &'a FitResult,
    #[serde(skip_serializing_if = "Option::is_none")]
    bic_table: Option<&'a [drbeta::model::BicCell]>,
}

fn read_series(path: &Path) -> Result<RIBSeries, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    Ok(read_rib_csv(f)?)
}

fn fit_section(cfg: &RunConfig) -> FitSection {
    cfg.fit.clone().unwrap_or_default()
}

pub fn cmd_fit(a: &FitArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let mut sec = fit_section(&cfg);
    sec.p = a.p.unwrap_or(sec.p);
    sec.q = a.q.unwrap_or(sec.q);
    sec.bic |= a.bic;
    sec.max_p = a.max_p.unwrap_or(sec.max_p);
    sec.max_q = a.max_q.unwrap_or(sec.max_q);
    if let Some(s) = a.starts {
        sec.options.starts = s;
    }
    let s = read_series(&a.series)?;
    if sec.bic {
        let sel = bic_select(&s.rib, sec.max_p, sec.max_q, &sec.options)?;
        write_json(
            &FitReport {
                p: sel.p,
                q: sel.q,
                coefficients: sel.fit.theta_hat.coefficient_names(),
                theta: sel.fit.theta_hat.to_vec(),
                fit: &sel.fit,
                bic_table: Some(&sel.table),
            },
            a.out.as_deref(),
        )
    } else {
        let f = fit(&s.rib, sec.p, sec.q, &sec.options)?;
        write_json(
            &FitReport {
                p: sec.p,
                q: sec.q,
                coefficients: f.theta_hat.coefficient_names(),
                theta: f.theta_hat.to_vec(),
                fit: &f,
                bic_table: None,
            },
            a.out.as_deref(),
        )
    }
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub series: PathBuf,
    /// Trailing estimation window in days.
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long)]
    pub q: Option<usize>,
    /// Add an ARMA(1,1) forecast column from the same series.
    #[arg(long)]
    pub arma: bool,
    /// CSV path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ForecastRow<'a> {
    date: &'a str,
    forecast: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    arma: Option<f64>,
    actual: f64,
}

pub fn cmd_forecast(a: &ForecastArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(a.config.as_deref())?;
    let mut sec: ForecastSection = cfg.forecast.clone().unwrap_or_default();
    sec.window = a.window.unwrap_or(sec.window);
    sec.p = a.p.unwrap_or(sec.p);
    sec.q = a.q.unwrap_or(sec.q);
    sec.arma_baseline |= a.arma;
    let fopts = fit_section(&cfg).options;
    let s = read_series(&a.series)?;
    let rf = rolling_forecast(&s.rib, sec.p, sec.q, sec.window, &fopts)?;
    let arma: Vec<Option<f64>> = if sec.arma_baseline {
        drbeta::par::par_map(rf.target_index.clone(), |t| {
            arma_forecaster(&s.rib[t - sec.window..t], 1, 1, Some(s.estimator)).map(|(_, f)| f)
        })
        .into_iter()
        .map(|r| r.map(Some))
        .collect::<drbeta::Result<_>>()?
    } else {
        vec![None; rf.forecast.len()]
    };
    let mut buf = Vec::new();
    {
        let mut wr = csv::Writer::from_writer(&mut buf);
        for (i, &t) in rf.target_index.iter().enumerate() {
            wr.serialize(ForecastRow {
                date: &s.dates[t],
                forecast: rf.forecast[i],
                arma: arma[i],
                actual: s.rib[t],
            })
            .map_err(drbeta::Error::from)?;
        }
        wr.flush().map_err(drbeta::Error::from)?;
    }
    match &a.out {
        Some(p) => std::fs::write(p, &buf).map_err(drbeta::Error::from)?,
        None => std::io::stdout().write_all(&buf).map_err(drbeta::Error::from)?,
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// CSV holding predictions, keyed by `date`.
    #[arg(long)]
    pub pred: PathBuf,
    /// CSV holding targets, keyed by `date`.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long, default_value = "forecast")]
    pub pred_col: String,
    #[arg(long, default_value = "rib")]
    pub target_col: String,
    #[arg(long, default_value = "msfe")]
    pub metric: Metric,
    /// Also regress targets on predictions and report residual ACF to this lag.
    #[arg(long)]
    pub acf_lags: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn read_column(path: &Path, col: &str) -> Result<Vec<(String, f64)>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut rdr = csv::Reader::from_reader(f);
    let headers = rdr.headers().map_err(drbeta::Error::from)?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::Usage(format!("{} has no column {name:?}", path.display())))
    };
    let (di, vi) = (find("date")?, find(col)?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(drbeta::Error::from)?;
        let v: f64 = rec[vi].trim().parse().map_err(|e| drbeta::Error::Parse {
            line: i + 2,
            msg: format!("{col}: {e}"),
        })?;
        out.push((rec[di].to_string(), v));
    }
    Ok(out)
}

#[derive(Serialize)]
struct EvalReport {
    metric: Metric,
    value: f64,
    n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    acf: Option<drbeta::model::AcfDiagnostic>,
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let pred = read_column(&a.pred, &a.pred_col)?;
    let target: HashMap<String, f64> = read_column(&a.target, &a.target_col)?.into_iter().collect();
    let (p, t): (Vec<f64>, Vec<f64>) = pred.iter().filter_map(|(d, v)| target.get(d).map(|t| (*v, *t))).unzip();
    if p.is_empty() {
        return Err(CliError::Usage("predictions and targets share no dates".into()));
    }
    let value = evaluate(&p, &t, a.metric)?;
    let acf = a.acf_lags.map(|l| residual_acf_diagnostic(&t, &p, l)).transpose()?;
    write_json(
        &EvalReport {
            metric: a.metric,
            value,
            n: p.len(),
            acf,
        },
        a.out.as_deref(),
    )
}
