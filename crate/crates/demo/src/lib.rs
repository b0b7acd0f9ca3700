//! WebAssembly bindings for the static demo page in `www/`.
//!
//! Every export returns a JSON string.

use drbeta::kernel::WeightKernel;
use drbeta::model::{fit, forecast_h, map_params, FitOptions};
use drbeta::rib::{chen_day, prvb_day, rib_day, rib_series, Estimator, EstimatorOptions};
use drbeta::sim::{simulate, SimConfig};
use drbeta::tuning::{tuning_from_m, TuningExponents};
use serde::Serialize;
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

fn config(m: usize, days: usize, noise_scale: f64) -> SimConfig {
    let mut cfg = SimConfig::standard(m, days);
    cfg.noise.s1 *= noise_scale;
    cfg.noise.s2 *= noise_scale;
    cfg
}

#[derive(Serialize)]
struct DayView {
    m: usize,
    /// Spot beta thinned to at most 500 points, on `[0, 1]`.
    spot_t: Vec<f64>,
    spot_beta: Vec<f64>,
    /// Block centres and debiased block estimates.
    block_t: Vec<f64>,
    block_beta: Vec<f64>,
    true_ibeta: f64,
    rib: f64,
    rib_se: f64,
    chen: f64,
    prvb: f64,
}

pub fn one_day_json(m: usize, seed: u64, noise_scale: f64) -> Result<String, drbeta::Error> {
    let cfg = config(m, 1, noise_scale);
    let out = simulate(&cfg, seed)?;
    let tuning = tuning_from_m(m, None, &TuningExponents::default())?;
    let kernel = WeightKernel::triangular();
    let opts = EstimatorOptions::default();
    let day = out.observed.day(0);
    let est = rib_day(day, &tuning, &kernel, &opts)?;
    let stride = (m / 500).max(1);
    let idx: Vec<usize> = (0..=m).step_by(stride).collect();
    let view = DayView {
        m,
        spot_t: idx.iter().map(|&j| j as f64 / m as f64).collect(),
        spot_beta: idx.iter().map(|&j| out.spot_beta[j]).collect(),
        block_t: est
            .blocks
            .iter()
            .map(|b| (b.spot.block_start as f64 + 0.5 * tuning.b_m as f64) / m as f64)
            .collect(),
        block_beta: est.blocks.iter().map(|b| b.beta - b.debias).collect(),
        true_ibeta: out.true_ibeta[0],
        rib: est.rib,
        rib_se: (est.avar / (m as f64).sqrt()).sqrt(),
        chen: chen_day(day, &tuning, &kernel, &opts)?,
        prvb: prvb_day(day, &tuning, &kernel, &opts)?,
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Serialize)]
struct SeriesView {
    true_ibeta: Vec<f64>,
    rib: Vec<f64>,
    prvb: Vec<f64>,
    mse_rib: f64,
    mse_prvb: f64,
}

pub fn series_json(m: usize, days: usize, seed: u64, noise_scale: f64) -> Result<String, drbeta::Error> {
    let cfg = config(m, days, noise_scale);
    let out = simulate(&cfg, seed)?;
    let tuning = tuning_from_m(m, None, &TuningExponents::default())?;
    let kernel = WeightKernel::triangular();
    let opts = EstimatorOptions::default();
    let rib = rib_series(&out.observed, &tuning, &kernel, &opts, Estimator::Rib)?;
    let prvb = rib_series(&out.observed, &tuning, &kernel, &opts, Estimator::Prvb)?;
    if !rib.failures.is_empty() || !prvb.failures.is_empty() {
        return Err(drbeta::Error::Degenerate(format!(
            "{} day(s) could not be estimated",
            rib.failures.len() + prvb.failures.len()
        )));
    }
    let mse = |v: &[f64]| v.iter().zip(&out.true_ibeta).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / days as f64;
    let view = SeriesView {
        mse_rib: mse(&rib.rib),
        mse_prvb: mse(&prvb.rib),
        true_ibeta: out.true_ibeta,
        rib: rib.rib,
        prvb: prvb.rib,
    };
    Ok(serde_json::to_string(&view)?)
}

#[derive(Serialize)]
struct FitView {
    coefficients: Vec<String>,
    theta_true: Vec<f64>,
    theta_hat: Vec<f64>,
    std_errors: Vec<f64>,
    rib: Vec<f64>,
    forecast: f64,
    true_h_next: f64,
}

/// Fits the (1,1) model to `days` RIB values and forecasts the next day.
pub fn fit_json(m: usize, days: usize, seed: u64) -> Result<String, drbeta::Error> {
    let cfg = config(m, days + 1, 1.0);
    let out = simulate(&cfg, seed)?;
    let train = out.observed.select_days(&(0..days).collect::<Vec<_>>())?;
    let tuning = tuning_from_m(m, None, &TuningExponents::default())?;
    let rib = rib_series(&train, &tuning, &WeightKernel::triangular(), &EstimatorOptions::default(), Estimator::Rib)?;
    let opts = FitOptions::default();
    let f = fit(&rib.rib, 1, 1, &opts)?;
    let view = FitView {
        coefficients: f.theta_hat.coefficient_names(),
        theta_true: map_params(&cfg.dr)?.to_vec(),
        theta_hat: f.theta_hat.to_vec(),
        std_errors: f.inference.map(|i| i.std_errors).unwrap_or_default(),
        forecast: forecast_h(&f.theta_hat, &rib.rib, &opts.init, 1)?,
        true_h_next: out.true_h[days],
        rib: rib.rib,
    };
    Ok(serde_json::to_string(&view)?)
}

/// One simulated day: spot beta, block estimates and the daily estimators.
#[wasm_bindgen]
pub fn simulate_day(m: usize, seed: u64, noise_scale: f64) -> Result<String, JsError> {
    one_day_json(m, seed, noise_scale).map_err(js_err)
}

/// Daily RIB and PRVB against the true integrated beta.
#[wasm_bindgen]
pub fn estimate_series(m: usize, days: usize, seed: u64, noise_scale: f64) -> Result<String, JsError> {
    series_json(m, days, seed, noise_scale).map_err(js_err)
}

/// Model fit on RIB and a one-day-ahead forecast.
#[wasm_bindgen]
pub fn fit_and_forecast(m: usize, days: usize, seed: u64) -> Result<String, JsError> {
    fit_json(m, days, seed).map_err(js_err)
}
