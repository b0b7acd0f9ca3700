use std::str::FromStr;

use argmin::core::CostFunction;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::fit::{fit, nelder_mead, yule_walker, FitOptions};
use super::{h_recursion, GarchParams, HInit};
use crate::error::{Error, Result};
use crate::par::par_map;
use crate::rib::Estimator;

/// `ĥ` for `horizon` days past the end of `history`; later days use earlier
/// forecasts in place of the unobserved series.
pub fn forecast_h(theta: &GarchParams, history: &[f64], init: &HInit, horizon: usize) -> Result<f64> {
    if horizon == 0 {
        return Err(Error::Params("horizon must be at least 1".into()));
    }
    let r = theta.depth();
    if history.len() < r.max(1) {
        return Err(Error::InsufficientData(format!(
            "history of length {} for recursion depth {r}",
            history.len()
        )));
    }
    let mut x = history.to_vec();
    let mut h = if history.len() > r {
        h_recursion(theta, history, init)?
    } else {
        // history only covers the initial values
        let mut padded = history.to_vec();
        padded.push(0.0);
        let mut h = h_recursion(theta, &padded, init)?;
        h.pop();
        if matches!(init, HInit::SampleMean) {
            let mean = history.iter().sum::<f64>() / history.len() as f64;
            h.iter_mut().for_each(|v| *v = mean);
        }
        h
    };
    let mut last = f64::NAN;
    for _ in 0..horizon {
        let n = x.len();
        let mut v = theta.omega_g;
        for (j, g) in theta.gamma.iter().enumerate() {
            v += g * h[n - 1 - j];
        }
        for (j, a) in theta.alpha_g.iter().enumerate() {
            v += a * x[n - 1 - j];
        }
        h.push(v);
        x.push(v);
        last = v;
    }
    Ok(last)
}

/// One-day-ahead forecasts from a model refitted on each trailing window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RollingForecast {
    /// Index in the input series of each forecast target.
    pub target_index: Vec<usize>,
    pub forecast: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
}

pub fn rolling_forecast(x: &[f64], p: usize, q: usize, window: usize, opts: &FitOptions) -> Result<RollingForecast> {
    if window == 0 || x.len() <= window {
        return Err(Error::InsufficientData(format!(
            "series of length {} with window {window} leaves nothing to forecast",
            x.len()
        )));
    }
    let results = par_map((window..x.len()).collect(), |t| -> Result<(usize, f64, Vec<f64>)> {
        let hist = &x[t - window..t];
        let f = fit(hist, p, q, opts)?;
        let v = forecast_h(&f.theta_hat, hist, &opts.init, 1)?;
        Ok((t, v, f.theta_hat.to_vec()))
    });
    let mut out = RollingForecast {
        target_index: Vec::new(),
        forecast: Vec::new(),
        theta: Vec::new(),
    };
    for r in results {
        let (t, v, th) = r?;
        out.target_index.push(t);
        out.forecast.push(v);
        out.theta.push(th);
    }
    Ok(out)
}

/// ARMA(p, q) fitted by conditional least squares.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaFit {
    pub p: usize,
    pub q: usize,
    pub mean: f64,
    pub ar: Vec<f64>,
    pub ma: Vec<f64>,
    pub sigma2: f64,
    /// All roots of the MA polynomial lie outside the unit circle.
    pub invertible: bool,
    /// Which beta estimator produced the input series, if known.
    pub source: Option<Estimator>,
}

/// Innovations `e_t` for `t ≥ p`, with pre-sample innovations set to zero.
fn arma_innovations(x: &[f64], mean: f64, ar: &[f64], ma: &[f64]) -> Vec<f64> {
    let p = ar.len();
    let mut e = vec![0.0; x.len()];
    for t in p..x.len() {
        let mut v = x[t] - mean;
        for (i, a) in ar.iter().enumerate() {
            v -= a * (x[t - 1 - i] - mean);
        }
        for (j, m) in ma.iter().enumerate() {
            if t > j {
                v -= m * e[t - 1 - j];
            }
        }
        e[t] = v;
    }
    e
}

#[derive(Clone)]
struct ArmaObjective<'a> {
    x: &'a [f64],
    p: usize,
}

impl CostFunction for ArmaObjective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, v: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        let e = arma_innovations(self.x, v[0], &v[1..1 + self.p], &v[1 + self.p..]);
        let sse: f64 = e[self.p..].iter().map(|v| v * v).sum();
        Ok(if sse.is_finite() { sse } else { 1e300 })
    }
}

/// Spectral radius of the companion matrix of `1 + θ₁z + … + θ_q z^q`.
fn ma_spectral_radius(ma: &[f64]) -> f64 {
    let q = ma.len();
    if q == 0 {
        return 0.0;
    }
    let mut c = DMatrix::<f64>::zeros(q, q);
    for j in 0..q {
        c[(0, j)] = -ma[j];
    }
    for i in 1..q {
        c[(i, i - 1)] = 1.0;
    }
    c.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn arma_fit(x: &[f64], p: usize, q: usize) -> Result<ArmaFit> {
    if x.len() < 20 {
        return Err(Error::InsufficientData(format!("ARMA needs 20 values, got {}", x.len())));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Params(format!("series value {i} is {}", x[i])));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.iter().all(|v| *v == x[0]) {
        return Ok(ArmaFit {
            p,
            q,
            mean: x[0],
            ar: vec![0.0; p],
            ma: vec![0.0; q],
            sigma2: 0.0,
            invertible: true,
            source: None,
        });
    }
    let ar0 = yule_walker(x, p)?;
    let obj = ArmaObjective { x, p };
    let mut best: Option<(Vec<f64>, f64)> = None;
    for m0 in [0.0, 0.3, -0.3] {
        if q == 0 && m0 != 0.0 {
            continue;
        }
        let mut start = vec![mean];
        start.extend(&ar0);
        start.extend(std::iter::repeat(m0).take(q));
        let (v, c) = nelder_mead(obj.clone(), &start, 4000, 1e-14)?;
        if best.as_ref().map_or(true, |b| c < b.1) {
            best = Some((v, c));
        }
    }
    let (v, sse) = best.unwrap();
    let ma = v[1 + p..].to_vec();
    Ok(ArmaFit {
        p,
        q,
        mean: v[0],
        ar: v[1..1 + p].to_vec(),
        invertible: ma_spectral_radius(&ma) < 1.0,
        ma,
        sigma2: sse / (x.len() - p) as f64,
        source: None,
    })
}

/// One-step forecast of the value following `x`.
pub fn arma_forecast(model: &ArmaFit, x: &[f64]) -> f64 {
    let e = arma_innovations(x, model.mean, &model.ar, &model.ma);
    let n = x.len();
    let mut v = model.mean;
    for (i, a) in model.ar.iter().enumerate() {
        if n > i {
            v += a * (x[n - 1 - i] - model.mean);
        }
    }
    for (j, m) in model.ma.iter().enumerate() {
        if n > j {
            v += m * e[n - 1 - j];
        }
    }
    v
}

/// Fits an ARMA(p, q) to a beta series and forecasts the next day.
pub fn arma_forecaster(x: &[f64], p: usize, q: usize, source: Option<Estimator>) -> Result<(ArmaFit, f64)> {
    let mut model = arma_fit(x, p, q)?;
    model.source = source;
    let f = arma_forecast(&model, x);
    Ok((model, f))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Msfe,
    Mape,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "msfe" => Ok(Metric::Msfe),
            "mape" => Ok(Metric::Mape),
            other => Err(Error::Params(format!("unknown metric {other:?}"))),
        }
    }
}

pub fn evaluate(pred: &[f64], target: &[f64], metric: Metric) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::LengthMismatch(format!(
            "{} predictions for {} targets",
            pred.len(),
            target.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::InsufficientData("nothing to evaluate".into()));
    }
    let n = pred.len() as f64;
    let d = pred.iter().zip(target).map(|(a, b)| a - b);
    Ok(match metric {
        Metric::Msfe => d.map(|v| v * v).sum::<f64>() / n,
        Metric::Mape => d.map(f64::abs).sum::<f64>() / n,
    })
}

/// OLS of the series on a prediction and the residual autocorrelations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcfDiagnostic {
    pub intercept: f64,
    pub slope: f64,
    /// Lags `1..=max_lag`; empty when the residuals vanish.
    pub acf: Vec<f64>,
    pub degenerate: bool,
}

pub fn residual_acf_diagnostic(y: &[f64], pred: &[f64], max_lag: usize) -> Result<AcfDiagnostic> {
    if y.len() != pred.len() {
        return Err(Error::LengthMismatch(format!("{} values vs {} predictions", y.len(), pred.len())));
    }
    if y.len() < max_lag + 10 {
        return Err(Error::InsufficientData(format!(
            "{} values for {max_lag} lags",
            y.len()
        )));
    }
    let n = y.len() as f64;
    let mx = pred.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = pred.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("prediction series has zero variance".into()));
    }
    let sxy: f64 = pred.iter().zip(y).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let e: Vec<f64> = y.iter().zip(pred).map(|(y, x)| y - intercept - slope * x).collect();
    let me = e.iter().sum::<f64>() / n;
    let c0: f64 = e.iter().map(|v| (v - me).powi(2)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if c0 <= 1e-24 * syy.max(f64::MIN_POSITIVE) {
        return Ok(AcfDiagnostic {
            intercept,
            slope,
            acf: Vec::new(),
            degenerate: true,
        });
    }
    let acf = (1..=max_lag)
        .map(|k| (k..e.len()).map(|t| (e[t] - me) * (e[t - k] - me)).sum::<f64>() / c0)
        .collect();
    Ok(AcfDiagnostic {
        intercept,
        slope,
        acf,
        degenerate: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn forecast_cases() {
        let t = GarchParams::new(1, 1, 0.13, vec![0.25], vec![0.10]).unwrap();
        let f = forecast_h(&t, &[0.3], &HInit::Fixed(vec![0.25]), 1).unwrap();
        assert_abs_diff_eq!(f, 0.2225, epsilon = 1e-15);
        let c = GarchParams::new(1, 1, 0.4, vec![0.0], vec![0.0]).unwrap();
        assert_eq!(forecast_h(&c, &[1.0, 2.0, 3.0], &HInit::SampleMean, 1).unwrap(), 0.4);
        // long horizons approach the unconditional mean
        let far = forecast_h(&t, &[0.3, 0.5, 0.1], &HInit::SampleMean, 500).unwrap();
        assert_abs_diff_eq!(far, t.unconditional_mean().unwrap(), epsilon = 1e-12);
        assert!(forecast_h(&t, &[0.3], &HInit::SampleMean, 0).is_err());
    }

    #[test]
    fn forecast_extends_recursion() {
        let t = GarchParams::new(2, 1, 0.1, vec![0.2, 0.1], vec![0.3, 0.05]).unwrap();
        let x: Vec<f64> = noise(30, 2).iter().map(|v| 1.0 + 0.1 * v).collect();
        let mut ext = x.clone();
        ext.push(123.0);
        let h = h_recursion(&t, &ext, &HInit::Fixed(vec![1.0, 1.0])).unwrap();
        let f = forecast_h(&t, &x, &HInit::Fixed(vec![1.0, 1.0]), 1).unwrap();
        assert_abs_diff_eq!(f, h[30], epsilon = 1e-14);
    }

    #[test]
    fn rolling_forecast_count() {
        let x: Vec<f64> = noise(130, 4).iter().map(|v| 1.0 + 0.2 * v).collect();
        let r = rolling_forecast(&x, 0, 1, 100, &FitOptions { starts: 2, ..Default::default() }).unwrap();
        assert_eq!(r.forecast.len(), 30);
        assert_eq!(r.target_index[0], 100);
    }

    #[test]
    fn arma_recovers_ar1() {
        let e = noise(5001, 7);
        let mut x = vec![0.0];
        for t in 1..5001 {
            x.push(0.5 * x[t - 1] + e[t]);
        }
        let m = arma_fit(&x, 1, 0).unwrap();
        assert!((m.ar[0] - 0.5).abs() < 0.05, "{:?}", m.ar);
    }

    #[test]
    fn arma_recovers_ma1_and_flags_invertibility() {
        let e = noise(4001, 8);
        let x: Vec<f64> = (1..4001).map(|t| 2.0 + e[t] + 0.4 * e[t - 1]).collect();
        let m = arma_fit(&x, 0, 1).unwrap();
        assert!((m.ma[0] - 0.4).abs() < 0.06, "{:?}", m.ma);
        assert!(m.invertible);
        assert!(ma_spectral_radius(&[2.0]) > 1.0);
        assert!(ma_spectral_radius(&[0.5, 0.2]) < 1.0);
    }

    #[test]
    fn arma_trivial_series() {
        let (_, f) = arma_forecaster(&[0.8; 40], 1, 1, Some(Estimator::Prvb)).unwrap();
        assert_eq!(f, 0.8);
        let x: Vec<f64> = noise(3000, 9).iter().map(|v| 1.5 + v).collect();
        let (m, f) = arma_forecaster(&x, 1, 1, None).unwrap();
        let mean = x.iter().sum::<f64>() / x.len() as f64;
        assert!((f - mean).abs() < 0.1, "{f} vs {mean} ({m:?})");
        assert!(arma_fit(&x[..10], 1, 1).is_err());
    }

    #[test]
    fn evaluate_cases() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(evaluate(&a, &a, Metric::Msfe).unwrap(), 0.0);
        assert_eq!(evaluate(&a, &a, Metric::Mape).unwrap(), 0.0);
        let b = [1.5, 2.5, 3.5];
        assert_abs_diff_eq!(evaluate(&b, &a, Metric::Msfe).unwrap(), 0.25);
        assert_abs_diff_eq!(evaluate(&b, &a, Metric::Mape).unwrap(), 0.5);
        // errors 1, -2, 0.5
        let c = [2.0, 0.0, 3.5];
        assert_abs_diff_eq!(evaluate(&c, &a, Metric::Msfe).unwrap(), 5.25 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(evaluate(&c, &a, Metric::Mape).unwrap(), 3.5 / 3.0, epsilon = 1e-15);
        assert!(evaluate(&a, &b[..2], Metric::Msfe).is_err());
        assert_eq!("MAPE".parse::<Metric>().unwrap(), Metric::Mape);
    }

    #[test]
    fn acf_diagnostic_cases() {
        let x: Vec<f64> = noise(2000, 10);
        let d = residual_acf_diagnostic(&x, &x, 5).unwrap();
        assert!(d.degenerate && d.acf.is_empty());
        assert_abs_diff_eq!(d.slope, 1.0, epsilon = 1e-12);
        let pred: Vec<f64> = noise(2000, 11);
        let y: Vec<f64> = pred.iter().zip(&x).map(|(p, e)| 0.5 + 2.0 * p + e).collect();
        let d = residual_acf_diagnostic(&y, &pred, 5).unwrap();
        assert!((d.slope - 2.0).abs() < 0.1);
        assert!(d.acf[0].abs() < 2.0 / (2000f64).sqrt());
        assert!(residual_acf_diagnostic(&y, &[1.0; 2000], 5).is_err());
    }

    proptest! {
        #[test]
        fn evaluate_constant_offset(xs in proptest::collection::vec(-5.0f64..5.0, 1..50), c in -2.0f64..2.0) {
            let p: Vec<f64> = xs.iter().map(|v| v + c).collect();
            prop_assert!((evaluate(&p, &xs, Metric::Msfe).unwrap() - c * c).abs() < 1e-9);
            prop_assert!((evaluate(&p, &xs, Metric::Mape).unwrap() - c.abs()).abs() < 1e-9);
        }
    }
}
