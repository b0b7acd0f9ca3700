//! Daily realized integrated beta, its asymptotic variance, and the CHEN and
//! PRVB comparison estimators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::WeightKernel;
use crate::panel::{DayView, PricePanel};
use crate::par::par_map;
use crate::preavg::{
    noise_moments, spot_covariance, AutoThresholds, DayStatistics, NoiseMomentEstimate, SpotCovEstimate,
    ThresholdLevels,
};
use crate::tuning::TuningConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Estimator {
    Rib,
    Chen,
    Prvb,
}

impl Estimator {
    pub fn tag(self) -> &'static str {
        match self {
            Estimator::Rib => "RIB",
            Estimator::Chen => "CHEN",
            Estimator::Prvb => "PRVB",
        }
    }
}

impl std::str::FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rib" => Ok(Estimator::Rib),
            "chen" => Ok(Estimator::Chen),
            "prvb" => Ok(Estimator::Prvb),
            other => Err(Error::Params(format!("unknown estimator '{other}'"))),
        }
    }
}

/// Which expression is used for the block variance `R̂²`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvarFormula {
    /// Noise-noise group `(2Σ₁₂²ϑ₁₁²/Σ₁₁⁴ - 4Σ₁₂ϑ₁₁ϑ₁₂/Σ₁₁³ + (ϑ₁₁ϑ₂₂ + ϑ₁₂²)/Σ₁₁²)`
    /// weighted by `Φ₁₁/C_k³`, matching the limiting variance.
    Corrected,
    /// The alternative printed form: `ϑ₁₁ϑ₁₂ + ϑ₁₁²` in the noise-noise group
    /// and an overall `Φ₁₁/C_k²` weight.
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    pub auto: AutoThresholds,
    /// Rescale by `m / (n_blocks·b_m)` so the dropped tail does not bias the
    /// integral.
    pub coverage_renorm: bool,
    pub avar_formula: AvarFormula,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            auto: AutoThresholds::default(),
            coverage_renorm: true,
            avar_formula: AvarFormula::Corrected,
        }
    }
}

/// `β̂ = Σ̂₁₂ / max(Σ̂₁₁, δ)`.
pub fn spot_beta(est: &SpotCovEstimate) -> f64 {
    est.sigma12 / est.sigma11_floored
}

/// Bias correction of the spot-beta ratio from the block noise moments.
pub fn debias_formula(s11_star: f64, s12: f64, th11: f64, th12: f64, kernel: &WeightKernel, cfg: &TuningConfig) -> f64 {
    let c = &kernel.constants;
    let ck = cfg.c_k();
    let pre = 4.0 / (c.psi0 * c.psi0 * ck.powi(3) * cfg.b_m as f64 * cfg.dt().sqrt());
    let first = ck * ck * c.phi01 / s11_star + c.phi11 * th11 / (s11_star * s11_star);
    let second = th11 * s12 / s11_star - th12;
    pre * first * second
}

pub fn debias_term(est: &SpotCovEstimate, nm: &NoiseMomentEstimate, kernel: &WeightKernel, cfg: &TuningConfig) -> f64 {
    debias_formula(est.sigma11_floored, est.sigma12, nm.theta11, nm.theta12, kernel, cfg)
}

/// Block variance `R̂²` before flooring.
pub fn block_r2(
    est: &SpotCovEstimate,
    nm: &NoiseMomentEstimate,
    kernel: &WeightKernel,
    cfg: &TuningConfig,
    formula: AvarFormula,
) -> f64 {
    let c = &kernel.constants;
    let ck = cfg.c_k();
    let s11 = est.sigma11_floored;
    let (s12, s22) = (est.sigma12, est.sigma22);
    let (t11, t12, t22) = (nm.theta11, nm.theta12, nm.theta22);
    let g0 = s22 / s11 - s12 * s12 / (s11 * s11);
    let g1 = t22 / s11 - 2.0 * s12 * t12 / (s11 * s11) + s22 * t11 / (s11 * s11);
    let lead = 2.0 * s12 * s12 * t11 * t11 / s11.powi(4);
    let cross = 4.0 * s12 * t11 * t12 / s11.powi(3);
    let (g2, w2) = match formula {
        AvarFormula::Corrected => (lead - cross + (t11 * t22 + t12 * t12) / (s11 * s11), c.phi11 / ck.powi(4)),
        AvarFormula::Printed => (lead + t11 * t12 / (s11 * s11) - cross + t11 * t11 / (s11 * s11), c.phi11 / ck.powi(3)),
    };
    2.0 * ck / (c.psi0 * c.psi0) * (c.phi00 * g0 + c.phi01 / (ck * ck) * g1 + w2 * g2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockEstimate {
    pub spot: SpotCovEstimate,
    pub noise: NoiseMomentEstimate,
    pub beta: f64,
    pub debias: f64,
    pub r2: f64,
    pub r2_floored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayEstimate {
    pub rib: f64,
    pub avar: f64,
    pub blocks: Vec<BlockEstimate>,
    pub levels: ThresholdLevels,
    /// Fraction of the day covered by full blocks.
    pub coverage: f64,
}

fn check_day(day: &DayView<'_>, cfg: &TuningConfig) -> Result<usize> {
    cfg.validate()?;
    let n_blocks = day.n_increments() / cfg.b_m;
    if n_blocks == 0 {
        return Err(Error::InsufficientData(format!(
            "day with {} increments is shorter than one block of {}",
            day.n_increments(),
            cfg.b_m
        )));
    }
    Ok(n_blocks)
}

fn coverage_scale(day: &DayView<'_>, cfg: &TuningConfig, n_blocks: usize, renorm: bool) -> (f64, f64) {
    let covered = (n_blocks * cfg.b_m) as f64 / day.n_increments() as f64;
    let scale = cfg.b_m as f64 / day.m as f64 * if renorm { 1.0 / covered } else { 1.0 };
    (covered, scale)
}

/// RIB and `Ŝ` for one day, with per-block detail.
pub fn rib_day(day: DayView<'_>, cfg: &TuningConfig, kernel: &WeightKernel, opts: &EstimatorOptions) -> Result<DayEstimate> {
    let n_blocks = check_day(&day, cfg)?;
    let stats = DayStatistics::new(day, cfg, kernel)?;
    let levels = stats.resolve_thresholds(cfg, &opts.auto);
    let mut blocks = Vec::with_capacity(n_blocks);
    for start in stats.block_starts(cfg.b_m) {
        let spot = spot_covariance(&stats, start, cfg, kernel, &levels)?;
        let noise = noise_moments(&stats, start, cfg, &levels)?;
        let r2 = block_r2(&spot, &noise, kernel, cfg, opts.avar_formula);
        blocks.push(BlockEstimate {
            beta: spot_beta(&spot),
            debias: debias_term(&spot, &noise, kernel, cfg),
            r2: r2.max(0.0),
            r2_floored: !(r2 >= 0.0),
            spot,
            noise,
        });
    }
    let (coverage, scale) = coverage_scale(&day, cfg, n_blocks, opts.coverage_renorm);
    // fixed left-to-right reduction
    let mut sum = 0.0;
    let mut s2 = 0.0;
    for b in &blocks {
        sum += b.beta - b.debias;
        s2 += b.r2;
    }
    Ok(DayEstimate {
        rib: scale * sum,
        avar: scale * s2,
        blocks,
        levels,
        coverage,
    })
}

pub fn rib_avar_day(day: DayView<'_>, cfg: &TuningConfig, kernel: &WeightKernel, opts: &EstimatorOptions) -> Result<f64> {
    Ok(rib_day(day, cfg, kernel, opts)?.avar)
}

/// `½ Σ_{j=1}^{k} (g_j - g_{j-1})² ΔY_{l+j} ΔY_{l+j}ᵀ` as `[11, 12, 22]`.
fn bias_matrix(y1: &[f64], y2: &[f64], l: usize, dg2: &[f64]) -> [f64; 3] {
    let mut acc = [0.0; 3];
    for (j, w) in dg2.iter().enumerate() {
        let i = l + j + 1;
        let (d1, d2) = (y1[i] - y1[i - 1], y2[i] - y2[i - 1]);
        acc[0] += w * d1 * d1;
        acc[1] += w * d1 * d2;
        acc[2] += w * d2 * d2;
    }
    acc.map(|v| 0.5 * v)
}

fn increment_weights(kernel: &WeightKernel, k: usize) -> (Vec<f64>, Vec<f64>) {
    let w = kernel.grid_weights(k);
    let dg2 = (1..=k).map(|j| (w[j] - w[j - 1]).powi(2)).collect();
    (w, dg2)
}

fn norm_level(levels: &ThresholdLevels) -> f64 {
    levels.u1.hypot(levels.u2)
}

/// CHEN block-wise estimate for one day.
pub fn chen_day(day: DayView<'_>, cfg: &TuningConfig, kernel: &WeightKernel, opts: &EstimatorOptions) -> Result<f64> {
    let n_blocks = check_day(&day, cfg)?;
    let stats = DayStatistics::new(day, cfg, kernel)?;
    let levels = stats.resolve_thresholds(cfg, &opts.auto);
    let u = norm_level(&levels);
    let (k, b) = (cfg.k_m, cfg.b_m);
    let (_, dg2) = increment_weights(kernel, k);
    let norm = (b - k) as f64 * day.dt() * k as f64 * kernel.psi0();
    let (y1, y2) = (day.y1, day.y2);
    let [pa1, pa2] = &stats.preavg;

    let mut sum = 0.0;
    for start in stats.block_starts(b) {
        let mut s = [0.0; 3];
        for l in start..start + b - k {
            let (a, c) = (pa1[l], pa2[l]);
            let yh = bias_matrix(y1, y2, l, &dg2);
            if a.hypot(c) <= u {
                s[0] += a * a;
                s[1] += a * c;
                s[2] += c * c;
            }
            for (e, h) in s.iter_mut().zip(yh) {
                *e -= h;
            }
        }
        let s = s.map(|v| v / norm);
        let mut th = [0.0; 3];
        for i in start + 1..=start + k {
            let (d1, d2) = (y1[i] - y1[i - 1], y2[i] - y2[i - 1]);
            th[0] += d1 * d1;
            th[1] += d1 * d2;
            th[2] += d2 * d2;
        }
        let th = th.map(|v| v / (2 * k) as f64);
        let s11_star = s[0].max(cfg.delta_m);
        let beta = s[1] / s11_star;
        sum += beta - debias_formula(s11_star, s[1], th[0], th[1], kernel, cfg);
    }
    let (_, scale) = coverage_scale(&day, cfg, n_blocks, opts.coverage_renorm);
    Ok(scale * sum)
}

/// Whole-day pre-averaged covariance ratio.
pub fn prvb_day(day: DayView<'_>, cfg: &TuningConfig, kernel: &WeightKernel, opts: &EstimatorOptions) -> Result<f64> {
    cfg.validate()?;
    let k = cfg.k_m;
    if day.len() < k + 2 {
        return Err(Error::InsufficientData(format!(
            "day with {} points is shorter than k_m + 2 = {}",
            day.len(),
            k + 2
        )));
    }
    let stats = DayStatistics::new(day, cfg, kernel)?;
    let levels = stats.resolve_thresholds(cfg, &opts.auto);
    let u = norm_level(&levels);
    let (_, dg2) = increment_weights(kernel, k);
    let [pa1, pa2] = &stats.preavg;
    let mut s = [0.0; 3];
    for l in 0..=day.n_increments() - k {
        let (a, c) = (pa1[l], pa2[l]);
        if a.hypot(c) <= u {
            let yh = bias_matrix(day.y1, day.y2, l, &dg2);
            s[0] += a * a - yh[0];
            s[1] += a * c - yh[1];
        }
    }
    if !(s[0] > 0.0) {
        return Err(Error::Degenerate(format!("PRVB denominator {} is not positive", s[0])));
    }
    Ok(s[1] / s[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayFailure {
    pub day: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RIBSeries {
    pub dates: Vec<String>,
    pub rib: Vec<f64>,
    /// `Ŝ` per day; NaN for estimators without one.
    pub avar: Vec<f64>,
    pub m_per_day: Vec<usize>,
    pub estimator: Estimator,
    pub failures: Vec<DayFailure>,
}

impl RIBSeries {
    pub fn len(&self) -> usize {
        self.rib.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rib.is_empty()
    }

    pub fn from_values(rib: Vec<f64>, estimator: Estimator) -> Self {
        let n = rib.len();
        Self {
            dates: (1..=n).map(|i| i.to_string()).collect(),
            avar: vec![f64::NAN; n],
            m_per_day: vec![0; n],
            rib,
            estimator,
            failures: Vec::new(),
        }
    }
}

/// Estimates every day independently; failed days are skipped and listed.
pub fn rib_series(
    panel: &PricePanel,
    cfg: &TuningConfig,
    kernel: &WeightKernel,
    opts: &EstimatorOptions,
    estimator: Estimator,
) -> Result<RIBSeries> {
    if panel.n_days() == 0 {
        return Err(Error::InsufficientData("panel has no days".into()));
    }
    let results: Vec<Result<(f64, f64)>> = par_map((0..panel.n_days()).collect(), |i| {
        let day = panel.day(i);
        match estimator {
            Estimator::Rib => rib_day(day, cfg, kernel, opts).map(|d| (d.rib, d.avar)),
            Estimator::Chen => chen_day(day, cfg, kernel, opts).map(|v| (v, f64::NAN)),
            Estimator::Prvb => prvb_day(day, cfg, kernel, opts).map(|v| (v, f64::NAN)),
        }
    });
    let mut out = RIBSeries {
        dates: Vec::new(),
        rib: Vec::new(),
        avar: Vec::new(),
        m_per_day: Vec::new(),
        estimator,
        failures: Vec::new(),
    };
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok((v, a)) => {
                out.dates.push(panel.dates[i].clone());
                out.rib.push(v);
                out.avar.push(a);
                out.m_per_day.push(panel.day(i).n_increments());
            }
            Err(e) => out.failures.push(DayFailure {
                day: i,
                reason: e.to_string(),
            }),
        }
    }
    Ok(out)
}
