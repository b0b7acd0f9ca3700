//! Pre-averaging building blocks and the block spot-covariance estimator.
//!
//! Notation for one day of observations `P_0, …, P_L`:
//!
//! ```text
//! P̃_l    = Σ_{j=1}^{k-1} g(j/k) (P_{l+j} - P_{l+j-1})
//! P̄_l    = (1/l_m) Σ_{i=0}^{l_m-1} P_{l+i}
//! E^d_l  = (P_l - P̄_{l+2l_m}) (P'_{l+d} - P̄'_{l+4l_m})           d ≥ 0
//! E^d_l  = (P_{l+|d|} - P̄_{l+2l_m}) (P'_l - P̄'_{l+4l_m})         d < 0
//! Ê_l    = Σ_{|d|≤k'} φ_d E^d_l        Ė_l = Σ_{|d|≤k'} E^d_l
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{discrete_phi_weights, PhiWeights, WeightKernel};
use crate::panel::DayView;
use crate::tuning::{Threshold, TuningConfig};

/// Index of a covariance entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pair {
    P11,
    P12,
    P22,
}

impl Pair {
    pub const ALL: [Pair; 3] = [Pair::P11, Pair::P12, Pair::P22];

    fn idx(self) -> usize {
        self as usize
    }

    fn series(self) -> (usize, usize) {
        match self {
            Pair::P11 => (0, 0),
            Pair::P12 => (0, 1),
            Pair::P22 => (1, 1),
        }
    }
}

/// `P̃_l` with `weights[j] = g(j/k)` for `j = 0..=k`.
pub fn preaveraged_increment(y: &[f64], l: usize, weights: &[f64]) -> Result<f64> {
    let k = weights.len() - 1;
    if l + k > y.len() {
        return Err(Error::Index(format!(
            "pre-averaged increment at l = {l} with k_m = {k} needs {} points, have {}",
            l + k,
            y.len()
        )));
    }
    let mut acc = 0.0;
    for j in 1..k {
        acc += weights[j] * (y[l + j] - y[l + j - 1]);
    }
    Ok(acc)
}

pub fn local_average(y: &[f64], l: usize, l_m: usize) -> Result<f64> {
    if l_m == 0 || l + l_m > y.len() {
        return Err(Error::Index(format!(
            "local average at l = {l} over {l_m} points, have {}",
            y.len()
        )));
    }
    Ok(y[l..l + l_m].iter().sum::<f64>() / l_m as f64)
}

/// `E^d_i` for the series pair `(a, b)`.
pub fn noise_lag_statistic(a: &[f64], b: &[f64], i: usize, d: isize, l_m: usize) -> Result<f64> {
    let lag = d.unsigned_abs();
    if i + lag + 5 * l_m > a.len().min(b.len()) {
        return Err(Error::Index(format!(
            "noise statistic at i = {i}, d = {d}, l_m = {l_m} exceeds length {}",
            a.len().min(b.len())
        )));
    }
    let (ia, ib) = if d >= 0 { (i, i + lag) } else { (i + lag, i) };
    let ca = a[ia] - local_average(a, i + 2 * l_m, l_m)?;
    let cb = b[ib] - local_average(b, i + 4 * l_m, l_m)?;
    Ok(ca * cb)
}

/// `Ê_i = Σ_d φ_d E^d_i`.
pub fn noise_weighted_stat(a: &[f64], b: &[f64], i: usize, l_m: usize, phi: &PhiWeights) -> Result<f64> {
    let mut acc = 0.0;
    for (d, w) in phi.iter() {
        acc += w * noise_lag_statistic(a, b, i, d, l_m)?;
    }
    Ok(acc)
}

/// `Ė_i = Σ_d E^d_i`.
pub fn noise_lag_sum(a: &[f64], b: &[f64], i: usize, l_m: usize, k_prime: usize) -> Result<f64> {
    let kp = k_prime as isize;
    let mut acc = 0.0;
    for d in -kp..=kp {
        acc += noise_lag_statistic(a, b, i, d, l_m)?;
    }
    Ok(acc)
}

/// How a day's data-driven truncation levels are formed from the sample
/// spread of each statistic population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoThresholds {
    pub return_mult: f64,
    pub return_scale: ScaleEstimator,
    pub noise_mult: f64,
    pub noise_scale: ScaleEstimator,
}

impl Default for AutoThresholds {
    fn default() -> Self {
        Self {
            return_mult: 4.0,
            return_scale: ScaleEstimator::Mad,
            noise_mult: 0.2,
            noise_scale: ScaleEstimator::SampleSd,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleEstimator {
    /// Sample standard deviation.
    SampleSd,
    /// 1.4826 × median absolute deviation; agrees with the standard
    /// deviation for Gaussian data and ignores a few large outliers.
    Mad,
}

impl ScaleEstimator {
    pub fn apply(self, xs: &[f64]) -> f64 {
        if xs.len() < 2 {
            return f64::INFINITY;
        }
        match self {
            ScaleEstimator::SampleSd => {
                let n = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / n;
                (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            }
            ScaleEstimator::Mad => {
                let med = median(xs.to_vec());
                let dev: Vec<f64> = xs.iter().map(|x| (x - med).abs()).collect();
                1.4826 * median(dev)
            }
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    let n = v.len();
    let mid = n / 2;
    v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = v[mid];
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Absolute truncation levels for one day; `f64::INFINITY` disables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdLevels {
    pub u1: f64,
    pub u2: f64,
    pub u11: f64,
    pub u12: f64,
    pub u22: f64,
    pub a_dot11: f64,
    pub a_dot12: f64,
    pub a_dot22: f64,
}

impl ThresholdLevels {
    pub const NONE: ThresholdLevels = ThresholdLevels {
        u1: f64::INFINITY,
        u2: f64::INFINITY,
        u11: f64::INFINITY,
        u12: f64::INFINITY,
        u22: f64::INFINITY,
        a_dot11: f64::INFINITY,
        a_dot12: f64::INFINITY,
        a_dot22: f64::INFINITY,
    };

    pub fn returns(&self) -> [f64; 2] {
        [self.u1, self.u2]
    }

    pub fn noise(&self, p: Pair) -> f64 {
        [self.u11, self.u12, self.u22][p.idx()]
    }

    pub fn noise_dot(&self, p: Pair) -> f64 {
        [self.a_dot11, self.a_dot12, self.a_dot22][p.idx()]
    }

    /// Multiplies return levels by `c` and noise levels by `c²`.
    pub fn scaled(&self, c: f64) -> Self {
        let c = c.abs();
        Self {
            u1: self.u1 * c,
            u2: self.u2 * c,
            u11: self.u11 * c * c,
            u12: self.u12 * c * c,
            u22: self.u22 * c * c,
            a_dot11: self.a_dot11 * c * c,
            a_dot12: self.a_dot12 * c * c,
            a_dot22: self.a_dot22 * c * c,
        }
    }
}

/// Pre-averaged increments and noise statistics over a whole day.
#[derive(Debug, Clone)]
pub struct DayStatistics<'a> {
    pub day: DayView<'a>,
    pub k_m: usize,
    pub l_m: usize,
    pub k_prime: usize,
    pub phi: PhiWeights,
    /// `P̃_l` of the market and the asset, `l = 0..=L+1-k`.
    pub preavg: [Vec<f64>; 2],
    /// `Ê_i` for pairs 11, 12, 22.
    pub ehat: [Vec<f64>; 3],
    /// `Ė_i` for pairs 11, 12, 22.
    pub edot: [Vec<f64>; 3],
}

impl<'a> DayStatistics<'a> {
    pub fn new(day: DayView<'a>, cfg: &TuningConfig, kernel: &WeightKernel) -> Result<Self> {
        let len = day.len();
        let (k, l_m, kp) = (cfg.k_m, cfg.l_m, cfg.k_prime_m);
        if len < k + 1 || len < 5 * l_m + kp + 1 {
            return Err(Error::InsufficientData(format!(
                "day with {len} points is too short for k_m = {k}, l_m = {l_m}"
            )));
        }
        let weights = kernel.grid_weights(k);
        let phi = discrete_phi_weights(k, kp, kernel.g.as_ref())?;
        let ys = [day.y1, day.y2];

        let n_pa = len + 1 - k;
        let preavg = ys.map(|y| {
            (0..n_pa)
                .map(|l| preaveraged_increment(y, l, &weights))
                .collect::<Result<Vec<_>>>()
        });
        let [pa1, pa2] = preavg;

        let n_noise = len + 1 - 5 * l_m - kp;
        let mut ehat: [Vec<f64>; 3] = Default::default();
        let mut edot: [Vec<f64>; 3] = Default::default();
        for p in Pair::ALL {
            let (a, b) = p.series();
            let (a, b) = (ys[a], ys[b]);
            let mut eh = Vec::with_capacity(n_noise);
            let mut ed = Vec::with_capacity(n_noise);
            for i in 0..n_noise {
                // one pass over the lags serves both sums
                let kpi = kp as isize;
                let (mut wsum, mut usum) = (0.0, 0.0);
                for d in -kpi..=kpi {
                    let e = noise_lag_statistic(a, b, i, d, l_m)?;
                    wsum += phi.get(d) * e;
                    usum += e;
                }
                eh.push(wsum);
                ed.push(usum);
            }
            ehat[p.idx()] = eh;
            edot[p.idx()] = ed;
        }

        Ok(Self {
            day,
            k_m: k,
            l_m,
            k_prime: kp,
            phi,
            preavg: [pa1?, pa2?],
            ehat,
            edot,
        })
    }

    /// Fills `Auto` levels from this day's populations.
    pub fn resolve_thresholds(&self, cfg: &TuningConfig, auto: &AutoThresholds) -> ThresholdLevels {
        let resolve = |t: Threshold, pop: &[f64], mult: f64, scale: ScaleEstimator| match t {
            Threshold::Infinite => f64::INFINITY,
            Threshold::Level(v) => v,
            Threshold::Auto => {
                let s = mult * scale.apply(pop);
                if s > 0.0 {
                    s
                } else {
                    f64::INFINITY
                }
            }
        };
        ThresholdLevels {
            u1: resolve(cfg.u1, &self.preavg[0], auto.return_mult, auto.return_scale),
            u2: resolve(cfg.u2, &self.preavg[1], auto.return_mult, auto.return_scale),
            u11: resolve(cfg.u11, &self.ehat[0], auto.noise_mult, auto.noise_scale),
            u12: resolve(cfg.u12, &self.ehat[1], auto.noise_mult, auto.noise_scale),
            u22: resolve(cfg.u22, &self.ehat[2], auto.noise_mult, auto.noise_scale),
            a_dot11: resolve(cfg.a_dot11, &self.edot[0], auto.noise_mult, auto.noise_scale),
            a_dot12: resolve(cfg.a_dot12, &self.edot[1], auto.noise_mult, auto.noise_scale),
            a_dot22: resolve(cfg.a_dot22, &self.edot[2], auto.noise_mult, auto.noise_scale),
        }
    }

    /// Start indices of the tiled blocks; a trailing partial block is dropped.
    pub fn block_starts(&self, b_m: usize) -> impl Iterator<Item = usize> {
        let n_blocks = self.day.n_increments() / b_m;
        (0..n_blocks).map(move |i| i * b_m)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationCounts {
    /// Pre-averaged return products dropped, per pair 11, 12, 22.
    pub returns: [usize; 3],
    /// Weighted noise statistics dropped, per pair.
    pub noise: [usize; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpotCovEstimate {
    pub sigma11: f64,
    pub sigma12: f64,
    pub sigma22: f64,
    pub sigma11_floored: f64,
    pub block_start: usize,
    pub truncation: TruncationCounts,
    /// Every pre-averaged market return in the block was truncated.
    pub all_truncated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseMomentEstimate {
    pub theta11: f64,
    pub theta12: f64,
    pub theta22: f64,
    pub block_start: usize,
    /// Diagonal estimates that were negative and set to 0.
    pub floored: [bool; 2],
    pub clipped: [usize; 3],
}

fn check_block(stats: &DayStatistics<'_>, block_start: usize, cfg: &TuningConfig) -> Result<()> {
    if block_start + cfg.b_m > stats.day.n_increments() + 1 {
        return Err(Error::Index(format!(
            "block [{block_start}, {}) exceeds day of {} points",
            block_start + cfg.b_m,
            stats.day.len()
        )));
    }
    if cfg.b_m <= 2 * cfg.k_m || cfg.b_m <= 6 * cfg.l_m {
        return Err(Error::InsufficientData(format!(
            "block length {} too short for k_m = {}, l_m = {}",
            cfg.b_m, cfg.k_m, cfg.l_m
        )));
    }
    if block_start + cfg.b_m - 6 * cfg.l_m >= stats.ehat[0].len() {
        return Err(Error::Index(format!(
            "noise statistics for block at {block_start} run past the day end (k'_m = {})",
            cfg.k_prime_m
        )));
    }
    Ok(())
}

/// Truncated, noise-corrected spot covariance on `[block_start, block_start + b_m)`.
pub fn spot_covariance(
    stats: &DayStatistics<'_>,
    block_start: usize,
    cfg: &TuningConfig,
    kernel: &WeightKernel,
    levels: &ThresholdLevels,
) -> Result<SpotCovEstimate> {
    check_block(stats, block_start, cfg)?;
    let (b, k, l_m) = (cfg.b_m, cfg.k_m, cfg.l_m);
    let norm = (b - 2 * k) as f64 * stats.day.dt() * k as f64 * kernel.psi0();
    let [u1, u2] = levels.returns();
    let ret_idx = block_start..block_start + b - 2 * k;
    let noise_idx = block_start..=block_start + b - 6 * l_m;

    let mut counts = TruncationCounts::default();
    let mut out = [0.0; 3];
    let mut any_kept = false;
    for p in Pair::ALL {
        let (a, c) = p.series();
        let (ua, uc) = ([u1, u2][a], [u1, u2][c]);
        let (pa, pc) = (&stats.preavg[a], &stats.preavg[c]);
        let mut sum = 0.0;
        for i in ret_idx.clone() {
            if pa[i].abs() <= ua && pc[i].abs() <= uc {
                sum += pa[i] * pc[i];
                if p == Pair::P11 {
                    any_kept = true;
                }
            } else {
                counts.returns[p.idx()] += 1;
            }
        }
        let lvl = levels.noise(p);
        let mut corr = 0.0;
        for e in &stats.ehat[p.idx()][noise_idx.clone()] {
            if e.abs() <= lvl {
                corr += e;
            } else {
                counts.noise[p.idx()] += 1;
            }
        }
        out[p.idx()] = (sum - corr / k as f64) / norm;
    }

    let all_truncated = !any_kept;
    if all_truncated {
        out = [0.0; 3];
    }
    Ok(SpotCovEstimate {
        sigma11: out[0],
        sigma12: out[1],
        sigma22: out[2],
        sigma11_floored: out[0].max(cfg.delta_m),
        block_start,
        truncation: counts,
        all_truncated,
    })
}

/// Long-run noise (co)variances `ϑ̂` on the block.
pub fn noise_moments(
    stats: &DayStatistics<'_>,
    block_start: usize,
    cfg: &TuningConfig,
    levels: &ThresholdLevels,
) -> Result<NoiseMomentEstimate> {
    check_block(stats, block_start, cfg)?;
    let count = cfg.b_m - 6 * cfg.l_m;
    let idx = block_start..=block_start + count;
    let mut theta = [0.0; 3];
    let mut clipped = [0usize; 3];
    for p in Pair::ALL {
        let lvl = levels.noise_dot(p);
        let mut acc = 0.0;
        for e in &stats.edot[p.idx()][idx.clone()] {
            if e.abs() <= lvl {
                acc += e;
            } else {
                clipped[p.idx()] += 1;
            }
        }
        theta[p.idx()] = acc / count as f64;
    }
    let floored = [theta[0] < 0.0, theta[2] < 0.0];
    Ok(NoiseMomentEstimate {
        theta11: theta[0].max(0.0),
        theta12: theta[1],
        theta22: theta[2].max(0.0),
        block_start,
        floored,
        clipped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Triangular;
    use crate::tuning::{tuning_from_m, TuningExponents};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn tri_weights(k: usize) -> Vec<f64> {
        (0..=k).map(|j| Triangular.value(j as f64 / k as f64)).collect()
    }

    use crate::kernel::WeightFunction;

    #[test]
    fn increment_of_constant_is_zero() {
        let y = vec![3.5; 20];
        assert_eq!(preaveraged_increment(&y, 4, &tri_weights(6)).unwrap(), 0.0);
    }

    #[test]
    fn increment_brute_force_k3() {
        // g(1/3) (y1 - y0) + g(2/3) (y2 - y1)
        let y = [0.0, 1.0, 0.0, 2.0];
        let w = tri_weights(3);
        let expect = (1.0 / 3.0) * 1.0 + (1.0 / 3.0) * (-1.0);
        assert_abs_diff_eq!(preaveraged_increment(&y, 0, &w).unwrap(), expect, epsilon = 1e-15);
        // l = 1 uses y[1..=3]
        let expect1 = (1.0 / 3.0) * (-1.0) + (1.0 / 3.0) * 2.0;
        assert_abs_diff_eq!(preaveraged_increment(&y, 1, &w).unwrap(), expect1, epsilon = 1e-15);
        assert!(preaveraged_increment(&y, 2, &w).is_err());
    }

    #[test]
    fn increment_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let beta = 1.7;
        let z: Vec<f64> = x.iter().map(|v| beta * v).collect();
        let w = tri_weights(8);
        for l in 0..40 {
            let a = preaveraged_increment(&x, l, &w).unwrap();
            let b = preaveraged_increment(&z, l, &w).unwrap();
            assert_abs_diff_eq!(b, beta * a, epsilon = 1e-12);
        }
    }

    #[test]
    fn local_average_cases() {
        assert_eq!(local_average(&[2.0; 5], 1, 3).unwrap(), 2.0);
        assert_eq!(local_average(&[1.0, 3.0], 0, 2).unwrap(), 2.0);
        let lin: Vec<f64> = (0..10).map(|v| v as f64).collect();
        assert_eq!(local_average(&lin, 2, 5).unwrap(), 4.0);
        assert!(local_average(&lin, 8, 3).is_err());
    }

    #[test]
    fn noise_lag_statistic_by_hand() {
        let a: Vec<f64> = (0..12).map(|v| (v * v) as f64).collect();
        let b: Vec<f64> = (0..12).map(|v| v as f64 * 0.5).collect();
        // l_m = 2, i = 1, d = 1: (a1 - mean(a5,a6)) (b2 - mean(b9,b10))
        let expect = (1.0 - 30.5) * (1.0 - 4.75);
        assert_abs_diff_eq!(noise_lag_statistic(&a, &b, 1, 1, 2).unwrap(), expect, epsilon = 1e-12);
        // d = -1 swaps the lag onto the first factor
        let expect_neg = (4.0 - 30.5) * (0.5 - 4.75);
        assert_abs_diff_eq!(noise_lag_statistic(&a, &b, 1, -1, 2).unwrap(), expect_neg, epsilon = 1e-12);
        assert!(noise_lag_statistic(&a, &b, 3, 0, 2).is_err());
    }

    #[test]
    fn weighted_stat_single_lag() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let phi = discrete_phi_weights(6, 0, &Triangular).unwrap();
        let e = noise_weighted_stat(&a, &a, 3, 3, &phi).unwrap();
        assert_abs_diff_eq!(e, phi.get(0) * noise_lag_statistic(&a, &a, 3, 0, 3).unwrap(), epsilon = 1e-15);
        let zero = vec![0.0; 40];
        let phi3 = discrete_phi_weights(6, 3, &Triangular).unwrap();
        assert_eq!(noise_weighted_stat(&zero, &zero, 0, 3, &phi3).unwrap(), 0.0);
    }

    #[test]
    fn iid_noise_lag_zero_expectation() {
        // For i.i.d. noise with variance v, E[(ε_i - ε̄)(ε_i - ε̄')] = v
        // since the two local averages are disjoint from i and each other.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = 0.25f64;
        let n = 200_000;
        let eps: Vec<f64> = (0..n).map(|_| v.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
        let l_m = 3;
        let stats: Vec<f64> = (0..n - 5 * l_m)
            .step_by(5 * l_m)
            .map(|i| noise_lag_statistic(&eps, &eps, i, 0, l_m).unwrap())
            .collect();
        let mean = stats.iter().sum::<f64>() / stats.len() as f64;
        let sd = (stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / stats.len() as f64).sqrt();
        let se = sd / (stats.len() as f64).sqrt();
        assert!((mean - v).abs() < 3.0 * se, "mean {mean} vs {v} (se {se})");
    }

    #[test]
    fn ar1_weighted_noise_tracks_autocovariance() {
        // χ AR(1) with coefficient 0.8 and unit variance, scaled by ϑ.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta = 0.5f64;
        let n = 400_000;
        let mut chi = rng.sample::<f64, _>(StandardNormal);
        let innov = (1.0f64 - 0.64).sqrt();
        let eps: Vec<f64> = (0..n)
            .map(|_| {
                chi = 0.8 * chi + innov * rng.sample::<f64, _>(StandardNormal);
                theta * chi
            })
            .collect();
        let (k, kp, l_m) = (20, 2, 12);
        let phi = discrete_phi_weights(k, kp, &Triangular).unwrap();
        let stats: Vec<f64> = (0..n - 5 * l_m - kp)
            .step_by(7 * l_m)
            .map(|i| noise_weighted_stat(&eps, &eps, i, l_m, &phi).unwrap())
            .collect();
        let mean = stats.iter().sum::<f64>() / stats.len() as f64;
        let sd = (stats.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / stats.len() as f64).sqrt();
        let se = sd / (stats.len() as f64).sqrt();
        // exact expectation: local averages are 2·l_m and 4·l_m ahead, so
        // E = Σ_d φ_d ϑ² [r(d) - ā(2l_m, d) - ā(4l_m - d) + ā-ā cross]
        let r = |h: isize| 0.8f64.powi(h.unsigned_abs() as i32);
        let lag_mean = |from: isize, at: isize| {
            (0..l_m as isize).map(|j| r(from + j - at)).sum::<f64>() / l_m as f64
        };
        let cross = {
            let mut s = 0.0;
            for i in 0..l_m as isize {
                for j in 0..l_m as isize {
                    s += r((2 * l_m as isize + i) - (4 * l_m as isize + j));
                }
            }
            s / (l_m * l_m) as f64
        };
        let expect: f64 = phi
            .iter()
            .map(|(d, w)| {
                let (ia, ib) = if d >= 0 { (0, d) } else { (-d, 0) };
                let e = r(ia - ib) - lag_mean(4 * l_m as isize, ia) - lag_mean(2 * l_m as isize, ib) + cross;
                w * theta * theta * e
            })
            .sum();
        assert!((mean - expect).abs() < 3.0 * se, "mean {mean} vs {expect} (se {se})");
    }

    fn sim_panel(seed: u64, m: usize, sigma: f64, noise: f64) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dt = 1.0 / m as f64;
        let mut x = 0.0;
        let mut y1 = Vec::with_capacity(m + 1);
        for _ in 0..=m {
            y1.push(x + noise * rng.sample::<f64, _>(StandardNormal));
            x += sigma * dt.sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        let y2 = y1.iter().map(|v| 0.3 + 1.5 * v).collect();
        (y1, y2)
    }

    #[test]
    fn exact_linearity_with_infinite_thresholds() {
        let m = 2340;
        let (y1, y2) = sim_panel(5, m, 0.03, 1e-4);
        let day = DayView::new(m, &y1, &y2).unwrap();
        let cfg = tuning_from_m(m, None, &TuningExponents::default()).unwrap();
        let kernel = WeightKernel::triangular();
        let stats = DayStatistics::new(day, &cfg, &kernel).unwrap();
        for s in stats.block_starts(cfg.b_m) {
            let est = spot_covariance(&stats, s, &cfg, &kernel, &ThresholdLevels::NONE).unwrap();
            assert!((est.sigma12 - 1.5 * est.sigma11).abs() <= 1e-10 * est.sigma11.abs());
            let nm = noise_moments(&stats, s, &cfg, &ThresholdLevels::NONE).unwrap();
            assert!((nm.theta12 - 1.5 * nm.theta11).abs() <= 1e-10 * nm.theta11.abs().max(1e-300));
        }
    }

    #[test]
    fn scaling_equivariance() {
        let m = 2340;
        let (y1, y2) = sim_panel(6, m, 0.03, 1e-4);
        let c = 4.0; // power of two keeps the scaling exact in binary
        let z1: Vec<f64> = y1.iter().map(|v| c * v).collect();
        let z2: Vec<f64> = y2.iter().map(|v| c * v).collect();
        let cfg = tuning_from_m(m, None, &TuningExponents::default()).unwrap();
        let kernel = WeightKernel::triangular();
        let s0 = DayStatistics::new(DayView::new(m, &y1, &y2).unwrap(), &cfg, &kernel).unwrap();
        let s1 = DayStatistics::new(DayView::new(m, &z1, &z2).unwrap(), &cfg, &kernel).unwrap();
        let lv = s0.resolve_thresholds(&cfg, &AutoThresholds::default());
        for s in s0.block_starts(cfg.b_m) {
            let a = spot_covariance(&s0, s, &cfg, &kernel, &lv).unwrap();
            let b = spot_covariance(&s1, s, &cfg, &kernel, &lv.scaled(c)).unwrap();
            assert_eq!(b.sigma11, c * c * a.sigma11);
            assert_eq!(b.sigma12, c * c * a.sigma12);
            assert_eq!(b.sigma22, c * c * a.sigma22);
            assert_eq!(a.truncation, b.truncation);
        }
    }

    #[test]
    fn block_estimates_ignore_outside_data() {
        let m = 2340;
        let (y1, y2) = sim_panel(7, m, 0.03, 1e-4);
        let cfg = tuning_from_m(m, None, &TuningExponents::default()).unwrap();
        let kernel = WeightKernel::triangular();
        let lv = ThresholdLevels {
            u1: 1e-3,
            u2: 1e-3,
            ..ThresholdLevels::NONE
        };
        let block = cfg.b_m;
        let mut p1 = y1.clone();
        let mut p2 = y2.clone();
        for j in (0..block).chain(2 * block..p1.len()) {
            p1[j] += 0.37;
            p2[j] -= 1.1;
        }
        let s0 = DayStatistics::new(DayView::new(m, &y1, &y2).unwrap(), &cfg, &kernel).unwrap();
        let s1 = DayStatistics::new(DayView::new(m, &p1, &p2).unwrap(), &cfg, &kernel).unwrap();
        let a = spot_covariance(&s0, block, &cfg, &kernel, &lv).unwrap();
        let b = spot_covariance(&s1, block, &cfg, &kernel, &lv).unwrap();
        assert_eq!(a, b);
        let na = noise_moments(&s0, block, &cfg, &lv).unwrap();
        let nb = noise_moments(&s1, block, &cfg, &lv).unwrap();
        assert_eq!(na, nb);
    }

    /// Exact E[Ê_i] / (σ²Δ) for a Brownian path, from Cov(X_a, X_b) ∝ min(a, b).
    fn brownian_ehat_factor(l_m: usize, phi: &PhiWeights) -> f64 {
        let o = 1000isize;
        let l = l_m as isize;
        let cov = |a: isize, b: isize| a.min(b) as f64;
        let avg_with = |a: isize, from: isize| (0..l).map(|j| cov(a, from + j)).sum::<f64>() / l as f64;
        let avg_avg = |f1: isize, f2: isize| {
            (0..l).map(|i| avg_with(f1 + i, f2)).sum::<f64>() / l as f64
        };
        phi.iter()
            .map(|(d, w)| {
                let (a, c) = if d >= 0 { (o, o + d) } else { (o - d, o) };
                let e = cov(a, c) - avg_with(a, o + 4 * l) - avg_with(c, o + 2 * l) + avg_avg(o + 2 * l, o + 4 * l);
                w * e
            })
            .sum()
    }

    #[test]
    fn noiseless_brownian_recovers_variance() {
        // The noise correction also absorbs a little return variation at
        // finite m; the oracle includes that term exactly.
        let m = 4680;
        let sigma2: f64 = 4e-4;
        let cfg = tuning_from_m(m, None, &TuningExponents::default()).unwrap();
        let kernel = WeightKernel::triangular();
        let mut est = Vec::new();
        for seed in 0..40 {
            let (y1, y2) = sim_panel(100 + seed, m, sigma2.sqrt(), 0.0);
            let stats = DayStatistics::new(DayView::new(m, &y1, &y2).unwrap(), &cfg, &kernel).unwrap();
            for s in stats.block_starts(cfg.b_m) {
                est.push(spot_covariance(&stats, s, &cfg, &kernel, &ThresholdLevels::NONE).unwrap().sigma11);
            }
        }
        let n = est.len() as f64;
        let mean = est.iter().sum::<f64>() / n;
        let se = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();

        let (k, b, l_m) = (cfg.k_m, cfg.b_m, cfg.l_m);
        let dt = 1.0 / m as f64;
        let sum_g2: f64 = kernel.grid_weights(k)[1..k].iter().map(|g| g * g).sum();
        let phi = discrete_phi_weights(k, cfg.k_prime_m, &Triangular).unwrap();
        let main = (b - 2 * k) as f64 * sum_g2 * sigma2 * dt;
        let corr = (b - 6 * l_m + 1) as f64 * brownian_ehat_factor(l_m, &phi) * sigma2 * dt / k as f64;
        let expect = (main - corr) / ((b - 2 * k) as f64 * dt * k as f64 * kernel.psi0());
        assert!(expect < sigma2 && expect > 0.7 * sigma2);
        assert!((mean - expect).abs() < 3.0 * se, "mean {mean} vs {expect}, se {se}");
    }

    #[test]
    fn noise_moments_iid_and_zero() {
        let m = 23400;
        let cfg = tuning_from_m(m, None, &TuningExponents::default()).unwrap();
        let kernel = WeightKernel::triangular();
        // zero noise, smooth path
        let y1: Vec<f64> = (0..=m).map(|j| (j as f64 / m as f64 * 3.0).sin() * 1e-2).collect();
        let y2 = y1.clone();
        let stats = DayStatistics::new(DayView::new(m, &y1, &y2).unwrap(), &cfg, &kernel).unwrap();
        let nm = noise_moments(&stats, 0, &cfg, &ThresholdLevels::NONE).unwrap();
        let scale = (cfg.l_m as f64 / m as f64).sqrt();
        assert!(nm.theta11.abs() < 5.0 * scale * 1e-4);

        // i.i.d. unit noise scaled by ϑ: ϑ̂11 ≈ ϑ² Σ_{|d|≤k'} r(d) = ϑ²
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = 1e-3;
        let mut vals = Vec::new();
        for _ in 0..10 {
            let e1: Vec<f64> = (0..=m).map(|_| theta * rng.sample::<f64, _>(StandardNormal)).collect();
            let e2: Vec<f64> = e1.iter().map(|v| -0.5 * v).collect();
            let st = DayStatistics::new(DayView::new(m, &e1, &e2).unwrap(), &cfg, &kernel).unwrap();
            for s in st.block_starts(cfg.b_m) {
                let nm = noise_moments(&st, s, &cfg, &ThresholdLevels::NONE).unwrap();
                assert!((nm.theta12 + 0.5 * nm.theta11).abs() < 1e-12 * nm.theta11.abs().max(1e-30) + 1e-20);
                vals.push(nm.theta11);
            }
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let se = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt();
        // local averages are disjoint from the lagged points, so only lag 0 survives
        let expect = theta * theta;
        assert!((mean - expect).abs() < 3.0 * se + 1e-3 * expect, "{mean} vs {expect} se {se}");
    }

    #[test]
    fn scale_estimators() {
        let xs = [1.0, 2.0, 3.0, 4.0, 100.0];
        assert!(ScaleEstimator::SampleSd.apply(&xs) > 40.0);
        assert_abs_diff_eq!(ScaleEstimator::Mad.apply(&xs), 1.4826, epsilon = 1e-12);
        assert_eq!(ScaleEstimator::Mad.apply(&[1.0]), f64::INFINITY);
    }
}
