//! Simulation of the dynamic realized beta model with GARCH-Itô market
//! volatility, compound Poisson jumps and dependent diurnal noise.
//!
//! Within day `d` (times `[d, d+1)`, `τ = t - d`) the spot beta is
//!
//! ```text
//! β_t = β_d + τ²A_d - τ(ω₂ + β_d) + α₁ ∫_d^t β_s ds + ν(1-τ)(Z_t - Z_d)
//! A_d = ω₁ + Σ_{i≤p} γ_i β_{d+1-i} + Σ_{2≤i≤q} α_i Iβ_{d+1-i}
//! ```
//!
//! The polynomial in `τ` and the Brownian term are evaluated exactly on the
//! step grid; the running integral is a left-point sum, so that
//! `β_{d+1} = ω + Σγ_i β_{d+1-i} + Σα_i Iβ_{d+1-i}` holds exactly with the
//! simulated integrals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::simpson;
use crate::panel::{PanelKind, PricePanel};
use crate::tuning::TimeGrid;

const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DRBetaParams {
    pub omega1: f64,
    pub omega2: f64,
    pub gamma: Vec<f64>,
    pub alpha: Vec<f64>,
    pub nu: f64,
    pub rho: f64,
    pub beta_d: f64,
}

impl Default for DRBetaParams {
    fn default() -> Self {
        Self {
            omega1: 0.7,
            omega2: -0.5,
            gamma: vec![0.1],
            alpha: vec![0.37],
            nu: 1.5,
            rho: -0.6,
            beta_d: 1.5,
        }
    }
}

impl DRBetaParams {
    pub fn p(&self) -> usize {
        self.gamma.len()
    }

    pub fn q(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha1(&self) -> f64 {
        self.alpha.first().copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.omega1, self.omega2, self.nu, self.rho, self.beta_d];
        if all.iter().chain(&self.gamma).chain(&self.alpha).any(|v| !v.is_finite()) {
            return Err(Error::Params("non-finite beta parameter".into()));
        }
        let sg: f64 = self.gamma.iter().map(|g| g.abs()).sum();
        if sg >= 1.0 {
            return Err(Error::Params(format!("Σ|γ_i| = {sg} must be below 1")));
        }
        if self.rho.abs() > 1.0 {
            return Err(Error::Params(format!("|ρ| = {} exceeds 1", self.rho.abs())));
        }
        if self.nu < 0.0 {
            return Err(Error::Params(format!("ν = {} is negative", self.nu)));
        }
        Ok(())
    }
}

/// Jump size law `J² = max(mean + N(0, sd²), floor)` with a random sign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSize {
    pub mean: f64,
    pub sd: f64,
    pub floor: f64,
}

impl JumpSize {
    fn draw(&self, rng: &mut impl Rng) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        let sq = (self.mean + self.sd * z).max(self.floor);
        let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
        sign * sq.sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolParams {
    pub omega1_t: f64,
    pub omega2_t: f64,
    pub gamma_t: f64,
    pub alpha_t: f64,
    pub beta_t: f64,
    pub nu_t: f64,
    pub rho_t: f64,
    pub q_const: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub jump1: JumpSize,
    pub jump2: JumpSize,
}

impl Default for VolParams {
    fn default() -> Self {
        Self {
            omega1_t: 3.02e-5,
            omega2_t: 4.0e-6,
            gamma_t: 0.35,
            alpha_t: 0.4,
            beta_t: 0.1,
            nu_t: 1e-5,
            rho_t: -0.424,
            q_const: 0.012,
            lambda1: 4.0,
            lambda2: 5.0,
            jump1: JumpSize {
                mean: 2e-5,
                sd: 2e-6,
                floor: 4e-5,
            },
            jump2: JumpSize {
                mean: 1e-5,
                sd: 1e-6,
                floor: 2e-5,
            },
        }
    }
}

impl VolParams {
    pub fn without_jumps(mut self) -> Self {
        self.lambda1 = 0.0;
        self.lambda2 = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 {
            return Err(Error::Params(format!(
                "jump intensities ({}, {}) must be non-negative",
                self.lambda1, self.lambda2
            )));
        }
        if self.jump1.floor <= 0.0 || self.jump2.floor <= 0.0 {
            return Err(Error::Params("jump-size floors must be positive".into()));
        }
        if self.q_const < 0.0 {
            return Err(Error::Params(format!("q = {} is negative", self.q_const)));
        }
        if self.rho_t.abs() > 1.0 {
            return Err(Error::Params(format!("|ρ̃| = {} exceeds 1", self.rho_t.abs())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub mean_rev: f64,
    pub s1: f64,
    pub s2: f64,
    pub diurnal_amp: f64,
    /// Loadings of the asset noise scale on the market and residual shocks.
    pub loading2: [f64; 2],
    /// Diagonal of the VAR(1) matrix for χ.
    pub ar_coeff: [f64; 2],
    pub innov_cov: [[f64; 2]; 2],
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            mean_rev: 10.0,
            s1: 3.44e-4,
            s2: 1.151e-3,
            diurnal_amp: 0.1,
            loading2: [0.6, 0.8],
            ar_coeff: [0.8, 0.8],
            innov_cov: [[0.36, 0.168], [0.168, 0.36]],
        }
    }
}

impl NoiseParams {
    pub fn off() -> Self {
        Self {
            s1: 0.0,
            s2: 0.0,
            ..Self::default()
        }
    }

    /// Independent noise over ticks with the same stationary covariance.
    pub fn iid(&self) -> Self {
        let st = self.stationary_cov().unwrap_or(self.innov_cov);
        Self {
            ar_coeff: [0.0, 0.0],
            innov_cov: st,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ar_coeff.iter().any(|a| a.abs() >= 1.0) {
            return Err(Error::Params(format!(
                "AR matrix diag({}, {}) is not stationary",
                self.ar_coeff[0], self.ar_coeff[1]
            )));
        }
        let c = self.innov_cov;
        if c[0][1] != c[1][0] || c[0][0] < 0.0 || c[1][1] < 0.0 || c[0][0] * c[1][1] < c[0][1] * c[0][1] {
            return Err(Error::Params(format!(
                "innovation covariance {c:?} is not symmetric positive semi-definite"
            )));
        }
        if self.s1 < 0.0 || self.s2 < 0.0 {
            return Err(Error::Params("noise scales must be non-negative".into()));
        }
        Ok(())
    }

    /// Solves `S = A S A + Σ` for the diagonal AR matrix `A`.
    pub fn stationary_cov(&self) -> Result<[[f64; 2]; 2]> {
        self.validate()?;
        let a = self.ar_coeff;
        let c = self.innov_cov;
        let mut s = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                s[i][j] = c[i][j] / (1.0 - a[i] * a[j]);
            }
        }
        Ok(s)
    }

    fn mean_level(&self, t: f64) -> [f64; 2] {
        let f = 1.0 + self.diurnal_amp * (2.0 * std::f64::consts::PI * t).cos();
        [self.s1 * f, self.s2 * f]
    }
}

/// Initial state; defaults are the unconditional means used in the study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitState {
    pub beta0: f64,
    pub sigma2_0: f64,
    pub x1: f64,
    pub x2: f64,
}

impl Default for InitState {
    fn default() -> Self {
        Self {
            beta0: 2.16,
            sigma2_0: 3.12e-5,
            x1: 16.0,
            x2: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dr: DRBetaParams,
    pub vol: VolParams,
    pub noise: NoiseParams,
    pub init: InitState,
    pub m: usize,
    pub n_days: usize,
    /// Euler steps per observation interval.
    #[serde(default = "one")]
    pub substeps: usize,
}

fn one() -> usize {
    1
}

impl SimConfig {
    /// The default Monte Carlo design at `m` points per day.
    pub fn standard(m: usize, n_days: usize) -> Self {
        Self {
            dr: DRBetaParams::default(),
            vol: VolParams::default(),
            noise: NoiseParams::default(),
            init: InitState::default(),
            m,
            n_days,
            substeps: 1,
        }
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::new(self.m, self.n_days)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimCounters {
    pub market_jumps: usize,
    pub residual_jumps: usize,
    pub noise_scale_clamps: usize,
    pub negative_variance_steps: usize,
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub latent: PricePanel,
    pub observed: PricePanel,
    /// Spot beta at every observation time, `n_days·m + 1` points.
    pub spot_beta: Vec<f64>,
    pub true_ibeta: Vec<f64>,
    /// `E[Iβ_d | F_{d-1}]` evaluated from the simulated state.
    pub true_h: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub seed: u64,
    pub counters: SimCounters,
}

/// `ϱ₁, ϱ₂, ϱ₃` with a series branch for small `|α|`.
pub fn varrho(alpha: f64) -> (f64, f64, f64) {
    if alpha.abs() < 1e-3 {
        // Σ_k α^k / (k + j)! for j = 1, 2, 3
        let terms = |j: u32| {
            let mut fact = (1..=j).map(f64::from).product::<f64>();
            let mut sum = 0.0;
            let mut pow = 1.0;
            for k in 0..8u32 {
                fact *= if k == 0 { 1.0 } else { f64::from(k + j) };
                sum += pow / fact;
                pow *= alpha;
            }
            sum
        };
        (terms(1), terms(2), terms(3))
    } else {
        let e = alpha.exp();
        (
            (e - 1.0) / alpha,
            (e - 1.0 - alpha) / (alpha * alpha),
            (e - 1.0 - alpha - 0.5 * alpha * alpha) / (alpha * alpha * alpha),
        )
    }
}

/// `E[∫_d^{d+1} β | F_d]` given `β_d` and the day's coefficient `A_d`.
pub fn conditional_ibeta(dr: &DRBetaParams, beta_d: f64, a_d: f64) -> f64 {
    let (r1, r2, r3) = varrho(dr.alpha1());
    r1 * beta_d + 2.0 * r3 * a_d - r2 * (dr.omega2 + beta_d)
}

/// Integer-time betas and daily integrals, newest last.
#[derive(Debug, Clone)]
struct BetaHistory {
    beta: Vec<f64>,
    ibeta: Vec<f64>,
}

impl BetaHistory {
    fn new(beta0: f64, p: usize, q: usize) -> Self {
        // pre-sample lags are set to the initial beta
        Self {
            beta: vec![beta0; p.max(1)],
            ibeta: vec![beta0; q.saturating_sub(1)],
        }
    }

    fn current(&self) -> f64 {
        *self.beta.last().unwrap()
    }

    fn coefficient(&self, dr: &DRBetaParams) -> f64 {
        let nb = self.beta.len();
        let ni = self.ibeta.len();
        let mut a = dr.omega1;
        for (i, g) in dr.gamma.iter().enumerate() {
            a += g * self.beta[nb - 1 - i];
        }
        for (i, al) in dr.alpha.iter().enumerate().skip(1) {
            a += al * self.ibeta[ni - i];
        }
        a
    }

    fn push(&mut self, beta_next: f64, ibeta_day: f64) {
        self.beta.push(beta_next);
        self.ibeta.push(ibeta_day);
    }
}

struct DayBeta {
    beta_d: f64,
    a: f64,
    dz_scale: f64,
    tau_step: f64,
    running: f64,
    z: f64,
}

impl DayBeta {
    fn new(dr: &DRBetaParams, hist: &BetaHistory, steps: usize) -> Self {
        Self {
            beta_d: hist.current(),
            a: hist.coefficient(dr),
            dz_scale: dr.nu,
            tau_step: 1.0 / steps as f64,
            running: 0.0,
            z: 0.0,
        }
    }

    /// Beta at step `j` given `Z_t - Z_d`.
    fn value(&self, dr: &DRBetaParams, j: usize) -> f64 {
        let tau = j as f64 * self.tau_step;
        self.beta_d + tau * tau * self.a - tau * (dr.omega2 + self.beta_d)
            + dr.alpha1() * self.running
            + self.dz_scale * (1.0 - tau) * self.z
    }
}

fn check(step: usize, what: &'static str, value: f64) -> Result<()> {
    if !value.is_finite() || value.abs() > DIVERGENCE_LIMIT {
        return Err(Error::Diverged { step, what, value });
    }
    Ok(())
}

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_DIFFUSION: u64 = 1;
const STREAM_JUMPS: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Joint simulation of prices, spot beta, volatility and noise.
pub fn simulate(cfg: &SimConfig, seed: u64) -> Result<SimOutput> {
    cfg.dr.validate()?;
    cfg.vol.validate()?;
    cfg.noise.validate()?;
    if cfg.m < 100 {
        return Err(Error::Params(format!("m = {} is below 100", cfg.m)));
    }
    if cfg.substeps == 0 || cfg.n_days == 0 {
        return Err(Error::Params("substeps and n_days must be positive".into()));
    }
    let grid = cfg.grid()?;
    let (dr, vol, nz) = (&cfg.dr, &cfg.vol, &cfg.noise);
    let (m, s) = (cfg.m, cfg.substeps);
    let steps = m * s;
    let dt = 1.0 / steps as f64;
    let sq = dt.sqrt();

    let mut rng_d = substream(seed, STREAM_DIFFUSION);
    let mut rng_j = substream(seed, STREAM_JUMPS);
    let mut rng_n = substream(seed, STREAM_NOISE);

    let rho_c = (1.0 - dr.rho * dr.rho).sqrt();
    let rhot_c = (1.0 - vol.rho_t * vol.rho_t).sqrt();
    let (p1, p2) = (vol.lambda1 * dt, vol.lambda2 * dt);

    let n_obs = grid.path_len();
    let mut x1 = Vec::with_capacity(n_obs);
    let mut x2 = Vec::with_capacity(n_obs);
    let mut y1 = Vec::with_capacity(n_obs);
    let mut y2 = Vec::with_capacity(n_obs);
    let mut spot = Vec::with_capacity(n_obs);
    let mut sig = Vec::with_capacity(n_obs);
    let mut true_h = Vec::with_capacity(cfg.n_days);

    let mut counters = SimCounters::default();
    let mut noise = NoiseState::new(nz, &mut rng_n)?;
    let mut hist = BetaHistory::new(cfg.init.beta0, dr.p(), dr.q());
    let (mut lx1, mut lx2) = (cfg.init.x1, cfg.init.x2);
    let mut s2 = cfg.init.sigma2_0;
    let mut s2_anchor = s2; // σ² at the last integer time
    let mut s2_prev_anchor = s2;
    let mut bt_anchor_z = 0.0; // B̃_t - B̃ at the last integer time
    let mut bt_prev_day_z = 0.0; // Z̃ over the whole previous day
    let mut beta = hist.current();

    let mut record = |lx1: f64, lx2: f64, beta: f64, s2: f64, noise: &mut NoiseState, rng: &mut ChaCha8Rng| {
        let e = noise.observe(nz, rng);
        x1.push(lx1);
        x2.push(lx2);
        y1.push(lx1 + e[0]);
        y2.push(lx2 + e[1]);
        spot.push(beta);
        sig.push(s2);
    };
    record(lx1, lx2, beta, s2, &mut noise, &mut rng_n);

    for d in 0..cfg.n_days {
        let mut day = DayBeta::new(dr, &hist, steps);
        true_h.push(conditional_ibeta(dr, day.beta_d, day.a));
        for j in 0..steps {
            let gstep = d * steps + j;
            let t = d as f64 + j as f64 * dt;
            let e1: f64 = rng_d.sample(StandardNormal);
            let e2: f64 = rng_d.sample(StandardNormal);
            let e3: f64 = rng_d.sample(StandardNormal);
            let e4: f64 = rng_d.sample(StandardNormal);
            let db = sq * e1;
            let dz = sq * (dr.rho * e1 + rho_c * e2);
            let dbt = sq * (vol.rho_t * e1 + rhot_c * e3);
            let dw = sq * e4;

            // σ² drift anchored at ⌈t - 1⌉
            let (tau_v, anchor, zt) = if j == 0 && d > 0 {
                (1.0, s2_prev_anchor, bt_prev_day_z)
            } else {
                (j as f64 * dt, s2_anchor, bt_anchor_z)
            };
            let drift = 2.0 * vol.gamma_t * tau_v * (vol.omega1_t + anchor) - (vol.omega2_t + anchor)
                + vol.alpha_t * s2
                - vol.nu_t * zt * zt;
            let diff = 2.0 * vol.nu_t * (1.0 - tau_v) * zt;
            let sigma = if s2 > 0.0 {
                s2.sqrt()
            } else {
                counters.negative_variance_steps += 1;
                0.0
            };

            let dxc = sigma * db;
            lx1 += dxc;
            lx2 += beta * dxc + vol.q_const * dw;
            let mut s2_next = s2 + drift * dt + diff * dbt;

            if p1 > 0.0 && rng_j.gen::<f64>() < p1 {
                let jump = vol.jump1.draw(&mut rng_j);
                lx1 += jump;
                lx2 += dr.beta_d * jump;
                s2_next += vol.beta_t * jump * jump;
                counters.market_jumps += 1;
            }
            if p2 > 0.0 && rng_j.gen::<f64>() < p2 {
                lx2 += vol.jump2.draw(&mut rng_j);
                counters.residual_jumps += 1;
            }
            noise.step(nz, t, dt, db, dw);

            bt_anchor_z += dbt;
            day.running += dt * beta;
            day.z += dz;
            beta = day.value(dr, j + 1);
            s2 = s2_next;
            check(gstep, "spot beta", beta)?;
            check(gstep, "sigma^2", s2)?;
            check(gstep, "log price", lx2)?;

            if (j + 1) % s == 0 {
                record(lx1, lx2, beta, s2, &mut noise, &mut rng_n);
            }
        }
        hist.push(beta, day.running);
        s2_prev_anchor = s2_anchor;
        s2_anchor = s2;
        bt_prev_day_z = bt_anchor_z;
        bt_anchor_z = 0.0;
    }
    counters.noise_scale_clamps += noise.clamps;

    let true_ibeta = true_integrated_beta(&spot, &grid)?;
    let latent = PricePanel::from_continuous(m, PanelKind::Latent, x1, x2)?;
    let observed = PricePanel::from_continuous(m, PanelKind::Observed, y1, y2)?;
    Ok(SimOutput {
        latent,
        observed,
        spot_beta: spot,
        true_ibeta,
        true_h,
        sigma2: sig,
        seed,
        counters,
    })
}

struct NoiseState {
    theta: [f64; 2],
    chi: [f64; 2],
    chol: [[f64; 2]; 2],
    clamps: usize,
}

fn cholesky2(c: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let l11 = c[0][0].max(0.0).sqrt();
    let l21 = if l11 > 0.0 { c[1][0] / l11 } else { 0.0 };
    let l22 = (c[1][1] - l21 * l21).max(0.0).sqrt();
    [[l11, 0.0], [l21, l22]]
}

impl NoiseState {
    fn new(nz: &NoiseParams, rng: &mut impl Rng) -> Result<Self> {
        let st = cholesky2(nz.stationary_cov()?);
        let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        Ok(Self {
            theta: nz.mean_level(0.0),
            chi: [st[0][0] * a, st[1][0] * a + st[1][1] * b],
            chol: cholesky2(nz.innov_cov),
            clamps: 0,
        })
    }

    /// Noise at the current observation; advances χ afterwards.
    fn observe(&mut self, nz: &NoiseParams, rng: &mut impl Rng) -> [f64; 2] {
        let e = [self.theta[0] * self.chi[0], self.theta[1] * self.chi[1]];
        let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
        let l = self.chol;
        self.chi = [
            nz.ar_coeff[0] * self.chi[0] + l[0][0] * a,
            nz.ar_coeff[1] * self.chi[1] + l[1][0] * a + l[1][1] * b,
        ];
        e
    }

    fn step(&mut self, nz: &NoiseParams, t: f64, dt: f64, db: f64, dw: f64) {
        let mu = nz.mean_level(t);
        self.theta[0] += nz.mean_rev * (mu[0] - self.theta[0]) * dt + nz.s1 * db;
        self.theta[1] += nz.mean_rev * (mu[1] - self.theta[1]) * dt
            + nz.s2 * (nz.loading2[0] * db + nz.loading2[1] * dw);
        for th in &mut self.theta {
            if *th < 0.0 {
                *th = 0.0;
                self.clamps += 1;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct NoiseSeries {
    pub eps1: Vec<f64>,
    pub eps2: Vec<f64>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    pub chi1: Vec<f64>,
    pub chi2: Vec<f64>,
    pub clamps: usize,
}

/// Stand-alone noise path on a grid of `m` ticks per day, `length` ticks.
pub fn simulate_noise_series(nz: &NoiseParams, m: usize, length: usize, seed: u64) -> Result<NoiseSeries> {
    if length == 0 {
        return Err(Error::Params("noise series length must be at least 1".into()));
    }
    let mut rng_d = substream(seed, STREAM_DIFFUSION);
    let mut rng_n = substream(seed, STREAM_NOISE);
    let mut st = NoiseState::new(nz, &mut rng_n)?;
    let dt = 1.0 / m as f64;
    let mut out = NoiseSeries {
        eps1: Vec::with_capacity(length),
        eps2: Vec::with_capacity(length),
        theta1: Vec::with_capacity(length),
        theta2: Vec::with_capacity(length),
        chi1: Vec::with_capacity(length),
        chi2: Vec::with_capacity(length),
        clamps: 0,
    };
    for i in 0..length {
        out.theta1.push(st.theta[0]);
        out.theta2.push(st.theta[1]);
        out.chi1.push(st.chi[0]);
        out.chi2.push(st.chi[1]);
        let e = st.observe(nz, &mut rng_n);
        out.eps1.push(e[0]);
        out.eps2.push(e[1]);
        let db = dt.sqrt() * rng_d.sample::<f64, _>(StandardNormal);
        let dw = dt.sqrt() * rng_d.sample::<f64, _>(StandardNormal);
        st.step(nz, i as f64 * dt, dt, db, dw);
    }
    out.clamps = st.clamps;
    Ok(out)
}

/// Left-endpoint Riemann sums of a spot path, one per day.
pub fn true_integrated_beta(path: &[f64], grid: &TimeGrid) -> Result<Vec<f64>> {
    if path.len() != grid.path_len() {
        return Err(Error::LengthMismatch(format!(
            "spot path has {} points, grid needs {}",
            path.len(),
            grid.path_len()
        )));
    }
    let m = grid.m;
    Ok((0..grid.n_days)
        .map(|d| path[d * m..(d + 1) * m].iter().sum::<f64>() / m as f64)
        .collect())
}

/// Integrated beta, conditional mean and martingale difference per day from
/// a beta-only simulation (no prices).
#[derive(Debug, Clone, Default)]
pub struct BetaPath {
    pub ibeta: Vec<f64>,
    pub h: Vec<f64>,
    /// Beta at integer times, `n_days + 1` values.
    pub beta_int: Vec<f64>,
}

impl BetaPath {
    pub fn d(&self) -> impl Iterator<Item = f64> + '_ {
        self.ibeta.iter().zip(&self.h).map(|(i, h)| i - h)
    }
}

/// Spot beta alone at `steps` Euler steps per day.
pub fn simulate_beta(dr: &DRBetaParams, beta0: f64, n_days: usize, steps: usize, seed: u64) -> Result<BetaPath> {
    dr.validate()?;
    if steps == 0 {
        return Err(Error::Params("steps must be positive".into()));
    }
    let mut rng = substream(seed, STREAM_DIFFUSION);
    let sq = (1.0 / steps as f64).sqrt();
    let dt = 1.0 / steps as f64;
    let mut hist = BetaHistory::new(beta0, dr.p(), dr.q());
    let mut out = BetaPath {
        beta_int: vec![beta0],
        ..Default::default()
    };
    for d in 0..n_days {
        let mut day = DayBeta::new(dr, &hist, steps);
        out.h.push(conditional_ibeta(dr, day.beta_d, day.a));
        let mut beta = day.beta_d;
        for j in 0..steps {
            day.running += dt * beta;
            day.z += sq * rng.sample::<f64, _>(StandardNormal);
            beta = day.value(dr, j + 1);
            check(d * steps + j, "spot beta", beta)?;
        }
        out.ibeta.push(day.running);
        out.beta_int.push(beta);
        hist.push(beta, day.running);
    }
    Ok(out)
}

fn even_intervals(points: usize) -> usize {
    let n = points.saturating_sub(1).max(2);
    n + n % 2
}

/// Martingale-difference variance as the quadrature of
/// `4ν²α⁻⁴ ∫₀¹ {α(1 - t - α⁻¹) e^{α(1-t)} + 1}² t dt`.
pub fn d_variance_oracle(alpha1: f64, nu: f64, quadrature_points: usize) -> Result<f64> {
    if alpha1 == 0.0 {
        return Err(Error::Params("α₁ = 0 makes the variance integral singular".into()));
    }
    let a = alpha1;
    let f = |t: f64| {
        let v = a * (1.0 - t - 1.0 / a) * (a * (1.0 - t)).exp() + 1.0;
        v * v * t
    };
    Ok(4.0 * nu * nu / a.powi(4) * simpson(0.0, 1.0, even_intervals(quadrature_points), f))
}

/// `Var(D_n)` by the Itô isometry: `ν²α⁻⁴ ∫₀¹ {α(s - α⁻¹) e^{αs} + 1}² ds`.
pub fn d_variance_ito(alpha1: f64, nu: f64, quadrature_points: usize) -> Result<f64> {
    if alpha1 == 0.0 {
        return Err(Error::Params("α₁ = 0 is not supported".into()));
    }
    let a = alpha1;
    let f = |s: f64| {
        let v = a * (s - 1.0 / a) * (a * s).exp() + 1.0;
        v * v
    };
    Ok(nu * nu / a.powi(4) * simpson(0.0, 1.0, even_intervals(quadrature_points), f))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(m: usize, n: usize) -> SimConfig {
        SimConfig::standard(m, n)
    }

    #[test]
    fn varrho_values_and_limits() {
        let (a, b, c) = varrho(0.37);
        assert_abs_diff_eq!(a, 1.2100936, epsilon = 1e-6);
        assert_abs_diff_eq!(b, 0.5678204, epsilon = 1e-6);
        assert_abs_diff_eq!(c, 0.1832984, epsilon = 1e-6);
        let (a, b, c) = varrho(1e-8);
        assert_abs_diff_eq!(a, 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(b, 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(c, 1.0 / 6.0, epsilon = 1e-8);
        // series and closed form agree at the switch point
        let lo = varrho(0.999e-3);
        let e = 1.001e-3f64;
        let hi = ((e.exp() - 1.0) / e, (e.exp() - 1.0 - e) / (e * e));
        assert_abs_diff_eq!(lo.0, hi.0, epsilon = 1e-5);
        assert_abs_diff_eq!(lo.1, hi.1, epsilon = 1e-5);
    }

    #[test]
    fn reproducible() {
        let cfg = small(200, 3);
        let a = simulate(&cfg, 11).unwrap();
        let b = simulate(&cfg, 11).unwrap();
        assert_eq!(a.observed, b.observed);
        assert_eq!(a.spot_beta, b.spot_beta);
        let c = simulate(&cfg, 12).unwrap();
        assert_ne!(a.observed, c.observed);
    }

    #[test]
    fn deterministic_path_without_feedback() {
        // With ω = γ = α = ν = 0 the day-end level is ω = 0 and the path is
        // β_τ = c(1 - τ) on day one, then identically 0.
        let mut cfg = small(100, 3);
        cfg.dr = DRBetaParams {
            omega1: 0.0,
            omega2: 0.0,
            gamma: vec![0.0],
            alpha: vec![0.0],
            nu: 0.0,
            rho: 0.0,
            beta_d: 1.0,
        };
        cfg.init.beta0 = 1.3;
        let out = simulate(&cfg, 1).unwrap();
        assert_eq!(out.spot_beta[0], 1.3);
        assert_abs_diff_eq!(out.spot_beta[50], 0.65, epsilon = 1e-12);
        for d in 1..=3 {
            assert_abs_diff_eq!(out.spot_beta[d * 100], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_level_path_returns_to_start() {
        // γ₁ = 1 - ε is excluded, so use ω₁ = c to hold β_n = c:
        // β_{n+1} = ω₁ - ω₂ + γβ_n + α₁Iβ with ω₂ = 0, γ = α = 0 gives c.
        let c = 0.8;
        let mut cfg = small(100, 4);
        cfg.dr = DRBetaParams {
            omega1: c,
            omega2: 0.0,
            gamma: vec![0.0],
            alpha: vec![0.0],
            nu: 0.0,
            rho: 0.0,
            beta_d: 1.0,
        };
        cfg.init.beta0 = c;
        let out = simulate(&cfg, 2).unwrap();
        for d in 0..=4 {
            assert_abs_diff_eq!(out.spot_beta[d * 100], c, epsilon = 1e-12);
        }
        // β = c + τ²c - τc, quadratic within the day
        let tau = 0.3;
        assert_abs_diff_eq!(out.spot_beta[130], c + tau * tau * c - tau * c, epsilon = 1e-12);
    }

    #[test]
    fn spot_int_relation_is_exact() {
        let cfg = small(400, 6);
        let out = simulate(&cfg, 3).unwrap();
        let (w, g, a) = (cfg.dr.omega1 - cfg.dr.omega2, cfg.dr.gamma[0], cfg.dr.alpha[0]);
        for d in 0..5 {
            let lhs = out.spot_beta[(d + 1) * 400];
            let rhs = w + g * out.spot_beta[d * 400] + a * out.true_ibeta[d];
            assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-10);
        }
    }

    #[test]
    fn noise_and_jumps_off_observed_equals_latent() {
        let mut cfg = small(300, 2);
        cfg.noise = NoiseParams::off();
        cfg.vol = cfg.vol.clone().without_jumps();
        let out = simulate(&cfg, 4).unwrap();
        assert_eq!(out.latent.x1(), out.observed.x1());
        assert_eq!(out.latent.x2(), out.observed.x2());
        assert_eq!(out.counters.market_jumps, 0);
    }

    #[test]
    fn jump_count_matches_intensity() {
        let mut cfg = small(100, 1000);
        cfg.noise = NoiseParams::off();
        let out = simulate(&cfg, 5).unwrap();
        let n = out.counters.market_jumps as f64;
        assert!((n - 4000.0).abs() < 3.0 * 4000f64.sqrt(), "{n}");
        let n2 = out.counters.residual_jumps as f64;
        assert!((n2 - 5000.0).abs() < 3.0 * 5000f64.sqrt(), "{n2}");
    }

    #[test]
    fn spot_beta_continuous_at_day_boundaries() {
        let cfg = small(500, 20);
        let out = simulate(&cfg, 6).unwrap();
        let dt = 1.0 / 500.0f64;
        let diffs: Vec<f64> = out.spot_beta.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
        let typical = diffs.iter().sum::<f64>() / diffs.len() as f64;
        for d in 1..20 {
            let at = diffs[d * 500 - 1].max(diffs[d * 500]);
            assert!(at < 10.0 * typical + 10.0 * dt.sqrt(), "day {d}: {at} vs {typical}");
        }
    }

    #[test]
    fn noise_stationary_moments() {
        let nz = NoiseParams::default();
        let st = nz.stationary_cov().unwrap();
        assert_abs_diff_eq!(st[0][0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(st[0][1] / st[0][0], 0.168 / 0.36, epsilon = 1e-12);

        let ser = simulate_noise_series(&nz, 2340, 200_000, 7).unwrap();
        let n = ser.chi1.len() as f64;
        let v1 = ser.chi1.iter().map(|c| c * c).sum::<f64>() / n;
        let c12 = ser.chi1.iter().zip(&ser.chi2).map(|(a, b)| a * b).sum::<f64>() / n;
        // AR(1) 0.8 inflates the variance of the mean; allow a wide band
        assert!((v1 - 1.0).abs() < 0.05, "{v1}");
        assert!((c12 - 0.4667).abs() < 0.05, "{c12}");
        assert!(ser.theta1.iter().all(|t| *t >= 0.0));
    }

    #[test]
    fn zero_scale_gives_zero_noise() {
        let nz = NoiseParams {
            s1: 0.0,
            ..NoiseParams::default()
        };
        let ser = simulate_noise_series(&nz, 1000, 5000, 8).unwrap();
        assert!(ser.eps1.iter().all(|e| *e == 0.0));
        assert!(ser.eps2.iter().any(|e| *e != 0.0));
    }

    #[test]
    fn rejects_nonstationary_noise() {
        let nz = NoiseParams {
            ar_coeff: [1.0, 0.5],
            ..NoiseParams::default()
        };
        assert!(simulate_noise_series(&nz, 100, 10, 0).is_err());
    }

    #[test]
    fn riemann_sums() {
        let grid = TimeGrid::new(100, 2).unwrap();
        let ib = true_integrated_beta(&vec![1.5; 201], &grid).unwrap();
        assert_eq!(ib, vec![1.5, 1.5]);
        let m = 10_000;
        let g = TimeGrid::new(m, 1).unwrap();
        let lin: Vec<f64> = (0..=m).map(|j| j as f64 / m as f64).collect();
        let ib = true_integrated_beta(&lin, &g).unwrap()[0];
        // left sum of t: 0.5 - 1/(2m)
        assert_abs_diff_eq!(ib, 0.5 - 0.5 / m as f64, epsilon = 1e-12);
        assert!(true_integrated_beta(&lin[1..], &g).is_err());
    }

    #[test]
    fn refinement_halves_riemann_error() {
        // same Brownian path at two resolutions is not available, so compare
        // the deterministic part: ν = 0
        let dr = DRBetaParams {
            nu: 0.0,
            ..DRBetaParams::default()
        };
        let exact = {
            let (r1, r2, r3) = varrho(dr.alpha1());
            let a = dr.omega1 + dr.gamma[0] * 2.16;
            r1 * 2.16 + 2.0 * r3 * a - r2 * (dr.omega2 + 2.16)
        };
        let err = |steps| (simulate_beta(&dr, 2.16, 1, steps, 0).unwrap().ibeta[0] - exact).abs();
        let (e1, e2) = (err(500), err(1000));
        assert!((e1 / e2 - 2.0).abs() < 0.05, "{e1} {e2}");
    }

    #[test]
    fn d_variance_oracle_properties() {
        assert_eq!(d_variance_oracle(0.37, 0.0, 1025).unwrap(), 0.0);
        let v1 = d_variance_oracle(0.37, 1.5, 1025).unwrap();
        let v2 = d_variance_oracle(0.37, 3.0, 1025).unwrap();
        assert_abs_diff_eq!(v2, 4.0 * v1, epsilon = 1e-12);
        assert!(d_variance_oracle(0.0, 1.0, 1025).is_err());
        // independent midpoint rule
        let a: f64 = 0.37;
        let n = 200_000;
        let mid: f64 = (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) / n as f64;
                let v = a * (1.0 - t - 1.0 / a) * (a * (1.0 - t)).exp() + 1.0;
                v * v * t
            })
            .sum::<f64>()
            / n as f64;
        assert_abs_diff_eq!(v1, 4.0 * 2.25 / a.powi(4) * mid, epsilon = 1e-9);
        assert_abs_diff_eq!(d_variance_ito(0.37, 1.5, 1025).unwrap(), 0.171036, epsilon = 1e-5);
    }

    #[test]
    fn beta_only_martingale_difference() {
        let dr = DRBetaParams::default();
        let path = simulate_beta(&dr, 2.16, 4000, 200, 9).unwrap();
        let d: Vec<f64> = path.d().collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 * (var / n).sqrt(), "{mean}");
        let ito = d_variance_ito(0.37, 1.5, 1025).unwrap();
        assert!((var / ito - 1.0).abs() < 0.1, "{var} vs {ito}");
    }

    #[test]
    fn divergence_guard() {
        let mut cfg = small(100, 50);
        cfg.dr.alpha = vec![30.0];
        cfg.dr.omega1 = 50.0;
        match simulate(&cfg, 1) {
            Err(Error::Diverged { .. }) => {}
            other => panic!("expected divergence, got {:?}", other.map(|o| o.true_ibeta.len())),
        }
    }
}
