//! Monte Carlo experiments behind the acceptance report and `selftest`.

use std::fmt;

use drbeta::kernel::WeightKernel;
use drbeta::mc::{derive_seed, mean_se, median, qq_correlation, replicate, sample_variance, MeanSe};
use drbeta::model::{
    arma_forecaster, fit, forecast_h, h_recursion, h_with_gradient, map_params, FitOptions, GarchParams, HInit,
};
use drbeta::panel::{PanelKind, PricePanel};
use drbeta::rib::{chen_day, prvb_day, rib_day, rib_series, Estimator, EstimatorOptions};
use drbeta::sim::{
    conditional_ibeta, d_variance_ito, d_variance_oracle, simulate, simulate_beta, varrho, DRBetaParams, SimConfig,
};
use drbeta::tuning::{tuning_from_m, Threshold, TuningConfig, TuningExponents};
use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub const MASTER_SEED: u64 = 20_240_611;

#[derive(Debug, Clone)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for CriterionResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.pass { "PASS" } else { "FAIL" };
        write!(f, "criterion {}: {verdict} {}: {}", self.id, self.name, self.detail)
    }
}

/// Replication counts and sizes.
#[derive(Debug, Clone, Copy)]
pub struct Scale {
    pub ordering_reps: usize,
    pub ordering_days: usize,
    pub ordering_m: [usize; 2],
    pub linearity_cases: usize,
    pub martingale_days: usize,
    pub martingale_steps: usize,
    pub mapping_days: usize,
    pub mapping_sim_steps: usize,
    pub mapping_euler_steps: usize,
    pub qmle_reps: usize,
    pub qmle_n: [usize; 2],
    pub inference_reps: usize,
    pub inference_n: usize,
    pub inference_m: usize,
    pub derivative_cases: usize,
    pub avar_reps: usize,
    pub avar_m: usize,
}

impl Scale {
    pub fn full() -> Self {
        Self {
            ordering_reps: 200,
            ordering_days: 125,
            ordering_m: [2340, 4680],
            linearity_cases: 50,
            martingale_days: 100_000,
            martingale_steps: 1000,
            mapping_days: 100,
            mapping_sim_steps: 23_400,
            mapping_euler_steps: 1000,
            qmle_reps: 100,
            qmle_n: [500, 2000],
            inference_reps: 200,
            inference_n: 500,
            inference_m: 4680,
            derivative_cases: 100,
            avar_reps: 300,
            avar_m: 4680,
        }
    }

    /// Small enough for a routine `selftest`.
    pub fn quick() -> Self {
        Self {
            ordering_reps: 12,
            ordering_days: 20,
            ordering_m: [2340, 4680],
            linearity_cases: 10,
            martingale_days: 10_000,
            martingale_steps: 200,
            mapping_days: 100,
            mapping_sim_steps: 2340,
            mapping_euler_steps: 1000,
            qmle_reps: 8,
            qmle_n: [500, 2000],
            inference_reps: 8,
            inference_n: 300,
            inference_m: 2340,
            derivative_cases: 30,
            avar_reps: 60,
            avar_m: 2340,
        }
    }
}

fn kernel() -> WeightKernel {
    WeightKernel::triangular()
}

fn tuning(m: usize) -> TuningConfig {
    tuning_from_m(m, None, &TuningExponents::default()).expect("default tuning is valid for m ≥ 100")
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

/// Per-replication MSE of RIB, CHEN and PRVB against the true Iβ.
#[derive(Debug, Clone)]
pub struct OrderingData {
    pub m: usize,
    pub rib: Vec<f64>,
    pub chen: Vec<f64>,
    pub prvb: Vec<f64>,
    pub failed_days: usize,
}

pub fn ordering_data(m: usize, reps: usize, days: usize, master: u64) -> OrderingData {
    let cfg = tuning(m);
    let k = kernel();
    let opts = EstimatorOptions::default();
    let sim = SimConfig::standard(m, days);
    let per_rep = replicate(master, &format!("ordering-{m}"), reps, |_, seed| {
        let out = simulate(&sim, seed).expect("simulation at the reference parameters");
        let mut e = [Vec::new(), Vec::new(), Vec::new()];
        let mut truth = Vec::new();
        let mut failed = 0;
        for (i, day) in out.observed.days().enumerate() {
            let r = rib_day(day, &cfg, &k, &opts).map(|d| d.rib);
            let c = chen_day(day, &cfg, &k, &opts);
            let p = prvb_day(day, &cfg, &k, &opts);
            match (r, c, p) {
                (Ok(r), Ok(c), Ok(p)) => {
                    e[0].push(r);
                    e[1].push(c);
                    e[2].push(p);
                    truth.push(out.true_ibeta[i]);
                }
                _ => failed += 1,
            }
        }
        (mse(&e[0], &truth), mse(&e[1], &truth), mse(&e[2], &truth), failed)
    });
    OrderingData {
        m,
        rib: per_rep.iter().map(|r| r.0).collect(),
        chen: per_rep.iter().map(|r| r.1).collect(),
        prvb: per_rep.iter().map(|r| r.2).collect(),
        failed_days: per_rep.iter().map(|r| r.3).sum(),
    }
}

fn paired(a: &[f64], b: &[f64]) -> MeanSe {
    mean_se(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

pub fn criterion_ordering(data: &[OrderingData]) -> CriterionResult {
    let mut pass = true;
    let mut parts = Vec::new();
    for d in data {
        let r = mean_se(&d.rib);
        let c = mean_se(&d.chen);
        let p = mean_se(&d.prvb);
        let dc = paired(&d.chen, &d.rib);
        let dp = paired(&d.prvb, &d.rib);
        let ok = dc.mean > 2.0 * dc.se && dp.mean > 2.0 * dp.se;
        pass &= ok;
        parts.push(format!(
            "m={} MSE RIB {:.5} CHEN {:.5} PRVB {:.5}; margins {:.5} ({:.1} se), {:.5} ({:.1} se); failed days {}",
            d.m,
            r.mean,
            c.mean,
            p.mean,
            dc.mean,
            dc.mean / dc.se,
            dp.mean,
            dp.mean / dp.se,
            d.failed_days
        ));
    }
    CriterionResult {
        id: 1,
        name: "estimator ordering",
        pass,
        detail: parts.join("; "),
    }
}

pub fn criterion_rate(low: &OrderingData, high: &OrderingData) -> CriterionResult {
    let a = mean_se(&low.rib).mean;
    let b = mean_se(&high.rib).mean;
    let ratio = a / b;
    let expected = (high.m as f64 / low.m as f64).sqrt();
    let pass = b < a && ratio >= expected / 2.0 && ratio <= expected * 2.0;
    CriterionResult {
        id: 2,
        name: "rate",
        pass,
        detail: format!(
            "MSE(RIB) m={} {a:.5}, m={} {b:.5}; ratio {ratio:.3}, expected {expected:.3} within a factor of 2",
            low.m, high.m
        ),
    }
}

/// Affine pair with proportional noise; every estimator must return `β`.
///
/// A block whose `Σ̂₁₁` falls to the `δ` floor leaves the identity by
/// construction; such blocks, and RIB on their days, are counted instead.
pub fn criterion_linearity(cases: usize, master: u64) -> CriterionResult {
    let k = kernel();
    let m = 2340;
    let cfg = tuning(m).with_all_thresholds(Threshold::Infinite);
    let opts = EstimatorOptions::default();
    let mut worst: f64 = 0.0;
    let (mut failures, mut checked, mut floored) = (0, 0, 0);
    let start = std::time::Instant::now();
    for c in 0..cases {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, "linearity", c as u64));
        let beta: f64 = rng.gen_range(-3.0..3.0);
        let a: f64 = rng.gen_range(-5.0..5.0);
        let (noise_sd, phi) = (rng.gen_range(1e-5..3e-4), rng.gen_range(0.0..0.8));
        let mut x = 16.0;
        let mut chi: f64 = 0.0;
        let mut x1 = Vec::with_capacity(m + 1);
        for _ in 0..=m {
            chi = phi * chi + rng.sample::<f64, _>(StandardNormal);
            x1.push(x + noise_sd * chi);
            x += 0.03 / (m as f64).sqrt() * rng.sample::<f64, _>(StandardNormal);
        }
        let x2 = x1.iter().map(|v| a + beta * v).collect();
        let panel = PricePanel::from_continuous(m, PanelKind::Observed, x1, x2).expect("valid path");
        let day = panel.day(0);
        let (Ok(est), Ok(chen), Ok(prvb)) = (
            rib_day(day, &cfg, &k, &opts),
            chen_day(day, &cfg, &k, &opts),
            prvb_day(day, &cfg, &k, &opts),
        ) else {
            failures += 1;
            continue;
        };
        let mut vals = vec![chen, prvb];
        let mut day_floored = false;
        for b in &est.blocks {
            if b.spot.sigma11 > cfg.delta_m {
                vals.push(b.beta - b.debias);
            } else {
                floored += 1;
                day_floored = true;
            }
        }
        if !day_floored {
            vals.push(est.rib);
        }
        checked += vals.len();
        for v in vals {
            worst = worst.max((v - beta).abs());
        }
    }
    CriterionResult {
        id: 3,
        name: "exact linearity",
        pass: failures == 0 && worst < 1e-10,
        detail: format!(
            "{cases} cases, {checked} values checked, max |estimate - β| {worst:.2e}; {floored} blocks at the δ floor excluded; {failures} estimator errors; {:.2} s",
            start.elapsed().as_secs_f64()
        ),
    }
}

pub fn criterion_martingale(days: usize, steps: usize, master: u64) -> CriterionResult {
    let dr = DRBetaParams::default();
    // independent chunks so the work spreads over threads
    let chunks = 10.min(days);
    let per = days / chunks;
    let ds: Vec<f64> = replicate(master, "martingale", chunks, |_, seed| {
        let path = simulate_beta(&dr, 2.16, per + 50, steps, seed).expect("beta simulation");
        path.d().skip(50).collect::<Vec<_>>()
    })
    .concat();
    let m = mean_se(&ds);
    let var = sample_variance(&ds);
    let oracle = d_variance_oracle(dr.alpha1(), dr.nu, 2001).expect("valid α₁");
    let ito = d_variance_ito(dr.alpha1(), dr.nu, 2001).expect("valid α₁");
    let mean_ok = m.mean.abs() <= 4.0 * m.se;
    let var_ok = ((var - oracle) / oracle).abs() <= 0.02;
    CriterionResult {
        id: 4,
        name: "martingale and variance oracle",
        pass: mean_ok && var_ok,
        detail: format!(
            "{} days at {steps} steps: mean D {:.5} ({:.2} se, {}); var {var:.5} vs oracle {oracle:.5} ({:+.1}%, {}); Itô variance {ito:.5} ({:+.1}%)",
            ds.len(),
            m.mean,
            m.mean / m.se,
            if mean_ok { "ok" } else { "out" },
            100.0 * (var / oracle - 1.0),
            if var_ok { "ok" } else { "out" },
            100.0 * (var / ito - 1.0),
        ),
    }
}

/// Conditional mean of the day's integral by Euler steps of the drift of
/// `E[β | F_d]`, returning the estimate and the step-error bound.
pub fn euler_conditional_ibeta(dr: &DRBetaParams, beta_d: f64, a_d: f64, steps: usize) -> (f64, f64) {
    let dt = 1.0 / steps as f64;
    let alpha = dr.alpha1();
    let f = |tau: f64, x: f64| 2.0 * tau * a_d - (dr.omega2 + beta_d) + alpha * x;
    let mut x = beta_d;
    let mut integral = 0.0;
    let (mut max_d1, mut max_d2): (f64, f64) = (0.0, 0.0);
    for j in 0..steps {
        let tau = j as f64 * dt;
        let d1 = f(tau, x);
        max_d1 = max_d1.max(d1.abs());
        max_d2 = max_d2.max((2.0 * a_d + alpha * d1).abs());
        integral += x * dt;
        x += d1 * dt;
    }
    let (r1, _, _) = varrho(alpha);
    (integral, 0.5 * dt * (max_d1 + max_d2 * r1))
}

pub fn criterion_mapping(days: usize, sim_steps: usize, euler_steps: usize, master: u64) -> CriterionResult {
    let dr = DRBetaParams::default();
    let theta = map_params(&dr).expect("reference parameters map into the parameter space");
    let path = simulate_beta(&dr, 2.16, days, sim_steps, derive_seed(master, "mapping", 0)).expect("beta simulation");
    // the recursion starts from the exact first conditional mean
    let rec = h_recursion(&theta, &path.ibeta, &HInit::Fixed(vec![path.h[0]])).expect("recursion");
    let mut worst: f64 = 0.0;
    let mut bound: f64 = 0.0;
    for d in 0..days {
        let beta_d = path.beta_int[d];
        let a_d = dr.omega1 + dr.gamma[0] * beta_d;
        let (direct, b) = euler_conditional_ibeta(&dr, beta_d, a_d, euler_steps);
        worst = worst.max((rec[d] - direct).abs());
        bound = bound.max(b);
        debug_assert!((conditional_ibeta(&dr, beta_d, a_d) - path.h[d]).abs() < 1e-9);
    }
    CriterionResult {
        id: 5,
        name: "mapping oracle",
        pass: worst <= 5.0 * bound,
        detail: format!(
            "{days} days: max |h recursion - Euler integral| {worst:.3e}, Euler-step bound {bound:.3e} ({euler_steps} steps)"
        ),
    }
}

/// Absolute errors of each coefficient, one row per replication.
pub fn qmle_errors(n: usize, reps: usize, master: u64) -> Vec<Vec<f64>> {
    let dr = DRBetaParams::default();
    let th0 = map_params(&dr).expect("reference mapping").to_vec();
    replicate(master, &format!("qmle-{n}"), reps, |_, seed| {
        let path = simulate_beta(&dr, 2.16, n + 100, 100, seed).expect("beta simulation");
        let f = fit(&path.ibeta[100..], 1, 1, &FitOptions::default()).expect("fit");
        f.theta_hat.to_vec().iter().zip(&th0).map(|(a, b)| a - b).collect()
    })
}

pub fn criterion_qmle(small: &[Vec<f64>], large: &[Vec<f64>], n: [usize; 2]) -> CriterionResult {
    let dim = large[0].len();
    let col = |rows: &[Vec<f64>], k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let med: Vec<f64> = (0..dim).map(|k| median(&col(large, k).iter().map(|v| v.abs()).collect::<Vec<_>>())).collect();
    let mse_of = |rows: &[Vec<f64>]| rows.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / rows.len() as f64;
    let (ms, ml) = (mse_of(small), mse_of(large));
    let med_ok = med.iter().all(|v| *v < 0.05);
    CriterionResult {
        id: 6,
        name: "QMLE consistency",
        pass: med_ok && ml < ms,
        detail: format!(
            "n={}: median |err| ω {:.4} γ {:.4} α {:.4} ({}); MSE n={} {ms:.5} -> n={} {ml:.5}",
            n[1],
            med[0],
            med[1],
            med[2],
            if med_ok { "all < 0.05" } else { "band exceeded" },
            n[0],
            n[1]
        ),
    }
}

/// One replication of the desk pipeline at `n + 1` days.
#[derive(Debug, Clone)]
pub struct InferenceRep {
    pub errors: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub z_whitened: Vec<f64>,
    pub forecast_err_drbeta: f64,
    pub forecast_err_armap: f64,
    pub failed_days: usize,
}

fn inverse_sqrt(v: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(v.clone());
    if eig.eigenvalues.iter().any(|l| *l <= 0.0) {
        return None;
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    Some(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn inference_data(n: usize, m: usize, reps: usize, master: u64) -> Vec<Option<InferenceRep>> {
    let cfg = tuning(m);
    let k = kernel();
    let opts = EstimatorOptions::default();
    let sim = SimConfig::standard(m, n + 1);
    let th0 = map_params(&sim.dr).expect("reference mapping");
    replicate(master, &format!("inference-{m}"), reps, |_, seed| {
        let out = simulate(&sim, seed).ok()?;
        let train = out.observed.select_days(&(0..n).collect::<Vec<_>>()).ok()?;
        let rib = rib_series(&train, &cfg, &k, &opts, Estimator::Rib).ok()?;
        let prvb = rib_series(&train, &cfg, &k, &opts, Estimator::Prvb).ok()?;
        let fopts = FitOptions::default();
        let f = fit(&rib.rib, 1, 1, &fopts).ok()?;
        let inf = f.inference.as_ref()?;
        let e: Vec<f64> = f.theta_hat.to_vec().iter().zip(th0.to_vec()).map(|(a, b)| a - b).collect();
        let v = DMatrix::from_fn(e.len(), e.len(), |i, j| inf.vhat[i][j]);
        let w = inverse_sqrt(&v)?;
        let z = (w * nalgebra::DVector::from_vec(e.clone())) * (f.n_used as f64).sqrt();
        let target = out.true_h[n];
        let dr_fc = forecast_h(&f.theta_hat, &rib.rib, &fopts.init, 1).ok()?;
        let (_, arma_fc) = arma_forecaster(&prvb.rib, 1, 1, Some(Estimator::Prvb)).ok()?;
        Some(InferenceRep {
            errors: e,
            std_errors: inf.std_errors.clone(),
            z_whitened: z.iter().copied().collect(),
            forecast_err_drbeta: dr_fc - target,
            forecast_err_armap: arma_fc - target,
            failed_days: rib.failures.len() + prvb.failures.len(),
        })
    })
}

pub fn criterion_inference(data: &[Option<InferenceRep>]) -> CriterionResult {
    let ok: Vec<&InferenceRep> = data.iter().flatten().collect();
    let dropped = data.len() - ok.len();
    if ok.len() < 3 {
        return CriterionResult {
            id: 7,
            name: "inference calibration",
            pass: false,
            detail: format!("only {} usable replications", ok.len()),
        };
    }
    let names = ["ω", "γ", "α"];
    let mut pass = dropped == 0;
    let mut parts = Vec::new();
    for (c, name) in names.iter().enumerate() {
        let cover = ok.iter().filter(|r| r.errors[c].abs() <= 1.959_964 * r.std_errors[c]).count() as f64 / ok.len() as f64;
        let qq = qq_correlation(&ok.iter().map(|r| r.z_whitened[c]).collect::<Vec<_>>());
        let good = (0.90..=0.98).contains(&cover) && qq > 0.97;
        pass &= good;
        parts.push(format!("{name} coverage {:.1}% QQ {qq:.4}", 100.0 * cover));
    }
    CriterionResult {
        id: 7,
        name: "inference calibration",
        pass,
        detail: format!("{} replications ({dropped} failed): {}", ok.len(), parts.join(", ")),
    }
}

pub fn criterion_forecast(data: &[Option<InferenceRep>]) -> CriterionResult {
    let ok: Vec<&InferenceRep> = data.iter().flatten().collect();
    let d2: Vec<f64> = ok.iter().map(|r| r.forecast_err_drbeta.powi(2)).collect();
    let a2: Vec<f64> = ok.iter().map(|r| r.forecast_err_armap.powi(2)).collect();
    let (md, ma) = (mean_se(&d2).mean, mean_se(&a2).mean);
    let diff = paired(&a2, &d2);
    CriterionResult {
        id: 8,
        name: "forecast ordering",
        pass: ok.len() >= 3 && md <= ma && diff.mean >= diff.se,
        detail: format!(
            "{} replications: MSFE DR Beta {md:.5}, ARMAP {ma:.5}; margin {:.5} ({:.1} se)",
            ok.len(),
            diff.mean,
            diff.mean / diff.se
        ),
    }
}

pub fn criterion_derivatives(cases: usize, master: u64) -> CriterionResult {
    let dr = DRBetaParams::default();
    let path = simulate_beta(&dr, 2.16, 300, 100, derive_seed(master, "derivative-data", 0)).expect("beta simulation");
    let x = &path.ibeta[50..];
    let orders = [(1, 1), (2, 1), (1, 2), (0, 1), (2, 2)];
    let mut worst: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, "derivatives", 0));
    let step = 1e-6;
    let mut done = 0;
    while done < cases {
        let (p, q) = orders[done % orders.len()];
        let dim = drbeta::model::param_dim(p, q);
        let mut v = vec![rng.gen_range(0.1..2.0)];
        v.extend((1..dim).map(|_| rng.gen_range(0.0..0.9 / (dim - 1) as f64)));
        let Ok(theta) = GarchParams::from_vec(p, q, &v) else { continue };
        if theta.validate().is_err() {
            continue;
        }
        let init = HInit::SampleMean;
        let (_, grad) = h_with_gradient(&theta, x, &init).expect("gradient");
        for j in 0..dim {
            let mut up = v.clone();
            let mut dn = v.clone();
            up[j] += step;
            dn[j] -= step;
            let hu = h_recursion(&GarchParams::from_vec(p, q, &up).expect("dims"), x, &init).expect("recursion");
            let hd = h_recursion(&GarchParams::from_vec(p, q, &dn).expect("dims"), x, &init).expect("recursion");
            for i in 0..x.len() {
                let fd = (hu[i] - hd[i]) / (2.0 * step);
                worst = worst.max((fd - grad[i][j]).abs());
            }
        }
        done += 1;
    }
    CriterionResult {
        id: 9,
        name: "derivative correctness",
        pass: worst < 1e-6,
        detail: format!("{cases} random θ over orders {orders:?}: max |recursive - central difference| {worst:.2e}"),
    }
}

/// Studentized one-day errors `m^{1/4}(RIB - Iβ)/√Ŝ`.
pub fn studentized_errors(m: usize, reps: usize, master: u64) -> Vec<f64> {
    let cfg = tuning(m);
    let k = kernel();
    let opts = EstimatorOptions::default();
    let sim = SimConfig::standard(m, 1);
    replicate(master, &format!("avar-{m}"), reps, |_, seed| {
        let out = simulate(&sim, seed).ok()?;
        let est = rib_day(out.observed.day(0), &cfg, &k, &opts).ok()?;
        (est.avar > 0.0).then(|| (m as f64).powf(0.25) * (est.rib - out.true_ibeta[0]) / est.avar.sqrt())
    })
    .into_iter()
    .flatten()
    .collect()
}

pub fn criterion_avar(z: &[f64], reps: usize) -> CriterionResult {
    let qq = qq_correlation(z);
    let ms = mean_se(z);
    let sd = sample_variance(z).sqrt();
    CriterionResult {
        id: 10,
        name: "avar studentization",
        pass: z.len() == reps && qq > 0.97,
        detail: format!(
            "{} of {reps} replications: QQ correlation {qq:.4}, mean {:.3}, sd {sd:.3}",
            z.len(),
            ms.mean
        ),
    }
}

/// Mean error of RIB and of RIB with the debias term's sign flipped, over
/// `reps` replications of `days` days.
pub fn debias_bias(m: usize, reps: usize, days: usize, master: u64) -> (MeanSe, MeanSe) {
    let cfg = tuning(m);
    let k = kernel();
    let opts = EstimatorOptions::default();
    let sim = SimConfig::standard(m, days);
    let per_rep: Vec<(Vec<f64>, Vec<f64>)> = replicate(master, &format!("debias-{m}"), reps, |_, seed| {
        let out = simulate(&sim, seed).expect("simulation at the reference parameters");
        let mut good = Vec::new();
        let mut flipped = Vec::new();
        for (i, day) in out.observed.days().enumerate() {
            if let Ok(est) = rib_day(day, &cfg, &k, &opts) {
                let scale = cfg.b_m as f64 / m as f64 / est.coverage;
                let shift: f64 = scale * est.blocks.iter().map(|b| 2.0 * b.debias).sum::<f64>();
                good.push(est.rib - out.true_ibeta[i]);
                flipped.push(est.rib + shift - out.true_ibeta[i]);
            }
        }
        (good, flipped)
    });
    let a: Vec<f64> = per_rep.iter().flat_map(|r| r.0.iter().copied()).collect();
    let b: Vec<f64> = per_rep.iter().flat_map(|r| r.1.iter().copied()).collect();
    (mean_se(&a), mean_se(&b))
}
