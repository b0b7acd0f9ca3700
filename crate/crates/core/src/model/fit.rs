use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::{alpha_len, h_with_gradient, param_dim, quasi_likelihood, GarchParams, HInit, BOUNDARY_MARGIN};
use crate::error::{Error, Result};
use crate::par::par_map;

const PENALTY: f64 = 1e4;
const INFEASIBLE_COST: f64 = 1e300;

/// Persistence pairs `(Σγ, Σα^g)` of the deterministic starting grid.
const START_GRID: [(f64, f64); 8] = [
    (0.0, 0.3),
    (0.2, 0.2),
    (0.5, 0.2),
    (0.1, 0.6),
    (0.7, 0.1),
    (0.3, 0.5),
    (0.0, 0.8),
    (0.6, 0.3),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Number of grid starts (at most 8); a moment-based start is always added.
    pub starts: usize,
    pub max_iter: u64,
    /// Simplex cost spread at which a Nelder–Mead run stops.
    pub tol: f64,
    pub init: HInit,
    /// Null values for the z statistics; zeros when absent.
    pub null: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            starts: 8,
            max_iter: 4000,
            tol: 1e-14,
            init: HInit::SampleMean,
            null: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub vhat: Vec<Vec<f64>>,
    pub condition_number: f64,
    /// `√(V̂_ii / n)`.
    pub std_errors: Vec<f64>,
    pub z_stats: Vec<f64>,
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta_hat: GarchParams,
    pub loglik: f64,
    pub n_used: usize,
    pub converged: bool,
    pub multistart_spread: f64,
    pub start_logliks: Vec<f64>,
    pub inference: Option<Inference>,
    pub inference_error: Option<String>,
}

#[derive(Clone)]
struct Objective<'a> {
    x: &'a [f64],
    p: usize,
    q: usize,
    init: &'a HInit,
}

impl Objective<'_> {
    fn eval(&self, v: &[f64]) -> f64 {
        let Ok(theta) = GarchParams::from_vec(self.p, self.q, v) else {
            return INFEASIBLE_COST;
        };
        let viol = theta.violation(BOUNDARY_MARGIN);
        let theta = theta.shrunk(BOUNDARY_MARGIN);
        match quasi_likelihood(&theta, self.x, self.init) {
            Ok(l) if l.is_finite() => -l + PENALTY * viol * viol,
            _ => INFEASIBLE_COST,
        }
    }
}

impl CostFunction for Objective<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, v: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        Ok(self.eval(v))
    }
}

fn simplex_around(start: &[f64], rel: f64) -> Vec<Vec<f64>> {
    let mut s = vec![start.to_vec()];
    for j in 0..start.len() {
        let mut v = start.to_vec();
        v[j] += rel * v[j].abs().max(0.05);
        s.push(v);
    }
    s
}

/// Minimises `f` by Nelder–Mead, restarting from the best vertex until a
/// restart no longer improves the cost.
pub(crate) fn nelder_mead<F>(f: F, start: &[f64], max_iter: u64, tol: f64) -> Result<(Vec<f64>, f64)>
where
    F: CostFunction<Param = Vec<f64>, Output = f64> + Clone,
{
    let mut best = start.to_vec();
    let mut best_cost = f.cost(&best).map_err(|e| Error::Optimization(e.to_string()))?;
    let mut rel = 0.2;
    for _ in 0..6 {
        let solver = NelderMead::new(simplex_around(&best, rel))
            .with_sd_tolerance(tol)
            .map_err(|e| Error::Optimization(e.to_string()))?;
        let res = Executor::new(f.clone(), solver)
            .configure(|s| s.max_iters(max_iter))
            .timer(false)
            .run()
            .map_err(|e| Error::Optimization(e.to_string()))?;
        let state = res.state();
        let cost = state.get_best_cost();
        let improved = best_cost - cost;
        if cost < best_cost {
            best_cost = cost;
            best = state.get_best_param().cloned().unwrap_or(best);
        }
        if improved <= tol.max(1e-15 * best_cost.abs()) {
            break;
        }
        rel *= 0.5;
    }
    Ok((best, best_cost))
}

fn sample_mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// AR coefficients for lags `1..=order` from the sample autocovariances.
pub fn yule_walker(x: &[f64], order: usize) -> Result<Vec<f64>> {
    if order == 0 {
        return Ok(Vec::new());
    }
    if x.len() <= order {
        return Err(Error::InsufficientData(format!("{} values for order {order}", x.len())));
    }
    let n = x.len();
    let mean = sample_mean(x);
    let acov: Vec<f64> = (0..=order)
        .map(|k| (k..n).map(|t| (x[t] - mean) * (x[t - k] - mean)).sum::<f64>() / n as f64)
        .collect();
    if acov[0] <= 0.0 {
        return Err(Error::NotIdentified("series has zero variance".into()));
    }
    let r = DMatrix::from_fn(order, order, |i, j| acov[i.abs_diff(j)]);
    let rhs = DVector::from_iterator(order, acov[1..].iter().copied());
    let phi = r
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("autocovariance matrix".into()))?;
    Ok(phi.iter().copied().collect())
}

fn spread_over_lags(total: f64, lags: usize) -> Vec<f64> {
    if lags == 0 {
        return Vec::new();
    }
    let w: Vec<f64> = (0..lags).map(|i| 0.5f64.powi(i as i32)).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| total * v / s).collect()
}

fn starting_points(x: &[f64], p: usize, q: usize, n_grid: usize) -> Vec<Vec<f64>> {
    let na = alpha_len(p, q);
    let mean = sample_mean(x);
    let mut out: Vec<Vec<f64>> = START_GRID
        .iter()
        .take(n_grid)
        .map(|&(g, a)| {
            let g = if p == 0 { 0.0 } else { g };
            let a = if na == 0 { 0.0 } else { a };
            let mut v = vec![mean * (1.0 - g - a)];
            v.extend(spread_over_lags(g, p));
            v.extend(spread_over_lags(a, na));
            v
        })
        .collect();
    // moment start: the observed series is ARMA with AR coefficients γ_i + α^g_i
    let r = p.max(na);
    if let Ok(mut phi) = yule_walker(x, r) {
        let s: f64 = phi.iter().map(|v| v.abs()).sum();
        if s > 0.95 {
            phi.iter_mut().for_each(|v| *v *= 0.95 / s);
        }
        let mut v = vec![mean * (1.0 - phi.iter().sum::<f64>())];
        let split = if p == 0 { 0.0 } else if na == 0 { 1.0 } else { 0.5 };
        v.extend(phi.iter().take(p).map(|f| split * f));
        v.extend((0..na).map(|i| phi[i] - if i < p { split * phi[i] } else { 0.0 }));
        out.push(v);
    }
    out
}

/// Least-squares quasi-likelihood fit of orders `(p, q)`.
pub fn fit(x: &[f64], p: usize, q: usize, opts: &FitOptions) -> Result<FitResult> {
    let dim = param_dim(p, q);
    if x.len() < 10 * dim {
        return Err(Error::InsufficientData(format!(
            "{} observations for {dim} parameters (need {})",
            x.len(),
            10 * dim
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Params(format!("series value {i} is {}", x[i])));
    }
    let mean = sample_mean(x);
    if x.iter().all(|v| (v - mean).abs() <= 1e-12 * mean.abs().max(1e-300)) {
        return Err(Error::NotIdentified(
            "series has zero variance; every θ with the same mean fits exactly".into(),
        ));
    }
    let obj = Objective {
        x,
        p,
        q,
        init: &opts.init,
    };
    let mut runs = Vec::new();
    for s in starting_points(x, p, q, opts.starts.min(START_GRID.len())) {
        let (v, c) = nelder_mead(obj.clone(), &s, opts.max_iter, opts.tol)?;
        if c < INFEASIBLE_COST {
            runs.push((v, c));
        }
    }
    if runs.is_empty() {
        return Err(Error::Optimization("every start was infeasible".into()));
    }
    let (best_v, best_c) = runs
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .cloned()
        .unwrap();
    let spread = runs.iter().map(|r| r.1 - best_c).fold(0.0, f64::max);
    let theta_hat = GarchParams::from_vec(p, q, &best_v)?.shrunk(BOUNDARY_MARGIN);
    let loglik = quasi_likelihood(&theta_hat, x, &opts.init)?;
    let mut out = FitResult {
        converged: spread <= 1e-6 * loglik.abs(),
        theta_hat,
        loglik,
        n_used: x.len(),
        multistart_spread: spread,
        start_logliks: runs.iter().map(|r| -r.1).collect(),
        inference: None,
        inference_error: None,
    };
    let null = opts.null.clone().unwrap_or_else(|| vec![0.0; dim]);
    match avar_estimate(&out.theta_hat, x, &opts.init)
        .and_then(|av| z_statistics(&out.theta_hat, &av.matrix, x.len(), &null).map(|z| (av, z)))
    {
        Ok((av, (z, pv))) => {
            out.inference = Some(Inference {
                std_errors: (0..dim).map(|i| (av.matrix[(i, i)] / x.len() as f64).sqrt()).collect(),
                vhat: to_rows(&av.matrix),
                condition_number: av.condition_number,
                z_stats: z,
                p_values: pv,
            })
        }
        Err(e) => out.inference_error = Some(e.to_string()),
    }
    Ok(out)
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

#[derive(Debug, Clone)]
pub struct AvarEstimate {
    pub matrix: DMatrix<f64>,
    /// Ratio of the extreme eigenvalues of the derivative Gram matrix.
    pub condition_number: f64,
}

/// `V̂ = (1/n)Σ(x_i - ĥ_i)² · [(1/n)Σ ∂ĥ_i ∂ĥ_iᵀ]⁻¹`.
pub fn avar_estimate(theta: &GarchParams, x: &[f64], init: &HInit) -> Result<AvarEstimate> {
    let (h, grad) = h_with_gradient(theta, x, init)?;
    let n = x.len() as f64;
    let dim = theta.dim();
    let s2 = x.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    let mut gram = DMatrix::<f64>::zeros(dim, dim);
    for g in &grad {
        let v = DVector::from_column_slice(g);
        gram += &v * v.transpose();
    }
    gram /= n;
    let eig = SymmetricEigen::new(gram.clone());
    let (imin, lmin) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let lmax = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let names = theta.coefficient_names();
    let collinear = || {
        let v = eig.eigenvectors.column(imin);
        names
            .iter()
            .zip(v.iter())
            .filter(|(_, c)| c.abs() >= 0.3)
            .map(|(n, _)| n.as_str())
            .collect::<Vec<_>>()
            .join(", ")
    };
    if s2 == 0.0 {
        return Ok(AvarEstimate {
            matrix: DMatrix::zeros(dim, dim),
            condition_number: lmax / lmin.max(0.0),
        });
    }
    if !(lmin > 1e-12 * lmax) {
        return Err(Error::Singular(format!(
            "derivative Gram matrix (eigenvalues {lmin:e} to {lmax:e}); near-collinear: {}",
            collinear()
        )));
    }
    let inv = gram
        .full_piv_lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular(format!("derivative Gram matrix; near-collinear: {}", collinear())))?;
    let mut v = inv * s2;
    v = (&v + v.transpose()) * 0.5;
    Ok(AvarEstimate {
        matrix: v,
        condition_number: lmax / lmin,
    })
}

/// `T = √n V̂^{-1/2} (θ̂ - θ_null)` and two-sided normal p-values.
pub fn z_statistics(theta: &GarchParams, vhat: &DMatrix<f64>, n: usize, null: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let est = theta.to_vec();
    if null.len() != est.len() || vhat.nrows() != est.len() || vhat.ncols() != est.len() {
        return Err(Error::LengthMismatch(format!(
            "{} coefficients, null of length {}, V̂ of shape {}×{}",
            est.len(),
            null.len(),
            vhat.nrows(),
            vhat.ncols()
        )));
    }
    let eig = SymmetricEigen::new((vhat + vhat.transpose()) * 0.5);
    let lmax = eig.eigenvalues.max();
    if !(eig.eigenvalues.min() > 1e-14 * lmax.abs()) || lmax <= 0.0 {
        return Err(Error::Degenerate(format!(
            "V̂ is not positive definite (eigenvalues {:?})",
            eig.eigenvalues.as_slice()
        )));
    }
    let inv_sqrt = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * eig.eigenvectors.transpose();
    let diff = DVector::from_iterator(est.len(), est.iter().zip(null).map(|(a, b)| a - b));
    let t = inv_sqrt * diff * (n as f64).sqrt();
    let z: Vec<f64> = t.iter().copied().collect();
    let p = z.iter().map(|v| erfc(v.abs() / std::f64::consts::SQRT_2)).collect();
    Ok((z, p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicCell {
    pub p: usize,
    pub q: usize,
    pub k: usize,
    pub bic: Option<f64>,
    pub rss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BicSelection {
    pub p: usize,
    pub q: usize,
    pub fit: FitResult,
    pub table: Vec<BicCell>,
}

/// `n ln(RSS/n) + k ln n`.
pub fn bic_value(rss: f64, n: usize, k: usize) -> f64 {
    let n = n as f64;
    n * (rss / n).ln() + k as f64 * n.ln()
}

/// Fits every `(p, q)` with `p ≤ max_p`, `q ≤ max_q` and keeps the lowest
/// BIC; ties go to the smaller `p + q`, then the smaller `p`.
pub fn bic_select(x: &[f64], max_p: usize, max_q: usize, opts: &FitOptions) -> Result<BicSelection> {
    let grid: Vec<(usize, usize)> = (0..=max_p).flat_map(|p| (0..=max_q).map(move |q| (p, q))).collect();
    let fits = par_map(grid, |(p, q)| ((p, q), fit(x, p, q, opts)));
    let mut table = Vec::new();
    let mut best: Option<(f64, usize, usize, FitResult)> = None;
    for ((p, q), r) in fits {
        let k = param_dim(p, q);
        match r {
            Ok(f) => {
                let rss = -f.loglik * x.len() as f64;
                let bic = bic_value(rss, x.len(), k);
                table.push(BicCell {
                    p,
                    q,
                    k,
                    bic: Some(bic),
                    rss: Some(rss),
                    error: None,
                });
                let better = match &best {
                    None => true,
                    Some((b, bp, bq, _)) => (bic, p + q, p) < (*b, bp + bq, *bp),
                };
                if better {
                    best = Some((bic, p, q, f));
                }
            }
            Err(e) => table.push(BicCell {
                p,
                q,
                k,
                bic: None,
                rss: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let (_, p, q, fit) = best.ok_or_else(|| Error::Optimization("no order in the grid could be fitted".into()))?;
    Ok(BicSelection { p, q, fit, table })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::h_recursion;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    /// `x_i = h_i + e_i` with i.i.d. Gaussian `e`.
    fn garch_series(theta: &GarchParams, n: usize, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = Normal::new(0.0, sd).unwrap();
        let r = theta.depth();
        let m = theta.unconditional_mean().unwrap();
        let mut h = vec![m; r];
        let mut x: Vec<f64> = (0..r).map(|_| m + d.sample(&mut rng)).collect();
        for i in r..n + 200 {
            let mut v = theta.omega_g;
            for (j, g) in theta.gamma.iter().enumerate() {
                v += g * h[i - 1 - j];
            }
            for (j, a) in theta.alpha_g.iter().enumerate() {
                v += a * x[i - 1 - j];
            }
            h.push(v);
            x.push(v + d.sample(&mut rng));
        }
        x.split_off(200)
    }

    fn th(o: f64, g: f64, a: f64) -> GarchParams {
        GarchParams::new(1, 1, o, vec![g], vec![a]).unwrap()
    }

    #[test]
    fn yule_walker_recovers_ar1() {
        let t = GarchParams::new(0, 1, 0.5, vec![], vec![0.6]).unwrap();
        let x = garch_series(&t, 20000, 0.3, 3);
        let phi = yule_walker(&x, 1).unwrap();
        assert!((phi[0] - 0.6).abs() < 0.03, "{phi:?}");
    }

    #[test]
    fn fit_recovers_parameters() {
        let truth = th(0.5, 0.4, 0.3);
        let x = garch_series(&truth, 20000, 0.2, 11);
        let f = fit(&x, 1, 1, &FitOptions::default()).unwrap();
        assert!(f.converged, "spread {}", f.multistart_spread);
        let v = f.theta_hat.to_vec();
        assert!((v[1] - 0.4).abs() < 0.1 && (v[2] - 0.3).abs() < 0.05, "{v:?}");
        // the optimum beats the truth in-sample
        assert!(f.loglik >= quasi_likelihood(&truth, &x, &HInit::SampleMean).unwrap() - 1e-12);
        let inf = f.inference.unwrap();
        assert!(inf.p_values.iter().all(|p| (0.0..=1.0).contains(p)));
    }

    #[test]
    fn fit_rejects_constant_and_short_series() {
        assert!(matches!(
            fit(&[0.7; 200], 1, 1, &FitOptions::default()),
            Err(Error::NotIdentified(_))
        ));
        assert!(matches!(
            fit(&[0.1, 0.2, 0.3], 1, 1, &FitOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }

    #[test]
    fn fit_depends_on_order() {
        let x = garch_series(&th(0.5, 0.4, 0.3), 600, 0.2, 5);
        let mut y = x.clone();
        y.reverse();
        y.swap(3, 400);
        let a = fit(&x, 1, 1, &FitOptions::default()).unwrap();
        let b = fit(&y, 1, 1, &FitOptions::default()).unwrap();
        assert_ne!(a.theta_hat.to_vec(), b.theta_hat.to_vec());
    }

    #[test]
    fn avar_zero_residuals_gives_zero_matrix() {
        let t = th(0.2, 0.3, 0.4);
        // x_i = ĥ_i built forward from a fixed initial value
        let mut x = vec![0.5];
        for i in 1..60 {
            let mut v = 0.2;
            v += 0.3 * x[i - 1];
            v += 0.4 * x[i - 1];
            x.push(v);
        }
        let init = HInit::Fixed(vec![0.5]);
        assert_eq!(h_recursion(&t, &x, &init).unwrap(), x);
        let av = avar_estimate(&t, &x, &init).unwrap_or_else(|e| panic!("{e}"));
        assert!(av.matrix.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn avar_intercept_only_has_unit_gram() {
        let t = GarchParams::new(0, 0, 1.0, vec![], vec![]).unwrap();
        let x = [0.0, 2.0, 0.0, 2.0];
        let av = avar_estimate(&t, &x, &HInit::SampleMean).unwrap();
        // Gram = 1, residual variance = 1
        assert_abs_diff_eq!(av.matrix[(0, 0)], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(av.condition_number, 1.0);
    }

    #[test]
    fn avar_reports_collinearity() {
        // with γ = 0 and a constant x, ∂ĥ/∂ω and ∂ĥ/∂α are proportional
        let t = GarchParams::new(0, 1, 0.1, vec![], vec![0.5]).unwrap();
        let err = avar_estimate(&t, &[2.0; 50], &HInit::SampleMean).unwrap_err().to_string();
        assert!(err.contains("omega_g") && err.contains("alpha_g1"), "{err}");
    }

    #[test]
    fn z_statistics_cases() {
        let t = th(0.1, 0.2, 0.3);
        let eye = DMatrix::<f64>::identity(3, 3);
        let (z, p) = z_statistics(&t, &eye, 100, &t.to_vec()).unwrap();
        assert!(z.iter().all(|v| *v == 0.0));
        assert!(p.iter().all(|v| *v == 1.0));
        // √n(θ̂ - θ₀) = (1.96, 0, 0) with n = 4
        let (z, p) = z_statistics(&t, &eye, 4, &[0.1 - 0.98, 0.2, 0.3]).unwrap();
        assert_abs_diff_eq!(z[0], 1.96, epsilon = 1e-12);
        assert_abs_diff_eq!(p[0], 0.05, epsilon = 1e-4);
        // a correlated V̂ is whitened, not just scaled
        let v = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let (z, _) = z_statistics(&t, &v, 1, &[0.0, 0.0, 0.0]).unwrap();
        let zz: f64 = z.iter().map(|a| a * a).sum();
        let d = DVector::from_vec(t.to_vec());
        let mahal = (d.transpose() * v.try_inverse().unwrap() * &d)[(0, 0)];
        assert_abs_diff_eq!(zz, mahal, epsilon = 1e-12);
        assert!(z_statistics(&t, &DMatrix::zeros(3, 3), 10, &[0.0; 3]).is_err());
    }

    #[test]
    fn bic_formula_monotone_in_rss() {
        assert!(bic_value(1.0, 100, 3) < bic_value(2.0, 100, 3));
        assert_abs_diff_eq!(bic_value(100.0, 100, 2), 2.0 * 100f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn bic_picks_intercept_for_white_noise() {
        let x = garch_series(&GarchParams::new(0, 0, 1.0, vec![], vec![]).unwrap(), 800, 0.3, 9);
        let sel = bic_select(&x, 1, 1, &FitOptions::default()).unwrap();
        assert_eq!((sel.p, sel.q), (0, 0));
        assert_eq!(sel.table.len(), 4);
    }
}
