//! Discrete-time layer of the dynamic realized beta model: the mapping from
//! the continuous-time parameters, the conditional-mean recursion and its
//! least-squares quasi-likelihood.

mod fit;
mod forecast;

pub use fit::*;
pub use forecast::*;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{varrho, DRBetaParams};

/// Margin kept from the stationarity boundary when projecting parameters.
pub(crate) const BOUNDARY_MARGIN: f64 = 1e-6;

/// Coefficients of `h_n = ω^g + Σγ_i h_{n-i} + Σα^g_i Iβ_{n-i}`.
///
/// `alpha_g` has `max(p, q)` entries when `q ≥ 1` and none when `q = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub p: usize,
    pub q: usize,
    pub omega_g: f64,
    pub gamma: Vec<f64>,
    pub alpha_g: Vec<f64>,
}

/// Number of `α^g` coefficients for orders `(p, q)`.
pub fn alpha_len(p: usize, q: usize) -> usize {
    if q == 0 {
        0
    } else {
        p.max(q)
    }
}

/// Length of the parameter vector `(ω^g, γ, α^g)`.
pub fn param_dim(p: usize, q: usize) -> usize {
    1 + p + alpha_len(p, q)
}

impl GarchParams {
    pub fn new(p: usize, q: usize, omega_g: f64, gamma: Vec<f64>, alpha_g: Vec<f64>) -> Result<Self> {
        if gamma.len() != p || alpha_g.len() != alpha_len(p, q) {
            return Err(Error::Params(format!(
                "orders ({p}, {q}) need {p} γ and {} α^g values, got {} and {}",
                alpha_len(p, q),
                gamma.len(),
                alpha_g.len()
            )));
        }
        Ok(Self {
            p,
            q,
            omega_g,
            gamma,
            alpha_g,
        })
    }

    pub fn from_vec(p: usize, q: usize, v: &[f64]) -> Result<Self> {
        if v.len() != param_dim(p, q) {
            return Err(Error::Params(format!(
                "parameter vector of length {} for orders ({p}, {q})",
                v.len()
            )));
        }
        Self::new(p, q, v[0], v[1..1 + p].to_vec(), v[1 + p..].to_vec())
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.omega_g);
        v.extend(&self.gamma);
        v.extend(&self.alpha_g);
        v
    }

    pub fn dim(&self) -> usize {
        param_dim(self.p, self.q)
    }

    /// Number of lags the recursion reads.
    pub fn depth(&self) -> usize {
        self.p.max(self.alpha_g.len())
    }

    pub fn coefficient_names(&self) -> Vec<String> {
        let mut names = vec!["omega_g".to_string()];
        names.extend((1..=self.p).map(|i| format!("gamma{i}")));
        names.extend((1..=self.alpha_g.len()).map(|i| format!("alpha_g{i}")));
        names
    }

    /// `(Σ|γ_i|, Σ_i |1{i ≤ p}γ_i + α^g_i|)`; both must stay below one.
    pub fn persistence(&self) -> (f64, f64) {
        let sg = self.gamma.iter().map(|g| g.abs()).sum();
        let sa = (0..self.depth())
            .map(|i| (self.gamma.get(i).copied().unwrap_or(0.0) + self.alpha_g.get(i).copied().unwrap_or(0.0)).abs())
            .sum();
        (sg, sa)
    }

    /// Amount by which the persistence sums exceed `1 - margin`.
    pub(crate) fn violation(&self, margin: f64) -> f64 {
        let (sg, sa) = self.persistence();
        (sg - (1.0 - margin)).max(0.0) + (sa - (1.0 - margin)).max(0.0)
    }

    /// Scales the lag coefficients towards zero until both sums are at most
    /// `1 - margin`.
    pub(crate) fn shrunk(&self, margin: f64) -> Self {
        let (sg, sa) = self.persistence();
        let top = sg.max(sa);
        let mut out = self.clone();
        if top > 1.0 - margin {
            let c = (1.0 - margin) / top;
            out.gamma.iter_mut().for_each(|g| *g *= c);
            out.alpha_g.iter_mut().for_each(|a| *a *= c);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.len() != self.p || self.alpha_g.len() != alpha_len(self.p, self.q) {
            return Err(Error::Params("coefficient counts do not match the orders".into()));
        }
        if self.to_vec().iter().any(|v| !v.is_finite()) {
            return Err(Error::Params(format!("non-finite coefficient in {:?}", self.to_vec())));
        }
        let (sg, sa) = self.persistence();
        if sg >= 1.0 || sa >= 1.0 {
            return Err(Error::Params(format!(
                "θ = {:?} is outside the stationary region: Σ|γ| = {sg:.6}, Σ|γ + α^g| = {sa:.6}",
                self.to_vec()
            )));
        }
        Ok(())
    }

    /// `E[h_n] = ω^g / (1 - Σγ_i - Σα^g_i)`.
    pub fn unconditional_mean(&self) -> Result<f64> {
        let den = 1.0 - self.gamma.iter().sum::<f64>() - self.alpha_g.iter().sum::<f64>();
        if den <= 0.0 {
            return Err(Error::Params(format!("1 - Σγ - Σα^g = {den} is not positive")));
        }
        Ok(self.omega_g / den)
    }
}

/// Coefficients of the discrete recursion implied by the spot beta model.
pub fn map_params(dr: &DRBetaParams) -> Result<GarchParams> {
    dr.validate()?;
    let a1 = dr.alpha1();
    if dr.q() == 0 || a1 == 0.0 {
        return Err(Error::Params("α₁ = 0 is not supported by the mapping".into()));
    }
    let (p, q) = (dr.p(), dr.q());
    let (r1, r2, r3) = varrho(a1);
    let omega = dr.omega1 - dr.omega2;
    let sum_gamma: f64 = dr.gamma.iter().sum();
    let omega_g = (r1 - r2 + 2.0 * r3) * omega + (2.0 * r3 - r2) * (1.0 - sum_gamma) * dr.omega2;
    let alpha_g = (1..=p.max(q))
        .map(|i| {
            let mut v = 0.0;
            if i <= p {
                v += 2.0 * r3 * dr.gamma[i - 1] * a1;
            }
            if i <= q {
                v += (r1 - r2) * dr.alpha[i - 1];
            }
            if i < q {
                v += 2.0 * r3 * dr.alpha[i];
            }
            v
        })
        .collect();
    let theta = GarchParams::new(p, q, omega_g, dr.gamma.clone(), alpha_g)?;
    theta.validate()?;
    Ok(theta)
}

/// Values used for the first `depth` entries of `ĥ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum HInit {
    /// Sample mean of the input series.
    #[default]
    SampleMean,
    Zero,
    /// `E[h_n]` under the parameters being evaluated.
    Unconditional,
    Fixed(Vec<f64>),
}

fn check_series(x: &[f64], min_len: usize) -> Result<()> {
    if x.len() < min_len {
        return Err(Error::InsufficientData(format!(
            "series of length {} needs at least {min_len} values",
            x.len()
        )));
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(Error::Params(format!("series value {i} is {}", x[i])));
    }
    Ok(())
}

/// Initial values and their derivatives with respect to the parameters.
fn initial_values(theta: &GarchParams, x: &[f64], init: &HInit) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let r = theta.depth();
    let dim = theta.dim();
    let zero_grad = vec![vec![0.0; dim]; r];
    match init {
        HInit::SampleMean => {
            let mean = x.iter().sum::<f64>() / x.len() as f64;
            Ok((vec![mean; r], zero_grad))
        }
        HInit::Zero => Ok((vec![0.0; r], zero_grad)),
        HInit::Fixed(v) => {
            if v.len() != r {
                return Err(Error::Params(format!("{} fixed initial values for depth {r}", v.len())));
            }
            Ok((v.clone(), zero_grad))
        }
        HInit::Unconditional => {
            let mean = theta.unconditional_mean()?;
            let den = 1.0 - theta.gamma.iter().sum::<f64>() - theta.alpha_g.iter().sum::<f64>();
            let mut g = vec![mean / den; dim];
            g[0] = 1.0 / den;
            Ok((vec![mean; r], vec![g; r]))
        }
    }
}

fn recurse(theta: &GarchParams, x: &[f64], init: &HInit, with_grad: bool) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let r = theta.depth();
    check_series(x, r + 1)?;
    if theta.to_vec().iter().any(|v| !v.is_finite()) {
        return Err(Error::Params("non-finite parameter".into()));
    }
    let (mut h, mut grad) = initial_values(theta, x, init)?;
    h.reserve(x.len() - r);
    let dim = theta.dim();
    let p = theta.p;
    for i in r..x.len() {
        let mut v = theta.omega_g;
        for (j, g) in theta.gamma.iter().enumerate() {
            v += g * h[i - 1 - j];
        }
        for (j, a) in theta.alpha_g.iter().enumerate() {
            v += a * x[i - 1 - j];
        }
        if with_grad {
            let mut d = vec![0.0; dim];
            d[0] = 1.0;
            for (j, g) in theta.gamma.iter().enumerate() {
                d[1 + j] += h[i - 1 - j];
                let prev = &grad[i - 1 - j];
                for (dk, pk) in d.iter_mut().zip(prev) {
                    *dk += g * pk;
                }
            }
            for j in 0..theta.alpha_g.len() {
                d[1 + p + j] += x[i - 1 - j];
            }
            grad.push(d);
        }
        h.push(v);
    }
    Ok((h, grad))
}

/// `ĥ_i` for every day; entry `i` reads only days before `i`.
pub fn h_recursion(theta: &GarchParams, x: &[f64], init: &HInit) -> Result<Vec<f64>> {
    recurse(theta, x, init, false).map(|(h, _)| h)
}

/// `ĥ` together with `∂ĥ_i/∂θ` from the differentiated recursion.
pub fn h_with_gradient(theta: &GarchParams, x: &[f64], init: &HInit) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    recurse(theta, x, init, true)
}

/// `-(1/n) Σ (x_i - ĥ_i)²`.
pub fn quasi_likelihood(theta: &GarchParams, x: &[f64], init: &HInit) -> Result<f64> {
    let h = h_recursion(theta, x, init)?;
    Ok(-x.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / x.len() as f64)
}
