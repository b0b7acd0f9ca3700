//! Pre-averaging weight functions and their integral constants.
//!
//! A weight function `g` on `[0, 1]` with `g(0) = g(1) = 0` defines
//!
//! ```text
//! φ0(s) = ∫_s^1 g(u) g(u - s) du      ψ0 = φ0(0)
//! φ1(s) = ∫_s^1 g'(u) g'(u - s) du    ψ1 = φ1(0)
//! Φ00 = ∫ φ0²,  Φ01 = ∫ φ0 φ1,  Φ11 = ∫ φ1²
//! ```
//!
//! All integrals are evaluated by composite Simpson quadrature on pieces
//! split at the kinks of the integrand, so piecewise-polynomial weights
//! (the triangular kernel) are integrated without kink error.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_QUADRATURE_POINTS: usize = 4097;

const BOUNDARY_TOL: f64 = 1e-12;
const DEGENERATE_TOL: f64 = 1e-12;
const NUMERIC_DIFF_STEP: f64 = 1e-6;

pub trait WeightFunction: Send + Sync {
    fn name(&self) -> &str;

    fn value(&self, x: f64) -> f64;

    /// Analytic derivative on the open pieces, if known.
    fn derivative(&self, _x: f64) -> Option<f64> {
        None
    }

    /// Interior points of `(0, 1)` where `g'` may jump.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

impl fmt::Debug for dyn WeightFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "WeightFunction({})", self.name())
    }
}

/// `g(x) = min(x, 1 - x)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Triangular;

impl WeightFunction for Triangular {
    fn name(&self) -> &str {
        "triangular"
    }

    fn value(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            0.0
        } else {
            x.min(1.0 - x)
        }
    }

    fn derivative(&self, x: f64) -> Option<f64> {
        if !(0.0..=1.0).contains(&x) {
            Some(0.0)
        } else if x < 0.5 {
            Some(1.0)
        } else {
            Some(-1.0)
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        vec![0.5]
    }
}

/// Arbitrary weight function given by a closure; derivatives are taken
/// numerically inside each smooth piece.
pub struct FnWeight {
    name: String,
    f: Box<dyn Fn(f64) -> f64 + Send + Sync>,
    breakpoints: Vec<f64>,
}

impl FnWeight {
    pub fn new(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        breakpoints: Vec<f64>,
    ) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
            breakpoints,
        }
    }
}

impl WeightFunction for FnWeight {
    fn name(&self) -> &str {
        &self.name
    }

    fn value(&self, x: f64) -> f64 {
        if !(0.0..=1.0).contains(&x) {
            0.0
        } else {
            (self.f)(x)
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.breakpoints.clone()
    }
}

/// The integral constants of a weight function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelConstants {
    pub psi0: f64,
    pub psi1: f64,
    pub phi00: f64,
    pub phi01: f64,
    pub phi11: f64,
}

impl KernelConstants {
    /// Closed-form values for the triangular kernel.
    pub const TRIANGULAR: KernelConstants = KernelConstants {
        psi0: 1.0 / 12.0,
        psi1: 1.0,
        phi00: 151.0 / 80640.0,
        phi01: 1.0 / 96.0,
        phi11: 1.0 / 6.0,
    };
}

#[derive(Debug, Clone)]
pub struct WeightKernel {
    pub g: Arc<dyn WeightFunction>,
    pub constants: KernelConstants,
    pub quadrature_points: usize,
}

impl WeightKernel {
    pub fn triangular() -> Self {
        kernel_constants(Arc::new(Triangular), DEFAULT_QUADRATURE_POINTS)
            .expect("triangular kernel is valid")
    }

    pub fn psi0(&self) -> f64 {
        self.constants.psi0
    }

    /// `g(j / k)` for `j = 0..=k`.
    pub fn grid_weights(&self, k: usize) -> Vec<f64> {
        (0..=k).map(|j| self.g.value(j as f64 / k as f64)).collect()
    }
}

/// Computes ψ0, ψ1, Φ00, Φ01, Φ11 for `g`.
pub fn kernel_constants(
    g: Arc<dyn WeightFunction>,
    quadrature_points: usize,
) -> Result<WeightKernel> {
    if quadrature_points < 3 {
        return Err(Error::Kernel(format!(
            "need at least 3 quadrature points, got {quadrature_points}"
        )));
    }
    let (g0, g1) = (g.value(0.0), g.value(1.0));
    if g0.abs() > BOUNDARY_TOL || g1.abs() > BOUNDARY_TOL {
        return Err(Error::Kernel(format!(
            "{}: g(0) = {g0:e}, g(1) = {g1:e}; both must vanish",
            g.name()
        )));
    }
    for b in g.breakpoints() {
        if !(b > 0.0 && b < 1.0) {
            return Err(Error::Kernel(format!(
                "{}: breakpoint {b} outside (0, 1)",
                g.name()
            )));
        }
    }

    let quad = Quadrature::new(g.as_ref(), quadrature_points);
    let psi0 = quad.phi(0.0, false);
    if psi0 <= DEGENERATE_TOL {
        return Err(Error::Kernel(format!(
            "{}: ∫g² = {psi0:e} is degenerate",
            g.name()
        )));
    }
    let psi1 = quad.phi(0.0, true);

    let mut s_breaks = Vec::new();
    for &x in &quad.g_breaks {
        for &y in &quad.g_breaks {
            let d = (x - y).abs();
            if d > 0.0 && d < 1.0 {
                s_breaks.push(d);
            }
        }
    }
    let pieces = pieces(0.0, 1.0, &s_breaks);
    let (mut phi00, mut phi01, mut phi11) = (0.0, 0.0, 0.0);
    for (a, b) in pieces {
        let n = quad.intervals_for(b - a);
        phi00 += simpson(a, b, n, |s| quad.phi(s, false).powi(2));
        phi01 += simpson(a, b, n, |s| quad.phi(s, false) * quad.phi(s, true));
        phi11 += simpson(a, b, n, |s| quad.phi(s, true).powi(2));
    }

    Ok(WeightKernel {
        g,
        constants: KernelConstants {
            psi0,
            psi1,
            phi00,
            phi01,
            phi11,
        },
        quadrature_points,
    })
}

struct Quadrature<'a> {
    g: &'a dyn WeightFunction,
    /// Breakpoints of `g` including the endpoints 0 and 1.
    g_breaks: Vec<f64>,
    intervals_per_unit: usize,
}

impl<'a> Quadrature<'a> {
    fn new(g: &'a dyn WeightFunction, points: usize) -> Self {
        let mut g_breaks = vec![0.0, 1.0];
        g_breaks.extend(g.breakpoints());
        g_breaks.sort_by(f64::total_cmp);
        g_breaks.dedup();
        Self {
            g,
            g_breaks,
            intervals_per_unit: points - 1,
        }
    }

    fn intervals_for(&self, len: f64) -> usize {
        let n = (self.intervals_per_unit as f64 * len).ceil() as usize;
        (n.max(2) + 1) & !1
    }

    fn deriv(&self, x: f64, lo: f64, hi: f64) -> f64 {
        if let Some(d) = self.g.derivative(x.clamp(lo, hi).min(hi - 1e-15).max(lo + 1e-15)) {
            return d;
        }
        let h = NUMERIC_DIFF_STEP;
        let g = |t: f64| self.g.value(t);
        if x - h < lo {
            (-3.0 * g(x) + 4.0 * g(x + h) - g(x + 2.0 * h)) / (2.0 * h)
        } else if x + h > hi {
            (3.0 * g(x) - 4.0 * g(x - h) + g(x - 2.0 * h)) / (2.0 * h)
        } else {
            (g(x + h) - g(x - h)) / (2.0 * h)
        }
    }

    /// φ0(s) or φ1(s).
    fn phi(&self, s: f64, derivative: bool) -> f64 {
        let mut cuts = Vec::with_capacity(2 * self.g_breaks.len());
        for &b in &self.g_breaks {
            cuts.push(b);
            cuts.push(b + s);
        }
        let mut total = 0.0;
        for (a, b) in pieces(s, 1.0, &cuts) {
            let n = self.intervals_for(b - a);
            total += if derivative {
                simpson(a, b, n, |u| {
                    self.deriv(u, a, b) * self.deriv(u - s, a - s, b - s)
                })
            } else {
                simpson(a, b, n, |u| self.g.value(u) * self.g.value(u - s))
            };
        }
        total
    }
}

/// Splits `[lo, hi]` at the cut points lying strictly inside it.
fn pieces(lo: f64, hi: f64, cuts: &[f64]) -> Vec<(f64, f64)> {
    if hi - lo <= 0.0 {
        return Vec::new();
    }
    let mut pts: Vec<f64> = cuts
        .iter()
        .copied()
        .filter(|&c| c > lo + 1e-14 && c < hi - 1e-14)
        .collect();
    pts.push(lo);
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    pts.windows(2).map(|w| (w[0], w[1])).collect()
}

/// Composite Simpson rule with `n` (even) intervals.
pub(crate) fn simpson(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    debug_assert!(n >= 2 && n % 2 == 0);
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// Discrete autocorrelation weights of the pre-averaging increments,
/// `φ_d = k Σ_i (g_{i+1} - g_i)(g_{i-d+1} - g_{i-d})` for `|d| ≤ k'`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhiWeights {
    pub k_prime: usize,
    weights: Vec<f64>,
}

impl PhiWeights {
    pub fn get(&self, d: isize) -> f64 {
        let idx = d + self.k_prime as isize;
        if idx < 0 || idx as usize >= self.weights.len() {
            0.0
        } else {
            self.weights[idx as usize]
        }
    }

    /// `(d, φ_d)` for `d = -k'..=k'`.
    pub fn iter(&self) -> impl Iterator<Item = (isize, f64)> + '_ {
        let kp = self.k_prime as isize;
        self.weights
            .iter()
            .enumerate()
            .map(move |(i, &w)| (i as isize - kp, w))
    }
}

pub fn discrete_phi_weights(
    k_m: usize,
    k_prime_m: usize,
    g: &dyn WeightFunction,
) -> Result<PhiWeights> {
    if k_m < 2 {
        return Err(Error::Kernel(format!("k_m must be at least 2, got {k_m}")));
    }
    let gv: Vec<f64> = (0..=k_m).map(|j| g.value(j as f64 / k_m as f64)).collect();
    // Δ_i = g_{i+1} - g_i, nonzero only for i in 0..k_m.
    let inc: Vec<f64> = gv.windows(2).map(|w| w[1] - w[0]).collect();
    let kp = k_prime_m as isize;
    let weights = (-kp..=kp)
        .map(|d| {
            let mut acc = 0.0;
            for (i, &di) in inc.iter().enumerate() {
                let j = i as isize - d;
                if j >= 0 && (j as usize) < inc.len() {
                    acc += di * inc[j as usize];
                }
            }
            k_m as f64 * acc
        })
        .collect();
    Ok(PhiWeights {
        k_prime: k_prime_m,
        weights,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn brute_quadrature(f: impl Fn(f64) -> f64, n: usize) -> f64 {
        // midpoint rule oracle
        let h = 1.0 / n as f64;
        (0..n).map(|i| f((i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn triangular_matches_closed_form() {
        let k = WeightKernel::triangular();
        let c = k.constants;
        let t = KernelConstants::TRIANGULAR;
        assert_abs_diff_eq!(c.psi0, 1.0 / 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.psi1, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.phi00, t.phi00, epsilon = 1e-12);
        assert_abs_diff_eq!(c.phi01, t.phi01, epsilon = 1e-12);
        assert_abs_diff_eq!(c.phi11, t.phi11, epsilon = 1e-12);
    }

    #[test]
    fn psi0_against_midpoint_oracle() {
        let psi0 = brute_quadrature(|x| x.min(1.0 - x).powi(2), 200_000);
        assert_abs_diff_eq!(psi0, 1.0 / 12.0, epsilon = 1e-9);
        assert_abs_diff_eq!(WeightKernel::triangular().psi0(), psi0, epsilon = 1e-9);
    }

    #[test]
    fn doubling_quadrature_is_stable() {
        let sine = || {
            Arc::new(FnWeight::new(
                "sine",
                |x| (std::f64::consts::PI * x).sin(),
                vec![],
            )) as Arc<dyn WeightFunction>
        };
        for g in [Arc::new(Triangular) as Arc<dyn WeightFunction>, sine()] {
            let a = kernel_constants(g.clone(), 513).unwrap().constants;
            let b = kernel_constants(g.clone(), 1025).unwrap().constants;
            for (x, y) in [
                (a.psi0, b.psi0),
                (a.psi1, b.psi1),
                (a.phi00, b.phi00),
                (a.phi01, b.phi01),
                (a.phi11, b.phi11),
            ] {
                assert!((x - y).abs() < 1e-8, "{}: {x} vs {y}", g.name());
            }
        }
    }

    #[test]
    fn sine_kernel_constants() {
        // g = sin(πx): ψ0 = 1/2, ψ1 = π²/2
        let g = Arc::new(FnWeight::new(
            "sine",
            |x| (std::f64::consts::PI * x).sin(),
            vec![],
        ));
        let k = kernel_constants(g, 1025).unwrap();
        assert_abs_diff_eq!(k.constants.psi0, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(
            k.constants.psi1,
            std::f64::consts::PI.powi(2) / 2.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn rejects_bad_boundary_and_degenerate() {
        let bad = Arc::new(FnWeight::new("bad", |x| x, vec![]));
        assert!(matches!(kernel_constants(bad, 101), Err(Error::Kernel(_))));
        let zero = Arc::new(FnWeight::new("zero", |_| 0.0, vec![]));
        assert!(matches!(kernel_constants(zero, 101), Err(Error::Kernel(_))));
    }

    #[test]
    fn phi_weights_triangular() {
        let w = discrete_phi_weights(10, 4, &Triangular).unwrap();
        assert_abs_diff_eq!(w.get(0), 1.0, epsilon = 1e-12);
        for d in 1..=4 {
            assert_eq!(w.get(d), w.get(-d));
            assert!(w.get(d).abs() <= w.get(0));
        }
        // k = 2: Δ = (0.5, -0.5), φ_1 = 2 · (Δ_1 Δ_0) = -0.5
        let w2 = discrete_phi_weights(2, 1, &Triangular).unwrap();
        assert_abs_diff_eq!(w2.get(1), -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(w2.get(0), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn phi_weights_telescope() {
        for k in [2usize, 3, 7, 20, 55] {
            let w = discrete_phi_weights(k, k + 2, &Triangular).unwrap();
            let total: f64 = w.iter().map(|(_, v)| v).sum();
            assert!(total.abs() < 1e-12, "k = {k}: {total}");
        }
        assert!(discrete_phi_weights(1, 1, &Triangular).is_err());
    }
}
