//! Observation grid and the pre-averaging / truncation tuning constants.

use std::fmt;

use serde::de::{self, Deserializer, Visitor};
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};

/// Regular intraday grid: `m` steps per day of length `dt = 1/m`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub m: usize,
    pub n_days: usize,
}

impl TimeGrid {
    pub fn new(m: usize, n_days: usize) -> Result<Self> {
        if m < 2 {
            return Err(Error::Tuning(format!("m must be at least 2, got {m}")));
        }
        Ok(Self { m, n_days })
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// Number of grid points of a continuous path over all days.
    pub fn path_len(&self) -> usize {
        self.n_days * self.m + 1
    }

    pub fn check_tuning(&self, cfg: &TuningConfig) -> Result<()> {
        if self.m < 2 * cfg.k_m + 2 {
            return Err(Error::Tuning(format!(
                "m = {} is below 2·k_m + 2 = {}",
                self.m,
                2 * cfg.k_m + 2
            )));
        }
        Ok(())
    }
}

/// A truncation level: an absolute level, no truncation, or a level
/// resolved from each day's data.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Threshold {
    #[default]
    Auto,
    Infinite,
    Level(f64),
}

impl Threshold {
    pub fn is_valid(&self) -> bool {
        match self {
            Threshold::Level(v) => v.is_finite() && *v > 0.0,
            _ => true,
        }
    }
}

impl Serialize for Threshold {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Threshold::Auto => s.serialize_str("auto"),
            Threshold::Infinite => s.serialize_str("inf"),
            Threshold::Level(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Threshold {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Threshold;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a positive number, \"auto\" or \"inf\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Threshold, E> {
                Ok(Threshold::Level(v))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Threshold, E> {
                Ok(Threshold::Level(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Threshold, E> {
                Ok(Threshold::Level(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Threshold, E> {
                match v {
                    "auto" => Ok(Threshold::Auto),
                    "inf" | "infinite" | "none" => Ok(Threshold::Infinite),
                    other => Err(E::invalid_value(de::Unexpected::Str(other), &self)),
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Pre-averaging and truncation constants for one sample size `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    pub m: usize,
    pub k_m: usize,
    pub b_m: usize,
    pub l_m: usize,
    pub k_prime_m: usize,
    pub delta_m: f64,
    pub u1: Threshold,
    pub u2: Threshold,
    pub u11: Threshold,
    pub u12: Threshold,
    pub u22: Threshold,
    pub a_dot11: Threshold,
    pub a_dot12: Threshold,
    pub a_dot22: Threshold,
}

/// Power-law exponents for the window sizes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TuningExponents {
    pub c_k: f64,
    pub c_b: f64,
    pub kappa: f64,
    pub c_l: f64,
    pub varsigma: f64,
    pub c_k_prime: f64,
    pub tau: f64,
    pub varpi1: f64,
    pub varpi2: f64,
}

impl Default for TuningExponents {
    fn default() -> Self {
        Self {
            c_k: 0.8,
            c_b: 1.0,
            kappa: 0.7,
            c_l: 1.0,
            varsigma: 0.15,
            c_k_prime: 1.0,
            tau: 0.124,
            varpi1: 0.47,
            varpi2: 0.15,
        }
    }
}

/// Partial override of a [`TuningConfig`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningOverrides {
    pub k_m: Option<usize>,
    pub b_m: Option<usize>,
    pub l_m: Option<usize>,
    pub k_prime_m: Option<usize>,
    pub delta_m: Option<f64>,
    pub u1: Option<Threshold>,
    pub u2: Option<Threshold>,
    pub u11: Option<Threshold>,
    pub u12: Option<Threshold>,
    pub u22: Option<Threshold>,
    pub a_dot11: Option<Threshold>,
    pub a_dot12: Option<Threshold>,
    pub a_dot22: Option<Threshold>,
}

impl TuningConfig {
    pub fn dt(&self) -> f64 {
        1.0 / self.m as f64
    }

    /// `C_k = k_m Δ_m^{1/2}`, derived from the realized window.
    pub fn c_k(&self) -> f64 {
        self.k_m as f64 * self.dt().sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Tuning(msg));
        if self.k_m < 2 {
            return fail(format!("k_m = {} must be at least 2", self.k_m));
        }
        if self.l_m == 0 || 6 * self.l_m >= self.b_m {
            return fail(format!(
                "need 0 < 6·l_m < b_m, got l_m = {}, b_m = {}",
                self.l_m, self.b_m
            ));
        }
        if 2 * self.k_m >= self.b_m {
            return fail(format!(
                "need 2·k_m < b_m, got k_m = {}, b_m = {}",
                self.k_m, self.b_m
            ));
        }
        if self.k_prime_m < 1 {
            return fail("k_prime_m must be at least 1".into());
        }
        if !(self.delta_m > 0.0 && self.delta_m.is_finite()) {
            return fail(format!("delta_m = {} must be positive", self.delta_m));
        }
        if self.b_m > self.m {
            return fail(format!("b_m = {} exceeds m = {}", self.b_m, self.m));
        }
        for (name, t) in self.thresholds() {
            if !t.is_valid() {
                return fail(format!("truncation level {name} = {t:?} must be positive"));
            }
        }
        Ok(())
    }

    fn thresholds(&self) -> [(&'static str, Threshold); 8] {
        [
            ("u1", self.u1),
            ("u2", self.u2),
            ("u11", self.u11),
            ("u12", self.u12),
            ("u22", self.u22),
            ("a_dot11", self.a_dot11),
            ("a_dot12", self.a_dot12),
            ("a_dot22", self.a_dot22),
        ]
    }

    /// Replaces every truncation level.
    pub fn with_all_thresholds(mut self, t: Threshold) -> Self {
        self.u1 = t;
        self.u2 = t;
        self.u11 = t;
        self.u12 = t;
        self.u22 = t;
        self.a_dot11 = t;
        self.a_dot12 = t;
        self.a_dot22 = t;
        self
    }

    pub fn apply(mut self, o: &TuningOverrides) -> Result<Self> {
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = o.$f { self.$f = v; } )* };
        }
        set!(k_m, b_m, l_m, k_prime_m, delta_m, u1, u2, u11, u12, u22, a_dot11, a_dot12, a_dot22);
        self.validate()?;
        Ok(self)
    }

    /// Absolute power-law levels `u_{1,2} = a (k_m Δ_m)^{ϖ1}` and
    /// `u_{ab} = a Δ_m^{ϖ2}` for user-supplied constants.
    pub fn with_power_law_thresholds(
        mut self,
        a_return: [f64; 2],
        a_noise: [f64; 3],
        exps: &TuningExponents,
    ) -> Result<Self> {
        let dt = self.dt();
        let ret_scale = (self.k_m as f64 * dt).powf(exps.varpi1);
        let noise_scale = dt.powf(exps.varpi2);
        self.u1 = Threshold::Level(a_return[0] * ret_scale);
        self.u2 = Threshold::Level(a_return[1] * ret_scale);
        self.u11 = Threshold::Level(a_noise[0] * noise_scale);
        self.u12 = Threshold::Level(a_noise[1] * noise_scale);
        self.u22 = Threshold::Level(a_noise[2] * noise_scale);
        self.a_dot11 = self.u11;
        self.a_dot12 = self.u12;
        self.a_dot22 = self.u22;
        self.validate()?;
        Ok(self)
    }
}

/// Window sizes and truncation defaults for `m` observations per day.
pub fn tuning_from_m(
    m: usize,
    overrides: Option<&TuningOverrides>,
    exps: &TuningExponents,
) -> Result<TuningConfig> {
    if m < 100 {
        return Err(Error::Tuning(format!("m must be at least 100, got {m}")));
    }
    let inv_dt = m as f64;
    let floor = |c: f64, e: f64| (c * inv_dt.powf(e)).floor() as usize;
    let cfg = TuningConfig {
        m,
        k_m: floor(exps.c_k, 0.5),
        b_m: floor(exps.c_b, exps.kappa),
        l_m: floor(exps.c_l, exps.varsigma),
        k_prime_m: floor(exps.c_k_prime, exps.tau),
        delta_m: 1.0e-5,
        u1: Threshold::Auto,
        u2: Threshold::Auto,
        u11: Threshold::Auto,
        u12: Threshold::Auto,
        u22: Threshold::Auto,
        a_dot11: Threshold::Auto,
        a_dot12: Threshold::Auto,
        a_dot22: Threshold::Auto,
    };
    match overrides {
        Some(o) => cfg.apply(o),
        None => {
            cfg.validate()?;
            Ok(cfg)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_at_23400() {
        let cfg = tuning_from_m(23400, None, &TuningExponents::default()).unwrap();
        assert_eq!(cfg.k_m, 122);
        assert_eq!(cfg.l_m, 4);
        assert_eq!(cfg.k_prime_m, 3);
        assert_eq!(cfg.delta_m, 1.0e-5);
        let b = (23400f64).powf(0.7).floor() as usize;
        assert_eq!(cfg.b_m, b);
        assert!(2 * cfg.k_m < cfg.b_m);
    }

    #[test]
    fn monotone_in_m() {
        let e = TuningExponents::default();
        let mut prev = tuning_from_m(100, None, &e).ok();
        for m in (200..60000).step_by(97) {
            let Ok(cur) = tuning_from_m(m, None, &e) else {
                continue;
            };
            if let Some(p) = &prev {
                assert!(cur.k_m >= p.k_m && cur.b_m >= p.b_m);
                assert!(cur.l_m >= p.l_m && cur.k_prime_m >= p.k_prime_m);
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn override_violation_reports_values() {
        let o = TuningOverrides {
            l_m: Some(100),
            ..Default::default()
        };
        let err = tuning_from_m(2340, Some(&o), &TuningExponents::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("l_m = 100"), "{msg}");
        assert!(tuning_from_m(50, None, &TuningExponents::default()).is_err());
    }

    #[test]
    fn json_round_trip_and_unknown_keys() {
        let cfg = tuning_from_m(4680, None, &TuningExponents::default())
            .unwrap()
            .with_all_thresholds(Threshold::Infinite);
        let mut cfg = cfg;
        cfg.u1 = Threshold::Level(0.25);
        let s = serde_json::to_string(&cfg).unwrap();
        let back: TuningConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, cfg);
        let mut v: serde_json::Value = serde_json::from_str(&s).unwrap();
        v["bogus"] = serde_json::json!(1);
        assert!(serde_json::from_value::<TuningConfig>(v).is_err());
    }

    #[test]
    fn grid_checks() {
        let g = TimeGrid::new(2340, 3).unwrap();
        assert_eq!(g.path_len(), 3 * 2340 + 1);
        assert_eq!(g.dt() * g.m as f64, 1.0);
        let cfg = tuning_from_m(2340, None, &TuningExponents::default()).unwrap();
        g.check_tuning(&cfg).unwrap();
    }
}
