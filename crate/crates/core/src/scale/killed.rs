//! Deterministic downward drift with position-dependent speed and killing.
//!
//! With `V(a) = ∫_θ^a dy / v(y)` the passage time from `x` to `l` is
//! `V(x) - V(l)`, and the killing accumulated along the way is
//! `∫_0^{V(x)-V(l)} ω(V^{-1}(V(x) - t)) dt = ∫_l^x ω(y) / v(y) dy`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Speed `v > 0` of the downward drift.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum SpeedForm {
    /// `v ≡ speed` on the whole line.
    Constant { speed: f64 },
    /// `v(y) = coef (y - origin)^exponent` on `(origin, ∞)`, `exponent >= 1`.
    Power { coef: f64, origin: f64, exponent: f64 },
}

/// Killing rate `ω >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum KillingForm {
    Constant { rate: f64 },
    /// `ω(y) = intercept + slope y`.
    Affine { intercept: f64, slope: f64 },
    /// `ω(y) = coef (y - origin)^exponent`, only with a power speed.
    Power { coef: f64, exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KilledDrift {
    pub speed: SpeedForm,
    pub killing: KillingForm,
    pub theta: f64,
}

/// `∫_{u1}^{u2} u^e du` for `0 < u1, u2`.
fn power_integral(u1: f64, u2: f64, e: f64) -> f64 {
    if (e + 1.0).abs() < 1e-15 {
        (u2 / u1).ln()
    } else {
        (u2.powf(e + 1.0) - u1.powf(e + 1.0)) / (e + 1.0)
    }
}

impl KilledDrift {
    pub fn constant(speed: f64, rate: f64) -> Self {
        Self {
            speed: SpeedForm::Constant { speed },
            killing: KillingForm::Constant { rate },
            theta: 0.0,
        }
    }

    /// State space `I` as `(lower, ∞)`; `lower = -∞` for constant speed.
    pub fn lower_bound(&self) -> f64 {
        match self.speed {
            SpeedForm::Constant { .. } => f64::NEG_INFINITY,
            SpeedForm::Power { origin, .. } => origin,
        }
    }

    pub fn contains(&self, y: f64) -> bool {
        y.is_finite() && y > self.lower_bound()
    }

    pub fn validate(&self) -> Result<()> {
        match self.speed {
            SpeedForm::Constant { speed } => {
                if !(speed.is_finite() && speed > 0.0) {
                    return Err(Error::Validation("constant speed must be positive".into()));
                }
            }
            SpeedForm::Power { coef, origin, exponent } => {
                if !(coef.is_finite() && coef > 0.0 && origin.is_finite()) {
                    return Err(Error::Validation("power speed needs coef > 0 and finite origin".into()));
                }
                // ∫_{inf I} dy / v must diverge.
                if !(exponent.is_finite() && exponent >= 1.0) {
                    return Err(Error::Validation(
                        "power speed exponent must be >= 1 so the bottom of the state space is never reached".into(),
                    ));
                }
            }
        }
        let lower = self.lower_bound();
        match self.killing {
            KillingForm::Constant { rate } => {
                if !(rate.is_finite() && rate >= 0.0) {
                    return Err(Error::Validation("killing rate must be nonnegative".into()));
                }
            }
            KillingForm::Affine { intercept, slope } => {
                let ok = if lower == f64::NEG_INFINITY {
                    slope == 0.0 && intercept >= 0.0
                } else {
                    slope >= 0.0 && intercept + slope * lower >= 0.0
                };
                if !(ok && intercept.is_finite() && slope.is_finite()) {
                    return Err(Error::Validation("affine killing rate is negative somewhere on the state space".into()));
                }
            }
            KillingForm::Power { coef, exponent } => {
                if lower == f64::NEG_INFINITY {
                    return Err(Error::Validation("power killing requires a power speed".into()));
                }
                if !(coef.is_finite() && coef >= 0.0 && exponent.is_finite()) {
                    return Err(Error::Validation("power killing needs coef >= 0".into()));
                }
            }
        }
        if !self.contains(self.theta) {
            return Err(Error::Validation(format!(
                "theta = {} lies outside the state space",
                self.theta
            )));
        }
        Ok(())
    }

    fn check(&self, y: f64) -> Result<()> {
        if self.contains(y) {
            Ok(())
        } else {
            Err(Error::Domain(format!("{y} lies outside the state space (> {})", self.lower_bound())))
        }
    }

    /// `V(a) = ∫_θ^a dy / v(y)`.
    pub fn clock(&self, a: f64) -> Result<f64> {
        self.check(a)?;
        Ok(match self.speed {
            SpeedForm::Constant { speed } => (a - self.theta) / speed,
            SpeedForm::Power { coef, origin, exponent } => {
                power_integral(self.theta - origin, a - origin, -exponent) / coef
            }
        })
    }

    /// `V^{-1}(t)`; errors when `t` is beyond the range of `V`.
    pub fn clock_inverse(&self, t: f64) -> Result<f64> {
        match self.speed {
            SpeedForm::Constant { speed } => Ok(self.theta + speed * t),
            SpeedForm::Power { coef, origin, exponent } => {
                let u1 = self.theta - origin;
                if (exponent - 1.0).abs() < 1e-15 {
                    Ok(origin + u1 * (coef * t).exp())
                } else {
                    let e = 1.0 - exponent;
                    let base = u1.powf(e) + e * coef * t;
                    if base <= 0.0 {
                        return Err(Error::Domain(format!("{t} is beyond the range of V")));
                    }
                    Ok(origin + base.powf(1.0 / e))
                }
            }
        }
    }

    /// `∫_l^x ω(y)/v(y) dy`.
    pub fn killing_integral(&self, l: f64, x: f64) -> Result<f64> {
        self.check(l)?;
        self.check(x)?;
        Ok(match (self.speed, self.killing) {
            (SpeedForm::Constant { speed }, KillingForm::Constant { rate }) => rate * (x - l) / speed,
            (SpeedForm::Constant { speed }, KillingForm::Affine { intercept, slope }) => {
                (intercept * (x - l) + 0.5 * slope * (x * x - l * l)) / speed
            }
            (SpeedForm::Constant { .. }, KillingForm::Power { .. }) => {
                return Err(Error::Validation("power killing requires a power speed".into()))
            }
            (SpeedForm::Power { coef, origin, exponent }, killing) => {
                let (u1, u2) = (l - origin, x - origin);
                let k = exponent;
                let val = match killing {
                    KillingForm::Constant { rate } => rate * power_integral(u1, u2, -k),
                    KillingForm::Affine { intercept, slope } => {
                        (intercept + slope * origin) * power_integral(u1, u2, -k)
                            + slope * power_integral(u1, u2, 1.0 - k)
                    }
                    KillingForm::Power { coef: r, exponent: m } => r * power_integral(u1, u2, m - k),
                };
                val / coef
            }
        })
    }

    pub fn killing_rate(&self, y: f64) -> f64 {
        match self.killing {
            KillingForm::Constant { rate } => rate,
            KillingForm::Affine { intercept, slope } => intercept + slope * y,
            KillingForm::Power { coef, exponent } => coef * (y - self.lower_bound()).powf(exponent),
        }
    }

    /// `log Φ_q(x) = -∫_θ^x ω/v - q V(x)`.
    pub fn log_scale(&self, q: f64, x: f64) -> Result<f64> {
        let kill = if x >= self.theta {
            self.killing_integral(self.theta, x)?
        } else {
            -self.killing_integral(x, self.theta)?
        };
        Ok(-kill - q * self.clock(x)?)
    }

    /// Exact log-transform `-∫_l^x ω/v - q (V(x) - V(l))`.
    pub fn log_transform(&self, q: f64, x: f64, l: f64) -> Result<f64> {
        let passage = self.clock(x)? - self.clock(l)?;
        Ok(-self.killing_integral(l, x)? - q * passage)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, Tolerance};

    #[test]
    fn constant_family() {
        let k = KilledDrift::constant(1.0, 0.3);
        let v = k.log_transform(0.5, 2.0, -1.0).unwrap().exp();
        assert!((v - (-(0.3f64 + 0.5) * 3.0).exp()).abs() < 1e-15);
        let free = KilledDrift::constant(1.0, 0.0);
        assert_eq!(free.log_transform(0.0, 5.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn linear_speed_is_logarithmic_clock() {
        let k = KilledDrift {
            speed: SpeedForm::Power { coef: 1.0, origin: 0.0, exponent: 1.0 },
            killing: KillingForm::Constant { rate: 0.0 },
            theta: 1.0,
        };
        k.validate().unwrap();
        let l = 0.7;
        let x = std::f64::consts::E * l;
        let v = k.log_transform(1.0, x, l).unwrap().exp();
        assert!((v - (-1f64).exp()).abs() < 1e-15);
        assert!((k.clock_inverse(k.clock(x).unwrap()).unwrap() - x).abs() < 1e-14);
    }

    #[test]
    fn killing_integral_matches_time_domain_form() {
        // Integrate ω(V^{-1}(V(x) - t)) over t directly.
        let cases = [
            KilledDrift {
                speed: SpeedForm::Power { coef: 0.5, origin: -1.0, exponent: 2.0 },
                killing: KillingForm::Affine { intercept: 0.5, slope: 0.3 },
                theta: 0.5,
            },
            KilledDrift {
                speed: SpeedForm::Power { coef: 2.0, origin: 0.0, exponent: 1.0 },
                killing: KillingForm::Power { coef: 1.5, exponent: 0.5 },
                theta: 2.0,
            },
            KilledDrift {
                speed: SpeedForm::Constant { speed: 3.0 },
                killing: KillingForm::Constant { rate: 0.7 },
                theta: 0.0,
            },
        ];
        for k in cases {
            k.validate().unwrap();
            let (l, x) = (0.4, 3.0);
            let vx = k.clock(x).unwrap();
            let dur = vx - k.clock(l).unwrap();
            let f = |t: f64| k.killing_rate(k.clock_inverse(vx - t).unwrap());
            let oracle = integrate(&f, 0.0, dur, Tolerance::default()).unwrap().value;
            let closed = k.killing_integral(l, x).unwrap();
            assert!((oracle - closed).abs() < 1e-10 * closed.max(1.0), "{k:?}: {oracle} vs {closed}");
        }
    }

    #[test]
    fn rejects_bad_forms() {
        let finite_bottom = KilledDrift {
            speed: SpeedForm::Power { coef: 1.0, origin: 0.0, exponent: 0.5 },
            killing: KillingForm::Constant { rate: 0.0 },
            theta: 1.0,
        };
        assert!(finite_bottom.validate().is_err());
        let neg = KilledDrift {
            speed: SpeedForm::Constant { speed: 1.0 },
            killing: KillingForm::Affine { intercept: 1.0, slope: 1.0 },
            theta: 0.0,
        };
        assert!(neg.validate().is_err());
        let k = KilledDrift {
            speed: SpeedForm::Power { coef: 1.0, origin: 0.0, exponent: 1.0 },
            killing: KillingForm::Constant { rate: 0.0 },
            theta: 1.0,
        };
        assert!(matches!(k.clock(-1.0), Err(Error::Domain(_))));
    }
}
