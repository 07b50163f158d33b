//! Power-series scale functions for Lamperti-transformed Lévy processes.
//!
//! `Φ_q(x) = Σ_k a_k q^k exp(-(z0 + α k) x)` with `z0 = ψ^{-1}(p)` and
//! `a_k = 1 / Π_{l=1}^k (ψ(z0 + l α) - p)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::scale::ScaleEval;

const MAX_TERMS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaleSeries {
    pub z0: f64,
    pub alpha: f64,
    pub coeffs: Vec<f64>,
    /// Natural logarithms of `coeffs`; finite even where `coeffs` underflow.
    pub log_coeffs: Vec<f64>,
}

impl ScaleSeries {
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientCheck {
    /// `min a_k k^2 / a_{k-1}` over the upper half of the computed range.
    pub min_lower_ratio: f64,
    /// `max k a_k / a_{k-1}` over the same range.
    pub max_upper_ratio: f64,
    /// `k a_k / a_{k-1}` at the two ends of the range.
    pub upper_ratio_start: f64,
    pub upper_ratio_end: f64,
    pub passed: bool,
}

/// Finite-range proxy for `liminf a_k k²/a_{k-1} > 0` and
/// `limsup k a_k / a_{k-1} < ∞`: the first ratio stays positive and the second
/// does not grow across `k ∈ [K/2, K]`.
pub fn coefficient_condition(series: &ScaleSeries) -> CoefficientCheck {
    let k_max = series.order();
    let k_min = (k_max / 2).max(1);
    let mut min_lower = f64::INFINITY;
    let mut max_upper: f64 = 0.0;
    let mut start = f64::NAN;
    let mut end = f64::NAN;
    for k in k_min..=k_max {
        let log_ratio = series.log_coeffs[k] - series.log_coeffs[k - 1];
        let kf = k as f64;
        let lower = (log_ratio + 2.0 * kf.ln()).exp();
        let upper = (log_ratio + kf.ln()).exp();
        min_lower = min_lower.min(lower);
        max_upper = max_upper.max(upper);
        if k == k_min {
            start = upper;
        }
        end = upper;
    }
    let passed = min_lower > 0.0
        && max_upper.is_finite()
        && end <= start * (1.0 + 1e-9);
    CoefficientCheck {
        min_lower_ratio: min_lower,
        max_upper_ratio: max_upper,
        upper_ratio_start: start,
        upper_ratio_end: end,
        passed,
    }
}

#[derive(Debug, Clone)]
pub struct PssmpScale {
    exp: Exponent,
    alpha: f64,
    z0: f64,
}

impl PssmpScale {
    pub fn new(exp: Exponent, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Validation(format!("self-similarity index must be positive, got {alpha}")));
        }
        let z0 = exp.inverse(exp.killing())?.z;
        Ok(Self { exp, alpha, z0 })
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn exponent(&self) -> &Exponent {
        &self.exp
    }

    /// `ψ(z0 + k α) - p`, computed as an increment from the root.
    fn factor(&self, k: usize) -> Result<f64> {
        let f = self.exp.psi_increment(self.z0, k as f64 * self.alpha);
        if !(f > 0.0) {
            return Err(Error::Degenerate(format!(
                "series factor psi(z0 + {k} alpha) - p = {f} is not positive"
            )));
        }
        Ok(f)
    }

    pub fn coefficients(&self, order: usize) -> Result<ScaleSeries> {
        let mut log_coeffs = Vec::with_capacity(order + 1);
        log_coeffs.push(0.0);
        for k in 1..=order {
            let prev = log_coeffs[k - 1];
            log_coeffs.push(prev - self.factor(k)?.ln());
        }
        Ok(ScaleSeries {
            z0: self.z0,
            alpha: self.alpha,
            coeffs: log_coeffs.iter().map(|l| l.exp()).collect(),
            log_coeffs,
        })
    }

    /// Sums the series in log space. Truncates once the current term is below
    /// `1e-16` of the partial sum and the geometric bound on the remainder
    /// (term ratios decrease because the factors increase) is below `1e-12`.
    pub fn scale(&self, q: f64, x: f64) -> Result<ScaleEval> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::Domain(format!("q must be finite and >= 0, got {q}")));
        }
        if !x.is_finite() {
            return Err(Error::Domain(format!("x must be finite, got {x}")));
        }
        let base = -self.z0 * x;
        if q == 0.0 {
            return Ok(ScaleEval::from_log(base, 0.0, 1));
        }
        // log t_k - base = log a_k + k (log q - α x)
        let step = q.ln() - self.alpha * x;
        let mut log_term = 0.0;
        // running sum = exp(shift) * acc
        let mut shift = 0.0;
        let mut acc = 1.0;
        for k in 1..MAX_TERMS {
            let prev_log = log_term;
            log_term += step - self.factor(k)?.ln();
            if log_term > shift {
                acc = acc * (shift - log_term).exp() + 1.0;
                shift = log_term;
            } else {
                acc += (log_term - shift).exp();
            }
            let rel_term = (log_term - shift).exp() / acc;
            let ratio = (log_term - prev_log).exp();
            if ratio < 1.0 && rel_term <= 1e-16 {
                let tail = rel_term * ratio / (1.0 - ratio);
                if tail < 1e-12 {
                    let log_value = base + shift + acc.ln();
                    let value = log_value.exp();
                    return Ok(ScaleEval::from_log(log_value, tail * value, k + 1));
                }
            }
        }
        Err(Error::nonconvergence("scale series truncation", MAX_TERMS))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::LevyTriplet;

    fn bm_scale() -> PssmpScale {
        PssmpScale::new(Exponent::new(&LevyTriplet::brownian(0.0, 1.0)).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn brownian_coefficients() {
        let s = bm_scale().coefficients(3).unwrap();
        let expected = [1.0, 2.0, 1.0, 2.0 / 9.0];
        for (a, b) in s.coeffs.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        let s = bm_scale().coefficients(40).unwrap();
        for k in 1..=40 {
            let r = s.coeffs[k] * (k * k) as f64 / s.coeffs[k - 1];
            assert!((r - 2.0).abs() < 1e-12);
        }
        assert!(coefficient_condition(&s).passed);
    }

    #[test]
    fn series_at_zero_matches_brute_force() {
        // Σ 2^k / (k!)^2 summed directly
        let mut term = 1.0f64;
        let mut sum = 1.0f64;
        for k in 1..60 {
            term *= 2.0 / (k * k) as f64;
            sum += term;
        }
        let v = bm_scale().scale(1.0, 0.0).unwrap();
        assert!((v.value - sum).abs() < 1e-14 * sum);
        // I_0(2 sqrt 2)
        assert!((v.value - 4.252_350_879_502_625).abs() < 1e-13);
        assert!(v.abs_error_bound <= 1e-8 * v.value);
    }

    #[test]
    fn series_matches_long_direct_sum() {
        let x = 5.0;
        let mut log_a = 0.0f64;
        let mut sum = 1.0f64;
        for k in 1..200 {
            log_a += (2.0 / (k * k) as f64).ln();
            sum += (log_a - k as f64 * x).exp();
        }
        let v = bm_scale().scale(1.0, x).unwrap();
        assert!((v.value - sum).abs() < 1e-12 * sum);
    }

    #[test]
    fn q_zero_is_root_exponential() {
        let t = LevyTriplet::brownian(1.0, 1.0).with_killing(0.5);
        let s = PssmpScale::new(Exponent::new(&t).unwrap(), 0.7).unwrap();
        let z0 = s.z0();
        assert!(z0 > 0.0);
        let v = s.scale(0.0, 1.3).unwrap();
        assert!((v.value - (-z0 * 1.3).exp()).abs() < 1e-15);
    }

    #[test]
    fn drift_only_is_exponential_of_exponential() {
        // psi(z) = z, alpha = 1: Φ_q(x) = exp(q e^{-x})
        let s = PssmpScale::new(Exponent::new(&LevyTriplet::brownian(-1.0, 0.0)).unwrap(), 1.0).unwrap();
        for &(q, x) in &[(1.0, 0.0), (3.0, -1.0), (0.2, 2.0)] {
            let v = s.scale(q, x).unwrap();
            let exact = q * (-x).exp();
            assert!((v.log_value - exact).abs() < 1e-13 * exact.max(1.0));
        }
        let check = coefficient_condition(&s.coefficients(30).unwrap());
        assert!(check.passed);
        assert!((check.max_upper_ratio - 1.0).abs() < 1e-12);
    }
}
