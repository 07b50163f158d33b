//! Scale functions of continuous-state branching processes with branching
//! mechanism `ψ - p`.
//!
//! All integrals over `z ∈ (z0, ∞)`, `z0 = ψ^{-1}(p)`, are taken in the variable
//! `s = ln(z - z0)`. The inner integrand `1/(ψ - p)` becomes
//! `h(s) = e^s / (ψ(z0 + e^s) - p)`, which is bounded as `s → -∞` whenever
//! `ψ'(z0) > 0` and decays like `e^{-s}` at `+∞` when `σ² > 0`.
//!
//! The primitive of `h` does not depend on `q`, so it is tabulated once per
//! specification on an adaptive panel grid and scaled by `q` at evaluation time.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::Exponent;
use crate::quadrature::{gk15, integrate_with_breakpoints, Tolerance};
use crate::scale::ScaleEval;

const S_LO: f64 = -46.0;
const S_HI: f64 = 46.0;
const PANEL: f64 = 0.5;
const INNER_REL_TOL: f64 = 1e-15;
const MAX_DEPTH: usize = 24;
/// Integrand values below `e^{-CUTOFF}` of the maximum are dropped.
const CUTOFF: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsbpVariant {
    /// `∫^∞ 1/ψ = ∞`: zero is never reached.
    Recurrent,
    /// `∫^∞ 1/ψ < ∞`: zero is hit with positive probability.
    Extinct,
}

impl CsbpVariant {
    /// Classification for finite-activity exponents: `ψ(z) = σ² z²/2 + O(z)`, so
    /// `∫^∞ 1/ψ` diverges exactly when `σ² = 0`.
    pub fn of(exp: &Exponent) -> Self {
        if exp.sigma2() > 0.0 {
            CsbpVariant::Extinct
        } else {
            CsbpVariant::Recurrent
        }
    }
}

/// Which of the two equivalent recurrent-case integrals to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecurrentForm {
    /// `∫ (ψ(z) - p)^{-1} exp(-x z + q H(z)) dz`, valid for `q > 0`.
    Weighted,
    /// `x ∫ exp(-x z + q H(z)) dz`, valid for `q >= 0`.
    Prefactor,
}

#[derive(Debug, Clone)]
struct InnerGrid {
    nodes: Vec<f64>,
    /// `∫_{s_anchor}^{node_i} h`.
    from_anchor: Vec<f64>,
    /// `∫_{node_i}^∞ h`, including the analytic remainder beyond the grid.
    to_infinity: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct CsbpScale {
    exp: Exponent,
    variant: CsbpVariant,
    z0: f64,
    theta: f64,
    grid: InnerGrid,
}

impl CsbpScale {
    /// `theta` is only used by the recurrent variant and defaults to `z0 + 1`.
    pub fn new(exp: Exponent, variant: CsbpVariant, theta: Option<f64>) -> Result<Self> {
        let actual = CsbpVariant::of(&exp);
        if actual != variant {
            return Err(Error::Validation(format!(
                "variant mismatch: exponent with sigma2 = {} is {:?}, spec says {:?}",
                exp.sigma2(),
                actual,
                variant
            )));
        }
        let z0 = exp.inverse(exp.killing())?.z;
        let theta = theta.unwrap_or(z0 + 1.0);
        if variant == CsbpVariant::Recurrent && !(theta > z0 && theta.is_finite()) {
            return Err(Error::Validation(format!(
                "theta = {theta} must exceed psi^-1(p) = {z0}"
            )));
        }
        let anchor = match variant {
            CsbpVariant::Recurrent => (theta - z0).ln(),
            CsbpVariant::Extinct => 0.0,
        };
        if !(S_LO + 1.0..=S_HI - 1.0).contains(&anchor) {
            return Err(Error::Validation(format!("theta - z0 = {} is out of range", theta - z0)));
        }
        let mut this = Self {
            exp,
            variant,
            z0,
            theta,
            grid: InnerGrid {
                nodes: Vec::new(),
                from_anchor: Vec::new(),
                to_infinity: Vec::new(),
            },
        };
        this.grid = this.build_grid(anchor)?;
        Ok(this)
    }

    pub fn z0(&self) -> f64 {
        self.z0
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn variant(&self) -> CsbpVariant {
        self.variant
    }

    pub fn exponent(&self) -> &Exponent {
        &self.exp
    }

    /// `ψ(z0 + u) - p`.
    pub fn mechanism_above_root(&self, u: f64) -> f64 {
        self.exp.psi_increment(self.z0, u)
    }

    fn h(&self, s: f64) -> f64 {
        let u = s.exp();
        u / self.mechanism_above_root(u)
    }

    fn build_grid(&self, anchor: f64) -> Result<InnerGrid> {
        let k_lo = ((S_LO - anchor) / PANEL).ceil() as i64;
        let k_hi = ((S_HI - anchor) / PANEL).floor() as i64;
        let coarse: Vec<f64> = (k_lo..=k_hi).map(|k| anchor + k as f64 * PANEL).collect();
        let h = |s: f64| self.h(s);

        let mut nodes = vec![coarse[0]];
        let mut pieces = Vec::new();
        let mut anchor_index = 0;
        for w in coarse.windows(2) {
            refine(&h, w[0], w[1], 0, &mut nodes, &mut pieces)?;
            if w[1] == anchor {
                anchor_index = nodes.len() - 1;
            }
        }
        if coarse[0] == anchor {
            anchor_index = 0;
        }
        if nodes.iter().any(|&s| !(self.h(s) > 0.0 && self.h(s).is_finite())) {
            return Err(Error::Degenerate("psi - p is not positive above its root".into()));
        }

        let n = nodes.len();
        let mut from_anchor = vec![0.0; n];
        for i in anchor_index + 1..n {
            from_anchor[i] = from_anchor[i - 1] + pieces[i - 1];
        }
        for i in (0..anchor_index).rev() {
            from_anchor[i] = from_anchor[i + 1] - pieces[i];
        }

        // Beyond the grid ψ(z) - p ~ σ² z²/2, so ∫_{z_hi}^∞ dz/(ψ - p) ≈ 2/(σ² z_hi).
        let remainder = if self.exp.sigma2() > 0.0 {
            2.0 / (self.exp.sigma2() * nodes[n - 1].exp())
        } else {
            f64::INFINITY
        };
        let mut to_infinity = vec![remainder; n];
        for i in (0..n - 1).rev() {
            to_infinity[i] = to_infinity[i + 1] + pieces[i];
        }
        Ok(InnerGrid {
            nodes,
            from_anchor,
            to_infinity,
        })
    }

    fn panel_of(&self, s: f64) -> usize {
        let nodes = &self.grid.nodes;
        let i = nodes.partition_point(|&v| v <= s);
        i.saturating_sub(1).min(nodes.len() - 2)
    }

    /// `H(s) = ∫_θ^{z0 + e^s} dz / (ψ(z) - p)`.
    fn inner_from_theta(&self, s: f64) -> f64 {
        let i = self.panel_of(s);
        let h = |t: f64| self.h(t);
        self.grid.from_anchor[i] + gk15(&h, self.grid.nodes[i], s).value
    }

    /// `J(s) = ∫_{z0 + e^s}^∞ dz / (ψ(z) - p)`.
    fn inner_to_infinity(&self, s: f64) -> f64 {
        let i = self.panel_of(s);
        let h = |t: f64| self.h(t);
        self.grid.to_infinity[i + 1] + gk15(&h, s, self.grid.nodes[i + 1]).value
    }

    /// Public for diagnostics: `∫_θ^z 1/(ψ - p)` for `z > z0`.
    pub fn inner_integral(&self, z: f64) -> Result<f64> {
        if !(z > self.z0) {
            return Err(Error::Domain(format!("inner integral needs z > z0 = {}", self.z0)));
        }
        let s = (z - self.z0).ln();
        let (lo, hi) = (self.grid.nodes[0], *self.grid.nodes.last().unwrap());
        if !(lo..=hi).contains(&s) {
            return Err(Error::Domain(format!("z = {z} is outside the tabulated range")));
        }
        Ok(match self.variant {
            CsbpVariant::Recurrent => self.inner_from_theta(s),
            CsbpVariant::Extinct => -self.inner_to_infinity(s),
        })
    }

    /// Log-integrand in `s`, without the common `e^{-x z0}` factor.
    fn log_integrand(&self, form: Option<RecurrentForm>, q: f64, x: f64, s: f64, node: Option<usize>) -> f64 {
        let exp_term = -x * s.exp();
        match (self.variant, form) {
            (CsbpVariant::Recurrent, Some(RecurrentForm::Prefactor)) => {
                let hq = if q == 0.0 {
                    0.0
                } else {
                    q * node.map_or_else(|| self.inner_from_theta(s), |i| self.grid.from_anchor[i])
                };
                s + exp_term + hq
            }
            (CsbpVariant::Recurrent, _) => {
                let inner = node.map_or_else(|| self.inner_from_theta(s), |i| self.grid.from_anchor[i]);
                self.h(s).ln() + exp_term + q * inner
            }
            (CsbpVariant::Extinct, _) => {
                let inner = node.map_or_else(|| self.inner_to_infinity(s), |i| self.grid.to_infinity[i]);
                self.h(s).ln() + exp_term - q * inner
            }
        }
    }

    fn integrate_log(&self, form: Option<RecurrentForm>, q: f64, x: f64) -> Result<(f64, f64, usize)> {
        let nodes = &self.grid.nodes;
        let at_nodes: Vec<f64> = (0..nodes.len())
            .map(|i| self.log_integrand(form, q, x, nodes[i], Some(i)))
            .collect();
        if at_nodes.iter().any(|v| v.is_nan()) {
            return Err(Error::nonconvergence("branching scale integrand (NaN)", 0));
        }
        let peak = at_nodes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !peak.is_finite() {
            return Err(Error::nonconvergence("branching scale integrand (no finite mass)", 0));
        }
        let significant: Vec<usize> = (0..nodes.len()).filter(|&i| at_nodes[i] - peak > -CUTOFF).collect();
        let lo = significant[0].saturating_sub(1);
        let hi = (significant[significant.len() - 1] + 1).min(nodes.len() - 1);

        let f = |s: f64| (self.log_integrand(form, q, x, s, None) - peak).exp();
        let quad = integrate_with_breakpoints(
            &f,
            &nodes[lo..=hi],
            Tolerance {
                abs: 1e-15,
                rel: 1e-12,
                max_subdivisions: 4000,
            },
        )?;
        let mut total = quad.value;
        let mut err = quad.abs_error;

        // Exponential tails beyond the grid, from the log-slope at the edge.
        let delta = 1e-4;
        if lo == 0 && at_nodes[0] - peak > -CUTOFF - 10.0 {
            let s0 = nodes[0];
            let slope = (self.log_integrand(form, q, x, s0 + delta, None) - at_nodes[0]) / delta;
            if !(slope > 0.0) {
                return Err(Error::Domain("integral diverges at the root of psi - p (q = 0?)".into()));
            }
            let tail = (at_nodes[0] - peak).exp() / slope;
            total += tail;
            err += 1e-6 * tail;
        }
        let last = nodes.len() - 1;
        if hi == last && at_nodes[last] - peak > -CUTOFF - 10.0 {
            let s1 = nodes[last];
            let slope = -(at_nodes[last] - self.log_integrand(form, q, x, s1 - delta, None)) / delta;
            if !(slope > 0.0) {
                return Err(Error::Domain("integral diverges at infinity".into()));
            }
            let tail = (at_nodes[last] - peak).exp() / slope;
            total += tail;
            err += 1e-6 * tail;
        }
        if !(total > 0.0) {
            return Err(Error::nonconvergence("branching scale integral", quad.evaluations));
        }
        Ok((peak + total.ln(), err / total, quad.evaluations))
    }

    /// Recurrent variant, either integral form.
    pub fn scale_recurrent(&self, form: RecurrentForm, q: f64, x: f64) -> Result<ScaleEval> {
        if self.variant != CsbpVariant::Recurrent {
            return Err(Error::Validation("variant mismatch: spec is not recurrent".into()));
        }
        check_q(q)?;
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::Domain(format!("recurrent state space is (0, ∞), got x = {x}")));
        }
        if form == RecurrentForm::Weighted && q == 0.0 {
            return Err(Error::Domain("the weighted form needs q > 0".into()));
        }
        let (log_int, rel_err, nodes) = self.integrate_log(Some(form), q, x)?;
        let mut log_value = -x * self.z0 + log_int;
        if form == RecurrentForm::Prefactor {
            log_value += x.ln();
        }
        Ok(ScaleEval::from_log(log_value, rel_err * log_value.exp(), nodes))
    }

    /// Extinct variant, `q > 0`.
    pub fn scale_extinct(&self, q: f64, x: f64) -> Result<ScaleEval> {
        if self.variant != CsbpVariant::Extinct {
            return Err(Error::Validation("variant mismatch: spec is not extinct".into()));
        }
        check_q(q)?;
        if !(q > 0.0) {
            return Err(Error::Domain("extinct-variant integral needs q > 0".into()));
        }
        if !(x >= 0.0 && x.is_finite()) {
            return Err(Error::Domain(format!("extinct state space is [0, ∞), got x = {x}")));
        }
        let (log_int, rel_err, nodes) = self.integrate_log(None, q, x)?;
        let log_value = -x * self.z0 + log_int;
        Ok(ScaleEval::from_log(log_value, rel_err * log_value.exp(), nodes))
    }

    /// Dispatch used by transforms. At `q = 0` both variants reduce to
    /// `x ∫ e^{-x z} dz = e^{-x z0}`.
    pub fn scale(&self, q: f64, x: f64) -> Result<ScaleEval> {
        match self.variant {
            CsbpVariant::Recurrent => self.scale_recurrent(RecurrentForm::Prefactor, q, x),
            CsbpVariant::Extinct => {
                if q == 0.0 {
                    if !(x >= 0.0 && x.is_finite()) {
                        return Err(Error::Domain(format!("extinct state space is [0, ∞), got x = {x}")));
                    }
                    Ok(ScaleEval::from_log(-x * self.z0, 0.0, 0))
                } else {
                    self.scale_extinct(q, x)
                }
            }
        }
    }
}

fn check_q(q: f64) -> Result<()> {
    if q >= 0.0 && q.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("q must be finite and >= 0, got {q}")))
    }
}

fn refine<F: Fn(f64) -> f64>(
    h: &F,
    a: f64,
    b: f64,
    depth: usize,
    nodes: &mut Vec<f64>,
    pieces: &mut Vec<f64>,
) -> Result<()> {
    let r = gk15(h, a, b);
    if !r.value.is_finite() {
        return Err(Error::Degenerate("1/(psi - p) is not finite on the grid".into()));
    }
    if r.abs_error <= INNER_REL_TOL * r.value.abs() || depth >= MAX_DEPTH {
        nodes.push(b);
        pieces.push(r.value);
        return Ok(());
    }
    let mid = 0.5 * (a + b);
    refine(h, a, mid, depth + 1, nodes, pieces)?;
    refine(h, mid, b, depth + 1, nodes, pieces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::{JumpMeasureSpec, LevyTriplet};

    fn linear(b: f64, p: f64) -> CsbpScale {
        let e = Exponent::new(&LevyTriplet::brownian(-b, 0.0).with_killing(p)).unwrap();
        CsbpScale::new(e, CsbpVariant::Recurrent, Some(p / b + 1.0)).unwrap()
    }

    fn feller() -> CsbpScale {
        let e = Exponent::new(&LevyTriplet::brownian(0.0, 1.0)).unwrap();
        CsbpScale::new(e, CsbpVariant::Extinct, None).unwrap()
    }

    /// ln Γ via the Lanczos approximation (g = 7, n = 9).
    fn ln_gamma(x: f64) -> f64 {
        const C: [f64; 9] = [
            0.999_999_999_999_809_9,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_1,
            -176.615_029_162_140_6,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_572e-6,
            1.505_632_735_149_311_6e-7,
        ];
        let x = x - 1.0;
        let mut a = C[0];
        let t = x + 7.5;
        for (i, c) in C.iter().enumerate().skip(1) {
            a += c / (x + i as f64);
        }
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
    }

    #[test]
    fn linear_mechanism_closed_form() {
        // ψ = b z, θ = 1: Φ_q(x) = Γ(1 + q/b) x^{-q/b}
        for &(b, q, x) in &[(1.0, 1.0, 2.0), (2.0, 0.5, 0.3), (0.5, 3.0, 1.7)] {
            let s = linear(b, 0.0);
            let v = s.scale_recurrent(RecurrentForm::Prefactor, q, x).unwrap();
            let exact = ln_gamma(1.0 + q / b) - (q / b) * x.ln();
            assert!((v.log_value - exact).abs() < 1e-10, "{b} {q} {x}: {} vs {exact}", v.log_value);
            assert!(v.abs_error_bound <= 1e-8 * v.value);
        }
    }

    #[test]
    fn linear_mechanism_with_killing() {
        // ratio e^{-(x - l) p/b} (x/l)^{-q/b}
        let (b, p, q, x, l) = (1.5, 0.4, 0.8, 2.0, 0.5);
        let s = linear(b, p);
        let r = s.scale(q, x).unwrap().log_value - s.scale(q, l).unwrap().log_value;
        let exact = -(x - l) * p / b - (q / b) * (x / l).ln();
        assert!((r - exact).abs() < 1e-10);
    }

    #[test]
    fn q_zero_prefactor_is_exponential() {
        let s = linear(1.0, 0.5);
        let v = s.scale(0.0, 1.3).unwrap();
        assert!((v.log_value + 1.3 * s.z0()).abs() < 1e-11);
    }

    #[test]
    fn forms_agree_with_jumps() {
        let t = LevyTriplet::brownian(-2.0, 0.0)
            .with_jumps(JumpMeasureSpec::exp_single(1.0, 1.5))
            .with_killing(0.3);
        let e = Exponent::new(&t).unwrap();
        let s = CsbpScale::new(e, CsbpVariant::Recurrent, None).unwrap();
        for &(q, x, l) in &[(0.5, 2.0, 1.0), (2.0, 3.0, 0.2)] {
            let a = s.scale_recurrent(RecurrentForm::Weighted, q, x).unwrap().log_value
                - s.scale_recurrent(RecurrentForm::Weighted, q, l).unwrap().log_value;
            let b = s.scale_recurrent(RecurrentForm::Prefactor, q, x).unwrap().log_value
                - s.scale_recurrent(RecurrentForm::Prefactor, q, l).unwrap().log_value;
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn feller_at_zero() {
        // Φ_q(0) = ∫ (2/z²) e^{-2q/z} dz = 1/q
        let s = feller();
        for &q in &[0.5, 1.0, 4.0] {
            let v = s.scale_extinct(q, 0.0).unwrap();
            assert!((v.value * q - 1.0).abs() < 1e-10, "{q}: {}", v.value);
        }
    }

    #[test]
    fn variant_mismatch_rejected() {
        let e = Exponent::new(&LevyTriplet::brownian(0.0, 1.0)).unwrap();
        assert!(matches!(
            CsbpScale::new(e, CsbpVariant::Recurrent, Some(1.0)),
            Err(Error::Validation(_))
        ));
        assert!(feller().scale_recurrent(RecurrentForm::Prefactor, 1.0, 1.0).is_err());
        assert!(linear(1.0, 0.0).scale_extinct(1.0, 1.0).is_err());
        assert!(linear(1.0, 0.0).scale_recurrent(RecurrentForm::Weighted, 0.0, 1.0).is_err());
    }

    #[test]
    fn inner_integral_linear() {
        // ∫_θ^z dw/(b w) = ln(z/θ)/b
        let s = linear(2.0, 0.0);
        let v = s.inner_integral(5.0).unwrap();
        assert!((v - (5.0f64).ln() / 2.0).abs() < 1e-13);
    }
}
