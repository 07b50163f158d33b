//! Laplace exponents of spectrally positive Lévy processes with
//! finite-activity jumps, and their right-continuous inverses.
//!
//! With drift `gamma`, Gaussian coefficient `sigma2` and jump measure `m`,
//!
//! ```text
//! psi(z) = -gamma z + sigma2 z^2 / 2 + ∫ (e^{-zh} + z h 1{h <= 1} - 1) m(dh),   z >= 0,
//! ```
//!
//! so that `E_0[exp(-z X_1)] = exp(psi(z))`. Killing at rate `p` is kept
//! separate and enters callers as `psi - p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpComponent {
    /// Arrival rate of this jump type.
    pub rate: f64,
    /// Exponential parameter of the jump size (mean size `1/scale`).
    pub scale: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub rate: f64,
    pub size: f64,
}

/// Finite-activity jump measures on `(0, ∞)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JumpMeasureSpec {
    #[default]
    None,
    /// Density `Σ rate_i scale_i exp(-scale_i h)`.
    ExpMixture { components: Vec<ExpComponent> },
    /// `Σ rate_i δ_{size_i}`.
    Atoms { atoms: Vec<Atom> },
}

impl JumpMeasureSpec {
    pub fn exp_single(rate: f64, scale: f64) -> Self {
        JumpMeasureSpec::ExpMixture {
            components: vec![ExpComponent { rate, scale }],
        }
    }

    pub fn atom(rate: f64, size: f64) -> Self {
        JumpMeasureSpec::Atoms {
            atoms: vec![Atom { rate, size }],
        }
    }

    /// Total mass `m(0, ∞)`.
    pub fn total_rate(&self) -> f64 {
        match self {
            JumpMeasureSpec::None => 0.0,
            JumpMeasureSpec::ExpMixture { components } => components.iter().map(|c| c.rate).sum(),
            JumpMeasureSpec::Atoms { atoms } => atoms.iter().map(|a| a.rate).sum(),
        }
    }

    /// `∫_(0,1] h m(dh)`, the compensator folded into the linear term.
    pub fn small_jump_mean(&self) -> f64 {
        match self {
            JumpMeasureSpec::None => 0.0,
            JumpMeasureSpec::ExpMixture { components } => components
                .iter()
                .map(|c| {
                    let r = c.scale;
                    // ∫_0^1 h r e^{-rh} dh = (1 - e^{-r}(1 + r)) / r
                    c.rate * (-(-r).exp_m1() - r * (-r).exp()) / r
                })
                .sum(),
            JumpMeasureSpec::Atoms { atoms } => atoms
                .iter()
                .filter(|a| a.size <= 1.0)
                .map(|a| a.rate * a.size)
                .sum(),
        }
    }

    fn check(&self, reasons: &mut Vec<String>) {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        match self {
            JumpMeasureSpec::None => {}
            JumpMeasureSpec::ExpMixture { components } => {
                if components.is_empty() {
                    reasons.push("exponential mixture has no components".into());
                }
                for (i, c) in components.iter().enumerate() {
                    if !ok(c.rate) || !ok(c.scale) {
                        reasons.push(format!(
                            "exponential component {i}: rate and scale must be positive and finite"
                        ));
                    }
                }
            }
            JumpMeasureSpec::Atoms { atoms } => {
                if atoms.is_empty() {
                    reasons.push("atomic jump measure has no atoms".into());
                }
                for (i, a) in atoms.iter().enumerate() {
                    if !ok(a.rate) || !ok(a.size) {
                        reasons.push(format!("atom {i}: rate and size must be positive and finite"));
                    }
                }
            }
        }
    }
}

/// Drift, Gaussian coefficient, jump measure and killing rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevyTriplet {
    pub gamma: f64,
    pub sigma2: f64,
    #[serde(default)]
    pub jumps: JumpMeasureSpec,
    #[serde(default)]
    pub p: f64,
}

impl LevyTriplet {
    pub fn brownian(gamma: f64, sigma2: f64) -> Self {
        Self {
            gamma,
            sigma2,
            jumps: JumpMeasureSpec::None,
            p: 0.0,
        }
    }

    pub fn with_killing(mut self, p: f64) -> Self {
        self.p = p;
        self
    }

    pub fn with_jumps(mut self, jumps: JumpMeasureSpec) -> Self {
        self.jumps = jumps;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub passed: bool,
    pub reasons: Vec<String>,
}

/// Field invariants plus the subordinator exclusion.
///
/// For finite activity, `psi(z) = d z + sigma2 z^2/2 + ∫ (e^{-zh} - 1) m(dh)` with
/// `d = -gamma + ∫_(0,1] h m(dh)`. Paths are nondecreasing (and `psi`
/// nonincreasing on `[0, ∞)`) exactly when `sigma2 = 0` and `d <= 0`.
pub fn validate_triplet(t: &LevyTriplet) -> Diagnostics {
    let mut reasons = Vec::new();
    if !t.gamma.is_finite() {
        reasons.push("gamma must be finite".into());
    }
    if !(t.sigma2.is_finite() && t.sigma2 >= 0.0) {
        reasons.push("sigma2 must be finite and nonnegative".into());
    }
    if !(t.p.is_finite() && t.p >= 0.0) {
        reasons.push("killing rate p must be finite and nonnegative".into());
    }
    t.jumps.check(&mut reasons);
    if reasons.is_empty() {
        let d = -t.gamma + t.jumps.small_jump_mean();
        if t.sigma2 == 0.0 && d <= 0.0 {
            reasons.push(format!(
                "triplet defines a subordinator (no Gaussian part, net downward drift {d} <= 0)"
            ));
        }
    }
    Diagnostics {
        passed: reasons.is_empty(),
        reasons,
    }
}

/// A validated exponent, ready for repeated evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Exponent {
    triplet: LevyTriplet,
    /// Net downward drift of the paths between jumps.
    linear: f64,
}

impl Exponent {
    pub fn new(triplet: &LevyTriplet) -> Result<Self> {
        let diag = validate_triplet(triplet);
        if !diag.passed {
            return Err(Error::Validation(diag.reasons.join("; ")));
        }
        Ok(Self {
            linear: -triplet.gamma + triplet.jumps.small_jump_mean(),
            triplet: triplet.clone(),
        })
    }

    pub fn triplet(&self) -> &LevyTriplet {
        &self.triplet
    }

    pub fn sigma2(&self) -> f64 {
        self.triplet.sigma2
    }

    pub fn killing(&self) -> f64 {
        self.triplet.p
    }

    pub fn jumps(&self) -> &JumpMeasureSpec {
        &self.triplet.jumps
    }

    /// Drift velocity of the paths between jumps (`-d`).
    pub fn path_drift(&self) -> f64 {
        -self.linear
    }

    /// `psi(z)` without the killing term, for `z >= 0`.
    pub fn psi(&self, z: f64) -> f64 {
        let jumps = match &self.triplet.jumps {
            JumpMeasureSpec::None => 0.0,
            JumpMeasureSpec::ExpMixture { components } => components
                .iter()
                .map(|c| -c.rate * z / (c.scale + z))
                .sum(),
            JumpMeasureSpec::Atoms { atoms } => {
                atoms.iter().map(|a| a.rate * (-z * a.size).exp_m1()).sum()
            }
        };
        self.linear * z + 0.5 * self.triplet.sigma2 * z * z + jumps
    }

    pub fn psi_prime(&self, z: f64) -> f64 {
        let jumps: f64 = match &self.triplet.jumps {
            JumpMeasureSpec::None => 0.0,
            JumpMeasureSpec::ExpMixture { components } => components
                .iter()
                .map(|c| {
                    let s = c.scale + z;
                    -c.rate * c.scale / (s * s)
                })
                .sum(),
            JumpMeasureSpec::Atoms { atoms } => atoms
                .iter()
                .map(|a| -a.rate * a.size * (-z * a.size).exp())
                .sum(),
        };
        self.linear + self.triplet.sigma2 * z + jumps
    }

    /// `psi(base + u) - psi(base)` for `u >= 0` without cancellation.
    pub fn psi_increment(&self, base: f64, u: f64) -> f64 {
        let jumps: f64 = match &self.triplet.jumps {
            JumpMeasureSpec::None => 0.0,
            JumpMeasureSpec::ExpMixture { components } => components
                .iter()
                .map(|c| {
                    let s = c.scale + base;
                    -c.rate * c.scale * u / (s * (s + u))
                })
                .sum(),
            JumpMeasureSpec::Atoms { atoms } => atoms
                .iter()
                .map(|a| a.rate * (-base * a.size).exp() * (-u * a.size).exp_m1())
                .sum(),
        };
        self.linear * u + self.triplet.sigma2 * (base * u + 0.5 * u * u) + jumps
    }

    /// Minimiser of `psi` on `[0, ∞)`.
    pub fn argmin(&self) -> f64 {
        if self.psi_prime(0.0) >= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.psi_prime(hi) < 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.psi_prime(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Largest `z >= 0` with `psi(z) = q`.
    pub fn inverse(&self, q: f64) -> Result<PsiInverseResult> {
        if !(q >= 0.0) || !q.is_finite() {
            return Err(Error::Domain(format!("psi inverse needs finite q >= 0, got {q}")));
        }
        let zmin = self.argmin();
        let tol = 1e-12 * q.max(1.0);
        if zmin == 0.0 && q == 0.0 {
            return Ok(PsiInverseResult {
                z: 0.0,
                residual: 0.0,
                iterations: 0,
            });
        }
        let mut lo = zmin;
        let mut hi = zmin.max(1.0);
        let mut doublings = 0;
        while self.psi(hi) <= q {
            lo = hi;
            hi *= 2.0;
            doublings += 1;
            if doublings > 200 {
                return Err(Error::nonconvergence("psi inverse bracket expansion", doublings));
            }
        }
        // rtsafe: Newton inside a shrinking bracket, bisection when Newton leaves it.
        let mut z = 0.5 * (lo + hi);
        let mut iterations = 0;
        loop {
            iterations += 1;
            let f = self.psi(z) - q;
            if f.abs() <= tol * 1e-2 || iterations > 500 {
                break;
            }
            if f > 0.0 {
                hi = z;
            } else {
                lo = z;
            }
            let d = self.psi_prime(z);
            let newton = z - f / d;
            let next = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if next == z || hi - lo <= f64::EPSILON * hi {
                z = next;
                break;
            }
            z = next;
        }
        let residual = (self.psi(z) - q).abs();
        if residual > tol {
            // Accept the attainable floating-point resolution.
            let ulp = f64::EPSILON * z.max(f64::MIN_POSITIVE);
            let attainable = 4.0 * ulp * self.psi_prime(z).abs() + 4.0 * f64::EPSILON * q;
            if residual > attainable {
                return Err(Error::nonconvergence("psi inverse", iterations));
            }
        }
        Ok(PsiInverseResult {
            z,
            residual,
            iterations,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PsiInverseResult {
    pub z: f64,
    pub residual: f64,
    pub iterations: usize,
}

pub fn eval_psi(t: &LevyTriplet, z: f64) -> Result<f64> {
    if !(z >= 0.0) {
        return Err(Error::Domain(format!("psi is defined on z >= 0, got {z}")));
    }
    Ok(Exponent::new(t)?.psi(z))
}

pub fn eval_psi_prime(t: &LevyTriplet, z: f64) -> Result<f64> {
    if !(z > 0.0) {
        return Err(Error::Domain(format!("psi' is evaluated on z > 0, got {z}")));
    }
    Ok(Exponent::new(t)?.psi_prime(z))
}

pub fn psi_inverse(t: &LevyTriplet, q: f64) -> Result<PsiInverseResult> {
    Exponent::new(t)?.inverse(q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, Tolerance};

    fn bm() -> LevyTriplet {
        LevyTriplet::brownian(0.0, 1.0)
    }

    #[test]
    fn brownian_values() {
        assert_eq!(eval_psi(&bm(), 2.0).unwrap(), 2.0);
        assert_eq!(eval_psi(&LevyTriplet::brownian(-1.0, 1.0), 1.0).unwrap(), 1.5);
        assert_eq!(eval_psi_prime(&bm(), 2.0).unwrap(), 2.0);
        let d = eval_psi_prime(&LevyTriplet::brownian(-1.0, 1.0), 1e-8).unwrap();
        assert!((d - 1.0).abs() < 1e-7);
    }

    #[test]
    fn exponential_jumps_match_quadrature() {
        // psi(1) for gamma = 0, sigma2 = 0, density e^{-h}: integrate the
        // compensated integrand directly.
        let t = LevyTriplet::brownian(0.0, 0.0).with_jumps(JumpMeasureSpec::exp_single(1.0, 1.0));
        let z = 1.0;
        let f = |h: f64| {
            let comp = if h <= 1.0 { z * h } else { 0.0 };
            ((-z * h).exp() + comp - 1.0) * (-h).exp()
        };
        let tol = Tolerance::default();
        let oracle = integrate(&f, 0.0, 1.0, tol).unwrap().value
            + integrate(&|u: f64| f(1.0 + u / (1.0 - u)) / (1.0 - u).powi(2), 0.0, 1.0 - 1e-12, tol)
                .unwrap()
                .value;
        let v = eval_psi(&t, z).unwrap();
        assert!((v - oracle).abs() < 1e-10, "{v} vs {oracle}");
        let closed = -0.5 + (1.0 - 2.0 * (-1f64).exp());
        assert!((v - closed).abs() < 1e-14);
        assert!((v + 0.235_758_882_342_884_6).abs() < 1e-12);
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let t = LevyTriplet::brownian(0.0, 1.0).with_jumps(JumpMeasureSpec::exp_single(1.0, 2.0));
        let e = Exponent::new(&t).unwrap();
        for &z in &[0.1f64, 1.0, 7.5] {
            let h = 1e-5 * z.max(1.0);
            let fd = (e.psi(z + h) - e.psi(z - h)) / (2.0 * h);
            let d = e.psi_prime(z);
            assert!((d - fd).abs() <= 1e-6 * d.abs().max(1e-12), "{z}: {d} vs {fd}");
        }
    }

    #[test]
    fn increment_matches_difference() {
        let t = LevyTriplet::brownian(0.3, 0.7)
            .with_jumps(JumpMeasureSpec::Atoms {
                atoms: vec![Atom { rate: 2.0, size: 0.5 }, Atom { rate: 1.0, size: 3.0 }],
            });
        let e = Exponent::new(&t).unwrap();
        for &(b, u) in &[(0.0, 1.0), (1.3, 0.25), (4.0, 3.0)] {
            let direct = e.psi(b + u) - e.psi(b);
            assert!((e.psi_increment(b, u) - direct).abs() < 1e-12 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn inverse_examples() {
        let r = psi_inverse(&bm(), 2.0).unwrap();
        assert!((r.z - 2.0).abs() < 1e-12);
        assert_eq!(psi_inverse(&bm(), 0.0).unwrap().z, 0.0);
        let r = psi_inverse(&LevyTriplet::brownian(1.0, 1.0), 0.0).unwrap();
        assert!((r.z - 2.0).abs() < 1e-12, "{r:?}");
    }

    #[test]
    fn validation_cases() {
        assert!(validate_triplet(&bm()).passed);
        // With the compensator honoured, a unit atom at h = 1 and gamma = 0 still
        // drifts down at unit speed; gamma = 1 removes the drift.
        let sub = LevyTriplet::brownian(1.0, 0.0).with_jumps(JumpMeasureSpec::atom(1.0, 1.0));
        assert!(!validate_triplet(&sub).passed);
        let sub2 = LevyTriplet::brownian(0.0, 0.0).with_jumps(JumpMeasureSpec::atom(1.0, 2.0));
        assert!(!validate_triplet(&sub2).passed);
        let ok = LevyTriplet::brownian(0.0, 0.0).with_jumps(JumpMeasureSpec::atom(1.0, 1.0));
        assert!(validate_triplet(&ok).passed);
        let ok2 = LevyTriplet::brownian(-1.0, 0.0).with_jumps(JumpMeasureSpec::atom(1.0, 1.0));
        assert!(validate_triplet(&ok2).passed);
        assert!(!validate_triplet(&LevyTriplet::brownian(0.0, 0.0)).passed);
        assert!(!validate_triplet(&LevyTriplet::brownian(0.0, -1.0)).passed);
        assert!(!validate_triplet(&bm().with_killing(-0.1)).passed);
        let bad = bm().with_jumps(JumpMeasureSpec::exp_single(0.0, 1.0));
        assert!(!validate_triplet(&bad).passed);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(eval_psi(&bm(), -1.0), Err(Error::Domain(_))));
        assert!(matches!(eval_psi_prime(&bm(), 0.0), Err(Error::Domain(_))));
        assert!(matches!(psi_inverse(&bm(), -1.0), Err(Error::Domain(_))));
        let sub = LevyTriplet::brownian(0.0, 0.0).with_jumps(JumpMeasureSpec::atom(1.0, 2.0));
        assert!(matches!(eval_psi(&sub, 1.0), Err(Error::Validation(_))));
    }

    #[test]
    fn triplet_json_field_names() {
        let t = LevyTriplet::brownian(0.5, 1.0)
            .with_jumps(JumpMeasureSpec::exp_single(2.0, 3.0))
            .with_killing(0.25);
        let v = serde_json::to_value(&t).unwrap();
        assert_eq!(v["gamma"], 0.5);
        assert_eq!(v["sigma2"], 1.0);
        assert_eq!(v["p"], 0.25);
        assert_eq!(v["jumps"]["type"], "exp_mixture");
        let back: LevyTriplet = serde_json::from_value(v).unwrap();
        assert_eq!(back, t);
        let parsed: LevyTriplet =
            serde_json::from_str(r#"{"gamma":0,"sigma2":1,"jumps":{"type":"none"},"p":0}"#).unwrap();
        assert_eq!(parsed, bm());
    }
}
