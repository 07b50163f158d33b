//! Scale functions `Φ_q` and first-passage transforms
//! `E_x[e^{-q T_l}; T_l < ζ] = Φ_q(x) / Φ_q(l)`.
//!
//! `Φ_q` is only fixed up to a multiplicative constant, so values are returned
//! unnormalised and every comparison goes through ratios (computed in log
//! space).

pub mod csbp;
pub mod killed;
pub mod pssmp;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::{Exponent, LevyTriplet};

pub use csbp::{CsbpScale, CsbpVariant, RecurrentForm};
pub use killed::{KilledDrift, KillingForm, SpeedForm};
pub use pssmp::{coefficient_condition, CoefficientCheck, PssmpScale, ScaleSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProcessSpec {
    Levy {
        triplet: LevyTriplet,
    },
    Pssmp {
        triplet: LevyTriplet,
        alpha: f64,
    },
    Csbp {
        triplet: LevyTriplet,
        variant: CsbpVariant,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<f64>,
    },
    KilledDrift(KilledDrift),
}

impl ProcessSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            ProcessSpec::Levy { .. } => "levy",
            ProcessSpec::Pssmp { .. } => "pssmp",
            ProcessSpec::Csbp { .. } => "csbp",
            ProcessSpec::KilledDrift(_) => "killed_drift",
        }
    }

    pub fn triplet(&self) -> Option<&LevyTriplet> {
        match self {
            ProcessSpec::Levy { triplet }
            | ProcessSpec::Pssmp { triplet, .. }
            | ProcessSpec::Csbp { triplet, .. } => Some(triplet),
            ProcessSpec::KilledDrift(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScaleEval {
    pub value: f64,
    pub log_value: f64,
    pub abs_error_bound: f64,
    pub terms_or_nodes: usize,
}

impl ScaleEval {
    pub(crate) fn from_log(log_value: f64, abs_error_bound: f64, terms_or_nodes: usize) -> Self {
        Self {
            value: log_value.exp(),
            log_value,
            abs_error_bound,
            terms_or_nodes,
        }
    }

    fn rel_error(&self) -> f64 {
        if self.value > 0.0 {
            self.abs_error_bound / self.value
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TransformEval {
    pub value: f64,
    pub abs_error_bound: f64,
}

/// A specification prepared for repeated evaluation. Construction validates
/// the spec and performs all `q`-independent precomputation; the model is
/// immutable afterwards and can be shared between threads.
#[derive(Debug, Clone)]
pub enum ScaleModel {
    Levy { exp: Exponent },
    Pssmp(PssmpScale),
    Csbp(CsbpScale),
    KilledDrift(KilledDrift),
}

impl ScaleModel {
    pub fn new(spec: &ProcessSpec) -> Result<Self> {
        Ok(match spec {
            ProcessSpec::Levy { triplet } => ScaleModel::Levy {
                exp: Exponent::new(triplet)?,
            },
            ProcessSpec::Pssmp { triplet, alpha } => {
                ScaleModel::Pssmp(PssmpScale::new(Exponent::new(triplet)?, *alpha)?)
            }
            ProcessSpec::Csbp { triplet, variant, theta } => {
                ScaleModel::Csbp(CsbpScale::new(Exponent::new(triplet)?, *variant, *theta)?)
            }
            ProcessSpec::KilledDrift(k) => {
                k.validate()?;
                ScaleModel::KilledDrift(*k)
            }
        })
    }

    pub fn check_state(&self, y: f64) -> Result<()> {
        let ok = match self {
            ScaleModel::Levy { .. } | ScaleModel::Pssmp(_) => y.is_finite(),
            ScaleModel::Csbp(c) => match c.variant() {
                CsbpVariant::Recurrent => y > 0.0 && y.is_finite(),
                CsbpVariant::Extinct => y >= 0.0 && y.is_finite(),
            },
            ScaleModel::KilledDrift(k) => k.contains(y),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("{y} is outside the state space")))
        }
    }

    pub fn scale(&self, q: f64, x: f64) -> Result<ScaleEval> {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(Error::Domain(format!("q must be finite and >= 0, got {q}")));
        }
        self.check_state(x)?;
        match self {
            ScaleModel::Levy { exp } => scale_levy_prepared(exp, q, x),
            ScaleModel::Pssmp(s) => s.scale(q, x),
            ScaleModel::Csbp(c) => c.scale(q, x),
            ScaleModel::KilledDrift(k) => Ok(ScaleEval::from_log(k.log_scale(q, x)?, 0.0, 0)),
        }
    }

    /// `Φ_q(x) / Φ_q(l)` with a propagated error bound.
    pub fn transform(&self, q: f64, x: f64, l: f64) -> Result<TransformEval> {
        if !(l <= x) {
            return Err(Error::Domain(format!("level l = {l} must not exceed x = {x}")));
        }
        self.check_state(x)?;
        self.check_state(l)?;
        if x == l {
            return Ok(TransformEval {
                value: 1.0,
                abs_error_bound: 0.0,
            });
        }
        if let ScaleModel::KilledDrift(k) = self {
            return Ok(TransformEval {
                value: k.log_transform(q, x, l)?.exp(),
                abs_error_bound: 0.0,
            });
        }
        let sx = self.scale(q, x)?;
        let sl = self.scale(q, l)?;
        let value = (sx.log_value - sl.log_value).exp().min(1.0);
        Ok(TransformEval {
            value,
            abs_error_bound: value * (sx.rel_error() + sl.rel_error()),
        })
    }
}

fn scale_levy_prepared(exp: &Exponent, q: f64, x: f64) -> Result<ScaleEval> {
    let root = exp.inverse(exp.killing() + q)?;
    let slope = exp.psi_prime(root.z.max(1e-300));
    let dz = if root.residual == 0.0 { 0.0 } else { root.residual / slope.abs() };
    let log_value = -root.z * x;
    let value = log_value.exp();
    Ok(ScaleEval::from_log(log_value, value * x.abs() * dz, root.iterations))
}

/// `e^{-ψ^{-1}(p + q) x}`.
pub fn scale_levy(triplet: &LevyTriplet, q: f64, x: f64) -> Result<ScaleEval> {
    ScaleModel::new(&ProcessSpec::Levy {
        triplet: triplet.clone(),
    })?
    .scale(q, x)
}

pub fn pssmp_coefficients(triplet: &LevyTriplet, alpha: f64, order: usize) -> Result<ScaleSeries> {
    if order < 1 {
        return Err(Error::Validation("series order must be at least 1".into()));
    }
    PssmpScale::new(Exponent::new(triplet)?, alpha)?.coefficients(order)
}

pub fn scale_pssmp(triplet: &LevyTriplet, alpha: f64, q: f64, x: f64) -> Result<ScaleEval> {
    PssmpScale::new(Exponent::new(triplet)?, alpha)?.scale(q, x)
}

pub fn scale_csbp_recurrent(triplet: &LevyTriplet, theta: f64, q: f64, x: f64) -> Result<ScaleEval> {
    CsbpScale::new(Exponent::new(triplet)?, CsbpVariant::Recurrent, Some(theta))?
        .scale_recurrent(RecurrentForm::Prefactor, q, x)
}

pub fn scale_csbp_extinct(triplet: &LevyTriplet, q: f64, x: f64) -> Result<ScaleEval> {
    CsbpScale::new(Exponent::new(triplet)?, CsbpVariant::Extinct, None)?.scale_extinct(q, x)
}

pub fn scale_killed_drift(spec: &KilledDrift, q: f64, x: f64) -> Result<ScaleEval> {
    ScaleModel::new(&ProcessSpec::KilledDrift(*spec))?.scale(q, x)
}

/// `E_x[e^{-q T_l}; T_l < ζ]`.
pub fn first_passage_transform(spec: &ProcessSpec, q: f64, x: f64, l: f64) -> Result<f64> {
    Ok(ScaleModel::new(spec)?.transform(q, x, l)?.value)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformRow {
    pub family: String,
    pub q: f64,
    pub x: f64,
    pub l: f64,
    pub transform: f64,
    pub abs_error_bound: f64,
}

/// Tabulate over the grid in q-major, then x, then l order. Pairs with
/// `l > x` are skipped.
pub fn tabulate(spec: &ProcessSpec, qs: &[f64], xs: &[f64], ls: &[f64]) -> Result<Vec<TransformRow>> {
    let model = ScaleModel::new(spec)?;
    let mut rows = Vec::new();
    for &q in qs {
        for &x in xs {
            for &l in ls {
                if l > x {
                    continue;
                }
                let t = model.transform(q, x, l)?;
                rows.push(TransformRow {
                    family: spec.family_name().to_string(),
                    q,
                    x,
                    l,
                    transform: t.value,
                    abs_error_bound: t.abs_error_bound,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_transform_csv<W: Write>(out: &mut W, rows: &[TransformRow]) -> Result<()> {
    writeln!(out, "family,q,x,l,transform,abs_error_bound")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:e},{:e}",
            r.family, r.q, r.x, r.l, r.transform, r.abs_error_bound
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exponent::JumpMeasureSpec;

    fn bm() -> LevyTriplet {
        LevyTriplet::brownian(0.0, 1.0)
    }

    #[test]
    fn levy_examples() {
        let v = scale_levy(&bm(), 1.0, 1.0).unwrap();
        assert!((v.value - (-(2f64).sqrt()).exp()).abs() < 1e-15);
        assert!((v.value - 0.243_116_734_434_214_2).abs() < 1e-15);
        assert_eq!(scale_levy(&bm(), 3.0, 0.0).unwrap().value, 1.0);
        let c = 2.5;
        let drift = LevyTriplet::brownian(-c, 0.0);
        let v = scale_levy(&drift, 1.5, 2.0).unwrap();
        assert!((v.value - (-(1.5 / c) * 2.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn transform_edge_cases() {
        let spec = ProcessSpec::Levy { triplet: bm() };
        assert_eq!(first_passage_transform(&spec, 2.0, 1.0, 1.0).unwrap(), 1.0);
        assert!(matches!(first_passage_transform(&spec, 1.0, 0.0, 1.0), Err(Error::Domain(_))));
        let v = first_passage_transform(&spec, 1.0, 3.0, 2.0).unwrap();
        assert!((v - (-(2f64).sqrt()).exp()).abs() < 1e-14);
    }

    #[test]
    fn state_space_checks() {
        let spec = ProcessSpec::Csbp {
            triplet: LevyTriplet::brownian(-1.0, 0.0),
            variant: CsbpVariant::Recurrent,
            theta: Some(1.0),
        };
        assert!(matches!(first_passage_transform(&spec, 1.0, 1.0, 0.0), Err(Error::Domain(_))));
        let spec = ProcessSpec::Csbp {
            triplet: bm(),
            variant: CsbpVariant::Extinct,
            theta: None,
        };
        let v = first_passage_transform(&spec, 1.0, 1.0, 0.0).unwrap();
        assert!(v > 0.0 && v < 1.0);
    }

    #[test]
    fn spec_json_round_trip() {
        let specs = vec![
            ProcessSpec::Levy { triplet: bm() },
            ProcessSpec::Pssmp { triplet: bm(), alpha: 1.0 },
            ProcessSpec::Csbp {
                triplet: LevyTriplet::brownian(-1.0, 0.0).with_jumps(JumpMeasureSpec::atom(1.0, 0.5)),
                variant: CsbpVariant::Recurrent,
                theta: Some(2.0),
            },
            ProcessSpec::KilledDrift(KilledDrift::constant(1.0, 0.2)),
        ];
        for s in specs {
            let text = serde_json::to_string(&s).unwrap();
            let back: ProcessSpec = serde_json::from_str(&text).unwrap();
            assert_eq!(back, s);
        }
        let parsed: ProcessSpec = serde_json::from_str(
            r#"{"family":"killed_drift","speed":{"form":"constant","speed":1.0},"killing":{"form":"constant","rate":0.5},"theta":0.0}"#,
        )
        .unwrap();
        assert_eq!(parsed, ProcessSpec::KilledDrift(KilledDrift::constant(1.0, 0.5)));
    }

    #[test]
    fn csv_layout() {
        let spec = ProcessSpec::Levy { triplet: bm() };
        let rows = tabulate(&spec, &[1.0, 2.0], &[1.0, 2.0], &[0.0, 1.5]).unwrap();
        // (x=1, l=1.5) skipped
        assert_eq!(rows.len(), 6);
        assert_eq!((rows[0].q, rows[0].x, rows[0].l), (1.0, 1.0, 0.0));
        assert_eq!((rows[1].q, rows[1].x, rows[1].l), (1.0, 2.0, 0.0));
        let mut buf = Vec::new();
        write_transform_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("family,q,x,l,transform,abs_error_bound\nlevy,1,1,0,"));
    }
}
