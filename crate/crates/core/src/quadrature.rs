//! Adaptive Gauss–Kronrod (7/15) quadrature.

use crate::error::{Error, Result};

// Positive Kronrod abscissae; odd indices are the embedded Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_838_258_730,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.000_000_000_000_000_000_000_000_000_000_000,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

/// One 15-point Kronrod panel with the embedded 7-point Gauss difference as
/// the error estimate.
pub fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> QuadResult {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    QuadResult {
        value: kronrod * half,
        abs_error: ((kronrod - gauss) * half).abs(),
        evaluations: 15,
    }
}

/// Visit the 15 Kronrod nodes of `[a, b]` with their weights (already scaled
/// by the half-width).
pub fn gk15_nodes(a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (0..15).map(move |i| {
        if i == 7 {
            (center, WGK[7] * half)
        } else if i < 7 {
            (center - half * XGK[i], WGK[i] * half)
        } else {
            let j = 14 - i;
            (center + half * XGK[j], WGK[j] * half)
        }
    })
}

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
    pub max_subdivisions: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs: 1e-11,
            rel: 1e-11,
            max_subdivisions: 2000,
        }
    }
}

struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

/// Globally adaptive integration of `f` over `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult> {
    integrate_with_breakpoints(f, &[a, b], tol)
}

/// Globally adaptive integration starting from the partition given by
/// `points` (sorted, at least two entries). The panel with the largest error
/// estimate is bisected until the summed estimate meets the tolerance.
pub fn integrate_with_breakpoints<F: Fn(f64) -> f64>(
    f: &F,
    points: &[f64],
    tol: Tolerance,
) -> Result<QuadResult> {
    if points.len() < 2 {
        return Err(Error::Validation("quadrature needs at least two breakpoints".into()));
    }
    let mut panels: Vec<Panel> = Vec::with_capacity(points.len() * 2);
    let mut evaluations = 0;
    for w in points.windows(2) {
        let r = gk15(f, w[0], w[1]);
        evaluations += r.evaluations;
        panels.push(Panel {
            a: w[0],
            b: w[1],
            value: r.value,
            error: r.abs_error,
        });
    }
    let mut subdivisions = 0;
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.error).sum();
        if !total.is_finite() || !err.is_finite() {
            return Err(Error::nonconvergence("quadrature (non-finite integrand)", subdivisions));
        }
        let target = tol.abs.max(tol.rel * total.abs());
        if err <= target {
            return Ok(QuadResult {
                value: total,
                abs_error: err,
                evaluations,
            });
        }
        if subdivisions >= tol.max_subdivisions {
            return Err(Error::nonconvergence("adaptive quadrature", subdivisions));
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, p)| {
                if p.error > acc.1 {
                    (i, p.error)
                } else {
                    acc
                }
            });
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Panel at floating-point resolution; keep its estimate.
            panels.push(Panel { error: 0.0, ..p });
            continue;
        }
        let left = gk15(f, p.a, mid);
        let right = gk15(f, mid, p.b);
        evaluations += left.evaluations + right.evaluations;
        panels.push(Panel {
            a: p.a,
            b: mid,
            value: left.value,
            error: left.abs_error,
        });
        panels.push(Panel {
            a: mid,
            b: p.b,
            value: right.value,
            error: right.abs_error,
        });
        subdivisions += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_exact() {
        let r = gk15(&|x: f64| x.powi(10) - 3.0 * x.powi(3), 0.0, 2.0);
        let exact = 2f64.powi(11) / 11.0 - 3.0 * 16.0 / 4.0;
        assert!((r.value - exact).abs() < 1e-12 * exact.abs());
    }

    #[test]
    fn node_weights_sum_to_length() {
        let s: f64 = gk15_nodes(-1.0, 3.0).map(|(_, w)| w).sum();
        assert!((s - 4.0).abs() < 1e-14);
        let v: f64 = gk15_nodes(0.0, 1.0).map(|(x, w)| w * x.exp()).sum();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn adaptive_on_peaked_integrand() {
        let f = |x: f64| 1.0 / (1e-4 + x * x);
        let r = integrate(&f, -1.0, 1.0, Tolerance::default()).unwrap();
        let exact = 2.0 * (1.0f64 / 1e-2).atan() / 1e-2;
        assert!((r.value - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn breakpoints_are_honoured() {
        let f = |x: f64| if x < 1.0 { 0.0 } else { 1.0 };
        let r = integrate_with_breakpoints(&f, &[0.0, 1.0, 3.0], Tolerance::default()).unwrap();
        assert!((r.value - 2.0).abs() < 1e-14);
    }

    #[test]
    fn non_finite_is_reported() {
        let f = |_x: f64| f64::NAN;
        assert!(integrate(&f, 0.0, 1.0, Tolerance::default()).is_err());
    }
}
