mod common;

use passage_kit::exponent::psi_inverse;
use passage_kit::scale::{CsbpVariant, KilledDrift, KillingForm, ProcessSpec, ScaleModel, SpeedForm};
use passage_kit::LevyTriplet;
use proptest::prelude::*;

fn family() -> impl Strategy<Value = ProcessSpec> {
    prop_oneof![
        common::triplet(None).prop_map(|t| ProcessSpec::Levy { triplet: t }),
        (common::triplet(None), 0.3..2.0f64).prop_map(|(t, a)| ProcessSpec::Pssmp { triplet: t, alpha: a }),
        common::triplet(Some(true))
            .prop_map(|t| ProcessSpec::Csbp { triplet: t, variant: CsbpVariant::Extinct, theta: None }),
        common::triplet(Some(false))
            .prop_map(|t| ProcessSpec::Csbp { triplet: t, variant: CsbpVariant::Recurrent, theta: None }),
        (0.2..3.0f64, 0.0..2.0f64, 0.0..1.0f64).prop_map(|(c, i, s)| ProcessSpec::KilledDrift(KilledDrift {
            speed: SpeedForm::Power { coef: c, origin: 0.0, exponent: 1.0 },
            killing: KillingForm::Affine { intercept: i, slope: s },
            theta: 1.0,
        })),
    ]
}

/// Three increasing states valid for every family.
fn levels() -> impl Strategy<Value = (f64, f64, f64)> {
    (0.1..2.0f64, 0.05..1.5f64, 0.05..1.5f64).prop_map(|(l, d1, d2)| (l, l + d1, l + d1 + d2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn transform_is_a_subprobability_monotone_in_x_l_q(spec in family(), (l, a, x) in levels(), q in 0.0..5.0f64) {
        let m = ScaleModel::new(&spec).unwrap();
        let t = |q: f64, x: f64, l: f64| m.transform(q, x, l).unwrap().value;
        let base = t(q, x, l);
        prop_assert!(base > 0.0 && base <= 1.0);
        let tol = 1e-9;
        prop_assert!(t(q, a, l) >= base - tol, "x");
        prop_assert!(t(q, x, a) >= base - tol, "l");
        prop_assert!(t(q + 0.5, x, l) <= base + tol, "q");
        prop_assert_eq!(t(q, x, x), 1.0);
    }

    #[test]
    fn telescoping(spec in family(), (l, a, x) in levels(), q in 0.0..5.0f64) {
        let m = ScaleModel::new(&spec).unwrap();
        let t = |x: f64, l: f64| m.transform(q, x, l).unwrap().value;
        let lhs = t(x, l);
        prop_assert!((lhs - t(x, a) * t(a, l)).abs() <= 1e-9 * lhs.max(1e-300) + 1e-300);
    }

    #[test]
    fn levy_transform_is_log_linear(t in common::triplet(None), q in 0.0..5.0f64, g in 0.1..3.0f64) {
        let m = ScaleModel::new(&ProcessSpec::Levy { triplet: t }).unwrap();
        let one = m.transform(q, g, 0.0).unwrap().value.ln();
        let two = m.transform(q, 2.0 * g + 1.0, 1.0).unwrap().value.ln();
        prop_assert!((two - 2.0 * one).abs() <= 1e-12 * one.abs().max(1.0));
    }

    #[test]
    fn recurrent_transform_does_not_depend_on_theta(
        t in common::triplet(Some(false)),
        (l, _, x) in levels(),
        q in 0.01..5.0f64,
    ) {
        let root = psi_inverse(&t, t.p).unwrap().z;
        let vals: Vec<f64> = [0.3, 1.0, 4.0]
            .iter()
            .map(|&th| {
                let theta = Some(root + th);
                let spec = ProcessSpec::Csbp { triplet: t.clone(), variant: CsbpVariant::Recurrent, theta };
                ScaleModel::new(&spec).unwrap().transform(q, x, l).unwrap().value
            })
            .collect();
        for v in &vals[1..] {
            prop_assert!((v - vals[0]).abs() <= 1e-9 * vals[0]);
        }
    }
}

#[test]
fn killing_lowers_the_transform() {
    let (q, x, l) = (0.5, 2.0, 0.5);
    for spec in [
        |p: f64| ProcessSpec::Levy { triplet: LevyTriplet::brownian(0.2, 1.0).with_killing(p) },
        |p: f64| ProcessSpec::Pssmp { triplet: LevyTriplet::brownian(0.2, 1.0).with_killing(p), alpha: 1.0 },
        |p: f64| ProcessSpec::Csbp {
            triplet: LevyTriplet::brownian(0.2, 1.0).with_killing(p),
            variant: CsbpVariant::Extinct,
            theta: None,
        },
    ] {
        let free = ScaleModel::new(&spec(0.0)).unwrap().transform(q, x, l).unwrap().value;
        let killed = ScaleModel::new(&spec(0.4)).unwrap().transform(q, x, l).unwrap().value;
        assert!(killed < free);
    }
}
