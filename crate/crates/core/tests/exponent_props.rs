mod common;

use passage_kit::Exponent;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn psi_vanishes_at_zero(t in common::triplet(None)) {
        let e = Exponent::new(&t).unwrap();
        prop_assert!(e.psi(0.0).abs() <= 1e-14);
    }

    #[test]
    fn psi_is_convex(t in common::triplet(None), hi in 0.5..50.0f64) {
        let e = Exponent::new(&t).unwrap();
        let h = hi / 99.0;
        let v: Vec<f64> = (0..100).map(|i| e.psi(i as f64 * h)).collect();
        for w in v.windows(3) {
            let second = w[0] - 2.0 * w[1] + w[2];
            prop_assert!(second >= -1e-12 * (w[0].abs() + w[2].abs()).max(1.0));
        }
    }

    #[test]
    fn inverse_round_trip(t in common::triplet(None)) {
        let e = Exponent::new(&t).unwrap();
        let mut last = f64::NEG_INFINITY;
        for k in -8..=8 {
            let q = 10f64.powf(k as f64 / 2.0);
            let z = e.inverse(q).unwrap().z;
            prop_assert!((e.psi(z) - q).abs() <= 1e-10 * q.max(1.0), "q = {q}, z = {z}");
            prop_assert!(z >= last);
            last = z;
        }
    }

    #[test]
    fn derivative_matches_difference_quotient(t in common::triplet(None), z in 0.1..20.0f64) {
        let e = Exponent::new(&t).unwrap();
        let h = 1e-6 * z;
        let fd = (e.psi(z + h) - e.psi(z - h)) / (2.0 * h);
        prop_assert!((fd - e.psi_prime(z)).abs() <= 1e-5 * e.psi_prime(z).abs().max(1.0));
    }

    #[test]
    fn increment_agrees_with_difference(t in common::triplet(None), base in 0.0..5.0f64, u in 0.0..5.0f64) {
        let e = Exponent::new(&t).unwrap();
        let direct = e.psi(base + u) - e.psi(base);
        let scale = e.psi(base + u).abs().max(e.psi(base).abs()).max(1.0);
        prop_assert!((e.psi_increment(base, u) - direct).abs() <= 1e-12 * scale);
    }
}
