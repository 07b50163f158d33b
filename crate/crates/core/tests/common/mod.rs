#![allow(dead_code)]

use passage_kit::exponent::validate_triplet;
use passage_kit::{JumpMeasureSpec, LevyTriplet};
use proptest::prelude::*;

pub fn jumps() -> impl Strategy<Value = JumpMeasureSpec> {
    prop_oneof![
        Just(JumpMeasureSpec::None),
        (0.0..3.0f64, 0.5..5.0f64).prop_map(|(r, s)| JumpMeasureSpec::exp_single(r, s)),
        (0.0..2.0f64, 0.1..3.0f64).prop_map(|(r, h)| JumpMeasureSpec::atom(r, h)),
    ]
}

/// Valid triplets, optionally forced to have (or lack) a Brownian part.
pub fn triplet(brownian: Option<bool>) -> impl Strategy<Value = LevyTriplet> {
    let sigma2 = match brownian {
        Some(true) => (0.05..2.0f64).boxed(),
        Some(false) => Just(0.0).boxed(),
        None => prop_oneof![Just(0.0), 0.05..2.0f64].boxed(),
    };
    (-2.0..2.0f64, sigma2, jumps(), prop_oneof![Just(0.0), 0.0..1.0f64])
        .prop_map(|(g, s, j, p)| LevyTriplet::brownian(g, s).with_jumps(j).with_killing(p))
        .prop_filter("valid triplet", |t| validate_triplet(t).passed)
}
