use passage_kit::rng::RngStream;
use passage_kit::scale::{CsbpVariant, KilledDrift, ProcessSpec};
use passage_kit::simulate::{sample_many, sample_pssmp_first_passage, SimConfig, Sampler};
use passage_kit::verify::{compare_mc_closed, mc_laplace, multiplicativity_check, VerifyOptions};
use passage_kit::{JumpMeasureSpec, LevyTriplet};

fn feller(gamma: f64, p: f64) -> ProcessSpec {
    ProcessSpec::Csbp {
        triplet: LevyTriplet::brownian(gamma, 1.0).with_killing(p),
        variant: CsbpVariant::Extinct,
        theta: None,
    }
}

#[test]
fn defective_crossing_matches_transform_at_zero() {
    let opts = VerifyOptions::default();
    let cases = [
        // Drifts to +∞ through the jumps.
        (
            ProcessSpec::Levy {
                triplet: LevyTriplet::brownian(-1.0, 0.0).with_jumps(JumpMeasureSpec::atom(1.0, 2.0)),
            },
            1.0,
            0.0,
        ),
        (ProcessSpec::Levy { triplet: LevyTriplet::brownian(0.0, 1.0).with_killing(0.3) }, 1.0, 0.0),
        (ProcessSpec::Pssmp { triplet: LevyTriplet::brownian(0.5, 1.0), alpha: 1.0 }, 1.5, 1.0),
        (ProcessSpec::Pssmp { triplet: LevyTriplet::brownian(0.0, 1.0).with_killing(0.2), alpha: 0.5 }, 2.0, 1.0),
        (feller(0.5, 0.0), 1.0, 0.5),
        (feller(0.0, 0.2), 1.0, 0.5),
        (ProcessSpec::KilledDrift(KilledDrift::constant(1.0, 0.7)), 1.0, 0.0),
    ];
    for (i, (spec, x, l)) in cases.iter().enumerate() {
        let r = compare_mc_closed(spec, 0.0, *x, *l, 20_000, 11 + i as u64, &opts).unwrap();
        assert!(r.closed_form < 1.0, "case {i} is not defective");
        assert!(r.passed, "case {i}: {r:?}");
    }
}

#[test]
fn csbp_killing_matches_the_transform() {
    let opts = VerifyOptions::default();
    for (q, p) in [(1.0, 0.3), (0.5, 1.0)] {
        let r = compare_mc_closed(&feller(0.2, p), q, 1.0, 0.5, 20_000, 5, &opts).unwrap();
        assert!(r.passed, "{r:?}");
    }
}

#[test]
fn pure_drift_pssmp_clock_is_exact() {
    let t = LevyTriplet::brownian(-1.0, 0.0);
    let mut rng = RngStream::new(1, 0).generator();
    for (x, l) in [(1.0, 0.0), (2.5, -1.0), (0.3, 0.2)] {
        let s = sample_pssmp_first_passage(&t, 1.0, x, l, SimConfig::default(), &mut rng).unwrap();
        let want = (-l).exp() - (-x).exp();
        assert!(s.crossed && (s.time - want).abs() <= 1e-12 * want, "{s:?}");
    }
}

#[test]
fn halving_delta_moves_the_estimate_less_than_its_error() {
    let specs = [
        (ProcessSpec::Pssmp { triplet: LevyTriplet::brownian(0.0, 1.0), alpha: 1.0 }, 2.0, 1.0),
        (feller(0.0, 0.0), 1.0, 0.5),
    ];
    for (spec, x, l) in specs {
        let run = |delta: f64| {
            let sampler = Sampler::new(&spec, SimConfig::default().with_delta(delta).with_horizon(50.0)).unwrap();
            let s = sample_many(&sampler, x, l, 100_000, 3, 0).unwrap();
            mc_laplace(&s, 1.0).unwrap()
        };
        let (coarse, se) = run(1e-3);
        let (fine, _) = run(5e-4);
        assert!((coarse - fine).abs() < se, "{}: {coarse} vs {fine}, se {se}", spec.family_name());
    }
}

#[test]
fn z_scores_are_calibrated() {
    let spec = ProcessSpec::Levy { triplet: LevyTriplet::brownian(0.0, 1.0) };
    let opts = VerifyOptions::default();
    let wide = (0..100u64)
        .filter(|&seed| compare_mc_closed(&spec, 1.0, 1.0, 0.0, 2_000, seed, &opts).unwrap().z_score.abs() > 2.0)
        .count();
    assert!(wide <= 12, "{wide} of 100 beyond 2 SE");
}

#[test]
fn killed_drift_legs_multiply() {
    let spec = ProcessSpec::KilledDrift(KilledDrift::constant(1.0, 0.5));
    let r = multiplicativity_check(&spec, 1.0, 2.0, 1.2, 0.0, 100_000, 9, &VerifyOptions::default()).unwrap();
    assert!((r.closed_form - (-3.0f64).exp()).abs() < 1e-14);
    assert!(r.passed, "{r:?}");
}

#[test]
fn feller_comparison_at_scale() {
    let r = compare_mc_closed(&feller(0.0, 0.0), 1.0, 1.0, 0.5, 100_000, 17, &VerifyOptions::default()).unwrap();
    assert!(r.passed, "{r:?}");
    assert!(r.bias_allowance < 2.0 * r.std_error, "{r:?}");
}
