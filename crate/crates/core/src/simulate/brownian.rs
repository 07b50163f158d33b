//! Barrier crossing of a drifted Brownian segment `μt + σW_t` started at
//! distance `gap` above the barrier.

use rand::Rng;

use crate::rng::{normal, open01};

/// Inverse Gaussian variate with mean `m` and shape `lambda`.
///
/// Uses the transformation-with-acceptance method, with the smaller root
/// written as `m / (1 + a + sqrt(a (2 + a)))` so that it does not cancel
/// when `m y / λ` is large.
pub fn inverse_gaussian<R: Rng + ?Sized>(rng: &mut R, m: f64, lambda: f64) -> f64 {
    let n = normal(rng);
    let a = m * n * n / (2.0 * lambda);
    let x = m / (1.0 + a + (a * (2.0 + a)).sqrt());
    if open01(rng) * (m + x) <= m {
        x
    } else {
        m * m / x
    }
}

/// Samples `T = inf{t : μt + σW_t <= -gap}`. Returns `(T <= horizon, T)`,
/// with `T = +∞` when the path never reaches the barrier.
pub fn inverse_gaussian_passage<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    gap: f64,
    horizon: f64,
    rng: &mut R,
) -> (bool, f64) {
    debug_assert!(sigma > 0.0 && gap > 0.0);
    let s2 = sigma * sigma;
    let shape = gap * gap / s2;
    let t = if mu < 0.0 {
        inverse_gaussian(rng, gap / -mu, shape)
    } else if mu == 0.0 {
        let z = normal(rng);
        shape / (z * z)
    } else {
        // Upward drift: the barrier is reached with probability e^{-2μ gap/σ²},
        // and given that, T is inverse Gaussian with the reflected drift.
        if open01(rng) < (-2.0 * mu * gap / s2).exp() {
            inverse_gaussian(rng, gap / mu, shape)
        } else {
            f64::INFINITY
        }
    };
    (t <= horizon, t)
}

/// Height above the barrier at time `h`, conditioned on no crossing during
/// `[0, h]`. Rejection from the free Gaussian endpoint with the
/// reflection-principle survival probability as acceptance weight.
pub fn endpoint_without_crossing<R: Rng + ?Sized>(
    mu: f64,
    sigma: f64,
    gap: f64,
    h: f64,
    rng: &mut R,
) -> f64 {
    let sd = sigma * h.sqrt();
    let s2h = sd * sd;
    loop {
        let b = gap + mu * h + sd * normal(rng);
        if b <= 0.0 {
            continue;
        }
        let accept = -(-2.0 * gap * b / s2h).exp_m1();
        if open01(rng) <= accept {
            return b;
        }
    }
}

/// One step of a Brownian bridge that stays above the barrier: from height
/// `a` now to height `b` after time `r`, returns the height after `h < r`.
/// The drift does not enter a bridge. Rejection from the free bridge with
/// the survival probabilities of both halves as acceptance weight.
pub fn bridge_step_above<R: Rng + ?Sized>(a: f64, b: f64, h: f64, r: f64, sigma2: f64, rng: &mut R) -> f64 {
    let sd = (sigma2 * h * (r - h) / r).sqrt();
    let mean = a + (b - a) * h / r;
    loop {
        let w = mean + sd * normal(rng);
        if w <= 0.0 {
            continue;
        }
        let first = -(-2.0 * a * w / (sigma2 * h)).exp_m1();
        let second = -(-2.0 * w * b / (sigma2 * (r - h))).exp_m1();
        if open01(rng) <= first * second {
            return w;
        }
    }
}

/// Path before a first passage at time `t` from height `a`: a Bessel(3)
/// bridge from `a` to 0, realised as the norm of a three-dimensional
/// Brownian bridge. Units of `σ` are folded into the state.
#[derive(Debug, Clone, Copy)]
pub struct PassageBridge {
    z: [f64; 3],
    sigma: f64,
}

impl PassageBridge {
    pub fn new(a: f64, sigma: f64) -> Self {
        Self { z: [a / sigma, 0.0, 0.0], sigma }
    }

    pub fn height(&self) -> f64 {
        self.sigma * self.z.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Advances by `h` with `r > h` remaining before the passage.
    pub fn step<R: Rng + ?Sized>(&mut self, h: f64, r: f64, rng: &mut R) -> f64 {
        let keep = 1.0 - h / r;
        let sd = (h * (r - h) / r).sqrt();
        for v in &mut self.z {
            *v = *v * keep + sd * normal(rng);
        }
        self.height()
    }
}
