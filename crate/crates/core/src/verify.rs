//! Monte Carlo checks of the closed forms.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::exponent::{Exponent, LevyTriplet};
use crate::scale::{ProcessSpec, ScaleModel};
use crate::simulate::{map_chunks, sample_many, FirstPassageSample, PathState, Sampler, SimConfig};

/// Streams used by one comparison leave room for this many chunks.
const LEG_STREAMS: u64 = 1 << 24;

/// Mean of `e^{-q T} 1{crossed}` and its standard error.
pub fn mc_laplace(samples: &[FirstPassageSample], q: f64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::InsufficientData("no samples".into()));
    }
    let values: Vec<f64> = samples
        .iter()
        .map(|s| if s.crossed { (-q * s.time).exp() } else { 0.0 })
        .collect();
    Ok(mean_and_se(&values))
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 || values.iter().all(|&v| v == values[0]) {
        return (if values.len() < 2 { mean } else { values[0] }, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// `(estimate - target) / se`, with a zero standard error treated as exact.
fn z_score(estimate: f64, target: f64, se: f64) -> f64 {
    let diff = estimate - target;
    if se > 0.0 {
        diff / se
    } else if diff.abs() <= 1e-12 * target.abs().max(1.0) {
        0.0
    } else {
        diff.signum() * f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub sim: SimConfig,
    /// Band half-width in standard errors.
    pub band: f64,
    pub base_stream: u64,
    /// Multiplies the closed form before comparison; 1 except in negative
    /// controls of the band logic.
    pub closed_form_factor: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { sim: SimConfig::default(), band: 4.0, base_stream: 0, closed_form_factor: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MCReport {
    pub family: String,
    pub q: f64,
    pub x: f64,
    pub l: f64,
    pub n: usize,
    pub seed: u64,
    pub estimate: f64,
    pub std_error: f64,
    pub closed_form: f64,
    pub closed_form_error: f64,
    /// `|estimate(Δ) - estimate(Δ/2)|` for the time-changed families, else 0.
    pub bias_allowance: f64,
    pub delta: Option<f64>,
    pub censored: usize,
    pub z_score: f64,
    pub passed: bool,
    #[serde(skip)]
    pub wall_time: f64,
}

fn is_discretised(spec: &ProcessSpec) -> bool {
    matches!(spec, ProcessSpec::Pssmp { .. } | ProcessSpec::Csbp { .. })
}

/// A path censored after `-ln(1e-9)/q` would have contributed less than `1e-9`.
fn horizon_for(sim: SimConfig, q: f64) -> SimConfig {
    if q > 0.0 {
        sim.with_horizon(sim.horizon.min(20.723265836946414 / q))
    } else {
        sim
    }
}

struct Estimate {
    mean: f64,
    se: f64,
    censored: usize,
}

#[allow(clippy::too_many_arguments)]
fn estimate(spec: &ProcessSpec, sim: SimConfig, q: f64, x: f64, l: f64, n: usize, seed: u64, base: u64) -> Result<Estimate> {
    let sampler = Sampler::new(spec, horizon_for(sim, q))?;
    let samples = sample_many(&sampler, x, l, n, seed, base)?;
    let (mean, se) = mc_laplace(&samples, q)?;
    Ok(Estimate { mean, se, censored: samples.iter().filter(|s| s.censored).count() })
}

/// Runs the family sampler and compares the Laplace estimate with the
/// closed-form transform. The band is `band` standard errors plus, for the
/// pssMp and CSBP families, the spread between runs at `Δ` and `Δ/2` (same
/// seed) and the closed form's own error bound.
pub fn compare_mc_closed(
    spec: &ProcessSpec,
    q: f64,
    x: f64,
    l: f64,
    n: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<MCReport> {
    if n < 1000 {
        return Err(Error::Validation(format!("comparisons need n >= 1000, got {n}")));
    }
    let start = Instant::now();
    let model = ScaleModel::new(spec)?;
    let cf = model.transform(q, x, l)?;
    let closed_form = cf.value * opts.closed_form_factor;
    let main = estimate(spec, opts.sim, q, x, l, n, seed, opts.base_stream)?;
    let (bias_allowance, delta) = if is_discretised(spec) {
        let half = opts.sim.with_delta(opts.sim.delta / 2.0);
        let fine = estimate(spec, half, q, x, l, n, seed, opts.base_stream)?;
        ((main.mean - fine.mean).abs(), Some(opts.sim.delta))
    } else {
        (0.0, None)
    };
    let z = z_score(main.mean, closed_form, main.se);
    let allowance = bias_allowance + cf.abs_error_bound;
    let passed = if main.se > 0.0 {
        z.abs() <= opts.band + allowance / main.se
    } else {
        (main.mean - closed_form).abs() <= allowance + 1e-12 * closed_form.abs().max(1.0)
    };
    Ok(MCReport {
        family: spec.family_name().to_string(),
        q,
        x,
        l,
        n,
        seed,
        estimate: main.mean,
        std_error: main.se,
        closed_form,
        closed_form_error: cf.abs_error_bound,
        bias_allowance,
        delta,
        censored: main.censored,
        z_score: z,
        passed,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub q: f64,
    pub x: f64,
    pub l: f64,
    pub n: usize,
    pub seed: u64,
    /// Exponent `φ` of the candidate `Φ(y) = e^{-φ y}`.
    pub exponent: f64,
    pub target: f64,
    pub grid: Vec<f64>,
    pub means: Vec<f64>,
    pub std_errors: Vec<f64>,
    /// `max_j |mean_j - Φ(x)| / SE_j`.
    pub statistic: f64,
    pub passed: bool,
}

/// Estimates `E[Φ(X_{t∧T}) e^{-q (t∧T)}; t∧T < ζ]` on `grid`, which is
/// constant in `t` exactly when `Φ` is the scale function. `exponent`
/// overrides `φ = ψ^{-1}(p + q)` to build negative controls.
#[allow(clippy::too_many_arguments)]
pub fn martingale_residuals(
    triplet: &LevyTriplet,
    q: f64,
    x: f64,
    l: f64,
    grid: &[f64],
    n: usize,
    seed: u64,
    exponent: Option<f64>,
    opts: &VerifyOptions,
) -> Result<MartingaleReport> {
    if !(q > 0.0) {
        return Err(Error::Domain(format!("martingale test needs q > 0, got {q}")));
    }
    if grid.is_empty() {
        return Err(Error::Validation("empty time grid".into()));
    }
    if n < 2 {
        return Err(Error::InsufficientData("martingale test needs n >= 2".into()));
    }
    let exp = Exponent::new(triplet)?;
    let phi = match exponent {
        Some(v) => v,
        None => exp.inverse(exp.killing() + q)?.z,
    };
    let spec = ProcessSpec::Levy { triplet: triplet.clone() };
    let sampler = Sampler::new(&spec, opts.sim)?;
    let paths = map_chunks(n, seed, opts.base_stream, |rng| sampler.checkpoints(x, l, grid, rng))?;
    let target = (-phi * x).exp();
    let mut means = Vec::with_capacity(grid.len());
    let mut std_errors = Vec::with_capacity(grid.len());
    let mut statistic: f64 = 0.0;
    for (j, &t) in grid.iter().enumerate() {
        let values: Vec<f64> = paths
            .iter()
            .map(|states| match states[j] {
                PathState::Alive(y) => (-phi * y - q * t).exp(),
                PathState::Crossed(tc) => (-phi * l - q * tc).exp(),
                PathState::Killed | PathState::Censored => 0.0,
            })
            .collect();
        let (m, se) = mean_and_se(&values);
        statistic = statistic.max(z_score(m, target, se).abs());
        means.push(m);
        std_errors.push(se);
    }
    Ok(MartingaleReport {
        q,
        x,
        l,
        n,
        seed,
        exponent: phi,
        target,
        grid: grid.to_vec(),
        means,
        std_errors,
        statistic,
        passed: statistic <= opts.band,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultiplicativityReport {
    pub family: String,
    pub q: f64,
    pub x: f64,
    pub a: f64,
    pub l: f64,
    pub n: usize,
    pub seed: u64,
    pub direct: f64,
    pub direct_se: f64,
    pub upper_leg: f64,
    pub upper_se: f64,
    pub lower_leg: f64,
    pub lower_se: f64,
    pub product: f64,
    pub product_se: f64,
    /// Closed-form `E_x[e^{-qT_l}; T_l < ζ]`.
    pub closed_form: f64,
    pub z_score: f64,
    pub passed: bool,
}

/// Compares the MC estimate from `x` to `l` with the product of independent
/// estimates from `x` to `a` and from `a` to `l`.
#[allow(clippy::too_many_arguments)]
pub fn multiplicativity_check(
    spec: &ProcessSpec,
    q: f64,
    x: f64,
    a: f64,
    l: f64,
    n: usize,
    seed: u64,
    opts: &VerifyOptions,
) -> Result<MultiplicativityReport> {
    if !(l <= a && a <= x) {
        return Err(Error::Domain(format!("need l <= a <= x, got ({x}, {a}, {l})")));
    }
    let base = opts.base_stream;
    let direct = estimate(spec, opts.sim, q, x, l, n, seed, base)?;
    let upper = estimate(spec, opts.sim, q, x, a, n, seed, base + LEG_STREAMS)?;
    let lower = estimate(spec, opts.sim, q, a, l, n, seed, base + 2 * LEG_STREAMS)?;
    let product = upper.mean * lower.mean;
    let product_se = ((lower.mean * upper.se).powi(2) + (upper.mean * lower.se).powi(2)).sqrt();
    let se = (direct.se.powi(2) + product_se.powi(2)).sqrt();
    let z = z_score(direct.mean, product, se);
    Ok(MultiplicativityReport {
        family: spec.family_name().to_string(),
        q,
        x,
        a,
        l,
        n,
        seed,
        direct: direct.mean,
        direct_se: direct.se,
        upper_leg: upper.mean,
        upper_se: upper.se,
        lower_leg: lower.mean,
        lower_se: lower.se,
        product,
        product_se,
        closed_form: ScaleModel::new(spec)?.transform(q, x, l)?.value,
        z_score: z,
        passed: z.abs() <= opts.band,
    })
}
