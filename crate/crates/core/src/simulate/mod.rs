//! First-passage sampling for the four families.
//!
//! Lévy, pssMp and CSBP samples all run the same driver: a spectrally
//! positive Lévy path with finitely many jumps, evolved segment by segment
//! with exact Brownian barrier crossing in between. The families differ only
//! in the clock read off the driver. The Lévy clock is the identity and exact.
//! The pssMp clock `∫ e^{-αξ}` and the CSBP clock `∫ 1/Y` are accumulated by
//! the trapezoid rule on sub-steps of clock length about `Δ`, and exactly on
//! segments without a Brownian part.
//!
//! The skeleton of a path (jumps, killing, crossings and segment endpoints)
//! is drawn from the sample's stream and does not depend on `Δ`. Interior
//! points used only by the clock come from a second generator seeded from
//! that stream, as exact bridges between the skeleton points. Runs at `Δ` and
//! `Δ/2` with the same seed therefore share their skeletons, and the
//! difference of their estimates isolates the clock discretisation.

pub mod brownian;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::{Exponent, JumpMeasureSpec, LevyTriplet};
use crate::rng::{exponential, open01, RngStream};
use crate::scale::{KilledDrift, ProcessSpec};

pub use brownian::{
    bridge_step_above, endpoint_without_crossing, inverse_gaussian, inverse_gaussian_passage, PassageBridge,
};

/// Samples per RNG stream in [`sample_many`].
pub const CHUNK: usize = 1024;

/// `-ln(1e-12)`: above this many `1/ψ^{-1}(p)` units the chance of ever
/// coming back down to the barrier is below `1e-12`.
const CEILING_LOG: f64 = 27.631021115928547;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirstPassageSample {
    pub crossed: bool,
    /// Passage time; `NaN` unless `crossed`.
    pub time: f64,
    pub level_at_crossing: f64,
    /// The path was abandoned (time horizon, step budget, or escape far above
    /// the barrier) before crossing or being killed. Counts as not crossed.
    pub censored: bool,
}

impl FirstPassageSample {
    fn crossed(time: f64, level: f64) -> Self {
        Self { crossed: true, time, level_at_crossing: level, censored: false }
    }

    fn missed(censored: bool) -> Self {
        Self { crossed: false, time: f64::NAN, level_at_crossing: f64::NAN, censored }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Clock sub-step for the pssMp and CSBP families.
    pub delta: f64,
    /// Paths still running at this process time are censored.
    pub horizon: f64,
    /// Per-path budget of simulation segments.
    pub max_steps: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self { delta: 1e-3, horizon: 1e3, max_steps: 10_000_000 }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Validation(format!("delta must be positive, got {}", self.delta)));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::Validation(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.max_steps == 0 {
            return Err(Error::Validation("max_steps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn with_delta(mut self, delta: f64) -> Self {
        self.delta = delta;
        self
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }
}

/// Normalised jump law, sampled by inversion on the cumulative rates.
#[derive(Debug, Clone)]
struct JumpLaw {
    total: f64,
    cumulative: Vec<f64>,
    kind: Vec<JumpKind>,
}

#[derive(Debug, Clone, Copy)]
enum JumpKind {
    Exp { scale: f64 },
    Fixed { size: f64 },
}

impl JumpLaw {
    fn new(spec: &JumpMeasureSpec) -> Self {
        let parts: Vec<(f64, JumpKind)> = match spec {
            JumpMeasureSpec::None => Vec::new(),
            JumpMeasureSpec::ExpMixture { components } => components
                .iter()
                .map(|c| (c.rate, JumpKind::Exp { scale: c.scale }))
                .collect(),
            JumpMeasureSpec::Atoms { atoms } => {
                atoms.iter().map(|a| (a.rate, JumpKind::Fixed { size: a.size })).collect()
            }
        };
        let mut acc = 0.0;
        let mut cumulative = Vec::with_capacity(parts.len());
        let mut kind = Vec::with_capacity(parts.len());
        for (rate, k) in parts {
            if rate > 0.0 {
                acc += rate;
                cumulative.push(acc);
                kind.push(k);
            }
        }
        Self { total: acc, cumulative, kind }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = open01(rng) * self.total;
        let i = self.cumulative.partition_point(|&c| c < u).min(self.kind.len() - 1);
        match self.kind[i] {
            JumpKind::Exp { scale } => exponential(rng, scale),
            JumpKind::Fixed { size } => size,
        }
    }
}

/// Time change read off the driving path.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Clock {
    Identity,
    /// `∫ e^{-α ξ}`.
    Exponential { alpha: f64 },
    /// `∫ 1 / Y`.
    Reciprocal,
}

impl Clock {
    fn rate(&self, y: f64) -> f64 {
        match *self {
            Clock::Identity => 1.0,
            Clock::Exponential { alpha } => (-alpha * y).exp(),
            Clock::Reciprocal => 1.0 / y,
        }
    }

    /// Clock accumulated along the straight segment `y + μ s`, `s ∈ [0, h]`.
    fn along_drift(&self, y: f64, mu: f64, h: f64) -> f64 {
        match *self {
            Clock::Identity => h,
            Clock::Exponential { alpha } => {
                let z = -alpha * mu * h;
                let factor = if z == 0.0 { 1.0 } else { z.exp_m1() / z };
                self.rate(y) * h * factor
            }
            Clock::Reciprocal => {
                let r = mu * h / y;
                if r == 0.0 {
                    h / y
                } else {
                    (r.ln_1p() / r) * h / y
                }
            }
        }
    }

    fn trapezoid(&self, y0: f64, y1: f64, h: f64) -> f64 {
        match self {
            Clock::Identity => h,
            _ => 0.5 * h * (self.rate(y0) + self.rate(y1)),
        }
    }

    /// Driver-time sub-step for a Brownian segment at height `y`.
    fn step(&self, y: f64, l: f64, sigma2: f64, delta: f64) -> f64 {
        // Far from the barrier the rate varies slowly relative to the
        // distance travelled, so steps may grow with d^2.
        let d = y - l;
        let far = 10.0 * delta * d * d / sigma2;
        match *self {
            Clock::Identity => f64::INFINITY,
            Clock::Exponential { alpha } => {
                (delta * (alpha * y).exp()).min((delta * (alpha * l).exp()).max(far))
            }
            Clock::Reciprocal => (delta * y).min((delta * l).max(far)),
        }
    }

    /// Clock along a Brownian bridge from `l + a` to `l + b` over driver time
    /// `tau` that stays above `l`.
    #[allow(clippy::too_many_arguments)]
    fn along_bridge<R: Rng + ?Sized>(&self, l: f64, a: f64, b: f64, tau: f64, sigma2: f64, delta: f64, rng: &mut R) -> f64 {
        let (mut rest, mut w, mut acc) = (Remaining::new(tau), a, 0.0);
        loop {
            let r = rest.get();
            let h = self.step(l + w, l, sigma2, delta);
            if h >= r {
                return acc + self.trapezoid(l + w, l + b, r);
            }
            let w1 = bridge_step_above(w, b, h, r, sigma2, rng);
            acc += self.trapezoid(l + w, l + w1, h);
            w = w1;
            rest.take(h);
        }
    }

    /// Clock along the path from `l + a` that first reaches `l` at time `t`.
    fn along_passage<R: Rng + ?Sized>(&self, l: f64, a: f64, t: f64, sigma2: f64, delta: f64, rng: &mut R) -> f64 {
        let mut bridge = PassageBridge::new(a, sigma2.sqrt());
        let (mut rest, mut w, mut acc) = (Remaining::new(t), a, 0.0);
        loop {
            let r = rest.get();
            let h = self.step(l + w, l, sigma2, delta);
            if h >= r {
                return acc + self.trapezoid(l + w, l, r);
            }
            let w1 = bridge.step(h, r, rng);
            acc += self.trapezoid(l + w, l + w1, h);
            w = w1;
            rest.take(h);
        }
    }
}

/// Time left on a bridge, kept as an unevaluated sum so that sub-steps far
/// below the ulp of a long segment still count.
#[derive(Debug, Clone, Copy)]
struct Remaining {
    hi: f64,
    lo: f64,
}

impl Remaining {
    fn new(t: f64) -> Self {
        Self { hi: t, lo: 0.0 }
    }

    fn get(&self) -> f64 {
        self.hi + self.lo
    }

    fn take(&mut self, h: f64) {
        let s = self.hi - h;
        let v = s - self.hi;
        let err = (self.hi - (s - v)) - (h + v);
        let hi = s + (self.lo + err);
        self.lo = (self.lo + err) - (hi - s);
        self.hi = hi;
    }
}

#[derive(Debug, Clone)]
struct Driver {
    mu: f64,
    sigma: f64,
    jumps: JumpLaw,
    p: f64,
    /// Distance above the barrier beyond which the path is abandoned.
    ceiling: f64,
}

impl Driver {
    fn new(exp: &Exponent) -> Result<Self> {
        let z0 = exp.inverse(exp.killing())?.z;
        Ok(Self {
            mu: exp.path_drift(),
            sigma: exp.sigma2().sqrt(),
            jumps: JumpLaw::new(exp.jumps()),
            p: exp.killing(),
            ceiling: if z0 > 0.0 { CEILING_LOG / z0 } else { f64::INFINITY },
        })
    }
}

/// State of a Lévy path at a checkpoint time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PathState {
    Alive(f64),
    Crossed(f64),
    Killed,
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SegmentEnd {
    Block,
    Jump,
    Kill,
    Horizon,
    Checkpoint,
}

struct Outcome {
    sample: FirstPassageSample,
    /// Checkpoint states for the identity clock.
    states: Vec<PathState>,
}

fn run_driver<R: Rng + ?Sized>(
    d: &Driver,
    clock: Clock,
    x: f64,
    l: f64,
    cfg: &SimConfig,
    checkpoints: &[f64],
    rng: &mut R,
) -> Outcome {
    let mut states = Vec::with_capacity(checkpoints.len());
    let finish = |states: &mut Vec<PathState>, s: PathState| {
        while states.len() < checkpoints.len() {
            states.push(s);
        }
    };
    if x <= l {
        finish(&mut states, PathState::Crossed(0.0));
        return Outcome { sample: FirstPassageSample::crossed(0.0, x), states };
    }
    let sigma2 = d.sigma * d.sigma;
    let kill_at = exponential(rng, d.p);
    let mut fill = (clock != Clock::Identity && d.sigma > 0.0).then(|| ChaCha8Rng::seed_from_u64(rng.random()));
    let mut next_jump = exponential(rng, d.jumps.total);
    let mut u = 0.0;
    let mut c = 0.0;
    let mut y = x;
    let mut steps = 0u64;
    loop {
        steps += 1;
        let escaped = y - l > d.ceiling;
        if escaped || steps > cfg.max_steps || (clock != Clock::Identity && c >= cfg.horizon) {
            finish(&mut states, PathState::Censored);
            return Outcome { sample: FirstPassageSample::missed(true), states };
        }
        let mut end = SegmentEnd::Jump;
        let mut len = next_jump - u;
        let mut consider = |t: f64, kind: SegmentEnd| {
            if t < len {
                len = t;
                end = kind;
            }
        };
        consider(kill_at - u, SegmentEnd::Kill);
        if clock == Clock::Identity {
            consider(cfg.horizon - u, SegmentEnd::Horizon);
            if let Some(&t) = checkpoints.get(states.len()) {
                consider(t - u, SegmentEnd::Checkpoint);
            }
        }
        let gap = y - l;
        if fill.is_some() {
            // Scale-free block length: a path this close to the barrier
            // crosses or moves away within a few blocks.
            consider(gap * gap / sigma2, SegmentEnd::Block);
        }
        if d.sigma == 0.0 {
            let hit = if d.mu < 0.0 { gap / -d.mu } else { f64::INFINITY };
            if hit <= len {
                let t = c + clock.along_drift(y, d.mu, hit);
                finish(&mut states, PathState::Crossed(u + hit));
                return Outcome { sample: FirstPassageSample::crossed(t, l), states };
            }
            if len.is_finite() {
                c += clock.along_drift(y, d.mu, len);
                y += d.mu * len;
            }
        } else {
            let (hit, t) = inverse_gaussian_passage(d.mu, d.sigma, gap, len, rng);
            if hit {
                let total = c + match fill.as_mut() {
                    Some(f) => clock.along_passage(l, gap, t, sigma2, cfg.delta, f),
                    None => t,
                };
                finish(&mut states, PathState::Crossed(u + t));
                return Outcome { sample: FirstPassageSample::crossed(total, l), states };
            }
            if len.is_finite() {
                let y1 = l + endpoint_without_crossing(d.mu, d.sigma, gap, len, rng);
                c += match fill.as_mut() {
                    Some(f) => clock.along_bridge(l, gap, y1 - l, len, sigma2, cfg.delta, f),
                    None => len,
                };
                y = y1;
            }
        }
        if !len.is_finite() {
            // No jumps, no killing and the drift never reaches the barrier.
            finish(&mut states, PathState::Censored);
            return Outcome { sample: FirstPassageSample::missed(true), states };
        }
        u += len;
        match end {
            SegmentEnd::Block => {}
            SegmentEnd::Jump => {
                y += d.jumps.sample(rng);
                next_jump = u + exponential(rng, d.jumps.total);
            }
            SegmentEnd::Kill => {
                finish(&mut states, PathState::Killed);
                return Outcome { sample: FirstPassageSample::missed(false), states };
            }
            SegmentEnd::Horizon => {
                finish(&mut states, PathState::Censored);
                return Outcome { sample: FirstPassageSample::missed(true), states };
            }
            SegmentEnd::Checkpoint => {
                u = checkpoints[states.len()];
                states.push(PathState::Alive(y));
                if states.len() == checkpoints.len() {
                    // Nothing left to observe; the sample itself is not used.
                    return Outcome { sample: FirstPassageSample::missed(true), states };
                }
            }
        }
    }
}

/// Killing indicator for the deterministic family: an exponential variate
/// against the accumulated killing.
fn sample_killed<R: Rng + ?Sized>(k: &KilledDrift, x: f64, l: f64, rng: &mut R) -> Result<FirstPassageSample> {
    let t = k.clock(x)? - k.clock(l)?;
    let kill = k.killing_integral(l, x)?;
    let e = exponential(rng, 1.0);
    Ok(if e > kill {
        FirstPassageSample::crossed(t, l)
    } else {
        FirstPassageSample::missed(false)
    })
}

#[derive(Debug, Clone)]
enum Kind {
    Driven { driver: Driver, clock: Clock, positive: bool },
    Killed(KilledDrift),
}

/// A validated spec prepared for repeated sampling.
#[derive(Debug, Clone)]
pub struct Sampler {
    kind: Kind,
    cfg: SimConfig,
}

impl Sampler {
    pub fn new(spec: &ProcessSpec, cfg: SimConfig) -> Result<Self> {
        cfg.validate()?;
        let driven = |t: &LevyTriplet, clock: Clock, positive: bool| -> Result<Kind> {
            Ok(Kind::Driven { driver: Driver::new(&Exponent::new(t)?)?, clock, positive })
        };
        let kind = match spec {
            ProcessSpec::Levy { triplet } => driven(triplet, Clock::Identity, false)?,
            ProcessSpec::Pssmp { triplet, alpha } => {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(Error::Validation(format!("alpha must be positive, got {alpha}")));
                }
                driven(triplet, Clock::Exponential { alpha: *alpha }, false)?
            }
            ProcessSpec::Csbp { triplet, .. } => driven(triplet, Clock::Reciprocal, true)?,
            ProcessSpec::KilledDrift(k) => {
                k.validate()?;
                Kind::Killed(*k)
            }
        };
        Ok(Self { kind, cfg })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn check_levels(&self, x: f64, l: f64) -> Result<()> {
        if !(x.is_finite() && l.is_finite() && l <= x) {
            return Err(Error::Domain(format!("need finite l <= x, got x = {x}, l = {l}")));
        }
        match &self.kind {
            Kind::Driven { positive: true, .. } if !(l > 0.0) => {
                Err(Error::Domain(format!("branching samples need l > 0, got {l}")))
            }
            Kind::Killed(k) if !(k.contains(l) && k.contains(x)) => {
                Err(Error::Domain(format!("levels {l}, {x} must lie in the state space")))
            }
            _ => Ok(()),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, x: f64, l: f64, rng: &mut R) -> Result<FirstPassageSample> {
        self.check_levels(x, l)?;
        match &self.kind {
            Kind::Driven { driver, clock, .. } => {
                Ok(run_driver(driver, *clock, x, l, &self.cfg, &[], rng).sample)
            }
            Kind::Killed(k) => sample_killed(k, x, l, rng),
        }
    }

    /// States of a Lévy path at increasing times `grid`.
    pub fn checkpoints<R: Rng + ?Sized>(
        &self,
        x: f64,
        l: f64,
        grid: &[f64],
        rng: &mut R,
    ) -> Result<Vec<PathState>> {
        self.check_levels(x, l)?;
        if grid.windows(2).any(|w| !(w[0] < w[1])) || grid.first().is_some_and(|&t| !(t > 0.0)) {
            return Err(Error::Validation("time grid must be positive and strictly increasing".into()));
        }
        match &self.kind {
            Kind::Driven { driver, clock: Clock::Identity, .. } => {
                Ok(run_driver(driver, Clock::Identity, x, l, &self.cfg, grid, rng).states)
            }
            _ => Err(Error::Validation("path checkpoints are only exact for the Levy family".into())),
        }
    }
}

pub fn sample_levy_first_passage(
    triplet: &LevyTriplet,
    x: f64,
    l: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FirstPassageSample> {
    Sampler::new(&ProcessSpec::Levy { triplet: triplet.clone() }, SimConfig::default())?.sample(x, l, rng)
}

pub fn sample_pssmp_first_passage(
    triplet: &LevyTriplet,
    alpha: f64,
    x: f64,
    l: f64,
    cfg: SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FirstPassageSample> {
    Sampler::new(&ProcessSpec::Pssmp { triplet: triplet.clone(), alpha }, cfg)?.sample(x, l, rng)
}

pub fn sample_csbp_first_passage(
    triplet: &LevyTriplet,
    x: f64,
    l: f64,
    cfg: SimConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FirstPassageSample> {
    let spec = ProcessSpec::Csbp {
        triplet: triplet.clone(),
        variant: crate::scale::CsbpVariant::of(&Exponent::new(triplet)?),
        theta: None,
    };
    Sampler::new(&spec, cfg)?.sample(x, l, rng)
}

pub fn sample_killed_drift_passage(
    spec: &KilledDrift,
    x: f64,
    l: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FirstPassageSample> {
    Sampler::new(&ProcessSpec::KilledDrift(*spec), SimConfig::default())?.sample(x, l, rng)
}

/// Runs `f` on consecutive chunks of [`CHUNK`] paths, chunk `i` drawing from
/// stream `(seed, base_stream + i)`, and concatenates in chunk order. The
/// result does not depend on the number of worker threads.
pub fn map_chunks<T, F>(n: usize, seed: u64, base_stream: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(&mut ChaCha8Rng) -> Result<T> + Sync,
{
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<T>> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::new(seed, base_stream + i as u64).generator();
            let len = CHUNK.min(n - i * CHUNK);
            (0..len).map(|_| f(&mut rng)).collect::<Result<Vec<T>>>()
        })
        .collect::<Result<_>>()?;
    Ok(parts.into_iter().flatten().collect())
}

pub fn sample_many(
    sampler: &Sampler,
    x: f64,
    l: f64,
    n: usize,
    seed: u64,
    base_stream: u64,
) -> Result<Vec<FirstPassageSample>> {
    sampler.check_levels(x, l)?;
    map_chunks(n, seed, base_stream, |rng| sampler.sample(x, l, rng))
}

/// Sample dump: `stream_id,index,crossed,time`, `index` counting within the
/// stream and `time` empty for paths that did not cross.
pub fn write_samples_csv<W: Write>(out: &mut W, samples: &[FirstPassageSample], base_stream: u64) -> Result<()> {
    writeln!(out, "stream_id,index,crossed,time")?;
    for (i, s) in samples.iter().enumerate() {
        let stream = base_stream + (i / CHUNK) as u64;
        let index = i % CHUNK;
        if s.crossed {
            writeln!(out, "{stream},{index},1,{:e}", s.time)?;
        } else {
            writeln!(out, "{stream},{index},0,")?;
        }
    }
    Ok(())
}
