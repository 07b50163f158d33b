//! Recovering the process from first-passage transform data.
//!
//! All fits consume transform values, i.e. ratios `Φ_q(x) / Φ_q(l)`, so the
//! arbitrary normalisation of `Φ_q` never enters.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exponent::{Exponent, JumpMeasureSpec, LevyTriplet};
use crate::optim::{minimize, NelderMeadOptions};
use crate::scale::{
    coefficient_condition, tabulate, CoefficientCheck, CsbpScale, CsbpVariant, ProcessSpec, PssmpScale,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformEntry {
    pub x: f64,
    pub l: f64,
    pub q: f64,
    pub value: f64,
}

impl TransformEntry {
    fn gap(&self) -> f64 {
        self.x - self.l
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformGrid {
    pub entries: Vec<TransformEntry>,
    /// Rows with `q <= q_min` are ignored by every fit.
    #[serde(default)]
    pub q_min: Option<f64>,
}

impl TransformGrid {
    pub fn new(entries: Vec<TransformEntry>, q_min: Option<f64>) -> Result<Self> {
        let grid = Self { entries, q_min };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.entries {
            if !(e.x.is_finite() && e.l.is_finite() && e.l <= e.x) {
                return Err(Error::Validation(format!("entry needs finite l <= x, got x = {}, l = {}", e.x, e.l)));
            }
            if !(e.q >= 0.0 && e.q.is_finite()) {
                return Err(Error::Validation(format!("entry has invalid q = {}", e.q)));
            }
            if !(e.value > 0.0 && e.value <= 1.0) {
                return Err(Error::Validation(format!(
                    "transform value must lie in (0, 1], got {} at (q, x, l) = ({}, {}, {})",
                    e.value, e.q, e.x, e.l
                )));
            }
        }
        Ok(())
    }

    /// Noiseless grid from the closed forms, over all `l <= x` pairs.
    pub fn from_spec(spec: &ProcessSpec, qs: &[f64], xs: &[f64], ls: &[f64], q_min: Option<f64>) -> Result<Self> {
        let entries = tabulate(spec, qs, xs, ls)?
            .into_iter()
            .map(|r| TransformEntry { x: r.x, l: r.l, q: r.q, value: r.transform })
            .collect();
        Self::new(entries, q_min)
    }

    /// Grid of ratios `phi(q, x) / phi(q, l)` of tabulated scale-function
    /// values over all pairs `l <= x` of `states`.
    pub fn from_scale_values<F: Fn(f64, f64) -> f64>(qs: &[f64], states: &[f64], phi: F, q_min: Option<f64>) -> Result<Self> {
        let mut entries = Vec::new();
        for &q in qs {
            for &x in states {
                for &l in states {
                    if l <= x {
                        entries.push(TransformEntry { x, l, q, value: phi(q, x) / phi(q, l) });
                    }
                }
            }
        }
        Self::new(entries, q_min)
    }

    /// Reads CSV with columns `x,l,q,value`; lines starting with `#` are skipped.
    pub fn read_csv<R: Read>(reader: R, q_min: Option<f64>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_reader(reader);
        let mut entries = Vec::new();
        for row in rdr.deserialize() {
            let e: TransformEntry = row?;
            entries.push(e);
        }
        Self::new(entries, q_min)
    }

    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "x,l,q,value")?;
        for e in &self.entries {
            writeln!(out, "{:e},{:e},{:e},{:e}", e.x, e.l, e.q, e.value)?;
        }
        Ok(())
    }

    fn trusted(&self, q: f64) -> bool {
        self.q_min.is_none_or(|m| q > m)
    }

    /// Trusted rows with `x > l`, and the number of `x = l` rows dropped.
    fn informative(&self) -> (Vec<TransformEntry>, usize) {
        let trusted: Vec<TransformEntry> = self.entries.iter().copied().filter(|e| self.trusted(e.q)).collect();
        let total = trusted.len();
        let rows: Vec<TransformEntry> = trusted.into_iter().filter(|e| e.gap() > 0.0).collect();
        let dropped = total - rows.len();
        (rows, dropped)
    }
}

/// Rows grouped by `q`, in increasing `q`.
fn by_q(rows: &[TransformEntry]) -> Vec<(f64, Vec<TransformEntry>)> {
    let mut sorted = rows.to_vec();
    sorted.sort_by(|a, b| a.q.total_cmp(&b.q));
    let mut groups: Vec<(f64, Vec<TransformEntry>)> = Vec::new();
    for e in sorted {
        match groups.last_mut() {
            Some((q, g)) if *q == e.q => g.push(e),
            _ => groups.push((e.q, vec![e])),
        }
    }
    groups
}

fn distinct_count(mut v: Vec<f64>) -> usize {
    v.sort_by(f64::total_cmp);
    v.dedup();
    v.len()
}

/// Least-squares slope of `-ln value` on the gap through the origin, with the
/// centred R² of that model (`None` when `-ln value` does not vary).
fn slope_through_origin(rows: &[TransformEntry]) -> (f64, Option<f64>) {
    let (mut sgy, mut sgg) = (0.0, 0.0);
    for e in rows {
        let y = -e.value.ln();
        sgy += e.gap() * y;
        sgg += e.gap() * e.gap();
    }
    let phi = sgy / sgg;
    let n = rows.len() as f64;
    let mean = rows.iter().map(|e| -e.value.ln()).sum::<f64>() / n;
    let (mut ss_res, mut ss_tot) = (0.0, 0.0);
    for e in rows {
        let y = -e.value.ln();
        ss_res += (y - phi * e.gap()).powi(2);
        ss_tot += (y - mean).powi(2);
    }
    let r2 = if ss_tot > 0.0 { Some(1.0 - ss_res / ss_tot) } else { None };
    (phi, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiPoint {
    pub q: f64,
    pub phi: f64,
    pub rows: usize,
    pub gaps: usize,
    pub r2: Option<f64>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhiGrid {
    pub points: Vec<PhiPoint>,
    /// The raw slopes were not nondecreasing in `q` and were replaced by
    /// their isotonic regression.
    pub monotone_adjusted: bool,
    /// Trusted `x = l` rows, which carry no information.
    pub dropped_rows: usize,
}

impl PhiGrid {
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        Self {
            points: pairs
                .iter()
                .map(|&(q, phi)| PhiPoint { q, phi, rows: 0, gaps: 0, r2: None, low_confidence: false })
                .collect(),
            monotone_adjusted: false,
            dropped_rows: 0,
        }
    }

    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.q, p.phi)).collect()
    }
}

/// Weighted isotonic (nondecreasing) regression by pooling adjacent violators.
fn isotonic(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, f64, usize)> = Vec::new();
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 && blocks[blocks.len() - 2].0 > blocks[blocks.len() - 1].0 {
            let (v2, w2, c2) = blocks.pop().unwrap();
            let (v1, w1, c1) = blocks.pop().unwrap();
            blocks.push(((v1 * w1 + v2 * w2) / (w1 + w2), w1 + w2, c1 + c2));
        }
    }
    blocks.into_iter().flat_map(|(v, _, c)| std::iter::repeat_n(v, c)).collect()
}

/// Per-`q` exponent `φ(q)` from `value = e^{-φ(q)(x - l)}`.
pub fn fit_phi_grid(data: &TransformGrid) -> Result<PhiGrid> {
    let (rows, dropped_rows) = data.informative();
    if rows.is_empty() {
        return Err(Error::InsufficientData("no trusted rows with x > l".into()));
    }
    let mut points: Vec<PhiPoint> = by_q(&rows)
        .into_iter()
        .map(|(q, g)| {
            let (phi, r2) = slope_through_origin(&g);
            let gaps = distinct_count(g.iter().map(|e| e.gap()).collect());
            PhiPoint { q, phi, rows: g.len(), gaps, r2, low_confidence: gaps < 2 }
        })
        .collect();
    let monotone = points.windows(2).all(|w| w[0].phi <= w[1].phi);
    if !monotone {
        let phis: Vec<f64> = points.iter().map(|p| p.phi).collect();
        let weights: Vec<f64> = points.iter().map(|p| p.rows as f64).collect();
        for (p, v) in points.iter_mut().zip(isotonic(&phis, &weights)) {
            p.phi = v;
        }
    }
    Ok(PhiGrid { points, monotone_adjusted: !monotone, dropped_rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LevyFormReport {
    pub is_levy: bool,
    /// Worst relative deviation of `-ln value` from `φ(q)(x - l)`.
    pub score: f64,
    /// Fewer than three gaps or three `q` values: the answer is vacuous.
    pub degenerate: bool,
    pub gaps: usize,
    pub q_values: usize,
}

pub const LEVY_FORM_TOLERANCE: f64 = 1e-8;

/// Whether `-ln value` is linear through the origin in `x - l` for every `q`.
pub fn detect_levy_form(data: &TransformGrid) -> LevyFormReport {
    let (rows, _) = data.informative();
    let groups = by_q(&rows);
    let gaps = distinct_count(rows.iter().map(|e| e.gap()).collect());
    let q_values = groups.len();
    let mut score: f64 = 0.0;
    for (_, g) in &groups {
        let (phi, _) = slope_through_origin(g);
        for e in g {
            let y = -e.value.ln();
            let fit = phi * e.gap();
            let dev = (y - fit).abs();
            let rel = if dev == 0.0 { 0.0 } else { dev / y.abs().max(fit.abs()) };
            score = score.max(rel);
        }
    }
    let degenerate = gaps < 3 || q_values < 3;
    LevyFormReport {
        is_levy: degenerate || score <= LEVY_FORM_TOLERANCE,
        score,
        degenerate,
        gaps,
        q_values,
    }
}

/// Parametric shape of `ψ`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// `ψ(z) = -γ z`, a downward drift `γ < 0`.
    PureDrift,
    /// `ψ(z) = -γ z + σ² z² / 2`.
    DriftBrownian,
    /// Drift, Brownian part and one exponential jump component.
    DriftBrownianExp,
}

impl Hypothesis {
    fn names(&self) -> &'static [&'static str] {
        match self {
            Hypothesis::PureDrift => &["gamma"],
            Hypothesis::DriftBrownian => &["gamma", "sigma2"],
            Hypothesis::DriftBrownianExp => &["gamma", "sigma2", "rate", "scale"],
        }
    }
}

/// Parameter vector `[gamma, sigma2, rate, scale][..k]` plus `p` when fitted.
#[derive(Debug, Clone, Copy)]
struct Layout {
    hypothesis: Hypothesis,
    p_known: Option<f64>,
}

impl Layout {
    fn len(&self) -> usize {
        self.hypothesis.names().len() + usize::from(self.p_known.is_none())
    }

    fn triplet(&self, v: &[f64]) -> LevyTriplet {
        let k = self.hypothesis.names().len();
        let p = self.p_known.unwrap_or_else(|| v[k]);
        let mut t = LevyTriplet::brownian(v[0], if k > 1 { v[1] } else { 0.0 }).with_killing(p);
        if self.hypothesis == Hypothesis::DriftBrownianExp {
            t = t.with_jumps(JumpMeasureSpec::exp_single(v[2], v[3]));
        }
        t
    }

    fn vector(&self, t: &LevyTriplet) -> Vec<f64> {
        let mut v = vec![t.gamma];
        if self.hypothesis != Hypothesis::PureDrift {
            v.push(t.sigma2);
        }
        if self.hypothesis == Hypothesis::DriftBrownianExp {
            match &t.jumps {
                JumpMeasureSpec::ExpMixture { components } if components.len() == 1 => {
                    v.push(components[0].rate);
                    v.push(components[0].scale);
                }
                _ => {
                    v.push(0.0);
                    v.push(1.0);
                }
            }
        }
        if self.p_known.is_none() {
            v.push(t.p);
        }
        v
    }

    fn parameters(&self, v: &[f64]) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> =
            self.hypothesis.names().iter().zip(v).map(|(n, &x)| (n.to_string(), x)).collect();
        out.insert("p".into(), self.p_known.unwrap_or_else(|| v[self.hypothesis.names().len()]));
        out
    }

    fn bounds(&self, sigma2_range: (f64, f64)) -> (Vec<f64>, Vec<f64>) {
        const BIG: f64 = 1e6;
        let mut lo = vec![-BIG];
        let mut hi = vec![BIG];
        if self.hypothesis != Hypothesis::PureDrift {
            lo.push(sigma2_range.0);
            hi.push(sigma2_range.1);
        }
        if self.hypothesis == Hypothesis::DriftBrownianExp {
            lo.extend([0.0, 1e-6]);
            hi.extend([BIG, BIG]);
        }
        if self.p_known.is_none() {
            lo.push(0.0);
            hi.push(BIG);
        }
        (lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientReport {
    /// `a_0, …, a_K` of the fitted series.
    pub coeffs: Vec<f64>,
    pub check: CoefficientCheck,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FitResult {
    pub family: String,
    pub hypothesis: Option<Hypothesis>,
    pub parameters: BTreeMap<String, f64>,
    pub spec: Option<ProcessSpec>,
    pub residual_norm: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub diagnostics: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coefficients: Option<CoefficientReport>,
    /// `(z, ψ(z) - p)` on a reporting grid above `ψ^{-1}(p)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mechanism: Option<Vec<(f64, f64)>>,
}

/// Least squares `A c ≈ b` with `c_j >= 0` for `j ∈ nonneg`, by trying every
/// set of clamped coordinates. Fine for the handful of columns used here.
fn constrained_lstsq(a: &DMatrix<f64>, b: &DVector<f64>, nonneg: &[usize]) -> Option<(DVector<f64>, f64)> {
    let cols = a.ncols();
    let mut best: Option<(DVector<f64>, f64)> = None;
    for mask in 0..(1usize << nonneg.len()) {
        let zeroed: Vec<usize> = nonneg.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &j)| j).collect();
        let free: Vec<usize> = (0..cols).filter(|j| !zeroed.contains(j)).collect();
        let mut c = DVector::zeros(cols);
        if !free.is_empty() {
            let sub = a.select_columns(&free);
            let Ok(sol) = sub.svd(true, true).solve(b, 1e-14) else { continue };
            for (k, &j) in free.iter().enumerate() {
                c[j] = sol[k];
            }
        }
        if nonneg.iter().any(|&j| c[j] < 0.0) {
            continue;
        }
        let res = (a * &c - b).norm_squared();
        if best.as_ref().is_none_or(|(_, r)| res < *r) {
            best = Some((c, res));
        }
    }
    best
}

/// Linear part of the triplet fit for a fixed jump scale `rho`: unknowns
/// `(d, σ², λ, p)` in `ψ(φ) - p = d φ + σ² φ²/2 - λ φ / (ρ + φ) - p = q`.
fn linear_triplet_fit(
    pairs: &[(f64, f64)],
    hypothesis: Hypothesis,
    p_known: Option<f64>,
    rho: f64,
) -> Option<(LevyTriplet, f64)> {
    let mut columns: Vec<Box<dyn Fn(f64) -> f64>> = vec![Box::new(|z| z)];
    let mut nonneg = Vec::new();
    if hypothesis != Hypothesis::PureDrift {
        nonneg.push(columns.len());
        columns.push(Box::new(|z| 0.5 * z * z));
    }
    if hypothesis == Hypothesis::DriftBrownianExp {
        nonneg.push(columns.len());
        columns.push(Box::new(move |z| -z / (rho + z)));
    }
    if p_known.is_none() {
        nonneg.push(columns.len());
        columns.push(Box::new(|_| -1.0));
    }
    let a = DMatrix::from_fn(pairs.len(), columns.len(), |i, j| columns[j](pairs[i].1));
    let b = DVector::from_iterator(pairs.len(), pairs.iter().map(|&(q, _)| q + p_known.unwrap_or(0.0)));
    let (c, res) = constrained_lstsq(&a, &b, &nonneg)?;
    let mut k = 1;
    let sigma2 = if hypothesis != Hypothesis::PureDrift {
        k += 1;
        c[k - 1]
    } else {
        0.0
    };
    let jumps = if hypothesis == Hypothesis::DriftBrownianExp {
        k += 1;
        JumpMeasureSpec::exp_single(c[k - 1], rho)
    } else {
        JumpMeasureSpec::None
    };
    let p = p_known.unwrap_or_else(|| c[k]);
    // linear coefficient d = -γ + ∫_0^1 h m(dh)
    let gamma = jumps.small_jump_mean() - c[0];
    Some((LevyTriplet::brownian(gamma, sigma2).with_killing(p).with_jumps(jumps), res))
}

fn levy_result(
    triplet: Option<LevyTriplet>,
    layout: Layout,
    residual: f64,
    converged: bool,
    evaluations: usize,
    mut diagnostics: Vec<String>,
) -> FitResult {
    let Some(t) = triplet else {
        diagnostics.push("no admissible parameters found".into());
        return FitResult {
            family: "levy".into(),
            hypothesis: Some(layout.hypothesis),
            parameters: BTreeMap::new(),
            spec: None,
            residual_norm: f64::INFINITY,
            converged: false,
            evaluations,
            diagnostics,
            coefficients: None,
            mechanism: None,
        };
    };
    let parameters = layout.parameters(&layout.vector(&t));
    let spec = match Exponent::new(&t) {
        Ok(_) => Some(ProcessSpec::Levy { triplet: t }),
        Err(e) => {
            diagnostics.push(format!("fitted triplet is not admissible: {e}"));
            None
        }
    };
    FitResult {
        family: "levy".into(),
        hypothesis: Some(layout.hypothesis),
        parameters,
        spec,
        residual_norm: residual.sqrt(),
        converged,
        evaluations,
        diagnostics,
        coefficients: None,
        mechanism: None,
    }
}

/// Fits `ψ` under `hypothesis` to `ψ(φ(q)) - p = q`. Linear in every
/// parameter except the jump scale, which is found by a simplex search with
/// the other parameters solved exactly at each trial value.
pub fn fit_triplet(phi: &PhiGrid, hypothesis: Hypothesis, p_known: Option<f64>) -> Result<FitResult> {
    let layout = Layout { hypothesis, p_known };
    let pairs = phi.pairs();
    if pairs.len() < layout.len() {
        return Err(Error::InsufficientData(format!(
            "{} exponent values cannot determine {} parameters",
            pairs.len(),
            layout.len()
        )));
    }
    if let Some(p) = p_known {
        if !(p >= 0.0 && p.is_finite()) {
            return Err(Error::Validation(format!("known killing rate must be >= 0, got {p}")));
        }
    }
    let mut diagnostics = Vec::new();
    if phi.monotone_adjusted {
        diagnostics.push("exponent grid was monotonised before fitting".into());
    }
    if hypothesis != Hypothesis::DriftBrownianExp {
        let fit = linear_triplet_fit(&pairs, hypothesis, p_known, 1.0);
        let res = fit.as_ref().map_or(f64::INFINITY, |f| f.1);
        return Ok(levy_result(fit.map(|f| f.0), layout, res, true, 1, diagnostics));
    }
    let objective = |v: &[f64]| linear_triplet_fit(&pairs, hypothesis, p_known, v[0].exp()).map_or(f64::INFINITY, |f| f.1);
    // converged once the residual norm is below 1e-16 per point
    let opts = NelderMeadOptions { target: (1e-16 * pairs.len() as f64).powi(2), ..Default::default() };
    let m = minimize(&objective, &[0.0], &[1.0], &[-14.0], &[14.0], &opts);
    let fit = linear_triplet_fit(&pairs, hypothesis, p_known, m.x[0].exp());
    Ok(levy_result(fit.map(|f| f.0), layout, m.value, m.converged, m.evaluations, diagnostics))
}

/// Minimum number of lattice points for [`extract_sigma2_lattice`].
pub const LATTICE_MIN_POINTS: usize = 8;

/// `σ²` from `s_n = 2 ψ(α n) / (α n)²`, fitting `s_n = σ² + c / n` by least
/// squares on the upper half of the lattice and returning the intercept.
pub fn extract_sigma2_lattice(psi_values: &[(u64, f64)], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Validation(format!("alpha must be positive, got {alpha}")));
    }
    if psi_values.len() < LATTICE_MIN_POINTS {
        return Err(Error::InsufficientData(format!(
            "need at least {LATTICE_MIN_POINTS} lattice points, got {}",
            psi_values.len()
        )));
    }
    if psi_values.iter().any(|&(n, v)| n == 0 || !v.is_finite()) {
        return Err(Error::Validation("lattice indices must be >= 1 with finite values".into()));
    }
    let mut pts = psi_values.to_vec();
    pts.sort_by_key(|p| p.0);
    let top = &pts[pts.len() / 2..];
    let xs: Vec<f64> = top.iter().map(|&(n, _)| 1.0 / n as f64).collect();
    let ys: Vec<f64> = top.iter().map(|&(n, v)| 2.0 * v / (alpha * n as f64).powi(2)).collect();
    let m = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xbar) * (y - ybar)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Degenerate("lattice indices are not distinct".into()));
    }
    Ok(ybar - sxy / sxx * xbar)
}

/// Caches `ln Φ_q(y)` for the distinct `(q, y)` pairs of a row set.
fn log_ratio_residual<F: Fn(f64, f64) -> Result<f64>>(rows: &[TransformEntry], log_scale: F) -> f64 {
    let mut cache: BTreeMap<(u64, u64), f64> = BTreeMap::new();
    let mut lookup = |q: f64, y: f64| -> Result<f64> {
        let key = (q.to_bits(), y.to_bits());
        if let Some(&v) = cache.get(&key) {
            return Ok(v);
        }
        let v = log_scale(q, y)?;
        cache.insert(key, v);
        Ok(v)
    };
    let mut ss = 0.0;
    for e in rows {
        let model = match (lookup(e.q, e.x), lookup(e.q, e.l)) {
            (Ok(a), Ok(b)) => a - b,
            _ => return f64::INFINITY,
        };
        ss += (e.value.ln() - model).powi(2);
    }
    if ss.is_finite() {
        ss
    } else {
        f64::INFINITY
    }
}

struct SimplexFit {
    triplet: Option<LevyTriplet>,
    value: f64,
    evaluations: usize,
    converged: bool,
}

fn simplex_fit<F: Fn(&LevyTriplet) -> f64>(layout: Layout, start: &LevyTriplet, bounds: (Vec<f64>, Vec<f64>), objective: F, n_rows: usize) -> SimplexFit {
    let x0 = layout.vector(start);
    let step: Vec<f64> = x0.iter().map(|v| 0.1 * v.abs().max(0.5)).collect();
    let f = |v: &[f64]| {
        let t = layout.triplet(v);
        if Exponent::new(&t).is_err() {
            return f64::INFINITY;
        }
        objective(&t)
    };
    let opts = NelderMeadOptions { target: (1e-16 * n_rows as f64).powi(2), ..Default::default() };
    let m = minimize(&f, &x0, &step, &bounds.0, &bounds.1, &opts);
    SimplexFit {
        triplet: m.value.is_finite().then(|| layout.triplet(&m.x)),
        value: m.value,
        evaluations: m.evaluations,
        converged: m.converged,
    }
}

/// Starting triplet: the Lévy-form fit of the same data, else a generic point.
fn initial_triplet(data: &TransformGrid, layout: Layout) -> LevyTriplet {
    let generic = layout.triplet(&{
        let mut v = vec![0.0, 1.0, 1.0, 1.0];
        v.truncate(layout.hypothesis.names().len());
        if layout.p_known.is_none() {
            v.push(0.1);
        }
        if layout.hypothesis == Hypothesis::PureDrift {
            v[0] = -1.0;
        }
        v
    });
    let from_phi = fit_phi_grid(data)
        .ok()
        .filter(|g| g.points.iter().filter(|p| p.q > 0.0).count() >= layout.len())
        .and_then(|g| fit_triplet(&g, layout.hypothesis, layout.p_known).ok())
        .and_then(|f| match f.spec {
            Some(ProcessSpec::Levy { triplet }) => Some(triplet),
            _ => None,
        });
    from_phi.unwrap_or(generic)
}

fn only_zero_q(rows: &[TransformEntry]) -> bool {
    rows.iter().all(|e| e.q == 0.0)
}

/// `z0` alone from `q = 0` rows, where every family's transform is
/// `e^{-z0 (x - l)}`.
fn root_only_fit(family: &str, rows: &[TransformEntry], mut diagnostics: Vec<String>) -> FitResult {
    let (z0, _) = slope_through_origin(rows);
    let residual: f64 = rows.iter().map(|e| (e.value.ln() + z0 * e.gap()).powi(2)).sum();
    diagnostics.push("only q = 0 rows: the data identify z0 and nothing else".into());
    FitResult {
        family: family.into(),
        hypothesis: None,
        parameters: BTreeMap::from([("z0".to_string(), z0)]),
        spec: None,
        residual_norm: residual.sqrt(),
        converged: true,
        evaluations: 0,
        diagnostics,
        coefficients: None,
        mechanism: None,
    }
}

/// Order of the reported series coefficients.
pub const REPORTED_COEFFICIENTS: usize = 64;

/// Fits the triplet of the driving Lévy process of a pssMp with index `alpha`
/// to transform data by least squares on `ln value`.
pub fn fit_pssmp(data: &TransformGrid, alpha: f64, hypothesis: Hypothesis, p_known: Option<f64>) -> Result<FitResult> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Validation(format!("alpha must be positive, got {alpha}")));
    }
    data.validate()?;
    let (rows, dropped) = data.informative();
    let mut diagnostics = Vec::new();
    if dropped > 0 {
        diagnostics.push(format!("{dropped} rows with x = l carry no information and were excluded"));
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("no trusted rows with x > l".into()));
    }
    if only_zero_q(&rows) {
        return Ok(root_only_fit("pssmp", &rows, diagnostics));
    }
    let layout = Layout { hypothesis, p_known };
    let start = initial_triplet(data, layout);
    let objective = |t: &LevyTriplet| -> f64 {
        let Ok(s) = Exponent::new(t).and_then(|e| PssmpScale::new(e, alpha)) else {
            return f64::INFINITY;
        };
        log_ratio_residual(&rows, |q, y| Ok(s.scale(q, y)?.log_value))
    };
    let fit = simplex_fit(layout, &start, layout.bounds((0.0, 1e6)), objective, rows.len());
    let Some(t) = fit.triplet else {
        return Err(Error::nonconvergence("pssmp fit found no admissible parameters", fit.evaluations));
    };
    let scale = PssmpScale::new(Exponent::new(&t)?, alpha)?;
    let mut parameters = layout.parameters(&layout.vector(&t));
    parameters.insert("z0".into(), scale.z0());
    let coefficients = match scale.coefficients(REPORTED_COEFFICIENTS) {
        Ok(series) => {
            let check = coefficient_condition(&series);
            if !check.passed {
                diagnostics.push("fitted coefficients fail the growth check".into());
            }
            Some(CoefficientReport { coeffs: series.coeffs, check })
        }
        Err(e) => {
            diagnostics.push(format!("coefficients unavailable: {e}"));
            None
        }
    };
    Ok(FitResult {
        family: "pssmp".into(),
        hypothesis: Some(hypothesis),
        parameters,
        spec: Some(ProcessSpec::Pssmp { triplet: t, alpha }),
        residual_norm: fit.value.sqrt(),
        converged: fit.converged,
        evaluations: fit.evaluations,
        diagnostics,
        coefficients,
        mechanism: None,
    })
}

/// Fits the branching mechanism of a CSBP to transform data by least
/// squares on `ln value`. Extinct data need a Brownian part and recurrent
/// data must not have one; other combinations are a variant mismatch.
pub fn fit_csbp(
    data: &TransformGrid,
    variant: CsbpVariant,
    hypothesis: Hypothesis,
    p_known: Option<f64>,
    theta: Option<f64>,
) -> Result<FitResult> {
    data.validate()?;
    let (rows, dropped) = data.informative();
    let mut diagnostics = Vec::new();
    if dropped > 0 {
        diagnostics.push(format!("{dropped} rows with x = l carry no information and were excluded"));
    }
    if rows.is_empty() {
        return Err(Error::InsufficientData("no trusted rows with x > l".into()));
    }
    if rows.iter().any(|e| !(e.l > 0.0)) {
        return Err(Error::Validation("branching data need l > 0".into()));
    }
    if only_zero_q(&rows) {
        return Ok(root_only_fit("csbp", &rows, diagnostics));
    }
    let sigma2_range = match (variant, hypothesis) {
        (CsbpVariant::Extinct, Hypothesis::PureDrift) => {
            return Err(Error::Validation(
                "variant mismatch: an extinct mechanism needs a Brownian part, which a pure drift lacks".into(),
            ))
        }
        (CsbpVariant::Recurrent, Hypothesis::DriftBrownian) => {
            return Err(Error::Validation(
                "variant mismatch: a recurrent mechanism has no Brownian part; use pure_drift or drift_brownian_exp".into(),
            ))
        }
        (CsbpVariant::Extinct, _) => (1e-12, 1e6),
        (CsbpVariant::Recurrent, _) => (0.0, 0.0),
    };
    let layout = Layout { hypothesis, p_known };
    let mut start = match hypothesis {
        Hypothesis::PureDrift => deterministic_start(&rows, p_known),
        _ => layout.triplet(&{
            let mut v = vec![0.0, 1.0, 1.0, 1.0];
            v.truncate(hypothesis.names().len());
            if p_known.is_none() {
                v.push(0.0);
            }
            v
        }),
    };
    if variant == CsbpVariant::Recurrent {
        start.sigma2 = 0.0;
        if start.gamma >= 0.0 {
            start.gamma = -1.0;
        }
    }
    let objective = |t: &LevyTriplet| -> f64 {
        let Ok(c) = Exponent::new(t).and_then(|e| CsbpScale::new(e, variant, theta)) else {
            return f64::INFINITY;
        };
        log_ratio_residual(&rows, |q, y| Ok(c.scale(q, y)?.log_value))
    };
    let fit = simplex_fit(layout, &start, layout.bounds(sigma2_range), objective, rows.len());
    let Some(t) = fit.triplet else {
        return Err(Error::nonconvergence("csbp fit found no admissible parameters", fit.evaluations));
    };
    let exp = Exponent::new(&t)?;
    if CsbpVariant::of(&exp) != variant {
        return Err(Error::Validation(format!("variant mismatch: the fitted mechanism is {:?}", CsbpVariant::of(&exp))));
    }
    let scale = CsbpScale::new(exp.clone(), variant, theta)?;
    let z0 = scale.z0();
    let mechanism: Vec<(f64, f64)> = std::iter::once(0.0)
        .chain((-4..=6).map(|k| 2f64.powi(k)))
        .map(|u| (z0 + u, scale.mechanism_above_root(u)))
        .collect();
    let mut parameters = layout.parameters(&layout.vector(&t));
    parameters.insert("z0".into(), z0);
    Ok(FitResult {
        family: "csbp".into(),
        hypothesis: Some(hypothesis),
        parameters,
        spec: Some(ProcessSpec::Csbp { triplet: t, variant, theta }),
        residual_norm: fit.value.sqrt(),
        converged: fit.converged,
        evaluations: fit.evaluations,
        diagnostics,
        coefficients: None,
        mechanism: Some(mechanism),
    })
}

/// For `ψ(z) = b z` the transform is `exp(-(q ln(x/l) + p (x - l)) / b)`,
/// linear in `1/b` (and `p/b`).
fn deterministic_start(rows: &[TransformEntry], p_known: Option<f64>) -> LevyTriplet {
    let y: Vec<f64> = rows.iter().map(|e| -e.value.ln()).collect();
    let (b, p) = match p_known {
        Some(p) => {
            let u: Vec<f64> = rows.iter().map(|e| e.q * (e.x / e.l).ln() + p * e.gap()).collect();
            let inv_b = u.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / u.iter().map(|a| a * a).sum::<f64>();
            (1.0 / inv_b, p)
        }
        None => {
            let a = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { rows[i].q * (rows[i].x / rows[i].l).ln() } else { rows[i].gap() });
            let rhs = DVector::from_vec(y);
            match constrained_lstsq(&a, &rhs, &[1]) {
                Some((c, _)) if c[0] > 0.0 => (1.0 / c[0], c[1] / c[0]),
                _ => (1.0, 0.0),
            }
        }
    };
    let b = if b.is_finite() && b > 0.0 { b } else { 1.0 };
    LevyTriplet::brownian(-b, 0.0).with_killing(p)
}
