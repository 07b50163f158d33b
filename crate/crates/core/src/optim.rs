//! Box-constrained Nelder–Mead with deterministic restarts.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct NelderMeadOptions {
    /// Total objective evaluations over all restarts.
    pub max_evals: usize,
    pub restarts: usize,
    /// Stop once the best value is at or below this.
    pub target: f64,
    /// Stop a run when the simplex values agree to this (absolute + relative).
    pub ftol: f64,
    /// Stop a run when the simplex has shrunk to this size in every coordinate.
    pub xtol: f64,
    pub seed: u64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 10_000, restarts: 5, target: 0.0, ftol: 1e-15, xtol: 1e-12, seed: 0x5eed }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    /// A run ended on the tolerances or target rather than the budget.
    pub converged: bool,
}

fn clamp(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, lo), hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(*lo, *hi);
    }
}

struct Counter<'a, F> {
    f: &'a F,
    evals: usize,
    best: (Vec<f64>, f64),
}

impl<F: Fn(&[f64]) -> f64> Counter<'_, F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evals += 1;
        let v = (self.f)(x);
        let v = if v.is_nan() { f64::INFINITY } else { v };
        if v < self.best.1 {
            self.best = (x.to_vec(), v);
        }
        v
    }
}

/// Minimises `f` over the box `[lower, upper]` starting from `x0` with
/// initial simplex steps `step`. Each restart rebuilds the simplex around the
/// best point so far with steps rescaled by a seeded random factor.
pub fn minimize<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    step: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> Minimum {
    let n = x0.len();
    assert!(step.len() == n && lower.len() == n && upper.len() == n);
    let mut start = x0.to_vec();
    clamp(&mut start, lower, upper);
    let mut counter = Counter { f, evals: 0, best: (start.clone(), f64::INFINITY) };
    counter.eval(&start);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut converged = false;
    let mut scale = 1.0;
    for _ in 0..=opts.restarts {
        if counter.evals >= opts.max_evals || counter.best.1 <= opts.target {
            break;
        }
        let centre = counter.best.0.clone();
        let steps: Vec<f64> = step.iter().map(|s| s * scale).collect();
        converged = run(&mut counter, &centre, &steps, lower, upper, opts);
        scale = 0.1 + rng.random::<f64>();
    }
    Minimum {
        converged: converged || counter.best.1 <= opts.target,
        x: counter.best.0,
        value: counter.best.1,
        evaluations: counter.evals,
    }
}

fn run<F: Fn(&[f64]) -> f64>(
    c: &mut Counter<'_, F>,
    centre: &[f64],
    steps: &[f64],
    lower: &[f64],
    upper: &[f64],
    opts: &NelderMeadOptions,
) -> bool {
    let n = centre.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(centre.to_vec());
    for i in 0..n {
        let mut p = centre.to_vec();
        p[i] += steps[i];
        if p[i] > upper[i] {
            p[i] = centre[i] - steps[i];
        }
        clamp(&mut p, lower, upper);
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| c.eval(p)).collect();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let (best, worst) = (vals[0], vals[n]);
        if best <= opts.target {
            return true;
        }
        let spread = (0..n).all(|j| {
            let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p[j]), hi.max(p[j]))
            });
            hi - lo <= opts.xtol * (1.0 + pts[0][j].abs())
        });
        if (worst - best).abs() <= opts.ftol * (1.0 + best.abs()) || spread {
            return true;
        }
        if c.evals >= opts.max_evals {
            return false;
        }
        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| {
            let mut p: Vec<f64> = (0..n).map(|j| centroid[j] + t * (pts[n][j] - centroid[j])).collect();
            clamp(&mut p, lower, upper);
            p
        };
        let xr = along(-alpha);
        let fr = c.eval(&xr);
        if fr < vals[0] {
            let xe = along(-gamma);
            let fe = c.eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let p = along(-rho);
                let v = c.eval(&p);
                (p, v)
            } else {
                let p = along(rho);
                let v = c.eval(&p);
                (p, v)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = (0..n).map(|j| pts[0][j] + sigma * (pts[i][j] - pts[0][j])).collect();
                    vals[i] = c.eval(&p);
                    pts[i] = p;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = minimize(&f, &[-1.2, 1.0], &[0.5, 0.5], &[-5.0, -5.0], &[5.0, 5.0], &NelderMeadOptions::default());
        assert!(m.converged);
        assert!((m.x[0] - 1.0).abs() < 1e-6 && (m.x[1] - 1.0).abs() < 1e-6, "{m:?}");
        assert!(m.evaluations <= 10_000);
    }

    #[test]
    fn respects_bounds_and_is_deterministic() {
        let f = |x: &[f64]| (x[0] + 3.0).powi(2) + (x[1] - 0.5).powi(2);
        let opts = NelderMeadOptions::default();
        let a = minimize(&f, &[1.0, 1.0], &[0.3, 0.3], &[0.0, 0.0], &[2.0, 2.0], &opts);
        let b = minimize(&f, &[1.0, 1.0], &[0.3, 0.3], &[0.0, 0.0], &[2.0, 2.0], &opts);
        assert_eq!(a, b);
        assert!(a.x[0].abs() < 1e-8 && (a.x[1] - 0.5).abs() < 1e-6);
    }
}
