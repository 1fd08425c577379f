//! Box-constrained maximizers: a locally biased DIRECT search and a projected
//! quasi-Newton ascent.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::error::{invalid, Result};

/// Axis-aligned box with optional periodic coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Period of each coordinate, if it is an angle that wraps around.
    pub period: Vec<Option<f64>>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() || lower.is_empty() {
            return Err(invalid("box bounds must have equal, positive length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return Err(invalid("box lower bound exceeds upper bound"));
        }
        let period = vec![None; lower.len()];
        Ok(Self { lower, upper, period })
    }

    pub fn with_period(mut self, dim: usize, period: f64) -> Self {
        self.period[dim] = Some(period);
        self
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| *l <= *v && *v <= *u)
    }

    /// Wraps periodic coordinates, then clamps into the box.
    pub fn project(&self, x: &mut [f64]) {
        for i in 0..x.len() {
            if let Some(p) = self.period[i] {
                let base = self.lower[i];
                if x[i] < self.lower[i] || x[i] > self.upper[i] {
                    x[i] = base + (x[i] - base).rem_euclid(p);
                }
            }
            x[i] = x[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, v)| {
                let x = self.lower[i] + v * (self.upper[i] - self.lower[i]);
                x.clamp(self.lower[i], self.upper[i])
            })
            .collect()
    }
}

/// Budget of a global search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Budget {
    pub max_evals: usize,
    pub max_time: Option<Duration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

#[derive(Debug, Clone)]
struct Rect {
    centre: Vec<f64>,
    levels: Vec<u32>,
    value: f64,
}

impl Rect {
    fn min_level(&self) -> u32 {
        *self.levels.iter().min().expect("non-empty")
    }
}

const HULL_EPS: f64 = 1e-4;

/// Deterministic DIRECT-L maximization of `f` over `domain`.
///
/// Evaluations inside one subdivision round run in parallel; results are
/// collected in order, so the outcome does not depend on scheduling.
pub fn global_maximize<F>(f: F, domain: &BoxDomain, budget: Budget) -> OptimResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let start = Instant::now();
    let n = domain.dim();
    let eval = |u: &[f64]| -> f64 {
        let v = f(&domain.from_unit(u));
        if v.is_nan() {
            f64::NEG_INFINITY
        } else {
            v
        }
    };
    let centre = vec![0.5; n];
    let v0 = eval(&centre);
    let mut evals = 1;
    let mut best = (centre.clone(), v0);
    let mut rects = vec![Rect {
        centre,
        levels: vec![0; n],
        value: v0,
    }];
    let third = |k: u32| 3f64.powi(-(k as i32));

    while evals < budget.max_evals {
        if budget.max_time.is_some_and(|t| start.elapsed() >= t) {
            break;
        }
        let selected = potentially_optimal(&rects, best.1);
        // sample points of every selected rectangle
        let mut jobs: Vec<(usize, usize, f64, Vec<f64>)> = Vec::new();
        let mut plans: Vec<(usize, Vec<usize>)> = Vec::new();
        for &ri in &selected {
            let r = &rects[ri];
            let k = r.min_level();
            let dims: Vec<usize> = (0..n).filter(|&i| r.levels[i] == k).collect();
            let delta = third(k + 1);
            for &d in &dims {
                for sgn in [-1.0, 1.0] {
                    let mut c = r.centre.clone();
                    c[d] += sgn * delta;
                    jobs.push((ri, d, sgn, c));
                }
            }
            plans.push((ri, dims));
        }
        let room = budget.max_evals - evals;
        if jobs.len() > room {
            // keep only rectangles whose samples all fit
            let mut kept = 0;
            let mut keep_plans = Vec::new();
            for (ri, dims) in plans {
                if kept + 2 * dims.len() <= room {
                    kept += 2 * dims.len();
                    keep_plans.push((ri, dims));
                }
            }
            if keep_plans.is_empty() {
                // spend the remaining budget on the first samples
                jobs.truncate(room);
                let vals: Vec<f64> = jobs.par_iter().map(|j| eval(&j.3)).collect();
                evals += vals.len();
                for (j, v) in jobs.iter().zip(vals) {
                    if v > best.1 {
                        best = (j.3.clone(), v);
                    }
                }
                break;
            }
            let ids: Vec<usize> = keep_plans.iter().map(|p| p.0).collect();
            jobs.retain(|j| ids.contains(&j.0));
            plans = keep_plans;
        }
        let vals: Vec<f64> = jobs.par_iter().map(|j| eval(&j.3)).collect();
        evals += vals.len();
        let mut off = 0;
        for (ri, dims) in plans {
            let m = dims.len();
            let mut samples: Vec<(usize, [f64; 2], [Vec<f64>; 2])> = Vec::with_capacity(m);
            for (q, &d) in dims.iter().enumerate() {
                let lo = &jobs[off + 2 * q];
                let hi = &jobs[off + 2 * q + 1];
                samples.push((d, [vals[off + 2 * q], vals[off + 2 * q + 1]], [lo.3.clone(), hi.3.clone()]));
            }
            off += 2 * m;
            for (_, v, c) in &samples {
                for s in 0..2 {
                    if v[s] > best.1 {
                        best = (c[s].clone(), v[s]);
                    }
                }
            }
            // split the best dimension first
            samples.sort_by(|a, b| {
                let wa = a.1[0].max(a.1[1]);
                let wb = b.1[0].max(b.1[1]);
                wb.total_cmp(&wa).then(a.0.cmp(&b.0))
            });
            let mut levels = rects[ri].levels.clone();
            for (d, v, c) in samples {
                levels[d] += 1;
                for s in 0..2 {
                    rects.push(Rect {
                        centre: c[s].clone(),
                        levels: levels.clone(),
                        value: v[s],
                    });
                }
            }
            rects[ri].levels = levels;
        }
    }
    OptimResult {
        x: domain.from_unit(&best.0),
        value: best.1,
        evals,
    }
}

/// Indices of potentially optimal rectangles (maximization), one per size
/// class, from the upper convex hull of (size, value).
fn potentially_optimal(rects: &[Rect], fbest: f64) -> Vec<usize> {
    use std::collections::BTreeMap;
    // size class = min level (larger level = smaller rectangle in max-norm)
    let mut groups: BTreeMap<u32, usize> = BTreeMap::new();
    for (i, r) in rects.iter().enumerate() {
        let k = r.min_level();
        match groups.get(&k) {
            Some(&j) if rects[j].value >= r.value => {}
            _ => {
                groups.insert(k, i);
            }
        }
    }
    // points sorted by size ascending: (size, value, index)
    let mut pts: Vec<(f64, f64, usize)> = groups
        .iter()
        .rev()
        .map(|(&k, &i)| (0.5 * 3f64.powi(-(k as i32)), rects[i].value, i))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    // start from the best value (largest size among ties)
    let mut start = 0;
    for (i, p) in pts.iter().enumerate() {
        if p.1 >= pts[start].1 {
            start = i;
        }
    }
    // upper hull from `start` towards larger sizes
    let mut hull: Vec<usize> = vec![start];
    for i in start + 1..pts.len() {
        while hull.len() >= 2 {
            let a = pts[hull[hull.len() - 2]];
            let b = pts[hull[hull.len() - 1]];
            let c = pts[i];
            // remove b if it lies on or below segment a–c
            let cross = (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0);
            if cross >= 0.0 {
                hull.pop();
            } else {
                break;
            }
        }
        if hull.len() == 1 {
            let a = pts[hull[0]];
            if pts[i].1 >= a.1 && pts[i].0 > a.0 {
                hull.pop();
            }
        }
        hull.push(i);
    }
    let mut out = Vec::new();
    for (h, &pi) in hull.iter().enumerate() {
        let p = pts[pi];
        let keep = if h + 1 < hull.len() {
            let q = pts[hull[h + 1]];
            // largest admissible rate of improvement for p
            let k = (p.1 - q.1) / (q.0 - p.0);
            let k = k.max(0.0);
            p.1 + k * p.0 >= fbest + HULL_EPS * fbest.abs()
        } else {
            true
        };
        if keep {
            out.push(p.2);
        }
    }
    if out.is_empty() {
        out.push(pts[pts.len() - 1].2);
    }
    out
}

/// Options of [`local_maximize`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOptions {
    pub ftol: f64,
    pub xtol: f64,
    pub max_iters: usize,
    /// Step of the central-difference fallback.
    pub fd_step: f64,
}

impl Default for LocalOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-8,
            xtol: 1e-8,
            max_iters: 100,
            fd_step: 1e-6,
        }
    }
}

/// Central differences of `f` at `x`, one-sided next to the bounds.
pub fn finite_difference<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], domain: &BoxDomain, h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let step = h;
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] = (x[i] + step).min(domain.upper[i]);
            xm[i] = (x[i] - step).max(domain.lower[i]);
            let den = xp[i] - xm[i];
            if den <= 0.0 {
                0.0
            } else {
                (f(&xp) - f(&xm)) / den
            }
        })
        .collect()
}

/// Projected quasi-Newton (BFGS) ascent with Armijo backtracking. The
/// objective never decreases along the iterates. Whenever the projection
/// clips or wraps a step, the curvature model restarts from a scaled identity.
///
/// `fg` returns the value and, when available, the gradient; a missing or
/// non-finite gradient is replaced by central differences of the value.
pub fn local_maximize<F>(fg: F, domain: &BoxDomain, start: &[f64], opts: LocalOptions) -> OptimResult
where
    F: Fn(&[f64], bool) -> (f64, Option<Vec<f64>>),
{
    let n = start.len();
    let value_only = |x: &[f64]| fg(x, false).0;
    let grad_at = |x: &[f64]| -> (f64, Vec<f64>) {
        let (v, g) = fg(x, true);
        match g {
            Some(g) if g.iter().all(|c| c.is_finite()) => (v, g),
            _ => (v, finite_difference(&value_only, x, domain, opts.fd_step)),
        }
    };
    let mut x = start.to_vec();
    domain.project(&mut x);
    let (mut fx, mut g) = grad_at(&x);
    let mut evals = 1;
    if !fx.is_finite() {
        return OptimResult { x, value: fx, evals };
    }
    let width = domain
        .lower
        .iter()
        .zip(&domain.upper)
        .map(|(l, u)| u - l)
        .fold(f64::INFINITY, f64::min)
        .max(1e-12);
    let gmax = g.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if gmax == 0.0 {
        return OptimResult { x, value: fx, evals };
    }
    // inverse Hessian of −f
    let mut scale = 0.1 * width / gmax;
    let mut h = scaled_identity(n, scale);
    let mut fresh = true;
    for _ in 0..opts.max_iters {
        let dir: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * g[j]).sum()).collect();
        let mut accepted = None;
        let mut s = 1.0;
        for _ in 0..40 {
            let raw: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + s * di).collect();
            let mut xn = raw.clone();
            domain.project(&mut xn);
            let dx: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            let dn = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dn == 0.0 {
                break;
            }
            let fnew = value_only(&xn);
            evals += 1;
            let rise: f64 = dx.iter().zip(&g).map(|(d, gi)| d * gi).sum();
            // wrapped coordinates make dx meaningless for the Armijo term; fall back to plain ascent
            let armijo = if rise > 0.0 { fnew >= fx + 1e-4 * rise } else { fnew > fx };
            if fnew.is_finite() && armijo {
                let clipped = xn.iter().zip(&raw).any(|(a, b)| (a - b).abs() > 1e-12 * (1.0 + b.abs()));
                accepted = Some((xn, fnew, dx, dn, clipped));
                break;
            }
            s *= 0.5;
        }
        let Some((xn, fnew, dx, dn, clipped)) = accepted else {
            if fresh {
                break;
            }
            // the curvature model failed; retry once along the scaled gradient
            h = scaled_identity(n, scale);
            fresh = true;
            continue;
        };
        let (_, gn) = grad_at(&xn);
        evals += 1;
        let df = fnew - fx;
        // gradient change of −f
        let yk: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| b - a).collect();
        let sy: f64 = dx.iter().zip(&yk).map(|(a, b)| a * b).sum();
        let yy: f64 = yk.iter().map(|v| v * v).sum();
        x = xn;
        fx = fnew;
        g = gn;
        let small_step = df.abs() < opts.ftol || dn < opts.xtol;
        if clipped || !(sy > 1e-12 * dn * yy.sqrt()) {
            if sy > 0.0 && yy > 0.0 {
                scale = sy / yy;
            }
            h = scaled_identity(n, scale);
            fresh = true;
            if small_step && 0.5 * scale * g.iter().map(|v| v * v).sum::<f64>() < opts.ftol {
                break;
            }
            continue;
        }
        if fresh {
            scale = sy / yy;
            h = scaled_identity(n, scale);
            fresh = false;
        }
        bfgs_update(&mut h, &dx, &yk, sy);
        // a small step only ends the ascent once the model also predicts little further gain
        let gain: f64 = 0.5 * (0..n).map(|i| g[i] * (0..n).map(|j| h[i][j] * g[j]).sum::<f64>()).sum::<f64>();
        if small_step && gain < opts.ftol {
            break;
        }
    }
    OptimResult { x, value: fx, evals }
}

fn scaled_identity(n: usize, s: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { s } else { 0.0 }).collect()).collect()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ` with `ρ = 1 / sᵀy`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i][j] * y[j]).sum()).collect();
    let yhy: f64 = y.iter().zip(&hy).map(|(a, b)| a * b).sum();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}
