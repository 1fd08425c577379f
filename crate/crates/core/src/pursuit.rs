//! The discretized upward-continuation operator and the regularized
//! (orthogonal) functional matching pursuit iteration.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::element::{inner_sobolev, DictionaryElement, ElementKey, PenaltyNorm};
use crate::error::{invalid, Degeneracy, Error, Result};
use crate::geom::{scale, unit_vector_partials, Grid, Vec3};
use crate::kernel::{upward_grad, upward_value, KernelKind};
use crate::sh::{coeff_count, eval_all_at};

pub(crate) fn dotv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm2(a: &[f64]) -> f64 {
    dotv(a, a).sqrt()
}

/// Grid, satellite radius and penalty norm, with a per-element column cache.
pub struct ForwardModel {
    grid: Grid,
    sigma: f64,
    pen: PenaltyNorm,
    eta: Vec<Vec3>,
    cache: RwLock<HashMap<ElementKey, Arc<Vec<f64>>>>,
    sh_block: RwLock<Option<(usize, Arc<DMatrix<f64>>)>>,
}

impl std::fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardModel")
            .field("points", &self.grid.len())
            .field("sigma", &self.sigma)
            .field("pen", &self.pen)
            .finish()
    }
}

impl ForwardModel {
    pub fn new(grid: Grid, sigma: f64, pen: PenaltyNorm) -> Result<Self> {
        if !(sigma > 1.0) || !sigma.is_finite() {
            return Err(invalid(format!("satellite radius sigma = {sigma} must exceed 1")));
        }
        if grid.is_empty() {
            return Err(invalid("forward model needs at least one grid point"));
        }
        let eta = grid.points().iter().map(|p| p.cart()).collect();
        Ok(Self {
            grid,
            sigma,
            pen,
            eta,
            cache: RwLock::new(HashMap::new()),
            sh_block: RwLock::new(None),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn pen(&self) -> &PenaltyNorm {
        &self.pen
    }

    pub fn len(&self) -> usize {
        self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eta.is_empty()
    }

    /// `ℓ × (nmax+1)²` matrix of damped harmonics `σ^{-n-1} Y_{n,j}(η_i)`.
    pub fn sh_block(&self, nmax: usize) -> Arc<DMatrix<f64>> {
        if let Some((n, b)) = &*self.sh_block.read().expect("forward cache poisoned") {
            if *n >= nmax {
                return Arc::clone(b);
            }
        }
        let cols = coeff_count(nmax);
        let damp: Vec<f64> = (0..cols)
            .map(|k| {
                let n = (k as f64).sqrt() as usize;
                let n = if (n + 1) * (n + 1) <= k { n + 1 } else { n };
                self.sigma.powi(-(n as i32) - 1)
            })
            .collect();
        let rows: Vec<Vec<f64>> = self
            .grid
            .points()
            .par_iter()
            .map(|p| {
                let mut ys = eval_all_at(nmax, p.phi(), p.t());
                ys.iter_mut().zip(&damp).for_each(|(y, d)| *y *= d);
                ys
            })
            .collect();
        let block = Arc::new(DMatrix::from_fn(rows.len(), cols, |i, k| rows[i][k]));
        *self.sh_block.write().expect("forward cache poisoned") = Some((nmax, Arc::clone(&block)));
        block
    }

    /// `T_ℓ e`, computed once per element and cached.
    pub fn apply_forward(&self, e: &DictionaryElement) -> Arc<Vec<f64>> {
        let key = e.key();
        if let Some(c) = self.cache.read().expect("forward cache poisoned").get(&key) {
            return Arc::clone(c);
        }
        let col = Arc::new(self.apply_uncached(e));
        let mut w = self.cache.write().expect("forward cache poisoned");
        Arc::clone(w.entry(key).or_insert(col))
    }

    /// `T_ℓ e` without touching the cache.
    pub fn apply_uncached(&self, e: &DictionaryElement) -> Vec<f64> {
        match e {
            DictionaryElement::Sh(i) => {
                let block = self.sh_block(i.n);
                block.column(i.linear()).iter().copied().collect()
            }
            DictionaryElement::Slepian(s) => {
                let block = self.sh_block(s.band_limit);
                let g = s.coeffs.table();
                (0..self.len())
                    .map(|i| g.iter().enumerate().map(|(k, v)| block[(i, k)] * v).sum())
                    .collect()
            }
            DictionaryElement::Apk { .. } | DictionaryElement::Apw { .. } => {
                let (kind, x, _) = e.kernel_parts().expect("kernel element");
                let f = e.scale_factor();
                let c = x.cart();
                let sigma = self.sigma;
                self.eta
                    .par_iter()
                    .map(|eta| f * upward_value(kind, &c, sigma, eta))
                    .collect()
            }
        }
    }

    /// Column of an unnormalized kernel at `(r, φ, t)` and its partial
    /// derivatives with respect to `r`, `φ` and `t`.
    pub fn kernel_column_grad(&self, kind: KernelKind, r: f64, phi: f64, t: f64) -> [Vec<f64>; 4] {
        let xi = crate::geom::unit_vector(phi, t);
        let (dphi, dt) = unit_vector_partials(phi, t);
        let x = scale(&xi, r);
        let sigma = self.sigma;
        let rows: Vec<[f64; 4]> = self
            .eta
            .par_iter()
            .map(|eta| {
                let v = upward_value(kind, &x, sigma, eta);
                let g = upward_grad(kind, &x, sigma, eta);
                let gr = g[0] * xi[0] + g[1] * xi[1] + g[2] * xi[2];
                let gp = r * (g[0] * dphi[0] + g[1] * dphi[1] + g[2] * dphi[2]);
                let gt = r * (g[0] * dt[0] + g[1] * dt[1] + g[2] * dt[2]);
                [v, gr, gp, gt]
            })
            .collect();
        let mut out: [Vec<f64>; 4] = Default::default();
        for k in 0..4 {
            out[k] = rows.iter().map(|r| r[k]).collect();
        }
        out
    }

    /// Column of an unnormalized kernel at `(r, φ, t)`.
    pub fn kernel_column(&self, kind: KernelKind, r: f64, phi: f64, t: f64) -> Vec<f64> {
        let x = scale(&crate::geom::unit_vector(phi, t), r);
        let sigma = self.sigma;
        self.eta.par_iter().map(|eta| upward_value(kind, &x, sigma, eta)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Rfmp,
    Rofmp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSchedule {
    Stationary,
    /// `λ_N = λ₀ ‖y‖ / N` for the `N`-th selection.
    NonStationary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PursuitConfig {
    pub variant: Variant,
    pub lambda0: f64,
    /// Multiply `lambda0` by `‖y‖`.
    pub lambda_relative: bool,
    pub schedule: LambdaSchedule,
    /// Noise-level threshold on the relative data error.
    pub rho: f64,
    pub max_iterations: usize,
    /// Orthogonal variant: restart the projections after this many iterations.
    pub restart_period: usize,
}

impl Default for PursuitConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Rofmp,
            lambda0: 0.0,
            lambda_relative: true,
            schedule: LambdaSchedule::Stationary,
            rho: 0.05,
            max_iterations: 1000,
            restart_period: 100,
        }
    }
}

impl PursuitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda0 >= 0.0) {
            return Err(invalid("lambda0 must be non-negative"));
        }
        if !(self.rho >= 0.0) {
            return Err(invalid("noise threshold rho must be non-negative"));
        }
        if self.restart_period == 0 {
            return Err(invalid("restart period must be at least 1"));
        }
        Ok(())
    }
}

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    DataError,
    MaxIterations,
    DictionaryExhausted,
}

#[derive(Debug, Clone)]
pub struct Chosen {
    pub element: DictionaryElement,
    pub column: Arc<Vec<f64>>,
    pub alpha: f64,
    /// 1-based iteration of selection.
    pub iteration: usize,
}

/// Objective value `A² / B` with its numerator and denominator parts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub value: f64,
    pub a: f64,
    pub b: f64,
}

/// Precomputed candidate quantities against the current state.
#[derive(Debug, Clone, Copy)]
pub struct CandidateInputs<'a> {
    /// `⟨R, T d⟩`.
    pub t_dot_r: f64,
    /// `‖T d‖²`.
    pub t_norm_sq: f64,
    /// `Qᵀ T d` over the orthonormal window basis (ignored by the plain variant).
    pub qt: &'a [f64],
    /// Sobolev products `⟨d_n, d⟩` with every chosen element.
    pub s: &'a [f64],
    /// `‖d‖²` in the Sobolev norm.
    pub s_self: f64,
}

/// Directional derivatives of [`CandidateInputs`].
#[derive(Debug, Clone)]
pub struct CandidateTangent {
    pub t_dot_r: f64,
    pub t_norm_sq: f64,
    pub qt: Vec<f64>,
    pub s: Vec<f64>,
    pub s_self: f64,
}

/// Relative threshold below which a projected column counts as inside the span.
pub const SPAN_TOL: f64 = 1e-14;
/// Absolute threshold for a vanishing denominator.
pub const DENOM_TOL: f64 = 1e-14;

#[derive(Debug, Clone)]
pub struct PursuitState {
    y: Vec<f64>,
    y_norm: f64,
    residual: Vec<f64>,
    chosen: Vec<Chosen>,
    /// Sobolev Gram matrix of all chosen elements.
    gram: Vec<Vec<f64>>,
    window_start: usize,
    epoch: usize,
    q: Vec<Vec<f64>>,
    w_norm: Vec<f64>,
    /// `beta_table[k][n] = β_n(d_k)` for window positions `n < k`.
    beta_table: Vec<Vec<f64>>,
    q_dot_r: Vec<f64>,
    h_window: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub alpha: f64,
    pub objective: Objective,
}

impl PursuitState {
    /// `f₀ ≡ 0`, `R⁰ = y`.
    pub fn new(y: Vec<f64>) -> Self {
        let y_norm = norm2(&y);
        Self {
            residual: y.clone(),
            y,
            y_norm,
            chosen: Vec::new(),
            gram: Vec::new(),
            window_start: 0,
            epoch: 0,
            q: Vec::new(),
            w_norm: Vec::new(),
            beta_table: Vec::new(),
            q_dot_r: Vec::new(),
            h_window: Vec::new(),
        }
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_norm(&self) -> f64 {
        self.y_norm
    }

    pub fn residual(&self) -> &[f64] {
        &self.residual
    }

    pub fn chosen(&self) -> &[Chosen] {
        &self.chosen
    }

    pub fn iteration(&self) -> usize {
        self.chosen.len()
    }

    pub fn coefficients(&self) -> Vec<f64> {
        self.chosen.iter().map(|c| c.alpha).collect()
    }

    pub fn gram(&self) -> &[Vec<f64>] {
        &self.gram
    }

    /// Index of the first element of the current orthogonal window.
    pub fn window_start(&self) -> usize {
        self.window_start
    }

    pub fn window_len(&self) -> usize {
        self.chosen.len() - self.window_start
    }

    /// Counter incremented by every restart.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Orthonormal basis of the projected window columns.
    pub fn ortho_basis(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn rel_data_error(&self) -> f64 {
        if self.y_norm == 0.0 {
            0.0
        } else {
            norm2(&self.residual) / self.y_norm
        }
    }

    /// Regularization parameter used for the next selection.
    pub fn lambda(&self, cfg: &PursuitConfig) -> f64 {
        let base = if cfg.lambda_relative {
            cfg.lambda0 * self.y_norm
        } else {
            cfg.lambda0
        };
        match cfg.schedule {
            LambdaSchedule::Stationary => base,
            LambdaSchedule::NonStationary => base / (self.chosen.len() + 1) as f64,
        }
    }

    fn beta_from_qt(&self, qt: &[f64]) -> Vec<f64> {
        let nw = self.q.len();
        let b: Vec<f64> = (0..nw).map(|k| qt[k] / self.w_norm[k]).collect();
        let mut beta = b.clone();
        for k in 0..nw {
            for n in 0..k {
                beta[n] -= b[k] * self.beta_table[k][n];
            }
        }
        beta
    }

    /// Objective of a candidate under the active variant.
    pub fn objective(&self, cfg: &PursuitConfig, c: &CandidateInputs) -> std::result::Result<Objective, Degeneracy> {
        self.objective_full(cfg, c).map(|(o, _)| o)
    }

    fn objective_full(
        &self,
        cfg: &PursuitConfig,
        c: &CandidateInputs,
    ) -> std::result::Result<(Objective, Vec<f64>), Degeneracy> {
        let lambda = self.lambda(cfg);
        let alpha_dot_s: f64 = self.chosen.iter().zip(c.s).map(|(ch, s)| ch.alpha * s).sum();
        let (a, b, beta) = match cfg.variant {
            Variant::Rfmp => (
                c.t_dot_r - lambda * alpha_dot_s,
                c.t_norm_sq + lambda * c.s_self,
                Vec::new(),
            ),
            Variant::Rofmp => {
                let nw = self.q.len();
                let qt = &c.qt[..nw];
                let p_sq = c.t_norm_sq - dotv(qt, qt);
                if p_sq <= SPAN_TOL * c.t_norm_sq {
                    return Err(Degeneracy::InSpan);
                }
                let r_dot_p = c.t_dot_r - dotv(qt, &self.q_dot_r);
                let beta = self.beta_from_qt(qt);
                let sw = &c.s[self.window_start..];
                let mut a = r_dot_p;
                let mut b = p_sq;
                if lambda != 0.0 {
                    let beta_h = dotv(&beta, &self.h_window);
                    a -= lambda * (alpha_dot_s - beta_h);
                    let mut bgb = 0.0;
                    for (i, bi) in beta.iter().enumerate() {
                        let row = &self.gram[self.window_start + i];
                        let mut acc = 0.0;
                        for (j, bj) in beta.iter().enumerate() {
                            acc += row[self.window_start + j] * bj;
                        }
                        bgb += bi * acc;
                    }
                    b += lambda * (c.s_self - 2.0 * dotv(&beta, sw) + bgb);
                }
                (a, b, beta)
            }
        };
        if !(b > DENOM_TOL) {
            return Err(Degeneracy::ZeroDenominator);
        }
        Ok((Objective { value: a * a / b, a, b }, beta))
    }

    /// Objective and its directional derivatives along each tangent.
    pub fn objective_with_tangents(
        &self,
        cfg: &PursuitConfig,
        c: &CandidateInputs,
        tangents: &[CandidateTangent],
    ) -> std::result::Result<(Objective, Vec<f64>), Degeneracy> {
        let (obj, beta) = self.objective_full(cfg, c)?;
        let lambda = self.lambda(cfg);
        let ws = self.window_start;
        let grads = tangents
            .iter()
            .map(|dt| {
                let alpha_dot_ds: f64 = self.chosen.iter().zip(&dt.s).map(|(ch, s)| ch.alpha * s).sum();
                let (da, db) = match cfg.variant {
                    Variant::Rfmp => (
                        dt.t_dot_r - lambda * alpha_dot_ds,
                        dt.t_norm_sq + lambda * dt.s_self,
                    ),
                    Variant::Rofmp => {
                        let nw = self.q.len();
                        let qt = &c.qt[..nw];
                        let dqt = &dt.qt[..nw];
                        let dp_sq = dt.t_norm_sq - 2.0 * dotv(qt, dqt);
                        let dr_dot_p = dt.t_dot_r - dotv(dqt, &self.q_dot_r);
                        let dbeta = self.beta_from_qt(dqt);
                        let mut da = dr_dot_p;
                        let mut db = dp_sq;
                        if lambda != 0.0 {
                            da -= lambda * (alpha_dot_ds - dotv(&dbeta, &self.h_window));
                            let sw = &c.s[ws..];
                            let dsw = &dt.s[ws..];
                            let mut dbgb = 0.0;
                            for (i, dbi) in dbeta.iter().enumerate() {
                                let row = &self.gram[ws + i];
                                let mut acc = 0.0;
                                for (j, bj) in beta.iter().enumerate() {
                                    acc += row[ws + j] * bj;
                                }
                                dbgb += 2.0 * dbi * acc;
                            }
                            db += lambda
                                * (dt.s_self - 2.0 * dotv(&dbeta, sw) - 2.0 * dotv(&beta, dsw) + dbgb);
                        }
                        (da, db)
                    }
                };
                (2.0 * obj.a * da * obj.b - obj.a * obj.a * db) / (obj.b * obj.b)
            })
            .collect();
        Ok((obj, grads))
    }

    /// Projections `Qᵀ v` onto the window basis.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        self.q.iter().map(|q| dotv(q, v)).collect()
    }

    /// Sobolev products of `d` with all chosen elements.
    pub fn sobolev_row(&self, fm: &ForwardModel, d: &DictionaryElement) -> Result<Vec<f64>> {
        self.chosen
            .iter()
            .map(|c| inner_sobolev(&c.element, d, fm.pen()))
            .collect()
    }

    /// Evaluates the active objective for an arbitrary element from scratch.
    pub fn evaluate(
        &self,
        fm: &ForwardModel,
        cfg: &PursuitConfig,
        d: &DictionaryElement,
    ) -> Result<std::result::Result<Objective, Degeneracy>> {
        let t = fm.apply_forward(d);
        let qt = self.project(&t);
        let s = self.sobolev_row(fm, d)?;
        let s_self = inner_sobolev(d, d, fm.pen())?;
        let inputs = CandidateInputs {
            t_dot_r: dotv(&t, &self.residual),
            t_norm_sq: dotv(&t, &t),
            qt: &qt,
            s: &s,
            s_self,
        };
        Ok(self.objective(cfg, &inputs))
    }

    /// Projection of `v` onto the orthogonal complement of the window span.
    pub fn project_out(&self, v: &[f64]) -> Vec<f64> {
        let mut p = v.to_vec();
        for q in &self.q {
            let c = dotv(q, &p);
            p.iter_mut().zip(q).for_each(|(pi, qi)| *pi -= c * qi);
        }
        p
    }

    /// Adds `d` with the optimal weight for the active variant.
    pub fn step(&mut self, fm: &ForwardModel, cfg: &PursuitConfig, d: &DictionaryElement) -> Result<StepInfo> {
        let t = fm.apply_forward(d);
        let s = self.sobolev_row(fm, d)?;
        let s_self = inner_sobolev(d, d, fm.pen())?;
        let lambda = self.lambda(cfg);
        let iteration = self.chosen.len() + 1;
        match cfg.variant {
            Variant::Rfmp => {
                let inputs = CandidateInputs {
                    t_dot_r: dotv(&t, &self.residual),
                    t_norm_sq: dotv(&t, &t),
                    qt: &[],
                    s: &s,
                    s_self,
                };
                let obj = self.objective(cfg, &inputs).map_err(Error::Degenerate)?;
                let alpha = obj.a / obj.b;
                self.residual.iter_mut().zip(t.iter()).for_each(|(r, ti)| *r -= alpha * ti);
                self.push_chosen(d, t, alpha, s, s_self, iteration);
                Ok(StepInfo { alpha, objective: obj })
            }
            Variant::Rofmp => {
                // explicit projection with one reorthogonalization pass
                let nw = self.q.len();
                let mut qt = self.project(&t);
                let mut p = t.to_vec();
                for (q, c) in self.q.iter().zip(&qt) {
                    p.iter_mut().zip(q).for_each(|(pi, qi)| *pi -= c * qi);
                }
                for k in 0..nw {
                    let c = dotv(&self.q[k], &p);
                    qt[k] += c;
                    p.iter_mut().zip(&self.q[k]).for_each(|(pi, qi)| *pi -= c * qi);
                }
                let t_norm_sq = dotv(&t, &t);
                let p_sq = dotv(&p, &p);
                if p_sq <= SPAN_TOL * t_norm_sq {
                    return Err(Error::Degenerate(Degeneracy::InSpan));
                }
                let beta = self.beta_from_qt(&qt);
                let alpha_dot_s: f64 = self.chosen.iter().zip(&s).map(|(ch, s)| ch.alpha * s).sum();
                let mut a = dotv(&self.residual, &p);
                let mut b = p_sq;
                if lambda != 0.0 {
                    let ws = self.window_start;
                    a -= lambda * (alpha_dot_s - dotv(&beta, &self.h_window));
                    let mut bgb = 0.0;
                    for (i, bi) in beta.iter().enumerate() {
                        for (j, bj) in beta.iter().enumerate() {
                            bgb += bi * self.gram[ws + i][ws + j] * bj;
                        }
                    }
                    b += lambda * (s_self - 2.0 * dotv(&beta, &s[ws..]) + bgb);
                }
                if !(b > DENOM_TOL) {
                    return Err(Error::Degenerate(Degeneracy::ZeroDenominator));
                }
                let alpha = a / b;
                self.residual.iter_mut().zip(&p).for_each(|(r, pi)| *r -= alpha * pi);
                for (n, bn) in beta.iter().enumerate() {
                    self.chosen[self.window_start + n].alpha -= alpha * bn;
                }
                let w = p_sq.sqrt();
                let qn: Vec<f64> = p.iter().map(|v| v / w).collect();
                self.q.push(qn);
                self.w_norm.push(w);
                self.beta_table.push(beta);
                self.push_chosen(d, t, alpha, s, s_self, iteration);
                Ok(StepInfo {
                    alpha,
                    objective: Objective { value: a * a / b, a, b },
                })
            }
        }
    }

    fn push_chosen(&mut self, d: &DictionaryElement, t: Arc<Vec<f64>>, alpha: f64, s: Vec<f64>, s_self: f64, iteration: usize) {
        for (row, v) in self.gram.iter_mut().zip(&s) {
            row.push(*v);
        }
        let mut row = s;
        row.push(s_self);
        self.gram.push(row);
        self.chosen.push(Chosen {
            element: d.clone(),
            column: t,
            alpha,
            iteration,
        });
        self.refresh_caches();
    }

    fn refresh_caches(&mut self) {
        self.q_dot_r = self.project(&self.residual);
        let alphas = self.coefficients();
        self.h_window = (self.window_start..self.chosen.len())
            .map(|m| (0..self.chosen.len()).map(|n| alphas[n] * self.gram[n][m]).sum())
            .collect();
    }

    /// Clears the projection bookkeeping, keeps elements and coefficients,
    /// and recomputes the residual from them.
    pub fn restart(&mut self) {
        self.window_start = self.chosen.len();
        self.epoch += 1;
        self.q.clear();
        self.w_norm.clear();
        self.beta_table.clear();
        self.residual = self.recompute_residual();
        self.refresh_caches();
    }

    /// `y − Σ α_n T d_n`.
    pub fn recompute_residual(&self) -> Vec<f64> {
        let mut r = self.y.clone();
        for c in &self.chosen {
            r.iter_mut().zip(c.column.iter()).for_each(|(ri, ti)| *ri -= c.alpha * ti);
        }
        r
    }

    /// `‖R‖² + λ ‖f_N‖²` in the Sobolev norm.
    pub fn tikhonov_value(&self, cfg: &PursuitConfig) -> f64 {
        let lambda = self.lambda(cfg);
        let a = self.coefficients();
        let mut pen = 0.0;
        for (i, ai) in a.iter().enumerate() {
            for (j, aj) in a.iter().enumerate() {
                pen += ai * self.gram[i][j] * aj;
            }
        }
        dotv(&self.residual, &self.residual) + lambda * pen
    }

    pub fn terminated(&self, cfg: &PursuitConfig) -> Option<Termination> {
        if self.rel_data_error() <= cfg.rho {
            Some(Termination::DataError)
        } else if self.chosen.len() >= cfg.max_iterations {
            Some(Termination::MaxIterations)
        } else {
            None
        }
    }

    /// Surface values of the current approximation at the given points.
    pub fn approximation_at(&self, points: &[crate::geom::SurfacePoint]) -> Vec<f64> {
        points
            .par_iter()
            .map(|p| self.chosen.iter().map(|c| c.alpha * c.element.eval(p)).sum())
            .collect()
    }
}

/// A finite dictionary with precomputed columns, scanned exhaustively.
pub struct DictionaryScan {
    elements: Vec<DictionaryElement>,
    columns: DMatrix<f64>,
    col_norm_sq: Vec<f64>,
    self_sob: Vec<f64>,
    sob_rows: Vec<Vec<f64>>,
    q_rows: Vec<Vec<f64>>,
    epoch: usize,
}

impl DictionaryScan {
    pub fn new(fm: &ForwardModel, elements: Vec<DictionaryElement>) -> Result<Self> {
        if elements.is_empty() {
            return Err(invalid("finite dictionary is empty"));
        }
        let cols: Vec<Arc<Vec<f64>>> = elements.iter().map(|e| fm.apply_forward(e)).collect();
        let l = fm.len();
        let columns = DMatrix::from_fn(l, cols.len(), |i, k| cols[k][i]);
        let col_norm_sq = cols.iter().map(|c| dotv(c, c)).collect();
        let self_sob = elements
            .iter()
            .map(|e| inner_sobolev(e, e, fm.pen()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            elements,
            columns,
            col_norm_sq,
            self_sob,
            sob_rows: Vec::new(),
            q_rows: Vec::new(),
            epoch: 0,
        })
    }

    pub fn elements(&self) -> &[DictionaryElement] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    fn sync(&mut self, state: &PursuitState, fm: &ForwardModel) -> Result<()> {
        while self.sob_rows.len() < state.chosen().len() {
            let d = &state.chosen()[self.sob_rows.len()].element;
            let row = self
                .elements
                .iter()
                .map(|e| inner_sobolev(d, e, fm.pen()))
                .collect::<Result<Vec<_>>>()?;
            self.sob_rows.push(row);
        }
        self.sob_rows.truncate(state.chosen().len());
        if self.epoch != state.epoch() || self.q_rows.len() > state.ortho_basis().len() {
            self.q_rows.clear();
            self.epoch = state.epoch();
        }
        while self.q_rows.len() < state.ortho_basis().len() {
            let q = DVector::from_column_slice(&state.ortho_basis()[self.q_rows.len()]);
            let row = self.columns.tr_mul(&q);
            self.q_rows.push(row.iter().copied().collect());
        }
        Ok(())
    }

    /// Objective values of the first `limit` elements (all if `None`).
    pub fn evaluate_all(
        &mut self,
        state: &PursuitState,
        fm: &ForwardModel,
        cfg: &PursuitConfig,
        limit: Option<usize>,
    ) -> Result<Vec<std::result::Result<Objective, Degeneracy>>> {
        self.sync(state, fm)?;
        let k_max = limit.unwrap_or(self.len()).min(self.len());
        let r = DVector::from_column_slice(state.residual());
        let tr = self.columns.tr_mul(&r);
        let nw = self.q_rows.len();
        let nc = self.sob_rows.len();
        Ok((0..k_max)
            .map(|k| {
                let qt: Vec<f64> = (0..nw).map(|i| self.q_rows[i][k]).collect();
                let s: Vec<f64> = (0..nc).map(|i| self.sob_rows[i][k]).collect();
                let inputs = CandidateInputs {
                    t_dot_r: tr[k],
                    t_norm_sq: self.col_norm_sq[k],
                    qt: &qt,
                    s: &s,
                    s_self: self.self_sob[k],
                };
                state.objective(cfg, &inputs)
            })
            .collect())
    }

    /// Index and objective of the first maximizer among the first `limit`
    /// elements, skipping degenerate ones.
    pub fn best(
        &mut self,
        state: &PursuitState,
        fm: &ForwardModel,
        cfg: &PursuitConfig,
        limit: Option<usize>,
    ) -> Result<Option<(usize, Objective)>> {
        let vals = self.evaluate_all(state, fm, cfg, limit)?;
        Ok(argmax_objective(&vals))
    }
}

/// First maximizer of a list of objective results, skipping degenerate entries.
pub fn argmax_objective(vals: &[std::result::Result<Objective, Degeneracy>]) -> Option<(usize, Objective)> {
    let mut best: Option<(usize, Objective)> = None;
    for (k, v) in vals.iter().enumerate() {
        if let Ok(o) = v {
            if best.map_or(true, |(_, b)| o.value > b.value) {
                best = Some((k, *o));
            }
        }
    }
    best
}

/// One selection made by a [`Selector`].
#[derive(Debug, Clone)]
pub struct Selection {
    pub element: DictionaryElement,
    pub value: f64,
    /// Best objective over the starting (finite) dictionary, if one exists.
    pub start_best: Option<f64>,
    /// Where the element came from (`dictionary`, `start`, `global`, `local`, `sh`).
    pub provenance: String,
}

/// Chooses the next element of a pursuit.
pub trait Selector {
    fn select(
        &mut self,
        state: &PursuitState,
        fm: &ForwardModel,
        cfg: &PursuitConfig,
    ) -> Result<Option<Selection>>;
}

/// Exhaustive selection over a finite dictionary; in replay mode only the
/// first `N + 1` elements are admissible when choosing the `(N+1)`-th.
pub struct FiniteSelector {
    pub scan: DictionaryScan,
    pub replay: bool,
}

impl Selector for FiniteSelector {
    fn select(
        &mut self,
        state: &PursuitState,
        fm: &ForwardModel,
        cfg: &PursuitConfig,
    ) -> Result<Option<Selection>> {
        let limit = self.replay.then(|| state.iteration() + 1);
        Ok(self.scan.best(state, fm, cfg, limit)?.map(|(k, o)| Selection {
            element: self.scan.elements()[k].clone(),
            value: o.value,
            start_best: Some(o.value),
            provenance: "dictionary".into(),
        }))
    }
}

/// One line of the iteration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub element: String,
    pub provenance: String,
    pub alpha: f64,
    pub objective: f64,
    pub rel_data_error: f64,
    pub tikhonov: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub termination: Termination,
    pub records: Vec<IterationRecord>,
    pub seconds: Vec<f64>,
}

/// Hook called after every step with the new state and its log record.
pub trait IterationObserver {
    fn observe(&mut self, state: &PursuitState, sel: &Selection, info: &StepInfo, rec: &IterationRecord) -> Result<()>;
}

impl<F: FnMut(&PursuitState, &Selection, &StepInfo, &IterationRecord)> IterationObserver for F {
    fn observe(&mut self, state: &PursuitState, sel: &Selection, info: &StepInfo, rec: &IterationRecord) -> Result<()> {
        self(state, sel, info, rec);
        Ok(())
    }
}

/// Runs the pursuit loop until termination. The observer sees the state
/// after every step (used by invariant checks and streaming logs).
pub fn run_pursuit<S: Selector + ?Sized>(
    state: &mut PursuitState,
    fm: &ForwardModel,
    cfg: &PursuitConfig,
    selector: &mut S,
    on_iteration: &mut dyn IterationObserver,
) -> Result<RunOutcome> {
    cfg.validate()?;
    let mut records = Vec::new();
    let mut seconds = Vec::new();
    let termination = loop {
        if let Some(t) = state.terminated(cfg) {
            break t;
        }
        if cfg.variant == Variant::Rofmp && state.window_len() >= cfg.restart_period {
            state.restart();
        }
        let start = std::time::Instant::now();
        let Some(sel) = selector.select(state, fm, cfg)? else {
            break Termination::DictionaryExhausted;
        };
        let info = match state.step(fm, cfg, &sel.element) {
            Ok(i) => i,
            Err(Error::Degenerate(_)) => break Termination::DictionaryExhausted,
            Err(e) => return Err(e),
        };
        let rec = IterationRecord {
            iteration: state.iteration(),
            element: sel.element.descriptor(),
            provenance: sel.provenance.clone(),
            alpha: info.alpha,
            objective: sel.value,
            rel_data_error: state.rel_data_error(),
            tikhonov: state.tikhonov_value(cfg),
        };
        log::debug!(
            "iteration {} {} alpha={:e} rel_err={:.6}",
            rec.iteration,
            rec.element,
            rec.alpha,
            rec.rel_data_error
        );
        seconds.push(start.elapsed().as_secs_f64());
        on_iteration.observe(state, &sel, &info, &rec)?;
        records.push(rec);
    };
    Ok(RunOutcome {
        termination,
        records,
        seconds,
    })
}
