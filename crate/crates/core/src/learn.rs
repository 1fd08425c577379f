//! Dictionary learning: per-iteration candidates from the infinite trial
//! function classes, fed to the pursuit as a small finite dictionary.

use std::f64::consts::PI;
use std::fmt;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::element::{DictionaryElement, ElementClass, KernelProbe};
use crate::error::{invalid, Degeneracy, Result};
use crate::geom::{unit_vector, unit_vector_partials, BallPoint, CapRegion};
use crate::kernel::{sobolev_weight, KernelKind};
use crate::optim::{global_maximize, local_maximize, BoxDomain, Budget, LocalOptions};
use crate::pursuit::{
    dotv, CandidateInputs, CandidateTangent, DictionaryScan, ForwardModel, Objective, PursuitConfig, PursuitState,
    Selection, Selector, Variant,
};
use crate::sh::{coeff_count, ShIndex};
use crate::slepian::rotated_basis;

/// The infinite dictionary: which classes are searched and their limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InfiniteDictionarySpec {
    /// Maximal SH degree of the exhaustive harmonic search.
    pub nbar: usize,
    pub slepian_band_limit: usize,
    pub classes: Vec<ElementClass>,
}

impl Default for InfiniteDictionarySpec {
    fn default() -> Self {
        Self {
            nbar: 100,
            slepian_band_limit: crate::element::DEFAULT_SLEPIAN_BAND_LIMIT,
            classes: vec![ElementClass::Sh, ElementClass::Slepian, ElementClass::Apk, ElementClass::Apw],
        }
    }
}

impl InfiniteDictionarySpec {
    pub fn enables(&self, class: ElementClass) -> bool {
        self.classes.contains(&class)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(invalid("no trial function class enabled"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnConfig {
    /// Avoidance radius (squared parameter distance).
    pub epsilon: f64,
    /// Narrowing of every box constraint.
    pub delta: f64,
    pub max_evals: usize,
    pub max_seconds: f64,
    pub ftol: f64,
    pub xtol: f64,
    pub local_max_iters: usize,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            epsilon: 5e-4,
            delta: 1e-8,
            max_evals: 5000,
            max_seconds: 200.0,
            ftol: 1e-8,
            xtol: 1e-8,
            local_max_iters: 100,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(invalid("avoidance radius must be positive"));
        }
        if self.max_evals == 0 || !(self.max_seconds > 0.0) {
            return Err(invalid("optimization budgets must be positive"));
        }
        if !(0.0..0.5).contains(&self.delta) {
            return Err(invalid("domain narrowing must lie in [0, 0.5)"));
        }
        Ok(())
    }

    fn budget(&self) -> Budget {
        Budget {
            max_evals: self.max_evals,
            max_time: Some(Duration::from_secs_f64(self.max_seconds)),
        }
    }

    fn local_options(&self) -> LocalOptions {
        LocalOptions {
            ftol: self.ftol,
            xtol: self.xtol,
            max_iters: self.local_max_iters,
            fd_step: 1e-6,
        }
    }
}

/// Quintic smoothstep `S(τ)` and `dS/dτ`: zero up to `ε`, one from `2ε` on.
pub fn smoothstep(tau: f64, eps: f64) -> (f64, f64) {
    if tau <= eps {
        (0.0, 0.0)
    } else if tau >= 2.0 * eps {
        (1.0, 0.0)
    } else {
        let u = tau / eps - 1.0;
        let u2 = u * u;
        (
            u2 * u * (10.0 - 15.0 * u + 6.0 * u2),
            30.0 * u2 * (1.0 - 2.0 * u + u2) / eps,
        )
    }
}

/// Product of smoothsteps of the squared distances from `z` to every history entry.
pub fn spline_penalty(z: &[f64], history: &[Vec<f64>], eps: f64) -> f64 {
    spline_with_grad(z, history, eps).0
}

/// [`spline_penalty`] with its gradient with respect to `z`.
pub fn spline_with_grad(z: &[f64], history: &[Vec<f64>], eps: f64) -> (f64, Vec<f64>) {
    let mut value = 1.0;
    let mut factors = Vec::with_capacity(history.len());
    for h in history {
        let tau: f64 = z.iter().zip(h).map(|(a, b)| (a - b) * (a - b)).sum();
        let (s, ds) = smoothstep(tau, eps);
        value *= s;
        factors.push((s, ds));
    }
    let mut grad = vec![0.0; z.len()];
    if value == 0.0 {
        return (0.0, grad);
    }
    for (h, (s, ds)) in history.iter().zip(factors) {
        if ds == 0.0 {
            continue;
        }
        for i in 0..z.len() {
            grad[i] += value * ds / s * 2.0 * (z[i] - h[i]);
        }
    }
    (value, grad)
}

/// Narrowed parameter box of a continuous class: `(r, φ, t)` for kernels,
/// `(c, α, β, γ)` for Slepian functions.
pub fn class_domain(class: ElementClass, delta: f64) -> Result<BoxDomain> {
    let tau = 2.0 * PI;
    match class {
        ElementClass::Apk | ElementClass::Apw => Ok(BoxDomain::new(
            vec![delta, delta, -1.0 + delta],
            vec![1.0 - delta, tau - delta, 1.0 - delta],
        )?
        .with_period(1, tau)),
        ElementClass::Slepian => Ok(BoxDomain::new(
            vec![-1.0 + delta, delta, delta, delta],
            vec![1.0 - delta, tau - delta, PI - delta, tau - delta],
        )?
        .with_period(1, tau)
        .with_period(3, tau)),
        ElementClass::Sh => Err(invalid("the harmonic class has no continuous domain")),
    }
}

/// Box coordinates of a continuous element.
pub fn element_coords(e: &DictionaryElement) -> Option<Vec<f64>> {
    match e {
        DictionaryElement::Sh(_) => None,
        DictionaryElement::Slepian(s) => Some(s.region.as_array().to_vec()),
        DictionaryElement::Apk { x, .. } | DictionaryElement::Apw { x, .. } => Some(vec![x.r(), x.phi(), x.t()]),
    }
}

/// Where a selected element came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Sh,
    Start,
    Global,
    Local,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Sh => "sh",
            Provenance::Start => "start",
            Provenance::Global => "global",
            Provenance::Local => "local",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub element: DictionaryElement,
    pub value: f64,
    pub provenance: Provenance,
}

/// Precomputed harmonic-space quantities for Slepian candidates.
struct SlepianContext {
    band_limit: usize,
    weights: Vec<f64>,
    s_dot_r: Vec<f64>,
    gram: DMatrix<f64>,
    q_s: Vec<Vec<f64>>,
    chosen_w: Vec<Vec<f64>>,
}

/// Objective evaluations for continuous candidates against a frozen state.
pub struct Evaluator<'a> {
    state: &'a PursuitState,
    fm: &'a ForwardModel,
    cfg: &'a PursuitConfig,
    lambda: f64,
    probe_nmax: usize,
    epsilon: f64,
    slepian: Option<SlepianContext>,
}

impl<'a> Evaluator<'a> {
    pub fn new(state: &'a PursuitState, fm: &'a ForwardModel, cfg: &'a PursuitConfig, epsilon: f64) -> Self {
        let probe_nmax = state
            .chosen()
            .iter()
            .filter_map(|c| c.element.band_limit())
            .max()
            .unwrap_or(0);
        Self {
            state,
            fm,
            cfg,
            lambda: state.lambda(cfg),
            probe_nmax,
            epsilon,
            slepian: None,
        }
    }

    /// Prepares Slepian evaluations of band limit `L`.
    pub fn with_slepian(mut self, band_limit: usize) -> Self {
        let nc = coeff_count(band_limit);
        let block = self.fm.sh_block(band_limit);
        let s = block.columns(0, nc).into_owned();
        let r = DVector::from_column_slice(self.state.residual());
        let s_dot_r = s.tr_mul(&r).iter().copied().collect();
        let gram = s.tr_mul(&s);
        let q_s = self
            .state
            .ortho_basis()
            .iter()
            .map(|q| s.tr_mul(&DVector::from_column_slice(q)).iter().copied().collect())
            .collect();
        let weights: Vec<f64> = (0..nc).map(|k| sobolev_weight(ShIndex::from_linear(k).n)).collect();
        let chosen_w = self
            .state
            .chosen()
            .iter()
            .map(|c| {
                c.element
                    .fourier_coeffs(band_limit)
                    .iter()
                    .zip(&weights)
                    .map(|(a, w)| a * w)
                    .collect()
            })
            .collect();
        self.slepian = Some(SlepianContext {
            band_limit,
            weights,
            s_dot_r,
            gram,
            q_s,
            chosen_w,
        });
        self
    }

    fn spline_active(&self) -> bool {
        self.cfg.variant == Variant::Rofmp
    }

    /// Parameters of same-class elements chosen in the current window.
    pub fn history(&self, class: ElementClass) -> Vec<Vec<f64>> {
        self.state.chosen()[self.state.window_start()..]
            .iter()
            .filter(|c| c.element.class() == class)
            .map(|c| c.element.params())
            .collect()
    }

    /// Plain objective of an unnormalized kernel at `z = (r, φ, t)` with
    /// optional gradient. Degenerate candidates score zero.
    pub fn kernel_plain(&self, kind: KernelKind, z: &[f64], grad: bool) -> (f64, [f64; 3]) {
        let (r, phi, t) = (z[0], z[1], z[2]);
        let (col, dcols) = if grad {
            let [v, dr, dp, dt] = self.fm.kernel_column_grad(kind, r, phi, t);
            (v, Some([dr, dp, dt]))
        } else {
            (self.fm.kernel_column(kind, r, phi, t), None)
        };
        let res = self.state.residual();
        let orth = self.cfg.variant == Variant::Rofmp;
        let nc = self.state.chosen().len();
        let qt = if orth { self.state.project(&col) } else { Vec::new() };
        let (s, ds, s_self, ds_self) = if self.lambda != 0.0 {
            let probe = KernelProbe::new(kind, r, phi, t, self.probe_nmax);
            let mut s = Vec::with_capacity(nc);
            let mut ds = Vec::with_capacity(nc);
            for c in self.state.chosen() {
                let (v, g) = probe.sobolev_with(&c.element);
                s.push(v);
                ds.push(g);
            }
            let (ss, dss) = probe.sobolev_self();
            (s, ds, ss, dss)
        } else {
            (vec![0.0; nc], vec![[0.0; 3]; nc], 0.0, [0.0; 3])
        };
        let inputs = CandidateInputs {
            t_dot_r: dotv(&col, res),
            t_norm_sq: dotv(&col, &col),
            qt: &qt,
            s: &s,
            s_self,
        };
        let Some(dcols) = dcols else {
            return match self.state.objective(self.cfg, &inputs) {
                Ok(o) => (o.value, [0.0; 3]),
                Err(_) => (0.0, [0.0; 3]),
            };
        };
        let tangents: Vec<CandidateTangent> = (0..3)
            .map(|i| CandidateTangent {
                t_dot_r: dotv(&dcols[i], res),
                t_norm_sq: 2.0 * dotv(&col, &dcols[i]),
                qt: if orth { self.state.project(&dcols[i]) } else { Vec::new() },
                s: ds.iter().map(|g| g[i]).collect(),
                s_self: ds_self[i],
            })
            .collect();
        match self.state.objective_with_tangents(self.cfg, &inputs, &tangents) {
            Ok((o, g)) => (o.value, [g[0], g[1], g[2]]),
            Err(_) => (0.0, [0.0; 3]),
        }
    }

    /// Learning objective of a kernel class: the plain objective, times the
    /// avoidance spline in the orthogonal variant.
    pub fn kernel_objective(&self, kind: KernelKind, z: &[f64], grad: bool) -> (f64, [f64; 3]) {
        let (p, dp) = self.kernel_plain(kind, z, grad);
        if !self.spline_active() {
            return (p, dp);
        }
        let class = match kind {
            KernelKind::Apk => ElementClass::Apk,
            KernelKind::Apw => ElementClass::Apw,
        };
        let hist = self.history(class);
        if hist.is_empty() {
            return (p, dp);
        }
        let xi = unit_vector(z[1], z[2]);
        let x: Vec<f64> = xi.iter().map(|v| v * z[0]).collect();
        let (s, gx) = spline_with_grad(&x, &hist, self.epsilon);
        if !grad {
            return (p * s, [0.0; 3]);
        }
        let (dphi, dt) = unit_vector_partials(z[1], z[2]);
        let jac = [xi, dphi.map(|v| v * z[0]), dt.map(|v| v * z[0])];
        let mut g = [0.0; 3];
        for i in 0..3 {
            let ds: f64 = (0..3).map(|k| gx[k] * jac[i][k]).sum();
            g[i] = dp[i] * s + p * ds;
        }
        (p * s, g)
    }

    /// Plain objective of every member of the Slepian basis of region `z`.
    pub fn slepian_plain(&self, z: &[f64]) -> Result<Vec<std::result::Result<Objective, Degeneracy>>> {
        let ctx = self
            .slepian
            .as_ref()
            .ok_or_else(|| invalid("Slepian evaluations were not prepared"))?;
        let region = CapRegion::new(z[0], z[1], z[2], z[3])?;
        let basis = rotated_basis(&region, ctx.band_limit)?;
        let nc = ctx.weights.len();
        Ok(basis
            .iter()
            .map(|g| {
                let g = g.table();
                let sg = &ctx.gram * DVector::from_column_slice(&g[..nc]);
                let qt: Vec<f64> = ctx.q_s.iter().map(|row| dotv(row, g)).collect();
                let s: Vec<f64> = ctx.chosen_w.iter().map(|row| dotv(row, g)).collect();
                let s_self: f64 = g.iter().zip(&ctx.weights).map(|(v, w)| w * v * v).sum();
                let inputs = CandidateInputs {
                    t_dot_r: dotv(&ctx.s_dot_r, g),
                    t_norm_sq: dotv(sg.as_slice(), g),
                    qt: &qt,
                    s: &s,
                    s_self,
                };
                self.state.objective(self.cfg, &inputs)
            })
            .collect())
    }

    /// Best member (1-based) of region `z` with its learning objective.
    pub fn slepian_objective(&self, z: &[f64], member: Option<usize>) -> (f64, usize) {
        let Ok(vals) = self.slepian_plain(z) else {
            return (0.0, 1);
        };
        let (k, v) = match member {
            Some(k) => (k, vals.get(k - 1).and_then(|v| v.ok()).map_or(0.0, |o| o.value)),
            None => {
                let mut best = (1, 0.0);
                for (i, v) in vals.iter().enumerate() {
                    if let Ok(o) = v {
                        if o.value > best.1 {
                            best = (i + 1, o.value);
                        }
                    }
                }
                best
            }
        };
        if v == 0.0 || !self.spline_active() {
            return (v, k);
        }
        let hist = self.history(ElementClass::Slepian);
        (v * spline_penalty(z, &hist, self.epsilon), k)
    }

    /// Spline factor of a candidate element under the active variant.
    pub fn spline_of(&self, e: &DictionaryElement) -> f64 {
        if !self.spline_active() || e.class() == ElementClass::Sh {
            return 1.0;
        }
        spline_penalty(&e.params(), &self.history(e.class()), self.epsilon)
    }
}

/// Learning objective of a continuous class at `z` (see [`Evaluator`]).
pub fn learning_objective(
    state: &PursuitState,
    fm: &ForwardModel,
    cfg: &PursuitConfig,
    lc: &LearnConfig,
    class: ElementClass,
    z: &[f64],
    slepian_band_limit: usize,
) -> f64 {
    let ev = Evaluator::new(state, fm, cfg, lc.epsilon);
    match class {
        ElementClass::Apk => ev.kernel_objective(KernelKind::Apk, z, false).0,
        ElementClass::Apw => ev.kernel_objective(KernelKind::Apw, z, false).0,
        ElementClass::Slepian => ev.with_slepian(slepian_band_limit).slepian_objective(z, None).0,
        ElementClass::Sh => 0.0,
    }
}

/// Gradient of the learning objective: analytic for kernels, central
/// differences (best member held fixed) for Slepian regions.
pub fn objective_gradient(
    state: &PursuitState,
    fm: &ForwardModel,
    cfg: &PursuitConfig,
    lc: &LearnConfig,
    class: ElementClass,
    z: &[f64],
    slepian_band_limit: usize,
) -> Result<Vec<f64>> {
    let ev = Evaluator::new(state, fm, cfg, lc.epsilon);
    match class {
        ElementClass::Apk => Ok(ev.kernel_objective(KernelKind::Apk, z, true).1.to_vec()),
        ElementClass::Apw => Ok(ev.kernel_objective(KernelKind::Apw, z, true).1.to_vec()),
        ElementClass::Slepian => {
            let ev = ev.with_slepian(slepian_band_limit);
            let (_, k) = ev.slepian_objective(z, None);
            let dom = class_domain(class, lc.delta)?;
            let f = |x: &[f64]| ev.slepian_objective(x, Some(k)).0;
            Ok(crate::optim::finite_difference(&f, z, &dom, 1e-6))
        }
        ElementClass::Sh => Err(invalid("the harmonic class has no continuous parameters")),
    }
}

fn kernel_kind_of(class: ElementClass) -> Option<KernelKind> {
    match class {
        ElementClass::Apk => Some(KernelKind::Apk),
        ElementClass::Apw => Some(KernelKind::Apw),
        _ => None,
    }
}

fn build_element(class: ElementClass, z: &[f64], member: usize, band_limit: usize) -> Result<DictionaryElement> {
    match kernel_kind_of(class) {
        Some(kind) => Ok(DictionaryElement::kernel(kind, BallPoint::new(z[0], z[1], z[2])?, true)),
        None => DictionaryElement::slepian(CapRegion::new(z[0], z[1], z[2], z[3])?, member, band_limit),
    }
}

/// Harmonic candidate: exhaustive search over the harmonic scan.
pub fn sh_candidate(
    scan: &mut DictionaryScan,
    state: &PursuitState,
    fm: &ForwardModel,
    cfg: &PursuitConfig,
) -> Result<Option<Candidate>> {
    Ok(scan.best(state, fm, cfg, None)?.map(|(k, o)| Candidate {
        element: scan.elements()[k].clone(),
        value: o.value,
        provenance: Provenance::Sh,
    }))
}

/// Global and local candidates of one continuous class.
#[derive(Debug, Clone, Default)]
pub struct ClassCandidates {
    pub global: Option<Candidate>,
    pub local: Option<Candidate>,
}

impl ClassCandidates {
    /// The local solution unless it is missing or worse than the global one.
    pub fn preferred(&self) -> Option<&Candidate> {
        match (&self.local, &self.global) {
            (Some(l), Some(g)) if l.value >= g.value => Some(l),
            (_, Some(g)) => Some(g),
            (l, None) => l.as_ref(),
        }
    }
}

/// Two-step optimization of one continuous class. `start` seeds the local
/// ascent when the global search finds nothing better.
pub fn continuous_candidate(
    ev: &Evaluator,
    lc: &LearnConfig,
    class: ElementClass,
    start: Option<&[f64]>,
) -> Result<ClassCandidates> {
    let dom = class_domain(class, lc.delta)?;
    let mut out = ClassCandidates::default();
    if let Some(kind) = kernel_kind_of(class) {
        let g = global_maximize(|z| ev.kernel_objective(kind, z, false).0, &dom, lc.budget());
        let mut from = g.x.clone();
        let mut from_value = g.value;
        if let Some(s) = start {
            let mut s = s.to_vec();
            dom.project(&mut s);
            let v = ev.kernel_objective(kind, &s, false).0;
            if v > from_value {
                from = s;
                from_value = v;
            }
        }
        if g.value > 0.0 {
            out.global = Some(Candidate {
                element: build_element(class, &g.x, 0, 0)?,
                value: g.value,
                provenance: Provenance::Global,
            });
        }
        if from_value > 0.0 {
            let fg = |z: &[f64], grad: bool| {
                let (v, g) = ev.kernel_objective(kind, z, grad);
                (v, grad.then(|| g.to_vec()))
            };
            let l = local_maximize(fg, &dom, &from, lc.local_options());
            if l.value > 0.0 && dom.contains(&l.x) {
                out.local = Some(Candidate {
                    element: build_element(class, &l.x, 0, 0)?,
                    value: l.value,
                    provenance: Provenance::Local,
                });
            }
        }
    } else {
        let ctx_l = ev
            .slepian
            .as_ref()
            .ok_or_else(|| invalid("Slepian evaluations were not prepared"))?
            .band_limit;
        let g = global_maximize(|z| ev.slepian_objective(z, None).0, &dom, lc.budget());
        let (gv, gk) = ev.slepian_objective(&g.x, None);
        if gv > 0.0 {
            out.global = Some(Candidate {
                element: build_element(class, &g.x, gk, ctx_l)?,
                value: gv,
                provenance: Provenance::Global,
            });
            let fg = |z: &[f64], _: bool| (ev.slepian_objective(z, Some(gk)).0, None);
            let l = local_maximize(fg, &dom, &g.x, lc.local_options());
            if l.value > 0.0 && dom.contains(&l.x) {
                out.local = Some(Candidate {
                    element: build_element(class, &l.x, gk, ctx_l)?,
                    value: l.value,
                    provenance: Provenance::Local,
                });
            }
        }
    }
    Ok(out)
}

/// Outcome of one learning step.
#[derive(Debug, Clone)]
pub struct LearnStep {
    pub chosen: Candidate,
    /// Best objective over the starting dictionary (spline-weighted in the
    /// orthogonal variant, like every continuous candidate).
    pub start_best: Option<f64>,
    pub candidates: Vec<Candidate>,
}

/// One selection from the infinite dictionary: harmonic search, starting
/// dictionary, and the two-step optimization of every continuous class.
pub fn learn_step(
    state: &PursuitState,
    fm: &ForwardModel,
    cfg: &PursuitConfig,
    spec: &InfiniteDictionarySpec,
    lc: &LearnConfig,
    sh_scan: Option<&mut DictionaryScan>,
    start_scan: Option<&mut DictionaryScan>,
) -> Result<Option<LearnStep>> {
    spec.validate()?;
    let mut ev = Evaluator::new(state, fm, cfg, lc.epsilon);
    if spec.enables(ElementClass::Slepian) {
        ev = ev.with_slepian(spec.slepian_band_limit);
    }
    let mut cands: Vec<Candidate> = Vec::new();
    if spec.enables(ElementClass::Sh) {
        if let Some(scan) = sh_scan {
            cands.extend(sh_candidate(scan, state, fm, cfg)?);
        }
    }
    // per-class best of the starting dictionary
    let mut start_best = None;
    let mut class_start: Vec<(ElementClass, Candidate)> = Vec::new();
    if let Some(scan) = start_scan {
        let vals = scan.evaluate_all(state, fm, cfg, None)?;
        for (k, v) in vals.iter().enumerate() {
            let Ok(o) = v else { continue };
            let e = &scan.elements()[k];
            let value = o.value * ev.spline_of(e);
            if start_best.map_or(true, |b| value > b) {
                start_best = Some(value);
            }
            let class = e.class();
            let cand = Candidate {
                element: e.clone(),
                value,
                provenance: Provenance::Start,
            };
            match class_start.iter_mut().find(|(c, _)| *c == class) {
                Some((_, c)) if c.value >= value => {}
                Some((_, c)) => *c = cand,
                None => class_start.push((class, cand)),
            }
        }
    }
    class_start.sort_by_key(|(c, _)| *c);
    cands.extend(class_start.iter().map(|(_, c)| c.clone()));
    for class in [ElementClass::Slepian, ElementClass::Apk, ElementClass::Apw] {
        if !spec.enables(class) {
            continue;
        }
        let start = class_start
            .iter()
            .find(|(c, _)| *c == class)
            .and_then(|(_, c)| element_coords(&c.element));
        let found = continuous_candidate(&ev, lc, class, start.as_deref())?;
        for c in [found.global, found.local].into_iter().flatten() {
            if ev.spline_of(&c.element) > 0.0 {
                cands.push(c);
            }
        }
    }
    let mut best: Option<usize> = None;
    for (i, c) in cands.iter().enumerate() {
        if c.value > 0.0 && c.value.is_finite() && best.map_or(true, |b| c.value > cands[b].value) {
            best = Some(i);
        }
    }
    Ok(best.map(|b| LearnStep {
        chosen: cands[b].clone(),
        start_best,
        candidates: cands,
    }))
}

/// [`Selector`] drawing from the infinite dictionary.
pub struct LearningSelector {
    pub spec: InfiniteDictionarySpec,
    pub lc: LearnConfig,
    sh_scan: Option<DictionaryScan>,
    start_scan: Option<DictionaryScan>,
}

impl LearningSelector {
    pub fn new(
        fm: &ForwardModel,
        spec: InfiniteDictionarySpec,
        lc: LearnConfig,
        starting: Vec<DictionaryElement>,
    ) -> Result<Self> {
        spec.validate()?;
        lc.validate()?;
        let sh_scan = if spec.enables(ElementClass::Sh) {
            let sh: Vec<DictionaryElement> = ShIndex::all(spec.nbar).map(DictionaryElement::Sh).collect();
            Some(DictionaryScan::new(fm, sh)?)
        } else {
            None
        };
        let start_scan = if starting.is_empty() {
            None
        } else {
            Some(DictionaryScan::new(fm, starting)?)
        };
        Ok(Self {
            spec,
            lc,
            sh_scan,
            start_scan,
        })
    }
}

impl Selector for LearningSelector {
    fn select(&mut self, state: &PursuitState, fm: &ForwardModel, cfg: &PursuitConfig) -> Result<Option<Selection>> {
        let step = learn_step(
            state,
            fm,
            cfg,
            &self.spec,
            &self.lc,
            self.sh_scan.as_mut(),
            self.start_scan.as_mut(),
        )?;
        Ok(step.map(|s| Selection {
            element: s.chosen.element,
            value: s.chosen.value,
            start_best: s.start_best,
            provenance: s.chosen.provenance.to_string(),
        }))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearntEntry {
    pub element: DictionaryElement,
    pub iteration: usize,
    /// Coefficient when selected.
    pub alpha_selected: f64,
    /// Coefficient at the end of the run.
    pub alpha_final: f64,
}

/// Elements selected by a learning run, in selection order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LearntDictionary {
    entries: Vec<LearntEntry>,
}

impl LearntDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, element: DictionaryElement, iteration: usize, alpha: f64) {
        self.entries.push(LearntEntry {
            element,
            iteration,
            alpha_selected: alpha,
            alpha_final: alpha,
        });
    }

    /// Copies the final coefficients from a finished pursuit.
    pub fn finalize(&mut self, state: &PursuitState) {
        for (e, c) in self.entries.iter_mut().zip(state.chosen()) {
            e.alpha_final = c.alpha;
        }
    }

    pub fn from_state(state: &PursuitState) -> Self {
        let entries = state
            .chosen()
            .iter()
            .map(|c| LearntEntry {
                element: c.element.clone(),
                iteration: c.iteration,
                alpha_selected: c.alpha,
                alpha_final: c.alpha,
            })
            .collect();
        Self { entries }
    }

    pub fn entries(&self) -> &[LearntEntry] {
        &self.entries
    }

    pub fn elements(&self) -> Vec<DictionaryElement> {
        self.entries.iter().map(|e| e.element.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Maximal learnt SH degree.
    pub fn nu(&self) -> Option<usize> {
        self.entries
            .iter()
            .filter_map(|e| match &e.element {
                DictionaryElement::Sh(i) => Some(i.n),
                _ => None,
            })
            .max()
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::element::PenaltyNorm;
    use crate::geom::reuter_grid;

    #[test]
    fn smoothstep_values() {
        let eps = 5e-4;
        assert_eq!(smoothstep(eps, eps).0, 0.0);
        assert_eq!(smoothstep(2.0 * eps, eps).0, 1.0);
        assert!((smoothstep(1.5 * eps, eps).0 - 0.5).abs() < 1e-15);
        assert_eq!(spline_penalty(&[0.3, 0.1], &[], eps), 1.0);
        let h = 1e-9;
        let tau = 1.3 * eps;
        let fd = (smoothstep(tau + h, eps).0 - smoothstep(tau - h, eps).0) / (2.0 * h);
        assert!((fd - smoothstep(tau, eps).1).abs() < 1e-4 * fd.abs());
    }

    #[test]
    fn spline_gradient_matches_differences() {
        let eps = 0.01;
        let hist = vec![vec![0.0, 0.0, 0.1], vec![0.12, 0.0, 0.0]];
        let z = [0.05, 0.06, 0.08];
        let (_, g) = spline_with_grad(&z, &hist, eps);
        for i in 0..3 {
            let mut zp = z;
            let mut zm = z;
            zp[i] += 1e-7;
            zm[i] -= 1e-7;
            let fd = (spline_penalty(&zp, &hist, eps) - spline_penalty(&zm, &hist, eps)) / 2e-7;
            assert!((fd - g[i]).abs() < 1e-5, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn kernel_gradient_against_differences() {
        let fm = ForwardModel::new(reuter_grid(10).unwrap(), 1.08, PenaltyNorm::default()).unwrap();
        let y: Vec<f64> = fm
            .apply_forward(&DictionaryElement::apk(0.7, 1.0, 0.3, true).unwrap())
            .iter()
            .zip(fm.apply_forward(&DictionaryElement::sh(3, 1).unwrap()).iter())
            .map(|(a, b)| a + 0.5 * b)
            .collect();
        let mut st = PursuitState::new(y);
        let cfg = PursuitConfig {
            lambda0: 1e-3,
            ..PursuitConfig::default()
        };
        st.step(&fm, &cfg, &DictionaryElement::sh(3, 1).unwrap()).unwrap();
        st.step(&fm, &cfg, &DictionaryElement::apw(0.5, 2.0, -0.2, true).unwrap()).unwrap();
        let ev = Evaluator::new(&st, &fm, &cfg, 5e-4);
        let z = [0.65, 1.1, 0.25];
        let (_, g) = ev.kernel_objective(KernelKind::Apk, &z, true);
        for i in 0..3 {
            let h = 1e-6;
            let mut zp = z;
            let mut zm = z;
            zp[i] += h;
            zm[i] -= h;
            let fd = (ev.kernel_objective(KernelKind::Apk, &zp, false).0
                - ev.kernel_objective(KernelKind::Apk, &zm, false).0)
                / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * fd.abs().max(1e-8), "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn local_preferred_unless_worse() {
        let e = DictionaryElement::sh(0, 0).unwrap();
        let mk = |v, p| Candidate {
            element: e.clone(),
            value: v,
            provenance: p,
        };
        let c = ClassCandidates {
            global: Some(mk(2.0, Provenance::Global)),
            local: Some(mk(1.0, Provenance::Local)),
        };
        assert_eq!(c.preferred().unwrap().provenance, Provenance::Global);
        let c = ClassCandidates {
            global: Some(mk(2.0, Provenance::Global)),
            local: Some(mk(2.5, Provenance::Local)),
        };
        assert_eq!(c.preferred().unwrap().provenance, Provenance::Local);
    }
}
