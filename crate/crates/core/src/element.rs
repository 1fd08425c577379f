//! Dictionary elements: the four trial-function classes with their Fourier
//! coefficients, norms, Sobolev inner products and upward continuation.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geom::{dot, scale, unit_vector, unit_vector_partials, BallPoint, CapRegion, SurfacePoint, Vec3};
use crate::kernel::{self, cos_pair, sobolev_weight, sobolev_zonal, KernelKind};
use crate::sh::{eval_all_at, eval_all_with_grad, eval_sh_at, ShIndex, SpectralCoeffs};
use crate::slepian::slepian_coeffs;

/// Default Slepian band limit.
pub const DEFAULT_SLEPIAN_BAND_LIMIT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ElementClass {
    #[serde(rename = "SH")]
    Sh,
    #[serde(rename = "SL")]
    Slepian,
    #[serde(rename = "APK")]
    Apk,
    #[serde(rename = "APW")]
    Apw,
}

impl fmt::Display for ElementClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElementClass::Sh => "SH",
            ElementClass::Slepian => "SL",
            ElementClass::Apk => "APK",
            ElementClass::Apw => "APW",
        })
    }
}

/// A rotated cap Slepian function.
#[derive(Debug, Clone, PartialEq)]
pub struct SlepianElement {
    pub region: CapRegion,
    /// 1-based position in the concentration-sorted basis.
    pub k: usize,
    pub band_limit: usize,
    pub coeffs: Arc<SpectralCoeffs>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DictionaryElement {
    Sh(ShIndex),
    Slepian(SlepianElement),
    Apk { x: BallPoint, normalized: bool },
    Apw { x: BallPoint, normalized: bool },
}

/// Bitwise identity of an element, used as a cache key.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKey {
    Sh(usize, i64),
    Slepian([u64; 4], usize, usize),
    Kernel(KernelKind, [u64; 3], bool),
}

/// Weighted Sobolev norm `Σ_n (n+½)⁴ Σ_j f_{n,j}²` and how infinite series are summed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PenaltyNorm {
    /// Truncation degree of the plain series route.
    pub n_trunc: usize,
    /// Largest admissible tail bound for the plain series route.
    pub tail_tol: f64,
    /// Sum kernel–kernel products in closed form instead of by truncation.
    pub closed_form: bool,
}

impl Default for PenaltyNorm {
    fn default() -> Self {
        Self {
            n_trunc: 300,
            tail_tol: 1e-12,
            closed_form: true,
        }
    }
}

impl PenaltyNorm {
    pub fn weight(&self, n: usize) -> f64 {
        sobolev_weight(n)
    }
}

impl DictionaryElement {
    pub fn sh(n: usize, j: i64) -> Result<Self> {
        Ok(Self::Sh(ShIndex::new(n, j)?))
    }

    pub fn apk(r: f64, phi: f64, t: f64, normalized: bool) -> Result<Self> {
        Ok(Self::Apk {
            x: BallPoint::new(r, phi, t)?,
            normalized,
        })
    }

    pub fn apw(r: f64, phi: f64, t: f64, normalized: bool) -> Result<Self> {
        Ok(Self::Apw {
            x: BallPoint::new(r, phi, t)?,
            normalized,
        })
    }

    pub fn kernel(kind: KernelKind, x: BallPoint, normalized: bool) -> Self {
        match kind {
            KernelKind::Apk => Self::Apk { x, normalized },
            KernelKind::Apw => Self::Apw { x, normalized },
        }
    }

    /// Slepian member `k` (1-based) of band limit `L` for a cap region.
    pub fn slepian(region: CapRegion, k: usize, band_limit: usize) -> Result<Self> {
        let coeffs = slepian_coeffs(&region, k, band_limit)?;
        Ok(Self::Slepian(SlepianElement {
            region,
            k,
            band_limit,
            coeffs: Arc::new(coeffs),
        }))
    }

    pub fn class(&self) -> ElementClass {
        match self {
            Self::Sh(_) => ElementClass::Sh,
            Self::Slepian(_) => ElementClass::Slepian,
            Self::Apk { .. } => ElementClass::Apk,
            Self::Apw { .. } => ElementClass::Apw,
        }
    }

    pub fn key(&self) -> ElementKey {
        match self {
            Self::Sh(i) => ElementKey::Sh(i.n, i.j),
            Self::Slepian(s) => ElementKey::Slepian(
                s.region.as_array().map(f64::to_bits),
                s.k,
                s.band_limit,
            ),
            Self::Apk { x, normalized } | Self::Apw { x, normalized } => ElementKey::Kernel(
                self.kernel_kind().expect("kernel element"),
                [x.r().to_bits(), x.phi().to_bits(), x.t().to_bits()],
                *normalized,
            ),
        }
    }

    pub fn kernel_kind(&self) -> Option<KernelKind> {
        match self {
            Self::Apk { .. } => Some(KernelKind::Apk),
            Self::Apw { .. } => Some(KernelKind::Apw),
            _ => None,
        }
    }

    /// `(kind, centre, normalized)` for kernel elements.
    pub fn kernel_parts(&self) -> Option<(KernelKind, &BallPoint, bool)> {
        match self {
            Self::Apk { x, normalized } => Some((KernelKind::Apk, x, *normalized)),
            Self::Apw { x, normalized } => Some((KernelKind::Apw, x, *normalized)),
            _ => None,
        }
    }

    /// Maximal degree for band-limited elements.
    pub fn band_limit(&self) -> Option<usize> {
        match self {
            Self::Sh(i) => Some(i.n),
            Self::Slepian(s) => Some(s.band_limit),
            _ => None,
        }
    }

    /// Characteristic parameter vector used by the avoidance spline:
    /// Cartesian centre for kernels, `(c, α, β, γ)` for Slepian functions.
    pub fn params(&self) -> Vec<f64> {
        match self {
            Self::Sh(i) => vec![i.n as f64, i.j as f64],
            Self::Slepian(s) => s.region.as_array().to_vec(),
            Self::Apk { x, .. } | Self::Apw { x, .. } => x.cart().to_vec(),
        }
    }

    /// `L²(Ω)` norm of the element as stored.
    pub fn l2_norm(&self) -> f64 {
        match self {
            Self::Sh(_) | Self::Slepian(_) => 1.0,
            Self::Apk { normalized: true, .. } | Self::Apw { normalized: true, .. } => 1.0,
            Self::Apk { x, .. } => kernel::l2_norm_sq(KernelKind::Apk, x.r()).0.sqrt(),
            Self::Apw { x, .. } => kernel::l2_norm_sq(KernelKind::Apw, x.r()).0.sqrt(),
        }
    }

    /// Factor turning the unnormalized kernel into the stored element.
    pub fn scale_factor(&self) -> f64 {
        match self.kernel_parts() {
            Some((kind, x, true)) => 1.0 / kernel::l2_norm_sq(kind, x.r()).0.sqrt(),
            _ => 1.0,
        }
    }

    /// Fourier coefficient `⟨e, Y_{n,j}⟩_{L²(Ω)}`.
    pub fn fourier_coeff(&self, idx: ShIndex) -> f64 {
        match self {
            Self::Sh(i) => {
                if *i == idx {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Slepian(s) => s.coeffs.get(idx),
            Self::Apk { x, .. } | Self::Apw { x, .. } => {
                let kind = self.kernel_kind().expect("kernel element");
                kind.radial(x.r(), idx.n) * eval_sh_at(idx, x.phi(), x.t()) * self.scale_factor()
            }
        }
    }

    /// All Fourier coefficients up to degree `nmax`, in linear order.
    pub fn fourier_coeffs(&self, nmax: usize) -> Vec<f64> {
        let count = (nmax + 1) * (nmax + 1);
        match self {
            Self::Sh(i) => {
                let mut v = vec![0.0; count];
                if i.n <= nmax {
                    v[i.linear()] = 1.0;
                }
                v
            }
            Self::Slepian(s) => {
                let mut v = vec![0.0; count];
                let m = count.min(s.coeffs.table().len());
                v[..m].copy_from_slice(&s.coeffs.table()[..m]);
                v
            }
            Self::Apk { x, .. } | Self::Apw { x, .. } => {
                let kind = self.kernel_kind().expect("kernel element");
                let f = self.scale_factor();
                let mut v = eval_all_at(nmax, x.phi(), x.t());
                for n in 0..=nmax {
                    let a = kind.radial(x.r(), n) * f;
                    for k in n * n..(n + 1) * (n + 1) {
                        v[k] *= a;
                    }
                }
                v
            }
        }
    }

    /// Upward-continued value at `σ η` for `σ ≥ 1` (`σ = 1` is the surface).
    pub fn value_at(&self, sigma: f64, p: &SurfacePoint) -> f64 {
        self.value_at_cart(sigma, p.phi(), p.t(), &p.cart())
    }

    pub(crate) fn value_at_cart(&self, sigma: f64, phi: f64, t: f64, eta: &Vec3) -> f64 {
        match self {
            Self::Sh(i) => sigma.powi(-(i.n as i32) - 1) * eval_sh_at(*i, phi, t),
            Self::Slepian(s) => {
                let ys = eval_all_at(s.band_limit, phi, t);
                let g = s.coeffs.table();
                let mut acc = 0.0;
                for n in 0..=s.band_limit {
                    let damp = sigma.powi(-(n as i32) - 1);
                    let mut part = 0.0;
                    for k in n * n..(n + 1) * (n + 1) {
                        part += g[k] * ys[k];
                    }
                    acc += damp * part;
                }
                acc
            }
            Self::Apk { x, .. } | Self::Apw { x, .. } => {
                let kind = self.kernel_kind().expect("kernel element");
                kernel::upward_value(kind, &x.cart(), sigma, eta) * self.scale_factor()
            }
        }
    }

    /// Value of the upward continuation `(T e)(σ p)`; requires `σ > 1`.
    pub fn upward_eval(&self, sigma: f64, p: &SurfacePoint) -> Result<f64> {
        if !(sigma > 1.0) {
            return Err(invalid(format!("satellite radius sigma = {sigma} must exceed 1")));
        }
        Ok(self.value_at(sigma, p))
    }

    /// Surface value `e(p)`.
    pub fn eval(&self, p: &SurfacePoint) -> f64 {
        self.value_at(1.0, p)
    }

    /// Short human-readable descriptor used in logs.
    pub fn descriptor(&self) -> String {
        match self {
            Self::Sh(i) => format!("SH {} {}", i.n, i.j),
            Self::Slepian(s) => format!(
                "SL {} {} {} {} {} {}",
                s.region.c, s.region.alpha, s.region.beta, s.region.gamma, s.k, s.band_limit
            ),
            Self::Apk { x, normalized } => format!("APK {} {} {} {}", x.r(), x.phi(), x.t(), u8::from(*normalized)),
            Self::Apw { x, normalized } => format!("APW {} {} {} {}", x.r(), x.phi(), x.t(), u8::from(*normalized)),
        }
    }
}

/// Cartesian gradient of `x ↦ (1/σ) K(x/σ, η)` (unnormalized kernel).
pub fn grad_x_apk(x: &BallPoint, p: &SurfacePoint, sigma: f64) -> Vec3 {
    kernel::upward_grad(KernelKind::Apk, &x.cart(), sigma, &p.cart())
}

/// Cartesian gradient of the upward-continued unnormalized wavelet.
pub fn grad_x_apw(x: &BallPoint, p: &SurfacePoint, sigma: f64) -> Vec3 {
    kernel::upward_grad(KernelKind::Apw, &x.cart(), sigma, &p.cart())
}

fn band_limited_coeffs(e: &DictionaryElement) -> Option<(usize, Vec<(usize, f64)>)> {
    match e {
        DictionaryElement::Sh(i) => Some((i.n, vec![(i.linear(), 1.0)])),
        DictionaryElement::Slepian(s) => Some((
            s.band_limit,
            s.coeffs
                .table()
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(k, v)| (k, *v))
                .collect(),
        )),
        _ => None,
    }
}

/// `⟨e1, e2⟩` in the `(n+½)⁴`-weighted Sobolev space.
pub fn inner_sobolev(e1: &DictionaryElement, e2: &DictionaryElement, pen: &PenaltyNorm) -> Result<f64> {
    if let Some((_, c1)) = band_limited_coeffs(e1) {
        return Ok(c1
            .iter()
            .map(|&(k, v)| {
                let idx = ShIndex::from_linear(k);
                sobolev_weight(idx.n) * v * e2.fourier_coeff(idx)
            })
            .sum());
    }
    if band_limited_coeffs(e2).is_some() {
        return inner_sobolev(e2, e1, pen);
    }
    let (k1, x1, _) = e1.kernel_parts().expect("kernel element");
    let (k2, x2, _) = e2.kernel_parts().expect("kernel element");
    let scale = e1.scale_factor() * e2.scale_factor();
    let (tau, omt) = cos_pair(&x1.direction().cart(), &x2.direction().cart());
    if pen.closed_form {
        Ok(scale * sobolev_zonal(k1, x1.r(), k2, x2.r(), tau, omt).value)
    } else {
        let (v, tail) = kernel::sobolev_zonal_truncated(k1, x1.r(), k2, x2.r(), tau, pen.n_trunc);
        if tail > pen.tail_tol {
            return Err(Error::SeriesNonConvergence {
                terms: pen.n_trunc,
                tail: tail * scale,
            });
        }
        Ok(scale * v)
    }
}

/// An unnormalized kernel candidate at `(r, φ, t)`, prepared for repeated
/// Sobolev products against chosen elements, with derivatives in `(r, φ, t)`.
pub struct KernelProbe {
    pub kind: KernelKind,
    pub r: f64,
    pub phi: f64,
    pub t: f64,
    pub xi: Vec3,
    dxi: [Vec3; 2],
    nmax: usize,
    /// `(n+½)⁴ a_n(r) Y_{n,j}(ξ)` and its three partial derivatives.
    weighted: Vec<[f64; 4]>,
}

impl KernelProbe {
    /// `nmax` must cover the band limits of all chosen band-limited elements.
    pub fn new(kind: KernelKind, r: f64, phi: f64, t: f64, nmax: usize) -> Self {
        let xi = unit_vector(phi, t);
        let (dp, dt) = unit_vector_partials(phi, t);
        let (val, dphi, dtt) = eval_all_with_grad(nmax, phi, t);
        let mut weighted = Vec::with_capacity(val.len());
        for n in 0..=nmax {
            let w = sobolev_weight(n);
            let a = kind.radial(r, n) * w;
            let da = kind.radial_dr(r, n) * w;
            for k in n * n..(n + 1) * (n + 1) {
                weighted.push([a * val[k], da * val[k], a * dphi[k], a * dtt[k]]);
            }
        }
        Self {
            kind,
            r,
            phi,
            t,
            xi,
            dxi: [dp, dt],
            nmax,
            weighted,
        }
    }

    /// Cartesian centre.
    pub fn cart(&self) -> Vec3 {
        scale(&self.xi, self.r)
    }

    /// Sobolev product with `e` and its gradient in `(r, φ, t)`.
    pub fn sobolev_with(&self, e: &DictionaryElement) -> (f64, [f64; 3]) {
        if let Some((bl, coeffs)) = band_limited_coeffs(e) {
            assert!(bl <= self.nmax, "probe degree {} below element band limit {bl}", self.nmax);
            let mut acc = [0.0; 4];
            for (k, v) in coeffs {
                let w = &self.weighted[k];
                for i in 0..4 {
                    acc[i] += v * w[i];
                }
            }
            return (acc[0], [acc[1], acc[2], acc[3]]);
        }
        let (k2, x2, _) = e.kernel_parts().expect("kernel element");
        let f = e.scale_factor();
        let xi2 = x2.direction().cart();
        let (tau, omt) = cos_pair(&self.xi, &xi2);
        let z = sobolev_zonal(self.kind, self.r, k2, x2.r(), tau, omt);
        (
            f * z.value,
            [
                f * z.d_r1,
                f * z.d_tau * dot(&self.dxi[0], &xi2),
                f * z.d_tau * dot(&self.dxi[1], &xi2),
            ],
        )
    }

    /// Squared Sobolev norm of the probe itself and its gradient.
    pub fn sobolev_self(&self) -> (f64, [f64; 3]) {
        let z = sobolev_zonal(self.kind, self.r, self.kind, self.r, 1.0, 0.0);
        (z.value, [2.0 * z.d_r1, 0.0, 0.0])
    }
}
